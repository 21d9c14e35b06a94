"""Labeled reidentification examples: build, relabel, serialize."""

from __future__ import annotations

import json
import logging
import os
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .channels import ChannelGraph, MetaPath, MultiChannelGraph, transform_multichannel
from .errors import EmptyWindow, SchemaVersionMismatch, TargetAbsent
from .events import SystemEvent
from .features import FeatureConfig, assemble_features
from .graph import DEFAULT_HOPS, BehaviorGraph, build_behavior_graph
from .model import ModelConfig, atomic_write_text
from .synth import Corpus, rename_process

logger = logging.getLogger(__name__)

EXAMPLE_SCHEMA = 1


def build_example(
    events: Sequence[SystemEvent],
    claimed_id: str,
    window: tuple[int, int],
    channels: Sequence[MetaPath],
    features: FeatureConfig,
    label: Optional[int] = None,
    hops: int = DEFAULT_HOPS,
) -> MultiChannelGraph:
    g = build_behavior_graph(events, claimed_id, window, hops)
    mcg = transform_multichannel(g, channels)
    assemble_features(g, mcg, features)
    mcg.label = label
    return mcg


def reid_dataset(
    corpus: Corpus,
    program: str,
    cfg: ModelConfig,
    seed: int = 0,
    hops: int = DEFAULT_HOPS,
) -> list[MultiChannelGraph]:
    """Genuine windows of ``program`` (+1) and as many disguised windows (-1).

    Negatives are other programs' windows with their executable renamed to
    ``program``, subsampled without replacement by a seeded generator.
    Windows without events are skipped.
    """
    corpus.profile(program)
    positives = []
    for w in range(corpus.n_windows):
        try:
            positives.append(
                build_example(corpus.windows[(program, w)], program, corpus.bounds(w), cfg.channels, cfg.features, 1, hops)
            )
        except (EmptyWindow, TargetAbsent):
            logger.info("skipping empty window %d of %s", w, program)
    pool = [(name, w) for name in corpus.programs() if name != program for w in range(corpus.n_windows)]
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 41, len(pool)])))
    negatives = []
    for i in rng.permutation(len(pool)):
        if len(negatives) >= len(positives):
            break
        name, w = pool[i]
        events = rename_process(corpus.windows[(name, w)], name, program)
        try:
            negatives.append(build_example(events, program, corpus.bounds(w), cfg.channels, cfg.features, -1, hops))
        except (EmptyWindow, TargetAbsent):
            continue
    return positives + negatives


# ----------------------------------------------------------- serialization


def example_to_dict(ex: MultiChannelGraph, features: FeatureConfig) -> dict:
    return {
        "schema": EXAMPLE_SCHEMA,
        "claimed_id": ex.claimed_id,
        "label": ex.label,
        "feature_config": {"d_con": features.d_con, "feature_set": features.feature_set},
        "graph": ex.graph.to_dict() if ex.graph is not None else None,
        "channels": {
            p.value: {
                "node_ids": list(ch.node_ids),
                "target_index": ch.target_index,
                "edges": [list(e) for e in ch.edge_list()],
            }
            for p, ch in ex.channels.items()
        },
        "features": {p.value: X.tolist() for p, X in (ex.features or {}).items()},
    }


def example_from_dict(obj: dict) -> MultiChannelGraph:
    if obj.get("schema") != EXAMPLE_SCHEMA:
        raise SchemaVersionMismatch(f"example schema {obj.get('schema')!r}, reader expects {EXAMPLE_SCHEMA}")
    channels = {}
    for name, ch in obj["channels"].items():
        channels[MetaPath(name)] = ChannelGraph.from_edges(ch["node_ids"], ch["edges"], ch["target_index"])
    feats = {MetaPath(k): np.asarray(v, dtype=np.float64).reshape(len(channels[MetaPath(k)].node_ids), -1)
             for k, v in obj["features"].items()}
    graph = BehaviorGraph.from_dict(obj["graph"]) if obj.get("graph") else None
    return MultiChannelGraph(channels, obj["claimed_id"], obj.get("label"), feats or None, graph)


def save_examples(examples: Iterable[MultiChannelGraph], out_dir: str | os.PathLike, features: FeatureConfig,
                  meta: Optional[dict] = None) -> Path:
    """Write ``examples.jsonl`` (one example per line) and ``meta.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps(example_to_dict(ex, features), separators=(",", ":")) for ex in examples]
    atomic_write_text(out / "examples.jsonl", "".join(line + "\n" for line in lines))
    info = {"schema": EXAMPLE_SCHEMA, "count": len(lines), "d_con": features.d_con,
            "feature_set": features.feature_set, **(meta or {})}
    atomic_write_text(out / "meta.json", json.dumps(info, indent=1, sort_keys=True) + "\n")
    return out


def load_examples(path: str | os.PathLike) -> list[MultiChannelGraph]:
    """Read examples from a directory written by :func:`save_examples` or a JSONL file."""
    path = Path(path)
    if path.is_dir():
        path = path / "examples.jsonl"
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(example_from_dict(json.loads(line)))
    return out
