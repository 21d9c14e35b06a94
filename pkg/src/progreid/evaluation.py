"""Metrics, stratified folds and the variant ablation harness."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .channels import MetaPath, MultiChannelGraph
from .dataset import reid_dataset
from .encoder import EncoderConfig
from .errors import ConfigError, LengthMismatch, OneClassOnly, TooFewExamples
from .model import ModelConfig, TrainConfig, TrainedModel, forward, pack, train
from .synth import Corpus


@dataclass
class EvalReport:
    tp: int
    fp: int
    tn: int
    fn: int
    acc: float
    precision: float
    recall: float
    f1: float
    tpr: float
    fpr: float
    auc: Optional[float] = None
    per_channel_attention_mean: Optional[list[float]] = None
    # set when a ratio had a zero denominator and was reported as 0
    undefined: list[str] = field(default_factory=list)

    @property
    def m(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        return asdict(self)


def _ratio(num: float, den: float, name: str, undefined: list) -> float:
    if den == 0:
        undefined.append(name)
        return 0.0
    return num / den


def report_from_counts(tp: int, fp: int, tn: int, fn: int) -> EvalReport:
    undefined: list[str] = []
    m = tp + fp + tn + fn
    precision = _ratio(tp, tp + fp, "precision", undefined)
    recall = _ratio(tp, tp + fn, "recall", undefined)
    fpr = _ratio(fp, fp + tn, "fpr", undefined)
    if precision + recall == 0:
        undefined.append("f1")
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return EvalReport(tp, fp, tn, fn, (tp + tn) / m if m else 0.0, precision, recall, f1, recall, fpr,
                      undefined=undefined)


def _labels(labels) -> np.ndarray:
    y = np.asarray(labels)
    if not np.isin(y, (1, -1)).all():
        raise ValueError("labels must be +1 or -1")
    return y


def confusion_metrics(scores, labels, threshold: float = 0.5) -> EvalReport:
    """Confusion counts and rates with +1 as the positive class; score == threshold counts as +1."""
    s = np.asarray(scores, dtype=np.float64)
    y = _labels(labels)
    if s.shape != y.shape or s.size == 0:
        raise LengthMismatch(f"{s.size} scores for {y.size} labels")
    pred = s >= threshold
    pos = y == 1
    tp = int(np.sum(pred & pos))
    fp = int(np.sum(pred & ~pos))
    tn = int(np.sum(~pred & ~pos))
    fn = int(np.sum(~pred & pos))
    return report_from_counts(tp, fp, tn, fn)


def auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) + P(tie) / 2, via average ranks."""
    s = np.asarray(scores, dtype=np.float64)
    y = _labels(labels)
    if s.shape != y.shape:
        raise LengthMismatch(f"{s.size} scores for {y.size} labels")
    n_pos = int(np.sum(y == 1))
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise OneClassOnly("AUC needs both classes")
    ranks = rankdata(s)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def detection_rates(scores, labels, threshold: float = 0.5) -> tuple[float, float]:
    """(TPR, FPR) for disguise detection: attacks (-1) flagged, genuine (+1) falsely flagged."""
    s = np.asarray(scores, dtype=np.float64)
    y = _labels(labels)
    flagged = s < threshold
    attacks = y == -1
    tpr = float(flagged[attacks].mean()) if attacks.any() else 0.0
    fpr = float(flagged[~attacks].mean()) if (~attacks).any() else 0.0
    return tpr, fpr


def kfold_split(labels, k: int = 5, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Stratified, seeded ``(train_idx, test_idx)`` pairs.

    Each class is shuffled and dealt round-robin to the folds, continuing
    from where the previous class stopped so fold sizes stay balanced.
    """
    y = np.asarray(labels)
    if k < 2:
        raise ConfigError("k must be >= 2")
    if y.size < k:
        raise TooFewExamples(f"{y.size} examples cannot fill {k} folds")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(y.size, dtype=int)
    cursor = 0
    for cls in sorted(set(y.tolist()), reverse=True):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(idx.size)]
        fold_of[idx] = (cursor + np.arange(idx.size)) % k
        cursor = (cursor + idx.size) % k
    everything = np.arange(y.size)
    return [(everything[fold_of != f], everything[fold_of == f]) for f in range(k)]


# --------------------------------------------------------- model evaluation


def score_examples(model: TrainedModel, examples: Sequence[MultiChannelGraph]):
    """Scores, joint embeddings and attention weights (None under concat fusion)."""
    out = forward(model.params, pack(examples, model.config.channels), model.config)
    alpha = None if out.alpha is None else out.alpha.data.copy()
    return out.yhat.data[:, 0].copy(), out.joint.data.copy(), alpha


def evaluate(model: TrainedModel, examples: Sequence[MultiChannelGraph]) -> EvalReport:
    scores, _, alpha = score_examples(model, examples)
    labels = [ex.label for ex in examples]
    report = confusion_metrics(scores, labels)
    if len(set(labels)) == 2:
        report.auc = auc(scores, labels)
    if alpha is not None:
        report.per_channel_attention_mean = alpha.mean(axis=0).tolist()
    return report


def pooled_report(scores, labels, alphas=None) -> EvalReport:
    report = confusion_metrics(scores, labels)
    if len(set(np.asarray(labels).tolist())) == 2:
        report.auc = auc(scores, labels)
    if alphas is not None:
        report.per_channel_attention_mean = np.asarray(alphas).mean(axis=0).tolist()
    return report


def macro_average(reports: Sequence[EvalReport]) -> EvalReport:
    """Unweighted mean of every rate over programs; counts are summed."""
    if not reports:
        raise ValueError("nothing to average")
    out = report_from_counts(*(sum(getattr(r, c) for r in reports) for c in ("tp", "fp", "tn", "fn")))
    for name in ("acc", "precision", "recall", "f1", "tpr", "fpr"):
        setattr(out, name, float(np.mean([getattr(r, name) for r in reports])))
    aucs = [r.auc for r in reports if r.auc is not None]
    out.auc = float(np.mean(aucs)) if aucs else None
    atts = [r.per_channel_attention_mean for r in reports if r.per_channel_attention_mean is not None]
    out.per_channel_attention_mean = np.mean(atts, axis=0).tolist() if atts else None
    out.undefined = sorted({u for r in reports for u in r.undefined})
    return out


# --------------------------------------------------------------- ablations


@dataclass(frozen=True)
class Variant:
    """A model configuration under test, e.g. ``att``, ``pf-shallow``, ``con-deep-identity``."""

    name: str
    channels: tuple[MetaPath, ...]
    fusion: str = "attention"
    n_layers: int = 3
    propagation: str = "diffusion"

    def model_config(self, base: ModelConfig) -> ModelConfig:
        enc = EncoderConfig(self.n_layers, base.encoder.hidden_dim, self.propagation)
        return replace(base, channels=self.channels, fusion=self.fusion, encoder=enc)


def parse_variant(spec: str, all_channels: Sequence[MetaPath] = (MetaPath.PP, MetaPath.PF, MetaPath.PI)) -> Variant:
    parts = spec.lower().split("-")
    head, mods = parts[0], parts[1:]
    if head == "att":
        channels, fusion = tuple(all_channels), "attention"
    elif head == "con":
        channels, fusion = tuple(all_channels), "concat"
    elif head.upper() in MetaPath.__members__:
        channels, fusion = (MetaPath(head.upper()),), "attention"
    else:
        raise ConfigError(f"unknown variant {spec!r}")
    n_layers, propagation = 3, "diffusion"
    for mod in mods:
        if mod == "shallow":
            n_layers = 1
        elif mod == "deep":
            n_layers = 3
        elif mod in ("identity", "diffusion"):
            propagation = mod
        else:
            raise ConfigError(f"unknown variant modifier {mod!r} in {spec!r}")
    return Variant(spec.lower(), channels, fusion, n_layers, propagation)


def cross_validate(
    dataset: Sequence[MultiChannelGraph],
    cfg: ModelConfig,
    tcfg: TrainConfig,
    folds: Sequence[tuple[np.ndarray, np.ndarray]],
) -> EvalReport:
    """Out-of-fold scores for every example, pooled into one report."""
    scores = np.empty(len(dataset))
    alphas = np.empty((len(dataset), len(cfg.channels))) if cfg.fusion == "attention" else None
    for train_idx, test_idx in folds:
        model = train([dataset[i] for i in train_idx], cfg, tcfg)
        s, _, a = score_examples(model, [dataset[i] for i in test_idx])
        scores[test_idx] = s
        if alphas is not None:
            alphas[test_idx] = a
    return pooled_report(scores, [ex.label for ex in dataset], alphas)


def ablation_run(
    dataset: Sequence[MultiChannelGraph],
    variants: Sequence[Variant | str],
    base: ModelConfig,
    tcfg: TrainConfig,
    k: int = 5,
    seed: int = 0,
) -> list[tuple[str, EvalReport]]:
    """Cross-validate every variant on the same folds; one table row per variant."""
    variants = [parse_variant(v) if isinstance(v, str) else v for v in variants]
    folds = kfold_split([ex.label for ex in dataset], k, seed)
    return [(v.name, cross_validate(dataset, v.model_config(base), tcfg, folds)) for v in variants]


TABLE_COLUMNS = ("acc", "precision", "recall", "f1", "auc", "tpr", "fpr")


def reid_study(
    corpus: Corpus,
    variants: Sequence[Variant | str],
    base: ModelConfig,
    tcfg: TrainConfig,
    k: int = 5,
    seed: int = 0,
    programs: Optional[Sequence[str]] = None,
) -> list[tuple[str, EvalReport]]:
    """Per-program ablation on a synthetic corpus, macro-averaged over programs."""
    per_variant: dict[str, list[EvalReport]] = {}
    for program in programs or corpus.programs():
        dataset = reid_dataset(corpus, program, base, seed)
        for name, report in ablation_run(dataset, variants, base, tcfg, k, seed):
            per_variant.setdefault(name, []).append(report)
    return [(name, macro_average(reports)) for name, reports in per_variant.items()]


def format_table(rows: Sequence[tuple[str, EvalReport]]) -> str:
    header = ["variant", *TABLE_COLUMNS]
    body = []
    for name, r in rows:
        cells = [name]
        for col in TABLE_COLUMNS:
            v = getattr(r, col)
            cells.append("-" if v is None else f"{v:.4f}")
        body.append(cells)
    widths = [max(len(row[i]) for row in [header, *body]) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths)))
             for row in [header, *body]]
    return "\n".join(lines) + "\n"


def format_json(rows: Sequence[tuple[str, EvalReport]], meta: Optional[dict] = None) -> str:
    body = [{"variant": name, **r.to_dict()} for name, r in rows]
    return json.dumps({"meta": meta or {}, "reports": body}, indent=1, sort_keys=True) + "\n"
