"""Meta-path channel decomposition of behavior graphs."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from scipy import sparse

from .errors import ConfigError, NoChannels, NotSymmetric, ShapeMismatch, ZeroDiagonal
from .events import Relation
from .graph import BehaviorGraph


class MetaPath(str, Enum):
    PP = "PP"
    PF = "PF"
    PI = "PI"
    # two-step process-to-process paths through a shared file / socket
    PFP = "PFP"
    PIP = "PIP"


DEFAULT_CHANNELS = (MetaPath.PP, MetaPath.PF, MetaPath.PI)
_VIA = {MetaPath.PFP: Relation.PF, MetaPath.PIP: Relation.PI}


def parse_channels(names: Sequence[str]) -> tuple[MetaPath, ...]:
    if not names:
        raise NoChannels("at least one channel is required")
    try:
        paths = tuple(MetaPath(str(n).upper()) for n in names)
    except ValueError as exc:
        raise ConfigError(f"unknown channel: {exc}") from None
    if len(set(paths)) != len(paths):
        raise ConfigError(f"duplicate channels in {list(names)}")
    return paths


def propagation_matrix(adjacency: np.ndarray) -> np.ndarray:
    """Row-normalise a symmetric 0/1 adjacency with unit diagonal: ``D^-1 A``."""
    A = np.asarray(adjacency, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeMismatch(f"adjacency must be square, got {A.shape}")
    if not np.array_equal(A, A.T):
        raise NotSymmetric("adjacency is not symmetric")
    if not np.all(np.diag(A) == 1.0):
        raise ZeroDiagonal("adjacency needs a unit diagonal (self-loops)")
    return A / A.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class ChannelGraph:
    node_ids: tuple[int, ...]
    adjacency: np.ndarray
    target_index: int
    prop: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        A = np.asarray(self.adjacency, dtype=np.float64)
        if A.shape != (len(self.node_ids), len(self.node_ids)):
            raise ShapeMismatch(f"adjacency {A.shape} for {len(self.node_ids)} nodes")
        object.__setattr__(self, "node_ids", tuple(int(i) for i in self.node_ids))
        object.__setattr__(self, "adjacency", A)
        object.__setattr__(self, "prop", propagation_matrix(A))

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    def sparse_prop(self) -> sparse.csr_matrix:
        return sparse.csr_matrix(self.prop)

    def edge_list(self) -> list[tuple[int, int]]:
        """Off-diagonal upper-triangle pairs as local indices."""
        i, j = np.nonzero(np.triu(self.adjacency, k=1))
        return list(zip(i.tolist(), j.tolist()))

    @classmethod
    def from_edges(cls, node_ids, pairs, target_index: int) -> "ChannelGraph":
        n = len(node_ids)
        A = np.eye(n)
        for i, j in pairs:
            A[i, j] = A[j, i] = 1.0
        return cls(tuple(node_ids), A, target_index)

    def hop_distances(self) -> np.ndarray:
        """Hop count from the target to every channel node (-1 when unreachable)."""
        dist = np.full(self.n_nodes, -1)
        dist[self.target_index] = 0
        frontier = [self.target_index]
        d = 0
        while frontier:
            d += 1
            nxt = []
            for v in frontier:
                for u in np.nonzero(self.adjacency[v])[0]:
                    if dist[u] < 0:
                        dist[u] = d
                        nxt.append(u)
            frontier = nxt
        return dist


@dataclass
class MultiChannelGraph:
    """Channels of one example plus (once assembled) their feature matrices."""

    channels: dict[MetaPath, ChannelGraph]
    claimed_id: str
    label: Optional[int] = None
    features: Optional[dict[MetaPath, np.ndarray]] = None
    graph: Optional[BehaviorGraph] = None

    @property
    def paths(self) -> tuple[MetaPath, ...]:
        return tuple(self.channels)


def _channel_for_relation(g: BehaviorGraph, rel: Relation) -> ChannelGraph:
    pairs = [(s, d) for s, d, r, _ in g.edges if r is rel]
    members = sorted({g.target} | {v for p in pairs for v in p})
    local = {v: i for i, v in enumerate(members)}
    return ChannelGraph.from_edges(members, [(local[s], local[d]) for s, d in pairs], local[g.target])


def _channel_two_step(g: BehaviorGraph, via: Relation) -> ChannelGraph:
    pairs = [(s, d) for s, d, r, _ in g.edges if r is via]
    procs = sorted({g.target} | {s for s, _ in pairs})
    mids = sorted({d for _, d in pairs})
    local = {v: i for i, v in enumerate(procs)}
    mid_index = {v: i for i, v in enumerate(mids)}
    incidence = np.zeros((len(procs), len(mids)))
    for s, d in pairs:
        incidence[local[s], mid_index[d]] = 1.0
    shared = incidence @ incidence.T
    np.fill_diagonal(shared, 0.0)
    i, j = np.nonzero(np.triu(shared, k=1))
    return ChannelGraph.from_edges(procs, list(zip(i.tolist(), j.tolist())), local[g.target])


def transform_multichannel(g: BehaviorGraph, paths: Sequence[MetaPath] = DEFAULT_CHANNELS) -> MultiChannelGraph:
    """Split ``g`` into one symmetric, self-looped channel graph per meta-path.

    Every channel contains the target, even when it has no edge of that kind.
    """
    if not paths:
        raise NoChannels("at least one meta-path is required")
    paths = parse_channels([p.value if isinstance(p, MetaPath) else p for p in paths])
    channels = {}
    for p in paths:
        if p in _VIA:
            channels[p] = _channel_two_step(g, _VIA[p])
        else:
            channels[p] = _channel_for_relation(g, Relation(p.value))
    return MultiChannelGraph(channels=channels, claimed_id=g.claimed_id, graph=g)

