"""Input-layer node features: hashed connectivity plus four graph statistics.

Statistics are computed on the whole behavior graph, treated as a simple
undirected graph (self-loops dropped), and shared by every channel.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .channels import MultiChannelGraph
from .errors import BadNodeId, ConfigError
from .events import canonical_entity_id
from .graph import BehaviorGraph

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

N_STATS = 4
STAT_NAMES = ("degree", "closeness", "betweenness", "clustering")

Adjacency = Sequence[Union[set, frozenset]]


def fnv1a_64(text: str) -> int:
    h = FNV_OFFSET
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


@dataclass(frozen=True)
class FeatureConfig:
    d_con: int = 256
    include_con: bool = True
    include_stat: bool = True

    def __post_init__(self):
        if self.d_con < 1:
            raise ConfigError("d_con must be >= 1")
        if not (self.include_con or self.include_stat):
            raise ConfigError("enable connectivity features, statistic features or both")

    @classmethod
    def from_feature_set(cls, feature_set: str = "both", d_con: int = 256) -> "FeatureConfig":
        sets = {"con": (True, False), "stat": (False, True), "both": (True, True)}
        if feature_set not in sets:
            raise ConfigError(f"feature_set must be one of {sorted(sets)}, got {feature_set!r}")
        con, stat = sets[feature_set]
        return cls(d_con=d_con, include_con=con, include_stat=stat)

    @property
    def feature_set(self) -> str:
        if self.include_con and self.include_stat:
            return "both"
        return "con" if self.include_con else "stat"

    @property
    def width(self) -> int:
        return self.d_con * self.include_con + N_STATS * self.include_stat


def _adjacency(g) -> Adjacency:
    return g.simple_adjacency if isinstance(g, BehaviorGraph) else g


def _check_node(adj: Adjacency, node) -> None:
    if not 0 <= node < len(adj):
        raise BadNodeId(f"node id {node!r} not in [0, {len(adj)})")


def connectivity_features(g: BehaviorGraph, node: int, d_con: int) -> np.ndarray:
    """Hashed first-order proximity: neighbor ``u`` adds ``log1p(count)`` at ``fnv(u) % d_con``."""
    g._check(node)
    vec = np.zeros(d_con)
    for u, count in sorted(g.multiplicity[node].items()):
        bucket = fnv1a_64(canonical_entity_id(g.nodes[u])) % d_con
        vec[bucket] += math.log1p(count)
    return vec


def degree_centrality(g, node: int) -> float:
    adj = _adjacency(g)
    _check_node(adj, node)
    n = len(adj)
    return 0.0 if n <= 1 else len(adj[node]) / (n - 1)


def _bfs_distances(adj: Adjacency, source: int) -> dict[int, int]:
    dist = {source: 0}
    queue = deque([source])
    while queue:
        v = queue.popleft()
        for w in adj[v]:
            if w not in dist:
                dist[w] = dist[v] + 1
                queue.append(w)
    return dist


def closeness_centrality(g, node: int) -> float:
    """Wasserman-Faust closeness; 0 when nothing is reachable."""
    adj = _adjacency(g)
    _check_node(adj, node)
    n = len(adj)
    dist = _bfs_distances(adj, node)
    reach = len(dist) - 1
    if reach == 0:
        return 0.0
    total = sum(dist.values())
    return (reach / (n - 1)) * (reach / total)


def betweenness_centrality(g) -> np.ndarray:
    """Brandes' algorithm, normalised by the number of unordered pairs excluding the node."""
    adj = _adjacency(g)
    n = len(adj)
    cb = np.zeros(n)
    for s in range(n):
        stack = []
        preds = [[] for _ in range(n)]
        sigma = [0] * n
        sigma[s] = 1
        dist = [-1] * n
        dist[s] = 0
        queue = deque([s])
        while queue:
            v = queue.popleft()
            stack.append(v)
            for w in sorted(adj[v]):
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    queue.append(w)
                if dist[w] == dist[v] + 1:
                    sigma[w] += sigma[v]
                    preds[w].append(v)
        delta = [0.0] * n
        while stack:
            w = stack.pop()
            for v in preds[w]:
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w])
            if w != s:
                cb[w] += delta[w]
    if n < 3:
        return np.zeros(n)
    # ordered-pair sums count every unordered pair twice
    return cb / ((n - 1) * (n - 2))


def clustering_coefficient(g, node: int) -> float:
    adj = _adjacency(g)
    _check_node(adj, node)
    nbrs = adj[node] - {node}
    k = len(nbrs)
    if k < 2:
        return 0.0
    links = sum(1 for u in nbrs for w in adj[u] if w in nbrs and w != u) // 2
    return 2.0 * links / (k * (k - 1))


def node_statistics(g) -> np.ndarray:
    """``(n, 4)`` matrix of degree, closeness, betweenness and clustering."""
    adj = _adjacency(g)
    n = len(adj)
    out = np.empty((n, N_STATS))
    out[:, 2] = betweenness_centrality(adj)
    for v in range(n):
        out[v, 0] = degree_centrality(adj, v)
        out[v, 1] = closeness_centrality(adj, v)
        out[v, 3] = clustering_coefficient(adj, v)
    return out


def node_feature_matrix(g: BehaviorGraph, cfg: FeatureConfig) -> np.ndarray:
    """Feature rows for every behavior-graph node, in node-id order."""
    blocks = []
    if cfg.include_con:
        blocks.append(np.stack([connectivity_features(g, v, cfg.d_con) for v in range(g.n_nodes)]))
    if cfg.include_stat:
        blocks.append(node_statistics(g))
    return np.concatenate(blocks, axis=1)


def assemble_features(g: BehaviorGraph, mcg: MultiChannelGraph, cfg: FeatureConfig) -> MultiChannelGraph:
    """Fill ``mcg.features`` with one matrix per channel, rows in channel node order."""
    full = node_feature_matrix(g, cfg)
    mcg.features = {path: full[list(ch.node_ids)] for path, ch in mcg.channels.items()}
    return mcg
