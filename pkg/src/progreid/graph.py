"""Per-(program, window) heterogeneous behavior graphs."""

from __future__ import annotations

import operator
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional, Sequence

from .errors import BadNodeId, EmptyWindow, TargetAbsent, TypeMismatch
from .events import REL_DST_KIND, Entity, EntityType, Relation, SystemEvent, canonical_entity_id

DEFAULT_HOPS = 3

Edge = tuple[int, int, Relation, int]


@dataclass(frozen=True)
class BehaviorGraph:
    """Typed multigraph collapsed to counted edges.

    ``nodes[i]`` is the entity with node id ``i``; ``edges`` holds
    ``(src_id, dst_id, rel, count)`` with one entry per distinct triple.
    """

    nodes: tuple[Entity, ...]
    target: int
    edges: tuple[Edge, ...]
    window: tuple[int, int]
    claimed_id: str
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(
            self, "edges", tuple((int(s), int(d), Relation(r), int(c)) for s, d, r, c in self.edges)
        )
        n = len(self.nodes)
        if not 0 <= self.target < n:
            raise BadNodeId(f"target {self.target} out of range for {n} nodes")
        t = self.nodes[self.target]
        if t.kind is not EntityType.PROCESS or t.key != self.claimed_id:
            raise TargetAbsent(f"target node is not Process {self.claimed_id!r}")
        seen = set()
        for s, d, r, c in self.edges:
            if not (0 <= s < n and 0 <= d < n):
                raise BadNodeId(f"edge ({s}, {d}) references a missing node")
            if (s, d, r) in seen:
                raise ValueError(f"duplicate edge ({s}, {d}, {r.value})")
            seen.add((s, d, r))
            if c < 1:
                raise ValueError("edge count must be >= 1")
            if self.nodes[s].kind is not EntityType.PROCESS or self.nodes[d].kind is not REL_DST_KIND[r]:
                raise TypeMismatch(f"edge ({s}, {d}) inconsistent with relation {r.value}")
        object.__setattr__(self, "_index", {e: i for i, e in enumerate(self.nodes)})

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def node_id(self, entity: Entity) -> int:
        return self._index[entity]

    def _check(self, node: int) -> None:
        try:
            node = operator.index(node)
        except TypeError:
            raise BadNodeId(f"node id {node!r} is not an integer") from None
        if not 0 <= node < len(self.nodes):
            raise BadNodeId(f"node id {node!r} not in [0, {len(self.nodes)})")

    @cached_property
    def _adjacency(self) -> dict:
        by_rel: dict = {None: defaultdict(set)}
        for r in Relation:
            by_rel[r] = defaultdict(set)
        for s, d, r, _ in self.edges:
            for key in (None, r):
                by_rel[key][s].add(d)
                by_rel[key][d].add(s)
        return by_rel

    @cached_property
    def simple_adjacency(self) -> list[frozenset]:
        """Undirected neighbor sets with self-loops removed, used by the centralities."""
        adj = self._adjacency[None]
        return [frozenset(adj.get(v, ()) - {v}) for v in range(self.n_nodes)]

    @cached_property
    def multiplicity(self) -> list[dict]:
        """``multiplicity[v][u]``: total event count between v and u, any relation or direction."""
        out = [Counter() for _ in range(self.n_nodes)]
        for s, d, _, c in self.edges:
            out[s][d] += c
            if d != s:
                out[d][s] += c
        return [dict(m) for m in out]

    def to_dict(self) -> dict:
        return {
            "claimed_id": self.claimed_id,
            "window": [self.window[0], self.window[1]],
            "nodes": [e.to_dict() for e in self.nodes],
            "target": self.target,
            "edges": [[s, d, r.value, c] for s, d, r, c in self.edges],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "BehaviorGraph":
        return cls(
            nodes=tuple(Entity(EntityType(n["kind"]), n["key"]) for n in obj["nodes"]),
            target=int(obj["target"]),
            edges=tuple((s, d, Relation(r), c) for s, d, r, c in obj["edges"]),
            window=(int(obj["window"][0]), int(obj["window"][1])),
            claimed_id=obj["claimed_id"],
        )


def neighbors(g: BehaviorGraph, node: int, rel_filter: Optional[Relation] = None) -> set[int]:
    """Undirected neighbors of ``node``, optionally restricted to one relation."""
    g._check(node)
    key = None if rel_filter is None else Relation(rel_filter)
    return set(g._adjacency[key].get(node, ()))


def build_behavior_graph(
    events: Sequence[SystemEvent],
    claimed_id: str,
    window: tuple[int, int],
    hops: int = DEFAULT_HOPS,
) -> BehaviorGraph:
    """Build the behavior graph of ``claimed_id`` over ``[start, end)``.

    Nodes are everything within ``hops`` undirected steps of the claimed
    process; edges are all in-window events among those nodes, collapsed per
    (src, dst, rel). Node ids are assigned target first, then by
    (hop distance, canonical id).
    """
    start, end = window
    if hops < 1:
        raise ValueError("hops must be >= 1")
    if not start < end:
        raise ValueError("window start must precede its end")
    in_window = [e for e in events if start <= e.ts < end]
    if not in_window:
        raise EmptyWindow(f"no events in [{start}, {end})")

    target = Entity.process(claimed_id)
    adj: dict[Entity, set[Entity]] = defaultdict(set)
    for e in in_window:
        adj[e.src].add(e.dst)
        adj[e.dst].add(e.src)
    if target not in adj:
        raise TargetAbsent(f"process {claimed_id!r} has no events in [{start}, {end})")

    hop_of = {target: 0}
    frontier = [target]
    for r in range(1, hops + 1):
        reached = {u for v in frontier for u in adj[v] if u not in hop_of}
        if not reached:
            break
        for u in reached:
            hop_of[u] = r
        frontier = list(reached)

    rest = sorted(
        (e for e in hop_of if e != target),
        key=lambda e: (hop_of[e], canonical_entity_id(e)),
    )
    nodes = (target, *rest)
    index = {e: i for i, e in enumerate(nodes)}
    counts = Counter(
        (index[e.src], index[e.dst], e.rel)
        for e in in_window
        if e.src in index and e.dst in index
    )
    edges = tuple(
        (s, d, r, c)
        for (s, d, r), c in sorted(counts.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2].value))
    )
    return BehaviorGraph(nodes, 0, edges, (start, end), claimed_id)


def in_scope_event_count(g: BehaviorGraph, events: Iterable[SystemEvent]) -> int:
    """Number of raw in-window events between nodes of ``g``."""
    start, end = g.window
    members = set(g.nodes)
    return sum(1 for e in events if start <= e.ts < end and e.src in members and e.dst in members)
