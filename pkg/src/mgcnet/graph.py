"""Heterogeneous multi-behavior item-transition graph.

Nodes are items; every ordered behavior pair ``(a, b)`` is a relation named
``"{a}2{b}"``. Within a session, consecutive events add an edge under their
behavior pair, and non-adjacent events with equal behavior add a
long-distance edge. Edges point from the earlier event to the later one and
carry occurrence counts.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .sessions import DatasetError

Relation = tuple[int, int]


def session_edges(seq: Sequence[tuple[int, int]]) -> list[tuple[int, Relation, int]]:
    """All (src, relation, dst) occurrences contributed by one indexed session."""
    out = []
    L = len(seq)
    for i in range(L - 1):
        vi, oi = seq[i]
        vj, oj = seq[i + 1]
        out.append((vi, (oi, oj), vj))
        for j in range(i + 2, L):
            vj, oj = seq[j]
            if oj == oi:
                out.append((vi, (oi, oj), vj))
    return out


@dataclass
class GlobalGraph:
    n_items: int
    behaviors: list[str]
    # relation -> (src, dst) -> weight
    edges: dict[Relation, dict[tuple[int, int], int]] = field(default_factory=dict)
    _inbound: dict[Relation, dict[int, list[tuple[int, int]]]] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        self._index()

    @property
    def relations(self) -> list[Relation]:
        n = len(self.behaviors)
        return [(a, b) for a in range(n) for b in range(n)]

    def relation_name(self, rel: Relation) -> str:
        return f"{self.behaviors[rel[0]]}2{self.behaviors[rel[1]]}"

    def relation_by_name(self, name: str) -> Relation:
        for rel in self.relations:
            if self.relation_name(rel) == name:
                return rel
        raise KeyError(f"unknown relation {name!r}")

    def _index(self) -> None:
        inbound: dict[Relation, dict[int, list[tuple[int, int]]]] = {}
        for rel, es in self.edges.items():
            per: dict[int, list[tuple[int, int]]] = defaultdict(list)
            for (src, dst), w in es.items():
                per[dst].append((src, w))
            inbound[rel] = {dst: sorted(v, key=lambda t: (-t[1], t[0])) for dst, v in per.items()}
        self._inbound = inbound

    def neighbor_query(self, item: int, relation: Relation | str) -> list[tuple[int, int]]:
        """Inbound neighbors ``j`` with an edge ``(j, relation, item)``, by descending weight then index."""
        if isinstance(relation, str):
            relation = self.relation_by_name(relation)
        if not 0 <= item < self.n_items:
            raise IndexError(f"item {item} outside 0..{self.n_items - 1}")
        return list(self._inbound.get(tuple(relation), {}).get(item, []))

    def edge_list(self) -> list[tuple[int, Relation, int, int]]:
        return sorted((s, rel, d, w) for rel, es in self.edges.items() for (s, d), w in es.items())

    def n_edges(self) -> int:
        return sum(len(es) for es in self.edges.values())

    def total_weight(self) -> int:
        return sum(sum(es.values()) for es in self.edges.values())

    # ------------------------------------------------------------ serialization

    def to_tsv(self) -> str:
        lines = [f"#n_items={self.n_items}\tbehaviors={','.join(self.behaviors)}"]
        for s, rel, d, w in self.edge_list():
            lines.append(f"{s}\t{self.relation_name(rel)}\t{d}\t{w}")
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_tsv(), encoding="utf-8")

    @classmethod
    def from_tsv(cls, text: str) -> "GlobalGraph":
        lines = text.splitlines()
        if not lines or not lines[0].startswith("#n_items="):
            raise DatasetError("graph file: missing header line")
        head = dict(part.split("=", 1) for part in lines[0][1:].split("\t"))
        g = cls(int(head["n_items"]), head["behaviors"].split(","))
        names = {g.relation_name(r): r for r in g.relations}
        edges: dict[Relation, dict[tuple[int, int], int]] = defaultdict(dict)
        for lineno, line in enumerate(lines[1:], 2):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 4 or parts[1] not in names:
                raise DatasetError(f"graph file: malformed edge on line {lineno}")
            edges[names[parts[1]]][(int(parts[0]), int(parts[2]))] = int(parts[3])
        g.edges = dict(edges)
        g._index()
        return g

    @classmethod
    def load(cls, path: str | Path) -> "GlobalGraph":
        return cls.from_tsv(Path(path).read_text(encoding="utf-8"))


def build_global_graph(
    train_sessions: Iterable[Sequence[tuple[int, int]]],
    n_items: int,
    behaviors: Sequence[str],
    neighbor_cap: int = 12,
) -> GlobalGraph:
    """Accumulate transition counts over indexed training sessions.

    With ``neighbor_cap > 0`` each node keeps, per relation, only its ``cap``
    heaviest inbound neighbors (smaller index wins ties).
    """
    if neighbor_cap < 0:
        raise ValueError("neighbor_cap must be >= 0")
    counts: Counter = Counter()
    n_sessions = 0
    for seq in train_sessions:
        n_sessions += 1
        for src, rel, dst in session_edges(seq):
            if not (0 <= src < n_items and 0 <= dst < n_items):
                raise DatasetError(f"item index outside 0..{n_items - 1}")
            counts[(rel, src, dst)] += 1
    if n_sessions == 0:
        raise DatasetError("cannot build a graph from an empty training set")

    edges: dict[Relation, dict[tuple[int, int], int]] = defaultdict(dict)
    for (rel, src, dst), w in sorted(counts.items()):
        edges[rel][(src, dst)] = w
    if neighbor_cap > 0:
        for rel, es in edges.items():
            per: dict[int, list[tuple[int, int]]] = defaultdict(list)
            for (src, dst), w in es.items():
                per[dst].append((src, w))
            kept = {}
            for dst, lst in per.items():
                for src, w in sorted(lst, key=lambda t: (-t[1], t[0]))[:neighbor_cap]:
                    kept[(src, dst)] = w
            edges[rel] = dict(sorted(kept.items()))
    return GlobalGraph(n_items, list(behaviors), dict(edges))


# ---------------------------------------------------------------- dense views for the model


@dataclass
class RelationBlock:
    """Padded inbound neighborhoods of one relation, restricted to nodes with support."""

    targets: np.ndarray  # (n_r,)
    neighbors: np.ndarray  # (n_r, width)
    weights: np.ndarray  # (n_r, width)
    mask: np.ndarray  # (n_r, width) bool


@dataclass
class GraphArrays:
    n_items: int
    n_relations: int
    blocks: list[RelationBlock]  # aligned with GlobalGraph.relations
    union_neighbors: np.ndarray  # (n_items, U); union over relations
    union_mask: np.ndarray  # (n_items, U) bool
    has_union: np.ndarray  # (n_items,) bool


def _pad(rows: list[list[tuple[int, float]]]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    width = max([len(r) for r in rows] + [1])
    nb = np.zeros((len(rows), width), dtype=np.intp)
    w = np.zeros((len(rows), width))
    m = np.zeros((len(rows), width), dtype=bool)
    for i, r in enumerate(rows):
        for k, (j, wt) in enumerate(r):
            nb[i, k], w[i, k], m[i, k] = j, wt, True
    return nb, w, m


def graph_arrays(graph: GlobalGraph) -> GraphArrays:
    blocks = []
    union: list[set[int]] = [set() for _ in range(graph.n_items)]
    for rel in graph.relations:
        inbound = graph._inbound.get(rel, {})
        targets = sorted(inbound)
        rows = [inbound[t] for t in targets]
        nb, w, m = _pad(rows)
        blocks.append(RelationBlock(np.asarray(targets, dtype=np.intp), nb[: len(targets)], w[: len(targets)], m[: len(targets)]))
        for t, r in zip(targets, rows):
            union[t].update(j for j, _ in r)
    nb, _, m = _pad([[(j, 1.0) for j in sorted(u)] for u in union])
    return GraphArrays(graph.n_items, len(graph.relations), blocks, nb, m, m.any(axis=1))
