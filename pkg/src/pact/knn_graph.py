"""Undirected KNN graph over index embeddings.

An edge {u, v} exists when v is among u's top-k most similar other nodes or
u is among v's (union rule). Top-k lists break score ties by ascending id.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Collection, Iterable

import numpy as np

from pact.errors import KTooLarge, UnknownNode
from pact.index import VectorIndex

DEFAULT_K = 10
_BLOCK = 2048  # rows per similarity block; bounds memory for large n


@dataclass
class KnnGraph:
    ids: tuple[str, ...]
    types: tuple[str, ...]
    k: int
    edges: dict[tuple[str, str], float]  # key is (smaller id, larger id)
    _adj: dict[str, dict[str, float]] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._type_of = dict(zip(self.ids, self.types))
        adj: dict[str, dict[str, float]] = {i: {} for i in self.ids}
        for (u, v), s in self.edges.items():
            if u == v:
                raise ValueError(f"self-loop on {u}")
            adj[u][v] = s
            adj[v][u] = s
        self._adj = adj

    def __contains__(self, node: str) -> bool:
        return node in self._adj

    def degree(self, node: str) -> int:
        return len(self._adj[node])

    def type_of(self, node: str) -> str:
        return self._type_of[node]


def _edge_key(u: str, v: str) -> tuple[str, str]:
    return (u, v) if u < v else (v, u)


def _row_top_k(scores: np.ndarray, k: int, id_rank: np.ndarray) -> np.ndarray:
    """Columns of the k largest scores in a row, ties by ascending id rank."""
    part = np.argpartition(-scores, k - 1)[:k]
    threshold = scores[part].min()
    above = np.flatnonzero(scores > threshold)
    tied = np.flatnonzero(scores == threshold)
    tied = tied[np.argsort(id_rank[tied], kind="stable")][: k - above.size]
    return np.concatenate([above, tied])


def build_knn_graph(index: VectorIndex, k: int = DEFAULT_K) -> KnnGraph:
    """Exact pairwise similarities, computed in row blocks.

    Raises:
        KTooLarge: ``k`` is not smaller than the node count.
    """
    n = len(index)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k >= n:
        raise KTooLarge(f"k={k} needs more than {n} nodes")
    vectors = index.exact_vectors()
    id_rank = index._id_rank
    ids = index.ids
    edges: dict[tuple[str, str], float] = {}
    for start in range(0, n, _BLOCK):
        block = vectors[start : start + _BLOCK] @ vectors.T
        for offset, row in enumerate(block):
            u = start + offset
            row = row.copy()
            row[u] = -np.inf
            for v in _row_top_k(row, k, id_rank):
                key = _edge_key(ids[u], ids[int(v)])
                if key not in edges:
                    a, b = index.row(key[0]), index.row(key[1])
                    edges[key] = float(vectors[a] @ vectors[b])
    ordered = dict(sorted(edges.items()))
    return KnnGraph(index.ids, index.types, k, ordered)


def neighbors(
    graph: KnnGraph, node: str, types: Collection[str] | None = None
) -> list[tuple[str, float]]:
    """Adjacent nodes by descending similarity, ties by id.

    Raises:
        UnknownNode: ``node`` is not in the graph.
    """
    if node not in graph:
        raise UnknownNode(f"{node!r} is not a graph node")
    items = graph._adj[node].items()
    if types is not None:
        items = [(v, s) for v, s in items if graph.type_of(v) in types]
    return sorted(items, key=lambda vs: (-vs[1], vs[0]))


@dataclass
class Subgraph:
    nodes: list[str]  # BFS discovery order
    depth: dict[str, int]
    edges: dict[tuple[str, str], float]


def expand(graph: KnnGraph, seeds: Iterable[str], hops: int) -> Subgraph:
    """Breadth-first closure of ``seeds`` out to ``hops`` hops.

    Raises:
        UnknownNode: a seed is not in the graph.
    """
    if hops < 0:
        raise ValueError("hops must be >= 0")
    depth: dict[str, int] = {}
    order: list[str] = []
    queue: deque[str] = deque()
    for seed in seeds:
        if seed not in graph:
            raise UnknownNode(f"{seed!r} is not a graph node")
        if seed not in depth:
            depth[seed] = 0
            order.append(seed)
            queue.append(seed)
    while queue:
        u = queue.popleft()
        if depth[u] == hops:
            continue
        for v, _ in neighbors(graph, u):
            if v not in depth:
                depth[v] = depth[u] + 1
                order.append(v)
                queue.append(v)
    members = set(order)
    sub_edges = {e: s for e, s in graph.edges.items() if e[0] in members and e[1] in members}
    return Subgraph(order, depth, sub_edges)


def save_graph(graph: KnnGraph, path: str | Path) -> None:
    header = {"k": graph.k, "n": len(graph.ids), "nodes": [list(p) for p in zip(graph.ids, graph.types)]}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(header) + "\n")
        for (u, v), s in graph.edges.items():
            fh.write(json.dumps({"u": u, "v": v, "s": s}) + "\n")


def load_graph(path: str | Path) -> KnnGraph:
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        edges = {}
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                edges[_edge_key(rec["u"], rec["v"])] = float(rec["s"])
    nodes = header.get("nodes")
    if nodes is None:
        ids = sorted({x for e in edges for x in e})
        nodes = [(i, "") for i in ids]
    if len(nodes) != header["n"]:
        raise ValueError(f"graph header says n={header['n']} but lists {len(nodes)} nodes")
    return KnnGraph(tuple(i for i, _ in nodes), tuple(t for _, t in nodes), int(header["k"]), edges)
