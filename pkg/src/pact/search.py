"""Free-text semantic search over the unified index, with optional graph enrichment."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

from pact.embedder import Embedder
from pact.errors import EmptyText, GraphRequired
from pact.index import VectorIndex, search_top_k
from pact.knn_graph import KnnGraph, neighbors

SNIPPET_CHARS = 160


@dataclass(frozen=True)
class SearchRequest:
    query: str
    k: int = 5
    types: frozenset[str] | None = None
    enrich_hops: int = 0
    enrich_types: frozenset[str] | None = None

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.enrich_hops < 0:
            raise ValueError("enrich_hops must be >= 0")


@dataclass(frozen=True)
class Hit:
    id: str
    type: str
    text: str
    score: float | None  # None for graph-edge hits: they are annotated, not re-scored
    provenance: str = "direct"  # "direct" | "graph-edge"
    source: str | None = None  # direct hit a graph-edge hit was reached from
    edge_similarity: float | None = None

    @property
    def snippet(self) -> str:
        text = " ".join(self.text.split())
        return text if len(text) <= SNIPPET_CHARS else text[: SNIPPET_CHARS - 3] + "..."


@dataclass
class SearchResult:
    hits: list[Hit] = field(default_factory=list)
    latency_ms: float = 0.0

    @property
    def direct(self) -> list[Hit]:
        return [h for h in self.hits if h.provenance == "direct"]

    def to_dict(self) -> dict:
        return {"hits": [asdict(h) for h in self.hits], "latency_ms": self.latency_ms}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def pretty(self) -> str:
        lines = [f"{'#':>3}  {'score':>9}  {'type':<14} {'id':<40} snippet"]
        for n, hit in enumerate(self.hits, 1):
            score = f"{hit.score:9.4f}" if hit.score is not None else f"edge {hit.edge_similarity:4.2f}"
            lines.append(f"{n:>3}  {score}  {hit.type:<14} {hit.id:<40} {hit.snippet}")
            if hit.source is not None:
                lines.append(f"{'':>16}via {hit.source}")
        lines.append(f"latency: {self.latency_ms:.2f} ms")
        return "\n".join(lines)


def search(
    req: SearchRequest,
    index: VectorIndex,
    embedder: Embedder,
    graph: KnnGraph | None = None,
    rerank: bool = True,
) -> SearchResult:
    """Encode the query, take the top-k, then append graph neighbors of each hit.

    ``k`` beyond the index size returns everything. Enriched hits follow all
    direct hits, grouped by the direct hit they came from, breadth-first and
    by similarity within each hop.

    Raises:
        EmptyText: blank query.
        GraphRequired: ``enrich_hops > 0`` without a graph.
    """
    if not req.query.strip():
        raise EmptyText("empty query")
    if req.enrich_hops > 0 and graph is None:
        raise GraphRequired("graph enrichment requested but no KNN graph supplied")
    started = time.perf_counter()
    query_vec = embedder.query(req.query)
    top = search_top_k(index, query_vec, min(req.k, len(index)), req.types, rerank)
    hits = [
        Hit(i, index.types[index.row(i)], index.texts[index.row(i)], score) for i, score in top
    ]
    if req.enrich_hops > 0:
        seen = {h.id for h in hits}
        for direct in list(hits):
            frontier = [direct.id]
            for _ in range(req.enrich_hops):
                nxt = []
                for node in frontier:
                    for other, sim in neighbors(graph, node, req.enrich_types):
                        if other in seen:
                            continue
                        seen.add(other)
                        nxt.append(other)
                        row = index.row(other)
                        hits.append(
                            Hit(other, index.types[row], index.texts[row], None,
                                "graph-edge", direct.id, sim)
                        )
                frontier = nxt
    return SearchResult(hits, (time.perf_counter() - started) * 1000.0)
