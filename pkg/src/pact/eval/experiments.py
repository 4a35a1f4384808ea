"""Harnesses for the three experiments plus the out-of-domain guard."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Collection, Sequence

from pact.agent import DEFAULT_MAX_STEPS, pact_tool, rule_policy, run_agent
from pact.artifacts import Corpus, LinkEdge
from pact.embedder import AdapterPair, BaseEncoder, Embedder, tokenize
from pact.eval.metrics import (
    KeywordBenchmark,
    avg_relevant_at,
    match_rates,
    mean_ndcg,
    rank_of,
    recall_at_k,
)
from pact.fetcher import NodeCatalog, Ranker, evaluate_fetchers, standard_methods
from pact.index import VectorIndex, build_exact, search_top_k
from pact.knn_graph import KnnGraph
from pact.trainer import TrainConfig, TrainReport, split_edges, train

RECALL_KS = (1, 5, 10)


@dataclass
class Report:
    metrics: dict
    raw: list[dict] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"metrics": self.metrics, "raw": self.raw, **self.extra}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")


def name_tokens(corpus: Corpus, artifact_id: str) -> set[str]:
    artifact = corpus[artifact_id]
    first = next((text for _, text in artifact.fields if text), "")
    return set(tokenize(first))


def heuristic_rankings(corpus: Corpus, edges: Sequence[LinkEdge], threshold: float = 0.0) -> list[list[str]]:
    """Name-token Jaccard argmax; empty ranking when the best score is at or below ``threshold``."""
    out = []
    for edge in edges:
        query = name_tokens(corpus, edge.src)
        best, best_id = threshold, None
        for cand in corpus.of_type(corpus[edge.dst].type):
            other = name_tokens(corpus, cand.id)
            union = query | other
            score = len(query & other) / len(union) if union else 0.0
            if score > best or (score == best and best_id is not None and cand.id < best_id):
                best, best_id = score, cand.id
        out.append([best_id] if best_id is not None else [])
    return out


def model_rankings(
    corpus: Corpus, edges: Sequence[LinkEdge], embedder: Embedder, k: int = max(RECALL_KS)
) -> list[list[str]]:
    """Top-k candidates of each target's type for each edge source."""
    index = build_exact(corpus, embedder)
    rankings = []
    for edge in edges:
        query = embedder.query(corpus.text(edge.src))
        hits = search_top_k(index, query, k, {corpus[edge.dst].type})
        rankings.append([i for i, _ in hits])
    return rankings


def run_experiment1(
    corpus: Corpus,
    cfg: TrainConfig,
    enc: BaseEncoder,
    adapters: AdapterPair | None = None,
) -> tuple[Report, AdapterPair, TrainReport | None]:
    """Heuristic vs identity vs fine-tuned recall@{1,5,10} on held-out edges.

    Adapters are trained on the train part of the split unless supplied.
    """
    train_graph, test = split_edges(corpus.graph, cfg.train_test_split_ratio, cfg.seed)
    train_report = None
    if adapters is None:
        adapters, train_report = train(corpus, train_graph, cfg, enc)
    truths = [e.dst for e in test]
    systems = {
        "heuristic": heuristic_rankings(corpus, test),
        "identity": model_rankings(corpus, test, Embedder(enc, AdapterPair.identity(adapters.dim))),
        "finetuned": model_rankings(corpus, test, Embedder(enc, adapters)),
    }
    metrics = {}
    for name, rankings in systems.items():
        ks = (1,) if name == "heuristic" else RECALL_KS
        metrics[name] = {f"recall@{k}": recall_at_k(rankings, truths, k) for k in ks}
    raw = [
        {"system": name, "src": e.src, "dst": e.dst, "relation": e.relation, "rank": rank_of(r, e.dst)}
        for name, rankings in systems.items()
        for e, r in zip(test, rankings)
    ]
    extra = {"test_edges": len(test), "train_edges": len(train_graph)}
    return Report(metrics, raw, extra), adapters, train_report


def recall_csv(report: Report) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["system", "k", "recall"])
    for system, values in report.metrics.items():
        for key, value in values.items():
            writer.writerow([system, key.split("@")[1], f"{value:.6f}"])
    return buf.getvalue()


def run_generalization_guard(guard: Corpus, enc: BaseEncoder, adapters: AdapterPair) -> Report:
    """NDCG@10 and mean relevant items in the top 5 on a never-trained task."""
    edges = list(guard.graph)
    truths = [e.dst for e in edges]
    metrics = {}
    for name, pair in (("identity", AdapterPair.identity(adapters.dim)), ("finetuned", adapters)):
        rankings = model_rankings(guard, edges, Embedder(enc, pair))
        metrics[name] = {
            "ndcg@10": mean_ndcg(rankings, truths, 10),
            "avg_relevant@5": avg_relevant_at(rankings, truths, 5),
        }
    metrics["ndcg@10_delta"] = metrics["finetuned"]["ndcg@10"] - metrics["identity"]["ndcg@10"]
    return Report(metrics, extra={"queries": len(edges)})


def run_experiment2(
    catalog: NodeCatalog,
    projects: Sequence[tuple[str, str]],
    embedder: Embedder,
    ranker: Ranker,
    methods: Sequence[str] = ("llm", "knn", "hybrid"),
    workers: int = 1,
    shuffle_seed: int | None = None,
) -> Report:
    table = standard_methods(catalog, embedder, ranker, methods, workers=workers, shuffle_seed=shuffle_seed)
    result = evaluate_fetchers(projects, table, catalog).to_dict()
    node_index = catalog.index(embedder)
    shortlist = []
    for description, _ in projects:
        hits = search_top_k(node_index, embedder.query(description), min(40, len(catalog)))
        shortlist.append([i for i, _ in hits])
    result["metrics"]["shortlist_recall@40"] = recall_at_k(shortlist, [t for _, t in projects], 40)
    return Report(result["metrics"], result["raw"])


def run_experiment3(
    bench: KeywordBenchmark,
    index: VectorIndex,
    embedder: Embedder,
    vocab: Collection[str],
    graph: KnnGraph | None = None,
    k: int = 5,
    max_steps: int = DEFAULT_MAX_STEPS,
) -> Report:
    """Same rule policy with and without the search tool; keyword match rates for both."""
    policy_vocab = frozenset(vocab)
    agents = {"base": [], "base+pact": [pact_tool(index, embedder, graph, k)]}
    metrics, raw = {}, []
    for name, tools in agents.items():
        answers = []
        for qid, item in enumerate(bench.items):
            transcript = run_agent(item.question, rule_policy(policy_vocab), tools, max_steps)
            answers.append(transcript.final_answer)
            raw.append({
                "agent": name,
                "query": qid,
                "question": item.question,
                "keywords": list(item.keywords),
                "answer": transcript.final_answer,
                "tool_calls": len(transcript.tool_calls),
                "stopped": transcript.stopped,
            })
        average, global_rate = match_rates(bench, answers)
        metrics[name] = {"average_match_rate": average, "global_match_rate": global_rate}
    return Report(metrics, raw)
