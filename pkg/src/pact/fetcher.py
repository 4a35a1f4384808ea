"""Product-node classification: ranker-only divide-and-conquer, KNN, and hybrid.

A ranker stands in for the LLM that picks nodes for a project description.
``LexicalRanker`` is deterministic and offline, ``ScriptedRanker`` replays a
fixture, and ``CompletionRanker`` prompts a remote text model through a
``Completion`` callable.
"""

from __future__ import annotations

import json
import math
import re
import threading
import time
import urllib.request
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol, Sequence

import numpy as np

from pact.embedder import Embedder, tokenize
from pact.errors import RankerViolation
from pact.index import VectorIndex, from_vectors, search_top_k

BATCH_SIZE = 40
KEEP_PER_BATCH = 20
SHORTLIST = 40


@dataclass(frozen=True)
class Node:
    id: str
    title: str
    description: str = ""

    @property
    def text(self) -> str:
        return f"{self.title} | {self.description}" if self.description else self.title


class NodeCatalog:
    def __init__(self, nodes: Iterable[Node]):
        self.nodes = list(nodes)
        if not self.nodes:
            raise ValueError("catalog is empty")
        self.by_id = {n.id: n for n in self.nodes}
        if len(self.by_id) != len(self.nodes):
            raise ValueError("catalog ids must be unique")

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)

    def index(self, embedder: Embedder) -> VectorIndex:
        vectors = np.vstack([embedder.context_text(n.text, n.id) for n in self.nodes])
        return from_vectors(
            [n.id for n in self.nodes],
            vectors,
            ["node"] * len(self.nodes),
            [n.text for n in self.nodes],
            getattr(embedder.encoder, "seed", 0),
            embedder.adapters.checksum(),
        )


def load_catalog(path: str | Path) -> NodeCatalog:
    nodes = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                nodes.append(Node(str(rec["id"]), rec.get("title", ""), rec.get("description", "")))
    return NodeCatalog(nodes)


def load_projects(path: str | Path) -> list[tuple[str, str]]:
    """(description, ground-truth node id) pairs from JSONL."""
    projects = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                projects.append((rec["description"], str(rec["node"])))
    return projects


class Ranker(Protocol):
    def rank(self, project: str, candidates: Sequence[Node], select: int) -> list[str]: ...


class LexicalRanker:
    """Orders candidates by token F1 between the project and the node text."""

    def rank(self, project: str, candidates: Sequence[Node], select: int) -> list[str]:
        words = Counter(tokenize(project))

        def f1(node: Node) -> float:
            other = Counter(tokenize(node.text))
            common = sum((words & other).values())
            if not common:
                return 0.0
            precision = common / sum(other.values())
            recall = common / sum(words.values())
            return 2 * precision * recall / (precision + recall)

        ranked = sorted(candidates, key=lambda n: (-f1(n), n.id))
        return [n.id for n in ranked[:select]]


class ScriptedRanker:
    """Replays per-project preference lists from a fixture.

    Candidates named in the fixture come first in fixture order; the rest
    follow in candidate order.
    """

    def __init__(self, preferences: Mapping[str, Sequence[str]]):
        self.preferences = {k: list(v) for k, v in preferences.items()}

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedRanker":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def rank(self, project: str, candidates: Sequence[Node], select: int) -> list[str]:
        present = {n.id for n in candidates}
        wanted = [i for i in self.preferences.get(project, []) if i in present]
        chosen = set(wanted)
        rest = [n.id for n in candidates if n.id not in chosen]
        return (wanted + rest)[:select]


Completion = Callable[[dict], dict]
"""Transport for a remote text model: ``{"prompt", "max_tokens"} -> {"text"}``."""

PROMPT_TEMPLATE = """You classify projects into product areas.

Project description:
{project}

Candidate product nodes:
{candidates}

Select the {select} best matching nodes, best first.
Output only node ids, one per line, with no other text."""

REMINDER = "\n\nYour previous reply could not be parsed. Reply with node ids only, one per line."


class CompletionRanker:
    """Prompts a remote model; one retry on an unparseable reply."""

    def __init__(self, complete: Completion, max_tokens: int = 512):
        self.complete = complete
        self.max_tokens = max_tokens

    def prompt(self, project: str, candidates: Sequence[Node], select: int) -> str:
        listing = "\n".join(f"{n}. {c.id}: {c.text}" for n, c in enumerate(candidates, 1))
        return PROMPT_TEMPLATE.format(project=project, candidates=listing, select=select)

    @staticmethod
    def parse(text: str, candidates: Sequence[Node], select: int) -> list[str] | None:
        valid = {n.id for n in candidates}
        picked: list[str] = []
        for line in text.splitlines():
            token = re.sub(r"^\s*\d+[.)]\s*", "", line).strip().strip("`*-").strip()
            if not token:
                continue
            token = token.split(":")[0].strip() if token not in valid else token
            if token not in valid:
                return None
            if token not in picked:
                picked.append(token)
        return picked[:select] if picked else None

    def rank(self, project: str, candidates: Sequence[Node], select: int) -> list[str]:
        prompt = self.prompt(project, candidates, select)
        for attempt in range(2):
            reply = self.complete({"prompt": prompt, "max_tokens": self.max_tokens})
            parsed = self.parse(str(reply.get("text", "")), candidates, select)
            if parsed is not None:
                return parsed
            prompt += REMINDER
        raise RankerViolation("remote ranker reply did not parse after one retry")


def http_completion(url: str, timeout: float = 60.0) -> Completion:
    """POST the request as JSON to ``url`` and read back ``{"text": ...}``."""

    def complete(request: dict) -> dict:
        body = json.dumps(request).encode("utf-8")
        req = urllib.request.Request(url, body, {"Content-Type": "application/json"})
        with urllib.request.urlopen(req, timeout=timeout) as response:
            return json.loads(response.read().decode("utf-8"))

    return complete


class CountingRanker:
    """Wraps a ranker, validates its output and counts calls."""

    def __init__(self, inner: Ranker):
        self.inner = inner
        self.calls = 0
        self._lock = threading.Lock()

    def rank(self, project: str, candidates: Sequence[Node], select: int) -> list[str]:
        with self._lock:
            self.calls += 1
        out = list(self.inner.rank(project, candidates, select))
        allowed = {n.id for n in candidates}
        if any(i not in allowed for i in out):
            raise RankerViolation(f"ranker returned ids outside the candidate list: {out}")
        if len(set(out)) != len(out) or len(out) > select:
            raise RankerViolation("ranker returned duplicates or too many ids")
        return out


@dataclass
class Classification:
    ranking: list[str]
    ranker_calls: int = 0
    rounds: list[list[str]] = field(default_factory=list)  # survivors after each reduction round


def divide_and_conquer_rounds(n: int, batch: int = BATCH_SIZE, keep: int = KEEP_PER_BATCH) -> list[int]:
    """Closed-form candidate counts: ``n -> ceil(n / batch) * keep`` until ``<= batch``."""
    sizes = []
    while n > batch:
        n = math.ceil(n / batch) * keep
        sizes.append(n)
    return sizes


def classify_llm_only(
    project: str,
    catalog: NodeCatalog,
    ranker: Ranker,
    k: int,
    workers: int = 1,
    shuffle_seed: int | None = None,
) -> Classification:
    """Batch the catalog in 40s, keep 20 per batch, repeat until one batch is left.

    The last batch is ordered by one final ranker call. Intermediate order is
    discarded; survivors keep catalog order.

    Raises:
        RankerViolation: the ranker returned ids outside its batch.
    """
    counting = CountingRanker(ranker)
    pool = list(catalog.nodes)
    if shuffle_seed is not None:
        pool = [pool[i] for i in np.random.default_rng(shuffle_seed).permutation(len(pool))]
    position = {n.id: i for i, n in enumerate(pool)}
    rounds = []
    while len(pool) > BATCH_SIZE:
        batches = [pool[i : i + BATCH_SIZE] for i in range(0, len(pool), BATCH_SIZE)]
        pick = lambda b: counting.rank(project, b, KEEP_PER_BATCH)  # noqa: E731
        if workers > 1:
            with ThreadPoolExecutor(workers) as ex:
                picked = list(ex.map(pick, batches))
        else:
            picked = [pick(b) for b in batches]
        keep = {i for ids in picked for i in ids}
        pool = sorted((catalog.by_id[i] for i in keep), key=lambda n: position[n.id])
        rounds.append([n.id for n in pool])
    final = counting.rank(project, pool, min(k, len(pool)))
    return Classification(final[:k], counting.calls, rounds)


def classify_knn(project: str, node_index: VectorIndex, embedder: Embedder, k: int) -> Classification:
    hits = search_top_k(node_index, embedder.query(project), min(k, len(node_index)))
    return Classification([i for i, _ in hits])


def classify_hybrid(
    project: str,
    catalog: NodeCatalog,
    node_index: VectorIndex,
    embedder: Embedder,
    ranker: Ranker,
    k: int,
    shortlist: int = SHORTLIST,
) -> Classification:
    """KNN shortlist of ``shortlist`` nodes, then a single ranker call over it."""
    counting = CountingRanker(ranker)
    fetched = classify_knn(project, node_index, embedder, shortlist).ranking
    final = counting.rank(project, [catalog.by_id[i] for i in fetched], min(k, len(fetched)))
    return Classification(final, counting.calls, [fetched])


@dataclass
class MethodStats:
    hits: dict[int, int]
    rates: dict[int, float]
    mean_latency_ms: float
    ranker_calls: int
    queries: int


@dataclass
class FetchRankReport:
    methods: dict[str, MethodStats]
    raw: list[dict]

    def to_dict(self) -> dict:
        metrics = {}
        for name, s in self.methods.items():
            metrics[name] = {
                **{f"T{k}": s.rates[k] for k in s.rates},
                **{f"T{k}_hits": s.hits[k] for k in s.hits},
                "mean_latency_ms": s.mean_latency_ms,
                "ranker_calls": s.ranker_calls,
                "queries": s.queries,
            }
        return {"metrics": metrics, "raw": self.raw}


TOP_KS = (1, 5, 20)


def evaluate_fetchers(
    projects: Sequence[tuple[str, str]],
    methods: Mapping[str, Callable[[str], Classification]],
    catalog: NodeCatalog,
    ks: Sequence[int] = TOP_KS,
) -> FetchRankReport:
    """T1/T5/T20-style hit counts and mean wall-clock latency per method.

    A hit at k means the ground-truth node is within the first k of the
    returned ranking.
    """
    if not projects:
        raise ValueError("no projects to evaluate")
    for _, truth in projects:
        if truth not in catalog.by_id:
            raise ValueError(f"ground-truth node {truth!r} is not in the catalog")
    stats, raw = {}, []
    for name, method in methods.items():
        hits = {k: 0 for k in ks}
        elapsed = 0.0
        calls = 0
        for qid, (description, truth) in enumerate(projects):
            started = time.perf_counter()
            result = method(description)
            elapsed += time.perf_counter() - started
            calls += result.ranker_calls
            rank = result.ranking.index(truth) + 1 if truth in result.ranking else None
            for k in ks:
                hits[k] += rank is not None and rank <= k
            raw.append({"method": name, "query": qid, "truth": truth, "rank": rank,
                        "ranking": result.ranking[: max(ks)]})
        n = len(projects)
        stats[name] = MethodStats(hits, {k: hits[k] / n for k in ks}, 1000.0 * elapsed / n, calls, n)
    return FetchRankReport(stats, raw)


def standard_methods(
    catalog: NodeCatalog,
    embedder: Embedder,
    ranker: Ranker,
    names: Sequence[str] = ("llm", "knn", "hybrid"),
    k: int = max(TOP_KS),
    workers: int = 1,
    shuffle_seed: int | None = None,
) -> dict[str, Callable[[str], Classification]]:
    node_index = catalog.index(embedder)
    table = {
        "llm": lambda p: classify_llm_only(p, catalog, ranker, k, workers, shuffle_seed),
        "knn": lambda p: classify_knn(p, node_index, embedder, k),
        "hybrid": lambda p: classify_hybrid(p, catalog, node_index, embedder, ranker, k),
    }
    unknown = set(names) - set(table)
    if unknown:
        raise ValueError(f"unknown methods: {sorted(unknown)}")
    return {name: table[name] for name in names}
