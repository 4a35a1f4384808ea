"""Contrastive fine-tuning of the adapters against the link graph.

Each training example pairs a query artifact with one linked positive and
``k`` same-type negatives. The loss is InfoNCE over raw dot-product scores
with no temperature; gradients are derived analytically for both adapter
matrices and applied with plain mini-batch gradient descent.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from pact.artifacts import Corpus, LinkEdge, LinkGraph, two_hop_pairs
from pact.embedder import AdapterPair, BaseEncoder
from pact.errors import NonFiniteScore, NotEnoughNegatives, TrainingDiverged


def parse_ratio(ratio: str) -> tuple[int, int]:
    try:
        train, test = (int(p) for p in ratio.split(":"))
    except ValueError:
        raise ValueError(f"split ratio must look like '5:1', got {ratio!r}") from None
    if train < 1 or test < 1:
        raise ValueError(f"split ratio parts must be positive, got {ratio!r}")
    return train, test


@dataclass(frozen=True)
class TrainConfig:
    negatives_per_positive: int = 4
    epochs: int = 20
    learning_rate: float = 0.1
    batch_size: int = 32
    seed: int = 7
    include_two_hop: bool = True
    in_batch_negatives: bool = True
    train_test_split_ratio: str = "5:1"
    two_hop_weight: float = 1.0
    freeze_context: bool = False
    tied: bool = False

    def __post_init__(self) -> None:
        if self.negatives_per_positive < 1:
            raise ValueError("negatives_per_positive must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        parse_ratio(self.train_test_split_ratio)


@dataclass(frozen=True)
class TrainingExample:
    query: str
    positive: str
    negatives: tuple[str, ...]
    weight: float = 1.0
    two_hop: bool = False


def split_edges(
    graph: LinkGraph, ratio: str = "5:1", seed: int = 7
) -> tuple[LinkGraph, list[LinkEdge]]:
    """Seeded train/test partition of the direct edges.

    The test share is ``round(n * test / (train + test))``; both parts keep the
    original edge order.
    """
    train_part, test_part = parse_ratio(ratio)
    edges = graph.edges
    n_test = round(len(edges) * test_part / (train_part + test_part))
    perm = np.random.default_rng(seed).permutation(len(edges))
    test_idx = set(perm[:n_test].tolist())
    train = LinkGraph(e for i, e in enumerate(edges) if i not in test_idx)
    test = [e for i, e in enumerate(edges) if i in test_idx]
    return train, test


def _related(graph: LinkGraph, include_two_hop: bool) -> dict[str, set[str]]:
    related: dict[str, set[str]] = {}
    for edge in graph:
        related.setdefault(edge.src, set()).add(edge.dst)
        related.setdefault(edge.dst, set()).add(edge.src)
    if include_two_hop:
        for a, c in two_hop_pairs(graph):
            related.setdefault(a, set()).add(c)
            related.setdefault(c, set()).add(a)
    return related


def build_examples(
    corpus: Corpus, graph: LinkGraph, cfg: TrainConfig, seed: int | None = None
) -> list[TrainingExample]:
    """One example per direct edge, plus one per two-hop pair when enabled.

    Negatives are drawn uniformly without replacement from artifacts of the
    positive's type that are neither the query nor related to it (directly
    or through a two-hop chain).
    """
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    related = _related(graph, cfg.include_two_hop)
    by_type: dict[str, list[str]] = {}
    for artifact in corpus.artifacts:
        by_type.setdefault(artifact.type, []).append(artifact.id)

    pairs = [(e.src, e.dst, False) for e in graph]
    if cfg.include_two_hop:
        pairs += [(a, c, True) for a, c in two_hop_pairs(graph)]

    k = cfg.negatives_per_positive
    examples = []
    for query, positive, hop in pairs:
        blocked = related.get(query, set()) | {query, positive}
        pool = [i for i in by_type[corpus[positive].type] if i not in blocked]
        if len(pool) < k:
            raise NotEnoughNegatives(
                f"{query} -> {positive}: {len(pool)} same-type negatives available, need {k}"
            )
        picks = rng.choice(len(pool), size=k, replace=False)
        examples.append(
            TrainingExample(
                query,
                positive,
                tuple(pool[i] for i in picks),
                cfg.two_hop_weight if hop else 1.0,
                hop,
            )
        )
    return examples


def info_nce_loss(positive: float, negatives: Sequence[float]) -> float:
    """``-log(exp(s+) / (exp(s+) + sum_j exp(s-_j)))`` via a max-shifted log-sum-exp."""
    if len(negatives) < 1:
        raise ValueError("need at least one negative score")
    scores = [float(positive), *map(float, negatives)]
    if not all(math.isfinite(s) for s in scores):
        raise NonFiniteScore(f"non-finite score in {scores}")
    top = max(scores)
    lse = top + math.log(sum(math.exp(s - top) for s in scores))
    return max(lse - scores[0], 0.0)


def _softmax_grad(scores: np.ndarray) -> tuple[float, np.ndarray]:
    """Loss and d(loss)/d(scores) for a score vector whose entry 0 is the positive."""
    top = scores.max()
    shifted = np.exp(scores - top)
    total = shifted.sum()
    probs = shifted / total
    grad = probs.copy()
    grad[0] -= 1.0
    return float(top + np.log(total) - scores[0]), grad


def loss_gradient(
    query_vec: np.ndarray,
    positive_vec: np.ndarray,
    negative_vecs: np.ndarray,
    adapters: AdapterPair,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss and gradients w.r.t. the query and context matrices for one example.

    Inputs are base-encoder vectors. With ``q = Q x`` and ``c_j = C y_j`` the
    score is ``s_j = q . c_j`` and, writing ``g_j = p_j - [j is positive]``
    and ``w = sum_j g_j y_j``::

        dL/dQ = C w x^T        dL/dC = (Q x) w^T
    """
    x = np.asarray(query_vec, dtype=np.float64)
    ys = np.vstack([positive_vec, np.atleast_2d(negative_vecs)])
    q = adapters.query @ x
    scores = (ys @ adapters.context.T) @ q
    if not np.isfinite(scores).all():
        raise NonFiniteScore("non-finite score")
    loss, g = _softmax_grad(scores)
    w = g @ ys
    return loss, np.outer(adapters.context @ w, x), np.outer(q, w)


def example_gradient(
    example: TrainingExample,
    corpus: Corpus,
    enc: BaseEncoder,
    adapters: AdapterPair,
) -> tuple[np.ndarray, np.ndarray]:
    vec = lambda i: enc.encode(corpus.text(i), i)  # noqa: E731
    _, d_query, d_context = loss_gradient(
        vec(example.query),
        vec(example.positive),
        np.vstack([vec(n) for n in example.negatives]),
        adapters,
    )
    return d_query, d_context


@dataclass
class TrainReport:
    examples: int
    config: dict
    initial_loss: float
    epochs: list[dict] = field(default_factory=list)

    @property
    def losses(self) -> list[float]:
        return [e["mean_loss"] for e in self.epochs]

    def to_json(self) -> str:
        payload = {
            "epochs": self.epochs,
            "examples": self.examples,
            "initial_loss": self.initial_loss,
            "config": self.config,
        }
        return json.dumps(payload, indent=2, sort_keys=True)


class _Batcher:
    """Precomputed base vectors and per-example candidate rows."""

    def __init__(self, corpus: Corpus, enc: BaseEncoder, examples, related, in_batch: bool):
        self.row = {a.id: i for i, a in enumerate(corpus.artifacts)}
        self.base = np.vstack([enc.encode(corpus.text(a.id), a.id) for a in corpus.artifacts])
        self.types = {a.id: a.type for a in corpus.artifacts}
        self.examples = examples
        self.related = related
        self.in_batch = in_batch

    def candidates(self, batch: Sequence[int]) -> list[list[int]]:
        rows = []
        for i in batch:
            ex = self.examples[i]
            ids = [ex.positive, *ex.negatives]
            if self.in_batch:
                taken = set(ids) | self.related.get(ex.query, set()) | {ex.query}
                want = self.types[ex.positive]
                for j in batch:
                    other = self.examples[j].positive
                    if j != i and other not in taken and self.types[other] == want:
                        taken.add(other)
                        ids.append(other)
            rows.append([self.row[c] for c in ids])
        return rows

    def step(self, batch: Sequence[int], query_m: np.ndarray, context_m: np.ndarray):
        """Weighted mean loss and its gradients over one batch."""
        base = self.base
        q_rows = [self.row[self.examples[i].query] for i in batch]
        x = base[q_rows]
        qs = x @ query_m.T
        cands = self.candidates(batch)
        weights = np.array([self.examples[i].weight for i in batch])
        weights = weights / weights.sum()
        w = np.empty_like(x)
        total = 0.0
        for n, rows in enumerate(cands):
            ys = base[rows]
            scores = (ys @ context_m.T) @ qs[n]
            loss, g = _softmax_grad(scores)
            total += weights[n] * loss
            w[n] = g @ ys
        w *= weights[:, None]
        # Both updates have rank <= batch size; multiply in that order.
        d_query = (context_m @ w.T) @ x
        d_context = (query_m @ x.T) @ w
        return total, d_query, d_context


def train(
    corpus: Corpus,
    graph: LinkGraph,
    cfg: TrainConfig,
    enc: BaseEncoder,
    examples: list[TrainingExample] | None = None,
) -> tuple[AdapterPair, TrainReport]:
    """Mini-batch gradient descent from identity adapters.

    ``graph`` is the training link graph; pass the train part of
    :func:`split_edges` to keep held-out edges out of training. The epoch
    order is drawn once from the config seed, so runs are reproducible.

    Raises:
        TrainingDiverged: an epoch's mean loss is not finite.
    """
    if examples is None:
        examples = build_examples(corpus, graph, cfg)
    related = _related(graph, cfg.include_two_hop)
    batcher = _Batcher(corpus, enc, examples, related, cfg.in_batch_negatives)
    dim = batcher.base.shape[1]
    query_m = np.eye(dim)
    context_m = np.eye(dim)
    rng = np.random.default_rng(cfg.seed)

    def initial_loss() -> float:
        # Same batching regime as training so it compares with epoch means.
        loss_sum, weight_sum = 0.0, 0.0
        for start in range(0, len(examples), cfg.batch_size):
            batch = list(range(start, min(start + cfg.batch_size, len(examples))))
            loss, _, _ = batcher.step(batch, query_m, context_m)
            bw = sum(examples[i].weight for i in batch)
            loss_sum += loss * bw
            weight_sum += bw
        return loss_sum / weight_sum if weight_sum else 0.0

    report = TrainReport(len(examples), asdict(cfg), initial_loss())
    if not examples:
        return AdapterPair(query_m, context_m), report

    # One seeded order for every epoch: in-batch negative sets stay fixed, so
    # epoch losses are comparable.
    order = rng.permutation(len(examples))
    for epoch in range(1, cfg.epochs + 1):
        loss_sum, weight_sum = 0.0, 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size].tolist()
            with np.errstate(over="ignore", invalid="ignore"):  # divergence is reported below
                loss, d_query, d_context = batcher.step(batch, query_m, context_m)
            if cfg.tied:
                d_query = d_context = d_query + d_context
            bw = sum(examples[i].weight for i in batch)
            loss_sum += loss * bw
            weight_sum += bw
            query_m = query_m - cfg.learning_rate * d_query
            if cfg.tied:
                context_m = query_m
            elif not cfg.freeze_context:
                context_m = context_m - cfg.learning_rate * d_context
        mean_loss = loss_sum / weight_sum
        if not math.isfinite(mean_loss):
            raise TrainingDiverged(f"mean loss is {mean_loss} at epoch {epoch}")
        report.epochs.append({"epoch": epoch, "mean_loss": mean_loss})
    return AdapterPair(query_m, context_m), report
