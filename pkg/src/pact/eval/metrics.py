"""Retrieval and keyword-match metrics."""

from __future__ import annotations

import json
import math
from fractions import Fraction
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from pact.errors import BenchShapeMismatch


def rank_of(ranking: Sequence[str], truth: str) -> int | None:
    """1-based position of ``truth`` in ``ranking``, or None."""
    try:
        return list(ranking).index(truth) + 1
    except ValueError:
        return None


def recall_at_k(rankings: Sequence[Sequence[str]], truths: Sequence[str], k: int) -> float:
    """Fraction of queries whose single target is in the first ``k`` results."""
    if len(rankings) != len(truths):
        raise ValueError("rankings and truths differ in length")
    if not truths:
        raise ValueError("no queries")
    hits = sum(truth in list(ranking)[:k] for ranking, truth in zip(rankings, truths))
    return hits / len(truths)


def ndcg_single(rank: int | None, k: int = 10) -> float:
    """NDCG@k with one relevant item of gain 1: ``1 / log2(rank + 1)`` inside the cutoff."""
    if rank is None or rank > k:
        return 0.0
    return 1.0 / math.log2(rank + 1)


def mean_ndcg(rankings: Sequence[Sequence[str]], truths: Sequence[str], k: int = 10) -> float:
    return sum(ndcg_single(rank_of(r, t), k) for r, t in zip(rankings, truths)) / len(truths)


def avg_relevant_at(rankings: Sequence[Sequence[str]], truths: Sequence[str], k: int = 5) -> float:
    """Mean count of relevant items in the top ``k``; each query has one."""
    return sum(t in list(r)[:k] for r, t in zip(rankings, truths)) / len(truths)


@dataclass(frozen=True)
class BenchItem:
    question: str
    keywords: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.keywords:
            raise ValueError(f"benchmark item without keywords: {self.question!r}")
        object.__setattr__(self, "keywords", tuple(k.lower() for k in self.keywords))


class KeywordBenchmark:
    def __init__(self, items: Sequence[BenchItem]):
        self.items = list(items)

    def __len__(self) -> int:
        return len(self.items)

    @classmethod
    def load(cls, path: str | Path) -> "KeywordBenchmark":
        items = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    items.append(BenchItem(rec["question"], tuple(rec["keywords"])))
        return cls(items)

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for item in self.items:
                fh.write(json.dumps({"question": item.question, "keywords": list(item.keywords)}) + "\n")


def keyword_hits(keywords: Sequence[str], answer: str) -> int:
    """Keywords found in ``answer`` by case-insensitive substring match."""
    text = answer.lower()
    return sum(k.lower() in text for k in keywords)


def match_rates(bench: KeywordBenchmark, answers: Sequence[str]) -> tuple[float, float]:
    """(average, global) keyword match rates.

    Average is the mean of per-question matched fractions; global is total
    matched keywords over total keywords.

    Raises:
        BenchShapeMismatch: answer count differs from question count.
    """
    if len(answers) != len(bench.items):
        raise BenchShapeMismatch(f"{len(answers)} answers for {len(bench.items)} questions")
    if not bench.items:
        raise BenchShapeMismatch("empty benchmark")
    matched = [keyword_hits(item.keywords, a) for item, a in zip(bench.items, answers)]
    totals = [len(item.keywords) for item in bench.items]
    # exact rationals so equal keyword counts give bit-identical rates
    average = sum((Fraction(m, t) for m, t in zip(matched, totals)), Fraction(0)) / len(totals)
    return float(average), float(Fraction(sum(matched), sum(totals)))
