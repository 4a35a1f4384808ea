"""Exact and product-quantized top-k similarity index with binary persistence.

PQ uses inner-product asymmetric distance computation: the raw query is
split into ``m`` sub-vectors, a ``m x ksub`` table of sub-query/centroid dot
products is built once, and each entry's score is the sum of its ``m`` table
lookups. That sum equals the dot product of the query with the entry's
decoded vector.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import BinaryIO, Collection, Sequence

import numpy as np

from pact.artifacts import Corpus
from pact.embedder import AdapterPair, Embedder
from pact.errors import (
    AdapterMismatchWarning,
    BadSubspaceCount,
    DimMismatch,
    EmptyIndex,
    IncompatibleIndex,
    PactError,
    TooFewVectors,
)

INDEX_MAGIC = b"PACTIDX1"
INDEX_VERSION = 1
_HEADER = struct.Struct("<IIQBBIIQQ")  # version, D, n, mode, has_exact, m, ksub, seed, checksum

MODE_EXACT = 0
MODE_PQ = 1


@dataclass(frozen=True, eq=False)
class PqCodebook:
    centroids: np.ndarray  # (m, ksub, dsub)
    codes: np.ndarray  # (n, m) uint8

    @property
    def m(self) -> int:
        return self.centroids.shape[0]

    @property
    def ksub(self) -> int:
        return self.centroids.shape[1]

    @property
    def dsub(self) -> int:
        return self.centroids.shape[2]

    def decode(self, rows: np.ndarray | slice = slice(None)) -> np.ndarray:
        codes = self.codes[rows]
        parts = [self.centroids[j][codes[:, j]] for j in range(self.m)]
        return np.hstack(parts)

    def lookup_table(self, query: np.ndarray) -> np.ndarray:
        """``table[j, c]`` = dot product of query sub-vector j with centroid c."""
        sub = query.reshape(self.m, self.dsub)
        return np.einsum("jkd,jd->jk", self.centroids, sub)

    def adc_scores(self, query: np.ndarray, rows: np.ndarray | slice = slice(None)) -> np.ndarray:
        table = self.lookup_table(query)
        codes = self.codes[rows]
        scores = np.zeros(codes.shape[0])
        for j in range(self.m):  # sequential accumulation pins summation order
            scores += table[j][codes[:, j]]
        return scores

    def mean_squared_error(self, vectors: np.ndarray) -> float:
        return float(np.mean(np.sum((vectors - self.decode()) ** 2, axis=1)))


@dataclass(frozen=True, eq=False)
class VectorIndex:
    ids: tuple[str, ...]
    types: tuple[str, ...]
    texts: tuple[str, ...]
    vectors: np.ndarray | None  # (n, D); None when exact vectors were dropped
    dim: int
    encoder_seed: int = 0
    adapter_checksum: int = 0
    codebook: PqCodebook | None = None

    def __post_init__(self) -> None:
        n = len(self.ids)
        if len(set(self.ids)) != n:
            raise ValueError("index ids must be unique")
        if len(self.types) != n or len(self.texts) != n:
            raise ValueError("ids, types and texts must align")
        if self.vectors is None and self.codebook is None:
            raise ValueError("index needs exact vectors or a codebook")
        if self.vectors is not None:
            if self.vectors.shape != (n, self.dim):
                raise DimMismatch(f"vectors {self.vectors.shape} do not match (n={n}, D={self.dim})")
            self.vectors.flags.writeable = False
        order = sorted(range(n), key=self.ids.__getitem__)
        rank = np.empty(n, dtype=np.int64)
        rank[order] = np.arange(n)
        object.__setattr__(self, "_id_rank", rank)
        object.__setattr__(self, "_row", {i: r for r, i in enumerate(self.ids)})
        object.__setattr__(self, "_type_rows", {})

    @property
    def mode(self) -> str:
        return "pq" if self.codebook is not None else "exact"

    def __len__(self) -> int:
        return len(self.ids)

    def row(self, artifact_id: str) -> int:
        return self._row[artifact_id]

    def exact_vectors(self) -> np.ndarray:
        if self.vectors is not None:
            return self.vectors
        return self.codebook.decode()

    def rows_of_types(self, types: Collection[str]) -> np.ndarray:
        key = frozenset(types)
        cache = self._type_rows
        if key not in cache:
            cache[key] = np.array([r for r, t in enumerate(self.types) if t in key], dtype=np.int64)
        return cache[key]

    def with_codebook(self, codebook: PqCodebook | None, drop_exact: bool = False) -> "VectorIndex":
        return replace(self, codebook=codebook, vectors=None if drop_exact else self.vectors)


def from_vectors(
    ids: Sequence[str],
    vectors: np.ndarray,
    types: Sequence[str] | None = None,
    texts: Sequence[str] | None = None,
    encoder_seed: int = 0,
    adapter_checksum: int = 0,
) -> VectorIndex:
    vectors = np.array(vectors, dtype=np.float64)
    n = len(ids)
    return VectorIndex(
        tuple(ids),
        tuple(types) if types is not None else ("item",) * n,
        tuple(texts) if texts is not None else ("",) * n,
        vectors,
        vectors.shape[1],
        encoder_seed,
        adapter_checksum,
    )


def build_exact(corpus: Corpus, embedder: Embedder) -> VectorIndex:
    """Context embeddings for every artifact, in corpus order."""
    if not len(corpus):
        raise EmptyIndex("cannot index an empty corpus")
    rows = []
    for artifact in corpus.artifacts:
        try:
            rows.append(embedder.context_text(corpus.text(artifact.id), artifact.id))
        except PactError as exc:
            raise type(exc)(f"{artifact.id}: {exc}") from exc
    return VectorIndex(
        tuple(a.id for a in corpus.artifacts),
        tuple(a.type for a in corpus.artifacts),
        tuple(corpus.text(a.id) for a in corpus.artifacts),
        np.vstack(rows),
        embedder.dim,
        getattr(embedder.encoder, "seed", 0),
        embedder.adapters.checksum(),
    )


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = (points**2).sum(1)[:, None] - 2.0 * points @ centers.T + (centers**2).sum(1)[None, :]
    return np.maximum(d, 0.0)


def kmeans(points: np.ndarray, k: int, iters: int, rng: np.random.Generator) -> np.ndarray:
    """Lloyd's algorithm from a k-means++ start.

    An empty cluster is re-seeded with the point currently farthest from its
    assigned centroid.
    """
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    closest = _sq_dists(points, centers[:1])[:, 0]
    for c in range(1, k):
        total = closest.sum()
        if total > 0:
            pick = rng.choice(n, p=closest / total)
        else:
            pick = rng.integers(n)
        centers[c] = points[pick]
        closest = np.minimum(closest, _sq_dists(points, centers[c : c + 1])[:, 0])

    for _ in range(iters):
        dists = _sq_dists(points, centers)
        assign = dists.argmin(1)
        counts = np.bincount(assign, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, assign, points)
        occupied = counts > 0
        new = centers.copy()
        new[occupied] = sums[occupied] / counts[occupied, None]
        if not occupied.all():
            far = dists[np.arange(n), assign].copy()
            for c in np.flatnonzero(~occupied):
                p = int(far.argmax())
                if far[p] <= 0:
                    break
                new[c] = points[p]
                far[p] = 0.0
        if np.array_equal(new, centers):
            break
        centers = new
    return centers


def train_pq(
    index: VectorIndex, m: int = 8, ksub: int = 256, iters: int = 20, seed: int = 0
) -> PqCodebook:
    """Per-subspace k-means codebooks and byte codes for every entry.

    Raises:
        BadSubspaceCount: ``m`` does not divide the dimension.
        TooFewVectors: fewer entries than centroids per subspace.
    """
    if m < 1 or index.dim % m:
        raise BadSubspaceCount(f"m={m} does not divide D={index.dim}")
    if not 1 <= ksub <= 256:
        raise ValueError("ksub must be in [1, 256] for byte codes")
    vectors = index.exact_vectors()
    n = vectors.shape[0]
    if n < ksub:
        raise TooFewVectors(f"{n} vectors cannot fill {ksub} centroids")
    dsub = index.dim // m
    streams = np.random.SeedSequence(seed).spawn(m)
    centroids = np.empty((m, ksub, dsub))
    codes = np.empty((n, m), dtype=np.uint8)
    for j in range(m):
        sub = vectors[:, j * dsub : (j + 1) * dsub]
        centroids[j] = kmeans(sub, ksub, iters, np.random.default_rng(streams[j]))
        codes[:, j] = _sq_dists(sub, centroids[j]).argmin(1)
    return PqCodebook(centroids, codes)


def _top(index: VectorIndex, rows: np.ndarray, scores: np.ndarray, k: int) -> np.ndarray:
    """Positions of the k best scores, ties broken by ascending id."""
    order = np.lexsort((index._id_rank[rows], -scores))
    return order[:k]


def search_top_k(
    index: VectorIndex,
    query: np.ndarray,
    k: int,
    types: Collection[str] | None = None,
    rerank: bool = True,
) -> list[tuple[str, float]]:
    """Top-k entries by dot product with ``query``.

    In PQ mode the scores come from the lookup tables; with ``rerank`` the best
    ``4k`` PQ candidates are re-scored against the exact vectors.

    A type filter that matches nothing gives an empty list.

    Raises:
        EmptyIndex: the index has no entries.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not len(index):
        raise EmptyIndex("index is empty")
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (index.dim,):
        raise DimMismatch(f"query shape {query.shape} != ({index.dim},)")
    rows = index.rows_of_types(types) if types is not None else np.arange(len(index))
    if rows.size == 0:
        return []

    if index.codebook is None:
        scores = index.vectors[rows] @ query
    else:
        scores = index.codebook.adc_scores(query, rows)
        if rerank:
            if index.vectors is None:
                raise ValueError("rerank needs exact vectors; index was built with drop_exact")
            keep = _top(index, rows, scores, 4 * k)
            rows = rows[keep]
            scores = index.vectors[rows] @ query
    best = _top(index, rows, scores, k)
    return [(index.ids[rows[i]], float(scores[i])) for i in best]


def _write_str(fh: BinaryIO, text: str) -> None:
    data = text.encode("utf-8")
    fh.write(struct.pack("<I", len(data)))
    fh.write(data)


def _read_exact(fh: BinaryIO, size: int) -> bytes:
    data = fh.read(size)
    if len(data) != size:
        raise IncompatibleIndex("truncated index file")
    return data


def _read_str(fh: BinaryIO) -> str:
    (size,) = struct.unpack("<I", _read_exact(fh, 4))
    return _read_exact(fh, size).decode("utf-8")


def save_index(index: VectorIndex, path: str | Path) -> None:
    cb = index.codebook
    with open(path, "wb") as fh:
        fh.write(INDEX_MAGIC)
        fh.write(
            _HEADER.pack(
                INDEX_VERSION,
                index.dim,
                len(index),
                MODE_PQ if cb is not None else MODE_EXACT,
                index.vectors is not None,
                cb.m if cb is not None else 0,
                cb.ksub if cb is not None else 0,
                index.encoder_seed,
                index.adapter_checksum,
            )
        )
        for ident, kind, text in zip(index.ids, index.types, index.texts):
            _write_str(fh, ident)
            _write_str(fh, kind)
            _write_str(fh, text)
        if index.vectors is not None:
            fh.write(index.vectors.astype("<f8").tobytes())
        if cb is not None:
            fh.write(cb.centroids.astype("<f8").tobytes())
            fh.write(cb.codes.astype(np.uint8).tobytes())


def load_index(path: str | Path, adapters: AdapterPair | None = None) -> VectorIndex:
    """Read an index file.

    When ``adapters`` are given and their checksum differs from the one in the
    header, an :class:`AdapterMismatchWarning` is issued.

    Raises:
        IncompatibleIndex: wrong magic, unsupported version, or truncation.
    """
    with open(path, "rb") as fh:
        if fh.read(8) != INDEX_MAGIC:
            raise IncompatibleIndex(f"{path} is not an index file (bad magic)")
        fields = _HEADER.unpack(_read_exact(fh, _HEADER.size))
        version, dim, n, mode, has_exact, m, ksub, seed, checksum = fields
        if version != INDEX_VERSION:
            raise IncompatibleIndex(f"unsupported index version {version}")
        ids, types, texts = [], [], []
        for _ in range(n):
            ids.append(_read_str(fh))
            types.append(_read_str(fh))
            texts.append(_read_str(fh))
        vectors = None
        if has_exact:
            raw = _read_exact(fh, n * dim * 8)
            vectors = np.frombuffer(raw, dtype="<f8").reshape(n, dim).astype(np.float64)
        codebook = None
        if mode == MODE_PQ:
            dsub = dim // m
            raw = _read_exact(fh, m * ksub * dsub * 8)
            centroids = np.frombuffer(raw, dtype="<f8").reshape(m, ksub, dsub).astype(np.float64)
            codes = np.frombuffer(_read_exact(fh, n * m), dtype=np.uint8).reshape(n, m).copy()
            codebook = PqCodebook(centroids, codes)
        elif mode != MODE_EXACT:
            raise IncompatibleIndex(f"unknown index mode {mode}")
        if fh.read(1):
            raise IncompatibleIndex("trailing bytes after index payload")
    index = VectorIndex(tuple(ids), tuple(types), tuple(texts), vectors, dim, seed, checksum, codebook)
    if adapters is not None and adapters.checksum() != checksum:
        warnings.warn(
            f"index {path} was built with different adapters (checksum {checksum:#x})",
            AdapterMismatchWarning,
            stacklevel=2,
        )
    return index
