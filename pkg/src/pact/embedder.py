"""Base text encoders and the query/context linear adapters on top of them."""

from __future__ import annotations

import hashlib
import re
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Mapping, Protocol

import numpy as np

from pact.artifacts import Artifact, Template, compose_text
from pact.errors import DimMismatch, EmptyText, IncompatibleIndex, MissingVector

ADAPTER_MAGIC = b"PACTADPT"
ADAPTER_VERSION = 1

_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")


def tokenize(text: str) -> list[str]:
    """Lowercased alphanumeric runs."""
    return [t for t in _TOKEN_SPLIT.split(text.lower()) if t]


def features(text: str) -> list[str]:
    """Word unigrams plus boundary-padded character trigrams of every word."""
    feats = []
    for word in tokenize(text):
        feats.append("w:" + word)
        padded = f"^{word}$"
        feats.extend("c:" + padded[i : i + 3] for i in range(len(padded) - 2))
    return feats


class BaseEncoder(Protocol):
    dim: int

    def encode(self, text: str, key: str | None = None) -> np.ndarray: ...


@dataclass(frozen=True)
class FeatureHashEncoder:
    """Signed feature hashing into ``dim`` buckets, L2-normalized.

    Each feature is hashed with keyed BLAKE2b; the low bits pick the bucket
    and the top bit picks the sign, so output is stable across platforms.
    """

    dim: int = 256
    seed: int = 0

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ValueError("dim must be positive")

    def encode(self, text: str, key: str | None = None) -> np.ndarray:
        feats = features(text)
        if not feats:
            raise EmptyText("cannot encode empty text")
        vec = np.zeros(self.dim)
        for feat in feats:
            bucket, sign = _bucket(feat, self.seed, self.dim)
            vec[bucket] += sign
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            raise EmptyText(f"features of {text[:40]!r} cancel out")
        return vec / norm


@lru_cache(maxsize=1 << 18)
def _bucket(feature: str, seed: int, dim: int) -> tuple[int, float]:
    digest = hashlib.blake2b(
        feature.encode("utf-8"), digest_size=8, key=seed.to_bytes(8, "little")
    ).digest()
    h = int.from_bytes(digest, "little")
    return (h & 0x7FFFFFFFFFFFFFFF) % dim, (1.0 if h >> 63 == 0 else -1.0)


class PrecomputedEncoder:
    """Vectors supplied from outside, looked up by artifact id or query text."""

    def __init__(self, table: Mapping[str, np.ndarray], seed: int = 0):
        if not table:
            raise ValueError("empty vector table")
        self.table = {k: np.asarray(v, dtype=np.float64) for k, v in table.items()}
        dims = {v.shape for v in self.table.values()}
        if len(dims) != 1 or len(next(iter(dims))) != 1:
            raise DimMismatch("precomputed vectors must share one 1-D shape")
        self.dim = next(iter(dims))[0]
        self.seed = seed

    @classmethod
    def from_npz(cls, path: str | Path) -> "PrecomputedEncoder":
        with np.load(path, allow_pickle=False) as data:
            ids = [str(i) for i in data["ids"]]
            return cls(dict(zip(ids, data["vectors"])))

    def encode(self, text: str, key: str | None = None) -> np.ndarray:
        lookup = key if key is not None else text
        if not lookup:
            raise EmptyText("cannot encode empty text")
        try:
            return self.table[lookup].copy()
        except KeyError:
            raise MissingVector(f"no precomputed vector for {lookup!r}") from None


def encode_base(text: str, enc: BaseEncoder, key: str | None = None) -> np.ndarray:
    return enc.encode(text, key)


@dataclass(frozen=True, eq=False)
class AdapterPair:
    """Query and context D x D maps applied after the base encoder."""

    query: np.ndarray
    context: np.ndarray

    def __post_init__(self) -> None:
        q = np.array(self.query, dtype=np.float64)
        c = np.array(self.context, dtype=np.float64)
        if q.ndim != 2 or q.shape[0] != q.shape[1] or q.shape != c.shape:
            raise DimMismatch(f"adapters must be square and equal: {q.shape} vs {c.shape}")
        if not (np.isfinite(q).all() and np.isfinite(c).all()):
            raise ValueError("adapter matrices must be finite")
        q.flags.writeable = False
        c.flags.writeable = False
        object.__setattr__(self, "query", q)
        object.__setattr__(self, "context", c)

    @classmethod
    def identity(cls, dim: int) -> "AdapterPair":
        return cls(np.eye(dim), np.eye(dim))

    @property
    def dim(self) -> int:
        return self.query.shape[0]

    def to_bytes(self) -> bytes:
        header = ADAPTER_MAGIC + struct.pack("<II", ADAPTER_VERSION, self.dim)
        return header + self.query.astype("<f8").tobytes() + self.context.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "AdapterPair":
        if blob[:8] != ADAPTER_MAGIC:
            raise IncompatibleIndex("not an adapter file (bad magic)")
        version, dim = struct.unpack_from("<II", blob, 8)
        if version != ADAPTER_VERSION:
            raise IncompatibleIndex(f"unsupported adapter file version {version}")
        size = dim * dim * 8
        if len(blob) != 16 + 2 * size:
            raise IncompatibleIndex("truncated adapter file")
        q = np.frombuffer(blob, dtype="<f8", count=dim * dim, offset=16).reshape(dim, dim)
        c = np.frombuffer(blob, dtype="<f8", count=dim * dim, offset=16 + size).reshape(dim, dim)
        return cls(q, c)

    def checksum(self) -> int:
        """First 8 bytes of the SHA-256 of the serialized matrices."""
        return int.from_bytes(hashlib.sha256(self.to_bytes()).digest()[:8], "little")

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "AdapterPair":
        return cls.from_bytes(Path(path).read_bytes())


def _check_dim(vec: np.ndarray, adapters: AdapterPair) -> None:
    if vec.shape[0] != adapters.dim:
        raise DimMismatch(f"encoder dim {vec.shape[0]} != adapter dim {adapters.dim}")


def encode_context(
    artifact: Artifact,
    enc: BaseEncoder,
    adapters: AdapterPair,
    template: Template | None = None,
) -> np.ndarray:
    text = compose_text(artifact, template) if template is not None else artifact.composed_text
    base = enc.encode(text, artifact.id)
    _check_dim(base, adapters)
    return adapters.context @ base


def encode_query(query: str, enc: BaseEncoder, adapters: AdapterPair) -> np.ndarray:
    base = enc.encode(query)
    _check_dim(base, adapters)
    return adapters.query @ base


def similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Raw dot product."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimMismatch(f"{a.shape} vs {b.shape}")
    return float(a @ b)


@dataclass(frozen=True, eq=False)
class Embedder:
    """Bundles an encoder with adapters; ``cosine`` re-normalizes outputs."""

    encoder: BaseEncoder
    adapters: AdapterPair
    cosine: bool = False

    @property
    def dim(self) -> int:
        return self.adapters.dim

    def _finish(self, vec: np.ndarray) -> np.ndarray:
        if self.cosine:
            norm = np.linalg.norm(vec)
            return vec / norm if norm > 0 else vec
        return vec

    def query(self, text: str) -> np.ndarray:
        return self._finish(encode_query(text, self.encoder, self.adapters))

    def context(self, artifact: Artifact, template: Template | None = None) -> np.ndarray:
        return self._finish(encode_context(artifact, self.encoder, self.adapters, template))

    def context_text(self, text: str, key: str | None = None) -> np.ndarray:
        base = self.encoder.encode(text, key)
        _check_dim(base, self.adapters)
        return self._finish(self.adapters.context @ base)
