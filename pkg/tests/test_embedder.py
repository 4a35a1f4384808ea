from __future__ import annotations

import hashlib
import struct

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pact.artifacts import Artifact
from pact.embedder import (
    AdapterPair,
    Embedder,
    FeatureHashEncoder,
    PrecomputedEncoder,
    encode_base,
    encode_context,
    encode_query,
    similarity,
)
from pact.errors import DimMismatch, EmptyText, IncompatibleIndex, MissingVector

TEMPLATE = {"oncall_team": ["name", "charter"]}
TEAM = Artifact("oncall_team:pay", "oncall_team", (("name", "payments-oncall"), ("charter", "owns payment flows")))


def oracle_feature_hash(text: str, dim: int, seed: int) -> np.ndarray:
    """Independent re-derivation: tokens, word and trigram features, keyed BLAKE2b sign hashing."""
    vec = [0.0] * dim
    word = ""
    words = []
    for ch in text.lower() + " ":
        if ch.isascii() and ch.isalnum():
            word += ch
        elif word:
            words.append(word)
            word = ""
    for w in words:
        padded = "^" + w + "$"
        feats = ["w:" + w] + ["c:" + padded[i:i + 3] for i in range(len(padded) - 2)]
        for f in feats:
            h = int.from_bytes(hashlib.blake2b(f.encode(), digest_size=8, key=struct.pack("<Q", seed)).digest(), "little")
            vec[(h % 2**63) % dim] += -1.0 if h >= 2**63 else 1.0
    norm = sum(v * v for v in vec) ** 0.5
    return np.array([v / norm for v in vec])


@pytest.mark.parametrize("text", ["", "   ", "!!! ---"])
def test_empty_text(text):
    with pytest.raises(EmptyText):
        encode_base(text, FeatureHashEncoder(64))


def test_encoding_is_deterministic():
    enc = FeatureHashEncoder(64, 3)
    a = encode_base("payments oncall", enc)
    b = encode_base("payments oncall", FeatureHashEncoder(64, 3))
    assert a.tobytes() == b.tobytes()


def test_encoding_is_unit_norm():
    assert abs(np.linalg.norm(encode_base("payments oncall", FeatureHashEncoder(64))) - 1.0) < 1e-9


@pytest.mark.parametrize("text, dim, seed", [("payments oncall", 64, 0), ("src/pay/API_v2.py", 256, 9), ("a", 8, 1)])
def test_feature_hash_matches_oracle(text, dim, seed):
    np.testing.assert_allclose(FeatureHashEncoder(dim, seed).encode(text), oracle_feature_hash(text, dim, seed),
                               atol=1e-12)


def test_encoder_seed_changes_buckets():
    assert not np.allclose(FeatureHashEncoder(256, 0).encode("wallet"), FeatureHashEncoder(256, 1).encode("wallet"))


def test_no_collisions_on_distinct_vocabulary():
    rng = np.random.default_rng(0)
    letters = np.array(list("abcdefghijklmnopqrstuvwxyz"))
    vocab = set()
    while len(vocab) < 1000:
        vocab.add("".join(rng.choice(letters, size=int(rng.integers(3, 10)))))
    enc = FeatureHashEncoder(256)
    keys = {enc.encode(w).tobytes() for w in vocab}
    assert len(keys) == 1000


def test_identity_adapters_are_the_base_encoder():
    enc = FeatureHashEncoder(32)
    ident = AdapterPair.identity(32)
    text = "payments-oncall | owns payment flows"
    np.testing.assert_array_equal(encode_context(TEAM, enc, ident, TEMPLATE), enc.encode(text))
    np.testing.assert_array_equal(encode_query(text, enc, ident), enc.encode(text))


def test_zero_context_matrix_gives_zero_vectors():
    enc = FeatureHashEncoder(16)
    adapters = AdapterPair(np.eye(16), np.zeros((16, 16)))
    vec = encode_context(TEAM, enc, adapters, TEMPLATE)
    assert not vec.any()
    assert similarity(vec, encode_query("anything", enc, adapters)) == 0.0


def test_adapter_matches_naive_matmul():
    rng = np.random.default_rng(5)
    enc = FeatureHashEncoder(4, 2)
    q, c = rng.normal(size=(4, 4)), rng.normal(size=(4, 4))
    adapters = AdapterPair(q, c)
    base = [float(v) for v in enc.encode("payments-oncall | owns payment flows")]
    naive = [sum(c[i][j] * base[j] for j in range(4)) for i in range(4)]
    np.testing.assert_allclose(encode_context(TEAM, enc, adapters, TEMPLATE), naive, atol=1e-12)
    naive_q = [sum(q[i][j] * base[j] for j in range(4)) for i in range(4)]
    np.testing.assert_allclose(encode_query("payments-oncall | owns payment flows", enc, adapters), naive_q, atol=1e-12)


matrices = arrays(np.float64, (8, 8), elements=st.floats(-3, 3, allow_nan=False))


@given(matrices, matrices, st.text(alphabet="abcde fgh", min_size=1).filter(lambda t: t.strip()))
@settings(max_examples=60, deadline=None)
def test_adapters_are_linear(m1, m2, text):
    enc = FeatureHashEncoder(8, 4)
    try:
        enc.encode(text)
    except EmptyText:  # all features cancelled in 8 buckets
        assume(False)
    art = Artifact("x:1", "t", (("name", text),))
    template = {"t": ["name"]}
    eye = np.eye(8)
    total = encode_context(art, enc, AdapterPair(eye, m1 + m2), template)
    parts = encode_context(art, enc, AdapterPair(eye, m1), template) + encode_context(art, enc, AdapterPair(eye, m2), template)
    np.testing.assert_allclose(total, parts, atol=1e-9)


def test_similarity_examples():
    assert similarity(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0
    assert similarity(np.array([1.0, 2.0]), np.array([3.0, 4.0])) == 11


def test_similarity_symmetry_and_self():
    rng = np.random.default_rng(1)
    for _ in range(100):
        a, b = rng.normal(size=6), rng.normal(size=6)
        assert similarity(a, b) == similarity(b, a)
        assert similarity(a, a) >= 0
        assert similarity(a, a) == pytest.approx(float(np.sum(a * a)), rel=1e-12)


def test_similarity_dim_mismatch():
    with pytest.raises(DimMismatch):
        similarity(np.ones(3), np.ones(4))


def test_encoder_adapter_dim_mismatch():
    with pytest.raises(DimMismatch):
        encode_query("x", FeatureHashEncoder(8), AdapterPair.identity(16))


def test_precomputed_encoder(tmp_path):
    table = {"doc:1": np.array([1.0, 0.0]), "doc:2": np.array([0.0, 2.0])}
    enc = PrecomputedEncoder(table)
    np.testing.assert_array_equal(enc.encode("ignored text", "doc:2"), [0.0, 2.0])
    with pytest.raises(MissingVector):
        enc.encode("text", "doc:3")
    np.savez(tmp_path / "v.npz", ids=np.array(list(table)), vectors=np.vstack(list(table.values())))
    again = PrecomputedEncoder.from_npz(tmp_path / "v.npz")
    np.testing.assert_array_equal(again.encode("", "doc:1"), [1.0, 0.0])


def test_adapter_file_layout(tmp_path):
    rng = np.random.default_rng(2)
    pair = AdapterPair(rng.normal(size=(3, 3)), rng.normal(size=(3, 3)))
    pair.save(tmp_path / "a.bin")
    blob = (tmp_path / "a.bin").read_bytes()
    assert blob[:8] == b"PACTADPT"
    assert struct.unpack("<II", blob[8:16]) == (1, 3)
    assert len(blob) == 16 + 2 * 9 * 8
    np.testing.assert_array_equal(np.frombuffer(blob[16:88], "<f8").reshape(3, 3), pair.query)
    back = AdapterPair.load(tmp_path / "a.bin")
    np.testing.assert_array_equal(back.context, pair.context)
    assert back.checksum() == pair.checksum()
    assert pair.checksum() != AdapterPair.identity(3).checksum()


@pytest.mark.parametrize("mutate", [lambda b: b"XXXXXXXX" + b[8:], lambda b: b[:-8],
                                    lambda b: b[:8] + struct.pack("<II", 2, 3) + b[16:]])
def test_adapter_file_rejects_corruption(mutate):
    blob = AdapterPair.identity(3).to_bytes()
    with pytest.raises(IncompatibleIndex):
        AdapterPair.from_bytes(mutate(blob))


def test_embedder_cosine_normalizes():
    enc = FeatureHashEncoder(16)
    pair = AdapterPair(2 * np.eye(16), 3 * np.eye(16))
    assert np.linalg.norm(Embedder(enc, pair).query("abc")) == pytest.approx(2.0)
    assert np.linalg.norm(Embedder(enc, pair, cosine=True).query("abc")) == pytest.approx(1.0)
    assert np.linalg.norm(Embedder(enc, pair).context(TEAM, TEMPLATE)) == pytest.approx(3.0)
