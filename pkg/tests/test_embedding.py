import hashlib
import json
import math

import httpx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gistgraph.embedding import (
    EmbeddingError,
    HashingEmbedder,
    HTTPEmbedder,
    IndexFormatError,
    VectorIndex,
    cosine,
    embed,
    load_index,
    save_index,
    top_k,
)


def oracle_vector(features, dim):
    """Signed feature hashing written out longhand."""
    x = np.zeros(dim)
    for f in features:
        h = int.from_bytes(hashlib.blake2b(f.encode("utf-8"), digest_size=8).digest(), "little")
        x[h % dim] += -1.0 if (h >> 63) & 1 else 1.0
    return x / np.linalg.norm(x)


def test_embedding_is_deterministic():
    e = HashingEmbedder()
    assert np.array_equal(embed(e, "some text", "passage"), embed(HashingEmbedder(), "some text", "passage"))
    assert cosine(embed(e, "alpha beta", "fact"), embed(e, "alpha beta", "query")) == pytest.approx(1.0, abs=1e-12)


def test_word_order_matters_only_through_bigrams():
    e = HashingEmbedder()
    got = cosine(embed(e, "alpha beta", "fact"), embed(e, "beta alpha", "fact"))
    want = float(oracle_vector(["alpha", "beta", "alpha beta"], 256)
                 @ oracle_vector(["beta", "alpha", "beta alpha"], 256))
    assert got == pytest.approx(want, abs=1e-12)
    # no collisions among the four features at d=256: two shared of three
    assert got == pytest.approx(2 / 3, abs=1e-12)
    uni = HashingEmbedder(bigrams=False)
    assert cosine(embed(uni, "alpha beta", "fact"), embed(uni, "beta alpha", "fact")) == pytest.approx(1.0)


def test_embedder_matches_oracle_on_sentences():
    e = HashingEmbedder(dim=64)
    text = "The Cat sat, on the mat"
    toks = ["the", "cat", "sat", "on", "the", "mat"]
    feats = toks + [f"{a} {b}" for a, b in zip(toks, toks[1:])]
    assert np.allclose(embed(e, text, "memory"), oracle_vector(feats, 64), atol=1e-12)


@given(st.text(min_size=1, max_size=100).filter(lambda s: any(c.isalnum() for c in s)))
def test_mock_vectors_have_unit_norm(text):
    v = HashingEmbedder().embed_batch([text], "entity")[0]
    assert abs(np.linalg.norm(v) - 1.0) < 1e-9 or not np.any(v)


def test_embed_rejects_empty_and_unknown_kind():
    e = HashingEmbedder()
    with pytest.raises(EmbeddingError):
        embed(e, "  ", "fact")
    with pytest.raises(EmbeddingError):
        embed(e, "x", "banana")


def test_cosine_cases():
    assert cosine(np.array([1.0, 0]), np.array([0, 1.0])) == 0.0
    assert cosine(np.array([1.0, 0]), np.array([1.0, 0])) == 1.0
    assert cosine(np.array([1.0, 1]), np.array([1.0, 0])) == pytest.approx(1 / math.sqrt(2), abs=1e-4)
    with pytest.raises(ValueError):
        cosine(np.zeros(2), np.array([1.0, 0]))
    with pytest.raises(ValueError):
        cosine(np.ones(2), np.ones(3))


@given(st.lists(st.floats(-10, 10), min_size=3, max_size=3), st.lists(st.floats(-10, 10), min_size=3, max_size=3))
def test_cosine_symmetric_and_bounded(a, b):
    a, b = np.array(a), np.array(b)
    if np.linalg.norm(a) < 1e-6 or np.linalg.norm(b) < 1e-6:
        return
    assert cosine(a, b) == cosine(b, a)
    assert -1.0 <= cosine(a, b) <= 1.0
    assert cosine(a, a) == pytest.approx(1.0, abs=1e-9)


def scored_index(scores):
    """Index whose cosine against e0 equals the given scores exactly-ish."""
    ids, rows = [], []
    for item, s in scores.items():
        ids.append(item)
        rows.append([s, math.sqrt(max(0.0, 1 - s * s)), 0.0])
    return VectorIndex(ids, np.array(rows))


def test_top_k_examples():
    idx = scored_index({"a": 0.5, "b": 0.9, "c": 0.1})
    q = np.array([1.0, 0, 0])
    assert [i for i, _ in top_k(idx, q, 2)] == ["b", "a"]
    assert [i for i, _ in top_k(idx, q, 10)] == ["b", "a", "c"]
    tie = VectorIndex(["z", "y"], np.array([[1.0, 0], [1.0, 0]]))
    assert [i for i, _ in tie.top_k(np.array([1.0, 0]), 2)] == ["y", "z"]
    assert VectorIndex([], np.zeros((0, 3)), 3).top_k(q, 3) == []
    with pytest.raises(ValueError):
        idx.top_k(q, 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 2000), st.integers(1, 50), st.integers(0, 2**32 - 1))
def test_top_k_equals_full_sort(n, k, seed):
    rng = np.random.default_rng(seed)
    # coarse values force many ties
    vecs = rng.integers(-2, 3, size=(n, 4)).astype(float)
    vecs[np.all(vecs == 0, axis=1)] = 1.0
    ids = [f"i{j:05d}" for j in rng.permutation(n)]
    idx = VectorIndex(ids, vecs)
    q = rng.normal(size=4)
    unit = vecs / np.linalg.norm(vecs, axis=1, keepdims=True)
    scores = np.clip(unit @ (q / np.linalg.norm(q)), -1, 1)
    oracle = sorted(zip(ids, scores), key=lambda p: (-p[1], p[0]))[:k]
    got = idx.top_k(q, k)
    assert [i for i, _ in got] == [i for i, _ in oracle]
    assert [s for _, s in got] == pytest.approx([s for _, s in oracle])
    # positive scaling of the query keeps the ordering
    assert [i for i, _ in idx.top_k(q * 37.5, k)] == [i for i, _ in got]


def test_large_index_oracle():
    rng = np.random.default_rng(7)
    vecs = rng.normal(size=(10_000, 16))
    ids = [f"x{j}" for j in range(10_000)]
    idx = VectorIndex(ids, vecs)
    q = rng.normal(size=16)
    scores = (vecs / np.linalg.norm(vecs, axis=1, keepdims=True)) @ (q / np.linalg.norm(q))
    want = [ids[j] for j in np.argsort(-scores, kind="stable")[:100]]
    assert [i for i, _ in idx.top_k(q, 100)] == want


def test_index_validation():
    with pytest.raises(ValueError, match="duplicate"):
        VectorIndex(["a", "a"], np.ones((2, 2)))
    with pytest.raises(ValueError, match="length"):
        VectorIndex(["a"], np.ones((2, 2)))
    with pytest.raises(ValueError, match="non-finite"):
        VectorIndex(["a"], np.array([[np.nan, 1.0]]))
    idx = VectorIndex(["a"], np.ones((1, 2)))
    with pytest.raises(ValueError):
        idx.vectors[0, 0] = 3.0


def test_persistence_round_trip_and_corruption(tmp_path):
    e = HashingEmbedder(dim=32)
    idx = VectorIndex.build(e, {"p1": "first text", "p2": "second text", "p3": "ünï"}, "passage")
    path = tmp_path / "v.jsonl"
    save_index(idx, path)
    again = load_index(path)
    assert again == idx
    assert np.array_equal(again.vectors, idx.vectors)

    lines = path.read_text(encoding="utf-8").splitlines()
    (tmp_path / "trunc.jsonl").write_text("\n".join(lines[:-1]) + "\n", encoding="utf-8")
    with pytest.raises(IndexFormatError, match="truncated"):
        load_index(tmp_path / "trunc.jsonl")
    (tmp_path / "ver.jsonl").write_text(lines[0].replace('"version": 1', '"version": 9') + "\n", encoding="utf-8")
    with pytest.raises(IndexFormatError, match="version"):
        load_index(tmp_path / "ver.jsonl")
    (tmp_path / "junk.jsonl").write_text(lines[0] + "\n{bad\n{bad\n{bad\n", encoding="utf-8")
    with pytest.raises(IndexFormatError, match="corrupt"):
        load_index(tmp_path / "junk.jsonl")
    with pytest.raises(IndexFormatError):
        load_index(tmp_path / "missing.jsonl")


def test_http_embedder_batches_and_prefixes():
    sent = []

    def handler(request):
        payload = json.loads(request.content)
        sent.append(payload["input"])
        data = [{"index": i, "embedding": [float(len(t)), 1.0]} for i, t in enumerate(payload["input"])]
        return httpx.Response(200, json={"data": data[::-1]})

    e = HTTPEmbedder("http://emb.test", "m", 2, instructions={"query": "Q: "}, batch_size=2,
                     transport=httpx.MockTransport(handler))
    out = e.embed_batch(["a", "bb", "ccc"], "passage")
    assert out[:, 0].tolist() == [1.0, 2.0, 3.0]
    assert sent == [["a", "bb"], ["ccc"]]
    e.embed_batch(["x"], "query")
    assert sent[-1] == ["Q: x"]


def test_http_embedder_dimension_mismatch_fails():
    def handler(request):
        return httpx.Response(200, json={"data": [{"index": 0, "embedding": [1.0, 2.0, 3.0]}]})

    e = HTTPEmbedder("http://emb.test", "m", 2, retries=1, transport=httpx.MockTransport(handler))
    with pytest.raises(EmbeddingError, match="2 attempts"):
        e.embed_batch(["x"], "fact")
