"""Shared vector space: embedders, cosine similarity and exact top-k search."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import httpx
import numpy as np

log = logging.getLogger(__name__)

KINDS = ("entity", "memory", "relation", "fact", "passage", "query")
DEFAULT_DIM = 256

INDEX_FORMAT = "gistgraph-vectors"
INDEX_VERSION = 1


class EmbeddingError(RuntimeError):
    pass


class IndexFormatError(ValueError):
    """A persisted vector index is corrupt, truncated or of another version."""


class Embedder(Protocol):
    dim: int

    def embed_batch(self, texts: Sequence[str], kind: str) -> np.ndarray: ...


def embed(embedder: Embedder, text: str, kind: str) -> np.ndarray:
    if not text or not text.strip():
        raise EmbeddingError("cannot embed empty text")
    if kind not in KINDS:
        raise EmbeddingError(f"unknown embedding kind {kind!r}")
    return embedder.embed_batch([text], kind)[0]


_TOKEN = re.compile(r"[^\W_]+", re.UNICODE)


def hash_features(text: str, bigrams: bool = True) -> list[str]:
    tokens = _TOKEN.findall(text.casefold())
    features = list(tokens)
    if bigrams:
        features.extend(f"{a} {b}" for a, b in zip(tokens, tokens[1:]))
    return features


def bucket(feature: str, dim: int) -> tuple[int, float]:
    """Bucket index and sign for a feature (the usual signed hashing trick)."""
    digest = hashlib.blake2b(feature.encode("utf-8"), digest_size=8).digest()
    h = int.from_bytes(digest, "little")
    return h % dim, (1.0 if (h >> 63) & 1 == 0 else -1.0)


class HashingEmbedder:
    """Feature-hashed unigram (+ bigram) counts, L2-normalized.

    Deterministic across runs and platforms; ``kind`` is ignored so every
    object lands in the same space.
    """

    def __init__(self, dim: int = DEFAULT_DIM, bigrams: bool = True):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.bigrams = bigrams

    def _one(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        for feature in hash_features(text, self.bigrams):
            i, sign = bucket(feature, self.dim)
            vec[i] += sign
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec

    def embed_batch(self, texts: Sequence[str], kind: str) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dim))
        return np.vstack([self._one(t) for t in texts])


class HTTPEmbedder:
    """Batch embedding endpoint (OpenAI-compatible ``/embeddings``).

    ``instructions`` optionally maps a kind to a prefix prepended to each text,
    as instruction-tuned embedders expect for queries.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        dim: int,
        key_env: str = "GISTGRAPH_API_KEY",
        instructions: Mapping[str, str] | None = None,
        batch_size: int = 64,
        retries: int = 2,
        timeout: float = 60.0,
        transport: httpx.BaseTransport | None = None,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.dim = dim
        self.instructions = dict(instructions or {})
        self.batch_size = batch_size
        self.retries = retries
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def _post(self, texts: list[str]) -> np.ndarray:
        last: Exception | None = None
        for _ in range(self.retries + 1):
            try:
                resp = self._client.post(
                    f"{self.endpoint}/embeddings", json={"model": self.model, "input": texts}
                )
                resp.raise_for_status()
                rows = sorted(resp.json()["data"], key=lambda r: r.get("index", 0))
                out = np.asarray([r["embedding"] for r in rows], dtype=float)
                if out.shape != (len(texts), self.dim):
                    raise ValueError(f"expected {(len(texts), self.dim)} vectors, got {out.shape}")
                return out
            except (httpx.HTTPError, KeyError, TypeError, ValueError) as exc:
                last = exc
                log.warning("embedding request failed: %s", exc)
        raise EmbeddingError(f"embedding failed after {self.retries + 1} attempts: {last}")

    def embed_batch(self, texts: Sequence[str], kind: str) -> np.ndarray:
        prefix = self.instructions.get(kind, "")
        texts = [prefix + t for t in texts]
        chunks = [
            self._post(texts[i:i + self.batch_size]) for i in range(0, len(texts), self.batch_size)
        ]
        return np.vstack(chunks) if chunks else np.zeros((0, self.dim))


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine is undefined for a zero-norm vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def rank_ids(scores: np.ndarray, ids: Sequence[str], k: int | None = None) -> list[tuple[str, float]]:
    """Sort by score descending, ties by ascending id, and keep the first ``k``."""
    if k is not None and k < 1:
        raise ValueError("k must be >= 1")
    if len(ids) == 0:
        return []
    id_rank = np.empty(len(ids), dtype=np.int64)
    id_rank[np.argsort(np.asarray(ids, dtype=object), kind="stable")] = np.arange(len(ids))
    order = np.lexsort((id_rank, -np.asarray(scores, dtype=float)))
    if k is not None:
        order = order[:k]
    return [(ids[i], float(scores[i])) for i in order]


def top_k_mapping(scores: Mapping[str, float], k: int) -> list[tuple[str, float]]:
    ids = list(scores)
    return rank_ids(np.array([scores[i] for i in ids], dtype=float), ids, k)


class VectorIndex:
    """Immutable id -> vector table with exact cosine search."""

    def __init__(self, ids: Sequence[str], vectors: np.ndarray, dim: int | None = None):
        vectors = np.array(vectors, dtype=float)
        if len(ids) == 0:
            vectors = np.zeros((0, dim or 0))
        if len(ids) != vectors.shape[0]:
            raise ValueError("ids and vectors differ in length")
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate item ids")
        if dim is not None and len(ids) and vectors.shape[1] != dim:
            raise ValueError(f"vectors have dimension {vectors.shape[1]}, expected {dim}")
        if not np.all(np.isfinite(vectors)):
            raise ValueError("non-finite embedding entries")
        self.ids = list(ids)
        self.d = dim if dim is not None else vectors.shape[1]
        self.vectors = vectors
        self.vectors.setflags(write=False)
        norms = np.linalg.norm(vectors, axis=1) if len(ids) else np.zeros(0)
        with np.errstate(divide="ignore", invalid="ignore"):
            self._unit = np.where(norms[:, None] > 0, vectors / norms[:, None], 0.0)
        self._pos = {item: i for i, item in enumerate(self.ids)}

    @classmethod
    def build(cls, embedder: Embedder, items: Mapping[str, str], kind: str) -> "VectorIndex":
        ids = list(items)
        vectors = embedder.embed_batch([items[i] for i in ids], kind)
        return cls(ids, vectors, embedder.dim)

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, item_id: str) -> bool:
        return item_id in self._pos

    def __getitem__(self, item_id: str) -> np.ndarray:
        return self.vectors[self._pos[item_id]]

    def similarities(self, query: np.ndarray, subset: Iterable[str] | None = None) -> dict[str, float]:
        """Cosine of ``query`` against every item (or just ``subset``)."""
        if len(self) == 0:
            return {}
        q = np.asarray(query, dtype=float)
        norm = np.linalg.norm(q)
        if norm == 0:
            raise ValueError("query vector has zero norm")
        scores = np.clip(self._unit @ (q / norm), -1.0, 1.0)
        if subset is None:
            return dict(zip(self.ids, scores.tolist()))
        return {i: float(scores[self._pos[i]]) for i in subset}

    def top_k(self, query: np.ndarray, k: int) -> list[tuple[str, float]]:
        if k < 1:
            raise ValueError("k must be >= 1")
        if len(self) == 0:
            return []
        q = np.asarray(query, dtype=float)
        norm = np.linalg.norm(q)
        if norm == 0:
            raise ValueError("query vector has zero norm")
        scores = np.clip(self._unit @ (q / norm), -1.0, 1.0)
        return rank_ids(scores, self.ids, k)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, VectorIndex)
            and self.d == other.d
            and self.ids == other.ids
            and np.array_equal(self.vectors, other.vectors)
        )


def top_k(index: VectorIndex, query: np.ndarray, k: int) -> list[tuple[str, float]]:
    return index.top_k(query, k)


def save_index(index: VectorIndex, path: str | Path) -> None:
    """Write the index as JSON lines: one header, then ``{"id", "v"}`` per item.

    Floats are written with Python's shortest round-trip repr, so a reload is
    bit-exact.
    """
    with open(path, "w", encoding="utf-8") as fh:
        header = {"format": INDEX_FORMAT, "version": INDEX_VERSION, "d": index.d, "count": len(index)}
        fh.write(json.dumps(header) + "\n")
        for item_id, row in zip(index.ids, index.vectors):
            fh.write(json.dumps({"id": item_id, "v": row.tolist()}, ensure_ascii=False) + "\n")


def load_index(path: str | Path) -> VectorIndex:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise IndexFormatError(f"{path}: cannot read vector index ({exc})") from exc
    if not lines:
        raise IndexFormatError(f"{path}: empty vector index file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise IndexFormatError(f"{path}: unreadable header") from exc
    if not isinstance(header, dict) or header.get("format") != INDEX_FORMAT:
        raise IndexFormatError(f"{path}: not a {INDEX_FORMAT} file")
    if header.get("version") != INDEX_VERSION:
        raise IndexFormatError(
            f"{path}: index version {header.get('version')} unsupported (expected {INDEX_VERSION})"
        )
    d, count = header["d"], header["count"]
    body = [line for line in lines[1:] if line.strip()]
    if len(body) != count:
        raise IndexFormatError(f"{path}: expected {count} vectors, found {len(body)} (truncated?)")
    ids, rows = [], []
    for n, line in enumerate(body, start=2):
        try:
            rec = json.loads(line)
            ids.append(rec["id"])
            rows.append(rec["v"])
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise IndexFormatError(f"{path}:{n}: corrupt vector record") from exc
        if len(rows[-1]) != d:
            raise IndexFormatError(f"{path}:{n}: vector has {len(rows[-1])} entries, expected {d}")
    vectors = np.asarray(rows, dtype=float).reshape(count, d)
    try:
        return VectorIndex(ids, vectors, d)
    except ValueError as exc:
        raise IndexFormatError(f"{path}: {exc}") from exc
