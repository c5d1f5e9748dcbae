"""Embedding and exact top-k retrieval over categorized memory entries."""

from __future__ import annotations

import hashlib
import os
import re
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import httpx
import numpy as np

from .errors import DegenerateInput, EmbeddingError, InvalidArgument
from .memory import CATEGORIES, MemoryEntry, ProficiencyCategory, ToolMemory

# Distances closer than this are treated as ties and ordered by entry_id.
TIE_DECIMALS = 12


class Embedder(Protocol):
    name: str
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


def cosine_distance(a: Sequence[float], b: Sequence[float]) -> float:
    """``1 - cos(a, b)``, clipped to [0, 2]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise InvalidArgument(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateInput("cosine distance is undefined for a zero vector")
    sim = float(np.dot(a, b) / (na * nb))
    return min(2.0, max(0.0, 1.0 - sim))


def text_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


_TOKEN = re.compile(r"[a-z0-9]+")


class HashEmbedder:
    """Bag-of-words feature hashing, L2-normalized.

    Counts are non-negative, so no text maps to the zero vector and all
    pairwise distances fall in [0, 1]. blake2b keeps bucket assignment stable
    across processes (``hash()`` is salted per interpreter).
    """

    def __init__(self, dim: int = 256) -> None:
        if dim <= 0:
            raise InvalidArgument("embedding dimension must be positive")
        self.dim = dim
        self.name = f"hash-{dim}"

    def _bucket(self, token: str) -> int:
        h = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(h, "little") % self.dim

    def embed(self, text: str) -> np.ndarray:
        tokens = _TOKEN.findall(text.lower()) or [text]
        vec = np.zeros(self.dim, dtype=np.float64)
        for tok in tokens:
            vec[self._bucket(tok)] += 1.0
        return vec / np.linalg.norm(vec)


class RemoteEmbedder:
    """OpenAI-compatible ``/embeddings`` endpoint."""

    def __init__(
        self,
        base_url: str,
        model: str = "text-embedding-ada-002",
        api_key: str | None = None,
        dim: int | None = None,
        client: httpx.Client | None = None,
        timeout: float = 30.0,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.name = f"remote-{model}"
        self.dim = dim
        self.api_key = api_key if api_key is not None else os.environ.get("TOOLMEM_API_KEY", "")
        self._client = client or httpx.Client(timeout=timeout)

    def embed(self, text: str) -> np.ndarray:
        try:
            resp = self._client.post(
                f"{self.base_url}/embeddings",
                json={"model": self.model, "input": text},
                headers={"Authorization": f"Bearer {self.api_key}"},
            )
            resp.raise_for_status()
            values = resp.json()["data"][0]["embedding"]
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise EmbeddingError(f"remote embedding failed: {exc}") from exc
        vec = np.asarray(values, dtype=np.float64)
        if self.dim is None and vec.ndim == 1 and vec.size:
            self.dim = vec.size  # adopt the model's width on first use
        if vec.shape != (self.dim,) or not np.all(np.isfinite(vec)):
            raise EmbeddingError(f"remote embedding has shape {vec.shape}, expected ({self.dim},)")
        return vec


@dataclass(frozen=True)
class RetrievalHit:
    entry: MemoryEntry
    distance: float


def rank_by_distance(
    query: np.ndarray, keys: Sequence[str], vectors: np.ndarray, k: int
) -> list[tuple[str, float]]:
    """Exact scan; returns the ``k`` nearest ``(key, distance)`` pairs, ties by key."""
    if len(keys) == 0:
        return []
    qn = np.linalg.norm(query)
    norms = np.linalg.norm(vectors, axis=1)
    if qn == 0.0 or np.any(norms == 0.0):
        raise DegenerateInput("cosine distance is undefined for a zero vector")
    sims = (vectors @ query) / (norms * qn)
    dists = np.clip(1.0 - sims, 0.0, 2.0)
    order = sorted(range(len(keys)), key=lambda i: (round(float(dists[i]), TIE_DECIMALS), keys[i]))
    return [(keys[i], float(dists[i])) for i in order[:k]]


class MemoryIndex:
    """Per-tool, per-category vector index with an embedding cache.

    Vectors are cached by ``(entry_id, sha256(text))``; re-indexing an entry
    whose text changed recomputes its vector, unchanged entries are free.
    """

    def __init__(self, embedder: Embedder) -> None:
        self.embedder = embedder
        self._lock = threading.RLock()
        # tool_id -> category -> entry_id -> (entry, vector)
        self._buckets: dict[str, dict[ProficiencyCategory, dict[str, tuple[MemoryEntry, np.ndarray]]]] = {}
        self._cache: dict[tuple[str, str], np.ndarray] = {}
        self._queries: dict[str, np.ndarray] = {}

    def _tool(self, tool_id: str):
        return self._buckets.setdefault(tool_id, {c: {} for c in CATEGORIES})

    def _vector_for(self, entry: MemoryEntry) -> np.ndarray:
        key = (entry.entry_id, text_digest(entry.text))
        vec = self._cache.get(key)
        if vec is None:
            try:
                vec = np.asarray(self.embedder.embed(entry.text), dtype=np.float64)
            except EmbeddingError as exc:
                raise EmbeddingError(str(exc), entry_id=entry.entry_id) from exc
            except Exception as exc:
                raise EmbeddingError(f"embedder failed: {exc}", entry_id=entry.entry_id) from exc
            if vec.shape != (self.embedder.dim,) or not np.all(np.isfinite(vec)):
                raise EmbeddingError("embedder returned a malformed vector", entry_id=entry.entry_id)
            self._cache[key] = vec
        return vec

    def index_entries(self, tool_id: str, entries: Iterable[MemoryEntry]) -> None:
        entries = list(entries)
        for entry in entries:
            if entry.tool_id != tool_id:
                raise InvalidArgument(f"entry {entry.entry_id} belongs to {entry.tool_id!r}, not {tool_id!r}")
        # embed first so a failure leaves the index unchanged
        vectors = [self._vector_for(e) for e in entries]
        with self._lock:
            buckets = self._tool(tool_id)
            for entry, vec in zip(entries, vectors):
                for c in CATEGORIES:
                    buckets[c].pop(entry.entry_id, None)
                buckets[entry.category][entry.entry_id] = (entry, vec)

    def remove(self, tool_id: str, entry_ids: Iterable[str]) -> None:
        with self._lock:
            buckets = self._tool(tool_id)
            for entry_id in entry_ids:
                for c in CATEGORIES:
                    buckets[c].pop(entry_id, None)

    def sync(self, memory: ToolMemory) -> None:
        """Make the tool's buckets mirror ``memory`` exactly."""
        entries = memory.entries()
        live = {e.entry_id for e in entries}
        vectors = [self._vector_for(e) for e in entries]
        with self._lock:
            previous = {i for b in self._tool(memory.tool_id).values() for i in b}
            buckets = {c: {} for c in CATEGORIES}
            for entry, vec in zip(entries, vectors):
                buckets[entry.category][entry.entry_id] = (entry, vec)
            self._buckets[memory.tool_id] = buckets
            dropped = previous - live
            if dropped:
                self._cache = {k: v for k, v in self._cache.items() if k[0] not in dropped}

    def bucket_size(self, tool_id: str, category: ProficiencyCategory) -> int:
        with self._lock:
            return len(self._buckets.get(tool_id, {}).get(category, {}))

    def embed_query(self, query: str) -> np.ndarray:
        digest = text_digest(query)
        vec = self._queries.get(digest)
        if vec is None:
            vec = np.asarray(self.embedder.embed(query), dtype=np.float64)
            self._queries[digest] = vec
        return vec

    def retrieve_top_k(
        self, query: str, tool_id: str, category: ProficiencyCategory, k: int
    ) -> list[RetrievalHit]:
        if k < 1:
            raise InvalidArgument("k must be >= 1")
        with self._lock:
            items = list(self._buckets.get(tool_id, {}).get(category, {}).values())
        if not items:
            return []
        entries = {e.entry_id: e for e, _ in items}
        keys = [e.entry_id for e, _ in items]
        matrix = np.stack([v for _, v in items])
        ranked = rank_by_distance(self.embed_query(query), keys, matrix, k)
        return [RetrievalHit(entries[key], dist) for key, dist in ranked]

    def retrieve_all_categories(
        self, query: str, tool_id: str, k: int
    ) -> dict[ProficiencyCategory, list[RetrievalHit]]:
        return {c: self.retrieve_top_k(query, tool_id, c, k) for c in CATEGORIES}

    # -- cache persistence ---------------------------------------------------

    def save_cache(self, path: str | os.PathLike, tool_id: str) -> None:
        """Store the vectors of ``tool_id``'s indexed entries as an ``.npz`` file."""
        with self._lock:
            items = [
                (entry_id, text_digest(entry.text), vec)
                for bucket in self._tool(tool_id).values()
                for entry_id, (entry, vec) in bucket.items()
            ]
        items.sort()
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        if items:
            matrix = np.stack([i[2] for i in items]).astype(np.float64)
        else:
            matrix = np.zeros((0, self.embedder.dim or 0))
        with open(path, "wb") as fh:
            np.savez(
                fh,
                embedder=np.array(self.embedder.name),
                entry_ids=np.array([i[0] for i in items], dtype=str),
                digests=np.array([i[1] for i in items], dtype=str),
                vectors=matrix,
            )

    def load_cache(self, path: str | os.PathLike) -> int:
        """Seed the cache from ``path``; returns the number of vectors accepted.

        A cache written by a different embedder is ignored.
        """
        path = Path(path)
        if not path.exists():
            return 0
        with np.load(path, allow_pickle=False) as data:
            if str(data["embedder"]) != self.embedder.name:
                return 0
            vectors = data["vectors"]
            width = self.embedder.dim
            if vectors.ndim != 2 or (len(vectors) and width is not None and vectors.shape[1] != width):
                return 0
            for entry_id, digest, vec in zip(data["entry_ids"], data["digests"], vectors):
                self._cache[(str(entry_id), str(digest))] = np.array(vec, dtype=np.float64)
            return len(vectors)
