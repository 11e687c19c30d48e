"""Text embedding providers.

Two backends: a seedless character-trigram hashing embedder for offline runs and
tests, and a lookup table of vectors read from disk.
"""

from __future__ import annotations

import hashlib
import json
from functools import lru_cache
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import numpy as np


class EmbeddingError(RuntimeError):
    pass


class EmbeddingProvider(Protocol):
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


@lru_cache(maxsize=1 << 16)
def _bucket(gram: str, dim: int) -> tuple[int, float]:
    h = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
    n = int.from_bytes(h, "little")
    return n % dim, (1.0 if (n >> 63) & 1 else -1.0)


class HashNgramEmbedder:
    """Signed feature hashing of lowercased character n-grams, L2-normalized.

    Empty or whitespace-only text maps to the zero vector.
    """

    def __init__(self, dim: int = 512, n: int = 3):
        if dim < 1 or n < 1:
            raise ValueError("dim and n must be positive")
        self.dim = dim
        self.n = n

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        norm_text = " ".join(text.lower().split())
        if not norm_text:
            return vec
        padded = f" {norm_text} "
        for i in range(max(1, len(padded) - self.n + 1)):
            idx, sign = _bucket(padded[i : i + self.n], self.dim)
            vec[idx] += sign
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec

    def __repr__(self) -> str:
        return f"HashNgramEmbedder(dim={self.dim}, n={self.n})"


class PrecomputedEmbeddings:
    """Vectors keyed by exact text, as shipped alongside parser output."""

    def __init__(self, table: Mapping[str, Sequence[float]]):
        dims = {len(v) for v in table.values()}
        if len(dims) > 1:
            raise EmbeddingError(f"mixed embedding dimensions {sorted(dims)}")
        self.dim = dims.pop() if dims else 0
        self._table = {k: np.asarray(v, dtype=float) for k, v in table.items()}

    @classmethod
    def load(cls, path: str | Path) -> "PrecomputedEmbeddings":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise EmbeddingError(f"{path}: expected an object mapping text to vector")
        return cls(data)

    def embed(self, text: str) -> np.ndarray:
        try:
            return self._table[text]
        except KeyError:
            raise EmbeddingError(f"no precomputed embedding for {text[:60]!r}") from None


def make_provider(kind: str = "hash-ngram", dim: int = 512, table_path: str | None = None) -> EmbeddingProvider:
    if kind == "hash-ngram":
        return HashNgramEmbedder(dim=dim)
    if kind == "precomputed":
        if table_path is None:
            return PrecomputedEmbeddings({})
        return PrecomputedEmbeddings.load(table_path)
    raise ValueError(f"unknown embedding provider {kind!r}")


def element_vector(element, provider: EmbeddingProvider | None) -> np.ndarray | None:
    """The element's stored embedding, else the provider's vector for its text."""
    if element.embedding is not None:
        return np.asarray(element.embedding, dtype=float)
    if provider is None or not element.text.strip():
        return None
    try:
        return provider.embed(element.text)
    except EmbeddingError:
        return None
