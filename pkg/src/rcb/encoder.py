"""Embedding providers for example and query texts.

Every provider returns unit-norm float64 vectors of its declared dimension,
so cosine similarity downstream reduces to a dot product.  The synthetic
provider derives a seeded pseudo-random unit vector from each text, which
lets the whole pipeline run deterministically with zero network access.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from ._http import HttpJsonClient
from .errors import ClientError, DataError, DimensionMismatch, ProviderUnavailable

NORM_TOLERANCE = 1e-9


def l2_normalize(vectors: np.ndarray) -> np.ndarray:
    """Scale each row to unit L2 norm."""
    vectors = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(vectors, axis=-1, keepdims=True)
    if np.any(norms < 1e-300):
        raise DataError("cannot normalize a zero vector")
    return vectors / norms


class SyntheticHashProvider:
    """Deterministic pseudo-random unit vectors keyed by (text, seed)."""

    kind = "synthetic_hash"

    def __init__(self, dimension: int, seed: int = 0):
        self.dimension = int(dimension)
        self.seed = int(seed)

    def encode(self, texts: list[str]) -> np.ndarray:
        if not texts:
            raise DataError("encode requires at least one text")
        rows = np.empty((len(texts), self.dimension))
        for i, text in enumerate(texts):
            digest = hashlib.blake2b(
                f"{self.seed}:{text}".encode("utf-8"), digest_size=8
            ).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "big"))
            rows[i] = rng.standard_normal(self.dimension)
        return l2_normalize(rows)


class PrecomputedProvider:
    """Looks up stored vectors by text and renormalizes them."""

    kind = "precomputed"

    def __init__(self, vectors: dict[str, np.ndarray], dimension: int):
        self.dimension = int(dimension)
        self._vectors = {}
        for text, vec in vectors.items():
            vec = np.asarray(vec, dtype=np.float64)
            if vec.shape != (self.dimension,):
                raise DimensionMismatch(
                    f"stored vector for {text!r} has shape {vec.shape}, expected ({self.dimension},)"
                )
            self._vectors[text] = vec

    @classmethod
    def from_file(cls, path: str, dimension: int | None = None) -> "PrecomputedProvider":
        """Build from a line-delimited file of ``{"text": ..., "embedding": [...]}`` records."""
        vectors: dict[str, np.ndarray] = {}
        with open(path, "r", encoding="utf-8") as handle:
            for lineno, line in enumerate(handle, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                    text, vec = record["text"], record["embedding"]
                except (json.JSONDecodeError, KeyError) as exc:
                    raise DataError(f"{path}:{lineno}: bad embedding record: {exc}") from None
                vec = np.asarray(vec, dtype=np.float64)
                if dimension is None:
                    dimension = int(vec.shape[0])
                vectors[str(text)] = vec
        if dimension is None:
            raise DataError(f"{path}: no embedding records found")
        return cls(vectors, dimension)

    def encode(self, texts: list[str]) -> np.ndarray:
        if not texts:
            raise DataError("encode requires at least one text")
        rows = []
        for text in texts:
            if text not in self._vectors:
                raise DataError(f"no precomputed embedding for text {text!r}")
            rows.append(self._vectors[text])
        return l2_normalize(np.vstack(rows))


class HttpProvider:
    """Remote embedding endpoint: POST ``{base_url}/embed`` with a text batch."""

    kind = "http"

    def __init__(self, base_url: str, dimension: int, max_retries: int = 3,
                 max_concurrency: int = 4, backoff: float = 0.25, session=None):
        self.dimension = int(dimension)
        self._client = HttpJsonClient(
            base_url, max_retries=max_retries, backoff=backoff,
            max_concurrency=max_concurrency, session=session,
        )

    def encode(self, texts: list[str]) -> np.ndarray:
        if not texts:
            raise DataError("encode requires at least one text")
        try:
            body = self._client.post_json("/embed", {"texts": list(texts)})
        except ClientError as exc:
            raise ProviderUnavailable(str(exc)) from exc
        embeddings = body.get("embeddings")
        if embeddings is None or len(embeddings) != len(texts):
            raise ProviderUnavailable(
                f"embed endpoint returned {0 if embeddings is None else len(embeddings)} "
                f"vectors for {len(texts)} texts"
            )
        matrix = np.asarray(embeddings, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[1] != self.dimension:
            raise DimensionMismatch(
                f"embed endpoint returned shape {matrix.shape}, expected (*, {self.dimension})"
            )
        return l2_normalize(matrix)


def encode(provider, texts: list[str]) -> np.ndarray:
    """One unit vector per input text, shape ``(len(texts), provider.dimension)``."""
    return provider.encode(list(texts))
