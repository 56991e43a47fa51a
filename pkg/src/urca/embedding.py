"""Text embedding backends: a remote HTTP service and a deterministic hashed bag of words."""

from __future__ import annotations

import hashlib
import math
import re
import threading
from dataclasses import dataclass

import numpy as np
import requests

from urca._http import TransportError, post_json

EMBEDDER_KINDS = ("remote", "deterministic_hash")

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


class EmbeddingDimMismatch(Exception):
    """The server returned vectors of a different dimension than configured. Not retryable."""


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]

    @property
    def dim(self) -> int:
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


@dataclass(frozen=True)
class EmbedderConfig:
    kind: str
    dim: int
    endpoint_url: str | None = None
    model_name: str = ""
    timeout: float = 30.0
    max_batch: int = 64
    seed: int = 0
    max_in_flight: int = 4

    def __post_init__(self) -> None:
        if self.kind not in EMBEDDER_KINDS:
            raise ValueError(f"kind must be one of {EMBEDDER_KINDS}, got {self.kind!r}")
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if self.max_batch < 1:
            raise ValueError(f"max_batch must be >= 1, got {self.max_batch}")
        if self.max_in_flight < 1:
            raise ValueError(f"max_in_flight must be >= 1, got {self.max_in_flight}")
        if self.kind == "remote" and not self.endpoint_url:
            raise ValueError("remote embedder requires endpoint_url")


def normalize(vector: EmbeddingVector) -> EmbeddingVector:
    """Scale to unit L2 norm. The zero vector has no direction and is an error."""
    arr = vector.as_array()
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        raise ValueError("cannot normalize the zero vector")
    return EmbeddingVector(values=tuple((arr / norm).tolist()))


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine similarity; zero vectors compare as 0."""
    x, y = a.as_array(), b.as_array()
    denom = float(np.linalg.norm(x) * np.linalg.norm(y))
    if denom == 0.0:
        return 0.0
    return float(np.dot(x, y) / denom)


def hash_embed(text: str, dim: int, seed: int) -> EmbeddingVector:
    """Deterministic hashed bag-of-words embedding.

    Lowercase, split on non-alphanumerics, hash each token (with the seed)
    into one of dim buckets with a +/-1 sign taken from a separate hash bit,
    accumulate, then L2-normalize. A text with no tokens maps to the first
    unit basis vector so the result is always unit norm.
    """
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    acc = np.zeros(dim, dtype=np.float64)
    for token in _TOKEN_RE.findall(text.lower()):
        digest = hashlib.sha256(f"{seed}:{token}".encode("utf-8")).digest()
        bucket = int.from_bytes(digest[:8], "big") % dim
        acc[bucket] += 1.0 if digest[8] & 1 else -1.0
    norm = math.sqrt(float(np.dot(acc, acc)))
    if norm == 0.0:
        acc[0] = 1.0
        norm = 1.0
    return EmbeddingVector(values=tuple((acc / norm).tolist()))


class DeterministicHashEmbedder:
    """In-process embedder; same text and config always give the same vector."""

    def __init__(self, config: EmbedderConfig):
        self.config = config

    def embed_texts(self, texts: list[str]) -> list[EmbeddingVector]:
        return [hash_embed(text, self.config.dim, self.config.seed) for text in texts]


class RemoteEmbedder:
    """Client for a hosted embeddings endpoint.

    Requests are split into batches of at most max_batch texts; an in-flight
    semaphore caps concurrent HTTP calls when embed_texts is called from
    several threads at once.
    """

    def __init__(self, config: EmbedderConfig):
        self.config = config
        self._session = requests.Session()
        self._gate = threading.Semaphore(config.max_in_flight)

    def _embed_batch(self, batch: list[str]) -> list[EmbeddingVector]:
        payload = {"model": self.config.model_name, "input": batch}
        with self._gate:
            body = post_json(
                self.config.endpoint_url, payload, timeout=self.config.timeout, session=self._session
            )
        try:
            rows = sorted(body["data"], key=lambda item: item["index"])
            vectors = [[float(x) for x in row["embedding"]] for row in rows]
        except (KeyError, TypeError) as exc:
            raise TransportError(f"malformed embeddings response: {exc}") from exc
        if len(vectors) != len(batch):
            raise TransportError(f"expected {len(batch)} embeddings, got {len(vectors)}")
        for vec in vectors:
            if len(vec) != self.config.dim:
                raise EmbeddingDimMismatch(
                    f"server returned dim {len(vec)}, config says {self.config.dim}"
                )
        return [EmbeddingVector(values=tuple(vec)) for vec in vectors]

    def embed_texts(self, texts: list[str]) -> list[EmbeddingVector]:
        out: list[EmbeddingVector] = []
        for start in range(0, len(texts), self.config.max_batch):
            out.extend(self._embed_batch(texts[start:start + self.config.max_batch]))
        return out


def make_embedder(config: EmbedderConfig):
    if config.kind == "deterministic_hash":
        return DeterministicHashEmbedder(config)
    return RemoteEmbedder(config)


def embed_texts(texts: list[str], config: EmbedderConfig) -> list[EmbeddingVector]:
    """Embed a list of texts with the configured backend, preserving order."""
    return make_embedder(config).embed_texts(texts)
