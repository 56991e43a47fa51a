"""Exact cosine retrieval over a study's chunks, uniform per source or global."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from urca.corpus import Chunk
from urca.embedding import EmbeddingVector


@dataclass(frozen=True)
class RetrievalConfig:
    """Retrieval budget: k chunks overall, stretched by beta per extra source, capped at n_max."""

    k: int = 10
    beta: float = 2.0
    n_max: int = 40

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.n_max < self.k:
            raise ValueError(f"n_max must be >= k, got n_max={self.n_max} k={self.k}")


@dataclass(frozen=True)
class ScoredChunk:
    chunk: Chunk
    score: float


def allocate_per_source(k: int, beta: float, n_max: int, s_count: int) -> int:
    """Per-source retrieval depth k_s = ceil(min(k + beta*ln(S), n_max) / S).

    The log term grows the total budget slowly with the source count S so
    that splitting it S ways still leaves each source a useful share; n_max
    caps the total. The result is always at least 1.
    """
    if s_count < 1:
        raise ValueError(f"s_count must be >= 1, got {s_count}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    if n_max < k:
        raise ValueError(f"n_max must be >= k, got n_max={n_max} k={k}")
    budget = min(k + beta * math.log(s_count), float(n_max))
    return math.ceil(budget / s_count)


class VectorIndex:
    """Chunks plus their unit vectors, grouped by source paper.

    source_ids preserves first-appearance order from the chunk list, which
    fixes the concatenation order of uniform retrieval.
    """

    def __init__(self, chunks: list[Chunk], vectors: list[EmbeddingVector]):
        if not chunks:
            raise ValueError("cannot build an index over zero chunks")
        if len(chunks) != len(vectors):
            raise ValueError(f"got {len(chunks)} chunks but {len(vectors)} vectors")
        dims = {v.dim for v in vectors}
        if len(dims) != 1:
            raise ValueError(f"inconsistent vector dims: {sorted(dims)}")
        ids = [c.id for c in chunks]
        if len(set(ids)) != len(ids):
            raise ValueError("chunk ids must be unique within an index")

        matrix = np.stack([v.as_array() for v in vectors])
        norms = np.linalg.norm(matrix, axis=1)
        if np.any(norms == 0.0):
            raise ValueError("zero vectors cannot be indexed")
        self.chunks = list(chunks)
        self.matrix = matrix / norms[:, None]
        self.source_ids: list[str] = []
        self.rows_by_source: dict[str, list[int]] = {}
        self._row_by_chunk_id: dict[str, int] = {}
        for row, chunk in enumerate(chunks):
            if chunk.paper_id not in self.rows_by_source:
                self.source_ids.append(chunk.paper_id)
                self.rows_by_source[chunk.paper_id] = []
            self.rows_by_source[chunk.paper_id].append(row)
            self._row_by_chunk_id[chunk.id] = row

    def __len__(self) -> int:
        return len(self.chunks)

    def vector_for(self, chunk_id: str) -> EmbeddingVector:
        row = self._row_by_chunk_id[chunk_id]
        return EmbeddingVector(values=tuple(self.matrix[row].tolist()))


def build_index(chunks: list[Chunk], vectors: list[EmbeddingVector]) -> VectorIndex:
    return VectorIndex(chunks, vectors)


def _query_direction(index: VectorIndex, query: EmbeddingVector) -> np.ndarray:
    q = query.as_array()
    if q.shape[0] != index.matrix.shape[1]:
        raise ValueError(f"query dim {q.shape[0]} does not match index dim {index.matrix.shape[1]}")
    norm = float(np.linalg.norm(q))
    if norm == 0.0:
        raise ValueError("query vector must be non-zero")
    return q / norm


def _ranked(index: VectorIndex, rows: list[int], scores: np.ndarray) -> list[ScoredChunk]:
    # Ties break by descending score then (paper_id, chunk id) so ranking is
    # a total order independent of input permutation.
    ordered = sorted(
        rows, key=lambda r: (-scores[r], index.chunks[r].paper_id, index.chunks[r].id)
    )
    return [ScoredChunk(chunk=index.chunks[r], score=float(scores[r])) for r in ordered]


def retrieve_global(index: VectorIndex, query: EmbeddingVector, config: RetrievalConfig) -> list[ScoredChunk]:
    """Top-k chunks by cosine similarity regardless of source."""
    q = _query_direction(index, query)
    scores = index.matrix @ q
    ranked = _ranked(index, list(range(len(index))), scores)
    return ranked[: config.k]


def retrieve_uniform(index: VectorIndex, query: EmbeddingVector, config: RetrievalConfig) -> list[ScoredChunk]:
    """Top-k_s chunks from every source, concatenated in source order.

    k_s comes from allocate_per_source; a source with fewer than k_s chunks
    contributes everything it has.
    """
    q = _query_direction(index, query)
    scores = index.matrix @ q
    k_s = allocate_per_source(config.k, config.beta, config.n_max, len(index.source_ids))
    out: list[ScoredChunk] = []
    for source_id in index.source_ids:
        ranked = _ranked(index, index.rows_by_source[source_id], scores)
        out.extend(ranked[:k_s])
    return out
