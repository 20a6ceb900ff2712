"""Exact cosine k-NN over a claim's vector store, diversified with MMR."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from factrag.errors import DimensionMismatch
from factrag.knowledge_store import EmbeddedChunk, EmbeddingProvider, VectorStore, embed_query


@dataclass(frozen=True)
class RetrievalParams:
    k: int = 20
    l: int = 7  # noqa: E741
    lam: float = 0.8

    def __post_init__(self):
        if self.k < 1 or self.l < 1:
            raise ValueError("k and l must be positive")
        if self.l > self.k:
            raise ValueError(f"l={self.l} cannot exceed k={self.k}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")


@dataclass(frozen=True)
class ScoredChunk:
    entry: EmbeddedChunk
    score: float
    index: int  # position in the store, used for tie-breaks


def cosine_scores(matrix: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Cosine of every row of ``matrix`` against ``query``; zero vectors score 0."""
    m = np.asarray(matrix, dtype=np.float64)
    q = np.asarray(query, dtype=np.float64)
    dots = m @ q
    denom = np.sqrt(np.einsum("ij,ij->i", m, m)) * np.sqrt(q @ q)
    out = np.zeros(len(m), dtype=np.float64)
    nz = denom > 0
    out[nz] = dots[nz] / denom[nz]
    return np.clip(out, -1.0, 1.0)


def cosine_matrix(vectors: np.ndarray) -> np.ndarray:
    v = np.asarray(vectors, dtype=np.float64)
    norms = np.sqrt(np.einsum("ij,ij->i", v, v))
    denom = np.outer(norms, norms)
    sims = np.zeros((len(v), len(v)), dtype=np.float64)
    nz = denom > 0
    sims[nz] = (v @ v.T)[nz] / denom[nz]
    return np.clip(sims, -1.0, 1.0)


def _check_dim(query: np.ndarray, dim: int) -> np.ndarray:
    q = np.asarray(query, dtype=np.float64)
    if q.ndim != 1 or q.shape[0] != dim:
        raise DimensionMismatch(f"query has shape {q.shape}, store dimension is {dim}")
    return q


def knn_search(store: VectorStore, query_vec, k: int) -> list[ScoredChunk]:
    """Top-``k`` entries by cosine similarity from a full scan of the store."""
    if k < 1:
        raise ValueError("k must be positive")
    q = _check_dim(query_vec, store.dim)
    if not len(store):
        return []
    scores = cosine_scores(store.matrix, q)
    order = np.lexsort((np.arange(len(scores)), -scores))[:k]
    return [ScoredChunk(store.entries[i], float(scores[i]), int(i)) for i in order]


def mmr_rerank(
    candidates: Sequence[ScoredChunk], query_vec, lam: float, l: int  # noqa: E741
) -> list[ScoredChunk]:
    """Greedy maximal marginal relevance selection of ``l`` candidates.

    The first pick is the candidate most similar to the query. Each later
    pick maximises ``lam * sim(d, q) - (1 - lam) * max_{s in selected} sim(d, s)``.
    Ties go to the earlier candidate.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    if not candidates:
        return []
    vecs = np.stack([np.asarray(c.entry.vector, dtype=np.float64) for c in candidates])
    q = _check_dim(query_vec, vecs.shape[1])
    rel = cosine_scores(vecs, q)
    sims = cosine_matrix(vecs)

    n = len(candidates)
    chosen = [int(np.argmax(rel))]
    redundancy = sims[chosen[0]].copy()
    available = np.ones(n, dtype=bool)
    available[chosen[0]] = False
    while len(chosen) < min(l, n):
        obj = lam * rel - (1.0 - lam) * redundancy
        obj[~available] = -np.inf
        pick = int(np.argmax(obj))
        chosen.append(pick)
        available[pick] = False
        np.maximum(redundancy, sims[pick], out=redundancy)
    return [candidates[i] for i in chosen]


def retrieve_text_sources(
    store: VectorStore,
    query_text: str,
    embedder: EmbeddingProvider,
    params: RetrievalParams | None = None,
) -> list[ScoredChunk]:
    params = params or RetrievalParams()
    if not len(store):
        return []
    q = embed_query(embedder, query_text)
    hits = knn_search(store, q, params.k)
    return mmr_rerank(hits, q, params.lam, params.l)
