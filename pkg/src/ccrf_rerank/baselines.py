"""Non-diffusion retrieval baselines: exhaustive NN search and average query expansion."""
from __future__ import annotations

import numpy as np

from .diffusion import RetrievalRanking
from .graph import DEFAULT_GAMMA, DescriptorSet, similarity_matrix


def _query_row(query) -> np.ndarray:
    q = query.vectors if isinstance(query, DescriptorSet) else np.atleast_2d(np.asarray(query, float))
    if q.shape[0] != 1:
        raise ValueError("query must be a single descriptor")
    return q[0]


def nn_search(query, X: DescriptorSet, gamma: float = DEFAULT_GAMMA) -> RetrievalRanking:
    q = _query_row(query)
    return RetrievalRanking.from_scores(similarity_matrix(q, X.vectors, gamma)[0])


def aqe_baseline(query, X: DescriptorSet, nqe: int, gamma: float = DEFAULT_GAMMA) -> RetrievalRanking:
    """Average query expansion.

    The query is averaged with its top-``nqe`` database neighbors, rescaled
    to unit norm and used for a second exhaustive search.
    """
    if not 0 <= nqe <= X.n:
        raise ValueError(f"nqe must lie in [0, {X.n}], got {nqe}")
    first = nn_search(query, X, gamma)
    if nqe == 0:
        return first
    q = _query_row(query)
    expanded = (q + X.vectors[first.indices[:nqe]].sum(axis=0)) / (nqe + 1)
    norm = np.linalg.norm(expanded)
    if norm > 0:
        expanded = expanded / norm
    return RetrievalRanking.from_scores(similarity_matrix(expanded, X.vectors, gamma)[0])
