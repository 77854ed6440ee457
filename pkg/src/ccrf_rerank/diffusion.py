"""Random-walk diffusion re-ranking on a normalized affinity graph."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graph import (
    DEFAULT_GAMMA,
    DescriptorSet,
    NormalizedAffinity,
    SparseAffinity,
    rank_descending,
    similarity_matrix,
    symmetric_normalize,
)
from .solvers import ConvergenceError, conjugate_gradient

ONLINE = "online"
OFFLINE = "offline"


@dataclass(frozen=True)
class DiffusionParams:
    rho: float = 0.99
    max_iter: int = 1000
    tol: float = 1e-6
    mode: str = ONLINE
    trunc: int | None = None  # offline kernel entries kept per item; None keeps all

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.mode not in (ONLINE, OFFLINE):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.trunc is not None and self.trunc < 1:
            raise ValueError("trunc must be positive")


@dataclass
class DiffusionState:
    v: np.ndarray
    iteration: int
    residual: float
    history: list = field(default_factory=list)  # inf-norm step sizes


@dataclass(frozen=True)
class RetrievalRanking:
    indices: np.ndarray
    scores: np.ndarray

    def __len__(self):
        return self.indices.size

    @classmethod
    def from_scores(cls, scores) -> "RetrievalRanking":
        scores = np.asarray(scores, dtype=np.float64)
        order = rank_descending(scores)
        return cls(order, scores[order])


def _as_matrix(S):
    return S.matrix if isinstance(S, NormalizedAffinity) else S


def query_init(y, X: DescriptorSet, k: int, gamma: float = DEFAULT_GAMMA) -> np.ndarray:
    """Query similarities restricted to the query's k nearest database items."""
    q = y.vectors if isinstance(y, DescriptorSet) else np.atleast_2d(np.asarray(y, dtype=np.float64))
    if q.shape[0] != 1:
        raise ValueError("query must be a single descriptor")
    if not 1 <= k <= X.n:
        raise ValueError(f"k must lie in [1, {X.n}], got {k}")
    s = similarity_matrix(q, X.vectors, gamma)[0]
    v0 = np.zeros(X.n)
    top = rank_descending(s)[:k]
    v0[top] = s[top]
    return v0


def diffuse_state(S, v0, params: DiffusionParams) -> DiffusionState:
    """Iterate ``v <- rho S v + (1 - rho) v0`` until the inf-norm step is below ``tol``."""
    M = _as_matrix(S)
    v0 = np.asarray(v0, dtype=np.float64)
    rho = params.rho
    base = (1.0 - rho) * v0
    v = v0.copy()
    history = []
    for it in range(1, params.max_iter + 1):
        v_next = rho * (M @ v) + base
        step = float(np.max(np.abs(v_next - v))) if v.size else 0.0
        history.append(step)
        v = v_next
        if step <= params.tol:
            return DiffusionState(v, it, step, history)
    raise ConvergenceError(
        f"diffusion did not converge in {params.max_iter} iterations (residual {history[-1]:.3e})",
        residual=history[-1], iterations=params.max_iter)


def diffuse_iterative(S, v0, params: DiffusionParams) -> np.ndarray:
    return diffuse_state(S, v0, params).v


def _system(M, rho):
    n = M.shape[0]
    return (sp.identity(n, format="csr") - rho * sp.csr_matrix(M)).tocsr()


def diffuse_closed_form(S, v0, rho: float, solver_tol: float = 1e-10,
                        max_iter: int | None = None) -> np.ndarray:
    """Solve ``(I - rho S) v = (1 - rho) v0`` with conjugate gradients."""
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    M = _as_matrix(S)
    v, _ = conjugate_gradient(_system(M, rho), (1.0 - rho) * np.asarray(v0, dtype=np.float64),
                              tol=solver_tol, max_iter=max_iter)
    return v


def offline_precompute(S, rho: float, trunc: int | None = None,
                       solver_tol: float = 1e-10) -> sp.csr_matrix:
    """Truncated diffusion kernel; row i holds the top-``trunc`` entries of the
    diffused basis vector ``(1 - rho)(I - rho S)^-1 e_i``.

    Query-time scores are ``kernel.T @ v0``.
    """
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    M = _as_matrix(S)
    n = M.shape[0]
    trunc = n if trunc is None else trunc
    if not 1 <= trunc <= n:
        raise ValueError(f"trunc must lie in [1, {n}], got {trunc}")
    A = _system(M, rho)
    rows, cols, vals = [], [], []
    e = np.zeros(n)
    for i in range(n):
        e[i] = 1.0 - rho
        try:
            f, _ = conjugate_gradient(A, e, tol=solver_tol)
        except ConvergenceError as exc:
            raise ConvergenceError(f"offline kernel, item {i}: {exc}", exc.residual,
                                   exc.iterations) from exc
        e[i] = 0.0
        keep = rank_descending(f)[:trunc] if trunc < n else np.arange(n)
        keep = keep[f[keep] != 0]
        rows.append(np.full(keep.size, i))
        cols.append(keep)
        vals.append(f[keep])
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n, n))


class Reranker:
    """Diffusion re-ranking over a fixed database graph.

    Normalizes the affinity once and, in offline mode, precomputes the
    truncated kernel once; :meth:`rank` then handles single queries.
    """

    def __init__(self, X: DescriptorSet, affinity: SparseAffinity,
                 params: DiffusionParams | None = None, k: int = 50,
                 gamma: float = DEFAULT_GAMMA, solver_tol: float = 1e-10):
        if affinity.n != X.n:
            raise ValueError(f"affinity has dimension {affinity.n}, database has {X.n} items")
        self.X = X
        self.params = params or DiffusionParams()
        self.k = min(k, X.n)
        self.gamma = gamma
        self.solver_tol = solver_tol
        self.S = symmetric_normalize(affinity)
        self.kernel = None
        if self.params.mode == OFFLINE:
            self.kernel = offline_precompute(self.S, self.params.rho, self.params.trunc, solver_tol)

    def scores(self, query) -> np.ndarray:
        v0 = query_init(query, self.X, self.k, self.gamma)
        if self.kernel is not None:
            return self.kernel.T @ v0
        return diffuse_closed_form(self.S, v0, self.params.rho, self.solver_tol)

    def rank(self, query) -> RetrievalRanking:
        return RetrievalRanking.from_scores(self.scores(query))


def rerank(query, X: DescriptorSet, affinity: SparseAffinity,
           params: DiffusionParams | None = None, k: int = 50,
           gamma: float = DEFAULT_GAMMA) -> RetrievalRanking:
    """Rank the database for one query by diffused similarity."""
    return Reranker(X, affinity, params, k, gamma).rank(query)


# --- ranking files ------------------------------------------------------------


def write_rankings(path, rankings: dict, item_ids=None) -> None:
    """Lines ``query_id item_id rank score`` with 1-based ranks."""
    lines = []
    for qid, ranking in rankings.items():
        for r, (idx, s) in enumerate(zip(ranking.indices.tolist(), ranking.scores.tolist()), 1):
            item = item_ids[idx] if item_ids is not None else idx
            lines.append(f"{qid} {item} {r} {s:.6f}\n")
    Path(path).write_text("".join(lines))


def read_rankings(path, item_ids=None) -> dict:
    """Inverse of :func:`write_rankings`; item ids are mapped back to indices."""
    lookup = {str(v): i for i, v in enumerate(item_ids)} if item_ids is not None else None
    grouped: dict = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ValueError(f"{path}:{lineno}: expected 4 fields")
        qid, item, rank, score = parts
        idx = lookup[item] if lookup is not None else int(item)
        grouped.setdefault(qid, []).append((int(rank), idx, float(score)))
    out = {}
    for qid, entries in grouped.items():
        entries.sort()
        out[qid] = RetrievalRanking(np.array([e[1] for e in entries], dtype=np.int64),
                                    np.array([e[2] for e in entries]))
    return out
