"""Clique-wise Continuous CRF refinement of nearest-neighbor similarities.

For every pivot item the L nearest neighbors form a fully connected clique.
The pivot's similarities to its members are refined by the mean of a
Gaussian CRF whose pairwise weights combine a Euclidean-distance kernel on
descriptors (ED) and a kernel on the Jeffreys divergence between the
members' similarity-based distributions (SD). The refined rows are then
turned back into a sparse symmetric affinity for diffusion.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graph import (
    DEFAULT_GAMMA,
    DescriptorSet,
    KnnLists,
    SparseAffinity,
    build_knn,
    rank_descending,
    similarity_matrix,
)
from .solvers import ConvergenceError, cholesky_solve, conjugate_gradient

SELECT_THEN_SYMMETRIZE = "select_then_symmetrize"
SYMMETRIZE_THEN_SELECT = "symmetrize_then_select"


@dataclass(frozen=True)
class CcrfParams:
    alpha: float = 1.0
    beta: float = 0.1
    sigma_d: float = 0.9
    sigma_r: float = 3.5e-4
    gamma: float = DEFAULT_GAMMA
    solver: str = "cg"
    tol: float = 1e-6
    max_iter: int | None = None  # None -> 10 * L
    use_ed: bool = True
    use_sd: bool = True
    selection: str = SELECT_THEN_SYMMETRIZE

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.sigma_d <= 0 or self.sigma_r <= 0:
            raise ValueError("kernel bandwidths must be positive")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.solver not in ("cg", "direct"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.selection not in (SELECT_THEN_SYMMETRIZE, SYMMETRIZE_THEN_SELECT):
            raise ValueError(f"unknown selection order {self.selection!r}")


@dataclass(frozen=True)
class Clique:
    pivot: int
    members: np.ndarray  # (L,) item indices, descending similarity to the pivot
    sim_matrix: np.ndarray  # (L, L) symmetric, zero diagonal
    pivot_sims: np.ndarray  # (L,)

    @property
    def size(self) -> int:
        return self.members.size


@dataclass(frozen=True)
class CcrfSystem:
    precision: np.ndarray
    rhs: np.ndarray
    alpha: float
    beta: float


@dataclass(frozen=True)
class DenoisedRow:
    pivot: int
    members: np.ndarray
    values: np.ndarray


class PivotError(RuntimeError):
    """Inference failed for one pivot."""

    def __init__(self, pivot, cause):
        super().__init__(f"pivot {pivot}: {cause}")
        self.pivot = pivot
        self.cause = cause


def build_clique(X: DescriptorSet, knn: KnnLists, pivot: int, L: int,
                 gamma: float = DEFAULT_GAMMA) -> Clique:
    if not 1 <= L <= X.n - 1:
        raise ValueError(f"clique size must lie in [1, {X.n - 1}], got {L}")
    if knn.k < L:
        raise ValueError(f"k-NN lists hold {knn.k} neighbors, clique needs {L}")
    members = knn.neighbors[pivot, :L].copy()
    F = X.vectors[members]
    S = similarity_matrix(F, F, gamma)
    S = np.triu(S, 1)
    S = S + S.T
    return Clique(int(pivot), members, S, knn.sims[pivot, :L].astype(np.float64))


def sbd_pmf(sim_matrix, i: int) -> np.ndarray:
    """Softmax of the l2-normalized i-th row of a clique similarity matrix.

    The zero self entry takes part in both the normalization and the
    softmax. An all-zero row gives the uniform distribution.
    """
    row = np.asarray(sim_matrix, dtype=np.float64)[i]
    norm = np.linalg.norm(row)
    z = row / norm if norm > 0 else np.zeros_like(row)
    e = np.exp(z - z.max())
    return e / e.sum()


def sbd_matrix(sim_matrix) -> np.ndarray:
    """All rows of :func:`sbd_pmf` at once, shape (L, L)."""
    S = np.asarray(sim_matrix, dtype=np.float64)
    norms = np.linalg.norm(S, axis=1, keepdims=True)
    Z = np.divide(S, norms, out=np.zeros_like(S), where=norms > 0)
    E = np.exp(Z - Z.max(axis=1, keepdims=True))
    return E / E.sum(axis=1, keepdims=True)


def kl_divergence(P, Q) -> float:
    P = np.asarray(P, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    return float(np.sum(P * (np.log(P) - np.log(Q))))


def j_divergence(P, Q) -> float:
    """Jeffreys divergence ``(KL(P||Q) + KL(Q||P)) / 2`` of strictly positive PMFs."""
    P = np.asarray(P, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    if P.shape != Q.shape:
        raise ValueError(f"length mismatch: {P.shape} vs {Q.shape}")
    if np.any(P <= 0) or np.any(Q <= 0):
        raise ValueError("distributions must be strictly positive")
    # (KL(P||Q) + KL(Q||P)) / 2 == sum((P - Q) * (log P - log Q)) / 2, termwise >= 0
    return float(0.5 * np.sum((P - Q) * (np.log(P) - np.log(Q))))


def j_divergence_matrix(pmfs) -> np.ndarray:
    """Pairwise Jeffreys divergences between the rows of ``pmfs``."""
    P = np.asarray(pmfs, dtype=np.float64)
    logP = np.log(P)
    H = P @ logP.T  # H[i, j] = sum_k P_i(k) log P_j(k)
    h = np.diag(H)
    J = 0.5 * (h[:, None] + h[None, :] - H - H.T)
    np.fill_diagonal(J, 0.0)
    return np.maximum(J, 0.0)


def weight_matrix(X: DescriptorSet, clique: Clique, sigma_d: float, sigma_r: float,
                  use_ed: bool = True, use_sd: bool = True) -> np.ndarray:
    """Pairwise CRF weights ``exp(-||f_i - f_j||^2 / 2 sd^2 - D_J(Q_i||Q_j)^2 / 2 sr^2)``.

    ``use_ed`` / ``use_sd`` switch the Euclidean and statistical terms off
    for ablations. The diagonal is zero.
    """
    if sigma_d <= 0 or sigma_r <= 0:
        raise ValueError("kernel bandwidths must be positive")
    L = clique.size
    exponent = np.zeros((L, L))
    if use_ed:
        F = X.vectors[clique.members]
        sq = np.sum(F * F, axis=1)
        d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (F @ F.T), 0.0)
        exponent -= d2 / (2.0 * sigma_d**2)
    if use_sd:
        J = j_divergence_matrix(sbd_matrix(clique.sim_matrix))
        exponent -= J**2 / (2.0 * sigma_r**2)
    W = np.exp(exponent)
    W = 0.5 * (W + W.T)
    np.fill_diagonal(W, 0.0)
    return W


def assemble_system(clique: Clique, W, alpha: float, beta: float) -> CcrfSystem:
    """Precision ``2(alpha I + beta D - beta W)`` and right-hand side ``2 alpha s_p``."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    W = np.asarray(W, dtype=np.float64)
    L = clique.size
    if W.shape != (L, L):
        raise ValueError(f"weight matrix shape {W.shape} does not match clique size {L}")
    laplacian = np.diag(W.sum(axis=1)) - W
    precision = 2.0 * (alpha * np.eye(L) + beta * laplacian)
    rhs = 2.0 * alpha * clique.pivot_sims
    return CcrfSystem(precision, rhs, float(alpha), float(beta))


def infer(system: CcrfSystem, method: str = "cg", tol: float = 1e-6,
          max_iter: int | None = None) -> np.ndarray:
    """MAP estimate (the Gaussian mean) of the refined similarities."""
    if method == "direct":
        return cholesky_solve(system.precision, system.rhs)
    if method == "cg":
        L = system.rhs.size
        y, _ = conjugate_gradient(system.precision, system.rhs, tol=tol,
                                  max_iter=10 * L if max_iter is None else max_iter)
        return y
    raise ValueError(f"unknown method {method!r}")


def denoise_pivot(X: DescriptorSet, knn: KnnLists, pivot: int, L: int,
                  params: CcrfParams) -> DenoisedRow:
    clique = build_clique(X, knn, pivot, L, params.gamma)
    W = weight_matrix(X, clique, params.sigma_d, params.sigma_r, params.use_ed, params.use_sd)
    system = assemble_system(clique, W, params.alpha, params.beta)
    try:
        y = infer(system, params.solver, params.tol, params.max_iter)
    except (ConvergenceError, np.linalg.LinAlgError) as exc:
        raise PivotError(pivot, exc) from exc
    return DenoisedRow(int(pivot), clique.members, y)


def denoise_rows(X: DescriptorSet, L: int, params: CcrfParams | None = None,
                 knn: KnnLists | None = None, workers: int = 1) -> list[DenoisedRow]:
    """Refined similarity rows for every pivot, in pivot order."""
    params = params or CcrfParams()
    if not 1 <= L <= X.n - 1:
        raise ValueError(f"clique size must lie in [1, {X.n - 1}], got {L}")
    if knn is None or knn.k < L:
        knn = build_knn(X, L, params.gamma)

    def run(p):
        return denoise_pivot(X, knn, p, L, params)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run, range(X.n)))
    return [run(p) for p in range(X.n)]


def _directed(rows: list[DenoisedRow], n: int, k_out: int | None) -> sp.csr_matrix:
    src, dst, val = [], [], []
    for row in rows:
        order = rank_descending(row.values)
        if k_out is not None:
            order = order[:k_out]
        src.append(np.full(order.size, row.pivot, dtype=np.int64))
        dst.append(row.members[order])
        val.append(np.maximum(row.values[order], 0.0))
    return sp.csr_matrix((np.concatenate(val), (np.concatenate(src), np.concatenate(dst))),
                         shape=(n, n))


def affinity_from_rows(rows: list[DenoisedRow], n: int, k_out: int,
                       selection: str = SELECT_THEN_SYMMETRIZE) -> SparseAffinity:
    """Symmetric affinity ``a_pi = (y_pi + y_ip) / 2`` from refined rows.

    A direction that was not retained counts as zero, so one-sided edges
    keep half their refined value.
    """
    if selection == SELECT_THEN_SYMMETRIZE:
        Y = _directed(rows, n, k_out)
        return SparseAffinity.from_matrix((Y + Y.T) * 0.5)
    if selection == SYMMETRIZE_THEN_SELECT:
        Y = _directed(rows, n, None)
        A = ((Y + Y.T) * 0.5).tocsr()
        keep_r, keep_c = [], []
        for i in range(n):
            lo, hi = A.indptr[i], A.indptr[i + 1]
            cols, vals = A.indices[lo:hi], A.data[lo:hi]
            srt = np.argsort(cols)
            cols, vals = cols[srt], vals[srt]
            top = cols[rank_descending(vals)[:k_out]]
            keep_r.append(np.full(top.size, i))
            keep_c.append(top)
        r, c = np.concatenate(keep_r), np.concatenate(keep_c)
        mask = sp.csr_matrix((np.ones(r.size), (r, c)), shape=(n, n))
        mask = ((mask + mask.T) > 0).astype(np.float64)
        return SparseAffinity.from_matrix(A.multiply(mask))
    raise ValueError(f"unknown selection order {selection!r}")


def denoise_database(X: DescriptorSet, L: int, params: CcrfParams | None = None,
                     k_out: int | None = None, knn: KnnLists | None = None,
                     workers: int = 1) -> SparseAffinity:
    """Refine every pivot's clique and assemble the denoised sparse affinity.

    Parameters
    ----------
    X : descriptors
    L : clique size, ``1 <= L <= N - 1``
    params : C-CRF hyperparameters and solver settings
    k_out : neighbors kept per pivot after refinement (default ``L``)
    knn : precomputed k-NN lists with ``k >= L`` (computed if absent)
    workers : thread count for the per-pivot solves; output does not depend on it
    """
    params = params or CcrfParams()
    k_out = L if k_out is None else k_out
    if not 1 <= k_out <= L:
        raise ValueError(f"k_out must lie in [1, {L}], got {k_out}")
    rows = denoise_rows(X, L, params, knn, workers)
    return affinity_from_rows(rows, X.n, k_out, params.selection)


# --- GRA1 affinity files -----------------------------------------------------


def write_affinity(path, A: SparseAffinity) -> None:
    lines = [f"GRA1 {A.n} {A.nnz}\n"]
    lines += [f"{i} {j} {w:.9g}\n" for i, j, w in
              zip(A.rows.tolist(), A.cols.tolist(), A.weights.tolist())]
    Path(path).write_text("".join(lines))


def read_affinity(path) -> SparseAffinity:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 3 or header[0] != "GRA1":
            raise ValueError(f"{path}: not a GRA1 file")
        n, nnz = int(header[1]), int(header[2])
        body = fh.read().split()
    if len(body) != 3 * nnz:
        raise ValueError(f"{path}: expected {nnz} entries, found {len(body) // 3}")
    table = np.array(body, dtype=object).reshape(nnz, 3) if nnz else np.empty((0, 3), object)
    rows = table[:, 0].astype(np.int64)
    cols = table[:, 1].astype(np.int64)
    w = table[:, 2].astype(np.float64)
    lo, hi = np.minimum(rows, cols), np.maximum(rows, cols)
    return SparseAffinity(n, lo, hi, w)
