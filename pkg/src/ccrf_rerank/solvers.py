"""Linear solvers for symmetric positive definite systems."""
from __future__ import annotations

import numpy as np
import scipy.linalg


class ConvergenceError(RuntimeError):
    """An iterative method stopped before reaching its tolerance."""

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


def conjugate_gradient(A, b, tol=1e-6, max_iter=None, x0=None):
    """Solve ``A x = b`` for SPD ``A`` by conjugate gradients.

    ``A`` is anything supporting ``A @ v`` (ndarray, scipy sparse matrix,
    LinearOperator). Stops when ``||b - A x||_2 <= tol * ||b||_2``.
    Multiple right-hand sides are solved column by column when ``b`` is 2-d.

    Returns
    -------
    x : ndarray
    info : dict with ``iterations`` and ``residual`` (relative).

    Raises
    ------
    ConvergenceError
        If ``max_iter`` iterations do not reach ``tol``.
    """
    b = np.asarray(b, dtype=np.float64)
    if b.ndim == 2:
        cols = [conjugate_gradient(A, b[:, j], tol, max_iter,
                                   None if x0 is None else x0[:, j]) for j in range(b.shape[1])]
        x = np.column_stack([c[0] for c in cols])
        return x, {"iterations": max(c[1]["iterations"] for c in cols),
                   "residual": max(c[1]["residual"] for c in cols)}

    n = b.shape[0]
    if max_iter is None:
        max_iter = 10 * n
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), {"iterations": 0, "residual": 0.0}

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    r = b - A @ x if x0 is not None else b.copy()
    p = r.copy()
    rr = r @ r
    threshold = (tol * bnorm) ** 2
    it = 0
    while rr > threshold:
        if it >= max_iter:
            res = np.sqrt(rr) / bnorm
            raise ConvergenceError(
                f"CG did not converge in {max_iter} iterations (relative residual {res:.3e})",
                residual=res, iterations=it)
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0:
            res = np.sqrt(rr) / bnorm
            raise ConvergenceError("matrix is not positive definite", residual=res, iterations=it)
        step = rr / pAp
        x += step * p
        r -= step * Ap
        rr_new = r @ r
        p = r + (rr_new / rr) * p
        rr = rr_new
        it += 1
        # recurrence drift: refresh the true residual every 50 steps
        if it % 50 == 0:
            r = b - A @ x
            rr = r @ r
    return x, {"iterations": it, "residual": float(np.sqrt(rr) / bnorm)}


def cholesky_solve(A, b):
    """Dense Cholesky solve; raises ``np.linalg.LinAlgError`` if ``A`` is not PD."""
    A = np.asarray(A, dtype=np.float64)
    c, lower = scipy.linalg.cho_factor(A, check_finite=True)
    return scipy.linalg.cho_solve((c, lower), b)
