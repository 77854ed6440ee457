"""Similarity kernels, exact k-NN lists and mutual-neighbor affinity graphs.

Everything here works on dense descriptor matrices held in memory. The
similarity kernel is ``max(0, <a, b>) ** gamma``; it is positive and the
self-pair is always excluded by the callers, never by the kernel.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

DEFAULT_GAMMA = 3.0

# rows per block when materializing similarity rows for k-NN search
_BLOCK = 1024


@dataclass(frozen=True)
class DescriptorSet:
    """N descriptors of dimension d plus one opaque identifier per row."""

    vectors: np.ndarray
    ids: tuple = field(default=())

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim == 1:
            v = v[None, :]
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"descriptors must be a non-empty N x d matrix, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("descriptors contain non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)
        ids = tuple(self.ids) if len(self.ids) else tuple(range(v.shape[0]))
        if len(ids) != v.shape[0]:
            raise ValueError(f"{len(ids)} ids for {v.shape[0]} vectors")
        object.__setattr__(self, "ids", ids)

    @classmethod
    def from_array(cls, vectors, ids: Sequence | None = None, normalize: bool = False):
        v = np.array(vectors, dtype=np.float64, copy=True)
        if v.ndim == 1:
            v = v[None, :]
        if normalize:
            norms = np.linalg.norm(v, axis=1, keepdims=True)
            if np.any(norms == 0):
                raise ValueError("cannot normalize a zero descriptor")
            v = v / norms
        return cls(v, tuple(ids) if ids is not None else ())

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return self.n

    def subset(self, index) -> "DescriptorSet":
        index = np.atleast_1d(np.asarray(index))
        return DescriptorSet(self.vectors[index], tuple(self.ids[i] for i in index))


@dataclass(frozen=True)
class KnnLists:
    """Per-item neighbor indices (descending similarity) and their similarities."""

    neighbors: np.ndarray  # (N, k) int64
    sims: np.ndarray  # (N, k) float64

    @property
    def k(self) -> int:
        return self.neighbors.shape[1]

    @property
    def n(self) -> int:
        return self.neighbors.shape[0]

    def truncate(self, k: int) -> "KnnLists":
        if not 0 <= k <= self.k:
            raise ValueError(f"cannot truncate {self.k}-NN lists to k={k}")
        return KnnLists(self.neighbors[:, :k], self.sims[:, :k])


@dataclass(frozen=True)
class SparseAffinity:
    """Symmetric nonnegative N x N affinity with zero diagonal.

    Only the upper triangle is stored (``rows < cols``); the lower triangle
    is implied.
    """

    n: int
    rows: np.ndarray
    cols: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.int64)
        cols = np.asarray(self.cols, dtype=np.int64)
        w = np.asarray(self.weights, dtype=np.float64)
        if not (rows.shape == cols.shape == w.shape) or rows.ndim != 1:
            raise ValueError("rows, cols and weights must be 1-d arrays of equal length")
        if rows.size:
            if np.any(rows >= cols):
                raise ValueError("entries must be stored with row < col")
            if rows.min() < 0 or cols.max() >= self.n:
                raise ValueError("entry index out of range")
            if np.any(~np.isfinite(w)) or np.any(w < 0):
                raise ValueError("weights must be finite and nonnegative")
            order = np.lexsort((cols, rows))
            rows, cols, w = rows[order], cols[order], w[order]
            if np.any((np.diff(rows) == 0) & (np.diff(cols) == 0)):
                raise ValueError("duplicate entries")
        for a in (rows, cols, w):
            a.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "weights", w)

    @classmethod
    def empty(cls, n: int) -> "SparseAffinity":
        return cls(n, np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0))

    @classmethod
    def from_matrix(cls, m) -> "SparseAffinity":
        """Build from a symmetric dense or scipy matrix; the upper triangle is kept."""
        m = sp.coo_matrix(m)
        if m.shape[0] != m.shape[1]:
            raise ValueError("affinity must be square")
        upper = m.row < m.col
        keep = upper & (m.data != 0)
        return cls(m.shape[0], m.row[keep], m.col[keep], m.data[keep])

    @property
    def nnz(self) -> int:
        """Number of stored (i < j) edges."""
        return self.rows.size

    def to_csr(self) -> sp.csr_matrix:
        r = np.concatenate([self.rows, self.cols])
        c = np.concatenate([self.cols, self.rows])
        w = np.concatenate([self.weights, self.weights])
        return sp.csr_matrix((w, (r, c)), shape=(self.n, self.n))

    def to_dense(self) -> np.ndarray:
        return self.to_csr().toarray()

    def edges(self) -> set:
        return set(zip(self.rows.tolist(), self.cols.tolist()))


@dataclass(frozen=True)
class NormalizedAffinity:
    matrix: sp.csr_matrix
    degree: np.ndarray

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


def pairwise_similarity(a, b, gamma: float = DEFAULT_GAMMA) -> float:
    """Return ``max(0, <a, b>) ** gamma`` for two vectors of equal length."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.size} vs {b.size}")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("non-finite input")
    return float(max(0.0, float(a @ b)) ** gamma)


def similarity_matrix(A, B, gamma: float = DEFAULT_GAMMA) -> np.ndarray:
    """Vectorized kernel between the rows of ``A`` and the rows of ``B``."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    return np.maximum(A @ B.T, 0.0) ** gamma


def rank_descending(scores: np.ndarray) -> np.ndarray:
    """Indices sorted by descending score, ties by ascending index."""
    return np.argsort(-np.asarray(scores), kind="stable")


def build_knn(X: DescriptorSet, k: int, gamma: float = DEFAULT_GAMMA) -> KnnLists:
    """Exhaustive k-NN lists; self excluded, ties broken by smaller index."""
    n = X.n
    if not 1 <= k <= n - 1:
        raise ValueError(f"k must lie in [1, {n - 1}], got {k}")
    V = X.vectors
    neighbors = np.empty((n, k), dtype=np.int64)
    sims = np.empty((n, k), dtype=np.float64)
    for start in range(0, n, _BLOCK):
        stop = min(start + _BLOCK, n)
        block = similarity_matrix(V[start:stop], V, gamma)
        block[np.arange(stop - start), np.arange(start, stop)] = -np.inf
        order = np.argsort(-block, axis=1, kind="stable")[:, :k]
        neighbors[start:stop] = order
        sims[start:stop] = np.take_along_axis(block, order, axis=1)
    return KnnLists(neighbors, sims)


def reciprocity_affinity(knn: KnnLists) -> SparseAffinity:
    """Keep ``s(x_i, x_j)`` only where i and j are in each other's k-NN lists.

    The stored weight is the smaller of the two directed similarities, which
    also absorbs any rounding asymmetry of the kernel.
    """
    n = knn.n
    if knn.k == 0 or n < 2:
        return SparseAffinity.empty(n)
    src = np.repeat(np.arange(n, dtype=np.int64), knn.k)
    dst = knn.neighbors.ravel().astype(np.int64)
    w = knn.sims.ravel()
    codes = src * n + dst
    order = np.argsort(codes)
    codes, w = codes[order], w[order]
    src, dst = src[order], dst[order]
    reverse = dst * n + src
    pos = np.clip(np.searchsorted(codes, reverse), 0, codes.size - 1)
    mutual = (codes[pos] == reverse) & (src < dst)
    weights = np.minimum(w[mutual], w[pos[mutual]])
    keep = weights > 0
    return SparseAffinity(n, src[mutual][keep], dst[mutual][keep], weights[keep])


def symmetric_normalize(A: SparseAffinity) -> NormalizedAffinity:
    """``D^-1/2 A D^-1/2``; zero-degree items get an all-zero row."""
    M = A.to_csr()
    degree = np.asarray(M.sum(axis=1)).ravel()
    inv_sqrt = np.zeros_like(degree)
    nz = degree > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(degree[nz])
    D = sp.diags(inv_sqrt)
    S = (D @ M @ D).tocsr()
    return NormalizedAffinity(S, degree)


# --- descriptor files -------------------------------------------------------


def read_fvecs(path, ids_path=None, normalize: bool = False) -> DescriptorSet:
    """Read little-endian ``int32 d`` + ``d`` float32 records.

    An optional sidecar text file supplies one identifier per line.
    """
    raw = Path(path).read_bytes()
    if not raw:
        raise ValueError(f"{path}: empty descriptor file")
    if len(raw) < 4:
        raise ValueError(f"{path}: truncated header at byte offset 0")
    d = int(np.frombuffer(raw, dtype="<i4", count=1)[0])
    if d < 1:
        raise ValueError(f"{path}: invalid dimension {d} at byte offset 0")
    rec = 4 + 4 * d
    if len(raw) % rec:
        offset = (len(raw) // rec) * rec
        raise ValueError(f"{path}: truncated record at byte offset {offset}")
    n = len(raw) // rec
    table = np.frombuffer(raw, dtype=np.uint8).reshape(n, rec)
    dims = table[:, :4].copy().view("<i4").ravel()
    bad = np.flatnonzero(dims != d)
    if bad.size:
        raise ValueError(
            f"{path}: record dimension {dims[bad[0]]} != {d} at byte offset {bad[0] * rec}"
        )
    vectors = table[:, 4:].copy().view("<f4").astype(np.float64)
    bad_rows = np.flatnonzero(~np.all(np.isfinite(vectors), axis=1))
    if bad_rows.size:
        raise ValueError(f"{path}: non-finite component in record at byte offset {bad_rows[0] * rec}")
    ids = None
    if ids_path is not None:
        ids = Path(ids_path).read_text().splitlines()
        if len(ids) != n:
            raise ValueError(f"{ids_path}: {len(ids)} identifiers for {n} vectors")
    return DescriptorSet.from_array(vectors, ids, normalize=normalize)


def write_fvecs(path, X, ids_path=None) -> None:
    V = X.vectors if isinstance(X, DescriptorSet) else np.atleast_2d(np.asarray(X))
    n, d = V.shape
    table = np.empty((n, d + 1), dtype="<f4")
    table[:, 1:] = V
    table[:, :1].view("<i4")[:] = d
    Path(path).write_bytes(table.tobytes())
    if ids_path is not None and isinstance(X, DescriptorSet):
        Path(ids_path).write_text("".join(f"{i}\n" for i in X.ids))
