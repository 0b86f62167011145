"""Gaussian Gram matrices and the sparse variable-bandwidth Markov kernel."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import cdist, pdist

from .complexity import OpCounters, _tick

MEDIAN_SUBSAMPLE_CAP = 2000
_ROW_BLOCK = 512


class ZeroBandwidthError(ValueError):
    pass


class SinkhornError(RuntimeError):
    def __init__(self, deviation: float, iterations: int):
        super().__init__(
            f"Sinkhorn did not converge in {iterations} sweeps; worst row-sum deviation {deviation:.3e}"
        )
        self.deviation = deviation
        self.iterations = iterations


def _as_points(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError("points must be a 1-D or 2-D array")
    return X


def median_bandwidth(X, cap: int = MEDIAN_SUBSAMPLE_CAP, seed: int = 0) -> float:
    """Median pairwise Euclidean distance (seeded subsample above ``cap`` points)."""
    X = _as_points(X)
    if X.shape[0] < 2:
        raise ValueError("need at least two points")
    if X.shape[0] > cap:
        idx = np.sort(np.random.default_rng(seed).choice(X.shape[0], cap, replace=False))
        X = X[idx]
    med = float(np.median(pdist(X)))
    if med <= 0:
        raise ZeroBandwidthError("all points coincide; median distance is zero")
    return med


def rbf_gram(A, B, sigma: float, counters: OpCounters | None = None) -> np.ndarray:
    """``exp(-|a_i - b_j|^2 / (2 sigma^2))`` for every pair of rows."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    A, B = _as_points(A), _as_points(B)
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    G = np.exp(-cdist(A, B, "sqeuclidean") / (2.0 * sigma * sigma))
    evals = A.shape[0] * B.shape[0]
    _tick(counters, "gram", A.shape[1] * evals, kernel_evals=evals)
    return G


def rbf_vector(x, B, sigma: float) -> np.ndarray:
    """Kernel vector of a single point against the rows of ``B``."""
    x = np.asarray(x, dtype=float).ravel()
    B = _as_points(B)
    return np.exp(-np.sum((B - x) ** 2, axis=1) / (2.0 * sigma * sigma))


@dataclass(frozen=True)
class BandwidthField:
    sigma: np.ndarray
    epsilon: float = 1.0
    k_bw: int = 8

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


def _sq_dist_blocks(Y: np.ndarray):
    for start in range(0, Y.shape[0], _ROW_BLOCK):
        stop = min(start + _ROW_BLOCK, Y.shape[0])
        D = cdist(Y[start:stop], Y, "sqeuclidean")
        D[np.arange(stop - start), np.arange(start, stop)] = np.inf
        yield start, stop, D


def vb_bandwidths(
    Y, k_bw: int = 8, epsilon: float = 1.0, counters: OpCounters | None = None
) -> BandwidthField:
    """Per-point bandwidth: mean distance to the ``k_bw`` nearest other points."""
    Y = _as_points(Y)
    N = Y.shape[0]
    if not 1 <= k_bw < N:
        raise ValueError(f"k_bw must lie in [1, {N - 1}]")
    sigma = np.empty(N)
    for start, stop, D in _sq_dist_blocks(Y):
        part = np.partition(D, k_bw - 1, axis=1)[:, :k_bw]
        sigma[start:stop] = np.sqrt(part).mean(axis=1)
    _tick(counters, "bandwidth", Y.shape[1] * N * N, kernel_evals=N * N)
    bad = np.flatnonzero(sigma <= 0)
    if bad.size:
        raise ZeroBandwidthError(f"zero bandwidth at point index {int(bad[0])} (duplicated samples)")
    return BandwidthField(sigma, epsilon, k_bw)


@dataclass(frozen=True)
class SparseKernel:
    """Symmetric-pattern sparse kernel on ``N`` points (CSR storage)."""

    matrix: sp.csr_matrix
    r: int
    epsilon: float = 1.0
    k_bw: int = 8
    iterations: int = 0

    @property
    def N(self) -> int:
        return self.matrix.shape[0]

    def row_entries(self, i: int) -> list[tuple[int, float]]:
        lo, hi = self.matrix.indptr[i], self.matrix.indptr[i + 1]
        return list(zip(self.matrix.indices[lo:hi].tolist(), self.matrix.data[lo:hi].tolist()))

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


def vb_sparse_kernel(
    Y, bw: BandwidthField, r: int, counters: OpCounters | None = None
) -> SparseKernel:
    """Variable-bandwidth Gaussian kernel restricted to ``r`` nearest neighbours.

    Each row keeps its own entry plus its ``r`` nearest neighbours; the
    pattern is then symmetrised by union.  Entries are
    ``exp(-d^2 / (epsilon * sigma_i * sigma_j))``.
    """
    Y = _as_points(Y)
    N = Y.shape[0]
    if r < 1:
        raise ValueError("r must be >= 1")
    if r >= N:
        raise ValueError(f"r={r} must be below N={N}")
    sig = bw.sigma
    rows, cols, vals = [], [], []
    for start, stop, D in _sq_dist_blocks(Y):
        nb = np.argpartition(D, r - 1, axis=1)[:, :r]
        local = np.arange(stop - start)[:, None]
        d2 = D[local, nb]
        i_idx = np.broadcast_to(np.arange(start, stop)[:, None], nb.shape)
        v = np.exp(-d2 / (bw.epsilon * sig[i_idx] * sig[nb]))
        rows.append(i_idx.ravel())
        cols.append(nb.ravel())
        vals.append(v.ravel())
    diag = np.arange(N)
    rows.append(diag)
    cols.append(diag)
    vals.append(np.ones(N))
    A = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N)
    )
    K = A.maximum(A.T).tocsr()
    K.sort_indices()
    _tick(counters, "kernel", Y.shape[1] * N * N, kernel_evals=N * N)
    return SparseKernel(K, r, bw.epsilon, bw.k_bw)


def dense_vb_kernel(Y, bw: BandwidthField) -> np.ndarray:
    Y = _as_points(Y)
    return np.exp(-cdist(Y, Y, "sqeuclidean") / (bw.epsilon * np.outer(bw.sigma, bw.sigma)))


def sinkhorn_normalize(
    K: SparseKernel,
    tol: float = 1e-8,
    max_iter: int = 500,
    counters: OpCounters | None = None,
) -> SparseKernel:
    """Symmetric Sinkhorn scaling ``D K D`` with unit row (and column) sums.

    A single diagonal scaling ``d`` is updated per sweep by the damped
    fixed-point map ``d <- sqrt(d / (K d))``.  ``iterations`` on the result
    counts the matrix-vector sweeps used.
    """
    M = K.matrix
    if M.nnz and M.data.min() < 0:
        raise ValueError("kernel must be non-negative")
    if np.any(np.asarray(M.sum(axis=1)).ravel() <= 0):
        raise ValueError("every row needs at least one positive entry")
    d = np.ones(M.shape[0])
    dev = np.inf
    it = 0
    while it < max_iter:
        Kd = M @ d
        it += 1
        dev = float(np.max(np.abs(d * Kd - 1.0)))
        if dev <= tol:
            break
        d = np.sqrt(d / Kd)
    _tick(counters, "sinkhorn", K.r * M.shape[0] * it)
    if dev > tol:
        raise SinkhornError(dev, it)
    S = M.multiply(d[:, None]).multiply(d[None, :]).tocsr()
    S = ((S + S.T) * 0.5).tocsr()
    S.sort_indices()
    return replace(K, matrix=S, iterations=it)


def write_sparse_kernel(path, K: SparseKernel) -> Path:
    """Write ``i,j,value`` triplets sorted by ``(i, j)`` plus a JSON sidecar header."""
    path = Path(path)
    C = K.matrix.tocoo()
    order = np.lexsort((C.col, C.row))
    with open(path, "w") as fh:
        for i, j, v in zip(C.row[order], C.col[order], C.data[order]):
            fh.write(f"{i},{j},{v:.17g}\n")
    header = path.with_name(path.name + ".json")
    header.write_text(
        json.dumps({"N": K.N, "r": K.r, "epsilon": K.epsilon, "k_bw": K.k_bw, "iterations": K.iterations})
    )
    return header


def read_sparse_kernel(path) -> SparseKernel:
    path = Path(path)
    meta = json.loads(path.with_name(path.name + ".json").read_text())
    N = int(meta["N"])
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    if data.size == 0:
        M = sp.csr_matrix((N, N))
    else:
        M = sp.csr_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=(N, N))
    M.sort_indices()
    return SparseKernel(M, int(meta["r"]), float(meta["epsilon"]), int(meta["k_bw"]), int(meta.get("iterations", 0)))
