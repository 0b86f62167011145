"""Density-operator data assimilation on a data-driven kernel eigenbasis.

The state is an ``L x L`` symmetric, positive semidefinite, unit-trace matrix
expressed in an orthonormal basis of the empirical Hilbert space (inner
product ``f.g / N``).  A cycle evolves it with the projected Koopman shift,
reads off bin probabilities ``tr(E_i rho)`` for a quantised scalar observable,
and applies the projective update ``E rho E / tr(E rho E)`` for the bin the
observation falls in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .complexity import OpCounters, _tick
from .kernels import sinkhorn_normalize, vb_bandwidths, vb_sparse_kernel
from .spectral import sparse_leading_eig

TRACE_GUARD = 1e-300
CLIP_TOL = 1e-10


class DegeneratePartitionError(ValueError):
    pass


class StarvationError(RuntimeError):
    """Trace collapsed during evolution; re-initialise the state."""


class MeasurementConflictError(RuntimeError):
    """The observed bin has (numerically) zero probability under the state."""

    def __init__(self, bin_index: int, trace: float):
        super().__init__(f"bin {bin_index} has vanishing probability (trace {trace:.3e})")
        self.bin_index = bin_index
        self.trace = trace


class StateValidityError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Observable quantisation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Partition:
    edges: np.ndarray
    cell_averages: np.ndarray
    membership: np.ndarray

    @property
    def S(self) -> int:
        return self.cell_averages.shape[0]

    def counts(self) -> np.ndarray:
        return np.bincount(self.membership, minlength=self.S)


def build_partition(h_values, S_qmda: int) -> Partition:
    """Equal-count bins from the empirical CDF of ``h_values``.

    Samples are ranked by ``(value, index)``; rank ``k`` goes to bin
    ``floor(k * S / N)``.  The lower edge of each bin is its smallest member
    value, and the last edge is the sample maximum.
    """
    h = np.asarray(h_values, dtype=float).ravel()
    N = h.size
    if S_qmda < 1:
        raise ValueError("S_qmda must be >= 1")
    if N < S_qmda:
        raise ValueError(f"need at least S_qmda={S_qmda} samples, got {N}")
    if np.unique(h).size < S_qmda:
        raise DegeneratePartitionError(f"fewer distinct values than bins ({S_qmda})")
    order = np.lexsort((np.arange(N), h))
    ranks = np.empty(N, dtype=np.int64)
    ranks[order] = np.arange(N)
    membership = (ranks * S_qmda) // N
    starts = -((-np.arange(S_qmda) * N) // S_qmda)  # ceil(i N / S)
    sorted_h = h[order]
    edges = np.append(sorted_h[starts], sorted_h[-1])
    if S_qmda > 1 and np.any(sorted_h[starts[1:] - 1] >= sorted_h[starts[1:]]):
        raise DegeneratePartitionError("tied values straddle a bin boundary; edges not strictly ascending")
    averages = np.bincount(membership, weights=h, minlength=S_qmda) / np.bincount(membership, minlength=S_qmda)
    return Partition(edges, averages, membership)


def assign_bin(partition: Partition, y: float) -> int:
    """Half-open bins ``[e_i, e_{i+1})``; out-of-range values clamp to the end bins."""
    i = int(np.searchsorted(partition.edges, y, side="right")) - 1
    return min(max(i, 0), partition.S - 1)


# ---------------------------------------------------------------------------
# Operator matrices
# ---------------------------------------------------------------------------


def build_koopman(basis: np.ndarray, q: int, counters: OpCounters | None = None) -> np.ndarray:
    """``U_jk = (1/N) sum_{n < N-q} phi_j[n] phi_k[n+q]``."""
    N, L = basis.shape
    if not 0 <= q < N:
        raise ValueError(f"q must lie in [0, {N - 1}]")
    U = basis[: N - q].T @ basis[q:] / N
    _tick(counters, "koopman", N * L * L)
    return U


def build_projectors(
    basis: np.ndarray, partition: Partition, counters: OpCounters | None = None
) -> np.ndarray:
    """Stack of ``S`` matrices ``E_i = (1/N) sum_{n in bin i} phi[n] phi[n]^T``."""
    N, L = basis.shape
    if partition.membership.shape[0] != N:
        raise ValueError("partition membership does not cover the basis samples")
    E = np.empty((partition.S, L, L))
    for i in range(partition.S):
        rows = basis[partition.membership == i]
        if rows.shape[0] == 0:
            raise DegeneratePartitionError(f"bin {i} is empty")
        E[i] = rows.T @ rows / N
        E[i] = 0.5 * (E[i] + E[i].T)
    _tick(counters, "projectors", N * L * L)
    return E


@dataclass
class QmdaModel:
    basis: np.ndarray
    eigenvalues: np.ndarray
    U_q: np.ndarray
    projectors: np.ndarray
    partition: Partition
    q: int
    U_horizons: np.ndarray | None = None
    sinkhorn_iterations: int = 0

    @property
    def N(self) -> int:
        return self.basis.shape[0]

    @property
    def L(self) -> int:
        return self.basis.shape[1]

    @property
    def S(self) -> int:
        return self.partition.S

    def sparse_projectors(self, drop_tol: float = 0.0) -> sp.csr_matrix:
        """Projectors flattened to an ``S x L^2`` sparse matrix (entries ``<= drop_tol`` dropped)."""
        flat = self.projectors.reshape(self.S, -1).copy()
        flat[np.abs(flat) <= drop_tol] = 0.0
        return sp.csr_matrix(flat)


def qmda_fit(
    data: np.ndarray,
    h_values,
    L: int,
    r: int,
    eps: float = 1.0,
    S_qmda: int = 16,
    q: int = 1,
    k_bw: int = 8,
    multi_horizon: bool = False,
    sinkhorn_tol: float = 1e-8,
    sinkhorn_max_iter: int = 500,
    counters: OpCounters | None = None,
) -> QmdaModel:
    """Offline pipeline from time-ordered samples ``data`` (N x d) and observable values."""
    data = np.asarray(data, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    N = data.shape[0]
    h = np.asarray(h_values, dtype=float).ravel()
    if h.shape[0] != N:
        raise ValueError("h_values must have one value per sample")
    if not 1 <= L < N:
        raise ValueError(f"L must lie in [1, {N - 1}]")
    if not 1 <= r < N:
        raise ValueError(f"r must lie in [1, {N - 1}]")

    bw = vb_bandwidths(data, k_bw, eps, counters)
    K = vb_sparse_kernel(data, bw, r, counters)
    K = sinkhorn_normalize(K, sinkhorn_tol, sinkhorn_max_iter, counters)
    eig = sparse_leading_eig(K, L, counters)
    partition = build_partition(h, S_qmda)
    horizons = None
    if multi_horizon:
        horizons = np.stack([build_koopman(eig.vectors, j, counters) for j in range(q + 1)])
        U_q = horizons[q].copy()
    else:
        U_q = build_koopman(eig.vectors, q, counters)
    E = build_projectors(eig.vectors, partition, counters)
    return QmdaModel(eig.vectors, eig.lambdas, U_q, E, partition, q, horizons, K.iterations)


# ---------------------------------------------------------------------------
# Online cycle
# ---------------------------------------------------------------------------


@dataclass
class DensityOperator:
    rho: np.ndarray

    @property
    def L(self) -> int:
        return self.rho.shape[0]

    def validity(self) -> dict[str, float]:
        r = self.rho
        return {
            "trace_error": abs(float(np.trace(r)) - 1.0),
            "asymmetry": float(np.max(np.abs(r - r.T))),
            "min_eig": float(np.linalg.eigvalsh(0.5 * (r + r.T)).min()),
        }

    def check(self, trace_tol: float = 1e-12, sym_tol: float = 1e-12, eig_tol: float = 1e-8) -> None:
        v = self.validity()
        if v["trace_error"] > trace_tol or v["asymmetry"] > sym_tol or v["min_eig"] < -eig_tol:
            raise StateValidityError(f"invalid density operator: {v}")


def qmda_init_state(L: int) -> DensityOperator:
    """Maximally mixed state ``I / L``."""
    if L < 1:
        raise ValueError("L must be >= 1")
    return DensityOperator(np.eye(L) / L)


def _sandwich(A: np.ndarray, rho: np.ndarray, B: np.ndarray) -> tuple[np.ndarray, float]:
    R = A @ rho @ B
    R = 0.5 * (R + R.T)
    return R, float(np.trace(R))


def qmda_evolve(
    model: QmdaModel,
    state: DensityOperator,
    counters: OpCounters | None = None,
    U: np.ndarray | None = None,
) -> DensityOperator:
    """``U^T rho U / tr(U^T rho U)``; ``U`` defaults to the model's lag-q matrix."""
    U = model.U_q if U is None else U
    R, tr = _sandwich(U.T, state.rho, U)
    _tick(counters, "evolve", 2 * model.L**3)
    if not tr > TRACE_GUARD:
        raise StarvationError(f"trace {tr:.3e} collapsed during evolution; re-initialise the state")
    return DensityOperator(R / tr)


def qmda_probabilities(
    model: QmdaModel,
    state: DensityOperator,
    counters: OpCounters | None = None,
    sparse: sp.csr_matrix | None = None,
) -> np.ndarray:
    """Bin probabilities ``tr(E_i rho)``.

    Pass ``sparse`` (from :meth:`QmdaModel.sparse_projectors`) to contract
    only the stored projector entries; the counter then records the
    number of stored entries instead of ``S * L**2``.
    """
    rho = state.rho
    if sparse is None:
        P = np.einsum("ijk,kj->i", model.projectors, rho)
        _tick(counters, "measure", model.S * model.L**2)
    else:
        P = sparse @ rho.T.ravel()
        _tick(counters, "measure", int(sparse.nnz))
    neg = P < 0
    if np.any(neg):
        if P.min() < -CLIP_TOL:
            raise StateValidityError(f"negative bin probability {P.min():.3e}")
        P = np.where(neg, 0.0, P)
        P = P / P.sum()
    return P


def qmda_update(
    model: QmdaModel, state: DensityOperator, bin_index: int, counters: OpCounters | None = None
) -> DensityOperator:
    E = model.projectors[bin_index]
    R, tr = _sandwich(E, state.rho, E)
    _tick(counters, "update", 2 * model.L**3)
    if not tr > TRACE_GUARD:
        raise MeasurementConflictError(bin_index, tr)
    return DensityOperator(R / tr)
