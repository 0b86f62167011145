"""Regularised SPD factorisation and the two eigensolver paths.

The dense path solves the nonsymmetric transfer-operator pencil
``(G + shift I)^{-1} G_cross v = lambda v``; the sparse path extracts leading
eigenpairs of a symmetric Markov kernel with ARPACK (implicitly restarted
Lanczos, the symmetric variant of Arnoldi).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .complexity import OpCounters, _tick
from .kernels import SparseKernel

EigenKind = Literal["PF", "Koopman", "KernelBasis"]


class FactorizationError(np.linalg.LinAlgError):
    def __init__(self, minor: int):
        super().__init__(f"matrix is not positive definite (leading minor {minor} fails)")
        self.minor = minor


class EigenSolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SpdFactor:
    """Lower Cholesky factor of ``G + shift * I``."""

    lower: np.ndarray
    shift: float

    @property
    def m(self) -> int:
        return self.lower.shape[0]

    def solve(self, B: np.ndarray) -> np.ndarray:
        return sla.cho_solve((self.lower, True), B, check_finite=False)

    def reconstruct(self) -> np.ndarray:
        return self.lower @ self.lower.T


@dataclass(frozen=True)
class EigenPairs:
    lambdas: np.ndarray
    vectors: np.ndarray
    kind: EigenKind

    def __len__(self) -> int:
        return self.lambdas.shape[0]


def factor_spd(G: np.ndarray, shift: float, counters: OpCounters | None = None) -> SpdFactor:
    if not shift > 0:
        raise ValueError("shift must be positive")
    G = np.asarray(G, dtype=float)
    m = G.shape[0]
    if G.shape != (m, m):
        raise ValueError("G must be square")
    A = G + shift * np.eye(m)
    c, info = sla.lapack.dpotrf(A, lower=1, clean=1)
    if info > 0:
        raise FactorizationError(int(info))
    if info < 0:
        raise ValueError(f"invalid argument {-info} to dpotrf")
    _tick(counters, "cholesky", m**3 // 3)
    return SpdFactor(np.tril(c), float(shift))


def descending_modulus_order(lambdas: np.ndarray) -> np.ndarray:
    """Stable ordering by descending ``|lambda|`` (ties keep ascending index)."""
    return np.argsort(-np.abs(lambdas), kind="stable")


def conjugate_safe_cut(lambdas: np.ndarray, S: int, tol: float = 1e-10) -> int:
    """Smallest ``S' >= S`` whose leading block is closed under conjugation."""
    S = min(S, lambdas.shape[0])
    while S < lambdas.shape[0]:
        head = lambdas[:S]
        last = head[-1]
        if abs(last.imag) <= tol * max(1.0, abs(last)):
            return S
        partner = np.conj(last)
        if np.any(np.abs(head[:-1] - partner) <= tol * max(1.0, abs(last))):
            return S
        S += 1
    return S


def dense_transfer_eig(
    factor: SpdFactor,
    G_cross: np.ndarray,
    S: int,
    kind: EigenKind = "PF",
    counters: OpCounters | None = None,
) -> EigenPairs:
    """Leading ``S`` eigenpairs of ``factor^{-1} G_cross``, sorted by modulus.

    ``S`` is raised by one when the cut would separate a conjugate pair.
    """
    m = factor.m
    if not 1 <= S <= m:
        raise ValueError(f"S must lie in [1, {m}]")
    M = factor.solve(G_cross)
    try:
        w, V = sla.eig(M, check_finite=False)
    except sla.LinAlgError as exc:
        raise EigenSolverError(str(exc)) from exc
    order = descending_modulus_order(w)
    w, V = w[order], V[:, order]
    S_eff = conjugate_safe_cut(w, S)
    _tick(counters, "eigen", m * m * S_eff)
    return EigenPairs(w[:S_eff].copy(), V[:, :S_eff].copy(), kind)


def sparse_leading_eig(
    K: SparseKernel | np.ndarray,
    L: int,
    counters: OpCounters | None = None,
    seed: int = 0,
) -> EigenPairs:
    """Leading ``L`` eigenpairs (by algebraic value) of a symmetric kernel.

    Eigenvectors are scaled to unit empirical norm ``mean(phi**2) == 1`` and
    signed so that their largest-magnitude entry is positive.
    """
    if isinstance(K, SparseKernel):
        M, r = K.matrix, K.r
    else:
        M, r = K, K.shape[0]
    N = M.shape[0]
    if not 1 <= L <= N:
        raise ValueError(f"L must lie in [1, {N}]")
    if L >= N - 1:
        dense = M.toarray() if hasattr(M, "toarray") else np.asarray(M)
        w, V = np.linalg.eigh(dense)
    else:
        v0 = np.random.default_rng(seed).standard_normal(N)
        try:
            w, V = spla.eigsh(M, k=L, which="LA", v0=v0, tol=0.0, maxiter=50 * N)
        except spla.ArpackNoConvergence as exc:
            raise EigenSolverError(f"ARPACK did not converge: {exc}") from exc
    order = np.argsort(-w, kind="stable")[:L]
    w, V = w[order], V[:, order]
    V = V * np.sqrt(N) / np.linalg.norm(V, axis=0)
    pivots = np.argmax(np.abs(V), axis=0)
    V = V * np.sign(V[pivots, np.arange(V.shape[1])])
    _tick(counters, "eigen", L * r * N)
    return EigenPairs(w, V, "KernelBasis")
