"""Data assimilation with kernel-EDMD transfer operators.

Offline, Gaussian Gram matrices on the training snapshots give a regularised
Perron-Frobenius pencil whose leading eigenfunctions, sampled at the training
points, form the columns of ``Phi``.  Online, a density on the training points
is carried as complex spectral coefficients ``xi``; prediction multiplies them
by ``lambda**q``, analysis applies a Gaussian likelihood pointwise and
re-projects the posterior onto ``Phi`` by least squares.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .complexity import OpCounters, _tick
from .dynamics import ObservationModel
from .kernels import rbf_gram, rbf_vector
from .spectral import dense_transfer_eig, factor_spd

log = logging.getLogger(__name__)

NORMAL_RIDGE = 1e-10


class DegenerateUpdateError(RuntimeError):
    """Posterior mass vanished everywhere on the training set."""


@dataclass
class DatoModel:
    X: np.ndarray
    sigma: float
    eps: float
    q: int
    lambdas: np.ndarray
    Phi: np.ndarray
    koopman_lambdas: np.ndarray
    V_K: np.ndarray
    normal_factor: np.ndarray
    koopman_modes: np.ndarray
    R_inv: np.ndarray
    selector: tuple[int, ...]
    lambda_pow_q: np.ndarray
    h_map: Callable[[np.ndarray], np.ndarray] | None = field(default=None, repr=False)

    @property
    def m(self) -> int:
        return self.X.shape[0]

    @property
    def n(self) -> int:
        return self.X.shape[1]

    @property
    def S(self) -> int:
        return self.lambdas.shape[0]

    @property
    def p(self) -> int:
        return self.R_inv.shape[0]

    def observe_training(self) -> np.ndarray:
        """``H[x_i]`` for every training point, shape ``(m, p)``."""
        if self.h_map is not None:
            return np.asarray(self.h_map(self.X), dtype=float).reshape(self.m, -1)
        return self.X[:, list(self.selector)]


@dataclass
class DatoState:
    xi: np.ndarray
    rho: np.ndarray
    cycle_index: int = 0
    clip_mass: float = 0.0


@dataclass
class AnalysisOutput:
    x_a: np.ndarray
    rho_a: np.ndarray
    xi_a: np.ndarray
    oi: np.ndarray | None = None

    def state(self, cycle_index: int) -> DatoState:
        return DatoState(self.xi_a, self.rho_a, cycle_index)


def dato_fit(
    X: np.ndarray,
    Y: np.ndarray,
    sigma: float,
    eps: float,
    S: int,
    q: int,
    obs: ObservationModel,
    counters: OpCounters | None = None,
    h_map: Callable[[np.ndarray], np.ndarray] | None = None,
) -> DatoModel:
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    m, n = X.shape
    if Y.shape != X.shape:
        raise ValueError("X and Y must have the same shape")
    if not (sigma > 0 and eps > 0):
        raise ValueError("sigma and eps must be positive")
    if not 1 <= S <= m:
        raise ValueError(f"S must lie in [1, {m}]")
    if q < 1:
        raise ValueError("q must be >= 1")

    G_xx = rbf_gram(X, X, sigma, counters)
    G_xy = rbf_gram(X, Y, sigma, counters)
    factor = factor_spd(G_xx, m * eps, counters)
    pf = dense_transfer_eig(factor, G_xy, S, "PF", counters)
    S = len(pf)
    kp = dense_transfer_eig(factor, G_xy.T, S, "Koopman")
    _tick(counters, "eigen", m * m * S)

    # regularised solve u = (G + m eps I)^{-1} v, then Phi = G u
    U = factor.solve(pf.vectors)
    _tick(counters, "u_solve", m * m * S)
    Phi = G_xx @ U
    _tick(counters, "phi", m * m * S)

    A = Phi.conj().T @ Phi
    ridge = NORMAL_RIDGE * np.real(np.trace(A)) / S
    normal_factor = sla.cholesky(A + ridge * np.eye(S), lower=True)
    _tick(counters, "normal", m * S * S + S**3 // 3)

    # Koopman eigenfunctions phi_K(x) = V_K k(x); modes B from X ~ Phi_K B
    V_K = kp.vectors[:, :S].T.copy()
    Phi_K = G_xx @ V_K.T
    B, *_ = np.linalg.lstsq(Phi_K, X.astype(complex), rcond=None)
    _tick(counters, "modes", m * m * S + m * S * S + m * S * n)

    big = np.abs(pf.lambdas) > 1 + 1e-3
    if np.any(big):
        log.warning("%d eigenvalue(s) exceed unit modulus (max %.4f)", big.sum(), np.abs(pf.lambdas).max())

    return DatoModel(
        X=X,
        sigma=float(sigma),
        eps=float(eps),
        q=int(q),
        lambdas=pf.lambdas,
        Phi=Phi,
        koopman_lambdas=kp.lambdas[:S].copy(),
        V_K=V_K,
        normal_factor=normal_factor,
        koopman_modes=B,
        R_inv=np.linalg.inv(obs.R),
        selector=tuple(obs.selector),
        lambda_pow_q=pf.lambdas**q,
        h_map=h_map,
    )


def project_density(model: DatoModel, rho: np.ndarray) -> np.ndarray:
    """Least-squares coefficients ``argmin |rho - Phi xi|`` via the stored normal factor."""
    b = model.Phi.conj().T @ rho
    return sla.cho_solve((model.normal_factor, True), b, check_finite=False)


def synthesize_density(model: DatoModel, xi: np.ndarray) -> tuple[np.ndarray, float]:
    """``Re(Phi xi)`` clipped at zero and renormalised; returns ``(rho, clipped_mass)``."""
    raw = np.real(model.Phi @ xi)
    clipped = float(-raw[raw < 0].sum())
    rho = np.maximum(raw, 0.0)
    total = rho.sum()
    if not total > 0:
        raise DegenerateUpdateError("synthesised density has no positive mass")
    return rho / total, clipped


def dato_init_state(model: DatoModel) -> DatoState:
    rho = np.full(model.m, 1.0 / model.m)
    return DatoState(project_density(model, rho), rho, 0)


def dato_predict(
    model: DatoModel, state: DatoState, q: int | None = None, counters: OpCounters | None = None
) -> DatoState:
    if q is None or q == model.q:
        factor = model.lambda_pow_q
    else:
        factor = model.lambdas**q
    xi = factor * state.xi
    _tick(counters, "propagate", model.S)
    rho, clipped = synthesize_density(model, xi)
    _tick(counters, "predict", model.m * model.S)
    return DatoState(xi, rho, state.cycle_index, clipped)


def dato_likelihood(model: DatoModel, y, counters: OpCounters | None = None) -> np.ndarray:
    y = np.asarray(y, dtype=float).ravel()
    if y.shape[0] != model.p:
        raise ValueError(f"observation has dimension {y.shape[0]}, expected {model.p}")
    resid = model.observe_training() - y
    quad = np.einsum("ij,jk,ik->i", resid, model.R_inv, resid)
    m, n, p = model.m, model.n, model.p
    _tick(counters, "likelihood", m * (p * n + p * p))
    return np.exp(-0.5 * quad)


def dato_analyze(
    model: DatoModel,
    prior: DatoState,
    y,
    counters: OpCounters | None = None,
    with_oi: bool = False,
) -> AnalysisOutput:
    ell = dato_likelihood(model, y, counters)
    w = ell * prior.rho
    _tick(counters, "bayes", model.m)
    total = w.sum()
    if not (np.isfinite(total) and total > 0):
        raise DegenerateUpdateError(
            "posterior vanished on every training point; inflate R or check the observation"
        )
    rho_a = w / total
    xi_a = project_density(model, rho_a)
    _tick(counters, "project", model.m * model.S + model.S**2)
    x_a = model.X.T @ rho_a
    _tick(counters, "reconstruct", model.m * model.n)
    oi = dato_observation_influence(model, rho_a) if with_oi else None
    return AnalysisOutput(x_a, rho_a, xi_a, oi)


def dato_koopman_forecast(
    model: DatoModel,
    x_a,
    delta: int,
    q: int | None = None,
    counters: OpCounters | None = None,
) -> np.ndarray:
    """Forecast ``delta`` observation windows ahead through the Koopman modes."""
    if delta < 0:
        raise ValueError("delta must be >= 0")
    q = model.q if q is None else q
    k_star = rbf_vector(x_a, model.X, model.sigma)
    phi_k = model.V_K @ k_star
    psi = model.koopman_lambdas ** (q * delta) * phi_k
    x_f = np.real(model.koopman_modes.T @ psi)
    m, n, S = model.m, model.n, model.S
    _tick(counters, "forecast", m * n + m * S + S + S * n, kernel_evals=m)
    return x_f


def dato_observation_influence(model: DatoModel, rho_a: np.ndarray) -> np.ndarray:
    """``Cov_rho(x, H[x]) R^{-1}``, an ``n x p`` sensitivity matrix."""
    HX = model.observe_training()
    dx = model.X - rho_a @ model.X
    dh = HX - rho_a @ HX
    cov = (dx * rho_a[:, None]).T @ dh
    return cov @ model.R_inv
