"""Lorenz-63 trajectories, noisy coordinate observations and delay embeddings."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np


class IntegrationError(RuntimeError):
    """Raised when the integrator produces a non-finite state."""

    def __init__(self, step: int):
        super().__init__(f"non-finite state encountered at step {step}")
        self.step = step


@dataclass(frozen=True)
class L63Params:
    gamma: float = 10.0
    omega: float = 28.0
    beta: float = 8.0 / 3.0

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in (self.gamma, self.omega, self.beta)):
            raise ValueError("Lorenz-63 parameters must be finite")


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray
    dt: float
    t0: float = 0.0

    def __post_init__(self) -> None:
        states = np.asarray(self.states, dtype=float)
        if states.ndim != 2 or states.shape[0] < 1 or states.shape[1] < 1:
            raise ValueError("states must be a non-empty (num_steps, n) matrix")
        if not np.all(np.isfinite(states)):
            raise ValueError("trajectory contains non-finite entries")
        object.__setattr__(self, "states", states)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.states.shape[0])

    def __len__(self) -> int:
        return self.states.shape[0]


def l63_rhs(params: L63Params) -> Callable[[np.ndarray], np.ndarray]:
    g, w, b = params.gamma, params.omega, params.beta

    def f(x: np.ndarray) -> np.ndarray:
        return np.array([g * (x[1] - x[0]), x[0] * (w - x[2]) - x[1], x[0] * x[1] - b * x[2]])

    return f


def rk4_step(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, dt: float) -> np.ndarray:
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(
    f: Callable[[np.ndarray], np.ndarray], x0, dt: float, steps: int, t0: float = 0.0
) -> Trajectory:
    """Fixed-step classic RK4 over ``steps`` steps; returns ``steps + 1`` states with ``states[0] == x0``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    x = np.array(x0, dtype=float).ravel()
    if not np.all(np.isfinite(x)):
        raise ValueError("x0 must be finite")
    out = np.empty((steps + 1, x.size))
    out[0] = x
    for k in range(1, steps + 1):
        x = rk4_step(f, x, dt)
        if not np.all(np.isfinite(x)):
            raise IntegrationError(k)
        out[k] = x
    return Trajectory(out, dt, t0)


def integrate_l63(params: L63Params, x0, dt: float, steps: int) -> Trajectory:
    return integrate(l63_rhs(params), x0, dt, steps)


def make_training_set(traj: Trajectory, discard_fraction: float) -> tuple[np.ndarray, np.ndarray]:
    """Snapshot pairs ``(X, Y)`` with ``Y[i]`` one step after ``X[i]``.

    The number of retained pairs is ``floor((1 - discard_fraction) * total_pairs)``,
    taken from the end of the trajectory.
    """
    if not 0.0 <= discard_fraction < 1.0:
        raise ValueError("discard_fraction must lie in [0, 1)")
    total_pairs = len(traj) - 1
    m = int(math.floor((1.0 - discard_fraction) * total_pairs + 1e-9))
    if m < 2:
        raise ValueError(f"only {m} snapshot pair(s) remain after discarding; need at least 2")
    start = total_pairs - m
    states = traj.states
    return states[start : start + m].copy(), states[start + 1 : start + m + 1].copy()


@dataclass
class ObservationModel:
    """Coordinate-selection observation ``y = x[selector] + noise``.

    ``R`` is the noise covariance.  With ``noiseless=True`` no noise is drawn
    and ``R`` is only used by the filters as the likelihood covariance.
    Draws come from a single generator seeded by ``noise_seed`` so that the
    k-th call always sees the k-th noise sample.
    """

    selector: tuple[int, ...]
    R: np.ndarray
    noise_seed: int = 0
    noiseless: bool = False
    _rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.selector = tuple(int(i) for i in self.selector)
        if len(set(self.selector)) != len(self.selector) or any(i < 0 for i in self.selector):
            raise ValueError("selector indices must be distinct and non-negative")
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        p = len(self.selector)
        if R.shape != (p, p):
            raise ValueError(f"R must be {p}x{p}, got {R.shape}")
        if not np.allclose(R, R.T):
            raise ValueError("R must be symmetric")
        if np.min(np.linalg.eigvalsh(R)) <= 0:
            raise ValueError("R must be positive definite")
        self.R = R
        self._chol = np.linalg.cholesky(R)
        self.reset()

    @classmethod
    def isotropic(cls, selector, sigma: float, noise_seed: int = 0, noiseless: bool = False):
        p = len(tuple(selector))
        return cls(tuple(selector), sigma**2 * np.eye(p), noise_seed, noiseless)

    @property
    def p(self) -> int:
        return len(self.selector)

    def reset(self) -> None:
        self._rng = np.random.default_rng(self.noise_seed)

    def H(self, x: np.ndarray) -> np.ndarray:
        """Noise-free observation of one state or of each row of a state matrix."""
        x = np.asarray(x)
        if x.shape[-1] <= max(self.selector):
            raise ValueError("state dimension too small for the selector")
        return x[..., list(self.selector)]

    def noise(self) -> np.ndarray:
        return self._chol @ self._rng.standard_normal(self.p)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return observe(self, x)


def observe(model: ObservationModel, x: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
    """Observe a single state.  ``rng`` overrides the model's own stream."""
    hx = model.H(np.asarray(x, dtype=float))
    if model.noiseless:
        return hx.copy()
    if rng is None:
        return hx + model.noise()
    return hx + model._chol @ rng.standard_normal(model.p)


@dataclass(frozen=True)
class DelayConfig:
    Q: int
    dt: float = 1.0

    def __post_init__(self) -> None:
        if self.Q < 1:
            raise ValueError("Q must be >= 1")


def delay_embed(series, cfg: DelayConfig) -> np.ndarray:
    """Rows ``(h_t, h_{t-1}, ..., h_{t-Q+1})`` for ``t = Q-1, ..., len-1``."""
    h = np.asarray(series, dtype=float).ravel()
    Q = cfg.Q
    if h.size < Q:
        raise ValueError(f"series of length {h.size} is shorter than Q={Q}")
    rows = h.size - Q + 1
    return np.stack([h[Q - 1 - j : Q - 1 - j + rows] for j in range(Q)], axis=1)


# ---------------------------------------------------------------------------
# CSV interchange
# ---------------------------------------------------------------------------


def write_trajectory_csv(path, traj: Trajectory) -> None:
    n = traj.states.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"x{i}" for i in range(n)])
        for t, row in zip(traj.times, traj.states):
            w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in row])


def read_trajectory_csv(path) -> Trajectory:
    data = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
    t = data[:, 0]
    dt = float(t[1] - t[0]) if t.size > 1 else 1.0
    return Trajectory(data[:, 1:], dt, float(t[0]))


def write_observations_csv(path, times, observations) -> None:
    obs = np.atleast_2d(np.asarray(observations, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "t"] + [f"y{i}" for i in range(obs.shape[1])])
        for k, (t, y) in enumerate(zip(times, obs)):
            w.writerow([k, f"{t:.17g}"] + [f"{v:.17g}" for v in y])
