"""Operation counters, closed-form cost models and break-even analysis.

Two views of cost are kept apart throughout:

* ``estimates`` are the leading-term figures one would tabulate for a
  configuration (e.g. ``m*p*n`` for the likelihood, ``L**3`` for one
  density-operator evolution).
* ``counts`` are the exact integer model counts that the instrumented
  pipeline adds to an :class:`OpCounters` instance when it runs.  They fix the
  constants that the big-O figures leave free (two Gram matrices, two
  matrix products per sandwich, ``m*(p*n + p**2)`` for the likelihood).

The runtime counters must agree with ``counts`` with integer equality.
"""

from __future__ import annotations

import json
import math
import threading
import time
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np


class OpCounters:
    """Monotone per-stage operation accumulators.

    ``kernel_evals`` counts individual kernel (distance) evaluations; every
    other quantity is a model flop count attributed to a named stage.
    """

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.kernel_evals = 0
        self.stages: Counter[str] = Counter()

    def add(self, stage: str, count: int, kernel_evals: int = 0) -> None:
        if count < 0 or kernel_evals < 0:
            raise ValueError("counter increments must be non-negative")
        with self._lock:
            self.stages[stage] += int(count)
            self.kernel_evals += int(kernel_evals)

    @property
    def flops_model(self) -> int:
        return sum(self.stages.values())

    def __getitem__(self, stage: str) -> int:
        return self.stages.get(stage, 0)

    def snapshot(self) -> dict[str, int]:
        with self._lock:
            out = dict(sorted(self.stages.items()))
            out["kernel_evals"] = self.kernel_evals
        return out

    def reset(self) -> None:
        with self._lock:
            self.stages.clear()
            self.kernel_evals = 0

    def __repr__(self) -> str:
        return f"OpCounters({self.snapshot()})"


def _tick(counters: OpCounters | None, stage: str, count: int, kernel_evals: int = 0) -> None:
    if counters is not None:
        counters.add(stage, count, kernel_evals)


# ---------------------------------------------------------------------------
# Configurations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DatoConfig:
    n: int
    m: int
    S: int
    p: int
    q: int = 1
    K: int = 1

    def __post_init__(self) -> None:
        for name in ("n", "m", "S", "p", "q", "K"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.S > self.m:
            raise ValueError(f"S={self.S} exceeds m={self.m}")


@dataclass(frozen=True)
class QmdaConfig:
    N: int
    L: int
    d: int
    r: int
    S_qmda: int
    q: int = 1
    K: int = 1
    k_iter: int = 1

    def __post_init__(self) -> None:
        for name in ("N", "L", "d", "r", "S_qmda", "q", "K", "k_iter"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.L > self.N:
            raise ValueError(f"L={self.L} exceeds N={self.N}")
        if self.r >= self.N:
            raise ValueError(f"r={self.r} must be below N={self.N}")


# ---------------------------------------------------------------------------
# Cost reports
# ---------------------------------------------------------------------------


@dataclass
class CostReport:
    framework: str
    config: dict
    estimates: dict[str, dict[str, int]]
    counts: dict[str, dict[str, int]]
    flags: dict[str, bool] = field(default_factory=dict)

    @property
    def offline_total(self) -> int:
        return sum(self.estimates["offline"].values())

    @property
    def online_total(self) -> int:
        return sum(self.estimates["online"].values())

    @property
    def dominant_offline(self) -> str:
        return max(self.estimates["offline"], key=self.estimates["offline"].get)

    @property
    def dominant_online(self) -> str:
        return max(self.estimates["online"], key=self.estimates["online"].get)

    def expected_counters(self, cycles: int, *, offline: bool = True) -> dict[str, int]:
        """Counter values a run of ``cycles`` assimilation cycles should leave."""
        out: Counter[str] = Counter()
        if offline:
            out.update(self.counts["offline"])
        for stage, c in self.counts["online"].items():
            out[stage] += c * cycles
        return dict(sorted(out.items()))

    def to_dict(self) -> dict:
        return {
            "framework": self.framework,
            "config": self.config,
            "flags": self.flags,
            "estimates": self.estimates,
            "counts": self.counts,
            "totals": {"offline": self.offline_total, "online_per_cycle": self.online_total},
            "dominant": {"offline": self.dominant_offline, "online": self.dominant_online},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        lines = [f"{self.framework.upper()} cost estimates  {self.config}"]
        for phase in ("offline", "online"):
            lines.append(f"  {phase}{' (per cycle)' if phase == 'online' else ''}:")
            for stage, value in self.estimates[phase].items():
                lines.append(f"    {stage:<14s}{value:>24,d}  ({value:.2e})")
        lines.append(f"  {'offline total':<16s}{self.offline_total:>24,d}  [{self.dominant_offline}]")
        lines.append(f"  {'online total':<16s}{self.online_total:>24,d}  [{self.dominant_online}]")
        return "\n".join(lines)


def dato_costs(cfg: DatoConfig) -> CostReport:
    n, m, S, p = cfg.n, cfg.m, cfg.S, cfg.p
    estimates = {
        "offline": {
            "gram": n * m * m,
            "cholesky": m**3 // 3,
            "eigen": m * m * S,
            "u_solve": m * m * S,
            "phi": m * m * S,
        },
        "online": {
            "predict": m * S,
            "likelihood": m * p * n,
            "bayes": m,
            "project": m * S + S * S,
            "reconstruct": m * n,
        },
    }
    counts = {
        "offline": {
            # G_XX and G_XY, one pencil each for PF and Koopman
            "gram": 2 * n * m * m,
            "cholesky": m**3 // 3,
            "eigen": 2 * m * m * S,
            "u_solve": m * m * S,
            "phi": m * m * S,
            "normal": m * S * S + S**3 // 3,
            "modes": m * m * S + m * S * S + m * S * n,
        },
        "online": {
            "propagate": S,
            "predict": m * S,
            "likelihood": m * (p * n + p * p),
            "bayes": m,
            "project": m * S + S * S,
            "reconstruct": m * n,
        },
    }
    return CostReport("dato", asdict(cfg), estimates, counts)


def dato_forecast_count(cfg: DatoConfig) -> int:
    """Model count of one optional Koopman forecast, excluded from totals."""
    n, m, S = cfg.n, cfg.m, cfg.S
    return m * n + m * S + S + S * n


def qmda_costs(
    cfg: QmdaConfig, *, multi_horizon: bool = False, sparse_measure: bool = False
) -> CostReport:
    N, L, d, r, S = cfg.N, cfg.L, cfg.d, cfg.r, cfg.S_qmda
    n_koopman = cfg.q + 1 if multi_horizon else 1
    measure = S * L if sparse_measure else S * L * L
    estimates = {
        "offline": {
            "kernel": d * N * N,
            "sinkhorn": r * N * cfg.k_iter,
            "eigen": L * r * N,
            "koopman": n_koopman * N * L * L,
            "projectors": N * L * L,
        },
        "online": {
            "evolve": L**3,
            "measure": measure,
            "update": L**3,
        },
    }
    counts = {
        "offline": {
            "bandwidth": d * N * N,
            "kernel": d * N * N,
            "sinkhorn": r * N * cfg.k_iter,
            "eigen": L * r * N,
            "koopman": n_koopman * N * L * L,
            "projectors": N * L * L,
        },
        "online": {
            "evolve": 2 * L**3,
            "measure": measure,
            "update": 2 * L**3,
        },
    }
    flags = {"multi_horizon": multi_horizon, "sparse_measure": sparse_measure}
    return CostReport("qmda", asdict(cfg), estimates, counts, flags)


# ---------------------------------------------------------------------------
# Break-even analysis
# ---------------------------------------------------------------------------


def breakeven(L: int, m: int, p: int | None = None) -> float:
    """State dimension at which per-cycle online costs coincide, ``L**3/(m p)``."""
    if L < 1 or m < 1:
        raise ValueError("L and m must be >= 1")
    if p is None:
        return L**3 / m
    if p < 1:
        raise ValueError("p must be >= 1")
    return L**3 / (m * p)


def ratio_curve(
    dato: DatoConfig, qmda: QmdaConfig, n_values: Sequence[float], *, sparse_measure: bool = True
) -> list[tuple[float, float]]:
    """Per-cycle online cost ratio T_DATO/T_QMDA as the state dimension varies.

    ``n_values`` may be non-integer (a plotting grid); the DATO per-cycle
    estimate is linear in ``n`` so it is evaluated in closed form.
    """
    n_arr = np.asarray(n_values, dtype=float)
    if n_arr.ndim != 1 or n_arr.size == 0 or np.any(n_arr <= 0) or np.any(np.diff(n_arr) <= 0):
        raise ValueError("n_values must be positive and strictly ascending")
    m, S, p = dato.m, dato.S, dato.p
    t_qmda = qmda_costs(qmda, sparse_measure=sparse_measure).online_total
    # predict + likelihood + bayes + project + reconstruct
    t_dato = m * S + m * p * n_arr + m + (m * S + S * S) + m * n_arr
    return [(float(n), float(t / t_qmda)) for n, t in zip(n_arr, t_dato)]


def ratio_crossing(curve: Sequence[tuple[float, float]]) -> float | None:
    """First grid value of ``n`` at which the ratio reaches 1 (None if never)."""
    for n, ratio in curve:
        if ratio >= 1.0:
            return n
    return None


def log_grid(lo: float, hi: float, per_decade: int = 4) -> np.ndarray:
    """Geometric grid from ``lo`` to ``hi`` with ``per_decade`` points per decade."""
    n_pts = int(round(math.log10(hi / lo) * per_decade)) + 1
    return np.logspace(math.log10(lo), math.log10(hi), n_pts)


def threshold_table(m_values: Iterable[int], L_values: Iterable[int]) -> list[tuple[int, int, float]]:
    return [(m, L, breakeven(L, m)) for L in L_values for m in m_values]


# ---------------------------------------------------------------------------
# Empirical scaling
# ---------------------------------------------------------------------------


@dataclass
class ScalingFit:
    stage: str
    sizes: list[int]
    values: list[float]
    exponent: float
    residual: float
    measure: str = "counts"


def fit_exponent(sizes: Sequence[float], values: Sequence[float]) -> tuple[float, float]:
    """Least-squares slope of log(values) against log(sizes), with RMS residual."""
    x = np.log(np.asarray(sizes, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    return float(slope), float(np.sqrt(np.mean(resid**2)))


def verify_scaling(
    stage: str,
    sizes: Sequence[int],
    runner: Callable[[int, OpCounters], object],
    *,
    measure: str = "counts",
) -> ScalingFit:
    """Run ``runner(size, counters)`` at each size and fit the growth exponent.

    ``measure="counts"`` fits the model counter of ``stage``; ``measure="time"``
    fits wall-clock seconds instead (reported only, hardware dependent).
    """
    if len(sizes) < 3:
        raise ValueError("need at least three sizes")
    if measure not in ("counts", "time"):
        raise ValueError(f"unknown measure {measure!r}")
    values = []
    for size in sizes:
        counters = OpCounters()
        t0 = time.perf_counter()
        runner(size, counters)
        elapsed = time.perf_counter() - t0
        if counters[stage] == 0:
            raise RuntimeError(f"stage {stage!r} was not incremented by the runner at size {size}")
        values.append(float(counters[stage]) if measure == "counts" else elapsed)
    exponent, residual = fit_exponent(sizes, values)
    return ScalingFit(stage, list(sizes), values, exponent, residual, measure)


def round_sig(x: float, digits: int = 1) -> float:
    if x == 0:
        return 0.0
    return round(x, digits - 1 - int(math.floor(math.log10(abs(x)))))
