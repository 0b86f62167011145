"""Twin-experiment orchestration, configuration schema and report emission."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .complexity import DatoConfig, OpCounters, QmdaConfig, dato_costs, qmda_costs
from .dato import DatoModel, dato_analyze, dato_fit, dato_init_state, dato_predict
from .dynamics import (
    DelayConfig,
    L63Params,
    ObservationModel,
    Trajectory,
    delay_embed,
    integrate_l63,
    make_training_set,
)
from .kernels import median_bandwidth
from .qmda import (
    MeasurementConflictError,
    QmdaModel,
    assign_bin,
    qmda_evolve,
    qmda_fit,
    qmda_init_state,
    qmda_probabilities,
    qmda_update,
)

log = logging.getLogger(__name__)

THREADS_ENV = "TRANSFER_DA_THREADS"
LOG_FLOOR = 1e-300


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Configuration schema
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DynamicsBlock:
    gamma: float = 10.0
    omega: float = 28.0
    beta: float = 8.0 / 3.0
    dt: float = 0.025
    x0: tuple[float, ...] = (1.0, 1.0, 1.0)
    spinup_steps: int = 2000
    train_steps: int = 1000
    discard_fraction: float = 0.3
    train_seed: int = 0
    truth_seed: int = 1

    @property
    def params(self) -> L63Params:
        return L63Params(self.gamma, self.omega, self.beta)


@dataclass(frozen=True)
class ObservationBlock:
    selector: tuple[int, ...] = (1, 2)
    sigma_obs: float = 0.5
    q: int = 6
    noise_seed: int = 2
    noiseless: bool = False


@dataclass(frozen=True)
class DatoBlock:
    sigma: float | str = 2.0
    eps: float = 1e-5
    S: int = 300
    cycles: int = 100


@dataclass(frozen=True)
class QmdaBlock:
    dt: float = 0.01
    N: int = 4000
    L: int = 100
    r: int = 400
    eps: float = 1.0
    k_bw: int = 8
    S_qmda: int = 16
    q: int = 10
    observable: int = 0
    sigma_obs: float = 0.5
    delays: int = 1
    cycles: int = 200
    policy: str = "skip-update"
    multi_horizon: bool = False
    sparse_measure: bool = False

    def __post_init__(self) -> None:
        if self.policy not in ("skip-update", "reset-mixed"):
            raise ConfigError(f"qmda.policy must be 'skip-update' or 'reset-mixed', got {self.policy!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "l63"
    framework: str = "both"
    output_dir: str = "out"
    dynamics: DynamicsBlock = field(default_factory=DynamicsBlock)
    observation: ObservationBlock = field(default_factory=ObservationBlock)
    dato: DatoBlock = field(default_factory=DatoBlock)
    qmda: QmdaBlock = field(default_factory=QmdaBlock)

    def __post_init__(self) -> None:
        if self.framework not in ("dato", "qmda", "both"):
            raise ConfigError(f"framework must be dato, qmda or both, got {self.framework!r}")

    def runs(self, framework: str) -> bool:
        return self.framework in (framework, "both")

    def to_dict(self) -> dict:
        return asdict(self)

    def experiment_dict(self) -> dict:
        """Everything that determines the results; the output location is left out."""
        d = self.to_dict()
        d.pop("output_dir")
        return d

    def config_hash(self) -> str:
        canon = json.dumps(self.experiment_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Derive the training, truth and noise seeds from a single base seed."""
        dyn = dataclasses.replace(self.dynamics, train_seed=seed, truth_seed=seed + 1)
        obs = dataclasses.replace(self.observation, noise_seed=seed + 2)
        return dataclasses.replace(self, dynamics=dyn, observation=obs)

    def with_output(self, out: str | os.PathLike) -> "ExperimentConfig":
        return dataclasses.replace(self, output_dir=str(out))


_BLOCKS = {"dynamics": DynamicsBlock, "observation": ObservationBlock, "dato": DatoBlock, "qmda": QmdaBlock}


def _coerce(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key in _BLOCKS and cls is ExperimentConfig:
            kwargs[key] = _coerce(_BLOCKS[key], value, key)
        elif isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(data: dict) -> ExperimentConfig:
    return _coerce(ExperimentConfig, data or {}, "config")


def load_config(path) -> ExperimentConfig:
    """Read a JSON or YAML experiment description."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() in (".yaml", ".yml"):
        import yaml

        data = yaml.safe_load(text)
    else:
        data = json.loads(text)
    return config_from_dict(data)


# ---------------------------------------------------------------------------
# Records and reports
# ---------------------------------------------------------------------------


@dataclass
class CycleRecord:
    k: int
    t: float
    truth: list[float]
    observation: list[float]
    outputs: dict[str, Any]
    metrics: dict[str, float]
    counters: dict[str, int]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CycleRecord":
        return cls(**d)


@dataclass
class FrameworkResult:
    framework: str
    records: list[CycleRecord]
    summary: dict[str, Any]
    model: DatoModel | QmdaModel | None = None


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def dato_csv_header(n: int) -> list[str]:
    return ["k", "t"] + [f"x_truth{i}" for i in range(n)] + [f"x_a{i}" for i in range(n)] + ["rmse", "clip_mass"]


def qmda_csv_header(S: int) -> list[str]:
    return ["k", "t", "truth_bin", "map_bin"] + [f"P_{i}" for i in range(S)] + ["log_score"]


def _csv_rows(framework: str, records: Sequence[CycleRecord]) -> Iterable[list[str]]:
    for r in records:
        if framework == "dato":
            yield (
                [str(r.k), _fmt(r.t)]
                + [_fmt(v) for v in r.truth]
                + [_fmt(v) for v in r.outputs["x_a"]]
                + [_fmt(r.metrics["rmse"]), _fmt(r.metrics["clip_mass"])]
            )
        else:
            yield (
                [str(r.k), _fmt(r.t), str(r.outputs["truth_bin"]), str(r.outputs["map_bin"])]
                + [_fmt(v) for v in r.outputs["P"]]
                + [_fmt(r.metrics["log_score"])]
            )


def emit_report(
    records: Sequence[CycleRecord],
    fmt: str,
    path,
    *,
    framework: str,
    width: int,
) -> Path:
    """Write cycle records as CSV (``fmt="csv"``) or a JSON list (``fmt="json"``).

    ``width`` is the state dimension for DATO and the bin count for QMDA; it
    fixes the CSV header even when there are no records.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        header = dato_csv_header(width) if framework == "dato" else qmda_csv_header(width)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(_csv_rows(framework, records))
    elif fmt == "json":
        path.write_text(json.dumps([r.to_dict() for r in records], indent=1, sort_keys=True) + "\n")
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return path


def load_records(path) -> list[CycleRecord]:
    return [CycleRecord.from_dict(d) for d in json.loads(Path(path).read_text())]


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def write_manifest(out_dir, files: Sequence[Path], config_hash: str) -> Path:
    out_dir = Path(out_dir)
    entries = []
    for f in sorted(set(Path(p) for p in files)):
        entries.append({"file": f.relative_to(out_dir).as_posix(), "sha256": hashlib.sha256(f.read_bytes()).hexdigest()})
    return write_json(out_dir / "manifest.json", {"config_hash": config_hash, "artifacts": entries})


# ---------------------------------------------------------------------------
# Data generation
# ---------------------------------------------------------------------------


def _start_state(dyn: DynamicsBlock, seed: int, dt: float) -> np.ndarray:
    """Perturb ``x0`` with a seeded unit Gaussian, then spin up onto the attractor."""
    rng = np.random.default_rng(seed)
    x0 = np.asarray(dyn.x0, dtype=float) + rng.standard_normal(len(dyn.x0))
    if dyn.spinup_steps < 1:
        return x0
    return integrate_l63(dyn.params, x0, dt, dyn.spinup_steps).states[-1]


def training_trajectory(cfg: ExperimentConfig, steps: int | None = None, dt: float | None = None) -> np.ndarray:
    dyn = cfg.dynamics
    dt = dyn.dt if dt is None else dt
    steps = dyn.train_steps if steps is None else steps
    return integrate_l63(dyn.params, _start_state(dyn, dyn.train_seed, dt), dt, steps).states


def truth_trajectory(cfg: ExperimentConfig, steps: int, dt: float | None = None) -> np.ndarray:
    dyn = cfg.dynamics
    dt = dyn.dt if dt is None else dt
    return integrate_l63(dyn.params, _start_state(dyn, dyn.truth_seed, dt), dt, steps).states


def observation_model(cfg: ExperimentConfig) -> ObservationModel:
    o = cfg.observation
    return ObservationModel.isotropic(o.selector, o.sigma_obs, o.noise_seed, o.noiseless)


# ---------------------------------------------------------------------------
# DATO
# ---------------------------------------------------------------------------


def fit_dato_from_config(cfg: ExperimentConfig, counters: OpCounters | None = None) -> DatoModel:
    X, Y = make_training_set(
        Trajectory(training_trajectory(cfg), cfg.dynamics.dt), cfg.dynamics.discard_fraction
    )
    sigma = cfg.dato.sigma
    if isinstance(sigma, str):
        if sigma != "median":
            raise ConfigError(f"dato.sigma must be a number or 'median', got {sigma!r}")
        sigma = median_bandwidth(X)
    return dato_fit(X, Y, float(sigma), cfg.dato.eps, min(cfg.dato.S, X.shape[0]), cfg.observation.q, observation_model(cfg), counters)


def run_dato(cfg: ExperimentConfig, model: DatoModel | None = None) -> FrameworkResult:
    counters = OpCounters()
    if model is None:
        model = fit_dato_from_config(cfg, counters)
        offline = True
    else:
        offline = False
    obs = observation_model(cfg)
    q, K, dt = cfg.observation.q, cfg.dato.cycles, cfg.dynamics.dt
    truth = truth_trajectory(cfg, max(K * q, 1))

    state = dato_init_state(model)
    free = dato_init_state(model)
    records: list[CycleRecord] = []
    sq_a, sq_f = [], []
    for k in range(1, K + 1):
        x_t = truth[k * q]
        state = dato_predict(model, state, counters=counters)
        free = dato_predict(model, free)
        y = obs(x_t)
        out = dato_analyze(model, state, y, counters)
        rmse = float(np.sqrt(np.mean((out.x_a - x_t) ** 2)))
        x_free = model.X.T @ free.rho
        rmse_free = float(np.sqrt(np.mean((x_free - x_t) ** 2)))
        sq_a.append(rmse)
        sq_f.append(rmse_free)
        records.append(
            CycleRecord(
                k=k,
                t=k * q * dt,
                truth=x_t.tolist(),
                observation=np.atleast_1d(y).tolist(),
                outputs={"x_a": out.x_a.tolist(), "x_free": x_free.tolist()},
                metrics={
                    "rmse": rmse,
                    "rmse_free": rmse_free,
                    "clip_mass": state.clip_mass,
                    "rho_min": float(out.rho_a.min()),
                    "rho_sum_error": float(abs(out.rho_a.sum() - 1.0)),
                },
                counters=counters.snapshot(),
            )
        )
        state = out.state(k)

    cost_cfg = DatoConfig(n=model.n, m=model.m, S=model.S, p=model.p, q=q, K=max(K, 1))
    summary = {
        "framework": "dato",
        "cycles": K,
        "m": model.m,
        "S": model.S,
        "mean_analysis_rmse": float(np.mean(sq_a)) if sq_a else math.nan,
        "mean_free_run_rmse": float(np.mean(sq_f)) if sq_f else math.nan,
        "max_clip_mass": max((r.metrics["clip_mass"] for r in records), default=0.0),
        "counters": counters.snapshot(),
        "cost_model": _compare(dato_costs(cost_cfg).expected_counters(K, offline=offline), counters),
    }
    return FrameworkResult("dato", records, summary, model)


# ---------------------------------------------------------------------------
# QMDA
# ---------------------------------------------------------------------------


def _qmda_series(cfg: ExperimentConfig, states: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Kernel data (full state or delay coordinates) and aligned observable values."""
    qb = cfg.qmda
    h = states[:, qb.observable]
    if qb.delays <= 1:
        return states, h
    emb = delay_embed(h, DelayConfig(qb.delays, qb.dt))
    return emb, h[qb.delays - 1 :]


def fit_qmda_from_config(cfg: ExperimentConfig, counters: OpCounters | None = None) -> QmdaModel:
    qb = cfg.qmda
    states = training_trajectory(cfg, steps=qb.N + qb.delays - 2, dt=qb.dt)
    data, h = _qmda_series(cfg, states)
    return qmda_fit(
        data,
        h,
        L=qb.L,
        r=qb.r,
        eps=qb.eps,
        S_qmda=qb.S_qmda,
        q=qb.q,
        k_bw=qb.k_bw,
        multi_horizon=qb.multi_horizon,
        counters=counters,
    )


def run_qmda(cfg: ExperimentConfig, model: QmdaModel | None = None) -> FrameworkResult:
    qb = cfg.qmda
    counters = OpCounters()
    if model is None:
        model = fit_qmda_from_config(cfg, counters)
        offline = True
    else:
        offline = False
    q, K = model.q, qb.cycles
    truth = truth_trajectory(cfg, max(K * q, 1), dt=qb.dt)
    noise = np.random.default_rng(cfg.observation.noise_seed)
    sparse = model.sparse_projectors() if qb.sparse_measure else None

    state = qmda_init_state(model.L)
    records: list[CycleRecord] = []
    skipped = resets = 0
    worst = {"trace_error": 0.0, "asymmetry": 0.0, "min_eig": math.inf, "sum_p_error": 0.0}
    for k in range(1, K + 1):
        x_t = truth[k * q]
        state = qmda_evolve(model, state, counters)
        P = qmda_probabilities(model, state, counters, sparse=sparse)
        h_t = float(x_t[qb.observable])
        y = h_t + (qb.sigma_obs * noise.standard_normal() if qb.sigma_obs > 0 else 0.0)
        truth_bin = assign_bin(model.partition, h_t)
        obs_bin = assign_bin(model.partition, y)
        map_bin = int(np.argmax(P))
        score = math.log(max(float(P[truth_bin]), LOG_FLOOR))
        v = state.validity()
        worst["trace_error"] = max(worst["trace_error"], v["trace_error"])
        worst["asymmetry"] = max(worst["asymmetry"], v["asymmetry"])
        worst["min_eig"] = min(worst["min_eig"], v["min_eig"])
        worst["sum_p_error"] = max(worst["sum_p_error"], abs(float(P.sum()) - 1.0))
        try:
            state = qmda_update(model, state, obs_bin, counters)
            action = "update"
        except MeasurementConflictError as exc:
            if qb.policy == "reset-mixed":
                state = qmda_init_state(model.L)
                resets += 1
                action = "reset"
            else:
                skipped += 1
                action = "skip"
            log.warning("cycle %d: %s; policy %s", k, exc, qb.policy)
        records.append(
            CycleRecord(
                k=k,
                t=k * q * qb.dt,
                truth=x_t.tolist(),
                observation=[y],
                outputs={"truth_bin": truth_bin, "obs_bin": obs_bin, "map_bin": map_bin, "P": P.tolist(), "action": action},
                metrics={"log_score": score, "hit": float(map_bin == truth_bin), **v},
                counters=counters.snapshot(),
            )
        )

    scores = [r.metrics["log_score"] for r in records]
    cost_cfg = QmdaConfig(
        N=model.N, L=model.L, d=_data_dim(cfg), r=qb.r, S_qmda=model.S,
        q=q, K=max(K, 1), k_iter=max(model.sinkhorn_iterations, 1),
    )
    expected = qmda_costs(cost_cfg, multi_horizon=model.U_horizons is not None).expected_counters(K, offline=offline)
    if sparse is not None:
        expected["measure"] = int(sparse.nnz) * K
    summary = {
        "framework": "qmda",
        "cycles": K,
        "N": model.N,
        "L": model.L,
        "S_qmda": model.S,
        "mean_log_score": float(np.mean(scores)) if scores else math.nan,
        "climatology_log_score": math.log(1.0 / model.S),
        "hit_rate": float(np.mean([r.metrics["hit"] for r in records])) if records else math.nan,
        "skipped_updates": skipped,
        "resets": resets,
        "sinkhorn_iterations": model.sinkhorn_iterations,
        "worst_validity": worst if records else {},
        "counters": counters.snapshot(),
        "cost_model": _compare(expected, counters),
    }
    return FrameworkResult("qmda", records, summary, model)


def _data_dim(cfg: ExperimentConfig) -> int:
    return cfg.qmda.delays if cfg.qmda.delays > 1 else len(cfg.dynamics.x0)


def _compare(expected: dict[str, int], counters: OpCounters) -> dict[str, Any]:
    stages = {}
    for stage, value in expected.items():
        actual = counters[stage]
        stages[stage] = {"model": int(value), "counted": int(actual), "match": int(value) == int(actual)}
    return {"stages": stages, "all_match": all(s["match"] for s in stages.values())}


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------


def run_twin_experiment(
    cfg: ExperimentConfig,
    *,
    write: bool = True,
    models: dict[str, DatoModel | QmdaModel] | None = None,
) -> dict[str, Any]:
    """Run the configured framework(s) and (optionally) write all artefacts.

    Returns a report with one summary per framework, the written paths and
    the configuration hash.
    """
    models = models or {}
    results: list[FrameworkResult] = []
    if cfg.runs("dato"):
        results.append(run_dato(cfg, models.get("dato")))
    if cfg.runs("qmda"):
        results.append(run_qmda(cfg, models.get("qmda")))

    report: dict[str, Any] = {
        "name": cfg.name,
        "config_hash": cfg.config_hash(),
        "summaries": {r.framework: r.summary for r in results},
        "files": [],
    }
    if write:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = [write_json(out / "config.json", cfg.experiment_dict())]
        for r in results:
            width = len(cfg.dynamics.x0) if r.framework == "dato" else r.model.S
            files.append(emit_report(r.records, "csv", out / f"{r.framework}_cycles.csv", framework=r.framework, width=width))
            files.append(emit_report(r.records, "json", out / f"{r.framework}_records.json", framework=r.framework, width=width))
        files.append(write_json(out / "summary.json", {k: v for k, v in report.items() if k != "files"}))
        manifest = write_manifest(out, files, report["config_hash"])
        report["files"] = [str(p) for p in files + [manifest]]
    report["results"] = results
    return report


def worker_count() -> int:
    raw = os.environ.get(THREADS_ENV, "")
    try:
        n = int(raw)
    except ValueError:
        n = 1
    return max(1, n)


def run_parallel(fn: Callable[[Any], Any], items: Sequence[Any]) -> list[Any]:
    """Map ``fn`` over ``items`` with at most ``TRANSFER_DA_THREADS`` workers (order preserved)."""
    workers = min(worker_count(), max(1, len(items)))
    if workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
