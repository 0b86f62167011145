"""Command-line entry point: ``transfer-da <subcommand> [options]``.

Exit status is 0 on success, 1 for usage errors and 2 for runtime failures.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import math
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from . import complexity as cx
from .dynamics import Trajectory, write_observations_csv, write_trajectory_csv
from .harness import (
    ExperimentConfig,
    fit_dato_from_config,
    fit_qmda_from_config,
    load_config,
    observation_model,
    run_parallel,
    run_twin_experiment,
    training_trajectory,
    truth_trajectory,
    write_json,
    write_manifest,
)
from .persistence import load_model, save_model

log = logging.getLogger("transfer_da")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit with status 2
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def format_sci(x: float, digits: int = 2) -> str:
    """Compact scientific notation, e.g. ``357142.86 -> '3.6e5'``."""
    if x == 0:
        return "0"
    r = cx.round_sig(x, digits)
    exp = int(math.floor(math.log10(abs(r))))
    mant = r / 10**exp
    text = f"{mant:.{max(digits - 1, 0)}f}".rstrip("0").rstrip(".")
    return f"{text}e{exp}"


# ---------------------------------------------------------------------------


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.out is not None:
        cfg = cfg.with_output(args.out)
    return cfg


def cmd_generate(args) -> int:
    cfg = _config(args)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    dyn = cfg.dynamics
    steps = args.steps if args.steps is not None else cfg.dato.cycles * cfg.observation.q
    train = Trajectory(training_trajectory(cfg), dyn.dt)
    truth = Trajectory(truth_trajectory(cfg, steps), dyn.dt)
    files = [out / "training.csv", out / "truth.csv", out / "observations.csv"]
    write_trajectory_csv(files[0], train)
    write_trajectory_csv(files[1], truth)
    obs = observation_model(cfg)
    q = cfg.observation.q
    idx = np.arange(q, len(truth), q)
    write_observations_csv(files[2], truth.times[idx], [obs(truth.states[i]) for i in idx])
    write_manifest(out, files, cfg.config_hash())
    print(f"wrote {len(train)} training states, {len(truth)} truth states, {idx.size} observations to {out}")
    return 0


def cmd_fit(args, framework: str) -> int:
    cfg = _config(args)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    counters = cx.OpCounters()
    t0 = time.perf_counter()
    if framework == "dato":
        model = fit_dato_from_config(cfg, counters)
        desc = f"m={model.m} S={model.S} max|lambda|={np.abs(model.lambdas).max():.6f}"
    else:
        model = fit_qmda_from_config(cfg, counters)
        desc = f"N={model.N} L={model.L} S_qmda={model.S} sinkhorn_iterations={model.sinkhorn_iterations}"
    elapsed = time.perf_counter() - t0
    path = save_model(out / f"{framework}_model.bin", model)
    write_json(out / f"{framework}_fit_counters.json", counters.snapshot())
    print(f"{framework} model: {desc}")
    print(f"saved {path} ({elapsed:.2f} s)")
    return 0


def cmd_assimilate(args) -> int:
    cfg = _config(args)
    if args.framework:
        cfg = dataclasses.replace(cfg, framework=args.framework)
    models = {}
    for path in args.model or []:
        m = load_model(path)
        models["dato" if type(m).__name__ == "DatoModel" else "qmda"] = m
    t0 = time.perf_counter()
    report = run_twin_experiment(cfg, models=models)
    for name, s in report["summaries"].items():
        if name == "dato":
            print(
                f"DATO  cycles={s['cycles']}  analysis RMSE={s['mean_analysis_rmse']:.4f}  "
                f"free-run RMSE={s['mean_free_run_rmse']:.4f}  counters match model: {s['cost_model']['all_match']}"
            )
        else:
            print(
                f"QMDA  cycles={s['cycles']}  mean log-score={s['mean_log_score']:.4f}  "
                f"climatology={s['climatology_log_score']:.4f}  hit rate={s['hit_rate']:.3f}  "
                f"counters match model: {s['cost_model']['all_match']}"
            )
    print(f"outputs in {cfg.output_dir} ({time.perf_counter() - t0:.2f} s)")
    return 0


def _cost_report(args) -> cx.CostReport:
    if args.framework == "dato":
        need = {"n": args.n, "m": args.m, "S": args.S, "p": args.p}
        missing = [k for k, v in need.items() if v is None]
        if missing:
            raise UsageError(f"costs --framework dato requires --{' --'.join(missing)}")
        return cx.dato_costs(cx.DatoConfig(args.n, args.m, args.S, args.p, args.q))
    need = {"N": args.N, "L": args.L, "d": args.d, "r": args.r, "S": args.S}
    missing = [k for k, v in need.items() if v is None]
    if missing:
        raise UsageError(f"costs --framework qmda requires --{' --'.join(missing)}")
    cfg = cx.QmdaConfig(args.N, args.L, args.d, args.r, args.S, args.q, k_iter=args.k_iter)
    return cx.qmda_costs(cfg, multi_horizon=args.multi_horizon, sparse_measure=args.sparse_measure)


def cmd_costs(args) -> int:
    report = _cost_report(args)
    print(report.to_text() if args.format == "text" else report.to_json())
    if args.out:
        write_json(Path(args.out) / f"{report.framework}_costs.json", report.to_dict())
    return 0


def cmd_breakeven(args) -> int:
    n_star = cx.breakeven(args.L, args.m, args.p)
    print(f"n* = {n_star!r}")
    print(f"n* ~ {format_sci(n_star)}")
    print(f"L^2/m = {args.L**2 / args.m!r}")
    return 0


def cmd_ratio_curve(args) -> int:
    dato = cx.DatoConfig(n=3, m=args.m, S=args.S, p=args.p)
    qmda = cx.QmdaConfig(N=args.N, L=args.L, d=3, r=args.r, S_qmda=args.S_qmda)
    grid = cx.log_grid(args.n_min, args.n_max, args.per_decade)
    curve = cx.ratio_curve(dato, qmda, grid, sparse_measure=not args.dense_measure)
    cross = cx.ratio_crossing(curve)
    n_star = cx.breakeven(args.L, args.m)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "ratio_curve.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "ratio"])
            w.writerows([f"{n:.17g}", f"{r:.17g}"] for n, r in curve)
        with open(out / "threshold_table.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["m", "L", "n_star"])
            w.writerows([m, L, f"{v:.17g}"] for m, L, v in cx.threshold_table(args.table_m, args.table_L))
        print(f"wrote {out / 'ratio_curve.csv'} and {out / 'threshold_table.csv'}")
    else:
        print("n,ratio")
        for n, r in curve:
            print(f"{n:.6g},{r:.6g}")
    print(f"crossing n = {cross if cross is None else format(cross, '.6g')}; breakeven L^3/m = {n_star:.6g}")
    return 0


def _scaling_runner(stage: str, fixed: int):
    from .dato import DatoModel, DatoState, dato_analyze
    from .kernels import rbf_gram
    from .qmda import DensityOperator, QmdaModel, Partition, qmda_evolve

    rng = np.random.default_rng(0)

    def gram(m, c):
        X = rng.standard_normal((m, 3))
        rbf_gram(X, X, 1.0, c)

    def evolve(L, c):
        A = rng.standard_normal((L, L))
        rho = A @ A.T
        rho /= np.trace(rho)
        part = Partition(np.array([0.0, 1.0]), np.zeros(1), np.zeros(L, dtype=int))
        model = QmdaModel(np.eye(L), np.ones(L), rng.standard_normal((L, L)) / np.sqrt(L), np.eye(L)[None], part, 1)
        qmda_evolve(model, DensityOperator(rho), c)

    def project(S, c):
        # synthetic model with a random Phi; the stage counter is ticked by dato_analyze itself
        m = fixed
        Phi = rng.standard_normal((m, S)) + 0j
        ones = np.ones(S, complex)
        model = DatoModel(
            X=rng.standard_normal((m, 1)), sigma=1.0, eps=1.0, q=1, lambdas=ones, Phi=Phi,
            koopman_lambdas=ones, V_K=np.zeros((S, m), complex),
            normal_factor=np.linalg.cholesky(Phi.conj().T @ Phi),
            koopman_modes=np.zeros((S, 1), complex), R_inv=np.eye(1), selector=(0,), lambda_pow_q=ones,
        )
        prior = DatoState(np.zeros(S, complex), np.full(m, 1.0 / m))
        dato_analyze(model, prior, [0.0], c)

    runners = {"gram": gram, "evolve": evolve, "project": project}
    if stage not in runners:
        raise UsageError(f"unknown stage {stage!r}; choose from {sorted(runners)}")
    return runners[stage]


def cmd_verify_scaling(args) -> int:
    runner = _scaling_runner(args.stage, args.fixed_m)
    fit = cx.verify_scaling(args.stage, args.sizes, runner, measure=args.measure)
    print(f"stage={fit.stage} measure={fit.measure} sizes={fit.sizes}")
    print(f"exponent={fit.exponent:.4f} residual={fit.residual:.2e}")
    if args.stage == "project":
        m = args.fixed_m
        implied, _ = cx.fit_exponent(args.sizes, [m * s + s * s for s in args.sizes])
        print(f"implied exponent of mS+S^2 = {implied:.4f}")
    if args.out:
        write_json(Path(args.out) / f"scaling_{args.stage}.json", fit.__dict__)
    return 0


def cmd_bench(args) -> int:
    """Wall-clock timings of one fit and one cycle per framework (reported, not asserted)."""
    cfg = _config(args)
    sizes = args.sizes

    def one(size: int) -> dict:
        c = dataclasses.replace(
            cfg,
            framework="both",
            dynamics=dataclasses.replace(cfg.dynamics, train_steps=int(size / (1 - cfg.dynamics.discard_fraction))),
            dato=dataclasses.replace(cfg.dato, S=min(cfg.dato.S, size), cycles=1),
            qmda=dataclasses.replace(cfg.qmda, N=size, L=min(cfg.qmda.L, size // 4), r=min(cfg.qmda.r, size // 4), cycles=1),
        )
        t0 = time.perf_counter()
        rep = run_twin_experiment(c, write=False)
        return {"size": size, "seconds": time.perf_counter() - t0, "dato_S": rep["summaries"]["dato"]["S"]}

    for row in run_parallel(one, sizes):
        print(f"size={row['size']:>6d}  fit+1 cycle (both) = {row['seconds']:.3f} s")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="experiment description (JSON or YAML)")
    common.add_argument("--seed", type=int, help="base seed; training, truth and noise seeds derive from it")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="transfer-da", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("generate", parents=[common], help="write training/truth trajectories and observations")
    g.add_argument("--steps", type=int, help="truth trajectory length in model steps")
    sub.add_parser("fit-dato", parents=[common], help="fit and save a DATO model")
    sub.add_parser("fit-qmda", parents=[common], help="fit and save a QMDA model")
    a = sub.add_parser("assimilate", parents=[common], help="run a twin experiment")
    a.add_argument("--framework", choices=["dato", "qmda", "both"])
    a.add_argument("--model", action="append", help="use a saved model instead of fitting (repeatable)")

    c = sub.add_parser("costs", parents=[common], help="closed-form cost report")
    c.add_argument("--framework", choices=["dato", "qmda"], required=True)
    for name in ("n", "m", "S", "p", "N", "L", "d", "r"):
        c.add_argument(f"--{name}", type=int)
    c.add_argument("--q", type=int, default=1)
    c.add_argument("--k-iter", type=int, default=1)
    c.add_argument("--multi-horizon", action="store_true")
    c.add_argument("--sparse-measure", action="store_true")
    c.add_argument("--format", choices=["json", "text"], default="json")

    b = sub.add_parser("breakeven", parents=[common], help="break-even state dimension L^3/m")
    b.add_argument("--L", type=int, required=True)
    b.add_argument("--m", type=int, required=True)
    b.add_argument("--p", type=int)

    r = sub.add_parser("ratio-curve", parents=[common], help="DATO/QMDA online cost ratio against n")
    r.add_argument("--m", type=int, default=2800)
    r.add_argument("--S", type=int, default=2000)
    r.add_argument("--p", type=int, default=2)
    r.add_argument("--N", type=int, default=64000)
    r.add_argument("--L", type=int, default=1000)
    r.add_argument("--r", type=int, default=5000)
    r.add_argument("--S-qmda", type=int, default=32)
    r.add_argument("--n-min", type=float, default=1.0)
    r.add_argument("--n-max", type=float, default=1e8)
    r.add_argument("--per-decade", type=int, default=4)
    r.add_argument("--dense-measure", action="store_true", help="count S*L^2 for the measurement step")
    r.add_argument("--table-m", type=int, nargs="+", default=[1000, 2800, 10000, 64000])
    r.add_argument("--table-L", type=int, nargs="+", default=[100, 300, 1000, 3000])

    v = sub.add_parser("verify-scaling", parents=[common], help="fit growth exponents of model counters")
    v.add_argument("--stage", required=True, choices=["gram", "evolve", "project"])
    v.add_argument("--sizes", type=int, nargs="+", required=True)
    v.add_argument("--fixed-m", type=int, default=400, help="training size held fixed for the project stage")
    v.add_argument("--measure", choices=["counts", "time"], default="counts")

    be = sub.add_parser("bench", parents=[common], help="wall-clock timings (reported only)")
    be.add_argument("--sizes", type=int, nargs="+", default=[200, 400, 800])
    return p


_COMMANDS = {
    "generate": cmd_generate,
    "fit-dato": lambda a: cmd_fit(a, "dato"),
    "fit-qmda": lambda a: cmd_fit(a, "qmda"),
    "assimilate": cmd_assimilate,
    "costs": cmd_costs,
    "breakeven": cmd_breakeven,
    "ratio-curve": cmd_ratio_curve,
    "verify-scaling": cmd_verify_scaling,
    "bench": cmd_bench,
}


def cli_main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 1
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"transfer-da {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"transfer-da {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        log.debug("traceback", exc_info=True)
        return 2


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
