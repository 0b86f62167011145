import csv
import dataclasses
import json
import math

import numpy as np
import pytest

from transfer_da.harness import (
    ConfigError,
    CycleRecord,
    DatoBlock,
    DynamicsBlock,
    ExperimentConfig,
    ObservationBlock,
    QmdaBlock,
    config_from_dict,
    emit_report,
    load_config,
    load_records,
    run_dato,
    run_parallel,
    run_qmda,
    run_twin_experiment,
    worker_count,
)


def small_config(tmp_path=None, **overrides):
    cfg = ExperimentConfig(
        name="small",
        output_dir=str(tmp_path or "out"),
        dynamics=DynamicsBlock(train_steps=300, spinup_steps=500),
        dato=DatoBlock(S=80, cycles=20),
        qmda=QmdaBlock(N=600, L=30, r=60, S_qmda=8, q=5, cycles=20),
    )
    return dataclasses.replace(cfg, **overrides)


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    return out, run_twin_experiment(small_config(out))


# -- configuration -----------------------------------------------------------


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="bogus"):
        config_from_dict({"bogus": 1})
    with pytest.raises(ConfigError, match="dato: .*Sigma"):
        config_from_dict({"dato": {"Sigma": 1.0}})
    with pytest.raises(ConfigError):
        config_from_dict({"dynamics": [1, 2]})
    with pytest.raises(ConfigError):
        config_from_dict({"framework": "enkf"})
    with pytest.raises(ConfigError):
        config_from_dict({"qmda": {"policy": "ignore"}})


def test_json_and_yaml_agree(tmp_path):
    data = {"name": "x", "framework": "dato", "observation": {"selector": [0, 1, 2], "q": 1}, "dato": {"S": 50}}
    (tmp_path / "c.json").write_text(json.dumps(data))
    (tmp_path / "c.yaml").write_text(
        "name: x\nframework: dato\nobservation:\n  selector: [0, 1, 2]\n  q: 1\ndato:\n  S: 50\n"
    )
    a, b = load_config(tmp_path / "c.json"), load_config(tmp_path / "c.yaml")
    assert a == b
    assert a.observation.selector == (0, 1, 2) and a.dato.S == 50 and a.dynamics == DynamicsBlock()


def test_seed_derivation_and_hash():
    base = ExperimentConfig()
    s = base.with_seed(10)
    assert (s.dynamics.train_seed, s.dynamics.truth_seed, s.observation.noise_seed) == (10, 11, 12)
    assert s.config_hash() != base.config_hash()
    assert base.with_output("elsewhere").config_hash() == base.config_hash()
    assert config_from_dict(base.to_dict()) == base


# -- reports -----------------------------------------------------------------


def test_zero_cycles_give_header_only_csv(tmp_path):
    cfg = small_config(tmp_path, dato=DatoBlock(S=40, cycles=0), qmda=QmdaBlock(N=400, L=20, r=40, S_qmda=4, cycles=0))
    run_twin_experiment(cfg)
    dato_lines = (tmp_path / "dato_cycles.csv").read_text().splitlines()
    qmda_lines = (tmp_path / "qmda_cycles.csv").read_text().splitlines()
    assert dato_lines == ["k,t,x_truth0,x_truth1,x_truth2,x_a0,x_a1,x_a2,rmse,clip_mass"]
    assert qmda_lines == ["k,t,truth_bin,map_bin,P_0,P_1,P_2,P_3,log_score"]


def test_records_round_trip_through_json(small_run):
    out, _ = small_run
    for fw in ("dato", "qmda"):
        recs = load_records(out / f"{fw}_records.json")
        assert len(recs) == 20
        again = json.loads(json.dumps([r.to_dict() for r in recs], sort_keys=True))
        assert [CycleRecord.from_dict(d) for d in again] == recs


def test_rmse_column_recomputes(small_run):
    out, _ = small_run
    with open(out / "dato_cycles.csv") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        truth = np.array([float(row[f"x_truth{i}"]) for i in range(3)])
        x_a = np.array([float(row[f"x_a{i}"]) for i in range(3)])
        assert abs(math.sqrt(np.mean((x_a - truth) ** 2)) - float(row["rmse"])) <= 1e-12


def test_qmda_csv_probabilities(small_run):
    out, _ = small_run
    with open(out / "qmda_cycles.csv") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        P = np.array([float(row[f"P_{i}"]) for i in range(8)])
        assert abs(P.sum() - 1) <= 1e-8
        assert float(row["log_score"]) == pytest.approx(math.log(P[int(row["truth_bin"])]), abs=1e-12)


def test_counters_conserved_and_monotone(small_run):
    _, report = small_run
    for res in report["results"]:
        snaps = [r.counters for r in res.records]
        for a, b in zip(snaps, snaps[1:]):
            assert all(b.get(k, 0) >= v for k, v in a.items())
        assert snaps[-1] == res.summary["counters"]
        assert res.summary["cost_model"]["all_match"], res.summary["cost_model"]


def test_manifest_lists_artifacts(small_run):
    out, report = small_run
    manifest = json.loads((out / "manifest.json").read_text())
    names = {e["file"] for e in manifest["artifacts"]}
    assert {"config.json", "summary.json", "dato_cycles.csv", "qmda_records.json"} <= names
    assert manifest["config_hash"] == report["config_hash"]
    assert "timing" not in (out / "summary.json").read_text()


def test_emit_report_rejects_unknown_format(tmp_path):
    with pytest.raises(ValueError):
        emit_report([], "xml", tmp_path / "x", framework="dato", width=3)


# -- experiments -------------------------------------------------------------


def test_noiseless_dense_dato_beats_free_run():
    cfg = small_config(
        framework="dato",
        observation=ObservationBlock(selector=(0, 1, 2), q=1, noiseless=True),
        dato=DatoBlock(S=80, cycles=50),
    )
    s = run_dato(cfg).summary
    assert s["mean_analysis_rmse"] < s["mean_free_run_rmse"]


def test_dato_density_stays_valid(small_run):
    _, report = small_run
    res = next(r for r in report["results"] if r.framework == "dato")
    for rec in res.records:
        assert rec.metrics["rho_min"] >= 0 and rec.metrics["rho_sum_error"] <= 1e-12


def test_loaded_model_skips_offline_counts(small_run):
    _, report = small_run
    res = next(r for r in report["results"] if r.framework == "qmda")
    again = run_qmda(small_config(), model=res.model).summary
    assert "kernel" not in again["counters"] and again["cost_model"]["all_match"]
    assert again["mean_log_score"] == res.summary["mean_log_score"]


@pytest.mark.parametrize("policy,field", [("skip-update", "skipped_updates"), ("reset-mixed", "resets")])
def test_conflict_policies(small_run, policy, field):
    _, report = small_run
    model = next(r for r in report["results"] if r.framework == "qmda").model
    blind = dataclasses.replace(model, projectors=np.zeros_like(model.projectors))
    cfg = small_config(qmda=dataclasses.replace(small_config().qmda, policy=policy, cycles=5))
    s = run_qmda(cfg, model=blind).summary
    assert s[field] == 5


def test_sparse_measure_counts_stored_entries():
    cfg = small_config(framework="qmda", qmda=dataclasses.replace(small_config().qmda, sparse_measure=True, cycles=5))
    s = run_qmda(cfg).summary
    assert s["cost_model"]["all_match"]


def test_worker_pool(monkeypatch):
    monkeypatch.setenv("TRANSFER_DA_THREADS", "3")
    assert worker_count() == 3
    assert run_parallel(lambda x: x * x, list(range(10))) == [x * x for x in range(10)]
    monkeypatch.setenv("TRANSFER_DA_THREADS", "lots")
    assert worker_count() == 1


def test_shipped_config_matches_defaults():
    from pathlib import Path

    path = Path(__file__).resolve().parents[1] / "configs" / "l63_desk.yaml"
    cfg = load_config(path)
    assert dataclasses.replace(cfg, name="l63", output_dir="out") == ExperimentConfig()
