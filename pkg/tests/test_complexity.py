import json
import math

import numpy as np
import pytest

from transfer_da.complexity import (
    DatoConfig,
    OpCounters,
    QmdaConfig,
    breakeven,
    dato_costs,
    dato_forecast_count,
    fit_exponent,
    log_grid,
    qmda_costs,
    ratio_crossing,
    ratio_curve,
    round_sig,
    threshold_table,
    verify_scaling,
)

L63_DATO = DatoConfig(n=3, m=2800, S=2000, p=2)
L63_QMDA = QmdaConfig(N=64000, L=1000, d=3, r=5000, S_qmda=32, q=100)


def matches_table(value, printed):
    """Same leading digit and within 5% of the printed figure."""
    return round_sig(value, 1) == round_sig(printed, 1) and abs(value - printed) <= 0.05 * printed


def test_counters_are_monotone_and_resettable():
    c = OpCounters()
    c.add("gram", 5, kernel_evals=2)
    c.add("gram", 3)
    c.add("evolve", 1)
    assert c["gram"] == 8 and c["missing"] == 0 and c.flops_model == 9
    assert c.snapshot() == {"evolve": 1, "gram": 8, "kernel_evals": 2}
    with pytest.raises(ValueError):
        c.add("gram", -1)
    c.reset()
    assert c.flops_model == 0 and c.kernel_evals == 0


def test_config_validation():
    with pytest.raises(ValueError):
        DatoConfig(n=3, m=10, S=11, p=2)
    with pytest.raises(ValueError):
        DatoConfig(n=0, m=10, S=5, p=2)
    with pytest.raises(ValueError):
        QmdaConfig(N=10, L=11, d=1, r=5, S_qmda=2)
    with pytest.raises(ValueError):
        QmdaConfig(N=10, L=5, d=1, r=10, S_qmda=2)


def test_dato_reference_entries():
    rep = dato_costs(L63_DATO)
    off, on = rep.estimates["offline"], rep.estimates["online"]
    assert off["gram"] == 23_520_000
    assert on["project"] == 5_600_000 + 4_000_000
    for value, printed in [
        (off["gram"], 2.4e7),
        (off["eigen"], 1.6e10),
        (on["predict"], 5.6e6),
        (on["likelihood"], 1.7e4),
        (on["project"], 9.6e6),
        (on["reconstruct"], 8.4e3),
    ]:
        assert matches_table(value, printed), (value, printed)
    assert rep.dominant_offline == "eigen"
    assert rep.dominant_online == "project"


def test_dato_exact_count_formulas():
    cfg = DatoConfig(n=5, m=40, S=12, p=3)
    on = dato_costs(cfg).counts["online"]
    assert on["likelihood"] == 40 * (3 * 5 + 9)
    assert on["predict"] == 40 * 12 and on["reconstruct"] == 200
    assert dato_forecast_count(cfg) == 40 * 5 + 40 * 12 + 12 + 12 * 5


def test_dato_unit_training_set():
    rep = dato_costs(DatoConfig(n=4, m=1, S=1, p=2))
    assert rep.estimates["online"] == {"predict": 1, "likelihood": 8, "bayes": 1, "project": 2, "reconstruct": 4}
    assert rep.dominant_online == "likelihood"


def test_qmda_reference_entries():
    single = qmda_costs(L63_QMDA)
    multi = qmda_costs(L63_QMDA, multi_horizon=True, sparse_measure=True)
    assert single.estimates["offline"]["kernel"] == 12_288_000_000
    for value, printed in [
        (single.estimates["offline"]["kernel"], 1.2e10),
        (single.estimates["offline"]["eigen"], 3.2e11),
        (single.estimates["offline"]["koopman"], 6.4e10),
        (multi.estimates["offline"]["koopman"], 6.4e12),
        (single.estimates["online"]["evolve"], 1e9),
        (multi.estimates["online"]["measure"], 3.2e4),
    ]:
        assert matches_table(value, printed), (value, printed)
    assert single.estimates["online"]["measure"] == 32 * 1000**2
    assert single.dominant_online == "evolve"


def test_expected_counters_scale_with_cycles():
    rep = qmda_costs(QmdaConfig(N=100, L=10, d=3, r=20, S_qmda=4, k_iter=7))
    exp = rep.expected_counters(5)
    assert exp["evolve"] == 5 * 2000 and exp["sinkhorn"] == 20 * 100 * 7
    assert "kernel" not in rep.expected_counters(5, offline=False)


def test_reports_serialise():
    rep = dato_costs(L63_DATO)
    data = json.loads(rep.to_json())
    assert data["totals"]["online_per_cycle"] == rep.online_total
    assert set(data["estimates"]["online"]) == {"predict", "likelihood", "bayes", "project", "reconstruct"}
    text = rep.to_text()
    assert "23,520,000" in text and "online total" in text


def test_breakeven_reference_and_homogeneity():
    assert breakeven(1000, 2800) == pytest.approx(357142.857142857, rel=1e-12)
    assert round_sig(breakeven(1000, 2800), 2) == 3.6e5
    assert breakeven(1, 1) == 1.0
    assert breakeven(1000, 2800, p=2) == breakeven(1000, 2800) / 2
    for L, m in [(7, 3), (100, 90), (1000, 2800)]:
        assert breakeven(2 * L, m) == 8 * breakeven(L, m)
        assert breakeven(L, 2 * m) == breakeven(L, m) / 2
    with pytest.raises(ValueError):
        breakeven(0, 1)
    with pytest.raises(ValueError):
        breakeven(1, 1, p=0)


def test_l63_ratio_order_of_magnitude():
    (n, ratio), = ratio_curve(L63_DATO, L63_QMDA, [3.0])
    assert math.floor(math.log10(ratio)) == math.floor(math.log10(6e-3))
    assert 6e-3 / 2 <= ratio <= 6e-3 * 2


def test_ratio_at_breakeven_closed_form():
    n_star = breakeven(1000, 2800)
    (_, ratio), = ratio_curve(L63_DATO, L63_QMDA, [n_star])
    m, S, p, L = 2800, 2000, 2, 1000
    t_dato = 2 * m * S + m * p * n_star + m + S * S + m * n_star
    t_qmda = 2 * L**3 + 32 * L
    assert ratio == pytest.approx(t_dato / t_qmda, rel=1e-12)
    # dominated by the (p + 1) m n terms against 2 L^3
    assert ratio == pytest.approx((p + 1) / 2, rel=0.1)


def test_ratio_curve_flat_then_linear():
    n_star = breakeven(1000, 2800)
    grid = log_grid(1.0, 1e9, 8)
    curve = np.array(ratio_curve(L63_DATO, L63_QMDA, grid))
    elasticity = np.diff(np.log(curve[:, 1])) / np.diff(np.log(curve[:, 0]))
    mid = curve[1:, 0]
    assert np.all(elasticity[mid <= n_star / 1e4] <= 0.02)
    assert np.all(elasticity[mid >= 10 * n_star] >= 0.98)
    assert np.all(np.diff(curve[:, 1]) > 0)


@pytest.mark.parametrize(
    "dato,qmda",
    [
        (L63_DATO, L63_QMDA),
        (DatoConfig(n=3, m=10_000, S=3000, p=2), QmdaConfig(N=100_000, L=3000, d=3, r=8000, S_qmda=32)),
        (DatoConfig(n=3, m=64_000, S=5000, p=2), QmdaConfig(N=200_000, L=10_000, d=3, r=20_000, S_qmda=64)),
    ],
)
def test_crossing_within_one_grid_step(dato, qmda):
    grid = log_grid(1.0, 1e14, 4)
    cross = ratio_crossing(ratio_curve(dato, qmda, grid))
    n_star = breakeven(qmda.L, dato.m)
    step = grid[1] / grid[0]
    assert cross is not None
    assert n_star / step <= cross <= n_star * step


def test_ratio_curve_validation_and_no_crossing():
    with pytest.raises(ValueError):
        ratio_curve(L63_DATO, L63_QMDA, [3.0, 2.0])
    with pytest.raises(ValueError):
        ratio_curve(L63_DATO, L63_QMDA, [0.0, 1.0])
    assert ratio_crossing(ratio_curve(L63_DATO, L63_QMDA, [1.0, 10.0])) is None


def test_grid_and_threshold_table():
    g = log_grid(1.0, 1e4, 4)
    assert g.size == 17 and g[0] == 1.0 and g[-1] == pytest.approx(1e4)
    table = threshold_table([1000, 2800], [100, 1000])
    assert table[-1] == (2800, 1000, breakeven(1000, 2800))
    assert len(table) == 4


def test_fit_exponent_exact_power():
    sizes = [10, 20, 40, 80]
    slope, resid = fit_exponent(sizes, [3 * s**2.5 for s in sizes])
    assert slope == pytest.approx(2.5, abs=1e-12) and resid < 1e-12


def test_verify_scaling_contract():
    fit = verify_scaling("toy", [10, 20, 40], lambda s, c: c.add("toy", s**3))
    assert fit.exponent == pytest.approx(3.0, abs=1e-12)
    with pytest.raises(RuntimeError, match="not incremented"):
        verify_scaling("toy", [10, 20, 40], lambda s, c: c.add("other", s))
    with pytest.raises(ValueError):
        verify_scaling("toy", [10, 20], lambda s, c: None)
    timed = verify_scaling("toy", [10, 20, 40], lambda s, c: c.add("toy", 1), measure="time")
    assert timed.measure == "time" and np.isfinite(timed.residual)


def test_round_sig():
    assert round_sig(23_520_000, 2) == 2.4e7
    assert round_sig(0.0) == 0.0
    assert round_sig(-0.00567, 1) == -0.006
