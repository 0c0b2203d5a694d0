import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from opfbench.baselines import fit_node_average
from opfbench.caseparser import parse_case
from opfbench.datagen import load_external_csv
from opfbench.errors import FingerprintMismatch, ZeroVariance
from opfbench.evalkit import (
    COLUMNS,
    MetricsReport,
    account_model,
    check_expectations,
    count_model,
    demand_sorted_error,
    emit_report,
    evaluate,
    fvu,
    implied_dispatch,
    mse,
    power_metrics,
    regression_metrics,
)
from opfbench.grid import build_network
from opfbench.nn.layers import Linear
from opfbench.powerflow import VoltageState, effective_load, recover_generation

from conftest import FIXTURES


def test_perfect_prediction():
    r = np.random.default_rng(0)
    t = VoltageState(1 + 0.01 * r.standard_normal((5, 3)), 0.1 * r.standard_normal((5, 3)))
    m = regression_metrics(t, t)
    assert m == {"va_mse": 0.0, "va_fvu": 0.0, "vm_mse": 0.0, "vm_fvu": 0.0}


def test_grand_mean_has_unit_fvu():
    r = np.random.default_rng(1)
    t = r.standard_normal((40, 7))
    assert fvu(np.full_like(t, t.mean()), t) == pytest.approx(1.0, abs=1e-14)


def test_fvu_definition():
    t = np.array([[1.0, 2.0], [3.0, 6.0]])
    p = np.array([[1.5, 2.0], [3.0, 5.0]])
    var = np.mean((t - 3.0) ** 2)
    assert mse(p, t) == pytest.approx((0.25 + 1.0) / 4)
    assert fvu(p, t) == pytest.approx(mse(p, t) / var)


def test_zero_variance():
    with pytest.raises(ZeroVariance):
        fvu(np.ones((2, 2)), np.ones((2, 2)))


def test_shape_mismatch():
    with pytest.raises(ValueError):
        regression_metrics((np.ones((2, 3)), np.ones((2, 3))), (np.ones((2, 4)), np.ones((2, 4))))


def test_ground_truth_power_metrics_zero(small_ds, ieee30):
    m = power_metrics(small_ds, small_ds, ieee30)
    for k, _ in COLUMNS[4:]:
        assert abs(m[k]) < 1e-4, k
    assert m["n_nonfinite"] == 0


def test_implied_dispatch_matches_recover_generation(small_ds, ieee30):
    pg, qg, epd, eqd = implied_dispatch(small_ds, small_ds.pd, small_ds.qd, ieee30)
    for i in (0, 17, 59):
        v = VoltageState(small_ds.vm[i] * 1.01, small_ds.va[i] * 0.9)
        sc = small_ds.scenario(i)
        a = implied_dispatch(v, sc.pd[None], sc.qd[None], ieee30)
        p, q = recover_generation(v, ieee30, sc)
        np.testing.assert_allclose(a[0][0], p, atol=1e-12)
        np.testing.assert_allclose(a[1][0], q, atol=1e-12)
        el = effective_load(v, ieee30, sc)
        np.testing.assert_allclose(a[2][0] + 1j * a[3][0], el, atol=1e-12)


def test_abs_opt_dominates_signed(small_ds, ieee30):
    nodeavg = fit_node_average(small_ds.train).predict(small_ds.pd, small_ds.qd)
    m = power_metrics(nodeavg, small_ds, ieee30)
    assert m["abs_rel_opt"] >= abs(m["rel_opt"])
    for k in ("pg_viol", "qg_viol"):
        assert 0 <= m[k] <= 100


def test_permutation_invariance(small_ds, ieee30):
    pred = fit_node_average(small_ds.train).predict(small_ds.pd, small_ds.qd)
    perm = np.random.default_rng(2).permutation(len(small_ds))
    a = evaluate(pred, small_ds, ieee30)
    b = evaluate(VoltageState(pred.vm[perm], pred.va[perm]), small_ds.subset(perm), ieee30)
    for k in a:
        assert a[k] == pytest.approx(b[k], rel=1e-12, abs=1e-15), k


def test_nonfinite_predictions_excluded(small_ds, ieee30):
    vm = small_ds.vm.copy()
    vm[3, 4] = np.nan
    m = power_metrics(VoltageState(vm, small_ds.va), small_ds, ieee30)
    assert m["n_nonfinite"] == 1 and m["n_samples"] == 59
    assert abs(m["abs_rel_opt"]) < 1e-4


def test_fingerprint_checked(small_ds, case30):
    with pytest.raises(FingerprintMismatch):
        power_metrics(small_ds, small_ds, case30)


def test_violation_counting(small_ds, ieee30):
    # pushing every bus voltage up raises generator reactive output beyond its limits
    hi = VoltageState(small_ds.vm + 0.05, small_ds.va)
    m = power_metrics(hi, small_ds, ieee30)
    assert m["qg_viol"] > 0


def test_demand_curves(small_ds, ieee30):
    curves = demand_sorted_error({"truth": small_ds, "dispatch": small_ds.pg.copy()}, small_ds, ieee30)
    assert np.all(np.diff(curves.demand) >= 0)
    assert np.max(np.abs(curves.errors["truth"])) < 1e-6
    assert np.all(curves.errors["dispatch"] == 0)
    assert curves.spearman["dispatch"] == 0.0
    lines = curves.to_csv().splitlines()
    assert lines[0] == "sample_id,aggregate_pd,truth,dispatch"
    assert len(lines) == 61


def test_dominance_fraction():
    from opfbench.evalkit import DemandCurves

    c = DemandCurves(np.arange(4.0), np.arange(4), {"a": np.array([1, 2, 3, 0.0]), "b": np.array([0, 1, 4, 0.0])})
    assert c.dominance("a", "b") == 0.5


def test_affine_mac_count():
    lin = Linear(7, 5, np.random.default_rng(0))
    assert lin.macs() == 35
    assert count_model(lin) == (40, 35)
    # a linear predictor counts one MAC per weight
    from types import SimpleNamespace
    assert count_model(SimpleNamespace(weights=np.zeros((4, 6)), intercept=np.zeros(4))) == (28, 24)


def test_account_model_timings(small_ds):
    p = fit_node_average(small_ds.train)
    acc = account_model(p, infer=lambda: p.predict(small_ds.pd[:1]), solve=lambda: sum(range(2000)), runs=5)
    assert acc.params == 60 and acc.macs == 0
    assert acc.inference_s > 0 and acc.solver_s > 0
    assert acc.to_dict()["speedup"] == pytest.approx(acc.solver_s / acc.inference_s)


def _reports():
    net = build_network(parse_case((FIXTURES / "two_bus.m").read_text()))
    ds = load_external_csv(FIXTURES / "external_two_bus.csv", FIXTURES / "external_two_bus_splits.json", net)
    truth = evaluate(ds, ds, net)
    avg = evaluate(fit_node_average(ds.train).predict(ds.pd, ds.qd), ds, net)
    return [
        MetricsReport("two_bus", "Ground truth", [truth]),
        MetricsReport("two_bus", "Node Avg", [avg]),
        MetricsReport("two_bus", "Twice", [avg, avg]),
    ]


def test_report_snapshot():
    out = emit_report(_reports())
    assert out == (FIXTURES / "report_two_bus.md").read_text()
    assert emit_report(_reports()) == out


def test_report_csv_snapshot():
    out = emit_report(_reports(), fmt="csv")
    assert out == (FIXTURES / "report_two_bus.csv").read_text()


def test_empty_report_is_header_only():
    out = emit_report([])
    lines = out.splitlines()
    assert len(lines) == 2
    assert lines[0].startswith("| Method | Va MSE |")
    assert emit_report([], fmt="csv").count("\n") == 1


def test_identical_seeds_render_zero_std():
    run = {k: 0.5 for k, _ in COLUMNS}
    out = emit_report([MetricsReport("d", "m", [run, dict(run)])])
    assert "5.000e-01 ± 0.000e+00" in out
    assert "0.500 ± 0.000" in out


def test_report_format_error():
    with pytest.raises(ValueError):
        emit_report([], fmt="html")


def test_report_dict_round_trip():
    r = MetricsReport("d", "m", [{"va_mse": 1.0}])
    assert MetricsReport.from_dict(json.loads(json.dumps(r.to_dict()))) == r


def test_expectations():
    reps = [MetricsReport("d", "a", [{"va_fvu": 0.01}]), MetricsReport("d", "b", [{"va_fvu": 0.1}])]
    ok = [{"dataset": "d", "method": "a", "metric": "va_fvu", "op": "<", "than": {"method": "b", "factor": 0.2}}]
    assert check_expectations(reps, ok) == []
    bad = [{"dataset": "d", "method": "b", "metric": "va_fvu", "op": "<", "value": 0.05},
           {"method": "zzz", "metric": "va_fvu", "op": "<", "value": 1}]
    failed = check_expectations(reps, json.dumps(bad))
    assert len(failed) == 2
    assert failed[0]["observed"] == 0.1


@given(st.integers(0, 2**32 - 1))
def test_metrics_nonnegative(seed):
    r = np.random.default_rng(seed)
    t = VoltageState(1 + 0.02 * r.standard_normal((10, 4)), 0.1 * r.standard_normal((10, 4)))
    p = VoltageState(t.vm + 0.01 * r.standard_normal((10, 4)), t.va + 0.01 * r.standard_normal((10, 4)))
    assert all(v >= 0 for v in regression_metrics(p, t).values())
