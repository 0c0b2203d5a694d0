import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from opfbench import kernels
from opfbench.caseparser import load_case, parse_case
from opfbench.errors import NonConvergence
from opfbench.grid import build_network, build_ybus, load_network
from opfbench.powerflow import (
    LoadScenario,
    Setpoints,
    VoltageState,
    branch_flows,
    complex_injection,
    effective_load,
    recover_generation,
    solve_newton,
)

from conftest import FIXTURES, two_bus_text

REF = json.loads((FIXTURES / "reference_powerflow.json").read_text())


def _zero_load(net):
    return LoadScenario(np.zeros(net.n_buses), np.zeros(net.n_buses))


def test_two_bus_injection_hand_expansion(two_bus):
    v1, v2 = 1.0, 0.98 * complex(math.cos(-0.02), math.sin(-0.02))
    y = 1 - 5j
    s1 = v1 * (y * v1 - y * v2).conjugate()
    s2 = v2 * (-y * v1 + y * v2).conjugate()
    got = complex_injection(VoltageState(np.array([1.0, 0.98]), np.array([0.0, -0.02])), build_ybus(two_bus))
    np.testing.assert_allclose(got, [s1, s2], atol=1e-14)


def test_zero_load_newton(two_bus):
    res = solve_newton(two_bus, _zero_load(two_bus))
    assert res.iterations <= 2
    np.testing.assert_allclose(res.state.vm, 1.0, atol=1e-12)
    f = branch_flows(res.state, two_bus)
    assert np.max(np.abs(f.s_ij)) < 1e-12


def test_two_bus_receiving_voltage_closed_form(two_bus):
    P, Q = 0.5, 0.2
    R, X = 1 / 26, 5 / 26
    a = 1.0 - 2 * (R * P + X * Q)
    v2sq = (a + math.sqrt(a * a - 4 * (R * R + X * X) * (P * P + Q * Q))) / 2
    res = solve_newton(two_bus, LoadScenario(np.array([0.0, P]), np.array([0.0, Q])))
    assert res.state.vm[1] == pytest.approx(math.sqrt(v2sq), abs=1e-10)
    assert res.mismatch < 1e-8


@pytest.mark.parametrize("name", sorted(REF))
def test_newton_matches_reference_powerflow(name):
    net = load_network(name)
    res = solve_newton(net, LoadScenario.nominal(net))
    assert res.mismatch < 1e-8
    np.testing.assert_allclose(res.state.vm, REF[name]["vm"], atol=1e-6)
    np.testing.assert_allclose(np.rad2deg(res.state.va), REF[name]["va_deg"], atol=1e-5)


def test_newton_specified_quantities_hold(ieee30):
    sc = LoadScenario.nominal(ieee30)
    sp = Setpoints.from_case(ieee30)
    res = solve_newton(ieee30, sc, sp)
    s = complex_injection(res.state, build_ybus(ieee30))
    spec_p = -sc.pd.copy()
    np.add.at(spec_p, ieee30.gen_bus, sp.pg)
    nonslack = np.setdiff1d(np.arange(ieee30.n_buses), [ieee30.slack])
    assert np.max(np.abs(s.real[nonslack] - spec_p[nonslack])) < 1e-8
    pq = ieee30.pq
    assert np.max(np.abs(s.imag[pq] + sc.qd[pq])) < 1e-8
    np.testing.assert_allclose(res.state.vm[ieee30.gen_bus], sp.vg, atol=0)


def test_newton_deterministic(case118):
    sc = LoadScenario.nominal(case118)
    a = solve_newton(case118, sc)
    b = solve_newton(case118, sc)
    assert a.state.vm.tobytes() == b.state.vm.tobytes()
    assert a.state.va.tobytes() == b.state.va.tobytes()


def test_newton_nonconvergence(ieee30):
    sc = LoadScenario(ieee30.pd * 8, ieee30.qd * 8)
    with pytest.raises(NonConvergence) as ei:
        solve_newton(ieee30, sc)
    assert ei.value.iterations >= 1


def test_newton_iteration_cap(ieee30):
    with pytest.raises(NonConvergence):
        solve_newton(ieee30, LoadScenario.nominal(ieee30), max_iter=1)


def test_pv_to_pq_switch_holds_q(ieee30):
    sp0 = Setpoints.from_case(ieee30)
    base = solve_newton(ieee30, LoadScenario.nominal(ieee30), sp0)
    _, qg = recover_generation(base.state, ieee30, LoadScenario.nominal(ieee30))
    g = 2
    qfix = qg.copy()
    qfix[g] += 0.05
    sp = Setpoints(sp0.pg, sp0.vg, qg=qfix, q_fixed=np.array([g]))
    res = solve_newton(ieee30, LoadScenario.nominal(ieee30), sp)
    _, qg2 = recover_generation(res.state, ieee30, LoadScenario.nominal(ieee30))
    assert qg2[g] == pytest.approx(qfix[g], abs=1e-8)
    assert res.state.vm[ieee30.gen_bus[g]] > base.state.vm[ieee30.gen_bus[g]]


def test_recover_generation_from_ground_truth(small_ds, ieee30):
    for i in range(len(small_ds)):
        sc = small_ds.scenario(i)
        v = VoltageState(small_ds.vm[i], small_ds.va[i])
        pg, qg = recover_generation(v, ieee30, sc)
        np.testing.assert_allclose(pg, small_ds.pg[i], atol=1e-6)
        np.testing.assert_allclose(qg, small_ds.qg[i], atol=1e-6)


def test_effective_load_from_ground_truth(small_ds, ieee30):
    nongen = ~ieee30.gen_bus_mask
    for i in range(0, len(small_ds), 7):
        sc = small_ds.scenario(i)
        el = effective_load(VoltageState(small_ds.vm[i], small_ds.va[i]), ieee30, sc)
        np.testing.assert_allclose(el[nongen], sc.s[nongen], atol=1e-6)
        np.testing.assert_array_equal(el[~nongen], sc.s[~nongen])


def test_flat_voltages_misrepresent_generation(small_ds, ieee30):
    sc = small_ds.scenario(0)
    pg, _ = recover_generation(VoltageState.flat(ieee30), ieee30, sc)
    assert np.max(np.abs(pg - small_ds.pg[0])) > 0.1


def test_effective_load_zero_case():
    raw = load_case("case9")
    bus = raw.bus.copy()
    bus[:, 2:6] = 0
    br = raw.branch.copy()
    br[:, 4] = 0
    net = build_network(type(raw)(raw.name, raw.base_mva, bus, br, raw.gen, raw.gencost))
    el = effective_load(VoltageState.flat(net), net, _zero_load(net))
    assert np.max(np.abs(el)) < 1e-14


def test_effective_load_zero_two_bus(two_bus):
    el = effective_load(VoltageState.flat(two_bus), two_bus, _zero_load(two_bus))
    assert np.all(el == 0)


def test_qg_sensitivity_matches_jacobian(ieee30):
    res = solve_newton(ieee30, LoadScenario.nominal(ieee30))
    sc = LoadScenario.nominal(ieee30)
    g = 3
    b = ieee30.gen_bus[g]
    h = 1e-4
    vp = res.state.copy()
    vp.vm[b] += h
    _, q0 = recover_generation(res.state, ieee30, sc)
    _, q1 = recover_generation(vp, ieee30, sc)
    _, dvm = kernels.dsbus_dv(build_ybus(ieee30).Y, res.state.v)
    pred = dvm[b, b].imag * h
    assert q1[g] - q0[g] == pytest.approx(pred, rel=1e-3)


def test_two_bus_branch_flow_hand_formula(two_bus):
    vi, vj, d = 1.01, 0.97, 0.037
    g, b = 1.0, -5.0
    f = branch_flows(VoltageState(np.array([vi, vj]), np.array([d, 0.0])), two_bus)
    p = g * vi**2 - vi * vj * (g * math.cos(d) + b * math.sin(d))
    q = -b * vi**2 - vi * vj * (g * math.sin(d) - b * math.cos(d))
    assert f.p_ij[0] == pytest.approx(p, abs=1e-13)
    assert f.q_ij[0] == pytest.approx(q, abs=1e-13)


def test_open_branch_absent():
    row = "\t1\t2\t0.1\t0.3\t0\t0\t0\t0\t0\t0\t0\t-360\t360;\n"
    text = two_bus_text(**{"];\n%% bus Pg": row + "];\n%% bus Pg"})
    net = build_network(parse_case(text))
    assert net.n_branches == 1
    assert len(branch_flows(VoltageState.flat(net), net).p_ij) == 1


def _random_state(net, seed):
    r = np.random.default_rng(seed)
    return VoltageState(1 + 0.08 * r.standard_normal(net.n_buses), 0.3 * r.standard_normal(net.n_buses))


@given(st.integers(0, 2**32 - 1))
def test_conservation_any_state(seed):
    net = load_network("case_ieee30")
    y = build_ybus(net)
    v = _random_state(net, seed)
    s = complex_injection(v, y)
    f = branch_flows(v, net, y)
    shunt = np.sum(np.abs(v.v) ** 2 * np.conj(y.ysh))
    assert abs(s.sum() - (np.sum(f.s_ij + f.s_ji) + shunt)) < 1e-9


@given(st.integers(0, 2**32 - 1))
def test_loss_is_series_i2r(seed):
    net = load_network("case_ieee30")
    v = _random_state(net, seed)
    f = branch_flows(v, net)
    V = v.v
    a = net.tap * np.exp(1j * net.shift)
    i_series = (V[net.f] / a - V[net.t]) * net.ys
    np.testing.assert_allclose(f.p_loss, np.abs(i_series) ** 2 * net.r, atol=1e-10)
    assert np.all(f.p_loss >= -1e-10)
