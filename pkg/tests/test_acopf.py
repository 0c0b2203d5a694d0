from dataclasses import replace

import numpy as np
import pytest

from opfbench.acopf import AcopfOptions, dispatch_cost, solve_acopf
from opfbench.caseparser import parse_case
from opfbench.errors import NonConvergence
from opfbench.grid import build_network, build_ybus
from opfbench.linopf import dcopf
from opfbench.powerflow import LoadScenario, Setpoints, branch_flows, complex_injection, recover_generation, solve_newton

from conftest import TWO_BUS, two_bus_text
from oracles import ACOPF_OBJECTIVE as ORACLE



def _check_converged(net, sc, sol):
    assert sol.converged
    assert sol.mismatch < 1e-6
    assert sol.violation <= 1e-8
    vm = sol.state.vm
    assert np.all(vm >= net.vmin - 1e-8) and np.all(vm <= net.vmax + 1e-8)
    assert np.all(sol.pg >= net.pmin - 1e-8) and np.all(sol.pg <= net.pmax + 1e-8)
    assert np.all(sol.qg >= net.qmin - 1e-8) and np.all(sol.qg <= net.qmax + 1e-8)
    pg, qg = recover_generation(sol.state, net, sc)
    np.testing.assert_allclose(pg, sol.pg, atol=1e-6)
    np.testing.assert_allclose(qg, sol.qg, atol=1e-6)


@pytest.mark.parametrize("name", sorted(ORACLE))
def test_objective_matches_reference_solver(request, name):
    net = request.getfixturevalue({"case_ieee30": "ieee30"}.get(name, name))
    sc = LoadScenario.nominal(net)
    sol = solve_acopf(net, sc)
    _check_converged(net, sc, sol)
    assert sol.objective == pytest.approx(ORACLE[name], rel=5e-3)
    # an O(1e-7) agreement is what the solver actually reaches; a drift here is a regression
    assert sol.objective == pytest.approx(ORACLE[name], rel=1e-6)


def test_case30_dataset_grid_voltage_level(ieee30):
    sol = solve_acopf(ieee30, LoadScenario.nominal(ieee30))
    assert 1.02 <= sol.state.vm.mean() <= 1.06


def test_dispatch_cost_examples(two_bus):
    assert dispatch_cost(np.zeros(1), two_bus) == pytest.approx(float(np.sum(two_bus.c0)))
    net = replace(two_bus, c2=np.array([200.0]), c1=np.array([300.0]), c0=np.array([0.0]))
    assert dispatch_cost(np.array([0.5]), net) == pytest.approx(200.0, abs=1e-12)


def test_dispatch_cost_matches_stored_objective(small_ds, ieee30):
    for i in range(len(small_ds)):
        assert dispatch_cost(small_ds.pg[i], ieee30) == pytest.approx(small_ds.objective[i], abs=1e-9)


def test_zero_load(two_bus):
    z = np.zeros(2)
    sol = solve_acopf(two_bus, LoadScenario(z, z))
    assert sol.converged
    np.testing.assert_allclose(sol.pg, 0, atol=1e-7)
    assert sol.objective == pytest.approx(float(np.sum(two_bus.c0)), abs=1e-6)
    assert np.max(np.abs(sol.state.vm - sol.state.vm[0])) < 1e-6


def _merit_order_case():
    text = two_bus_text(**{
        "\t2\t1\t50\t20": "\t2\t2\t50\t20",
        "\t1\t0\t0\t300\t-300\t1\t100\t1\t250\t0;\n": "\t1\t0\t0\t300\t-300\t1\t100\t1\t250\t0;\n"
                                                     "\t2\t0\t0\t300\t-300\t1\t100\t1\t250\t0;\n",
        "\t2\t0\t0\t3\t0.02\t3\t0;\n": "\t2\t0\t0\t3\t0.02\t3\t0;\n\t2\t0\t0\t3\t0.02\t40\t0;\n",
    })
    assert text != TWO_BUS
    return build_network(parse_case(text))


def test_two_bus_merit_order():
    net = _merit_order_case()
    assert net.n_gens == 2
    sc = LoadScenario.nominal(net)
    sol = solve_acopf(net, sc)
    _check_converged(net, sc, sol)
    assert sol.pg[1] == pytest.approx(0.0, abs=1e-6)
    loss = branch_flows(sol.state, net).p_loss.sum()
    assert loss > 0
    assert sol.pg[0] == pytest.approx(sc.pd.sum() + loss, abs=1e-6)


def test_solution_satisfies_power_balance(case9):
    sc = LoadScenario(case9.pd * 1.2, case9.qd * 0.8)
    sol = solve_acopf(case9, sc)
    _check_converged(case9, sc, sol)
    s = complex_injection(sol.state, build_ybus(case9))
    gen = np.zeros(case9.n_buses, complex)
    np.add.at(gen, case9.gen_bus, sol.pg + 1j * sol.qg)
    assert np.max(np.abs(gen - sc.s - s)) < 1e-6


def test_trace_monotone_once_feasible(small_ds, ieee30):
    for i in range(0, len(small_ds), 6):
        sol = solve_acopf(ieee30, small_ds.scenario(i))
        acc = [t for t in sol.trace if t.get("accepted")]
        for a, b in zip(acc, acc[1:]):
            if a["violation"] <= 1e-8:
                assert b["objective"] <= a["objective"] * (1 + 1e-7) + 1e-9


def test_reproduces_dataset_labels(small_ds, ieee30):
    # datasets warm-start every scenario from the nominal optimum
    nominal = solve_acopf(ieee30, LoadScenario.nominal(ieee30))
    sol = solve_acopf(ieee30, small_ds.scenario(0), start=nominal)
    np.testing.assert_array_equal(sol.state.vm, small_ds.vm[0])
    assert sol.objective == small_ds.objective[0]


def test_ac_optimum_dominates_restored_dc(small_ds, ieee30):
    wins, total = 0, 0
    for i in range(len(small_ds)):
        sc = small_ds.scenario(i)
        dc = dcopf(ieee30, sc)
        try:
            pf = solve_newton(ieee30, sc, Setpoints(dc.pg, ieee30.vg))
        except NonConvergence:
            continue
        pg, _ = recover_generation(pf.state, ieee30, sc)
        total += 1
        wins += small_ds.objective[i] <= dispatch_cost(pg, ieee30) * (1 + 1e-9)
    assert total >= 0.9 * len(small_ds)
    assert wins >= 0.95 * total


def test_iteration_cap_reports_unconverged(ieee30):
    sol = solve_acopf(ieee30, LoadScenario.nominal(ieee30), AcopfOptions(max_iter=1))
    assert not sol.converged
    assert sol.iterations == 1


def test_infeasible_load_no_ac_start(ieee30):
    sol = solve_acopf(ieee30, LoadScenario(ieee30.pd * 8, ieee30.qd * 8))
    assert not sol.converged
    assert np.isnan(sol.objective)
