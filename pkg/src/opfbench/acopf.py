"""Ground-truth AC-OPF by sequential linearization.

Each outer iteration linearizes branch flows and shunts at the current
AC-feasible point, solves a trust-region QP with elastic nodal balance, then
restores exact power balance with Newton-Raphson while holding the proposed
non-slack Pg and generator-bus voltages.  Steps are accepted on an exact
penalty merit (cost + penalty * bound violation) with a ratio test.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import NonConvergence, SingularJacobian, SolverError
from .grid import build_ybus
from .linopf import build_linear_opf, dcopf
from .powerflow import Setpoints, VoltageState, branch_flows, recover_generation, solve_newton
from .qp import solve_qp


@dataclass
class AcopfOptions:
    max_iter: int = 40
    dv_box: float = 0.05
    dva_box: float = 0.1
    min_box: float = 1e-5
    obj_tol: float = 1e-7
    mismatch_tol: float = 1e-6
    bound_tol: float = 1e-8
    pf_tol: float = 1e-10
    qp_tol: float = 1e-9
    penalty_factor: float = 50.0
    branch_mode: str = "s"
    second_order: bool = True


@dataclass
class OpfSolution:
    state: VoltageState
    pg: np.ndarray
    qg: np.ndarray
    objective: float
    converged: bool
    mismatch: float
    violation: float
    trace: list = field(default_factory=list)

    @property
    def iterations(self):
        return len(self.trace)


def dispatch_cost(pg, net):
    """Total generation cost in $/h for a per-unit dispatch."""
    return float(net.cost(pg))


def _violation(net, state, pg, qg, y):
    """Per-family maximum bound violation (pu); zero when feasible."""
    vm = state.vm
    fl = branch_flows(state, net, y)
    lim = np.isfinite(net.rate)
    sfrom = np.abs(fl.s_ij[lim])
    sto = np.abs(fl.s_ji[lim])
    parts = [
        np.maximum(vm - net.vmax, 0), np.maximum(net.vmin - vm, 0),
        np.maximum(pg - net.pmax, 0), np.maximum(net.pmin - pg, 0),
        np.maximum(qg - net.qmax, 0), np.maximum(net.qmin - qg, 0),
        np.maximum(sfrom - net.rate[lim], 0), np.maximum(sto - net.rate[lim], 0),
    ]
    tot = sum(float(np.sum(p)) for p in parts)
    mx = max(float(np.max(p, initial=0.0)) for p in parts)
    return tot, mx


def _mismatch(net, scenario, state, pg, qg, y):
    V = state.v
    s = V * np.conj(y.Y @ V)
    sbus = -(scenario.pd + 1j * scenario.qd)
    np.add.at(sbus, net.gen_bus, pg + 1j * qg)
    return float(np.max(np.abs(s - sbus)))


def balance_curvature(net, state, y_eq, y):
    """PSD part of the Hessian of y' (Cg Pg - S_inj - S_d) over (va, vm)."""
    n = net.n_buses
    lp, lq = y_eq[:n], y_eq[n:]
    haa_p, hav_p, hva_p, hvv_p = kernels.d2sbus_dv2(y.Y, state.v, lp.astype(complex))
    haa_q, hav_q, hva_q, hvv_q = kernels.d2sbus_dv2(y.Y, state.v, lq.astype(complex))
    H = -np.block([
        [haa_p.real + haa_q.imag, hav_p.real + hav_q.imag],
        [hva_p.real + hva_q.imag, hvv_p.real + hvv_q.imag],
    ])
    H = 0.5 * (H + H.T)
    w, U = np.linalg.eigh(H)
    w = np.maximum(w, 0.0)
    return (U * w) @ U.T


def _q_active(net, qg, tol=1e-7):
    """Generators whose reactive output sits on a bound in the QP step."""
    lo = qg <= net.qmin + tol
    hi = qg >= net.qmax - tol
    idx = np.flatnonzero((lo | hi) & (net.qmax > net.qmin))
    return idx, np.where(hi, net.qmax, net.qmin)


def _restore(net, scenario, pg, vg, init, y, tol, qg=None):
    sp = Setpoints(pg, vg)
    if qg is not None:
        idx, qb = _q_active(net, qg)
        if len(idx):
            sp = Setpoints(pg, vg, qb, idx)
    res = solve_newton(net, scenario, sp, tol=tol, init=init, y=y)
    pgr, qgr = recover_generation(res.state, net, scenario, y)
    return res.state, pgr, qgr


def _start_point(net, scenario, y, opts, start):
    if start is not None:
        init = start.state
        pg = np.array(start.pg)
        vg = np.array(start.state.vm[net.gen_bus])
    else:
        try:
            pg = dcopf(net, scenario).pg
        except SolverError:
            pg = np.clip(net.pg0, net.pmin, net.pmax)
        vg = np.clip(net.vg, net.vmin[net.gen_bus], net.vmax[net.gen_bus])
        init = None
    try:
        return _restore(net, scenario, pg, vg, init, y, opts.pf_tol)
    except (NonConvergence, SingularJacobian):
        est = _restore(net, scenario, np.array(net.pg0), np.array(net.vg), None, y, opts.pf_tol)
        return est


def _try_step(net, scenario, state, x, lay, y, opts, penalty, merit, pred):
    """Restore the QP step to an AC-feasible point; return (ok, ratio, candidate)."""
    init = VoltageState(state.vm + x[lay.vm], state.va + x[lay.va])
    vg_new = init.vm[net.gen_bus]
    try:
        st_new, pg_r, qg_r = _restore(net, scenario, x[lay.pg], vg_new, init, y, opts.pf_tol, qg=x[lay.qg])
    except (NonConvergence, SingularJacobian):
        return False, -np.inf, None
    cost_new = dispatch_cost(pg_r, net)
    vs_new, vmax_new = _violation(net, st_new, pg_r, qg_r, y)
    merit_new = cost_new + penalty * vs_new
    actual = merit - merit_new
    scale = max(1.0, abs(merit))
    if pred <= 1e-12 * scale:
        ratio = 1.0 if actual >= -1e-12 * scale else -1.0
    else:
        ratio = actual / pred
    return True, ratio, (st_new, pg_r, qg_r, cost_new, merit_new, vmax_new)


def solve_acopf(net, scenario, opts=None, start=None, y=None):
    opts = opts or AcopfOptions()
    y = build_ybus(net) if y is None else y
    mc = np.max(2 * net.c2 * np.maximum(np.abs(net.pmax), np.abs(net.pmin)) + np.abs(net.c1), initial=1.0)
    penalty = opts.penalty_factor * max(mc, 1.0)

    try:
        state, pg, qg = _start_point(net, scenario, y, opts, start)
    except (NonConvergence, SingularJacobian) as exc:
        flat = VoltageState.flat(net)
        return OpfSolution(flat, np.array(net.pg0), np.array(net.qg0), np.nan, False, np.inf, np.inf,
                           [{"event": "no AC-feasible start", "error": str(exc)}])

    cost = dispatch_cost(pg, net)
    vsum, vmax = _violation(net, state, pg, qg, y)
    merit = cost + penalty * vsum
    dv, dva = opts.dv_box, opts.dva_box
    trace = []
    converged = False
    lim_rows = np.flatnonzero(np.isfinite(net.rate))
    y_eq = None

    for it in range(opts.max_iter):
        curv = None
        if opts.second_order and y_eq is not None:
            curv = balance_curvature(net, state, y_eq, y)
        qp, lay = build_linear_opf(
            net, scenario, state.vm, state.va, y=y, branch_rows=lim_rows, branch_mode=opts.branch_mode,
            dv_box=dv, dva_box=dva, penalty=penalty, curvature=curv,
        )
        try:
            sol = solve_qp(qp, tol=opts.qp_tol)
        except SolverError as exc:
            trace.append({"iter": it, "event": "qp failed", "error": str(exc), "box": dv})
            dv, dva = dv * 0.25, dva * 0.25
            if dv < opts.min_box:
                break
            continue
        x = sol.x
        pred = merit - (sol.objective + float(np.sum(net.c0)))
        ok, ratio, cand = _try_step(net, scenario, state, x, lay, y, opts, penalty, merit, pred)
        soc = False
        if ok and ratio < 0.1:
            # second-order correction: shift the Vm/Qg limits by the model error
            st_c, pg_c, qg_c = cand[0], cand[1], cand[2]
            qp2, _ = build_linear_opf(
                net, scenario, state.vm, state.va, y=y, branch_rows=lim_rows, branch_mode=opts.branch_mode,
                dv_box=dv, dva_box=dva, penalty=penalty, curvature=curv,
                vm_shift=st_c.vm - (state.vm + x[lay.vm]), qg_shift=qg_c - x[lay.qg],
            )
            try:
                sol2 = solve_qp(qp2, tol=opts.qp_tol)
                ok2, ratio2, cand2 = _try_step(net, scenario, state, sol2.x, lay, y, opts, penalty, merit, pred)
                if ok2 and ratio2 > ratio:
                    ok, ratio, cand, x, soc = ok2, ratio2, cand2, sol2.x, True
            except SolverError:
                pass
        ddv = x[lay.vm]
        dth = x[lay.va]
        if ok:
            st_new, pg_r, qg_r, cost_new, merit_new, vmax_new = cand
        step = max(float(np.max(np.abs(ddv), initial=0.0)), float(np.max(np.abs(dth), initial=0.0)))
        entry = {"iter": it, "ratio": float(ratio), "box": dv, "step": step, "soc": soc}
        if ok and ratio >= 0.1:
            y_eq = sol.y_eq
            rel = abs(cost_new - cost) / max(1.0, abs(cost_new))
            state, pg, qg = st_new, pg_r, qg_r
            cost, merit, vmax = cost_new, merit_new, vmax_new
            mis = _mismatch(net, scenario, state, pg, qg, y)
            entry.update(objective=cost, mismatch=mis, violation=vmax, accepted=True)
            trace.append(entry)
            hit = step >= 0.99 * min(dv, 1e9)
            if ratio > 0.75 and hit:
                dv, dva = min(2 * dv, opts.dv_box), min(2 * dva, opts.dva_box)
            if rel < opts.obj_tol and mis < opts.mismatch_tol and vmax <= opts.bound_tol:
                converged = True
                break
        else:
            entry.update(objective=cost, accepted=False)
            trace.append(entry)
            dv, dva = dv * 0.25, dva * 0.25
            if dv < opts.min_box:
                # the current point may already be optimal to working precision
                mis = _mismatch(net, scenario, state, pg, qg, y)
                if vmax <= opts.bound_tol and mis < opts.mismatch_tol and step < 1e-6:
                    converged = True
                break

    mis = _mismatch(net, scenario, state, pg, qg, y)
    return OpfSolution(state, pg, qg, cost, converged, mis, vmax, trace)
