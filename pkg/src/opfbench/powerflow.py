"""AC power flow: injections, branch flows, Newton-Raphson, and recovery of
generation / effective load from a voltage profile."""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from . import kernels
from .errors import NonConvergence, SingularJacobian
from .grid import build_ybus


@dataclass(frozen=True)
class LoadScenario:
    pd: np.ndarray
    qd: np.ndarray

    @classmethod
    def nominal(cls, net):
        return cls(np.array(net.pd), np.array(net.qd))

    @property
    def s(self):
        return self.pd + 1j * self.qd


@dataclass(frozen=True)
class VoltageState:
    vm: np.ndarray
    va: np.ndarray

    @classmethod
    def flat(cls, net):
        return cls(np.ones(net.n_buses), np.full(net.n_buses, net.va_ref))

    @property
    def v(self):
        return self.vm * np.exp(1j * self.va)

    def copy(self):
        return VoltageState(np.array(self.vm), np.array(self.va))


@dataclass(frozen=True)
class BranchFlow:
    p_ij: np.ndarray
    q_ij: np.ndarray
    p_ji: np.ndarray
    q_ji: np.ndarray

    @property
    def p_loss(self):
        return self.p_ij + self.p_ji

    @property
    def s_ij(self):
        return self.p_ij + 1j * self.q_ij

    @property
    def s_ji(self):
        return self.p_ji + 1j * self.q_ji


@dataclass(frozen=True)
class Setpoints:
    """Per-generator active power and voltage-magnitude setpoint.

    Generators listed in ``q_fixed`` hold ``qg`` instead of ``vg`` (their bus
    is solved as a PQ bus); a listed slack generator keeps its angle reference
    but lets its magnitude float."""

    pg: np.ndarray
    vg: np.ndarray
    qg: np.ndarray = None
    q_fixed: np.ndarray = None

    @classmethod
    def from_case(cls, net):
        return cls(np.array(net.pg0), np.array(net.vg))


@dataclass(frozen=True)
class PowerFlowResult:
    state: VoltageState
    iterations: int
    mismatch: float


def _ybus(net, y):
    if y is None:
        return build_ybus(net)
    return y


def complex_injection(v, y):
    """S_inj = V * conj(Y V) for a VoltageState (or complex vector) and Ybus."""
    V = v.v if isinstance(v, VoltageState) else np.asarray(v)
    Y = y.Y if hasattr(y, "Y") else y
    return V * np.conj(Y @ V)


def branch_flows(v, net, y=None):
    y = _ybus(net, y)
    V = v.v if isinstance(v, VoltageState) else v
    vf, vt = V[net.f], V[net.t]
    sf = vf * np.conj(y.yff * vf + y.yft * vt)
    st = vt * np.conj(y.ytf * vf + y.ytt * vt)
    return BranchFlow(sf.real, sf.imag, st.real, st.imag)


def _single_gen_per_bus(net):
    if len(np.unique(net.gen_bus)) != net.n_gens:
        raise ValueError("recover_generation needs one generator record per bus; aggregate parallel units first")


def recover_generation(v, net, scenario, y=None):
    """(Pg, Qg) per generator implied by the voltages: S_g = S_inj + S_l at its bus."""
    _single_gen_per_bus(net)
    s = complex_injection(v, _ybus(net, y))
    sg = s[net.gen_bus] + scenario.pd[net.gen_bus] + 1j * scenario.qd[net.gen_bus]
    return sg.real, sg.imag


def effective_load(v, net, scenario, y=None):
    """Load implied by the voltages.  Generator buses report the scenario load,
    since any mismatch there is attributed to generation."""
    s = complex_injection(v, _ybus(net, y))
    out = -s
    g = net.gen_bus_mask
    out[g] = scenario.pd[g] + 1j * scenario.qd[g]
    return out


def _spec_injection(net, scenario, pg, qg=None):
    sbus = -(scenario.pd + 1j * scenario.qd)
    qg = np.zeros(net.n_gens) if qg is None else qg
    np.add.at(sbus, net.gen_bus, pg + 1j * qg)
    return sbus


def solve_newton(net, scenario, setpoints=None, tol=1e-8, max_iter=30, init=None, y=None, max_halvings=4):
    """Polar Newton-Raphson.  Returns a PowerFlowResult; raises NonConvergence."""
    y = _ybus(net, y)
    Y = y.Y
    sp = setpoints or Setpoints.from_case(net)
    pv, pq = net.pv, net.pq
    gb = np.asarray(net.gen_bus)
    vfix = np.ones(net.n_gens, dtype=bool)
    qg_inj = np.array(net.qg0)
    if sp.q_fixed is not None and len(sp.q_fixed):
        qf = np.asarray(sp.q_fixed, dtype=int)
        vfix[qf] = False
        qg_inj[qf] = np.asarray(sp.qg)[qf]
        sw = np.unique(gb[qf])
        pv = np.setdiff1d(pv, sw)
        # a switched slack keeps its angle but gets a Q equation
        pq = np.r_[pq, sw]
    pvpq = np.r_[pv, np.setdiff1d(pq, [net.slack])]
    npvpq = len(pvpq)

    if init is None:
        vm = np.ones(net.n_buses)
        va = np.full(net.n_buses, net.va_ref)
    else:
        vm, va = np.array(init.vm, dtype=float), np.array(init.va, dtype=float)
        va[net.slack] = net.va_ref
    # voltage setpoints at PV and slack buses that are not switched
    vm[gb[vfix]] = np.asarray(sp.vg)[vfix]
    # Qg only enters at buses whose Q balance is enforced
    sbus = _spec_injection(net, scenario, sp.pg, qg_inj)

    def mismatch(vm, va):
        V = vm * np.exp(1j * va)
        mis = V * np.conj(Y @ V) - sbus
        return V, np.r_[mis.real[pvpq], mis.imag[pq]]

    V, F = mismatch(vm, va)
    norm = np.max(np.abs(F)) if F.size else 0.0
    it = 0
    while norm >= tol:
        if it >= max_iter:
            raise NonConvergence(it, norm)
        it += 1
        dva, dvm = kernels.dsbus_dv(Y, V)
        J = np.empty((len(F), len(F)))
        J[:npvpq, :npvpq] = dva.real[np.ix_(pvpq, pvpq)]
        J[:npvpq, npvpq:] = dvm.real[np.ix_(pvpq, pq)]
        J[npvpq:, :npvpq] = dva.imag[np.ix_(pq, pvpq)]
        J[npvpq:, npvpq:] = dvm.imag[np.ix_(pq, pq)]
        try:
            lu = sla.lu_factor(J, check_finite=True)
            dx = -sla.lu_solve(lu, F)
        except (sla.LinAlgError, ValueError) as exc:
            raise SingularJacobian(str(exc)) from None
        if not np.all(np.isfinite(dx)) or np.min(np.abs(np.diag(lu[0]))) < 1e-14 * max(1.0, np.max(np.abs(J))):
            raise SingularJacobian("power-flow Jacobian is singular")
        step = 1.0
        for h in range(max_halvings + 1):
            vm_n = vm.copy()
            va_n = va.copy()
            va_n[pvpq] += step * dx[:npvpq]
            vm_n[pq] += step * dx[npvpq:]
            V_n, F_n = mismatch(vm_n, va_n)
            n_new = np.max(np.abs(F_n))
            if n_new < norm or h == max_halvings:
                break
            step *= 0.5
        vm, va, V, F, norm = vm_n, va_n, V_n, F_n, n_new
        if not np.isfinite(norm):
            raise NonConvergence(it, norm)
    return PowerFlowResult(VoltageState(vm, va), it, float(norm))
