"""Linear OPF models: DC-OPF, first-order (hot-start) OPF around a reference
operating point, and error bounds for the linearization."""

from dataclasses import dataclass

import numpy as np

from .errors import EmptyTrainSet
from .grid import build_ybus
from .powerflow import LoadScenario, VoltageState, branch_flows
from .qp import QuadraticProgram, solve_qp


# --------------------------------------------------------------------------
# reference point and branch linearization


@dataclass(frozen=True)
class LinearizationPoint:
    vm: np.ndarray
    va: np.ndarray
    delta: np.ndarray  # va[f] - va[t] per branch
    p_ij: np.ndarray
    q_ij: np.ndarray
    p_ji: np.ndarray
    q_ji: np.ndarray

    @classmethod
    def at(cls, net, state, y=None):
        vm = np.array(state.vm, dtype=float)
        va = np.array(state.va, dtype=float)
        fl = branch_flows(VoltageState(vm, va), net, y)
        return cls(vm, va, va[net.f] - va[net.t], fl.p_ij, fl.q_ij, fl.p_ji, fl.q_ji)

    @property
    def state(self):
        return VoltageState(self.vm, self.va)


@dataclass(frozen=True)
class BranchLinearModel:
    """Affine flow models in (dv_i, dv_j, d_delta) at both ends of each branch.

    Arrays have one entry per branch (or are scalars for a single branch).
    The '_ij' end is the from end, '_ji' the to end.
    """

    p_ij: np.ndarray
    p_ij_vi: np.ndarray
    p_ij_vj: np.ndarray
    p_ij_d: np.ndarray
    q_ij: np.ndarray
    q_ij_vi: np.ndarray
    q_ij_vj: np.ndarray
    q_ij_d: np.ndarray
    p_ji: np.ndarray
    p_ji_vi: np.ndarray
    p_ji_vj: np.ndarray
    p_ji_d: np.ndarray
    q_ji: np.ndarray
    q_ji_vi: np.ndarray
    q_ji_vj: np.ndarray
    q_ji_d: np.ndarray

    def evaluate(self, dvi, dvj, dd):
        """(p_ij, q_ij, p_ji, q_ji) of the linear models."""
        return (
            self.p_ij + self.p_ij_vi * dvi + self.p_ij_vj * dvj + self.p_ij_d * dd,
            self.q_ij + self.q_ij_vi * dvi + self.q_ij_vj * dvj + self.q_ij_d * dd,
            self.p_ji + self.p_ji_vi * dvi + self.p_ji_vj * dvj + self.p_ji_d * dd,
            self.q_ji + self.q_ji_vi * dvi + self.q_ji_vj * dvj + self.q_ji_d * dd,
        )

    def loss(self, dvi, dvj, dd):
        p1, _, p2, _ = self.evaluate(dvi, dvj, dd)
        return p1 + p2

    def __getitem__(self, k):
        return BranchLinearModel(**{name: getattr(self, name)[k] for name in self.__dataclass_fields__})


def _terminal(net, y=None):
    y = build_ybus(net) if y is None else y
    return y.yff, y.yft, y.ytf, y.ytt


def linear_models(net, vm, va, y=None):
    """First-order models of all branch flows at (vm, va); vectorized.

    Constants are the exact flows at (vm, va), so a zero step reproduces them bit for bit."""
    y = build_ybus(net) if y is None else y
    yff, yft, ytf, ytt = _terminal(net, y)
    fl = branch_flows(VoltageState(vm, va), net, y)
    vi, vj = vm[net.f], vm[net.t]
    d = va[net.f] - va[net.t]
    c, s = np.cos(d), np.sin(d)
    Gff, Bff, Gft, Bft = yff.real, yff.imag, yft.real, yft.imag
    Gtf, Btf, Gtt, Btt = ytf.real, ytf.imag, ytt.real, ytt.imag
    vv = vi * vj

    a_ij = Gft * c + Bft * s  # p coupling term at the from end
    b_ij = Gft * s - Bft * c  # q coupling term
    a_ji = Gtf * c - Btf * s
    b_ji = -Gtf * s - Btf * c
    return BranchLinearModel(
        p_ij=fl.p_ij,
        p_ij_vi=2 * Gff * vi + vj * a_ij,
        p_ij_vj=vi * a_ij,
        p_ij_d=-vv * b_ij,
        q_ij=fl.q_ij,
        q_ij_vi=-2 * Bff * vi + vj * b_ij,
        q_ij_vj=vi * b_ij,
        q_ij_d=vv * a_ij,
        p_ji=fl.p_ji,
        p_ji_vi=vj * a_ji,
        p_ji_vj=2 * Gtt * vj + vi * a_ji,
        p_ji_d=vv * b_ji,
        q_ji=fl.q_ji,
        q_ji_vi=vj * b_ji,
        q_ji_vj=-2 * Btt * vj + vi * b_ji,
        q_ji_d=-vv * a_ji,
    )


def linearize_branch(net, k, ref, y=None):
    """Linear model of branch ``k`` at a LinearizationPoint."""
    return linear_models(net, ref.vm, ref.va, y)[k]


def linear_loss_coefficients(g, vi, vj, delta):
    """Loss of a plain series branch (admittance g + jb, no charging or tap):
    returns (constant, d/dvi, d/dvj, d/ddelta)."""
    c, s = np.cos(delta), np.sin(delta)
    p0 = g * (vi**2 + vj**2 - 2 * vi * vj * c)
    return p0, 2 * g * (vi - vj * c), 2 * g * (vj - vi * c), 2 * g * vi * vj * s


@dataclass(frozen=True)
class BusSensitivity:
    """Linearized injections: P ~ p0 + Pvm dvm + Pva dva (same for Q)."""

    p0: np.ndarray
    q0: np.ndarray
    Pvm: np.ndarray
    Pva: np.ndarray
    Qvm: np.ndarray
    Qva: np.ndarray


def bus_sensitivity(net, vm, va, y=None, models=None):
    """Assemble bus injection sensitivities from the branch models plus shunts."""
    y = build_ybus(net) if y is None else y
    lm = linear_models(net, vm, va, y) if models is None else models
    n = net.n_buses
    f, t = net.f, net.t
    p0 = np.bincount(f, lm.p_ij, n) + np.bincount(t, lm.p_ji, n) + net.gs * vm**2
    q0 = np.bincount(f, lm.q_ij, n) + np.bincount(t, lm.q_ji, n) - net.bs * vm**2
    Pvm = _scatter(n, f, t, lm.p_ij_vi, lm.p_ij_vj, lm.p_ji_vi, lm.p_ji_vj)
    Qvm = _scatter(n, f, t, lm.q_ij_vi, lm.q_ij_vj, lm.q_ji_vi, lm.q_ji_vj)
    # d delta = d va_f - d va_t
    Pva = _scatter(n, f, t, lm.p_ij_d, -lm.p_ij_d, lm.p_ji_d, -lm.p_ji_d)
    Qva = _scatter(n, f, t, lm.q_ij_d, -lm.q_ij_d, lm.q_ji_d, -lm.q_ji_d)
    Pvm[np.diag_indices(n)] += 2 * net.gs * vm
    Qvm[np.diag_indices(n)] -= 2 * net.bs * vm
    return BusSensitivity(p0, q0, Pvm, Pva, Qvm, Qva)


def _scatter(n, f, t, ff, ft, tf, tt):
    # rows: bus of the flow end; cols: variable at f or t
    M = np.bincount(f * n + f, ff, n * n)
    M += np.bincount(f * n + t, ft, n * n)
    M += np.bincount(t * n + f, tf, n * n)
    M += np.bincount(t * n + t, tt, n * n)
    return M.reshape(n, n)


# --------------------------------------------------------------------------
# QP assembly shared by hot-start OPF and the SLP solver


@dataclass
class LinearOpfLayout:
    n: int
    g: int
    n_br: int = 0  # elastic columns for branch rows
    elastic: bool = False

    @property
    def va(self):
        return slice(0, self.n)

    @property
    def vm(self):
        return slice(self.n, 2 * self.n)

    @property
    def pg(self):
        return slice(2 * self.n, 2 * self.n + self.g)

    @property
    def qg(self):
        return slice(2 * self.n + self.g, 2 * self.n + 2 * self.g)

    @property
    def e_eq(self):
        # [e+ (2n), e- (2n)]
        s = 2 * self.n + 2 * self.g
        return slice(s, s + (4 * self.n if self.elastic else 0))

    @property
    def e_br(self):
        s = self.e_eq.stop
        return slice(s, s + self.n_br)

    @property
    def size(self):
        return self.e_br.stop


def build_linear_opf(net, scenario, vm, va, sens=None, models=None, y=None, *,
                     branch_rows=None, branch_mode="p", dv_box=None, dva_box=None,
                     penalty=None, fix_slack=True, curvature=None, vm_shift=None, qg_shift=None):
    """QP in (dva, dvm, Pg, Qg) linearized at (vm, va).

    branch_mode 'p': |p_lin| <= rate at both ends (linear MW limit).
    branch_mode 's': 2 p dp + 2 q dq <= rate^2 - |s|^2 at both ends (linearized MVA^2).
    With ``penalty`` set, nodal balance rows and branch rows get nonnegative
    slack columns priced at ``penalty`` per pu.
    ``curvature`` (2n x 2n, PSD) is added to the objective over (dva, dvm).
    ``vm_shift`` / ``qg_shift`` move the Vm and Qg limits by a known offset.
    """
    n, g = net.n_buses, net.n_gens
    y = build_ybus(net) if y is None else y
    lm = linear_models(net, vm, va, y) if models is None else models
    sens = bus_sensitivity(net, vm, va, y, lm) if sens is None else sens

    if branch_rows is None:
        branch_rows = np.flatnonzero(np.isfinite(net.rate))
    branch_rows = np.asarray(branch_rows, dtype=int)
    nbr_rows = 2 * len(branch_rows) * (2 if branch_mode == "p" else 1)
    elastic = penalty is not None
    lay = LinearOpfLayout(n, g, nbr_rows if elastic else 0, elastic)
    N = lay.size

    Cg = net.gen_incidence()
    A = np.zeros((2 * n, N))
    A[:n, lay.va] = -sens.Pva
    A[:n, lay.vm] = -sens.Pvm
    A[:n, lay.pg] = Cg
    A[n:, lay.va] = -sens.Qva
    A[n:, lay.vm] = -sens.Qvm
    A[n:, lay.qg] = Cg
    b = np.r_[scenario.pd + sens.p0, scenario.qd + sens.q0]
    if elastic:
        e = lay.e_eq.start
        A[:, e:e + 2 * n] = np.eye(2 * n)
        A[:, e + 2 * n:e + 4 * n] = -np.eye(2 * n)

    lb = np.empty(N)
    ub = np.empty(N)
    lb[lay.va], ub[lay.va] = -np.inf, np.inf
    if fix_slack:
        lb[net.slack] = ub[net.slack] = net.va_ref - va[net.slack]
    # shifts carry the model error of a rejected step (second-order correction)
    vs = 0.0 if vm_shift is None else vm_shift
    qs = 0.0 if qg_shift is None else qg_shift
    lb[lay.vm], ub[lay.vm] = net.vmin - vm - vs, net.vmax - vm - vs
    lb[lay.pg], ub[lay.pg] = net.pmin, net.pmax
    lb[lay.qg], ub[lay.qg] = net.qmin - qs, net.qmax - qs
    lb[lay.e_eq.start:] = 0.0
    ub[lay.e_eq.start:] = np.inf
    if dva_box is not None:
        lo, hi = -dva_box, dva_box
        sl = lay.va
        lb[sl] = np.maximum(lb[sl], lo)
        ub[sl] = np.minimum(ub[sl], hi)
        if fix_slack:
            lb[net.slack] = ub[net.slack] = net.va_ref - va[net.slack]
    if dv_box is not None:
        sl = lay.vm
        lb[sl] = np.maximum(lb[sl], -dv_box)
        ub[sl] = np.minimum(ub[sl], dv_box)
        # still hold a starting point that is outside its bounds feasible
        lb[sl] = np.minimum(lb[sl], ub[sl])

    # inequality rows for branch limits
    G_rows, h_rows = [], []
    if len(branch_rows):
        k = branch_rows
        fk, tk = net.f[k], net.t[k]
        rate = net.rate[k]
        ends = (
            ("ij", lm.p_ij[k], lm.p_ij_vi[k], lm.p_ij_vj[k], lm.p_ij_d[k],
             lm.q_ij[k], lm.q_ij_vi[k], lm.q_ij_vj[k], lm.q_ij_d[k]),
            ("ji", lm.p_ji[k], lm.p_ji_vi[k], lm.p_ji_vj[k], lm.p_ji_d[k],
             lm.q_ji[k], lm.q_ji_vi[k], lm.q_ji_vj[k], lm.q_ji_d[k]),
        )
        m = len(k)
        r_idx = np.arange(m)
        for _, p0, pvi, pvj, pd_, q0, qvi, qvj, qd_ in ends:
            if branch_mode == "p":
                for sign in (1.0, -1.0):
                    Gk = np.zeros((m, N))
                    Gk[r_idx, n + fk] += sign * pvi
                    Gk[r_idx, n + tk] += sign * pvj
                    Gk[r_idx, fk] += sign * pd_
                    Gk[r_idx, tk] -= sign * pd_
                    G_rows.append(Gk)
                    h_rows.append(rate - sign * p0)
            else:
                Gk = np.zeros((m, N))
                Gk[r_idx, n + fk] += 2 * (p0 * pvi + q0 * qvi)
                Gk[r_idx, n + tk] += 2 * (p0 * pvj + q0 * qvj)
                dd = 2 * (p0 * pd_ + q0 * qd_)
                Gk[r_idx, fk] += dd
                Gk[r_idx, tk] -= dd
                G_rows.append(Gk)
                h_rows.append(rate**2 - p0**2 - q0**2)
    if G_rows:
        Gm = np.vstack(G_rows)
        hm = np.concatenate(h_rows)
        if elastic:
            Gm[:, lay.e_br] = -np.eye(nbr_rows)
    else:
        Gm, hm = np.zeros((0, N)), np.zeros(0)

    Qd = np.zeros(N)
    c = np.zeros(N)
    Qd[lay.pg] = 2 * net.c2
    c[lay.pg] = net.c1
    if elastic:
        c[lay.e_eq.start:] = penalty
    if curvature is not None:
        Qm = np.diag(Qd)
        Qm[:2 * n, :2 * n] += curvature
        Qd = Qm
    qp = QuadraticProgram(c=c, Q=Qd, A_eq=A, b_eq=b, A_in=Gm, b_in=hm, lb=lb, ub=ub)
    return qp, lay


# --------------------------------------------------------------------------
# DC-OPF


@dataclass
class LinearOpfResult:
    state: VoltageState
    pg: np.ndarray
    qg: np.ndarray
    objective: float
    qp_iterations: int = 0


def dc_susceptance(net):
    """Series susceptance used by the DC model: 1 / (x * tap)."""
    return 1.0 / (net.x * net.tap)


def dcopf(net, scenario, branch_limits=True, tol=1e-8):
    """DC-OPF in (theta, Pg).  Bus shunt conductance is counted as load at 1 pu."""
    n, g = net.n_buses, net.n_gens
    bk = dc_susceptance(net)
    # B theta + pbus_shift = Pg injections
    Bf = np.zeros((net.n_branches, n))
    r = np.arange(net.n_branches)
    Bf[r, net.f] = bk
    Bf[r, net.t] = -bk
    Bbus = np.zeros((n, n))
    np.add.at(Bbus, (net.f, net.f), bk)
    np.add.at(Bbus, (net.f, net.t), -bk)
    np.add.at(Bbus, (net.t, net.f), -bk)
    np.add.at(Bbus, (net.t, net.t), bk)
    pf_shift = -bk * net.shift
    pbus_shift = np.bincount(net.f, pf_shift, n) - np.bincount(net.t, pf_shift, n)

    N = n + g
    A = np.zeros((n, N))
    A[:, :n] = Bbus
    A[:, n:] = -net.gen_incidence()
    beq = -(scenario.pd + net.gs) - pbus_shift
    lb = np.r_[np.full(n, -np.inf), net.pmin]
    ub = np.r_[np.full(n, np.inf), net.pmax]
    lb[net.slack] = ub[net.slack] = net.va_ref
    lim = np.flatnonzero(np.isfinite(net.rate)) if branch_limits else np.zeros(0, int)
    if len(lim):
        Gp = np.zeros((len(lim), N))
        Gp[:, :n] = Bf[lim]
        Ain = np.vstack([Gp, -Gp])
        bin_ = np.r_[net.rate[lim] - pf_shift[lim], net.rate[lim] + pf_shift[lim]]
    else:
        Ain, bin_ = None, None
    Qd = np.r_[np.zeros(n), 2 * net.c2]
    c = np.r_[np.zeros(n), net.c1]
    res = solve_qp(QuadraticProgram(c=c, Q=Qd, A_eq=A, b_eq=beq, A_in=Ain, b_in=bin_, lb=lb, ub=ub), tol=tol)
    theta = res.x[:n]
    pg = res.x[n:]
    return LinearOpfResult(
        state=VoltageState(np.ones(n), theta),
        pg=pg,
        qg=np.full(g, np.nan),
        objective=float(net.cost(pg)),
        qp_iterations=res.iterations,
    )


# --------------------------------------------------------------------------
# hot-start OPF


def hotstart_opf(net, scenario, ref, branch_limits=True, y=None, tol=1e-8, models=None, sens=None):
    """QP linearized at the reference point; returns predicted voltages and dispatch."""
    rows = np.flatnonzero(np.isfinite(net.rate)) if branch_limits else np.zeros(0, int)
    qp, lay = build_linear_opf(net, scenario, ref.vm, ref.va, sens=sens, models=models, y=y,
                               branch_rows=rows, branch_mode="p")
    res = solve_qp(qp, tol=tol)
    x = res.x
    st = VoltageState(ref.vm + x[lay.vm], ref.va + x[lay.va])
    pg, qg = x[lay.pg], x[lay.qg]
    return LinearOpfResult(st, pg, qg, float(net.cost(pg)), res.iterations)


class HotStartModel:
    """Caches the linearization so that repeated solves only rebuild the right-hand side."""

    def __init__(self, net, ref, branch_limits=True):
        self.net = net
        self.ref = ref
        self.branch_limits = branch_limits
        self.y = build_ybus(net)
        self.models = linear_models(net, ref.vm, ref.va, self.y)
        self.sens = bus_sensitivity(net, ref.vm, ref.va, self.y, self.models)

    def solve(self, scenario, tol=1e-8):
        return hotstart_opf(self.net, scenario, self.ref, self.branch_limits, self.y, tol, self.models, self.sens)


# --------------------------------------------------------------------------
# reference points


def node_mean_reference(net, vm, va, y=None):
    """Per-bus means of the training voltages (arrays K x n)."""
    vm, va = np.asarray(vm), np.asarray(va)
    if vm.shape[0] == 0:
        raise EmptyTrainSet("training split is empty")
    return LinearizationPoint.at(net, VoltageState(vm.mean(axis=0), va.mean(axis=0)), y)


def mean_scenario(pd, qd):
    pd, qd = np.asarray(pd), np.asarray(qd)
    if pd.shape[0] == 0:
        raise EmptyTrainSet("training split is empty")
    return LoadScenario(pd.mean(axis=0), qd.mean(axis=0))


def make_reference(train, mode="node-mean", net=None, solver="acopf", acopf_options=None):
    """Reference point from a training split.

    ``train`` is a Dataset (or split view) with vm, va, pd, qd arrays.
    mode 'node-mean': per-bus training means.
    mode 'mean-load-solve': AC-OPF (solver='acopf') or a plain power flow with
    the case dispatch (solver='newton') at the mean load.
    """
    net = train.net if net is None else net
    if len(train.vm) == 0:
        raise EmptyTrainSet("training split is empty")
    if mode == "node-mean":
        return node_mean_reference(net, train.vm, train.va)
    if mode != "mean-load-solve":
        raise ValueError(f"unknown reference mode {mode!r}")
    sc = mean_scenario(train.pd, train.qd)
    if solver == "acopf":
        from .acopf import solve_acopf
        from .errors import NonConvergence

        sol = solve_acopf(net, sc, acopf_options)
        if not sol.converged:
            raise NonConvergence(len(sol.trace), sol.mismatch, what="AC-OPF at the mean load")
        return LinearizationPoint.at(net, sol.state)
    if solver == "newton":
        from .powerflow import solve_newton

        return LinearizationPoint.at(net, solve_newton(net, sc).state)
    raise ValueError(f"unknown solver {solver!r}")


# --------------------------------------------------------------------------
# error bounds


@dataclass(frozen=True)
class MomentSummary:
    ev2: np.ndarray  # per-bus E[dv^2]
    ed2: np.ndarray  # per-branch E[d delta^2]
    v_ub: float
    y_abs: np.ndarray
    g: np.ndarray
    b: np.ndarray
    y_angle: np.ndarray
    f: np.ndarray
    t: np.ndarray
    g_self: np.ndarray = None  # |Re| of the from-end self term
    b_self: np.ndarray = None  # |Im| of the from-end self term

    @classmethod
    def from_samples(cls, net, ref, vm, va, y=None):
        """Moments of deviations from ``ref`` over samples (K x n arrays)."""
        y = build_ybus(net) if y is None else y
        vm, va = np.asarray(vm), np.asarray(va)
        dv = vm - ref.vm
        dd = (va[:, net.f] - va[:, net.t]) - ref.delta
        yl = -y.yft  # series coupling seen from the from end
        return cls(
            ev2=np.mean(dv**2, axis=0),
            ed2=np.mean(dd**2, axis=0),
            v_ub=float(max(np.max(vm), np.max(net.vmax))),
            y_abs=np.abs(yl),
            g=yl.real,
            b=yl.imag,
            y_angle=np.angle(yl),
            f=np.array(net.f),
            t=np.array(net.t),
            g_self=np.abs(y.yff.real),
            b_self=np.abs(y.yff.imag),
        )


def remainder_bound(k, moments, flavor="active"):
    """Upper bound on E|exact - linear| flow at the from end of branch ``k``
    (``k`` may be an index array)."""
    m = moments
    i, j = m.f[k], m.t[k]
    evi, evj, ed = m.ev2[i], m.ev2[j], m.ed2[k]
    if flavor == "active":
        lead = m.g_self[k] if m.g_self is not None else np.abs(m.g[k])
    elif flavor == "reactive":
        lead = m.b_self[k] if m.b_self is not None else np.abs(m.b[k])
    else:
        raise ValueError(f"flavor must be 'active' or 'reactive', got {flavor!r}")
    vub = m.v_ub
    return lead * evi + m.y_abs[k] * (0.5 * vub**2 * ed + vub * (np.sqrt(evj * ed) + np.sqrt(evi * ed)))


def mean_ref_gap_bound(M, Sigma):
    """Bound 1/2 Tr(M |Sigma|) on |E f(x) - f(E x)| for a map whose Hessian is dominated by M."""
    M = np.asarray(M, dtype=float)
    S = np.asarray(Sigma, dtype=float)
    return 0.5 * float(np.sum(M * np.abs(S).T))
