"""Per-unit network model and bus admittance matrix."""

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import caseparser as cp
from .errors import InvalidLimits, IslandedBus


def _ro(a):
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Network:
    """Immutable per-unit grid.  Buses, branches and generators are dense 0-based."""

    name: str
    base_mva: float
    fingerprint: str
    bus_ids: np.ndarray  # original case ids
    bus_type: np.ndarray  # 1 PQ, 2 PV, 3 slack
    pd: np.ndarray
    qd: np.ndarray
    gs: np.ndarray
    bs: np.ndarray
    vmin: np.ndarray
    vmax: np.ndarray
    vm0: np.ndarray
    va0: np.ndarray  # rad
    slack: int
    # branches
    f: np.ndarray
    t: np.ndarray
    r: np.ndarray
    x: np.ndarray
    b: np.ndarray  # total line charging
    rate: np.ndarray  # pu, inf when unlimited
    tap: np.ndarray
    shift: np.ndarray  # rad
    # generators
    gen_bus: np.ndarray
    pg0: np.ndarray
    qg0: np.ndarray
    vg: np.ndarray
    pmin: np.ndarray
    pmax: np.ndarray
    qmin: np.ndarray
    qmax: np.ndarray
    c2: np.ndarray  # $/h per pu^2
    c1: np.ndarray
    c0: np.ndarray
    index: dict = field(repr=False)  # case bus id -> dense index

    @property
    def n_buses(self):
        return len(self.bus_ids)

    @property
    def n_branches(self):
        return len(self.f)

    @property
    def n_gens(self):
        return len(self.gen_bus)

    @property
    def va_ref(self):
        return float(self.va0[self.slack])

    @property
    def pv(self):
        return np.flatnonzero(self.bus_type == cp.PV)

    @property
    def pq(self):
        return np.flatnonzero(self.bus_type == cp.PQ)

    @property
    def ys(self):
        return 1.0 / (self.r + 1j * self.x)

    @property
    def gen_bus_mask(self):
        m = np.zeros(self.n_buses, dtype=bool)
        m[self.gen_bus] = True
        return m

    @property
    def load_buses(self):
        """Buses with nonzero nominal (Pd, Qd)."""
        return np.flatnonzero((self.pd != 0) | (self.qd != 0))

    def gen_incidence(self):
        cg = np.zeros((self.n_buses, self.n_gens))
        cg[self.gen_bus, np.arange(self.n_gens)] = 1.0
        return cg

    def cost(self, pg):
        pg = np.asarray(pg, dtype=float)
        return np.sum(self.c2 * pg**2 + self.c1 * pg + self.c0, axis=-1)


def build_network(raw):
    """Convert a RawCase to a per-unit :class:`Network`."""
    base = raw.base_mva
    bus = np.array(raw.bus)
    isolated = bus[:, cp.BUS_TYPE] == cp.NONE
    pad = {int(i): k for k, i in enumerate(bus[:, cp.BUS_I])}

    br = raw.branch[raw.branch[:, cp.BR_STATUS] > 0]
    gn_on = raw.gen[:, cp.GEN_STATUS] > 0
    gen = raw.gen[gn_on]
    ng_all = len(raw.gen)
    gc = raw.gencost[:ng_all][gn_on]  # rows past ng_all are reactive costs, ignored

    # buses of type NONE are dropped together with everything touching them
    keep = ~isolated
    old_to_new = -np.ones(len(bus), dtype=int)
    old_to_new[keep] = np.arange(keep.sum())
    fb = old_to_new[[pad[int(i)] for i in br[:, cp.F_BUS]]] if len(br) else np.zeros(0, int)
    tb = old_to_new[[pad[int(i)] for i in br[:, cp.T_BUS]]] if len(br) else np.zeros(0, int)
    ok = (fb >= 0) & (tb >= 0)
    br, fb, tb = br[ok], fb[ok], tb[ok]
    gb = old_to_new[[pad[int(i)] for i in gen[:, cp.GEN_BUS]]] if len(gen) else np.zeros(0, int)
    okg = gb >= 0
    gen, gc, gb = gen[okg], gc[okg], gb[okg]
    bus = bus[keep]
    nb = len(bus)

    btype = bus[:, cp.BUS_TYPE].astype(int)
    # a PV bus whose generators are all offline behaves as PQ
    has_gen = np.zeros(nb, dtype=bool)
    has_gen[gb] = True
    btype[(btype == cp.PV) & ~has_gen] = cp.PQ
    slack = int(np.flatnonzero(btype == cp.REF)[0])

    tap = br[:, cp.TAP].copy()
    tap[tap == 0] = 1.0
    if np.any(tap <= 0):
        raise InvalidLimits("branch tap ratios must be positive")
    rate = br[:, cp.RATE_A] / base
    rate = np.where(rate > 0, rate, np.inf)

    vmin, vmax = bus[:, cp.VMIN], bus[:, cp.VMAX]
    if np.any(vmin > vmax):
        k = int(np.flatnonzero(vmin > vmax)[0])
        raise InvalidLimits(f"bus {int(bus[k, cp.BUS_I])}: Vmin {vmin[k]} > Vmax {vmax[k]}")
    pmin, pmax = gen[:, cp.PMIN] / base, gen[:, cp.PMAX] / base
    qmin, qmax = gen[:, cp.QMIN] / base, gen[:, cp.QMAX] / base
    for lo, hi, what in ((pmin, pmax, "P"), (qmin, qmax, "Q")):
        if np.any(lo > hi):
            k = int(np.flatnonzero(lo > hi)[0])
            raise InvalidLimits(f"generator {k} at bus {int(gen[k, cp.GEN_BUS])}: {what}min > {what}max")

    c2 = np.zeros(len(gen))
    c1 = np.zeros(len(gen))
    c0 = np.zeros(len(gen))
    for k, row in enumerate(gc):
        n = int(row[cp.NCOST])
        coef = row[cp.COST:cp.COST + n][::-1]  # c0, c1, c2
        c0[k] = coef[0]
        if n > 1:
            c1[k] = coef[1] * base
        if n > 2:
            c2[k] = coef[2] * base**2

    vg = gen[:, cp.VG]
    vm0 = bus[:, cp.VM].copy()
    vm0[gb] = vg  # generator setpoints override the bus table

    _check_connected(nb, fb, tb, slack, bus[:, cp.BUS_I])

    idx = {int(i): k for k, i in enumerate(bus[:, cp.BUS_I])}
    return Network(
        name=raw.name,
        base_mva=float(base),
        fingerprint=cp.case_fingerprint(raw),
        bus_ids=_ro(bus[:, cp.BUS_I].astype(int)),
        bus_type=_ro(btype),
        pd=_ro(bus[:, cp.PD] / base),
        qd=_ro(bus[:, cp.QD] / base),
        gs=_ro(bus[:, cp.GS] / base),
        bs=_ro(bus[:, cp.BS] / base),
        vmin=_ro(vmin.copy()),
        vmax=_ro(vmax.copy()),
        vm0=_ro(vm0),
        va0=_ro(np.deg2rad(bus[:, cp.VA])),
        slack=slack,
        f=_ro(fb),
        t=_ro(tb),
        r=_ro(br[:, cp.BR_R].copy()),
        x=_ro(br[:, cp.BR_X].copy()),
        b=_ro(br[:, cp.BR_B].copy()),
        rate=_ro(rate),
        tap=_ro(tap),
        shift=_ro(np.deg2rad(br[:, cp.SHIFT])),
        gen_bus=_ro(gb),
        pg0=_ro(gen[:, cp.PG] / base),
        qg0=_ro(gen[:, cp.QG] / base),
        vg=_ro(vg.copy()),
        pmin=_ro(pmin),
        pmax=_ro(pmax),
        qmin=_ro(qmin),
        qmax=_ro(qmax),
        c2=_ro(c2),
        c1=_ro(c1),
        c0=_ro(c0),
        index=idx,
    )


def _check_connected(nb, f, t, slack, ids):
    adj = [[] for _ in range(nb)]
    for a, b in zip(f, t):
        adj[a].append(b)
        adj[b].append(a)
    seen = np.zeros(nb, dtype=bool)
    seen[slack] = True
    q = deque([slack])
    while q:
        u = q.popleft()
        for w in adj[u]:
            if not seen[w]:
                seen[w] = True
                q.append(w)
    if not seen.all():
        raise IslandedBus([int(i) for i in ids[~seen]])


@dataclass(frozen=True, eq=False)
class AdmittanceMatrix:
    """Dense Ybus plus the 2x2 terminal block of every branch.

    Branch k contributes ``[[yff, yft], [ytf, ytt]]`` between buses f[k], t[k];
    bus shunts are ``ysh``.
    """

    Y: np.ndarray
    yff: np.ndarray
    yft: np.ndarray
    ytf: np.ndarray
    ytt: np.ndarray
    ysh: np.ndarray
    f: np.ndarray
    t: np.ndarray

    @property
    def n(self):
        return self.Y.shape[0]

    def assemble(self):
        """Rebuild Y from the branch blocks and shunts."""
        return _assemble(self.n, self.f, self.t, self.yff, self.yft, self.ytf, self.ytt, self.ysh)


def branch_blocks(net):
    ys = net.ys
    tc = net.tap * np.exp(1j * net.shift)
    ytt = ys + 0.5j * net.b
    yff = ytt / (net.tap**2)
    yft = -ys / np.conj(tc)
    ytf = -ys / tc
    return yff, yft, ytf, ytt


def _assemble(n, f, t, yff, yft, ytf, ytt, ysh):
    Y = np.zeros((n, n), dtype=complex)
    np.add.at(Y, (f, f), yff)
    np.add.at(Y, (f, t), yft)
    np.add.at(Y, (t, f), ytf)
    np.add.at(Y, (t, t), ytt)
    Y[np.diag_indices(n)] += ysh
    return Y


def build_ybus(net):
    yff, yft, ytf, ytt = branch_blocks(net)
    ysh = net.gs + 1j * net.bs
    Y = _assemble(net.n_buses, net.f, net.t, yff, yft, ytf, ytt, ysh)
    return AdmittanceMatrix(
        Y=_ro(Y),
        yff=_ro(yff),
        yft=_ro(yft),
        ytf=_ro(ytf),
        ytt=_ro(ytt),
        ysh=_ro(ysh),
        f=net.f,
        t=net.t,
    )


def load_network(name_or_path):
    return build_network(cp.load_case(name_or_path))
