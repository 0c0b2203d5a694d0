"""Dense primal-dual interior point method for convex QPs (and LPs).

    min  1/2 x'Qx + c'x
    s.t. A_eq x = b_eq,  A_in x <= b_in,  lb <= x <= ub

Mehrotra predictor-corrector on the reduced augmented system
``[[H, A'], [A, -d I]]``; bound and inequality slacks are eliminated
analytically.  Infinite bounds are allowed.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import kernels
from .errors import Infeasible, MaxIterations, Unbounded


@dataclass
class QuadraticProgram:
    c: np.ndarray
    Q: np.ndarray = None  # (n,) diagonal or (n, n); None means LP
    A_eq: np.ndarray = None
    b_eq: np.ndarray = None
    A_in: np.ndarray = None
    b_in: np.ndarray = None
    lb: np.ndarray = None
    ub: np.ndarray = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        n = self.c.size
        if self.Q is None:
            self.Q = np.zeros(n)
        self.Q = np.asarray(self.Q, dtype=float)
        if self.A_eq is None:
            self.A_eq, self.b_eq = np.zeros((0, n)), np.zeros(0)
        if self.A_in is None:
            self.A_in, self.b_in = np.zeros((0, n)), np.zeros(0)
        self.A_eq = np.atleast_2d(np.asarray(self.A_eq, dtype=float)).reshape(-1, n)
        self.A_in = np.atleast_2d(np.asarray(self.A_in, dtype=float)).reshape(-1, n)
        self.b_eq = np.asarray(self.b_eq, dtype=float).ravel()
        self.b_in = np.asarray(self.b_in, dtype=float).ravel()
        self.lb = np.full(n, -np.inf) if self.lb is None else np.asarray(self.lb, dtype=float).copy()
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float).copy()
        if self.Q.ndim == 1 and self.Q.shape != (n,) or self.Q.ndim == 2 and self.Q.shape != (n, n):
            raise ValueError("Q has the wrong shape")
        if len(self.b_eq) != len(self.A_eq) or len(self.b_in) != len(self.A_in):
            raise ValueError("constraint rows and right-hand sides differ in length")
        if self.lb.shape != (n,) or self.ub.shape != (n,):
            raise ValueError("bounds have the wrong shape")
        qd = self.Q if self.Q.ndim == 1 else np.diag(self.Q)
        if np.any(qd < 0):
            raise ValueError("Q must be positive semidefinite")

    @property
    def n(self):
        return self.c.size

    def objective(self, x):
        qx = self.Q * x if self.Q.ndim == 1 else self.Q @ x
        return 0.5 * float(x @ qx) + float(self.c @ x)


@dataclass
class QpResult:
    x: np.ndarray
    objective: float
    dual_residual: float
    status: str
    iterations: int
    y_eq: np.ndarray = None
    z_in: np.ndarray = None
    z_lb: np.ndarray = None
    z_ub: np.ndarray = None
    primal_residual: float = 0.0
    complementarity: float = 0.0
    trace: list = field(default_factory=list)


def solve_qp(qp, tol=1e-8, max_iter=100, reg=1e-11):
    """Solve ``qp``; raise Infeasible / Unbounded / MaxIterations on failure."""
    try:
        return _ipm(qp, tol, max_iter, reg)
    except _Stalled as st:
        try:
            _phase_one(qp, tol, reg)
            d = _recession(qp, tol, reg)
        except _Stalled:
            d = None
        if d is not None:
            raise Unbounded("objective is unbounded below", direction=d) from None
        raise MaxIterations(st.iterations, st.residuals) from None


class _Stalled(Exception):
    def __init__(self, iterations, residuals):
        self.iterations = iterations
        self.residuals = residuals


def _phase_one(qp, tol, reg):
    """Minimize total constraint violation; raise Infeasible if it is positive."""
    n, m, p = qp.n, len(qp.b_eq), len(qp.b_in)
    lb = np.where(qp.lb <= qp.ub, qp.lb, qp.ub)
    # variables: x, e+ (m), e- (m), t (p)
    c = np.r_[np.zeros(n), np.ones(2 * m + p)]
    A = np.hstack([qp.A_eq, np.eye(m), -np.eye(m), np.zeros((m, p))])
    G = np.hstack([qp.A_in, np.zeros((p, 2 * m)), -np.eye(p)])
    ph = QuadraticProgram(
        c=c, Q=np.r_[np.full(n, 0.0), np.zeros(2 * m + p)], A_eq=A, b_eq=qp.b_eq, A_in=G, b_in=qp.b_in,
        lb=np.r_[lb, np.zeros(2 * m + p)], ub=np.r_[qp.ub, np.full(2 * m + p, np.inf)],
    )
    r = _ipm(ph, 1e-9, 200, reg)
    scale = 1.0 + max(np.max(np.abs(qp.b_eq), initial=0.0), np.max(np.abs(qp.b_in), initial=0.0))
    if r.objective > max(1e3 * tol, 1e-7) * scale:
        cert = {"y_eq": -r.y_eq, "z_in": r.z_in, "violation": r.objective}
        raise Infeasible(f"primal infeasible: minimum total violation {r.objective:.3e}", certificate=cert)
    return r


def _recession(qp, tol, reg):
    """A feasible direction of unbounded descent, or None.

    min c'd  s.t.  Q d = 0, A_eq d = 0, A_in d <= 0, d >= 0 where lb is
    finite, d <= 0 where ub is finite, -1 <= d <= 1.
    """
    n = qp.n
    Qm = qp.Q if qp.Q.ndim == 2 else np.diag(qp.Q)
    qrows = Qm[np.any(Qm != 0, axis=1)]
    lo = np.where(np.isfinite(qp.lb), 0.0, -1.0)
    hi = np.where(np.isfinite(qp.ub), 0.0, 1.0)
    rp = QuadraticProgram(
        c=qp.c, A_eq=np.vstack([qp.A_eq, qrows]), b_eq=np.zeros(len(qp.A_eq) + len(qrows)),
        A_in=qp.A_in, b_in=np.zeros(len(qp.A_in)), lb=lo, ub=hi,
    )
    r = _ipm(rp, 1e-9, 200, reg)
    scale = 1.0 + np.max(np.abs(qp.c), initial=0.0)
    if r.objective < -max(1e3 * tol, 1e-7) * scale:
        return r.x / np.max(np.abs(r.x))
    return None


def _ipm(qp, tol, max_iter, reg):
    n = qp.n
    lb, ub = qp.lb.copy(), qp.ub.copy()
    if np.any(lb > ub + 1e-12):
        k = int(np.flatnonzero(lb > ub)[0])
        raise Infeasible(f"variable {k} has lb {lb[k]} > ub {ub[k]}")

    # fixed variables are substituted out
    fixed = np.isfinite(lb) & np.isfinite(ub) & (ub - lb <= 1e-12 * (1 + np.abs(lb)))
    free = ~fixed
    xf = np.zeros(n)
    xf[fixed] = 0.5 * (lb[fixed] + ub[fixed])
    Qfull = qp.Q if qp.Q.ndim == 2 else np.diag(qp.Q)
    c = qp.c[free] + (Qfull[np.ix_(free, fixed)] @ xf[fixed] if fixed.any() else 0.0)
    Q = Qfull[np.ix_(free, free)]
    A = qp.A_eq[:, free]
    b = qp.b_eq - qp.A_eq[:, fixed] @ xf[fixed]
    G = qp.A_in[:, free]
    h = qp.b_in - qp.A_in[:, fixed] @ xf[fixed]
    lb, ub = lb[free], ub[free]
    nf = int(free.sum())

    obj_fixed = 0.5 * xf[fixed] @ Qfull[np.ix_(fixed, fixed)] @ xf[fixed] + qp.c[fixed] @ xf[fixed]

    # empty rows: either trivially satisfied or infeasible
    keep_eq = np.any(A != 0, axis=1)
    if np.any(np.abs(b[~keep_eq]) > tol * (1 + np.abs(b[~keep_eq]))):
        raise Infeasible("an equality row has no free variables and a nonzero right-hand side")
    keep_in = np.any(G != 0, axis=1)
    if np.any(h[~keep_in] < -tol * (1 + np.abs(h[~keep_in]))):
        raise Infeasible("an inequality row has no free variables and a negative right-hand side")
    A_rows, G_rows = np.flatnonzero(keep_eq), np.flatnonzero(keep_in)
    A, b, G, h = A[keep_eq], b[keep_eq], G[keep_in], h[keep_in]

    # scaling: rows to unit inf-norm, objective to O(1)
    ra = np.max(np.abs(A), axis=1) if len(A) else np.zeros(0)
    rg = np.max(np.abs(G), axis=1) if len(G) else np.zeros(0)
    A, b = A / ra[:, None], b / ra
    G, h = G / rg[:, None], h / rg
    osc = max(1.0, np.max(np.abs(c), initial=0.0), np.max(np.abs(Q), initial=0.0))
    Q, c = Q / osc, c / osc
    m, p = len(A), len(G)

    L = np.flatnonzero(np.isfinite(lb))
    U = np.flatnonzero(np.isfinite(ub))
    lbL, ubU = lb[L], ub[U]

    # starting point
    x = np.zeros(nf)
    both = np.isfinite(lb) & np.isfinite(ub)
    x[both] = 0.5 * (lb[both] + ub[both])
    lo_only = np.isfinite(lb) & ~np.isfinite(ub)
    x[lo_only] = np.maximum(0.0, lb[lo_only]) + 1.0
    up_only = ~np.isfinite(lb) & np.isfinite(ub)
    x[up_only] = np.minimum(0.0, ub[up_only]) - 1.0
    sL = np.maximum(x[L] - lbL, 1e-4)
    sU = np.maximum(ubU - x[U], 1e-4)
    sG = np.maximum(h - G @ x, 1.0)
    zL, zU, zG = np.ones(len(L)), np.ones(len(U)), np.ones(p)
    y = np.zeros(m)
    ncomp = len(L) + len(U) + p

    nb = max(1.0, np.max(np.abs(b), initial=0.0))
    nh = max(1.0, np.max(np.abs(h), initial=0.0))
    nbd = max(1.0, np.max(np.abs(np.r_[lbL, ubU]), initial=0.0))
    ncn = max(1.0, np.max(np.abs(c), initial=0.0))

    def qx(v):
        return Q @ v

    # Variables touching a single equality row, no inequality rows and no
    # off-diagonal curvature (typically elastic slacks) are condensed out of
    # the KKT system; the remaining block is solved by dense LU.
    offdiag = np.abs(Q).sum(axis=1) - np.abs(np.diag(Q))
    nnzA = np.count_nonzero(A, axis=0)
    bounded = np.isfinite(lb) | np.isfinite(ub)
    elim = (offdiag == 0) & ~np.any(G != 0, axis=0) & (nnzA == 1) & bounded
    iE = np.flatnonzero(elim)
    iK = np.flatnonzero(~elim)
    rowE = np.argmax(A[:, iE] != 0, axis=0) if len(iE) else np.zeros(0, int)
    aE = A[rowE, iE]
    qE = np.diag(Q)[iE]
    QK = Q[np.ix_(iK, iK)]
    AK = A[:, iK]
    GK = G[:, iK]
    nk = len(iK)

    trace = []
    K = np.zeros((nk + m, nk + m))
    it = 0
    while True:
        rd = qx(x) + c + A.T @ y + G.T @ zG
        rd[L] -= zL
        rd[U] += zU
        rp = A @ x - b
        rgv = G @ x + sG - h
        rl = x[L] - lbL - sL
        ru = ubU - x[U] - sU
        mu = (sL @ zL + sU @ zU + sG @ zG) / ncomp if ncomp else 0.0
        pobj = 0.5 * x @ qx(x) + c @ x
        pres = max(
            np.max(np.abs(rp), initial=0.0) / nb,
            np.max(np.abs(rgv), initial=0.0) / nh,
            np.max(np.abs(np.r_[rl, ru]), initial=0.0) / nbd,
        )
        dres = np.max(np.abs(rd), initial=0.0) / ncn
        comp = mu * ncomp / (1.0 + abs(pobj))
        trace.append({"iter": it, "objective": float(pobj * osc + obj_fixed), "mu": float(mu),
                      "primal": float(pres), "dual": float(dres)})
        if pres <= tol and dres <= tol and comp <= tol:
            break

        ynorm = np.max(np.abs(np.r_[y, zG, zL, zU]), initial=0.0)
        if ynorm > 1e8 * max(1.0, mu) and pres > tol:
            cert = _farkas(A, b, G, h, L, U, lbL, ubU, y, zG, zL, zU)
            if cert is not None:
                raise Infeasible("primal infeasible (dual ray found)", certificate=cert)
        xnorm = np.max(np.abs(x), initial=0.0)
        if xnorm > 1e10 and dres > tol:
            raise Unbounded("objective is unbounded below", direction=x / xnorm)
        if it >= max_iter or (it >= 30 and pres > tol and pres > 0.5 * trace[-20]["primal"]):
            raise _Stalled(it, {"primal": pres, "dual": dres, "complementarity": comp})
        it += 1

        dL, dU, dG = zL / sL, zU / sU, zG / sG
        dbar = np.full(nf, reg)
        dbar[L] += dL
        dbar[U] += dU
        H = QK + (GK.T * dG) @ GK
        H[np.diag_indices(nk)] += dbar[iK]
        DE = qE + dbar[iE]
        schur = np.bincount(rowE, aE * aE / DE, m) if m else np.zeros(0)
        K[:nk, :nk] = H
        K[:nk, nk:] = AK.T
        K[nk:, :nk] = AK
        K[nk:, nk:] = 0.0
        K[np.arange(nk, nk + m), np.arange(nk, nk + m)] = -(reg + schur)
        try:
            lu = sla.lu_factor(K, check_finite=False)
        except sla.LinAlgError:
            raise MaxIterations(it, {"reason": "singular KKT system"}) from None

        def solve(rcL, rcU, rcG):
            # complementarity rows: Z ds + S dz = -rc
            r1 = -rd.copy()
            r1 -= G.T @ ((-rcG + zG * rgv) / sG)
            r1[L] += (-rcL - zL * rl) / sL
            r1[U] -= (-rcU - zU * ru) / sU
            r1E = r1[iE]
            r2 = -rp - np.bincount(rowE, aE * r1E / DE, m) if m else -rp
            sol = sla.lu_solve(lu, np.r_[r1[iK], r2], check_finite=False)
            dx = np.empty(nf)
            dx[iK] = sol[:nk]
            dy = sol[nk:]
            dx[iE] = (r1E - aE * dy[rowE]) / DE
            dsG = -rgv - G @ dx
            dzG = (-rcG - zG * dsG) / sG
            dsL = rl + dx[L]
            dzL = (-rcL - zL * dsL) / sL
            dsU = ru - dx[U]
            dzU = (-rcU - zU * dsU) / sU
            return dx, dy, dsG, dzG, dsL, dzL, dsU, dzU

        def max_step(d):
            _, _, dsG, dzG, dsL, dzL, dsU, dzU = d
            return min(
                kernels.step_to_boundary(sG, dsG), kernels.step_to_boundary(sL, dsL), kernels.step_to_boundary(sU, dsU),
                kernels.step_to_boundary(zG, dzG), kernels.step_to_boundary(zL, dzL), kernels.step_to_boundary(zU, dzU),
            )

        def mu_at(d, a):
            _, _, dsG, dzG, dsL, dzL, dsU, dzU = d
            if not ncomp:
                return 0.0
            return (kernels.comp_dot(sL, dsL, zL, dzL, a) + kernels.comp_dot(sU, dsU, zU, dzU, a)
                    + kernels.comp_dot(sG, dsG, zG, dzG, a)) / ncomp

        aff = solve(sL * zL, sU * zU, sG * zG)
        a_aff = max_step(aff)
        sigma = (mu_at(aff, a_aff) / mu) ** 3 if mu > 0 else 0.0
        sigma = min(1.0, sigma)
        _, _, dsG_a, dzG_a, dsL_a, dzL_a, dsU_a, dzU_a = aff
        smu = sigma * mu
        d = solve(sL * zL + dsL_a * dzL_a - smu, sU * zU + dsU_a * dzU_a - smu, sG * zG + dsG_a * dzG_a - smu)
        alpha = min(1.0, 0.995 * max_step(d))
        # duality measure must not grow; fall back to a pure centering direction
        if ncomp and mu_at(d, alpha) > mu:
            d = solve(sL * zL - smu, sU * zU - smu, sG * zG - smu)
            alpha = min(1.0, 0.995 * max_step(d))
            while mu_at(d, alpha) > mu and alpha > 1e-12:
                alpha *= 0.5
        dx, dy, dsG, dzG, dsL, dzL, dsU, dzU = d
        x = x + alpha * dx
        y = y + alpha * dy
        sG, zG = sG + alpha * dsG, zG + alpha * dzG
        sL, zL = sL + alpha * dsL, zL + alpha * dzL
        sU, zU = sU + alpha * dsU, zU + alpha * dzU
        if not np.all(np.isfinite(x)):
            raise MaxIterations(it, {"reason": "iterate became non-finite"})

    xfull = xf.copy()
    xfull[free] = x
    # multipliers back in the caller's scaling
    y_eq = np.zeros(len(qp.b_eq))
    y_eq[A_rows] = y * osc / ra
    z_in = np.zeros(len(qp.b_in))
    z_in[G_rows] = zG * osc / rg
    z_lb = np.zeros(qp.n)
    z_ub = np.zeros(qp.n)
    idx = np.flatnonzero(free)
    z_lb[idx[L]] = zL * osc
    z_ub[idx[U]] = zU * osc
    return QpResult(
        x=xfull,
        objective=qp.objective(xfull),
        dual_residual=float(dres),
        status="optimal",
        iterations=it,
        y_eq=y_eq,
        z_in=z_in,
        z_lb=z_lb,
        z_ub=z_ub,
        primal_residual=float(pres),
        complementarity=float(comp),
        trace=trace,
    )


def _farkas(A, b, G, h, L, U, lbL, ubU, y, zG, zL, zU):
    """Normalized dual ray proving infeasibility, or None if it does not check out."""
    s = np.max(np.abs(np.r_[y, zG, zL, zU]))
    y, zG, zL, zU = y / s, zG / s, zL / s, zU / s
    r = A.T @ y + G.T @ zG
    r[L] -= zL
    r[U] += zU
    gap = b @ y + h @ zG - lbL @ zL + ubU @ zU
    if gap < -1e-6 and np.max(np.abs(r), initial=0.0) < 1e-6 * max(1.0, -gap) * 1e3:
        return {"y_eq": y, "z_in": zG, "z_lb": zL, "z_ub": zU, "value": gap}
    return None
