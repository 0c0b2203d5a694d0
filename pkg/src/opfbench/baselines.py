"""Data-driven baselines: grid average, node average and OLS regression."""

import json
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import DegenerateDesign, EmptyTrainSet, FingerprintMismatch, LayoutMismatch
from .powerflow import VoltageState

KINDS = ("grid-avg", "node-avg", "ols")


@dataclass(frozen=True)
class FeatureLayout:
    """Which buses feed the (Pd, Qd) feature vector, in order."""

    buses: tuple
    n_buses: int
    fingerprint: str = None

    @property
    def width(self):
        return 2 * len(self.buses)

    @classmethod
    def for_network(cls, net, all_buses=False):
        buses = range(net.n_buses) if all_buses else net.load_buses
        return cls(tuple(int(b) for b in buses), net.n_buses, net.fingerprint)

    def features(self, pd, qd):
        pd = np.atleast_2d(pd)
        qd = np.atleast_2d(qd)
        if pd.shape[1] != self.n_buses or qd.shape[1] != self.n_buses:
            raise LayoutMismatch(f"expected {self.n_buses} buses per scenario, got {pd.shape[1]}")
        idx = list(self.buses)
        return np.hstack([pd[:, idx], qd[:, idx]])

    def to_dict(self):
        return {"buses": list(self.buses), "n_buses": self.n_buses, "fingerprint": self.fingerprint}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["buses"]), int(d["n_buses"]), d.get("fingerprint"))


@dataclass(frozen=True)
class LinearPredictor:
    """Affine map from load features to (vm || va).  The averages are the
    special case W = 0 (node) with a shared intercept (grid)."""

    kind: str
    intercept: np.ndarray  # 2n
    weights: np.ndarray = None  # 2n x d, ols only
    layout: FeatureLayout = None
    fingerprint: str = None

    @property
    def n_buses(self):
        return len(self.intercept) // 2

    def predict(self, pd, qd=None):
        """Predictions for a batch of scenarios (K x n arrays); returns a
        VoltageState of K x n arrays."""
        n = self.n_buses
        if self.kind == "ols":
            X = self.layout.features(pd, qd)
            if X.shape[1] != self.weights.shape[1]:
                raise LayoutMismatch(f"predictor expects {self.weights.shape[1]} features, got {X.shape[1]}")
            out = X @ self.weights.T + self.intercept
        else:
            K = np.atleast_2d(pd).shape[0]
            if np.atleast_2d(pd).shape[1] != n:
                raise LayoutMismatch(f"expected {n} buses per scenario")
            out = np.tile(self.intercept, (K, 1))
        return VoltageState(out[:, :n], out[:, n:])

    def to_json(self):
        doc = {
            "kind": self.kind,
            "n_buses": self.n_buses,
            "intercept": self.intercept.tolist(),
            "case_fingerprint": self.fingerprint,
        }
        if self.weights is not None:
            doc["weights_shape"] = list(self.weights.shape)
            doc["weights"] = self.weights.ravel(order="C").tolist()
            doc["layout"] = self.layout.to_dict()
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text, net=None):
        d = json.loads(text)
        if net is not None and d.get("case_fingerprint") != net.fingerprint:
            raise FingerprintMismatch(net.fingerprint, d.get("case_fingerprint") or "none", what="predictor")
        W = None
        layout = None
        if "weights" in d:
            W = np.array(d["weights"], dtype=float).reshape(d["weights_shape"])
            layout = FeatureLayout.from_dict(d["layout"])
        return cls(d["kind"], np.array(d["intercept"], dtype=float), W, layout, d.get("case_fingerprint"))


def _targets(train):
    vm = np.atleast_2d(np.asarray(train.vm, dtype=float))
    va = np.atleast_2d(np.asarray(train.va, dtype=float))
    if vm.shape[0] == 0 or vm.size == 0:
        raise EmptyTrainSet("training split has no samples")
    return vm, va


def _fp(train):
    net = getattr(train, "net", None)
    if net is not None:
        return net.fingerprint
    man = getattr(train, "manifest", None) or {}
    return man.get("case_fingerprint")


def fit_grid_average(train):
    vm, va = _targets(train)
    n = vm.shape[1]
    b = np.r_[np.full(n, vm.mean()), np.full(n, va.mean())]
    return LinearPredictor("grid-avg", b, fingerprint=_fp(train))


def fit_node_average(train):
    vm, va = _targets(train)
    return LinearPredictor("node-avg", np.r_[vm.mean(axis=0), va.mean(axis=0)], fingerprint=_fp(train))


def lstsq_qr(X, Y, rcond=None):
    """Least squares via column-pivoted QR; minimum-norm SVD solution (with a
    DegenerateDesign warning) when X is rank deficient."""
    m, d = X.shape
    if d == 0:
        return np.zeros((0, Y.shape[1]))
    Q, R, piv = sla.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = (rcond if rcond is not None else max(m, d) * np.finfo(float).eps) * (diag[0] if diag.size else 0.0)
    rank = int(np.sum(diag > tol))
    if rank < d:
        warnings.warn(DegenerateDesign(rank, d), stacklevel=3)
        return np.linalg.lstsq(X, Y, rcond=None)[0]
    Z = sla.solve_triangular(R, Q.T @ Y)
    B = np.empty_like(Z)
    B[piv] = Z
    return B


def fit_ols(train, net=None, all_buses=False, layout=None):
    """2n independent affine regressions of (vm, va) on the load features."""
    vm, va = _targets(train)
    if layout is None:
        net = net if net is not None else train.get_network()
        layout = FeatureLayout.for_network(net, all_buses=all_buses)
    X = layout.features(train.pd, train.qd)
    Y = np.hstack([vm, va])
    # centring separates the intercept and keeps the QR well scaled
    xm = X.mean(axis=0)
    ym = Y.mean(axis=0)
    B = lstsq_qr(X - xm, Y - ym)
    W = B.T
    b = ym - W @ xm
    return LinearPredictor("ols", b, W, layout, fingerprint=layout.fingerprint or _fp(train))


def predict(p, pd, qd=None):
    return p.predict(pd, qd)
