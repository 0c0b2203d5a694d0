"""Regression and power metrics, demand-sorted error curves, model
accounting and report rendering."""

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import spearmanr

from .errors import FingerprintMismatch, ZeroVariance
from .grid import build_ybus
from .powerflow import VoltageState

VIOLATION_TOL = 1e-4  # pu

COLUMNS = [
    ("va_mse", "Va MSE"),
    ("va_fvu", "Va FVU"),
    ("vm_mse", "Vm MSE"),
    ("vm_fvu", "Vm FVU"),
    ("rel_opt", "Rel. opt. diff (%)"),
    ("abs_rel_opt", "Abs rel. opt. diff (%)"),
    ("pg_viol", "Pg viol. rate (%)"),
    ("qg_viol", "Qg viol. rate (%)"),
    ("pd_tot", "Abs rel. tot. Pd err (%)"),
    ("qd_tot", "Abs rel. tot. Qd err (%)"),
    ("pd_nz", "Abs rel. nonzero Pd err (%)"),
    ("qd_nz", "Abs rel. nonzero Qd err (%)"),
]
REGRESSION_KEYS = ("va_mse", "va_fvu", "vm_mse", "vm_fvu")
POWER_KEYS = tuple(k for k, _ in COLUMNS if k not in REGRESSION_KEYS)


def _arrays(pred):
    if isinstance(pred, VoltageState) or hasattr(pred, "vm"):
        return np.atleast_2d(pred.vm), np.atleast_2d(pred.va)
    vm, va = pred
    return np.atleast_2d(vm), np.atleast_2d(va)


def mse(pred, truth):
    return float(np.mean((np.asarray(pred) - np.asarray(truth)) ** 2))


def fvu(pred, truth):
    """MSE over the population variance of ``truth`` about its grand mean."""
    truth = np.asarray(truth)
    var = float(np.mean((truth - truth.mean()) ** 2))
    if var == 0.0:
        raise ZeroVariance("target has zero variance; FVU is undefined")
    return mse(pred, truth) / var


def regression_metrics(pred, truth):
    """MSE and FVU for Va and Vm.  ``pred``/``truth`` are VoltageStates (or
    (vm, va) pairs) of K x n arrays."""
    pvm, pva = _arrays(pred)
    tvm, tva = _arrays(truth)
    if pvm.shape != tvm.shape or pva.shape != tva.shape:
        raise ValueError(f"prediction shape {pvm.shape} does not match truth {tvm.shape}")
    return {
        "va_mse": mse(pva, tva),
        "va_fvu": fvu(pva, tva),
        "vm_mse": mse(pvm, tvm),
        "vm_fvu": fvu(pvm, tvm),
    }


def batch_injection(vm, va, y):
    """S_inj for K voltage profiles at once (K x n)."""
    V = vm * np.exp(1j * va)
    return V * np.conj((y.Y @ V.T).T)


def implied_dispatch(pred, pd, qd, net, y=None):
    """(Pg, Qg, effective Pd, effective Qd) implied by predicted voltages
    under loads (pd, qd), for every sample.  Generator buses keep the
    scenario load."""
    y = build_ybus(net) if y is None else y
    vm, va = _arrays(pred)
    s = batch_injection(vm, va, y)
    gb = net.gen_bus
    if len(np.unique(gb)) != net.n_gens:
        raise ValueError("implied dispatch needs one generator record per bus")
    sg = s[:, gb] + pd[:, gb] + 1j * qd[:, gb]
    load = -s
    mask = net.gen_bus_mask
    load[:, mask] = pd[:, mask] + 1j * qd[:, mask]
    return sg.real, sg.imag, load.real, load.imag


def _check_fp(ds, net):
    fp = (getattr(ds, "manifest", None) or {}).get("case_fingerprint")
    if fp is not None and fp != net.fingerprint:
        raise FingerprintMismatch(net.fingerprint, fp, what="dataset")


def power_metrics(pred, ds, net, tol=VIOLATION_TOL, y=None):
    """The power block for predicted voltages on dataset ``ds``.

    Samples whose prediction has non-finite entries are excluded; their count
    is returned as ``n_nonfinite``."""
    _check_fp(ds, net)
    vm, va = _arrays(pred)
    ok = np.all(np.isfinite(vm), axis=1) & np.all(np.isfinite(va), axis=1)
    out = {"n_nonfinite": int(np.sum(~ok)), "n_samples": int(np.sum(ok))}
    if not np.any(ok):
        out.update({k: math.nan for k in POWER_KEYS})
        return out
    vm, va = vm[ok], va[ok]
    pd, qd = ds.pd[ok], ds.qd[ok]
    obj = np.asarray(ds.objective)[ok]
    pg, qg, epd, eqd = implied_dispatch((vm, va), pd, qd, net, y)

    cost = pg ** 2 @ net.c2 + pg @ net.c1 + np.sum(net.c0)
    rel = (cost - obj) / obj * 100.0
    out["rel_opt"] = float(np.mean(rel))
    out["abs_rel_opt"] = float(np.mean(np.abs(rel)))

    pv = (pg > net.pmax + tol) | (pg < net.pmin - tol)
    qv = (qg > net.qmax + tol) | (qg < net.qmin - tol)
    out["pg_viol"] = float(np.mean(pv) * 100.0)
    out["qg_viol"] = float(np.mean(qv) * 100.0)

    for key, eff, true in (("pd", epd, pd), ("qd", eqd, qd)):
        tot = np.sum(true, axis=1)
        out[key + "_tot"] = float(np.mean(np.abs(np.sum(eff, axis=1) - tot) / np.abs(tot)) * 100.0)
        nom = net.pd if key == "pd" else net.qd
        nz = np.flatnonzero(nom != 0)
        if len(nz):
            out[key + "_nz"] = float(np.mean(np.abs(eff[:, nz] - true[:, nz]) / np.abs(true[:, nz])) * 100.0)
        else:
            out[key + "_nz"] = 0.0
    return out


def evaluate(pred, ds, net, y=None):
    """Regression and power metrics in one dictionary."""
    out = regression_metrics(pred, (ds.vm, ds.va))
    out.update(power_metrics(pred, ds, net, y=y))
    return out


# --------------------------------------------------------------------------
# demand-sorted errors


@dataclass
class DemandCurves:
    demand: np.ndarray  # aggregate Pd per sample, ascending
    order: np.ndarray
    errors: dict  # method -> sum |Pg error| per sample, in demand order
    spearman: dict = field(default_factory=dict)

    def dominance(self, worse, better):
        """Fraction of samples where ``worse`` has the larger error."""
        return float(np.mean(self.errors[worse] > self.errors[better]))

    def to_csv(self):
        buf = io.StringIO()
        names = list(self.errors)
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sample_id", "aggregate_pd"] + names)
        for r, i in enumerate(self.order):
            w.writerow([int(i), "%.17g" % self.demand[r]] + ["%.17g" % self.errors[m][r] for m in names])
        return buf.getvalue()


def demand_sorted_error(preds, ds, net, y=None):
    """Per-sample sum of |Pg error| for each method, sorted by aggregate Pd."""
    y = build_ybus(net) if y is None else y
    demand = np.sum(ds.pd, axis=1)
    order = np.argsort(demand, kind="stable")
    errs = {}
    rho = {}
    for name, pred in preds.items():
        if isinstance(pred, np.ndarray) and pred.ndim == 2 and pred.shape == ds.pg.shape:
            pg = pred  # a dispatch was given directly
        else:
            pg = implied_dispatch(pred, ds.pd, ds.qd, net, y)[0]
        e = np.sum(np.abs(pg - ds.pg), axis=1)
        errs[name] = e[order]
        if np.ptp(e) > 0:
            rho[name] = float(spearmanr(demand, e).statistic)
        else:
            rho[name] = 0.0
    return DemandCurves(demand[order], order, errs, rho)


# --------------------------------------------------------------------------
# accounting


@dataclass
class Accounting:
    params: int
    macs: int
    inference_s: float = None
    solver_s: float = None

    @property
    def speedup(self):
        if self.inference_s and self.solver_s:
            return self.solver_s / self.inference_s
        return None

    def to_dict(self):
        return {"params": self.params, "macs": self.macs, "inference_s": self.inference_s,
                "solver_s": self.solver_s, "speedup": self.speedup}


def median_time(fn, runs=100):
    ts = []
    for _ in range(runs):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return float(np.median(ts))


def count_model(model):
    """(parameters, MAC per single-sample inference) from layer shapes."""
    if hasattr(model, "param_count") and hasattr(model, "macs"):
        return int(model.param_count()), int(model.macs())
    W = getattr(model, "weights", None)
    b = getattr(model, "intercept", None)
    nb = 0 if b is None else b.size
    if W is None:
        return nb, 0
    return int(W.size + nb), int(W.size)


def account_model(model, infer=None, solve=None, runs=100):
    """Parameter / MAC counts plus median wall-clock of ``infer`` and
    ``solve`` (single-sample callables) over ``runs`` repetitions."""
    params, macs = count_model(model)
    ti = median_time(infer, runs) if infer is not None else None
    ts = median_time(solve, runs) if solve is not None else None
    return Accounting(params, macs, ti, ts)


# --------------------------------------------------------------------------
# reports


@dataclass
class MetricsReport:
    dataset: str
    method: str
    runs: list  # one metrics dict per seed

    def values(self, key):
        return [r[key] for r in self.runs if key in r]

    def mean(self, key):
        v = self.values(key)
        return float(np.mean(v)) if v else math.nan

    def std(self, key):
        v = self.values(key)
        return float(np.std(v)) if len(v) > 1 else 0.0

    def to_dict(self):
        return {"dataset": self.dataset, "method": self.method, "runs": self.runs}

    @classmethod
    def from_dict(cls, d):
        return cls(d["dataset"], d["method"], list(d["runs"]))


def _fmt(key, v):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "n/a"
    if key in REGRESSION_KEYS:
        return "%.3e" % v
    return "%.3f" % v


def _cell(rep, key):
    if not rep.values(key):
        return "n/a"
    m = rep.mean(key)
    if len(rep.runs) > 1:
        return f"{_fmt(key, m)} ± {_fmt(key, rep.std(key))}"
    return _fmt(key, m)


def emit_report(reports, fmt="markdown", columns=COLUMNS):
    """Render one table per dataset (methods as rows)."""
    by_ds = {}
    for r in reports:
        by_ds.setdefault(r.dataset, []).append(r)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        head = ["dataset", "method", "n_runs"]
        for k, _ in columns:
            head += [k, k + "_std"]
        w.writerow(head)
        for ds, reps in by_ds.items():
            for r in reps:
                row = [ds, r.method, len(r.runs)]
                for k, _ in columns:
                    row += ["%.17g" % r.mean(k), "%.17g" % r.std(k)]
                w.writerow(row)
        return buf.getvalue()
    if fmt != "markdown":
        raise ValueError(f"unknown report format {fmt!r}")
    header = "| Method | " + " | ".join(t for _, t in columns) + " |\n"
    header += "|---|" + "---|" * len(columns) + "\n"
    if not by_ds:
        return header
    parts = []
    for ds, reps in by_ds.items():
        lines = [f"### {ds}\n\n", header]
        for r in reps:
            lines.append(f"| {r.method} | " + " | ".join(_cell(r, k) for k, _ in columns) + " |\n")
        parts.append("".join(lines))
    return "\n".join(parts)


_OPS = {
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}


def check_expectations(reports, expectations):
    """Evaluate a list of expectation records against reports.

    Each record: ``{"dataset", "method", "metric", "op", "value"}``, or with
    ``"than": {"method": M, "factor": f}`` to compare against f times another
    method's metric.  Returns the list of violated records (with the observed
    values attached)."""
    if isinstance(expectations, (str, bytes)):
        expectations = json.loads(expectations)
    index = {(r.dataset, r.method): r for r in reports}
    failed = []
    for e in expectations:
        rep = index.get((e.get("dataset"), e["method"]))
        if rep is None and e.get("dataset") is None:
            rep = next((r for r in reports if r.method == e["method"]), None)
        if rep is None:
            failed.append(dict(e, observed=None, reason="method not in report"))
            continue
        got = rep.mean(e["metric"])
        if "than" in e:
            other = index.get((rep.dataset, e["than"]["method"]))
            if other is None:
                failed.append(dict(e, observed=got, reason="comparison method not in report"))
                continue
            bound = e["than"].get("factor", 1.0) * other.mean(e["metric"])
        else:
            bound = e["value"]
        if not (math.isfinite(got) and _OPS[e["op"]](got, bound)):
            failed.append(dict(e, observed=got, bound=bound))
    return failed
