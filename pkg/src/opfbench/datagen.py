"""Load sampling, ground-truth solving and dataset persistence."""

import hashlib
import io
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import caseparser as cp
from .acopf import AcopfOptions, solve_acopf
from .errors import CorruptFile, FingerprintMismatch, RetryBudgetExhausted, SchemaVersionMismatch
from .grid import build_network
from .powerflow import LoadScenario

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SAMPLER_ID = "lhs-pcg64-raw53-v1"
SPLIT_STREAM = 0x5EED5  # SeedSequence stream tag for the split shuffle
SPLIT_FRACTIONS = (0.6, 0.15)


# --------------------------------------------------------------------------
# sampling


def _uniforms(seed, stream, count):
    """Doubles in [0, 1) from the raw PCG64 stream: top 53 bits of each word.

    Raw PCG64 output and SeedSequence are fixed algorithms, so the result does
    not depend on numpy's Generator method implementations.
    """
    bg = np.random.PCG64(np.random.SeedSequence([int(seed), int(stream)]))
    raw = bg.random_raw(count)
    return (raw >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def lhs_sample(K, d, seed, stream=0):
    """K x d Latin hypercube in [0, 1): one point per stratum [k/K, (k+1)/K) per column."""
    if K < 1 or d < 1:
        raise ValueError("lhs_sample needs K >= 1 and d >= 1")
    u = _uniforms(seed, stream, 2 * K * d).reshape(d, 2 * K)
    out = np.empty((K, d))
    for j in range(d):
        strata = np.argsort(u[j, :K], kind="stable")
        out[:, j] = (strata + u[j, K:]) / K
    # guard against rounding up to exactly 1.0
    return np.minimum(out, np.nextafter(1.0, 0.0))


def scale_loads(net, unit, variation, independent_pq=False):
    """Map LHS coordinates to scenarios.  One column per load bus (two when
    ``independent_pq``); factors are uniform in [1 - variation, 1 + variation]."""
    lb = net.load_buses
    fac = 1.0 - variation + 2.0 * variation * unit
    K = unit.shape[0]
    pd = np.tile(net.pd, (K, 1))
    qd = np.tile(net.qd, (K, 1))
    if independent_pq:
        pd[:, lb] *= fac[:, : len(lb)]
        qd[:, lb] *= fac[:, len(lb):]
    else:
        pd[:, lb] *= fac
        qd[:, lb] *= fac
    return pd, qd


def split_indices(K, seed):
    """Seeded 60/15/25 split; sizes floor(0.6K), floor(0.15K), remainder."""
    keys = _uniforms(seed, SPLIT_STREAM, K)
    perm = np.argsort(keys, kind="stable")
    n_tr = int(np.floor(SPLIT_FRACTIONS[0] * K))
    n_va = int(np.floor(SPLIT_FRACTIONS[1] * K))
    return {
        "train": np.sort(perm[:n_tr]),
        "val": np.sort(perm[n_tr:n_tr + n_va]),
        "test": np.sort(perm[n_tr + n_va:]),
    }


# --------------------------------------------------------------------------
# dataset container


@dataclass
class Dataset:
    pd: np.ndarray
    qd: np.ndarray
    vm: np.ndarray
    va: np.ndarray
    pg: np.ndarray
    qg: np.ndarray
    objective: np.ndarray
    splits: dict
    manifest: dict = field(default_factory=dict)
    case_text: str = None
    net: object = field(default=None, repr=False, compare=False)

    def __len__(self):
        return len(self.objective)

    @property
    def fingerprint(self):
        return self.manifest.get("case_fingerprint")

    def scenario(self, i):
        return LoadScenario(self.pd[i].copy(), self.qd[i].copy())

    def subset(self, idx):
        idx = np.asarray(idx, dtype=int)
        return replace(
            self, pd=self.pd[idx], qd=self.qd[idx], vm=self.vm[idx], va=self.va[idx],
            pg=self.pg[idx], qg=self.qg[idx], objective=self.objective[idx],
            splits={}, manifest=dict(self.manifest, subset_of=len(self)),
        )

    def split(self, name):
        return self.subset(self.splits[name])

    @property
    def train(self):
        return self.split("train")

    @property
    def val(self):
        return self.split("val")

    @property
    def test(self):
        return self.split("test")

    def same_as(self, other):
        arrs = ("pd", "qd", "vm", "va", "pg", "qg", "objective")
        if any(not np.array_equal(getattr(self, a), getattr(other, a)) for a in arrs):
            return False
        if set(self.splits) != set(other.splits):
            return False
        return all(np.array_equal(self.splits[k], other.splits[k]) for k in self.splits)

    def get_network(self):
        if self.net is None:
            if self.case_text is None:
                raise ValueError("dataset carries no case; pass the network explicitly")
            self.net = build_network(cp.parse_case(self.case_text, name=self.manifest.get("case_name")))
        return self.net


# --------------------------------------------------------------------------
# generation

_W = {}


def _init_worker(net, opts, start):
    threadpool_limits(1)
    _W.update(net=net, opts=opts, start=start)


def _solve_chunk(args):
    pd, qd = args
    net, opts, start = _W["net"], _W["opts"], _W["start"]
    out = []
    for i in range(len(pd)):
        sol = solve_acopf(net, LoadScenario(pd[i], qd[i]), opts, start=start)
        out.append((sol.converged, sol.state.vm, sol.state.va, sol.pg, sol.qg, sol.objective))
    return out


def _solve_all(net, pd, qd, opts, start, threads, chunk=16):
    chunks = [(pd[i:i + chunk], qd[i:i + chunk]) for i in range(0, len(pd), chunk)]
    if threads <= 1:
        _init_worker(net, opts, start)
        res = [_solve_chunk(c) for c in chunks]
    else:
        with ProcessPoolExecutor(threads, initializer=_init_worker, initargs=(net, opts, start)) as ex:
            res = list(ex.map(_solve_chunk, chunks))
    return [r for block in res for r in block]


def resolve_threads(threads=None):
    if threads is None:
        env = os.environ.get("OPFBENCH_THREADS")
        threads = int(env) if env else 1
    return max(1, int(threads))


def generate_dataset(net, K, variation=0.5, seed=0, threads=None, independent_pq=False,
                     retry_factor=5, options=None, case_text=None, progress=None):
    """Sample K converged AC-OPF scenarios around the nominal load."""
    opts = options or AcopfOptions()
    threads = resolve_threads(threads)
    with threadpool_limits(1):
        nominal = solve_acopf(net, LoadScenario.nominal(net), opts)
    start = nominal if nominal.converged else None
    d = len(net.load_buses) * (2 if independent_pq else 1)
    budget = retry_factor * K
    kept = []
    draws = 0
    batch = 0
    while len(kept) < K:
        want = K - len(kept)
        if draws >= budget:
            raise RetryBudgetExhausted(len(kept), draws, K)
        want = min(want, budget - draws)
        unit = lhs_sample(want, d, seed, stream=batch)
        pd, qd = scale_loads(net, unit, variation, independent_pq)
        with threadpool_limits(1):
            sols = _solve_all(net, pd, qd, opts, start, threads)
        for i, s in enumerate(sols):
            if s[0] and len(kept) < K:
                kept.append((pd[i], qd[i]) + tuple(s[1:]))
        draws += want
        batch += 1
        if progress:
            progress(len(kept), draws)
        log.info("batch %d: %d/%d converged so far after %d draws", batch, len(kept), K, draws)

    pdk, qdk, vm, va, pg, qg, obj = (np.array(col) for col in zip(*kept))
    splits = split_indices(K, seed)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "case_name": net.name,
        "case_fingerprint": net.fingerprint,
        "seed": int(seed),
        "variation": float(variation),
        "K": int(K),
        "sampler": SAMPLER_ID,
        "independent_pq": bool(independent_pq),
        "draws": int(draws),
        "discarded": int(draws - K),
        "n_buses": net.n_buses,
        "n_gens": net.n_gens,
    }
    return Dataset(pdk, qdk, vm, va, pg, qg, obj.astype(float), splits, manifest, case_text, net)


# --------------------------------------------------------------------------
# persistence


def csv_header(n, g):
    cols = ["sample_id"]
    for pre, cnt in (("pd", n), ("qd", n), ("vm", n), ("va", n), ("pg", g), ("qg", g)):
        cols += [f"{pre}_{i}" for i in range(cnt)]
    cols.append("objective")
    return cols


def _samples_csv(ds):
    n = ds.pd.shape[1]
    g = ds.pg.shape[1]
    buf = io.StringIO()
    buf.write(",".join(csv_header(n, g)) + "\n")
    body = np.column_stack([np.arange(len(ds)), ds.pd, ds.qd, ds.vm, ds.va, ds.pg, ds.qg, ds.objective])
    for row in body:
        buf.write(str(int(row[0])) + "," + ",".join("%.17g" % v for v in row[1:]) + "\n")
    return buf.getvalue()


def write_dataset(ds, path):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    text = _samples_csv(ds)
    man = dict(ds.manifest)
    man["splits"] = {k: [int(i) for i in v] for k, v in ds.splits.items()}
    man["samples_sha256"] = hashlib.sha256(text.encode()).hexdigest()
    (path / "samples.csv").write_text(text, encoding="utf-8")
    if ds.case_text is not None:
        (path / "case.m").write_text(ds.case_text, encoding="utf-8")
    (path / "manifest.json").write_text(json.dumps(man, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _parse_samples(text, n, g, where):
    lines = text.splitlines()
    if not lines:
        raise CorruptFile(f"{where}: empty samples file")
    header = lines[0].strip().split(",")
    expect = csv_header(n, g)
    if [h.strip() for h in header] != expect:
        raise CorruptFile(f"{where}: header does not match {n} buses / {g} generators")
    rows = []
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != len(expect):
            raise CorruptFile(f"{where}: line {ln} has {len(parts)} fields, expected {len(expect)}")
        try:
            rows.append([float(v) for v in parts])
        except ValueError:
            raise CorruptFile(f"{where}: line {ln} has a non-numeric field") from None
    if not rows:
        raise CorruptFile(f"{where}: no samples")
    a = np.array(rows)
    if not np.all(np.isfinite(a)):
        raise CorruptFile(f"{where}: non-finite values")
    if not np.array_equal(a[:, 0], np.arange(len(a))):
        raise CorruptFile(f"{where}: sample_id column is not 0..K-1")
    o = 1
    out = []
    for cnt in (n, n, n, n, g, g):
        out.append(a[:, o:o + cnt])
        o += cnt
    out.append(a[:, o])
    return out


def _check_splits(splits, K, where):
    allidx = np.concatenate([np.asarray(v, dtype=int) for v in splits.values()]) if splits else np.zeros(0, int)
    if len(allidx) != K or not np.array_equal(np.sort(allidx), np.arange(K)):
        raise CorruptFile(f"{where}: splits must be disjoint and cover all {K} samples")


def read_dataset(path, net=None):
    """Read a dataset directory written by :func:`write_dataset`."""
    path = Path(path)
    try:
        man = json.loads((path / "manifest.json").read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CorruptFile(f"{path}: no manifest.json") from None
    except json.JSONDecodeError as exc:
        raise CorruptFile(f"{path}/manifest.json: {exc}") from None
    if man.get("schema_version") != SCHEMA_VERSION:
        raise SchemaVersionMismatch(
            f"{path}: schema version {man.get('schema_version')!r}, this reader supports {SCHEMA_VERSION}"
        )
    try:
        text = (path / "samples.csv").read_text(encoding="utf-8")
    except FileNotFoundError:
        raise CorruptFile(f"{path}: no samples.csv") from None
    if "samples_sha256" in man and hashlib.sha256(text.encode()).hexdigest() != man["samples_sha256"]:
        raise CorruptFile(f"{path}/samples.csv does not match the checksum in the manifest")
    n, g = int(man["n_buses"]), int(man["n_gens"])
    pd, qd, vm, va, pg, qg, obj = _parse_samples(text, n, g, f"{path}/samples.csv")
    if len(obj) != int(man["K"]):
        raise CorruptFile(f"{path}: manifest says K={man['K']} but found {len(obj)} samples")
    splits = {k: np.asarray(v, dtype=int) for k, v in man.get("splits", {}).items()}
    _check_splits(splits, len(obj), str(path))
    case_text = None
    if (path / "case.m").exists():
        case_text = (path / "case.m").read_text(encoding="utf-8")
        fp = cp.case_fingerprint(cp.parse_case(case_text))
        if fp != man["case_fingerprint"]:
            raise FingerprintMismatch(man["case_fingerprint"], fp, what=f"{path}/case.m")
    if net is not None and net.fingerprint != man["case_fingerprint"]:
        raise FingerprintMismatch(net.fingerprint, man["case_fingerprint"], what=f"dataset {path}")
    man = {k: v for k, v in man.items() if k not in ("splits", "samples_sha256")}
    return Dataset(pd, qd, vm, va, pg, qg, obj, splits, man, case_text, net)


def load_external_csv(csv_path, split_manifest, net):
    """Load a samples CSV produced elsewhere, with splits given in a JSON file
    ``{"train": [...], "val": [...], "test": [...]}`` (optionally with
    ``case_fingerprint``)."""
    csv_path = Path(csv_path)
    try:
        splits_doc = json.loads(Path(split_manifest).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CorruptFile(f"{split_manifest}: {exc}") from None
    fp = splits_doc.get("case_fingerprint")
    if fp is not None and fp != net.fingerprint:
        raise FingerprintMismatch(net.fingerprint, fp, what=f"split manifest {split_manifest}")
    text = csv_path.read_text(encoding="utf-8")
    pd, qd, vm, va, pg, qg, obj = _parse_samples(text, net.n_buses, net.n_gens, str(csv_path))
    splits = {k: np.asarray(splits_doc[k], dtype=int) for k in ("train", "val", "test") if k in splits_doc}
    _check_splits(splits, len(obj), str(split_manifest))
    man = {
        "schema_version": SCHEMA_VERSION,
        "case_name": net.name,
        "case_fingerprint": net.fingerprint,
        "K": len(obj),
        "sampler": "external",
        "n_buses": net.n_buses,
        "n_gens": net.n_gens,
    }
    return Dataset(pd, qd, vm, va, pg, qg, obj, splits, man, None, net)
