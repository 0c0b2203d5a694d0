"""Command-line entry point: gen-data, fit, solve, eval, report, bench."""

import argparse
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from . import caseparser as cp
from .errors import FingerprintMismatch, LayoutMismatch, OpfBenchError, SolverError
from .grid import build_network

log = logging.getLogger("opfbench")

METHODS = ("grid-avg", "node-avg", "ols", "dcopf", "hotstart", "mlp", "opformer")
FIT_METHODS = ("grid-avg", "node-avg", "ols", "mlp", "opformer")
SOLVE_METHODS = ("dcopf", "hotstart", "acopf", "truth")

EXIT_OK, EXIT_VALIDATION, EXIT_USAGE, EXIT_EXPECTATIONS = 0, 1, 2, 3


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# helpers


def _threads(args):
    from .datagen import resolve_threads

    return resolve_threads(args.threads)


def _write_run(out_dir, args, t0, **info):
    import scipy

    rec = {
        "command": args.command,
        "argv": sys.argv[1:] if args.argv is None else args.argv,
        "opfbench": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "wall_clock_s": round(time.time() - t0, 3),
    }
    rec.update(info)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run.json").write_text(json.dumps(rec, indent=1, sort_keys=True, default=str) + "\n", encoding="utf-8")


def _load_data(path):
    from .datagen import read_dataset

    ds = read_dataset(path)
    net = ds.get_network()
    return ds, net


def write_predictions(path, vm, va, ids, fingerprint, method, pg=None):
    n = vm.shape[1]
    cols = ["sample_id"] + [f"vm_{i}" for i in range(n)] + [f"va_{i}" for i in range(n)]
    if pg is not None:
        cols += [f"pg_{i}" for i in range(pg.shape[1])]
    lines = [f"# opfbench predictions method={method} case_fingerprint={fingerprint}", ",".join(cols)]
    for r, sid in enumerate(ids):
        vals = list(vm[r]) + list(va[r]) + ([] if pg is None else list(pg[r]))
        lines.append(str(int(sid)) + "," + ",".join("%.17g" % v for v in vals))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_predictions(path, n, fingerprint=None):
    """Predictions CSV -> (sample_ids, vm, va, pg or None, meta)."""
    meta = {}
    rows = []
    header = None
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            for tok in line[1:].split():
                if "=" in tok:
                    k, v = tok.split("=", 1)
                    meta[k] = v
            continue
        if not line.strip():
            continue
        if header is None:
            header = [h.strip() for h in line.split(",")]
            continue
        rows.append([float(v) if v.strip().lower() != "nan" else np.nan for v in line.split(",")])
    if header is None:
        raise LayoutMismatch(f"{path}: no header")
    expect = ["sample_id"] + [f"vm_{i}" for i in range(n)] + [f"va_{i}" for i in range(n)]
    if header[:2 * n + 1] != expect:
        raise LayoutMismatch(f"{path}: header does not match {n} buses")
    if fingerprint is not None and meta.get("case_fingerprint", fingerprint) != fingerprint:
        raise FingerprintMismatch(fingerprint, meta["case_fingerprint"], what=f"predictions {path}")
    a = np.array(rows, dtype=float).reshape(len(rows), len(header))
    pg = a[:, 2 * n + 1:] if len(header) > 2 * n + 1 else None
    return a[:, 0].astype(int), a[:, 1:n + 1], a[:, n + 1:2 * n + 1], pg, meta


def _split(ds, name):
    if name == "all":
        return np.arange(len(ds))
    if name not in ds.splits:
        raise UsageError(f"dataset has no split {name!r} (have: {', '.join(ds.splits)})")
    return ds.splits[name]


def _artifact_predict(path, ds, idx, net):
    """Predictions from a fitted artifact (predictor JSON or NN checkpoint)."""
    from .baselines import LinearPredictor
    from .nn.checkpoint import MAGIC, load_checkpoint

    raw = Path(path).read_bytes()
    sub = ds.subset(idx)
    if raw[:len(MAGIC)] == MAGIC:
        s = load_checkpoint(path, net)
        st = s.predict(sub.pd, sub.qd)
        return st.vm, st.va, None, s.cfg.kind
    p = LinearPredictor.from_json(raw.decode("utf-8"), net)
    st = p.predict(sub.pd, sub.qd)
    return st.vm, st.va, None, p.kind


# --------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args):
    from .datagen import generate_dataset, write_dataset

    t0 = time.time()
    text = cp.case_text(args.case)
    raw = cp.parse_case(text, name=Path(args.case).stem)
    net = build_network(raw)
    ds = generate_dataset(net, args.k, variation=args.variation, seed=args.seed, threads=_threads(args),
                          independent_pq=args.independent_pq, case_text=text)
    out = write_dataset(ds, args.out)
    man = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    _write_run(out, args, t0, seed=args.seed, case_fingerprint=net.fingerprint,
               samples_sha256=man["samples_sha256"], discarded=man["discarded"])
    print(f"wrote {len(ds)} samples ({man['discarded']} discarded) to {out}")
    return EXIT_OK


def cmd_fit(args):
    from .baselines import fit_grid_average, fit_node_average, fit_ols

    t0 = time.time()
    ds, net = _load_data(args.data)
    train = ds.split("train")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    info = {"method": args.method, "seed": args.seed, "case_fingerprint": net.fingerprint}
    with threadpool_limits(_threads(args)):
        if args.method in ("grid-avg", "node-avg", "ols"):
            if args.method == "grid-avg":
                p = fit_grid_average(train)
            elif args.method == "node-avg":
                p = fit_node_average(train)
            else:
                p = fit_ols(train, net, all_buses=args.all_buses)
            out.write_text(p.to_json(), encoding="utf-8")
        else:
            from .nn import ModelConfig, TrainConfig, build_model, save_checkpoint, train as train_nn

            cfg = ModelConfig(kind=args.method, features=args.features, seed=args.seed,
                              standardize=not args.no_standardize)
            s = build_model(cfg, net)
            tcfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, seed=args.seed)
            res = train_nn(s, train, ds.split("val"), tcfg)
            save_checkpoint(s, out, extra={"epoch0_loss": res.epoch0_loss, "train_loss": res.train_loss,
                                           "val_loss": res.val_loss, "best_epoch": res.best_epoch})
            info.update(best_epoch=res.best_epoch, best_val=res.best_val, params=s.param_count())
    _write_run(out.parent, args, t0, artifact=str(out), **info)
    print(f"wrote {args.method} to {out}")
    return EXIT_OK


def cmd_solve(args):
    from .acopf import solve_acopf
    from .linopf import HotStartModel, dcopf, make_reference
    from .powerflow import LoadScenario

    t0 = time.time()
    ds, net = _load_data(args.data)
    idx = _split(ds, args.split)
    n = net.n_buses
    vm = np.full((len(idx), n), np.nan)
    va = np.full((len(idx), n), np.nan)
    pg = np.full((len(idx), net.n_gens), np.nan)
    failed = 0
    with threadpool_limits(_threads(args)):
        if args.method == "hotstart":
            ref = make_reference(ds.split("train"), args.reference, net)
            hs = HotStartModel(net, ref)
        for r, i in enumerate(idx):
            sc = LoadScenario(ds.pd[i], ds.qd[i])
            try:
                if args.method == "truth":
                    vm[r], va[r], pg[r] = ds.vm[i], ds.va[i], ds.pg[i]
                    continue
                if args.method == "dcopf":
                    res = dcopf(net, sc)
                elif args.method == "hotstart":
                    res = hs.solve(sc)
                else:
                    res = solve_acopf(net, sc)
                    if not res.converged:
                        raise SolverError("AC-OPF did not converge")
                vm[r], va[r], pg[r] = res.state.vm, res.state.va, res.pg
            except SolverError as exc:
                failed += 1
                log.warning("sample %d: %s", i, exc)
    write_predictions(args.out, vm, va, idx, net.fingerprint, args.method, pg)
    _write_run(Path(args.out).parent, args, t0, method=args.method, split=args.split, failed=failed,
               case_fingerprint=net.fingerprint)
    print(f"wrote {len(idx)} predictions ({failed} failed) to {args.out}")
    return EXIT_OK


def _named(spec):
    if "=" in spec:
        name, path = spec.split("=", 1)
        return name, path
    return Path(spec).stem, spec


def cmd_eval(args):
    from .evalkit import MetricsReport, check_expectations, demand_sorted_error, evaluate

    t0 = time.time()
    ds, net = _load_data(args.data)
    idx = _split(ds, args.split)
    sub = ds.subset(idx)
    reports, dispatch = [], {}
    dname = args.name or ds.manifest.get("case_name", "dataset")
    for spec in args.preds:
        name, path = _named(spec)
        if path.endswith(".csv"):
            ids, vm, va, pg, _ = read_predictions(path, net.n_buses, net.fingerprint)
            if not np.array_equal(ids, idx):
                raise LayoutMismatch(f"{path}: sample ids do not match the {args.split} split")
        else:
            vm, va, pg, _ = _artifact_predict(path, ds, idx, net)
        m = evaluate((vm, va), sub, net)
        reports.append(MetricsReport(dname, name, [m]))
        dispatch[name] = pg if pg is not None and np.all(np.isfinite(pg)) else (vm, va)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps([r.to_dict() for r in reports], indent=1, sort_keys=True) + "\n", encoding="utf-8")
    if args.curves:
        Path(args.curves).write_text(demand_sorted_error(dispatch, sub, net).to_csv(), encoding="utf-8")
    _write_run(out.parent, args, t0, case_fingerprint=net.fingerprint, split=args.split,
               methods=[r.method for r in reports])
    print(f"wrote metrics for {len(reports)} methods to {out}")
    if args.expectations:
        bad = check_expectations(reports, Path(args.expectations).read_text(encoding="utf-8"))
        for b in bad:
            print(f"expectation failed: {json.dumps(b, default=str)}", file=sys.stderr)
        if bad:
            return EXIT_EXPECTATIONS
    return EXIT_OK


def cmd_report(args):
    from .evalkit import MetricsReport, check_expectations, emit_report

    t0 = time.time()
    reports = []
    for path in args.reports:
        for d in json.loads(Path(path).read_text(encoding="utf-8")):
            reports.append(MetricsReport.from_dict(d))
    # merge runs of the same (dataset, method) into one multi-seed row
    merged = {}
    for r in reports:
        key = (r.dataset, r.method)
        if key in merged:
            merged[key].runs.extend(r.runs)
        else:
            merged[key] = MetricsReport(r.dataset, r.method, list(r.runs))
    reps = list(merged.values())
    text = emit_report(reps, args.format)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8")
        _write_run(Path(args.out).parent, args, t0, inputs=args.reports)
    else:
        sys.stdout.write(text)
    if args.expectations:
        bad = check_expectations(reps, Path(args.expectations).read_text(encoding="utf-8"))
        for b in bad:
            print(f"expectation failed: {json.dumps(b, default=str)}", file=sys.stderr)
        if bad:
            return EXIT_EXPECTATIONS
    return EXIT_OK


def cmd_bench(args):
    from .acopf import solve_acopf
    from .baselines import LinearPredictor
    from .evalkit import account_model, median_time
    from .nn.checkpoint import MAGIC, load_checkpoint
    from .powerflow import LoadScenario

    t0 = time.time()
    ds, net = _load_data(args.data)
    i0 = int(_split(ds, "test")[0])
    sc = LoadScenario(ds.pd[i0], ds.qd[i0])
    with threadpool_limits(_threads(args)):
        solver_s = median_time(lambda: solve_acopf(net, sc), args.solver_runs)
        rows = []
        for spec in args.models:
            name, path = _named(spec)
            raw = Path(path).read_bytes()
            if raw[:len(MAGIC)] == MAGIC:
                m = load_checkpoint(path, net)
            else:
                m = LinearPredictor.from_json(raw.decode("utf-8"), net)
            pd1, qd1 = ds.pd[i0:i0 + 1], ds.qd[i0:i0 + 1]
            acc = account_model(m, infer=lambda m=m: m.predict(pd1, qd1), runs=args.runs)
            acc.solver_s = solver_s
            rows.append(dict(method=name, **acc.to_dict()))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(rows, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    _write_run(out.parent, args, t0, case_fingerprint=net.fingerprint)
    for r in rows:
        print(f"{r['method']}: params {r['params']}, MAC {r['macs']}, speedup x{r['speedup']:.1f}")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser():
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = argparse.ArgumentParser(prog="opfbench", description="AC-OPF voltage-prediction benchmark.",
                                formatter_class=fmt)
    p.add_argument("--version", action="version", version=f"opfbench {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")

    def threads(sp):
        sp.add_argument("--threads", type=int, default=None,
                        help="worker cap (falls back to OPFBENCH_THREADS, then 1)")

    g = sub.add_parser("gen-data", help="sample loads and solve ground truth", formatter_class=fmt)
    g.add_argument("--case", required=True, help="shipped case name or path to a MATPOWER .m file")
    g.add_argument("--k", type=int, default=5000, help="number of converged samples")
    g.add_argument("--variation", type=float, default=0.5, help="relative load variation")
    g.add_argument("--seed", type=int, default=0, help="sampling seed")
    g.add_argument("--independent-pq", action="store_true", help="scale Pd and Qd by independent factors")
    g.add_argument("--out", required=True, help="output dataset directory")
    threads(g)
    g.set_defaults(func=cmd_gen_data)

    f = sub.add_parser("fit", help="fit a data-driven predictor", formatter_class=fmt)
    f.add_argument("--method", required=True, choices=FIT_METHODS)
    f.add_argument("--data", required=True, help="dataset directory")
    f.add_argument("--seed", type=int, default=0, help="model / training seed")
    f.add_argument("--out", required=True, help="output artifact (.json for linear, .bin for neural)")
    f.add_argument("--all-buses", action="store_true", help="ols: use every bus as input, not only load buses")
    f.add_argument("--features", default="feats-2", choices=("feats-2", "feats-8"), help="neural input set")
    f.add_argument("--epochs", type=int, default=60, help="training epochs")
    f.add_argument("--batch-size", type=int, default=8, help="minibatch size")
    f.add_argument("--lr", type=float, default=1e-3, help="initial learning rate")
    f.add_argument("--no-standardize", action="store_true", help="train on raw targets")
    threads(f)
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("solve", help="predict with an optimization method", formatter_class=fmt)
    s.add_argument("--method", required=True, choices=SOLVE_METHODS)
    s.add_argument("--data", required=True, help="dataset directory")
    s.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    s.add_argument("--reference", default="node-mean", choices=("node-mean", "mean-load-solve"),
                   help="hotstart linearization point")
    s.add_argument("--out", required=True, help="output predictions CSV")
    threads(s)
    s.set_defaults(func=cmd_solve)

    e = sub.add_parser("eval", help="compute metrics for predictions", formatter_class=fmt)
    e.add_argument("--data", required=True, help="dataset directory")
    e.add_argument("--preds", nargs="+", required=True,
                   help="[name=]path to a predictions CSV, predictor JSON or checkpoint")
    e.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    e.add_argument("--name", default=None, help="dataset label in the report")
    e.add_argument("--out", required=True, help="output metrics JSON")
    e.add_argument("--curves", default=None, help="also write demand-sorted Pg error curves (CSV)")
    e.add_argument("--expectations", default=None, help="JSON expectations; exit 3 if any fails")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="render metrics as tables", formatter_class=fmt)
    r.add_argument("--reports", nargs="+", required=True, help="metrics JSON files from eval")
    r.add_argument("--format", default="markdown", choices=("markdown", "csv"))
    r.add_argument("--out", default=None, help="output file (default: stdout)")
    r.add_argument("--expectations", default=None, help="JSON expectations; exit 3 if any fails")
    r.set_defaults(func=cmd_report)

    b = sub.add_parser("bench", help="parameter, MAC and timing accounting", formatter_class=fmt)
    b.add_argument("--data", required=True, help="dataset directory")
    b.add_argument("--models", nargs="+", required=True, help="[name=]path to fitted artifacts")
    b.add_argument("--runs", type=int, default=100, help="timed inference repetitions")
    b.add_argument("--solver-runs", type=int, default=100, help="timed AC-OPF repetitions")
    b.add_argument("--out", required=True, help="output JSON")
    threads(b)
    b.set_defaults(func=cmd_bench)
    return p


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = argv
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("opfbench: error: a subcommand is required", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"opfbench: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OpfBenchError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"opfbench: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
