"""Command-line interface: ``sfp <command> [flags]``.

Exit codes: 0 success, 2 usage or domain error, 3 data/schema error,
4 numeric failure.  Errors are written to standard error as one JSON object.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import warnings

import numpy as np

from . import __version__
from .data import (PreprocessStats, dataset_from_table, gen_synthetic, load_csv, preprocess,
                   write_csv)
from .evaluation import default_grid, grid_search, kfold_cv, write_tuning_report
from .exceptions import DataError, DomainError, NumericError, SchemaError, SFPError
from .gme import certify_equivalence, random_instance
from .inference import predict_batch, select_features
from .losses import LossKind
from .model import Hyperparams, SFPModel, load_model, save_model
from .training import FitConfig, fit

log = logging.getLogger("sfp")

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class UsageError(Exception):
    pass


def _env_threads() -> int:
    raw = os.environ.get("SFP_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise UsageError(f"SFP_THREADS must be an integer, got {raw!r}") from None


# ---------------------------------------------------------------------------
# argument parsing


def _add_seed(p):
    p.add_argument("--seed", type=int, default=None, help="random seed (required)")


def _add_hyper(p):
    p.add_argument("--k", type=int, default=None, help="number of clusters")
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--alpha-prime", type=float, default=None, help="alpha = (1 - a') / a'")
    p.add_argument("--gamma-prime", type=float, default=None)
    p.add_argument("--lambda-prime", type=float, default=None)


def _add_data(p, label=True):
    p.add_argument("--data", required=False, default=None, help="input CSV")
    if label:
        p.add_argument("--label", default="y", help="label column name (default: y)")
        p.add_argument("--loss", default="logloss", choices=[k.value for k in LossKind])


def _add_fit(p):
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-6, help="center shift tolerance")
    p.add_argument("--n-init", type=int, default=1,
                   help="random restarts; the lowest-objective fit is kept")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sfp", description="Supervised fuzzy partitioning")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", default=None, help="JSON file supplying flag defaults")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--kind", required=False, default=None,
                   choices=["spiral", "two_circle", "xor", "mixture3"])
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--out", default=None)
    _add_seed(p)

    p = sub.add_parser("train", help="fit a model")
    _add_data(p)
    _add_hyper(p)
    _add_fit(p)
    p.add_argument("--model", default=None, help="output model JSON")
    p.add_argument("--no-standardize", action="store_true",
                   help="fit on raw features (numeric columns only)")
    _add_seed(p)

    p = sub.add_parser("predict", help="predict with a saved model")
    p.add_argument("--model", default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--label", default=None, help="label column to ignore if present")
    p.add_argument("--out", default=None)

    p = sub.add_parser("cv", help="repeated stratified k-fold cross-validation")
    _add_data(p)
    _add_hyper(p)
    _add_fit(p)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", default=None, help="JSON report path (default: stdout)")
    _add_seed(p)

    p = sub.add_parser("tune", help="grid search with cross-validation")
    _add_data(p)
    _add_fit(p)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--strategy", type=int, default=3, choices=[1, 2, 3])
    p.add_argument("--q", type=float, default=20.0, help="top percentage for strategy 2")
    p.add_argument("--full-grid", action="store_true")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--report", default=None, help="per-point CSV report")
    p.add_argument("--out", default=None, help="JSON with the selected hyperparameters")
    _add_seed(p)

    p = sub.add_parser("select-features", help="weight-mass feature selection from a model")
    p.add_argument("--model", default=None)
    p.add_argument("--threshold", type=float, default=0.9)
    p.add_argument("--out", default=None)

    p = sub.add_parser("gme-check", help="certify EM and BCD iterates coincide")
    p.add_argument("--n", type=int, default=30)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--p", type=int, default=2)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--free-mixing", action="store_true", help="re-estimate mixing proportions")
    p.add_argument("--out", default=None)
    _add_seed(p)

    p = sub.add_parser("decision-grid", help="predicted labels on a dense 2-D grid")
    p.add_argument("--model", default=None)
    p.add_argument("--data", default=None, help="CSV whose feature ranges bound the grid")
    p.add_argument("--bounds", type=float, nargs=4, default=None,
                   metavar=("X1MIN", "X1MAX", "X2MIN", "X2MAX"))
    p.add_argument("--resolution", type=int, default=200)
    p.add_argument("--out", default=None)
    return parser


def _parse(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                cfg = json.load(fh)
        except OSError as exc:
            raise DataError(f"cannot read config {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise DataError(f"config {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(cfg, dict):
            raise DataError("config must be a JSON object")
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        if "lambda" in cfg:
            cfg["lam"] = cfg.pop("lambda")
        # re-parse so that flags on the command line override the file
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(cfg) - known - {"command", "config", "verbose"})
        if unknown:
            raise UsageError(f"unknown config key(s) for {args.command}: {', '.join(unknown)}")
        sub.set_defaults(**{k: v for k, v in cfg.items() if k in known})
        args = parser.parse_args(argv)
    return args


def _need(args, *names):
    for nm in names:
        if getattr(args, nm, None) is None:
            raise UsageError(f"{args.command}: --{nm.replace('_', '-')} is required")


def _resolve_hyper(args) -> Hyperparams:
    _need(args, "k")
    vals = {}
    for raw, primed in (("alpha", "alpha_prime"), ("gamma", "gamma_prime"), ("lam", "lambda_prime")):
        r, q = getattr(args, raw), getattr(args, primed)
        if q is not None:
            if r is not None:
                warnings.warn(f"both --{raw.replace('lam', 'lambda')} and --{primed.replace('_', '-')} "
                              "given; using the primed value", stacklevel=2)
            if not 0.0 < q <= 1.0:
                raise DomainError(f"--{primed.replace('_', '-')} must lie in (0, 1]")
            r = (1.0 - q) / q
        if r is None:
            raise UsageError(f"{args.command}: give --{raw.replace('lam', 'lambda')} or "
                             f"--{primed.replace('_', '-')}")
        vals[raw] = r
    return Hyperparams(k=args.k, alpha=vals["alpha"], gamma=vals["gamma"], lam=vals["lam"])


def _threads(args) -> int:
    t = args.threads if args.threads is not None else _env_threads()
    if t < 1:
        raise UsageError("--threads must be positive")
    return t


def _emit_json(obj, path):
    text = json.dumps(obj, indent=1, default=_json_default)
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    _need(args, "kind", "n", "out")
    write_csv(gen_synthetic(args.kind, args.n, args.seed), args.out)
    return 0


def cmd_train(args) -> int:
    _need(args, "data", "model")
    hyper = _resolve_hyper(args)
    kind = LossKind.parse(args.loss)
    raw = load_csv(args.data, args.label)
    if args.no_standardize:
        data, stats = dataset_from_table(raw, kind), None
    else:
        data, st = preprocess(raw, loss_kind=kind)
        stats = st.to_dict()
    res = fit(data, hyper, kind, FitConfig(args.max_iters, args.tol, args.seed, n_init=args.n_init))
    if not res.converged:
        log.warning("did not converge within %d iterations", res.iterations)
    extra = {"iterations": res.iterations, "converged": res.converged, "seed": args.seed,
             "label_column": args.label}
    if res.objective_trace:
        extra["final_objective"] = res.objective_trace[-1]
    save_model(SFPModel(res.params, hyper, stats, data.class_names, data.feature_names, extra),
               args.model)
    log.info("model written to %s after %d iteration(s)", args.model, res.iterations)
    return 0


def _header(path) -> list[str]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            return [h.strip() for h in next(csv.reader(fh), [])]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def _features_for(model: SFPModel, path, label):
    """Load a CSV and map it to the model's feature space.  Returns ``(X, ids)``."""
    stats = model.preprocess_stats
    label = label or (model.extra or {}).get("label_column", "y")
    if stats is not None:
        st = PreprocessStats.from_dict(stats)
        # the fit-time column kinds win over per-file type inference
        present = set(_header(path))
        hints = {c["name"]: c["kind"] for c in st.columns if c["name"] in present}
        raw = load_csv(path, label, schema_hints=hints, require_label=False)
        data, _ = preprocess(raw, st, with_labels=False, loss_kind=model.params.loss_kind)
        X = data.features
    else:
        raw = load_csv(path, label, require_label=False)
        names = model.feature_names or tuple(c.name for c in raw.columns)
        by = {c.name: c for c in raw.columns}
        missing = [nm for nm in names if nm not in by]
        if missing:
            raise SchemaError(f"columns {missing} missing from {path}")
        X = np.column_stack([by[nm].values.astype(float) for nm in names])
    return X, raw.n_rows


def cmd_predict(args) -> int:
    _need(args, "model", "data", "out")
    model = load_model(args.model)
    X, n = _features_for(model, args.data, args.label)
    pred = predict_batch(X, model.params, model.hyper)
    kind = model.params.loss_kind
    names = model.class_names
    header = ["id", "predicted_label"]
    if pred.class_scores is not None:
        header += [f"score_class_{m + 1}" for m in range(pred.class_scores.shape[1])]
    else:
        header += ["score"]
    header += [f"membership_{j + 1}" for j in range(model.params.k)]
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(n):
            lab = pred.labels[i]
            if kind is LossKind.LOGLOSS and names:
                lab = names[int(lab)]
            elif kind is LossKind.LOGISTIC and names:
                lab = names[1 if lab > 0 else 0]
            else:
                lab = repr(float(lab)) if kind is LossKind.SQUARED_ERROR else int(lab)
            row = [i + 1, lab]
            if pred.class_scores is not None:
                row += [repr(float(v)) for v in pred.class_scores[i]]
            else:
                row += [repr(float(pred.scores[i]))]
            row += [repr(float(v)) for v in pred.memberships[i]]
            w.writerow(row)
    return 0


def cmd_cv(args) -> int:
    _need(args, "data")
    hyper = _resolve_hyper(args)
    kind = LossKind.parse(args.loss)
    raw = load_csv(args.data, args.label)
    rep = kfold_cv(raw, hyper, kind, args.folds, args.repeats, args.seed,
                   config=FitConfig(args.max_iters, args.tol, record_trace=False, n_init=args.n_init),
                   threads=_threads(args))
    out = rep.to_dict()
    out.update({"hyperparams": hyper.to_dict(), "folds_per_repeat": args.folds,
                "repeats": args.repeats, "seed": args.seed})
    _emit_json(out, args.out)
    return 0


def cmd_tune(args) -> int:
    _need(args, "data")
    kind = LossKind.parse(args.loss)
    raw = load_csv(args.data, args.label)
    n_classes = len({str(v) for v in raw.labels}) if kind is not LossKind.SQUARED_ERROR else 2
    n_train = raw.n_rows - raw.n_rows // args.folds
    grid = default_grid(n_train, n_classes, include_full=args.full_grid)
    best, rows = grid_search(raw, grid, kind, args.folds, args.repeats, args.seed, args.strategy,
                             args.q, FitConfig(args.max_iters, args.tol, record_trace=False, n_init=args.n_init),
                             threads=_threads(args))
    if args.report:
        write_tuning_report(rows, args.report)
    top = max(rows, key=lambda r: r.mean_accuracy)
    _emit_json({"selected": best.to_dict(), "strategy": args.strategy, "grid_points": len(rows),
                "best_raw_point": {"k": top.point.k, "alpha_prime": top.point.alpha_prime,
                                   "gamma_prime": top.point.gamma_prime,
                                   "lambda_prime": top.point.lambda_prime,
                                   "mean_accuracy": top.mean_accuracy}}, args.out)
    return 0


def cmd_select_features(args) -> int:
    _need(args, "model")
    model = load_model(args.model)
    sel = select_features(model.params, args.threshold)
    names = model.feature_names
    label = (lambda i: names[i]) if names else (lambda i: i)
    _emit_json({"threshold": sel.mass_threshold,
                "per_cluster": [[label(i) for i in s] for s in sel.per_cluster],
                "union": [label(i) for i in sel.union],
                "counts": list(sel.counts)}, args.out)
    return 0


def cmd_gme_check(args) -> int:
    data, init = random_instance(args.n, args.k, args.p, args.classes, args.seed,
                                 args.gamma, args.lam, fixed_mixing=not args.free_mixing)
    _emit_json(certify_equivalence(data, init, args.iters), args.out)
    return 0


def cmd_decision_grid(args) -> int:
    _need(args, "model", "out")
    model = load_model(args.model)
    stats = PreprocessStats.from_dict(model.preprocess_stats) if model.preprocess_stats else None
    if stats is not None:
        if any(c["kind"] != "numeric" for c in stats.columns) or len(stats.columns) != 2 \
                or len(stats.output_names) != 2:
            raise DomainError("decision-grid needs a model over exactly two numeric features")
    elif model.params.p != 2:
        raise DomainError("decision-grid needs a model over exactly two features")
    if args.resolution < 2:
        raise DomainError("--resolution must be at least 2")
    if args.bounds is not None:
        b = args.bounds
    elif args.data is not None:
        label = (model.extra or {}).get("label_column", "y")
        raw = load_csv(args.data, label, require_label=False)
        cols = [c.values.astype(float) for c in raw.columns if c.kind == "numeric"][:2]
        if len(cols) != 2:
            raise DomainError("--data must have two numeric feature columns")
        b = []
        for v in cols:
            lo, hi = np.nanmin(v), np.nanmax(v)
            pad = 0.05 * (hi - lo if hi > lo else 1.0)
            b += [lo - pad, hi + pad]
    else:
        raise UsageError("decision-grid: give --bounds or --data")
    g1 = np.linspace(b[0], b[1], args.resolution)
    g2 = np.linspace(b[2], b[3], args.resolution)
    A, B = np.meshgrid(g1, g2, indexing="ij")
    pts = np.column_stack([A.ravel(), B.ravel()])
    X = pts if stats is None else (pts - np.asarray(stats.means)) / np.asarray(stats.stds)
    pred = predict_batch(X, model.params, model.hyper)
    names = model.class_names
    kind = model.params.loss_kind
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        nm = model.feature_names if model.feature_names else ("x1", "x2")
        w.writerow([nm[0], nm[1], "predicted_label"])
        for (x1, x2), lab in zip(pts, pred.labels):
            if kind is LossKind.LOGLOSS and names:
                lab = names[int(lab)]
            elif kind is LossKind.LOGISTIC and names:
                lab = names[1 if lab > 0 else 0]
            w.writerow([repr(float(x1)), repr(float(x2)), lab])
    return 0


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "predict": cmd_predict,
    "cv": cmd_cv,
    "tune": cmd_tune,
    "select-features": cmd_select_features,
    "gme-check": cmd_gme_check,
    "decision-grid": cmd_decision_grid,
}

SEEDED = {"gen", "train", "cv", "tune", "gme-check"}


def _fail(code: int, kind: str, msg: str) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": msg, "exit_code": code}) + "\n")
    return code


def run(argv=None) -> int:
    """Run one command; returns the process exit code."""
    try:
        args = _parse(argv)
    except SystemExit as exc:  # argparse usage errors and --help/--version
        return int(exc.code or 0)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", str(exc))
    except DataError as exc:
        return _fail(EXIT_DATA, "data", str(exc))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command in SEEDED and getattr(args, "seed", None) is None:
            raise UsageError(f"{args.command}: --seed is required")
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return COMMANDS[args.command](args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", str(exc))
    except NumericError as exc:
        return _fail(EXIT_NUMERIC, "numeric", str(exc))
    except DomainError as exc:
        return _fail(EXIT_USAGE, "domain", str(exc))
    except DataError as exc:
        return _fail(EXIT_DATA, "data", str(exc))
    except SFPError as exc:
        return _fail(EXIT_USAGE, type(exc).__name__, str(exc))


def main() -> None:
    sys.exit(run())
