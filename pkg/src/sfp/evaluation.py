"""Cross-validation, hyperparameter grids and selection, and classification metrics."""

from __future__ import annotations

import csv
import hashlib
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .data import RawTable, label_sort_key, preprocess, table_from_dataset
from .exceptions import DomainError
from .inference import predict_batch
from .losses import LossKind
from .model import Dataset, Hyperparams
from .training import FitConfig, fit, make_rng

__all__ = [
    "ReparamPoint",
    "reparam",
    "default_grid",
    "MetricReport",
    "compute_metrics",
    "auc_score",
    "stratified_folds",
    "kfold_cv",
    "loess_smooth",
    "GridRow",
    "grid_search",
    "select_point",
    "write_tuning_report",
    "point_seed",
]

AXES = ("k", "alpha_prime", "gamma_prime", "lambda_prime")


@dataclass(frozen=True)
class ReparamPoint:
    """Hyperparameters on the bounded scale used for grid search.

    ``alpha = (1 - alpha') / alpha'`` and likewise for gamma and lambda.
    """

    alpha_prime: float
    gamma_prime: float
    lambda_prime: float
    k: int

    def __post_init__(self):
        if not 0.0 < self.alpha_prime <= 1.0:
            raise DomainError(f"alpha' must lie in (0, 1], got {self.alpha_prime}")
        if not 0.0 < self.gamma_prime < 1.0:
            raise DomainError(f"gamma' must lie in (0, 1), got {self.gamma_prime}")
        if not 0.0 < self.lambda_prime < 1.0:
            raise DomainError(f"lambda' must lie in (0, 1), got {self.lambda_prime}")
        if int(self.k) != self.k or self.k < 2:
            raise DomainError(f"k must be an integer >= 2, got {self.k}")
        object.__setattr__(self, "k", int(self.k))

    def as_tuple(self) -> tuple:
        return (self.k, self.alpha_prime, self.gamma_prime, self.lambda_prime)


def reparam(point: ReparamPoint) -> Hyperparams:
    return Hyperparams(
        k=point.k,
        alpha=(1.0 - point.alpha_prime) / point.alpha_prime,
        gamma=(1.0 - point.gamma_prime) / point.gamma_prime,
        lam=(1.0 - point.lambda_prime) / point.lambda_prime,
    )


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def default_grid(n_train: int, n_classes: int, include_full: bool = False) -> list[ReparamPoint]:
    """Reduced 5 x 5 x 10 search grid (or the 5 x 10^3 full grid).

    k runs over ``M + i (n' - M) / 4`` for ``i = 0..4`` rounded half-up and
    deduplicated; reduced grid: gamma' in 0.55..0.95, alpha' = gamma' / 2,
    lambda' in 0.05..0.95; full grid: all three primes in 0.05..0.95.
    """
    if n_classes < 2:
        raise DomainError("need at least 2 classes")
    if n_train <= n_classes:
        raise DomainError(f"n_train={n_train} must exceed the class count {n_classes}")
    ks = []
    for i in range(5):
        k = _round_half_up(n_classes + i * (n_train - n_classes) / 4)
        if k not in ks:
            ks.append(k)
    tenths = [round(0.05 + 0.1 * i, 10) for i in range(10)]
    if include_full:
        return [ReparamPoint(a, g, l, k) for k in ks for g in tenths for a in tenths for l in tenths]
    gammas = [round(0.55 + 0.1 * i, 10) for i in range(5)]
    return [ReparamPoint(g / 2, g, l, k) for k in ks for g in gammas for l in tenths]


# ---------------------------------------------------------------------------
# metrics


def auc_score(y_true, scores) -> float:
    """Area under the ROC curve via the Mann-Whitney statistic (ties count 1/2)."""
    y = np.asarray(y_true).astype(bool)
    s = np.asarray(scores, dtype=float)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise DomainError("AUC is undefined when only one class is present")
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(len(s))
    sorted_s = s[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass(frozen=True)
class MetricReport:
    """Classification metrics; binary-only fields are ``None`` for multi-class tasks."""

    accuracy: float
    sensitivity: float | None = None
    specificity: float | None = None
    auc: float | None = None
    std: dict = field(default_factory=dict)
    folds: tuple = ()

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "sensitivity": self.sensitivity,
                "specificity": self.specificity, "auc": self.auc, "std": dict(self.std),
                "n_folds": len(self.folds), "folds": [dict(f) for f in self.folds]}


def compute_metrics(y_true, scores, labels_pred, positive_class=1) -> MetricReport:
    """Accuracy, and for two-class problems sensitivity, specificity and AUC.

    ``scores`` are positive-class probabilities (may be ``None`` for
    multi-class data).
    """
    y = np.asarray(y_true)
    yp = np.asarray(labels_pred)
    if y.shape != yp.shape or y.ndim != 1 or y.size == 0:
        raise DomainError("y_true and labels_pred must be equal-length non-empty vectors")
    acc = float(np.mean(y == yp))
    classes = np.unique(y)
    if classes.size > 2 or scores is None:
        return MetricReport(acc, folds=({"accuracy": acc},))
    pos = y == positive_class
    pred_pos = yp == positive_class
    tp = int(np.sum(pos & pred_pos))
    tn = int(np.sum(~pos & ~pred_pos))
    fn = int(np.sum(pos & ~pred_pos))
    fp = int(np.sum(~pos & pred_pos))
    sens = tp / (tp + fn) if tp + fn else None
    spec = tn / (tn + fp) if tn + fp else None
    auc = auc_score(pos, scores)
    m = {"accuracy": acc, "sensitivity": sens, "specificity": spec, "auc": auc}
    return MetricReport(acc, sens, spec, auc, folds=(m,))


def _aggregate(fold_metrics: list[dict]) -> MetricReport:
    out, std = {}, {}
    for name in ("accuracy", "sensitivity", "specificity", "auc"):
        vals = [f[name] for f in fold_metrics if f.get(name) is not None]
        out[name] = float(np.mean(vals)) if vals else None
        if vals:
            std[name] = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
    return MetricReport(out["accuracy"], out["sensitivity"], out["specificity"], out["auc"],
                        std, tuple(fold_metrics))


# ---------------------------------------------------------------------------
# cross-validation


def stratified_folds(labels, folds: int, rng) -> list[np.ndarray]:
    """Disjoint, exhaustive folds with every class spread as evenly as possible."""
    y = np.asarray(labels)
    if folds < 2:
        raise DomainError("need at least 2 folds")
    values, counts = np.unique(y, return_counts=True)
    small = values[counts < folds]
    if small.size:
        raise DomainError(f"class {small[0]!r} has fewer than {folds} members; cannot stratify")
    assign = np.empty(len(y), dtype=np.int64)
    offset = 0
    for v in values:
        idx = rng.permutation(np.flatnonzero(y == v))
        assign[idx] = (np.arange(len(idx)) + offset) % folds
        offset = (offset + len(idx)) % folds
    return [np.flatnonzero(assign == f) for f in range(folds)]


def point_seed(master_seed: int, point) -> int:
    """Seed derived from a stable hash of a grid point, independent of grid order."""
    key = repr((int(master_seed),) + tuple(round(float(v), 12) for v in point.as_tuple()))
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "little")


def _as_table(data) -> tuple[RawTable, list[str] | None]:
    if isinstance(data, RawTable):
        return data, None
    if isinstance(data, Dataset):
        return table_from_dataset(data), (list(data.class_names) if data.class_names else None)
    raise DomainError(f"unsupported data type {type(data).__name__}")


def _fold_seed(seed: int, repeat: int, fold: int) -> int:
    return int(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(seed) >> 32, repeat, fold])
               .generate_state(2, dtype=np.uint32).view(np.uint64)[0])


def _eval_fold(table, train, test, hyper, kind, classes, config, fit_seed):
    dtr, stats = preprocess(table.take(train), loss_kind=kind, classes=classes)
    dte, _ = preprocess(table.take(test), stats, loss_kind=kind)
    res = fit(dtr, hyper, kind, replace(config, seed=fit_seed))
    pred = predict_batch(dte.features, res.params, hyper)
    if kind is LossKind.SQUARED_ERROR:
        return {"accuracy": float("nan"), "mse": float(np.mean((pred.labels - dte.labels) ** 2))}
    yt = dte.labels
    yp = pred.labels
    if kind is LossKind.LOGISTIC:
        yt = (yt > 0).astype(int)
        yp = (yp > 0).astype(int)
    scores = pred.class_scores[:, 1] if pred.class_scores.shape[1] == 2 else None
    if scores is not None and len(np.unique(yt)) < 2:
        scores = None
    return compute_metrics(yt, scores, yp, positive_class=1).folds[0]


def kfold_cv(data, hyper: Hyperparams, loss_kind=LossKind.LOGLOSS, folds: int = 5,
             repeats: int = 1, seed: int = 0, fit_seed: int | None = None,
             config: FitConfig | None = None, threads: int = 1) -> MetricReport:
    """Repeated stratified k-fold CV.

    Each training fold is preprocessed with its own statistics and the test
    fold is transformed with them.  Fold splits depend only on ``seed``;
    model initializations on ``fit_seed`` (defaults to ``seed``).
    """
    kind = LossKind.parse(loss_kind)
    table, classes = _as_table(data)
    if classes is None and kind is not LossKind.SQUARED_ERROR:
        classes = sorted({str(v) for v in table.labels}, key=label_sort_key)
    config = config or FitConfig(record_trace=False)
    fit_seed = seed if fit_seed is None else fit_seed
    strat = table.labels if kind is not LossKind.SQUARED_ERROR else np.zeros(table.n_rows)
    rng = make_rng(seed)
    jobs = []
    for r in range(repeats):
        parts = stratified_folds(strat, folds, rng)
        for f, test in enumerate(parts):
            train = np.sort(np.concatenate([parts[g] for g in range(folds) if g != f]))
            jobs.append((train, test, _fold_seed(fit_seed, r, f)))
    run = lambda job: _eval_fold(table, job[0], job[1], hyper, kind, classes, config, job[2])  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    return _aggregate(results)


# ---------------------------------------------------------------------------
# smoothing and selection


def loess_smooth(xs, ys, span: float = 0.75) -> np.ndarray:
    """Degree-1 local regression with tricube weights (no robustness iterations).

    Each fit uses the ``ceil(span * n)`` nearest neighbours (at least 3);
    the bandwidth is the distance to the farthest of them.
    """
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if not 0.0 < span <= 1.0:
        raise DomainError(f"span must lie in (0, 1], got {span}")
    n = len(x)
    if n < 3 or y.shape != x.shape:
        raise DomainError("need at least 3 (x, y) pairs")
    if np.any(np.diff(x) <= 0):
        raise DomainError("xs must be strictly increasing")
    q = min(n, max(3, math.ceil(span * n - 1e-10)))
    out = np.empty(n)
    for i in range(n):
        dist = np.abs(x - x[i])
        h = np.partition(dist, q - 1)[q - 1]
        if h <= 0:
            out[i] = y[i]
            continue
        u = np.clip(dist / h, 0.0, 1.0)
        w = (1.0 - u ** 3) ** 3
        sw = w.sum()
        xm = (w * x).sum() / sw
        ym = (w * y).sum() / sw
        sxx = (w * (x - xm) ** 2).sum()
        slope = (w * (x - xm) * (y - ym)).sum() / sxx if sxx > 0 else 0.0
        out[i] = ym + slope * (x[i] - xm)
    return out


@dataclass(frozen=True)
class GridRow:
    point: ReparamPoint
    mean_accuracy: float
    std: float
    runtime_seconds: float
    report: MetricReport | None = None


def _determined(rows_pts: list[tuple], a: int, b: int) -> bool:
    """Whether axis ``b`` is a function of axis ``a`` across the grid."""
    seen = {}
    for p in rows_pts:
        if seen.setdefault(p[a], p[b]) != p[b]:
            return False
    return True


def select_point(rows: list[GridRow], strategy: int = 3, q: float = 20.0,
                 span: float = 0.75) -> ReparamPoint:
    """Pick hyperparameters from evaluated grid rows.

    1: highest mean accuracy (earliest row wins ties).
    2: per hyperparameter, the mean of its values over the top ``q`` percent.
    3: starting from the raw best, move along each axis to the maximum of the
       LOESS-smoothed accuracy while the other axes stay at their current best.
    """
    if not rows:
        raise DomainError("empty grid")
    acc = np.array([r.mean_accuracy for r in rows])
    best = int(np.argmax(acc))
    if strategy == 1:
        return rows[best].point
    if strategy == 2:
        n_top = max(1, int(math.ceil(len(rows) * q / 100.0)))
        top = np.argsort(-acc, kind="stable")[:n_top]
        pts = np.array([rows[i].point.as_tuple() for i in top], dtype=float)
        k, a, g, lam = pts.mean(axis=0)
        return ReparamPoint(a, g, lam, max(2, _round_half_up(k)))
    if strategy != 3:
        raise DomainError(f"unknown selection strategy {strategy}")

    pts = [r.point.as_tuple() for r in rows]
    cur = best
    for a in range(len(AXES)):
        held = [b for b in range(len(AXES)) if b != a and not _determined(pts, a, b)]
        sl = [i for i, p in enumerate(pts) if all(p[b] == pts[cur][b] for b in held)]
        xs = np.array([pts[i][a] for i in sl], dtype=float)
        order = np.argsort(xs, kind="stable")
        sl = [sl[i] for i in order]
        xs = xs[order]
        if len(sl) < 3 or np.any(np.diff(xs) <= 0):
            continue
        sm = loess_smooth(xs, acc[sl], span)
        cur = sl[int(np.argmax(sm))]
    return rows[cur].point


def grid_search(data, grid: list[ReparamPoint], loss_kind=LossKind.LOGLOSS, folds: int = 5,
                repeats: int = 1, seed: int = 0, strategy: int = 3, q: float = 20.0,
                config: FitConfig | None = None, threads: int = 1):
    """Cross-validate every grid point and select hyperparameters.

    All points share the same fold splits (from ``seed``); each point's model
    initializations come from a hash of the point, so the table does not
    depend on grid order.  Returns ``(Hyperparams, rows)``.
    """
    if not grid:
        raise DomainError("empty grid")
    kind = LossKind.parse(loss_kind)

    def run(point):
        t0 = time.perf_counter()
        rep = kfold_cv(data, reparam(point), kind, folds, repeats, seed,
                       fit_seed=point_seed(seed, point), config=config)
        acc_std = rep.std.get("accuracy", 0.0)
        return GridRow(point, rep.accuracy, acc_std, time.perf_counter() - t0, rep)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            rows = list(ex.map(run, grid))
    else:
        rows = [run(p) for p in grid]
    return reparam(select_point(rows, strategy, q)), rows


def write_tuning_report(rows: list[GridRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "alpha_prime", "gamma_prime", "lambda_prime", "mean_accuracy", "std",
                    "runtime_seconds"])
        for r in rows:
            p = r.point
            w.writerow([p.k, p.alpha_prime, p.gamma_prime, p.lambda_prime, r.mean_accuracy,
                        r.std, f"{r.runtime_seconds:.6f}"])
