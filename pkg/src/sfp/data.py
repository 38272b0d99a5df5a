"""CSV ingestion, leakage-free preprocessing and synthetic generators."""

from __future__ import annotations

import csv
import math
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DataError, DomainError, SchemaError
from .losses import LossKind
from .model import Dataset
from .training import make_rng

__all__ = [
    "MISSING_TOKENS",
    "Column",
    "RawTable",
    "PreprocessStats",
    "load_csv",
    "write_csv",
    "preprocess",
    "encode_labels",
    "table_from_dataset",
    "dataset_from_table",
    "gen_synthetic",
    "SYNTHETIC_KINDS",
    "MIXTURE3_MEANS",
    "label_sort_key",
]

MISSING_TOKENS = frozenset({"", "?", "NA"})


@dataclass(eq=False)
class Column:
    """A feature column.  Numeric columns hold floats with NaN for missing cells;
    categorical columns hold strings with ``None`` for missing cells."""

    name: str
    kind: str
    values: np.ndarray

    @property
    def missing(self) -> np.ndarray:
        if self.kind == "numeric":
            return np.isnan(self.values)
        return np.array([v is None for v in self.values], dtype=bool)


@dataclass(eq=False)
class RawTable:
    columns: list[Column]
    labels: np.ndarray
    label_name: str = "y"

    def __post_init__(self):
        if not self.columns:
            raise SchemaError("table needs at least one feature column")
        n = len(self.labels)
        for c in self.columns:
            if len(c.values) != n:
                raise SchemaError(f"column {c.name!r} has {len(c.values)} rows, expected {n}")

    @property
    def n_rows(self) -> int:
        return len(self.labels)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def take(self, idx) -> "RawTable":
        idx = np.asarray(idx)
        return RawTable([Column(c.name, c.kind, c.values[idx]) for c in self.columns],
                        self.labels[idx], self.label_name)

    @property
    def n_missing(self) -> int:
        return int(sum(c.missing.sum() for c in self.columns))


def _parse_float(tok: str):
    try:
        v = float(tok)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def load_csv(path, label_column: str | None = "y", schema_hints: dict | None = None,
             require_label: bool = True) -> RawTable:
    """Read a header-first CSV into a typed table.

    A column is numeric unless some non-missing token fails to parse as a
    finite float, in which case the whole column is categorical.
    ``schema_hints`` may force ``{"col": "numeric" | "categorical"}``.  When
    ``require_label`` is false and the label column is absent, labels are
    filled with ``None``.
    """
    schema_hints = dict(schema_hints or {})
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise DataError(f"{path} is not valid UTF-8: {exc}") from exc
    if not rows:
        raise SchemaError(f"{path}: empty file (header row required)")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if r]
    if not body:
        raise SchemaError(f"{path}: no data rows")
    for lineno, r in enumerate(rows[1:], start=2):
        if r and len(r) != len(header):
            raise SchemaError(f"{path}: line {lineno} has {len(r)} fields, header has {len(header)}")
    if len(set(header)) != len(header):
        raise SchemaError(f"{path}: duplicate column names in header")
    for name in schema_hints:
        if name not in header:
            raise SchemaError(f"{path}: schema hint for unknown column {name!r}")

    if label_column is not None and label_column in header:
        li = header.index(label_column)
        labels = [r[li].strip() for r in body]
        if any(t in MISSING_TOKENS for t in labels):
            bad = next(i for i, t in enumerate(labels) if t in MISSING_TOKENS)
            raise SchemaError(f"{path}: missing label at line {bad + 2}, column {label_column!r}")
        labels = np.array(labels, dtype=object)
    elif require_label:
        raise SchemaError(f"{path}: label column {label_column!r} not found in header {header}")
    else:
        li = None
        labels = np.array([None] * len(body), dtype=object)

    columns = []
    for ci, name in enumerate(header):
        if ci == li:
            continue
        toks = [r[ci].strip() for r in body]
        hint = schema_hints.get(name)
        parsed = [None if t in MISSING_TOKENS else _parse_float(t) for t in toks]
        numeric = all(p is not None for p, t in zip(parsed, toks) if t not in MISSING_TOKENS)
        if hint == "numeric" and not numeric:
            bad = next(i for i, (p, t) in enumerate(zip(parsed, toks)) if p is None and t not in MISSING_TOKENS)
            raise SchemaError(f"{path}: non-numeric token {toks[bad]!r} at line {bad + 2}, column {name!r}")
        if hint == "categorical" or not numeric:
            vals = np.array([None if t in MISSING_TOKENS else t for t in toks], dtype=object)
            columns.append(Column(name, "categorical", vals))
        else:
            columns.append(Column(name, "numeric", np.array([np.nan if p is None else p for p in parsed])))
    if not columns:
        raise SchemaError(f"{path}: no feature columns besides the label")
    return RawTable(columns, labels, label_column or "y")


def label_sort_key(s):
    """Numeric labels sort numerically and before non-numeric ones."""
    v = _parse_float(str(s))
    return (0, v, "") if v is not None else (1, 0.0, str(s))


def _fmt_label(v) -> str:
    if isinstance(v, (float, np.floating)) and float(v).is_integer():
        return str(int(v))
    return str(v)


@dataclass
class PreprocessStats:
    """Training-split statistics: imputation values, encodings and z-score parameters."""

    columns: list[dict]
    output_names: list[str]
    means: list[float]
    stds: list[float]
    dropped: list[str] = field(default_factory=list)
    classes: list[str] | None = None

    def to_dict(self) -> dict:
        return {"columns": self.columns, "output_names": self.output_names, "means": self.means,
                "stds": self.stds, "dropped": self.dropped, "classes": self.classes}

    @classmethod
    def from_dict(cls, d: dict) -> "PreprocessStats":
        return cls(d["columns"], d["output_names"], d["means"], d["stds"],
                   d.get("dropped", []), d.get("classes"))


def _mode(values) -> str | None:
    vals = [v for v in values if v is not None]
    if not vals:
        return None
    levels, counts = np.unique(np.array(vals, dtype=str), return_counts=True)
    return str(levels[np.argmax(counts)])  # ties: lexicographically smallest level


def _encode_columns(raw: RawTable, specs: list[dict]):
    """Impute and one-hot encode according to ``specs``; returns (matrix, names)."""
    blocks, names = [], []
    by_name = {c.name: c for c in raw.columns}
    for spec in specs:
        col = by_name.get(spec["name"])
        if col is None:
            raise SchemaError(f"column {spec['name']!r} missing from table")
        if spec["kind"] == "numeric":
            if col.kind != "numeric":
                raise SchemaError(f"column {col.name!r} was numeric at fit time")
            v = col.values.astype(float).copy()
            v[np.isnan(v)] = spec["median"]
            blocks.append(v[:, None])
            names.append(col.name)
        else:
            vals = [spec["mode"] if v is None else str(v) for v in col.values]
            levels = spec["levels"]
            # unseen levels encode as all zeros
            onehot = np.array([[1.0 if v == lv else 0.0 for lv in levels] for v in vals])
            blocks.append(onehot.reshape(len(vals), len(levels)))
            names.extend(f"{col.name}={lv}" for lv in levels)
    return np.hstack(blocks) if blocks else np.zeros((raw.n_rows, 0)), names


def encode_labels(labels, kind: LossKind, classes=None):
    """Map raw label tokens to canonical labels.  Returns ``(labels, classes)``."""
    kind = LossKind.parse(kind)
    toks = [str(v) for v in labels]
    if kind is LossKind.SQUARED_ERROR:
        vals = [_parse_float(t) for t in toks]
        if any(v is None for v in vals):
            raise SchemaError("squared_error labels must be numeric")
        return np.array(vals, dtype=float), None
    if classes is None:
        classes = sorted(set(toks), key=label_sort_key)
    classes = [str(c) for c in classes]
    index = {c: i for i, c in enumerate(classes)}
    unknown = sorted(set(toks) - set(index))
    if unknown:
        raise SchemaError(f"labels {unknown[:5]} not among known classes {classes}")
    idx = np.array([index[t] for t in toks], dtype=np.int64)
    if kind is LossKind.LOGISTIC:
        if len(classes) != 2:
            raise SchemaError(f"logistic loss needs exactly 2 classes, found {len(classes)}")
        return np.where(idx == 1, 1.0, -1.0), classes
    return idx, classes


def preprocess(raw: RawTable, stats: PreprocessStats | None = None,
               loss_kind=LossKind.LOGLOSS, classes=None, with_labels: bool = True):
    """Impute (median / mode), one-hot encode every level, then z-score every column.

    With ``stats`` given, the stored training statistics are applied and
    nothing is recomputed from ``raw``.  Returns ``(Dataset, PreprocessStats)``.
    Constant columns are dropped with a warning when statistics are computed.
    """
    kind = LossKind.parse(loss_kind)
    if stats is None:
        specs = []
        for c in raw.columns:
            if c.kind == "numeric":
                obs = c.values[~np.isnan(c.values)]
                med = float(np.median(obs)) if obs.size else 0.0
                specs.append({"name": c.name, "kind": "numeric", "median": med})
            else:
                mode = _mode(c.values)
                levels = sorted({str(v) for v in c.values if v is not None})
                if mode is None:
                    mode, levels = "", [""]
                specs.append({"name": c.name, "kind": "categorical", "mode": mode, "levels": levels})
        X, names = _encode_columns(raw, specs)
        means = X.mean(axis=0)
        stds = X.std(axis=0, ddof=1) if raw.n_rows > 1 else np.zeros(X.shape[1])
        keep = stds > 1e-12 * np.maximum(1.0, np.abs(means))
        dropped = [nm for nm, k in zip(names, keep) if not k]
        if dropped:
            warnings.warn(f"dropping constant column(s): {', '.join(dropped)}", stacklevel=2)
        if not keep.any():
            raise SchemaError("every feature column is constant")
        if classes is None and with_labels and kind is not LossKind.SQUARED_ERROR:
            classes = sorted({str(v) for v in raw.labels}, key=label_sort_key)
        stats = PreprocessStats(
            columns=specs,
            output_names=[nm for nm, k in zip(names, keep) if k],
            means=means[keep].tolist(),
            stds=stds[keep].tolist(),
            dropped=dropped,
            classes=list(classes) if classes is not None else None,
        )
    else:
        X, names = _encode_columns(raw, stats.columns)

    pos = {nm: i for i, nm in enumerate(names)}
    X = X[:, [pos[nm] for nm in stats.output_names]]
    X = (X - np.asarray(stats.means)) / np.asarray(stats.stds)

    if with_labels:
        y, cls = encode_labels(raw.labels, kind, stats.classes if classes is None else classes)
    else:
        y, cls = np.zeros(raw.n_rows, dtype=np.int64), stats.classes
    n_classes = len(cls) if (cls is not None and kind is LossKind.LOGLOSS) else None
    data = Dataset(X, y, n_classes, tuple(stats.output_names), tuple(cls) if cls else None)
    return data, stats


# ---------------------------------------------------------------------------
# round-tripping numeric datasets


def table_from_dataset(data: Dataset, label_name: str = "y") -> RawTable:
    names = data.feature_names or tuple(f"x{l + 1}" for l in range(data.p))
    cols = [Column(nm, "numeric", data.features[:, l].copy()) for l, nm in enumerate(names)]
    if data.class_names is not None and data.n_classes is not None:
        labels = np.array([data.class_names[i] for i in data.labels], dtype=object)
    elif data.class_names is not None and len(data.class_names) == 2:
        labels = np.array([data.class_names[1 if v > 0 else 0] for v in data.labels], dtype=object)
    else:
        labels = np.array([_fmt_label(v) for v in data.labels], dtype=object)
    return RawTable(cols, labels, label_name)


def dataset_from_table(raw: RawTable, loss_kind=LossKind.LOGLOSS, classes=None) -> Dataset:
    """Numeric table to Dataset with no imputation or scaling."""
    for c in raw.columns:
        if c.kind != "numeric":
            raise SchemaError(f"column {c.name!r} is not numeric")
        if np.isnan(c.values).any():
            raise SchemaError(f"column {c.name!r} has missing values")
    X = np.column_stack([c.values for c in raw.columns])
    y, cls = encode_labels(raw.labels, loss_kind, classes)
    kind = LossKind.parse(loss_kind)
    return Dataset(X, y, len(cls) if kind is LossKind.LOGLOSS else None,
                   tuple(raw.names), tuple(cls) if cls else None)


def write_csv(data: Dataset, path, label_name: str = "y") -> None:
    """Write features (shortest round-tripping float repr) and labels with a header."""
    table = table_from_dataset(data, label_name)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(table.names + [label_name])
        for i in range(table.n_rows):
            w.writerow([repr(float(c.values[i])) for c in table.columns] + [table.labels[i]])


# ---------------------------------------------------------------------------
# synthetic data

SYNTHETIC_KINDS = ("spiral", "two_circle", "xor", "mixture3")

# component means of the three-class mixture (class 3 has two subgroups)
MIXTURE3_MEANS = np.array([[0.0, 0.0], [-12.0, 0.0], [0.0, 8.0], [0.0, -4.0]])


def _balanced_classes(n: int, rng) -> np.ndarray:
    y = np.repeat([0, 1], [n // 2, n - n // 2])
    return rng.permutation(y)


def _spiral(n, rng):
    y = _balanced_classes(n, rng)
    theta = rng.uniform(np.pi / 4, np.pi / 4 + 3 * np.pi, size=n)
    r = theta / np.pi + rng.normal(0.0, 0.05, size=n)
    phase = np.where(y == 1, np.pi, 0.0)
    X = np.column_stack([r * np.cos(theta + phase), r * np.sin(theta + phase)])
    return X, y


def _two_circle(n, rng):
    y = _balanced_classes(n, rng)
    r = np.where(y == 0, 1.0, 2.0) + rng.normal(0.0, 0.1, size=n)
    t = rng.uniform(0.0, 2 * np.pi, size=n)
    return np.column_stack([r * np.cos(t), r * np.sin(t)]), y


def _xor(n, rng):
    y = _balanced_classes(n, rng)
    X = np.empty((n, 2))
    for i in range(n):
        while True:
            a, b = rng.uniform(-1.0, 1.0, size=2)
            if abs(a * b) >= 0.02 and ((a * b > 0) == (y[i] == 0)):
                break
        X[i] = a, b
    return X, y


def _mixture3(n, rng):
    y = rng.choice(3, size=n, p=[0.25, 0.25, 0.5])
    X = np.empty((n, 2))
    for i in range(n):
        if y[i] == 0:
            X[i] = rng.normal(MIXTURE3_MEANS[0], np.sqrt([15.0, 0.05]))
        elif y[i] == 1:
            X[i] = rng.normal(MIXTURE3_MEANS[1], 1.0)
        elif rng.uniform() < 2.0 / 3.0:
            X[i] = rng.normal(MIXTURE3_MEANS[2], 2.0)
        else:
            X[i] = rng.normal(MIXTURE3_MEANS[3], 1.0)
    return X, y


def gen_synthetic(kind: str, n: int, seed: int) -> Dataset:
    """Two-dimensional labeled toy data: spiral, two_circle, xor or mixture3.

    Labels are class indices; class names are ``"1"``, ``"2"`` (and ``"3"``).
    """
    gens = {"spiral": _spiral, "two_circle": _two_circle, "xor": _xor, "mixture3": _mixture3}
    kind = kind.replace("-", "_")
    if kind not in gens:
        raise DomainError(f"unknown synthetic kind {kind!r}; expected one of {SYNTHETIC_KINDS}")
    if int(n) != n or n < 4:
        raise DomainError("synthetic datasets need n >= 4")
    X, y = gens[kind](int(n), make_rng(seed))
    m = 3 if kind == "mixture3" else 2
    return Dataset(X, y.astype(np.int64), m, ("x1", "x2"), tuple(str(c + 1) for c in range(m)))
