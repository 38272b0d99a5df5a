"""Model state, the augmented distance matrix and the training objective."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .exceptions import DataError, DomainError, SchemaError
from .losses import LossKind, check_labels, loss_matrix
from .simplex import xlogx

__all__ = [
    "Hyperparams",
    "ModelParams",
    "Dataset",
    "SFPModel",
    "weighted_sq_distances",
    "distance_matrix",
    "objective",
    "save_model",
    "load_model",
    "MODEL_VERSION",
]

MODEL_VERSION = "sfp-model/1"
_CHUNK = 1 << 16  # max elements of the (rows, k, p) difference tensor; sized to stay in cache


@dataclass(frozen=True)
class Hyperparams:
    """Cluster count and the three regularization strengths.

    ``alpha`` scales the label term, ``gamma`` the membership entropy and
    ``lam`` the feature-weight entropy.
    """

    k: int
    alpha: float
    gamma: float
    lam: float

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 2:
            raise DomainError(f"k must be an integer >= 2, got {self.k!r}")
        if not self.alpha >= 0 or not np.isfinite(self.alpha):
            raise DomainError(f"alpha must be >= 0, got {self.alpha!r}")
        if not self.gamma > 0 or not np.isfinite(self.gamma):
            raise DomainError(f"gamma must be > 0, got {self.gamma!r}")
        if not self.lam > 0 or not np.isfinite(self.lam):
            raise DomainError(f"lambda must be > 0, got {self.lam!r}")
        object.__setattr__(self, "k", int(self.k))

    def to_dict(self) -> dict:
        return {"k": self.k, "alpha": self.alpha, "gamma": self.gamma, "lambda": self.lam}

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        return cls(k=d["k"], alpha=d["alpha"], gamma=d["gamma"], lam=d.get("lambda", d.get("lam")))


@dataclass(frozen=True, eq=False)
class Dataset:
    """Numeric features with labels in the canonical form for a loss kind."""

    features: np.ndarray
    labels: np.ndarray
    n_classes: int | None = None
    feature_names: tuple[str, ...] | None = None
    class_names: tuple[str, ...] | None = None

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim != 2:
            raise DomainError(f"features must be a 2-D matrix, got shape {X.shape}")
        if X.shape[0] < 1 or X.shape[1] < 1:
            raise DomainError(f"dataset needs n >= 1 and p >= 1, got shape {X.shape}")
        if not np.isfinite(X).all():
            raise DomainError("features contain non-finite values")
        y = np.asarray(self.labels)
        if y.shape != (X.shape[0],):
            raise DomainError(f"expected {X.shape[0]} labels, got shape {y.shape}")
        X.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        if self.feature_names is not None:
            object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if self.class_names is not None:
            object.__setattr__(self, "class_names", tuple(str(c) for c in self.class_names))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.n_classes,
                       self.feature_names, self.class_names)

    def labels_for(self, kind: LossKind) -> np.ndarray:
        return check_labels(kind, self.labels, self.n_classes)

    def equals(self, other: "Dataset") -> bool:
        return (
            np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and self.n_classes == other.n_classes
            and self.class_names == other.class_names
        )


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Centers ``(k, p)``, feature weights ``(k, p)`` and label prototypes."""

    centers: np.ndarray
    weights: np.ndarray
    prototypes: np.ndarray
    loss_kind: LossKind

    def __post_init__(self):
        V = np.array(self.centers, dtype=float)
        W = np.array(self.weights, dtype=float)
        Z = np.array(self.prototypes, dtype=float)
        kind = LossKind.parse(self.loss_kind)
        if V.ndim != 2 or W.shape != V.shape:
            raise DomainError(f"centers {V.shape} and weights {W.shape} must both be (k, p)")
        if (W < 0).any() or not np.allclose(W.sum(axis=1), 1.0, rtol=0, atol=1e-12):
            raise DomainError("every weight row must lie on the simplex")
        expect = (V.shape[0], Z.shape[-1]) if kind is LossKind.LOGLOSS else (V.shape[0],)
        if Z.shape != expect:
            raise DomainError(f"prototypes have shape {Z.shape}, expected {expect}")
        for a in (V, W, Z):
            a.setflags(write=False)
        object.__setattr__(self, "centers", V)
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "prototypes", Z)
        object.__setattr__(self, "loss_kind", kind)

    @property
    def k(self) -> int:
        return self.centers.shape[0]

    @property
    def p(self) -> int:
        return self.centers.shape[1]

    @property
    def n_classes(self) -> int | None:
        return self.prototypes.shape[1] if self.loss_kind is LossKind.LOGLOSS else None

    def replace(self, **changes) -> "ModelParams":
        d = dict(centers=self.centers, weights=self.weights, prototypes=self.prototypes,
                 loss_kind=self.loss_kind)
        d.update(changes)
        return ModelParams(**d)

    def permuted(self, order) -> "ModelParams":
        order = np.asarray(order)
        return ModelParams(self.centers[order], self.weights[order], self.prototypes[order],
                           self.loss_kind)


def weighted_sq_distances(X, centers, weights) -> np.ndarray:
    """``D[i, j] = sum_l w_jl (x_il - v_jl)^2`` evaluated exactly (no norm expansion)."""
    X = np.asarray(X, dtype=float)
    V = np.asarray(centers, dtype=float)
    W = np.asarray(weights, dtype=float)
    if X.ndim != 2 or X.shape[1] != V.shape[1]:
        raise DomainError(f"feature dimension {X.shape[-1]} does not match centers {V.shape[1]}")
    n, (k, p) = X.shape[0], V.shape
    out = np.empty((n, k))
    step = max(1, _CHUNK // max(1, k * p))
    with np.errstate(over="ignore"):
        for s in range(0, n, step):
            diff = X[s:s + step, None, :] - V[None, :, :]
            np.einsum("ijl,jl->ij", diff * diff, W, out=out[s:s + step])
    return out


def distance_matrix(data: Dataset, params: ModelParams, alpha: float) -> np.ndarray:
    """Augmented distances ``||x_i - v_j||^2_{w_j} + alpha * loss(y_i, z_j)``.

    Entries may be ``+inf`` when a logloss prototype gives probability zero to
    the observed class and ``alpha > 0``.
    """
    if data.p != params.p:
        raise DomainError(f"data has {data.p} features, model has {params.p}")
    if alpha < 0:
        raise DomainError("alpha must be nonnegative")
    D = weighted_sq_distances(data.features, params.centers, params.weights)
    if alpha > 0:
        D += alpha * loss_matrix(params.loss_kind, data.labels, params.prototypes)
    return D


def objective(data: Dataset, U, params: ModelParams, hyper: Hyperparams) -> float:
    """Training objective: weighted within-cluster spread, label surrogate and both entropies.

    Only ``alpha``, ``gamma`` and ``lam`` are read from ``hyper``.  Products of a
    zero membership with an infinite distance count as zero.
    """
    U = np.asarray(U, dtype=float)
    D = distance_matrix(data, params, hyper.alpha)
    if U.shape != D.shape:
        raise DomainError(f"memberships {U.shape} do not match distances {D.shape}")
    with np.errstate(invalid="ignore"):
        fit = np.where(U > 0, U * D, 0.0).sum()
    return float(fit + hyper.gamma * xlogx(U).sum() + hyper.lam * xlogx(params.weights).sum())


# ---------------------------------------------------------------------------
# serialization


@dataclass
class SFPModel:
    """Everything needed to predict from raw rows: parameters plus preprocessing."""

    params: ModelParams
    hyper: Hyperparams
    preprocess_stats: dict | None = None
    class_names: tuple[str, ...] | None = None
    feature_names: tuple[str, ...] | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        p = self.params
        return {
            "version": MODEL_VERSION,
            "loss_kind": p.loss_kind.value,
            "k": p.k,
            "p": p.p,
            "M": p.n_classes,
            "centers": p.centers.tolist(),
            "weights": p.weights.tolist(),
            "prototypes": p.prototypes.tolist(),
            "hyperparams": self.hyper.to_dict(),
            "preprocess_stats": self.preprocess_stats,
            "class_names": list(self.class_names) if self.class_names is not None else None,
            "feature_names": list(self.feature_names) if self.feature_names is not None else None,
            **({"extra": self.extra} if self.extra else {}),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SFPModel":
        if d.get("version") != MODEL_VERSION:
            raise SchemaError(f"unsupported model version {d.get('version')!r}")
        try:
            params = ModelParams(
                centers=np.asarray(d["centers"], dtype=float).reshape(d["k"], d["p"]),
                weights=np.asarray(d["weights"], dtype=float).reshape(d["k"], d["p"]),
                prototypes=np.asarray(d["prototypes"], dtype=float),
                loss_kind=LossKind.parse(d["loss_kind"]),
            )
            hyper = Hyperparams.from_dict(d["hyperparams"])
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"malformed model document: {exc}") from exc
        cn = d.get("class_names")
        fn = d.get("feature_names")
        return cls(params, hyper, d.get("preprocess_stats"),
                   tuple(cn) if cn is not None else None,
                   tuple(fn) if fn is not None else None,
                   d.get("extra") or {})


def save_model(model: SFPModel, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh, indent=1)
        fh.write("\n")


def load_model(path: str | os.PathLike) -> SFPModel:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read model file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"model file {path} is not valid JSON: {exc}") from exc
    return SFPModel.from_dict(doc)
