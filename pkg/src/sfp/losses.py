"""Convex losses with closed-form weighted prototypes.

Label conventions used throughout the package:

* ``logloss``: integer class indices ``0..M-1``; prototypes are rows of an
  ``M``-simplex.
* ``logistic``: labels in ``{-1, +1}``; prototypes are real log-odds.
* ``squared_error``: real labels; prototypes are real numbers.
"""

from __future__ import annotations

import enum

import numpy as np

from .exceptions import DomainError

__all__ = [
    "EPS_PROTO",
    "LossKind",
    "loss_eval",
    "loss_matrix",
    "prototype_solve",
    "prototype_matrix",
    "floor_prototypes",
    "check_labels",
]

EPS_PROTO = 1e-12
LOGIT_CLAMP = float(np.log(1.0 / EPS_PROTO))


class LossKind(str, enum.Enum):
    LOGLOSS = "logloss"
    LOGISTIC = "logistic"
    SQUARED_ERROR = "squared_error"

    @classmethod
    def parse(cls, value) -> "LossKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower().replace("-", "_"))
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise DomainError(f"unknown loss kind {value!r}; expected one of {names}") from None

    @property
    def is_classification(self) -> bool:
        return self is not LossKind.SQUARED_ERROR


def check_labels(kind: LossKind, labels, n_classes: int | None = None) -> np.ndarray:
    """Validate labels for ``kind`` and return them as an array of the canonical dtype."""
    kind = LossKind.parse(kind)
    y = np.asarray(labels)
    if y.ndim != 1:
        raise DomainError("labels must be a 1-D array")
    if kind is LossKind.LOGLOSS:
        if n_classes is None or n_classes < 1:
            raise DomainError("logloss requires the class count M")
        if y.size and not np.issubdtype(y.dtype, np.integer):
            yi = y.astype(int)
            if not np.array_equal(yi, y):
                raise DomainError("logloss labels must be integer class indices")
            y = yi
        y = y.astype(np.int64)
        if y.size and (y.min() < 0 or y.max() >= n_classes):
            raise DomainError(f"logloss labels must lie in 0..{n_classes - 1}")
        return y
    y = y.astype(float)
    if kind is LossKind.LOGISTIC:
        if not np.isin(y, (-1.0, 1.0)).all():
            raise DomainError("logistic labels must be -1 or +1")
        return y
    if not np.isfinite(y).all():
        raise DomainError("squared_error labels must be finite reals")
    return y


def loss_matrix(kind: LossKind, labels, prototypes) -> np.ndarray:
    """Matrix ``L[i, j] = loss(y_i, z_j)`` of shape ``(n, k)``.

    For logloss ``prototypes`` has shape ``(k, M)`` and a zero probability for
    the observed class yields ``+inf``; nothing is clamped here.
    """
    kind = LossKind.parse(kind)
    Z = np.asarray(prototypes, dtype=float)
    if kind is LossKind.LOGLOSS:
        if Z.ndim != 2:
            raise DomainError("logloss prototypes must have shape (k, M)")
        y = check_labels(kind, labels, Z.shape[1])
        with np.errstate(divide="ignore"):
            return -np.log(Z[:, y].T)
    y = check_labels(kind, labels)
    if Z.ndim != 1:
        raise DomainError(f"{kind.value} prototypes must be a 1-D array of scalars")
    if kind is LossKind.LOGISTIC:
        return np.logaddexp(0.0, -np.outer(y, Z))
    return (y[:, None] - Z[None, :]) ** 2


def loss_eval(kind: LossKind, y, z) -> float:
    """Loss of a single label ``y`` against a single prototype ``z``."""
    kind = LossKind.parse(kind)
    if kind is LossKind.LOGLOSS:
        z = np.atleast_1d(np.asarray(z, dtype=float))
        return float(loss_matrix(kind, [y], z[None, :])[0, 0])
    return float(loss_matrix(kind, [y], [float(z)])[0, 0])


def prototype_matrix(kind: LossKind, labels, memberships, n_classes: int | None = None) -> np.ndarray:
    """Prototypes for every cluster: column ``j`` of ``memberships`` weights cluster ``j``.

    Returns an array of shape ``(k, M)`` for logloss and ``(k,)`` otherwise.
    """
    kind = LossKind.parse(kind)
    U = np.asarray(memberships, dtype=float)
    if U.ndim == 1:
        U = U[:, None]
    y = check_labels(kind, labels, n_classes)
    if U.shape[0] != y.shape[0]:
        raise DomainError(f"{U.shape[0]} membership rows for {y.shape[0]} labels")
    if (U < 0).any():
        raise DomainError("membership weights must be nonnegative")
    mass = U.sum(axis=0)
    if not (mass > 0).all():
        raise DomainError(f"zero total weight for cluster(s) {np.flatnonzero(mass <= 0).tolist()}")

    if kind is LossKind.LOGLOSS:
        counts = np.zeros((U.shape[1], n_classes))
        for m in range(n_classes):
            counts[:, m] = U[y == m].sum(axis=0)
        return counts / mass[:, None]
    if kind is LossKind.LOGISTIC:
        pos = U[y > 0].sum(axis=0)
        neg = U[y < 0].sum(axis=0)
        with np.errstate(divide="ignore"):
            z = np.log(pos) - np.log(neg)
        # one-sided mass has no finite minimizer; saturate at +-ln(1/eps)
        return np.clip(z, -LOGIT_CLAMP, LOGIT_CLAMP)
    return (U * y[:, None]).sum(axis=0) / mass


def prototype_solve(kind: LossKind, labels, memberships, n_classes: int | None = None):
    """``argmin_z sum_i u_i * loss(y_i, z)`` for a single weight vector.

    Returns an ``M``-vector for logloss and a float otherwise.
    """
    z = prototype_matrix(kind, labels, np.asarray(memberships, dtype=float).reshape(-1, 1), n_classes)[0]
    return z if LossKind.parse(kind) is LossKind.LOGLOSS else float(z)


def floor_prototypes(kind: LossKind, prototypes) -> np.ndarray:
    """Floor logloss prototype entries at ``EPS_PROTO`` and renormalize rows.

    Training uses floored prototypes so that one bad iteration cannot make a
    cluster permanently unreachable for some class.  Other kinds pass through.
    """
    Z = np.array(prototypes, dtype=float)
    if LossKind.parse(kind) is not LossKind.LOGLOSS:
        return Z
    Z = np.maximum(Z, EPS_PROTO)
    return Z / Z.sum(axis=1, keepdims=True)
