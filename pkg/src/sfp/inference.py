"""Prediction, distance features, kernel-form scores and weight-based feature selection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DomainError
from .losses import LossKind
from .model import Dataset, Hyperparams, ModelParams, distance_matrix, weighted_sq_distances
from .simplex import solve_rows

__all__ = [
    "Prediction",
    "BatchPrediction",
    "FeatureSelection",
    "membership_of",
    "memberships_of",
    "predict",
    "predict_batch",
    "kernel_score",
    "distance_features",
    "select_features",
]


@dataclass(frozen=True, eq=False)
class Prediction:
    label: float | int
    memberships: np.ndarray
    class_scores: np.ndarray | None
    score: float | None = None


@dataclass(frozen=True, eq=False)
class BatchPrediction:
    """Row-wise predictions.  ``scores`` holds the mixed prototype for scalar losses."""

    labels: np.ndarray
    memberships: np.ndarray
    class_scores: np.ndarray | None
    scores: np.ndarray | None = None

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i) -> Prediction:
        return Prediction(
            self.labels[i].item(),
            self.memberships[i],
            None if self.class_scores is None else self.class_scores[i],
            None if self.scores is None else float(self.scores[i]),
        )


def _as_matrix(X, p: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != p:
        raise DomainError(f"expected points with {p} features, got shape {X.shape}")
    return X


def memberships_of(X, params: ModelParams, gamma: float) -> np.ndarray:
    """Memberships of unlabeled points: entropic minimization of weighted distances only."""
    X = _as_matrix(X, params.p)
    return solve_rows(weighted_sq_distances(X, params.centers, params.weights), gamma)


def membership_of(x, params: ModelParams, gamma: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DomainError("membership_of expects a single feature vector")
    return memberships_of(x, params, gamma)[0]


def _gamma_of(hyper) -> float:
    return hyper.gamma if isinstance(hyper, Hyperparams) else float(hyper)


def predict_batch(X, params: ModelParams, hyper: Hyperparams | float) -> BatchPrediction:
    """Predict every row of ``X``.

    logloss: class scores are the membership mixture of the prototype rows and
    the label is the lowest-index argmax (the minimizer of the logloss of the
    mixture).  logistic: label is the sign of the mixed log-odds with zero
    mapped to +1; class scores are ``(P(-1), P(+1))``.  squared_error: the
    mixed prototype itself.
    """
    U = memberships_of(X, params, _gamma_of(hyper))
    kind = params.loss_kind
    if kind is LossKind.LOGLOSS:
        scores = U @ params.prototypes
        scores /= scores.sum(axis=1, keepdims=True)
        return BatchPrediction(np.argmax(scores, axis=1), U, scores)
    mixed = U @ params.prototypes
    if kind is LossKind.LOGISTIC:
        labels = np.where(mixed >= 0, 1, -1)
        p_pos = 0.5 * (1.0 + np.tanh(0.5 * mixed))
        return BatchPrediction(labels, U, np.column_stack([1.0 - p_pos, p_pos]), mixed)
    return BatchPrediction(mixed.copy(), U, None, mixed)


def predict(x, params: ModelParams, hyper: Hyperparams | float) -> Prediction:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DomainError("predict expects a single feature vector; use predict_batch")
    return predict_batch(x[None, :], params, hyper)[0]


def kernel_score(X, params: ModelParams, gamma: float) -> np.ndarray:
    """Normalized Gaussian-kernel form ``sum_j z_j k_j(x) / sum_j k_j(x)``.

    ``k_j(x) = exp(-||x - v_j||^2_{w_j} / gamma)``.  Written independently of
    the membership solver; for scalar prototypes it equals the mixed score.
    """
    if params.loss_kind is LossKind.LOGLOSS:
        raise DomainError("kernel form is defined for scalar prototypes")
    X = _as_matrix(X, params.p)
    d = weighted_sq_distances(X, params.centers, params.weights)
    # common factor exp(-min d / gamma) cancels between numerator and denominator
    kern = np.exp(-(d - d.min(axis=1, keepdims=True)) / gamma)
    return (kern @ params.prototypes) / kern.sum(axis=1)


def distance_features(data: Dataset, params: ModelParams, alpha: float) -> np.ndarray:
    """The ``(n, k)`` augmented distance matrix used as a learned representation."""
    return distance_matrix(data, params, alpha)


@dataclass(frozen=True)
class FeatureSelection:
    per_cluster: tuple[tuple[int, ...], ...]
    union: tuple[int, ...]
    mass_threshold: float

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(len(s) for s in self.per_cluster)


def select_features(params_or_weights, threshold: float = 0.9) -> FeatureSelection:
    """Per cluster, the fewest top-weighted features whose weights reach ``threshold``.

    Weights are sorted descending with ties broken by lower feature index.
    """
    if not 0.0 < threshold <= 1.0:
        raise DomainError(f"threshold must lie in (0, 1], got {threshold}")
    W = params_or_weights.weights if isinstance(params_or_weights, ModelParams) else params_or_weights
    W = np.asarray(W, dtype=float)
    if W.ndim != 2:
        raise DomainError("weights must be a (k, p) matrix")
    per_cluster = []
    for row in W:
        order = np.argsort(-row, kind="stable")
        csum = np.cumsum(row[order])
        # guard against rows summing to 1 - ulp when threshold is 1
        r = int(np.searchsorted(csum, threshold - 1e-12, side="left")) + 1
        per_cluster.append(tuple(int(i) for i in order[:min(r, len(row))]))
    union = tuple(sorted(set().union(*per_cluster)))
    return FeatureSelection(tuple(per_cluster), union, float(threshold))
