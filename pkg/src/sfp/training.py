"""Block coordinate descent fitting.

Each iteration refreshes the augmented distances, then minimizes the
objective exactly over memberships, centers and prototypes (independent of
each other given the memberships) and finally feature weights.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .exceptions import DomainError, NumericError
from .losses import LossKind, floor_prototypes, prototype_matrix
from .model import Dataset, Hyperparams, ModelParams, distance_matrix, objective
from .simplex import solve_rows

__all__ = [
    "FitConfig",
    "FitResult",
    "make_rng",
    "initialize",
    "update_memberships",
    "update_centers",
    "update_prototypes",
    "update_weights",
    "within_cluster_spread",
    "bcd_iteration",
    "fit",
    "restart_seed",
    "DEGENERATE_MASS",
]

log = logging.getLogger(__name__)

DEGENERATE_MASS = 1e-300
_CHUNK = 1 << 16


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based (Philox) generator so seeded runs reproduce across platforms."""
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


@dataclass(frozen=True)
class FitConfig:
    max_iters: int = 100
    center_tol: float = 1e-6
    seed: int = 0
    record_trace: bool = True
    n_init: int = 1

    def __post_init__(self):
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise DomainError("max_iters must be a positive integer")
        if int(self.n_init) != self.n_init or self.n_init < 1:
            raise DomainError("n_init must be a positive integer")
        if not self.center_tol > 0:
            raise DomainError("center_tol must be positive")


@dataclass(frozen=True, eq=False)
class FitResult:
    params: ModelParams
    memberships: np.ndarray
    objective_trace: tuple[float, ...]
    iterations: int
    converged: bool
    center_shifts: tuple[float, ...] = ()
    repaired_clusters: int = 0


def _single_label_prototypes(kind: LossKind, labels: np.ndarray, n_classes) -> np.ndarray:
    """Prototype minimizing the loss of one observation, for each given label."""
    ones = np.eye(len(labels))
    return floor_prototypes(kind, prototype_matrix(kind, labels, ones, n_classes))


def initialize(data: Dataset, k: int, loss_kind, seed: int) -> ModelParams:
    """Centers at ``k`` distinct random observations, their label prototypes, uniform weights."""
    kind = LossKind.parse(loss_kind)
    if k > data.n:
        raise DomainError(f"cannot pick k={k} initial centers from n={data.n} points")
    if k < 1:
        raise DomainError("k must be positive")
    y = data.labels_for(kind)
    idx = make_rng(seed).choice(data.n, size=k, replace=False)
    return ModelParams(
        centers=data.features[idx],
        weights=np.full((k, data.p), 1.0 / data.p),
        prototypes=_single_label_prototypes(kind, y[idx], data.n_classes),
        loss_kind=kind,
    )


def update_memberships(D, gamma: float) -> np.ndarray:
    """Row-wise entropic minimization of the distance matrix."""
    try:
        return solve_rows(D, gamma)
    except NumericError as exc:
        raise NumericError(f"membership update failed: {exc}") from exc


def update_centers(data: Dataset, U) -> np.ndarray:
    """Membership-weighted means.  Rows for clusters with (numerically) zero mass are NaN."""
    U = np.asarray(U, dtype=float)
    mass = U.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        V = (U.T @ data.features) / mass[:, None]
    V[mass < DEGENERATE_MASS] = np.nan
    return V


def update_prototypes(data: Dataset, U, loss_kind) -> np.ndarray:
    """Exact weighted prototypes per cluster (unfloored); raises on zero-mass clusters."""
    kind = LossKind.parse(loss_kind)
    return prototype_matrix(kind, data.labels_for(kind), U, data.n_classes)


def within_cluster_spread(X, U, centers) -> np.ndarray:
    """``s[j, l] = sum_i u_ij (x_il - v_jl)^2``."""
    X = np.asarray(X, dtype=float)
    U = np.asarray(U, dtype=float)
    V = np.asarray(centers, dtype=float)
    k, p = V.shape
    S = np.zeros((k, p))
    step = max(1, _CHUNK // max(1, k * p))
    for s in range(0, X.shape[0], step):
        diff = X[s:s + step, None, :] - V[None, :, :]
        S += np.einsum("ij,ijl->jl", U[s:s + step], diff * diff)
    return S


def update_weights(data: Dataset, U, centers, lam: float) -> np.ndarray:
    """Feature weights: entropic minimization of each cluster's per-feature spread."""
    return solve_rows(within_cluster_spread(data.features, U, centers), lam)


def bcd_iteration(data: Dataset, params: ModelParams, hyper: Hyperparams):
    """One full sweep.  Returns ``(new_params, U, D, repaired)``."""
    kind = params.loss_kind
    D = distance_matrix(data, params, hyper.alpha)
    U = update_memberships(D, hyper.gamma)

    mass = U.sum(axis=0)
    live = mass >= DEGENERATE_MASS
    V = update_centers(data, U)
    Z = np.array(params.prototypes, dtype=float)
    Z[live] = floor_prototypes(kind, update_prototypes(data, U[:, live], kind))

    repaired = 0
    if not live.all():
        # reseat empty clusters on the points worst served by their best cluster
        y = data.labels_for(kind)
        order = np.argsort(-D.min(axis=1), kind="stable")
        for j, i in zip(np.flatnonzero(~live), order):
            V[j] = data.features[i]
            Z[j] = _single_label_prototypes(kind, y[i:i + 1], data.n_classes)[0]
            repaired += 1
        log.debug("reseated %d degenerate cluster(s)", repaired)

    # zero-mass clusters get zero spread, i.e. uniform weights
    W = update_weights(data, U, V, hyper.lam)
    return ModelParams(V, W, Z, kind), U, D, repaired


def restart_seed(seed: int, r: int) -> int:
    """Initialization seed of restart ``r``; restart 0 uses ``seed`` itself."""
    if r == 0:
        return int(seed)
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, (int(seed) >> 32) & 0xFFFFFFFF, r])
    return int(ss.generate_state(2, dtype=np.uint32).view(np.uint64)[0])


def _fit_once(data, hyper, kind, config, params) -> FitResult:
    trace: list[float] = []
    shifts: list[float] = []
    repaired = 0
    converged = False
    U = None
    it = 0
    for it in range(1, config.max_iters + 1):
        new, U, _, r = bcd_iteration(data, params, hyper)
        repaired += r
        shift = float(np.max(np.abs(new.centers - params.centers)))
        params = new
        shifts.append(shift)
        if config.record_trace:
            trace.append(objective(data, U, params, hyper))
        if shift < config.center_tol:
            converged = True
            break
    return FitResult(params, U, tuple(trace), it, converged, tuple(shifts), repaired)


def fit(
    data: Dataset,
    hyper: Hyperparams,
    loss_kind=LossKind.LOGLOSS,
    config: FitConfig | None = None,
    init: ModelParams | None = None,
) -> FitResult:
    """Fit by block coordinate descent until centers stop moving.

    Stops once the max-norm center displacement falls below
    ``config.center_tol`` or after ``config.max_iters`` sweeps.  With
    ``config.n_init > 1`` the fit is repeated from independent random
    initializations and the run with the lowest final objective is kept
    (ties go to the earliest restart).
    """
    config = config or FitConfig()
    kind = LossKind.parse(loss_kind)
    if data.n < 1:
        raise DomainError("empty dataset")
    if hyper.k > data.n:
        raise DomainError(f"k={hyper.k} exceeds the number of points n={data.n}")
    if init is not None:
        if init.loss_kind is not kind:
            raise DomainError("initial parameters use a different loss kind")
        return _fit_once(data, hyper, kind, config, init)

    best, best_obj = None, np.inf
    for r in range(config.n_init):
        params = initialize(data, hyper.k, kind, restart_seed(config.seed, r))
        res = _fit_once(data, hyper, kind, config, params)
        if config.n_init == 1:
            return res
        obj = res.objective_trace[-1] if res.objective_trace else \
            objective(data, res.memberships, res.params, hyper)
        if obj < best_obj or best is None:
            best, best_obj = res, obj
    return best
