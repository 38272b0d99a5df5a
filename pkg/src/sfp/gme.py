"""Generative mixture of experts with penalized EM, and an EM/BCD equivalence check.

The model family is the one that maps onto logloss SFP: each component has
a diagonal Gaussian over ``x`` whose precision is tied to a feature-weight
simplex (``cov_jl = gamma / (2 w_jl)``), a categorical expert over the class
label, and the weight-entropy penalty ``P = -(lam / gamma) sum w ln w``.
Mixing proportions are either held at ``1/k`` or re-estimated as posterior
averages.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp, wrightomega

from .exceptions import DomainError
from .losses import LossKind, floor_prototypes, prototype_matrix
from .model import Dataset, Hyperparams, ModelParams, objective
from .simplex import solve_rows, xlogx
from .training import DEGENERATE_MASS, make_rng, within_cluster_spread

__all__ = [
    "GmeParams",
    "COV_FLOOR",
    "log_joint",
    "penalty",
    "gme_loglik",
    "e_step",
    "m_step",
    "em_step",
    "cost_matrices",
    "j_function",
    "q_function",
    "penalized_weights",
    "certify_equivalence",
    "random_instance",
]

COV_FLOOR = 1e-8


@dataclass(frozen=True, eq=False)
class GmeParams:
    mixing: np.ndarray
    means: np.ndarray
    weights: np.ndarray
    experts: np.ndarray
    gamma: float = 1.0
    lam: float = 1.0
    fixed_mixing: bool = True

    def __post_init__(self):
        pi = np.array(self.mixing, dtype=float)
        V = np.array(self.means, dtype=float)
        W = np.array(self.weights, dtype=float)
        Z = np.array(self.experts, dtype=float)
        k = V.shape[0]
        if pi.shape != (k,) or W.shape != V.shape or Z.ndim != 2 or Z.shape[0] != k:
            raise DomainError("inconsistent GME parameter shapes")
        for name, a in (("mixing", pi[None, :]), ("weights", W), ("experts", Z)):
            if (a < 0).any() or not np.allclose(a.sum(axis=1), 1.0, rtol=0, atol=1e-10):
                raise DomainError(f"{name} rows must lie on the simplex")
        if (W <= 0).any():
            raise DomainError("weights must be strictly positive (finite covariances)")
        if not self.gamma > 0 or not self.lam > 0:
            raise DomainError("gamma and lam must be positive")
        for nm, a in (("mixing", pi), ("means", V), ("weights", W), ("experts", Z)):
            a.setflags(write=False)
            object.__setattr__(self, nm, a)

    @property
    def k(self) -> int:
        return self.means.shape[0]

    @property
    def covariances(self) -> np.ndarray:
        """Diagonal covariances implied by the weights, floored at ``COV_FLOOR``."""
        return np.maximum(self.gamma / (2.0 * self.weights), COV_FLOOR)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.mixing, self.means.ravel(), self.weights.ravel(),
                               self.experts.ravel()])

    def replace(self, **kw) -> "GmeParams":
        d = dict(mixing=self.mixing, means=self.means, weights=self.weights, experts=self.experts,
                 gamma=self.gamma, lam=self.lam, fixed_mixing=self.fixed_mixing)
        d.update(kw)
        return GmeParams(**d)

    def to_sfp(self) -> ModelParams:
        return ModelParams(self.means, self.weights, self.experts, LossKind.LOGLOSS)

    def to_dict(self) -> dict:
        return {"mixing": self.mixing.tolist(), "means": self.means.tolist(),
                "weights": self.weights.tolist(), "experts": self.experts.tolist(),
                "gamma": self.gamma, "lambda": self.lam, "fixed_mixing": self.fixed_mixing}


def _labels(data: Dataset, params: GmeParams) -> np.ndarray:
    if data.n_classes != params.experts.shape[1]:
        raise DomainError("class count of data and experts differ")
    return data.labels_for(LossKind.LOGLOSS)


def log_joint(data: Dataset, params: GmeParams) -> np.ndarray:
    """``ln pi_j + ln q(x_i; eta_j) + ln f(y_i; theta_j)`` from the Gaussian densities."""
    y = _labels(data, params)
    cov = params.covariances
    X = data.features
    quad = ((X[:, None, :] - params.means[None, :, :]) ** 2 / cov[None, :, :]).sum(axis=2)
    log_q = -0.5 * (quad + np.log(2.0 * np.pi * cov).sum(axis=1)[None, :])
    with np.errstate(divide="ignore"):
        log_f = np.log(params.experts[:, y].T)
        log_pi = np.log(params.mixing)
    return log_pi[None, :] + log_q + log_f


def penalty(params: GmeParams) -> float:
    return float(-(params.lam / params.gamma) * xlogx(params.weights).sum())


def gme_loglik(data: Dataset, params: GmeParams) -> float:
    """Penalized log-likelihood.  Returns ``-inf`` (with a warning) if some point has zero density."""
    L = log_joint(data, params)
    with np.errstate(divide="ignore"):
        per_point = logsumexp(L, axis=1)
    if np.isneginf(per_point).any():
        warnings.warn("zero total density at some point; log-likelihood is -inf", RuntimeWarning,
                      stacklevel=2)
        return float("-inf")
    return float(per_point.sum() + penalty(params))


def e_step(data: Dataset, params: GmeParams) -> np.ndarray:
    """Posterior component probabilities."""
    L = log_joint(data, params)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.exp(L - logsumexp(L, axis=1, keepdims=True))


def penalized_weights(spread, mass, gamma: float, lam: float) -> np.ndarray:
    """Weight rows maximizing the expected complete log-likelihood plus penalty.

    Row ``j`` minimizes ``sum_l s_l w_l / gamma - (N/2) sum_l ln w_l +
    (lam/gamma) sum_l w_l ln w_l`` over the simplex.  Stationarity gives
    ``w_l = (b/lam) / omega((s_l + lam + nu)/lam + ln(b/lam))`` with
    ``b = N gamma / 2`` and Wright's omega; the multiplier ``nu`` is found by
    root bracketing on the sum constraint.
    """
    S = np.atleast_2d(np.asarray(spread, dtype=float))
    N = np.atleast_1d(np.asarray(mass, dtype=float))
    k, p = S.shape
    W = np.empty_like(S)
    for j in range(k):
        s = S[j]
        b = N[j] * gamma / 2.0
        if p == 1:
            W[j] = 1.0
            continue
        if b < DEGENERATE_MASS:
            W[j] = solve_rows(s[None, :], lam)[0]
            continue
        c = b / lam
        logc = np.log(c)

        def w_of(nu, s=s, c=c, logc=logc):
            return c / wrightomega((s + lam + nu) / lam + logc).real

        lo = b - s.max() - lam
        hi = p * b + lam * np.log(p) - s.min() - lam
        nu = brentq(lambda v: w_of(v).sum() - 1.0, lo, hi, xtol=1e-14 * (1.0 + abs(hi) + abs(lo)),
                    rtol=4 * np.finfo(float).eps, maxiter=500)
        w = w_of(nu)
        W[j] = w / w.sum()
    return W


def m_step(data: Dataset, U, params: GmeParams) -> GmeParams:
    """Exact maximizer of the expected complete-data log-likelihood plus penalty."""
    U = np.asarray(U, dtype=float)
    y = _labels(data, params)
    mass = U.sum(axis=0)
    live = mass >= DEGENERATE_MASS
    X = data.features
    V = np.array(params.means)
    V[live] = (U[:, live].T @ X) / mass[live, None]
    Z = np.array(params.experts)
    Z[live] = prototype_matrix(LossKind.LOGLOSS, y, U[:, live], data.n_classes)
    if not live.all():
        # reseat on the points with the least confident posteriors
        order = np.argsort(U.max(axis=1), kind="stable")
        for j, i in zip(np.flatnonzero(~live), order):
            V[j] = X[i]
            Z[j] = floor_prototypes(LossKind.LOGLOSS, np.eye(data.n_classes)[y[i]][None, :])[0]
    S = within_cluster_spread(X, U, V)
    W = penalized_weights(S, np.where(live, mass, 0.0), params.gamma, params.lam)
    pi = params.mixing if params.fixed_mixing else mass / mass.sum()
    return params.replace(mixing=pi, means=V, weights=W, experts=Z)


def em_step(data: Dataset, params: GmeParams):
    """One EM iteration.  Returns ``(new_params, posteriors)``."""
    U = e_step(data, params)
    return m_step(data, U, params), U


def cost_matrices(data: Dataset, params: GmeParams):
    """Per-component costs ``D = -ln pi - ln q`` and ``l = -ln f`` from weights, not densities."""
    y = _labels(data, params)
    X = data.features
    p = X.shape[1]
    W = params.weights
    wdist = np.einsum("ijl,jl->ij", (X[:, None, :] - params.means[None, :, :]) ** 2, W)
    D = (wdist / params.gamma
         - 0.5 * np.log(W).sum(axis=1)[None, :]
         + 0.5 * p * np.log(np.pi * params.gamma)
         - np.log(params.mixing)[None, :])
    with np.errstate(divide="ignore"):
        ell = -np.log(params.experts[:, y].T)
    return D, ell


def j_function(data: Dataset, U, params: GmeParams) -> float:
    """``sum u (D + l) + sum u ln u - P``, counting zero memberships as contributing zero."""
    U = np.asarray(U, dtype=float)
    D, ell = cost_matrices(data, params)
    with np.errstate(invalid="ignore"):
        lin = np.where(U > 0, U * (D + ell), 0.0).sum()
    return float(lin + xlogx(U).sum() - penalty(params))


def q_function(data: Dataset, params: GmeParams, params_t: GmeParams) -> float:
    """Expected complete-data penalized log-likelihood at ``params`` under posteriors of ``params_t``."""
    Ut = e_step(data, params_t)
    L = log_joint(data, params)
    with np.errstate(invalid="ignore"):
        return float(np.where(Ut > 0, Ut * L, 0.0).sum() + penalty(params))


def _sfp_identity_gap(data: Dataset, U, params: GmeParams) -> float:
    """Relative gap between ``gamma * J`` and the SFP objective with ``alpha = gamma`` plus
    the log-determinant term ``-(gamma/2) sum u sum ln w`` and constants (uniform mixing)."""
    g = params.gamma
    k, p = params.means.shape
    hyper = Hyperparams(k=max(2, k), alpha=g, gamma=g, lam=params.lam)
    sfp = objective(data, U, params.to_sfp(), hyper)
    logdet = -(g / 2.0) * (np.asarray(U) @ np.log(params.weights).sum(axis=1)).sum()
    const = g * data.n * (np.log(k) + 0.5 * p * np.log(np.pi * g))
    lhs = g * j_function(data, U, params)
    rhs = sfp + logdet + const
    return float(abs(lhs - rhs) / (1.0 + abs(lhs)))


def certify_equivalence(data: Dataset, init: GmeParams, T: int) -> dict:
    """Run ``T`` EM iterations and ``T`` BCD sweeps on ``J`` from the same start.

    EM computes posteriors from Gaussian/categorical densities; BCD minimizes
    ``J`` over memberships with the entropic simplex solver (temperature 1) on
    the costs ``D + l`` built from the weight parameterization.  Both use the
    same parameter block update.  Also checks, at every iterate: the
    posterior/solver agreement, ``Q = -J + sum u ln u``, ``min_U J = -loglik``,
    and (uniform mixing only) the SFP-objective identity.
    """
    if T < 0:
        raise DomainError("T must be nonnegative")
    em = bcd = init
    u_gap = param_gap = q_gap = dual_gap = sfp_gap = 0.0
    loglik = [gme_loglik(data, init)]
    j_trace = []
    for _ in range(T):
        U_em = e_step(data, em)
        D, ell = cost_matrices(data, bcd)
        U_b = solve_rows(D + ell, 1.0)
        u_gap = max(u_gap, float(np.max(np.abs(U_em - U_b))))

        # Q(psi, psi_t) = -J(U_t, psi) + sum u_t ln u_t, checked at psi = psi_t
        ent = float(xlogx(U_em).sum())
        q = q_function(data, em, em)
        q_gap = max(q_gap, abs(q - (-j_function(data, U_em, em) + ent)) / (1.0 + abs(q)))
        dual_gap = max(dual_gap, abs(loglik[-1] + j_function(data, U_b, bcd)) / (1.0 + abs(loglik[-1])))

        em = m_step(data, U_em, em)
        bcd = m_step(data, U_b, bcd)
        param_gap = max(param_gap, float(np.max(np.abs(em.vector() - bcd.vector()))))
        loglik.append(gme_loglik(data, em))
        j_trace.append(j_function(data, U_b, bcd))
        if np.allclose(bcd.mixing, 1.0 / bcd.k, rtol=0, atol=1e-15):
            sfp_gap = max(sfp_gap, _sfp_identity_gap(data, U_b, bcd))

    steps = np.diff(loglik)
    return {
        "max_U_gap": u_gap,
        "max_param_gap": param_gap,
        "loglik_trace": loglik,
        "J_trace": j_trace,
        "loglik_nondecreasing": bool(np.all(steps >= -1e-9 * (1.0 + np.abs(loglik[:-1])))),
        "max_Q_identity_gap": q_gap,
        "max_duality_gap": dual_gap,
        "max_sfp_objective_gap": sfp_gap,
        "iterations": T,
    }


def random_instance(n: int = 30, k: int = 2, p: int = 2, n_classes: int = 2, seed: int = 0,
                    gamma: float = 1.0, lam: float = 1.0, fixed_mixing: bool = True):
    """Small random labeled data and a random valid starting point."""
    if k > n:
        raise DomainError("k must not exceed n")
    rng = make_rng(seed)
    truth = rng.normal(0.0, 3.0, size=(k, p))
    comp = rng.integers(0, k, size=n)
    X = truth[comp] + rng.normal(size=(n, p))
    y = np.where(rng.uniform(size=n) < 0.8, comp % n_classes, rng.integers(0, n_classes, size=n))
    data = Dataset(X, y.astype(np.int64), n_classes)
    idx = rng.choice(n, size=k, replace=False)
    mixing = np.full(k, 1.0 / k) if fixed_mixing else rng.dirichlet(np.ones(k))
    init = GmeParams(
        mixing=mixing,
        means=X[idx],
        weights=rng.dirichlet(np.full(p, 2.0), size=k),
        experts=rng.dirichlet(np.full(n_classes, 2.0), size=k),
        gamma=gamma, lam=lam, fixed_mixing=fixed_mixing,
    )
    return data, init
