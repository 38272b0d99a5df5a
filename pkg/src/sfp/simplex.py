"""Minimization of linear-plus-negative-entropy objectives over the simplex.

For a cost vector ``a`` and temperature ``gamma > 0`` the problem

    minimize  sum_i a_i * theta_i + gamma * sum_i theta_i * ln(theta_i)
    s.t.      theta on the standard simplex

has the unique solution ``theta_i ∝ exp(-a_i / gamma)``.  Memberships,
feature weights and prediction-time memberships are all computed with this
kernel, so it accepts whole matrices and solves each row independently.
"""

from __future__ import annotations

import numpy as np

from .exceptions import DomainError, NumericError

__all__ = [
    "solve_entropic_linear_min",
    "solve_rows",
    "entropic_objective",
    "entropy",
    "xlogx",
]


def _check_gamma(gamma: float) -> float:
    gamma = float(gamma)
    if not gamma > 0.0 or not np.isfinite(gamma):
        raise DomainError(f"gamma must be a positive finite number, got {gamma!r}")
    return gamma


def solve_rows(costs: np.ndarray, gamma: float) -> np.ndarray:
    """Solve the entropic problem independently for every row of ``costs``.

    Entries equal to ``+inf`` receive exactly zero mass.  The exponent is
    shifted by the row minimum, so no finite input overflows.

    Raises
    ------
    DomainError
        If ``gamma <= 0``.
    NumericError
        If some row has no finite entry (or contains NaN / -inf).
    """
    gamma = _check_gamma(gamma)
    a = np.asarray(costs, dtype=float)
    if a.ndim != 2:
        raise DomainError(f"expected a 2-D cost matrix, got shape {a.shape}")
    # NaN and -inf both propagate into the row minimum, so one check covers them
    row_min = a.min(axis=1, keepdims=True)
    if not np.isfinite(row_min).all():
        bad = int(np.flatnonzero(~np.isfinite(row_min[:, 0]))[0])
        if np.isnan(row_min[bad, 0]) or row_min[bad, 0] < 0:
            raise NumericError("cost matrix contains NaN or -inf")
        raise NumericError(f"row {bad} has no finite cost")
    with np.errstate(invalid="ignore", over="ignore"):
        # inf - finite = inf, exp(-inf) = 0: infinite costs (and overflowing gaps) map to exact zeros
        e = np.subtract(a, row_min)
        e *= -1.0 / gamma
        np.exp(e, out=e)
    e /= e.sum(axis=1, keepdims=True)
    return e


def solve_entropic_linear_min(a, gamma: float) -> np.ndarray:
    """Closed-form minimizer of ``<a, theta> + gamma * sum theta ln theta`` on the simplex."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 1 or a.size == 0:
        raise DomainError(f"expected a non-empty 1-D cost vector, got shape {a.shape}")
    return solve_rows(a[None, :], gamma)[0]


def xlogx(x) -> np.ndarray:
    """Elementwise ``x * ln(x)`` with ``0 * ln(0) = 0``."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] * np.log(x[pos])
    return out


def entropy(u) -> float:
    """Shannon entropy ``-sum u_j ln u_j`` of a probability vector."""
    return float(-xlogx(u).sum())


def entropic_objective(theta, a, gamma: float) -> float:
    """Value of the linear-plus-negative-entropy objective at ``theta``."""
    theta = np.asarray(theta, dtype=float)
    a = np.asarray(a, dtype=float)
    lin = np.where(theta > 0, theta * a, 0.0).sum()
    return float(lin + gamma * xlogx(theta).sum())
