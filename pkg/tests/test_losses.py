import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sfp.exceptions import DomainError
from sfp.losses import (
    EPS_PROTO,
    LossKind,
    floor_prototypes,
    loss_eval,
    loss_matrix,
    prototype_matrix,
    prototype_solve,
)


def test_loss_eval_examples():
    assert loss_eval("logloss", 0, [1.0, 0.0]) == 0.0
    assert loss_eval("logistic", 1, 0.0) == pytest.approx(0.693147, abs=1e-6)
    assert loss_eval("squared_error", 2.0, 5.0) == 9.0


def test_logloss_zero_probability_is_infinite():
    assert loss_eval("logloss", 1, [1.0, 0.0]) == math.inf


def test_label_domain_errors():
    with pytest.raises(DomainError):
        loss_eval("logistic", 0, 1.0)
    with pytest.raises(DomainError):
        loss_eval("logloss", 2, [0.5, 0.5])
    with pytest.raises(DomainError):
        loss_eval("squared_error", np.nan, 1.0)
    with pytest.raises(DomainError):
        LossKind.parse("hinge")


def test_prototype_examples():
    np.testing.assert_allclose(prototype_solve("logloss", [0, 0, 1], [1, 1, 1], 2), [2 / 3, 1 / 3])
    assert prototype_solve("logistic", [1, -1], [1, 1]) == 0.0
    assert prototype_solve("squared_error", [0.0, 10.0], [3, 1]) == pytest.approx(2.5, abs=1e-15)


def test_squared_error_prototype_grid_oracle():
    # 1-D dense grid over z confirms the weighted mean
    y, u = np.array([0.0, 10.0]), np.array([3.0, 1.0])
    grid = np.linspace(-1, 11, 120001)
    obj = (u[None, :] * (y[None, :] - grid[:, None]) ** 2).sum(axis=1)
    assert grid[np.argmin(obj)] == pytest.approx(2.5, abs=1e-4)


def test_prototype_errors_and_saturation():
    with pytest.raises(DomainError):
        prototype_solve("squared_error", [1.0, 2.0], [0.0, 0.0])
    z = prototype_solve("logistic", [1, 1], [1, 2])
    assert z == pytest.approx(math.log(1 / EPS_PROTO))
    assert prototype_solve("logistic", [-1], [1]) == pytest.approx(-math.log(1 / EPS_PROTO))


@given(st.integers(0, 10_000))
def test_prototype_optimality_against_grid(seed):
    rng = np.random.default_rng(seed)
    n = rng.integers(2, 12)
    u = rng.uniform(0.01, 1.0, n)
    # squared error and logistic: dense 1-D grid
    y = rng.normal(size=n)
    z = prototype_solve("squared_error", y, u)
    grid = np.linspace(z - 3, z + 3, 6001)
    f = lambda zz: float((u * (y - zz) ** 2).sum())  # noqa: E731
    assert min(f(g) for g in grid[::50]) >= f(z) - 1e-8
    yl = rng.choice([-1.0, 1.0], n)
    yl[0], yl[1] = 1.0, -1.0
    z = prototype_solve("logistic", yl, u)
    fl = lambda zz: float((u * np.logaddexp(0, -yl * zz)).sum())  # noqa: E731
    assert min(fl(g) for g in np.linspace(z - 3, z + 3, 601)) >= fl(z) - 1e-8
    # logloss: grid on the 3-simplex
    M = 3
    yc = rng.integers(0, M, n)
    zc = prototype_solve("logloss", yc, u, M)
    assert zc.sum() == pytest.approx(1.0, abs=1e-12) and (zc >= 0).all()
    fc = lambda zz: float(sum(ui * -math.log(zz[yi]) if zz[yi] > 0 else math.inf  # noqa: E731
                              for ui, yi in zip(u, yc)))
    best = fc(zc)
    step = 0.02
    for a in np.arange(step, 1, step):
        for b in np.arange(step, 1 - a, step):
            assert fc(np.array([a, b, 1 - a - b])) >= best - 1e-8


@given(st.integers(0, 10_000), st.floats(0, 1))
def test_convexity_witness(seed, t):
    rng = np.random.default_rng(seed)
    z1, z2 = rng.dirichlet(np.ones(4), 2)
    y = int(rng.integers(0, 4))
    lhs = loss_eval("logloss", y, t * z1 + (1 - t) * z2)
    assert lhs <= t * loss_eval("logloss", y, z1) + (1 - t) * loss_eval("logloss", y, z2) + 1e-10
    a, b = rng.normal(0, 5, 2)
    for kind, yy in (("logistic", rng.choice([-1, 1])), ("squared_error", rng.normal())):
        lhs = loss_eval(kind, yy, t * a + (1 - t) * b)
        assert lhs <= t * loss_eval(kind, yy, a) + (1 - t) * loss_eval(kind, yy, b) + 1e-10


def test_loss_matrix_shapes_and_values():
    Z = np.array([[0.5, 0.5], [0.9, 0.1]])
    L = loss_matrix("logloss", [0, 1, 1], Z)
    assert L.shape == (3, 2)
    np.testing.assert_allclose(L[2], [math.log(2), -math.log(0.1)])
    Ls = loss_matrix("squared_error", [1.0, 2.0], [0.0, 3.0])
    np.testing.assert_array_equal(Ls, [[1, 4], [4, 1]])


def test_floor_prototypes_stays_on_simplex_and_close():
    Z = floor_prototypes("logloss", [[1.0, 0.0, 0.0], [0.2, 0.3, 0.5]])
    np.testing.assert_allclose(Z.sum(axis=1), 1.0, atol=1e-15)
    assert Z.min() >= EPS_PROTO * (1 - 1e-9)
    np.testing.assert_allclose(Z[1], [0.2, 0.3, 0.5], atol=1e-12)


def test_prototype_matrix_rows_are_simplex():
    rng = np.random.default_rng(0)
    U = rng.dirichlet(np.ones(4), size=30)
    y = rng.integers(0, 3, 30)
    Z = prototype_matrix("logloss", y, U, 3)
    np.testing.assert_allclose(Z.sum(axis=1), 1.0, atol=1e-12)
