import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import auc_pairs, loess_ref
from sfp.data import gen_synthetic
from sfp.evaluation import (
    GridRow,
    ReparamPoint,
    auc_score,
    compute_metrics,
    default_grid,
    grid_search,
    kfold_cv,
    loess_smooth,
    reparam,
    select_point,
    stratified_folds,
    write_tuning_report,
)
from sfp.exceptions import DomainError
from sfp.model import Dataset, Hyperparams
from sfp.training import FitConfig, make_rng


def test_reparam_examples():
    assert reparam(ReparamPoint(0.5, 0.5, 0.5, 3)).alpha == 1.0
    assert reparam(ReparamPoint(0.5, 0.8, 0.5, 3)).gamma == pytest.approx(0.25, abs=1e-15)
    assert reparam(ReparamPoint(0.5, 0.5, 1 - 1e-9, 3)).lam < 1e-8
    assert reparam(ReparamPoint(1.0, 0.5, 0.5, 3)).alpha == 0.0
    with pytest.raises(DomainError):
        ReparamPoint(0.0, 0.5, 0.5, 3)
    with pytest.raises(DomainError):
        ReparamPoint(0.5, 1.0, 0.5, 3)


def test_default_grid():
    g = default_grid(83, 3)
    assert sorted({p.k for p in g}) == [3, 23, 43, 63, 83]
    assert len(g) == 250
    assert all(p.alpha_prime == pytest.approx(0.375) for p in g if abs(p.gamma_prime - 0.75) < 1e-12)
    assert len(default_grid(83, 3, include_full=True)) == 5000
    # duplicate k values collapse
    assert len({p.k for p in default_grid(4, 2)}) == 3
    with pytest.raises(DomainError):
        default_grid(3, 3)


def test_auc_examples():
    assert auc_score([1, 1, 0, 0], [0.9, 0.8, 0.4, 0.1]) == 1.0
    assert auc_score([1, 1, 0, 0], [0.9, 0.3, 0.4, 0.1]) == 0.75
    with pytest.raises(DomainError):
        auc_score([1, 1], [0.2, 0.3])


@given(st.integers(0, 10_000))
def test_auc_matches_pair_count_and_is_rank_invariant(seed):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, 25)
    y[0], y[1] = 0, 1
    s = np.round(rng.uniform(size=25), 1)  # force ties
    a = auc_score(y, s)
    assert a == pytest.approx(auc_pairs(y, s), abs=1e-12)
    assert auc_score(y, np.exp(3 * s) - 7) == pytest.approx(a, abs=1e-12)


def test_compute_metrics_perfect_and_constant():
    m = compute_metrics([1, 0, 1, 0], [0.9, 0.2, 0.8, 0.1], [1, 0, 1, 0])
    assert (m.accuracy, m.sensitivity, m.specificity, m.auc) == (1.0, 1.0, 1.0, 1.0)
    m = compute_metrics([1, 0, 1, 0], [0.5] * 4, [1, 1, 1, 1])
    assert m.accuracy == 0.5 and m.auc == 0.5


def test_stratified_folds_partition():
    y = np.array([0] * 23 + [1] * 41 + [2] * 9)
    parts = stratified_folds(y, 5, make_rng(0))
    allidx = np.sort(np.concatenate(parts))
    np.testing.assert_array_equal(allidx, np.arange(len(y)))
    for f in parts:
        for c in range(3):
            expect = np.sum(y == c) / 5
            assert abs(np.sum(y[f] == c) - expect) <= 1 + 1e-9
    with pytest.raises(DomainError, match="2"):
        stratified_folds(np.array([0] * 10 + [2] * 3), 5, make_rng(0))


def test_loess_examples():
    x = np.arange(10.0)
    np.testing.assert_allclose(loess_smooth(x, np.full(10, 3.3)), 3.3, atol=1e-12)
    np.testing.assert_allclose(loess_smooth(x, 2 * x - 1), 2 * x - 1, atol=1e-10)
    rng = np.random.default_rng(0)
    xs = np.linspace(-1, 1, 80)
    truth = xs ** 2
    noisy = truth + rng.normal(0, 0.1, 80)
    sm = loess_smooth(xs, noisy, 0.5)
    assert np.sqrt(np.mean((sm - truth) ** 2)) < np.sqrt(np.mean((noisy - truth) ** 2))
    with pytest.raises(DomainError):
        loess_smooth(x, x, 0.0)
    with pytest.raises(DomainError):
        loess_smooth(x[::-1], x)


@given(st.integers(0, 10_000), st.sampled_from([0.3, 0.5, 0.75, 1.0]))
def test_loess_matches_wls_oracle(seed, span):
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(0, 10, 15))
    if np.any(np.diff(x) <= 1e-9):
        return
    y = np.sin(x) + rng.normal(0, 0.2, 15)
    np.testing.assert_allclose(loess_smooth(x, y, span), loess_ref(x, y, span), atol=1e-9)


def test_loess_agrees_with_statsmodels_when_neighbourhood_sizes_agree():
    lowess = pytest.importorskip("statsmodels.nonparametric.smoothers_lowess").lowess
    rng = np.random.default_rng(1)
    x = np.sort(rng.uniform(0, 5, 20))
    y = np.cos(x) + rng.normal(0, 0.1, 20)
    ref = lowess(y, x, frac=0.5, it=0, delta=0.0, return_sorted=False)
    np.testing.assert_allclose(loess_smooth(x, y, 0.5), ref, atol=1e-9)


def _row(k, g, l, acc):
    return GridRow(ReparamPoint(g / 2, g, l, k), acc, 0.0, 0.0)


def test_select_point_strategies():
    assert select_point([_row(2, 0.55, 0.05, 0.4)]).k == 2
    rows = [_row(2, 0.55, 0.05, 0.4), _row(3, 0.65, 0.15, 0.9), _row(4, 0.75, 0.05, 0.7)]
    assert select_point(rows, 1) == rows[1].point
    tie = [_row(2, 0.55, 0.05, 0.8), _row(3, 0.65, 0.15, 0.8)]
    assert select_point(tie, 1) == tie[0].point
    rows2 = [_row(k, g, l, 0.1 * k + g)
             for k in (2, 4, 6) for g in (0.55, 0.65, 0.75) for l in (0.05, 0.15)]
    p = select_point(rows2, 2, q=20)
    # top 20% of 18 rows = 4 rows: k=6 with gamma' in {0.75, 0.65}
    assert p.k == 6 and p.gamma_prime == pytest.approx(0.70)


def test_strategy3_recovers_smooth_maximum():
    rows = []
    for k in (2, 5, 8, 11, 14):
        for g in (0.55, 0.65, 0.75, 0.85, 0.95):
            for l in np.round(np.arange(0.05, 1, 0.1), 2):
                acc = 1 - 0.001 * (k - 8) ** 2 - (g - 0.75) ** 2 - (l - 0.45) ** 2
                rows.append(_row(k, g, l, acc))
    p = select_point(rows, 3)
    assert (p.k, p.gamma_prime, p.lambda_prime) == (8, 0.75, 0.45)
    with pytest.raises(DomainError):
        select_point([], 3)
    with pytest.raises(DomainError):
        select_point(rows, 4)


def test_kfold_cv_separable_and_deterministic():
    data = gen_synthetic("mixture3", 300, 0)
    h = Hyperparams(20, 1.0, 0.05, 1.0)
    a = kfold_cv(data, h, folds=5, repeats=2, seed=3)
    b = kfold_cv(data, h, folds=5, repeats=2, seed=3)
    assert a == b
    # nearest-true-mean classifier as reference accuracy on the same data
    d = ((data.features[:, None, :] - np.array([[0, 0], [-12, 0], [0, 8], [0, -4]])[None]) ** 2).sum(2)
    nearest = np.array([0, 1, 2, 2])[np.argmin(d, axis=1)]
    assert np.mean(nearest == data.labels) >= 0.97
    assert a.accuracy >= 0.97
    assert len(a.folds) == 10


def test_kfold_cv_binary_metrics_and_threads():
    data = gen_synthetic("two_circle", 200, 1)
    h = Hyperparams(6, 1.0, 0.3, 1.0)
    r1 = kfold_cv(data, h, seed=1, threads=1)
    r2 = kfold_cv(data, h, seed=1, threads=3)
    assert r1 == r2
    assert r1.auc is not None and 0 <= r1.auc <= 1
    assert r1.sensitivity is not None and r1.specificity is not None


def test_grid_search_order_independent(tmp_path):
    data = gen_synthetic("xor", 100, 2)
    grid = default_grid(80, 2)[:6]
    cfg = FitConfig(max_iters=20, record_trace=False)
    h1, rows1 = grid_search(data, grid, seed=5, config=cfg)
    h2, rows2 = grid_search(data, grid[::-1], seed=5, config=cfg)
    acc1 = {r.point: r.mean_accuracy for r in rows1}
    acc2 = {r.point: r.mean_accuracy for r in rows2}
    assert acc1 == acc2
    path = tmp_path / "report.csv"
    write_tuning_report(rows1, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "k,alpha_prime,gamma_prime,lambda_prime,mean_accuracy,std,runtime_seconds"
    assert len(lines) == 7
    h, rows = grid_search(data, grid[:1], seed=5, config=cfg)
    assert h == reparam(grid[0])
    with pytest.raises(DomainError):
        grid_search(data, [], seed=0)


def test_constant_predictor_metrics():
    y = np.array([1, 0] * 10)
    m = compute_metrics(y, np.full(20, 0.3), np.zeros(20, int))
    assert m.accuracy == 0.5 and m.auc == 0.5
    assert math.isclose(m.specificity, 1.0) and m.sensitivity == 0.0
