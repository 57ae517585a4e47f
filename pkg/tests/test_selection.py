import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import lasso, mt_objective, poisson_data
from mtglm import PenaltySpec, RhoFunction
from mtglm.families import DegenerateInput
from mtglm.selection import (
    ConfigurationError,
    _select,
    complexity,
    degrees_of_freedom,
    fit_ml_path,
    fit_path,
    hat_trace,
    lambda_grid,
    lambda_max,
    make_folds,
    rcv,
    ric,
)
from mtglm.simulation import ScenarioConfig, contaminate, generate_sample, replicate_seeds
from mtglm.solver import irwls_fit


# grid


def test_grid_is_geometric_and_descending():
    X, y = poisson_data(60, 4, 1)
    obj = mt_objective(X, y)
    g = lambda_grid(obj, lasso(1.0), 50, 1e-3)
    r = g[1:] / g[:-1]
    np.testing.assert_allclose(r, r[0], rtol=1e-12)
    assert np.all(np.diff(g) < 0)
    np.testing.assert_allclose(g[-1] / g[0], 1e-3, rtol=1e-12)


def test_two_point_grid():
    X, y = poisson_data(60, 4, 1)
    obj = mt_objective(X, y)
    g = lambda_grid(obj, lasso(1.0), 2, 0.01)
    lmax = lambda_max(obj, 1.0)[0]
    np.testing.assert_allclose(g, [lmax, lmax * 0.01], rtol=1e-15)


def test_top_of_grid_has_empty_active_set():
    X, y = poisson_data(80, 5, 2)
    obj = mt_objective(X, y)
    path = fit_path(obj, lasso(1.0), n_points=5, ratio=0.1)
    assert path.fits[0].active.size == 0


def test_elastic_net_grid_scales_with_alpha():
    X, y = poisson_data(60, 3, 3)
    obj = mt_objective(X, y)
    a = lambda_grid(obj, PenaltySpec("elastic-net", 1.0, 0.5), 3, 0.1)
    b = lambda_grid(obj, lasso(1.0), 3, 0.1)
    np.testing.assert_allclose(a, 2.0 * b, rtol=1e-12)


def test_grid_errors():
    X, y = poisson_data(30, 2, 4)
    obj = mt_objective(X, y)
    with pytest.raises(ValueError):
        lambda_grid(obj, lasso(1.0), 1)
    with pytest.raises(ValueError):
        lambda_grid(obj, lasso(1.0), 10, 1.0)
    X[:, 1:] = 0.0
    with pytest.raises(DegenerateInput):
        lambda_grid(mt_objective(X, y), lasso(1.0))


# degrees of freedom


def test_hat_trace_dense_oracle():
    XA = np.array([[1.0, 2.0], [1.0, -1.0], [1.0, 0.5]])
    W = np.array([1.0, 4.0, 9.0])
    sw = np.sqrt(W)[:, None]
    H = (sw * XA) @ np.linalg.inv(XA.T @ (W[:, None] * XA) + np.eye(2)) @ (sw * XA).T
    np.testing.assert_allclose(hat_trace(XA, W, 1.0), np.trace(H), rtol=1e-13)


def test_df_equals_active_size_without_penalty():
    X, y = poisson_data(50, 3, 5)
    obj = mt_objective(X, y, RhoFunction.square(), lasso(0.0))
    fit = irwls_fit(obj, np.zeros(4))
    np.testing.assert_allclose(degrees_of_freedom(fit, obj), 4.0, rtol=1e-10)


def test_df_shrinks_to_intercept_under_heavy_ridge():
    X, y = poisson_data(50, 3, 6)
    obj = mt_objective(X, y, spec=PenaltySpec("ridge", 1e8))
    fit = irwls_fit(obj, np.zeros(4))
    assert degrees_of_freedom(fit, obj) == pytest.approx(1.0, abs=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_df_nonincreasing_in_ridge(seed):
    rng = np.random.default_rng(seed)
    XA = np.column_stack([np.ones(20), rng.standard_normal((20, 3))])
    W = rng.uniform(0.0, 3.0, 20)
    vals = [hat_trace(XA, W, np.array([0.0, r, r, r])) for r in np.geomspace(1e-3, 1e3, 15)]
    assert np.all(np.diff(vals) <= 1e-10)


def test_collinear_columns_fall_back_to_pseudo_inverse():
    XA = np.column_stack([np.ones(5), np.arange(5.0), 2 * np.arange(5.0)])
    with pytest.warns(RuntimeWarning):
        t = hat_trace(XA, np.ones(5), 0.0)
    assert t == pytest.approx(2.0)


# information criteria


def test_ric_bic_example():
    assert ric(0.5, 3, math.e ** 2, "bic") == pytest.approx(6.5, rel=1e-15)


def test_ebic_gamma_zero_is_bic():
    assert complexity("ebic", 100, 20, gamma=0.0) == complexity("bic", 100)


@settings(max_examples=50, deadline=None)
@given(st.integers(8, 10**6), st.floats(0.01, 50.0), st.floats(-10.0, 10.0))
def test_aic_below_bic(n, df, loss):
    assert ric(loss, df, n, "aic") < ric(loss, df, n, "bic")


def test_criterion_errors():
    with pytest.raises(ValueError):
        complexity("ebic", 100, 10, gamma=1.5)
    with pytest.raises(ValueError):
        complexity("cp", 100)


def test_selection_ties_prefer_larger_lambda():
    assert _select(np.array([3.0, 1.0, 1.0, 2.0])) == 1
    assert _select(np.array([np.nan, 1.0, 1.0])) == 1


# paths


def test_warm_start_no_worse_than_zero_start():
    X, y = poisson_data(80, 6, 7)
    y[:5] = 70.0
    obj = mt_objective(X, y)
    path = fit_path(obj, lasso(1.0), n_points=12, ratio=1e-2)
    for lam, fit in zip(path.lambdas, path.fits):
        o = obj.with_penalty(lasso(float(lam)))
        cold = irwls_fit(o, np.zeros(obj.n_coef))
        assert fit.objective <= cold.objective + 1e-10


def test_path_selection_attains_minimum():
    X, y = poisson_data(80, 6, 8)
    path = fit_path(mt_objective(X, y), lasso(1.0), n_points=10, ratio=1e-2)
    for flavor, values in path.ric.items():
        assert values[path.selected[flavor]] == np.min(values)
    assert path.starts[0] in ("init", "mid")
    assert set(path.starts) <= {"init", "mid", "warm"}


def test_path_rejects_ascending_grid():
    X, y = poisson_data(30, 2, 9)
    with pytest.raises(ConfigurationError):
        fit_path(mt_objective(X, y), lasso(1.0), lambdas=[0.01, 0.1])


def test_ml_path_runs_and_selects():
    X, y = poisson_data(100, 5, 10)
    path = fit_ml_path(X, y, lasso(1.0), n_points=10)
    assert path.fits[0].active.size == 0
    assert 1 in path.best("bic").active


@pytest.mark.slow
def test_bic_recovers_true_variable():
    cfg = ScenarioConfig("AVY", n=100, p=10)
    hits = 0
    for r in range(100):
        X, y = generate_sample(cfg, np.random.default_rng(9000 + r))
        path = fit_path(mt_objective(X, y), lasso(1.0), n_points=30)
        hits += 1 in path.best("bic").active
    assert hits >= 95


# robust cross-validation


def test_leave_one_out_rcv_is_mean_of_point_losses():
    X, y = poisson_data(8, 1, 11)
    obj = mt_objective(X, y)
    lams = np.array([0.05])
    res = rcv(obj, lasso(0.05), lams, K=8, seed=3)
    point = []
    for i in range(8):
        keep = np.flatnonzero(np.arange(8) != i)
        path = fit_path(obj.subset(keep), lasso(0.05), lams)
        point.append(obj.subset([i]).loss(path.fits[0].beta))
    np.testing.assert_allclose(res.values[0, 0], np.mean(point), rtol=1e-12)


def test_rcv_deterministic_and_thread_independent():
    X, y = poisson_data(40, 3, 12)
    obj = mt_objective(X, y)
    lams = np.array([0.2, 0.05, 0.01])
    a = rcv(obj, lasso(1.0), lams, K=4, seed=5)
    b = rcv(obj, lasso(1.0), lams, K=4, seed=5)
    c = rcv(obj, PenaltySpec("elastic-net", 1.0, 0.5), lams, K=4, seed=5,
            alphas=[1.0, 0.5], threads=2)
    np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_array_equal(a.folds, b.folds)
    np.testing.assert_array_equal(c.values[0], a.values[0])


def test_rcv_single_lambda():
    X, y = poisson_data(20, 2, 13)
    res = rcv(mt_objective(X, y), lasso(0.1), [0.1], K=2, seed=0)
    assert res.selected == (0, 0)
    assert res.best_lambda == 0.1


def test_rcv_literal_adds_penalty():
    X, y = poisson_data(20, 2, 14)
    obj = mt_objective(X, y)
    a = rcv(obj, lasso(0.1), [0.1], K=2, seed=0)
    b = rcv(obj, lasso(0.1), [0.1], K=2, seed=0, literal=True)
    assert b.values[0, 0] > a.values[0, 0]


def test_folds():
    labels = make_folds(23, 5, 0)
    sizes = np.bincount(labels)
    assert sizes.max() - sizes.min() <= 1 and sizes.sum() == 23
    with pytest.raises(ConfigurationError):
        make_folds(10, 1, 0)
    with pytest.raises(ConfigurationError):
        make_folds(3, 4, 0)
    with pytest.raises(ConfigurationError):
        make_folds(2, 2, 0)
    with pytest.raises(ConfigurationError):
        rcv(mt_objective(*poisson_data(10, 1, 0)), lasso(0.1), [0.1], K=2, seed=None)


def test_path_leaves_contaminated_basin():
    # zero responses at x1 = 3 make beta1 = 0 optimal under heavy penalties only
    cfg = ScenarioConfig("AVY", n=100, p=10, eps=0.1, y0=0.0)
    g1, g2 = replicate_seeds(5, 1)
    X, y = generate_sample(cfg, g1)
    X, y, _ = contaminate(X, y, cfg, g2)
    obj = mt_objective(X, y)
    path = fit_path(obj, lasso(1.0), n_points=20)
    o = obj.with_penalty(lasso(float(path.lambdas[-1])))
    assert path.fits[-1].objective <= irwls_fit(o, cfg.beta_star.copy()).objective + 1e-9
    assert path.best("bic").beta[1] > 0.5
    assert fit_path(obj, lasso(1.0), n_points=20, mid_start=False).best("bic").beta[1] < 0.5
