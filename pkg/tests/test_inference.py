import numpy as np
import pytest

from conftest import lasso, mt_objective, poisson_data
from mtglm import PenaltySpec, RhoFunction
from mtglm.inference import (
    RankDeficiency,
    abp_lower_bound,
    detect_outliers,
    sandwich_covariance,
)
from mtglm.init import robust_start
from mtglm.simulation import ScenarioConfig, generate_sample, sample_design
from mtglm.solver import FitResult, irwls_fit


def _fit(obj):
    b = np.zeros(obj.n_coef)
    b[0] = obj.table.inverse(np.mean(np.sqrt(obj.y)))
    return irwls_fit(obj, b)


# sandwich covariance


def test_sandwich_symmetric_psd():
    X, y = poisson_data(200, 4, 1)
    obj = mt_objective(X, y, spec=lasso(0.01))
    fit = _fit(obj)
    sc = sandwich_covariance(obj, fit)
    for S in (sc.cov, sc.cov_active):
        np.testing.assert_allclose(S, S.T, atol=0)
        assert np.min(np.linalg.eigvalsh(S)) >= -1e-8
    assert sc.standard_errors().shape == (5,)
    np.testing.assert_array_equal(sc.active, np.concatenate([[0], fit.active]))


def test_meat_invariant_under_duplication():
    X, y = poisson_data(100, 2, 2)
    obj = mt_objective(X, y)
    fit = _fit(obj)
    obj2 = mt_objective(np.vstack([X, X]), np.concatenate([y, y]))
    fit2 = FitResult(fit.beta, fit.objective, fit.loss, fit.weights, 1, True)
    a = sandwich_covariance(obj, fit)
    b = sandwich_covariance(obj2, fit2)
    np.testing.assert_allclose(b.B, a.B, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(b.cov, a.cov / 2, rtol=1e-10)


def test_intercept_only_square_loss_monte_carlo():
    mu = 3.0
    n = 100_000
    y = np.random.default_rng(3).poisson(mu, n).astype(float)
    obj = mt_objective(np.ones((n, 1)), y, RhoFunction.square())
    fit = _fit(obj)
    sc = sandwich_covariance(obj, fit)
    # independent draws: the estimator solves mean sqrt(y) = E sqrt(Y), whose
    # eta-derivative is Cov(sqrt(Y), Y)
    d = np.random.default_rng(4).poisson(mu, n).astype(float)
    sd = np.sqrt(d)
    ref = np.var(sd) / np.cov(sd, d)[0, 1] ** 2 / n
    assert abs(sc.cov[0, 0] / ref - 1.0) < 0.05


def test_sandwich_scales_like_one_over_n():
    cfg = ScenarioConfig("AVY", n=200, p=3)
    traces = np.zeros((50, 2))
    for r in range(50):
        for c, n in enumerate((200, 400)):
            X, y = generate_sample(cfg.replace(n=n), np.random.default_rng([r, n]))
            obj = mt_objective(X, y)
            traces[r, c] = np.trace(sandwich_covariance(obj, _fit(obj), "full").cov)
    # average traces; per-replicate ratios are heavy tailed at n = 200
    ratio = traces[:, 0].mean() / traces[:, 1].mean()
    assert abs(ratio / 2.0 - 1.0) < 0.2


def test_singular_block_is_named():
    X, y = poisson_data(50, 2, 5)
    X = np.column_stack([X, X[:, 1]])
    obj = mt_objective(X, y)
    beta = np.array([0.5, 0.4, 0.0, 0.4])
    fit = FitResult(beta, obj.value(beta), obj.loss(beta), np.ones(50), 1, True)
    with pytest.raises(RankDeficiency, match="full"):
        sandwich_covariance(obj, fit, "full")
    with pytest.raises(RankDeficiency, match="active-set"):
        sandwich_covariance(obj, fit, "active")


def test_sandwich_needs_converged_fit():
    X, y = poisson_data(30, 1, 6)
    obj = mt_objective(X, y)
    fit = _fit(obj)
    fit.converged = False
    with pytest.raises(ValueError):
        sandwich_covariance(obj, fit)


# bootstrap outlier detection


def test_clean_data_rarely_flagged():
    X, _ = poisson_data(1000, 3, 7)
    beta = np.array([0.5, 0.8, -0.3, 0.0])
    y = np.random.default_rng(8).poisson(np.exp(X @ beta)).astype(float)
    rep = detect_outliers(X, y, beta, B=100_000, seed=1)
    assert rep.count / 1000 <= 0.005
    assert 3.0 <= abs(rep.q1) <= 7.0 and 3.0 <= abs(rep.q2) <= 7.0


def test_planted_outliers_flagged():
    X, _ = poisson_data(300, 3, 9)
    beta = np.array([0.5, 0.8, -0.3, 0.0])
    mu = np.exp(X @ beta)
    y = np.random.default_rng(10).poisson(mu).astype(float)
    planted = np.arange(0, 300, 30)
    y[planted] = np.round(100 * mu[planted])
    rep = detect_outliers(X, y, beta, B=100_000, seed=2)
    assert set(planted) <= set(rep.outliers)
    np.testing.assert_array_equal(rep.flags, (rep.residuals < rep.q1) | (rep.residuals > rep.q2))


def test_single_draw_is_degenerate():
    X, y = poisson_data(20, 1, 11)
    beta = np.array([0.5, 0.8])
    with pytest.warns(RuntimeWarning):
        rep = detect_outliers(X, y, beta, B=1, seed=0)
    assert rep.q1 == rep.q2
    np.testing.assert_array_equal(rep.flags, rep.residuals != rep.q1)


def test_detection_deterministic():
    X, y = poisson_data(100, 2, 12)
    beta = np.array([0.5, 0.8, 0.0])
    a = detect_outliers(X, y, beta, B=25_000, seed=9)
    b = detect_outliers(X, y, beta, B=25_000, seed=9)
    assert (a.q1, a.q2) == (b.q1, b.q2)
    np.testing.assert_array_equal(a.flags, b.flags)


def test_overflowing_linear_predictor_is_clamped():
    X = np.array([[1.0, 800.0], [1.0, 0.0]])
    with pytest.warns(RuntimeWarning, match="clamped"):
        rep = detect_outliers(X, np.array([1.0, 2.0]), np.array([0.0, 1.0]), B=2000)
    assert np.all(np.isfinite(rep.residuals))


# breakdown


def test_abp_bound_in_unit_interval():
    cfg = ScenarioConfig("AVY", p=10)
    for b0 in (-2.0, 0.0, 1.0):
        beta = cfg.beta_star.copy()
        beta[0] = b0
        r = abp_lower_bound(lambda rng, m: sample_design(cfg, rng, m), beta, n_draws=20_000)
        assert 0.0 <= r.value <= 1.0
        assert r.se >= 0.0


def test_abp_small_when_mean_near_zero():
    X = np.ones((50, 1))
    r = abp_lower_bound(X, np.array([-6.0]))
    assert r.value < 1e-3


def test_abp_approaches_half_when_separated():
    # large mean: rho(sqrt(y)) is 1 and the fitted residual term vanishes
    X = np.ones((10, 1))
    r = abp_lower_bound(X, np.array([11.0]), RhoFunction("quartic", 20.0))
    assert r.c == pytest.approx(1.0, abs=5e-3)
    assert r.value == pytest.approx(0.5, abs=2e-3)


def test_abp_zero_mean_returns_zero():
    r = abp_lower_bound(np.ones((5, 1)), np.array([-700.0]))
    assert r.value == 0.0 and r.c <= 0.0


def test_abp_needs_bounded_rho():
    with pytest.raises(ValueError):
        abp_lower_bound(np.ones((5, 1)), np.array([0.0]), RhoFunction.square())


@pytest.mark.parametrize("seed", range(20))
def test_gross_outliers_never_break_the_fit(seed):
    n = 30
    X, y = poisson_data(n, 3, 100 + seed)
    rows = np.random.default_rng(seed).permutation(n)[: n - 3]
    X[rows, 1:] = 50.0
    y[rows] = 1e5
    obj = mt_objective(X, y, spec=PenaltySpec("elastic-net", 0.1, 0.5))
    fit = irwls_fit(obj, robust_start(obj).beta)
    assert np.all(np.isfinite(fit.beta))
    assert np.linalg.norm(fit.beta) < 1e3
