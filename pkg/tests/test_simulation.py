import json

import numpy as np
import pytest

from mtglm import simulation
from mtglm.simulation import (
    ScenarioConfig,
    contaminate,
    generate_sample,
    run_monte_carlo,
    sample_design,
    selection_counts,
)


def test_independent_design_has_small_covariances():
    n = 4000
    X = sample_design(ScenarioConfig("AVY", n=n, p=4, rho_corr=0.0), np.random.default_rng(1))
    C = np.cov(X[:, 1:], rowvar=False)
    off = C[~np.eye(4, dtype=bool)]
    assert np.all(np.abs(off) < 3 / np.sqrt(n))


def test_avy_correlation():
    X = sample_design(ScenarioConfig("AVY", n=100_000, p=2), np.random.default_rng(2))
    assert abs(np.corrcoef(X[:, 1], X[:, 2])[0, 1] - 0.5) < 0.01


def test_amr_uniform_margins_and_correlation():
    X = sample_design(ScenarioConfig("AMR", n=100_000, p=5), np.random.default_rng(3))
    Z = X[:, 1:]
    assert Z.min() >= 0.0 and Z.max() <= 1.0
    np.testing.assert_allclose(Z.mean(axis=0), 0.5, atol=0.005)
    np.testing.assert_allclose(Z.var(axis=0), 1 / 12, atol=0.002)
    R = np.corrcoef(Z, rowvar=False)
    assert abs(R[0, 1] - 0.5) < 0.01
    assert abs(R[0, 2] - 0.25) < 0.01


def test_amr_mean_response():
    X, y = generate_sample(ScenarioConfig("AMR", n=100_000, p=5), np.random.default_rng(4))
    assert abs(y.mean() - 3.71) < 0.1


def test_amr_mean_response_jensen_bound():
    # with uniform covariates E exp(x'beta*) >= exp(E x'beta*) = exp(2.15)
    X, y = generate_sample(ScenarioConfig("AMR", n=100_000, p=5), np.random.default_rng(4))
    assert y.mean() > np.exp(2.15)
    indep = (np.expm1(1.8) / 1.8) * np.expm1(1.0) * (np.expm1(1.5) / 1.5)
    comonotone = np.expm1(4.3) / 4.3
    # positive dependence lies between independence and comonotonicity
    assert indep < y.mean() < comonotone


def test_avy2_coefficients():
    np.testing.assert_array_equal(ScenarioConfig("AVY2", p=3).beta_star, [2.0, 1.0, 0.0, 0.0])
    np.testing.assert_array_equal(ScenarioConfig("AMR", p=6).support, [1, 2, 5])


def test_avy_contamination_rows():
    cfg = ScenarioConfig("AVY", n=100, p=4, eps=0.1, y0=50.0)
    X, y = generate_sample(cfg, np.random.default_rng(5))
    Xc, yc, mask = contaminate(X, y, cfg, np.random.default_rng(6))
    x0 = np.array([1.0, 3.0, 0.0, 0.0, 0.0])
    hits = np.all(Xc == x0, axis=1)
    assert hits.sum() == 10
    np.testing.assert_array_equal(hits, mask)
    assert np.all(yc[mask] == 50.0)
    np.testing.assert_array_equal(Xc[~mask], X[~mask])


def test_no_contamination_leaves_data_unchanged():
    cfg = ScenarioConfig("AVY", n=50, p=3)
    X, y = generate_sample(cfg, np.random.default_rng(7))
    Xc, yc, mask = contaminate(X, y, cfg, np.random.default_rng(8))
    np.testing.assert_array_equal(Xc, X)
    np.testing.assert_array_equal(yc, y)
    assert not mask.any()


def test_amr_zero_multiplier_gives_zero_counts():
    cfg = ScenarioConfig("AMR", n=500, p=5, eps=0.1, y0=0.0)
    X, y = generate_sample(cfg, np.random.default_rng(9))
    _, yc, mask = contaminate(X, y, cfg, np.random.default_rng(10))
    assert 20 <= mask.sum() <= 80
    assert np.all(yc[mask] == 0.0)


def test_selection_counts():
    bstar = np.array([0.0, 1.8, 1.0, 0.0, 0.0, 1.5])
    size, fn, fp = selection_counts(np.array([0.1, 1.0, 0.0, 0.2, 0.0, 1.1]), bstar)
    assert (size, fn, fp) == (4, 1, 1)


def test_config_validation():
    with pytest.raises(ValueError):
        ScenarioConfig(design="XYZ")
    with pytest.raises(ValueError):
        ScenarioConfig(eps=0.5)
    with pytest.raises(ValueError):
        ScenarioConfig("AMR", p=3)
    with pytest.raises(ValueError):
        ScenarioConfig("AMR", p=1600)
    assert ScenarioConfig("AMR", p=1600, allow_large_p=True).p == 1600


def test_smoke_report():
    cfg = ScenarioConfig("AVY", n=30, p=2, replications=1, seed=3)
    rep = run_monte_carlo(cfg, simulation.METHODS, threads=1)
    assert len(rep.summary) == len(simulation.METHODS)
    for m in simulation.METHODS:
        assert np.isfinite(rep.mse(m)) and rep.mse(m) >= 0.0
    doc = json.loads(rep.to_json())
    assert next(iter(doc)) == "schema"
    assert rep.to_csv().count("\n") == 1 + len(simulation.METHODS)


def test_reports_are_bit_identical():
    cfg = ScenarioConfig("AVY", n=40, p=3, eps=0.1, replications=2, seed=11)
    kw = dict(methods=("MT-lasso", "ML-lasso"), y0_grid=[0.0, 100.0])
    a = run_monte_carlo(cfg, threads=1, **kw)
    b = run_monte_carlo(cfg, threads=2, **kw)
    assert a.to_json() == b.to_json()
    assert a.to_csv() == b.to_csv()


def test_common_random_numbers_across_contamination():
    cfg = ScenarioConfig("AVY", n=40, p=3, seed=12)
    g1, _ = simulation.replicate_seeds(12, 0)
    g2, _ = simulation.replicate_seeds(12, 0)
    np.testing.assert_array_equal(generate_sample(cfg, g1)[0], generate_sample(cfg.replace(eps=0.1), g2)[0])


def test_amr_false_negative_accounting():
    cfg = ScenarioConfig("AMR", n=60, p=8, replications=2, seed=13)
    rep = run_monte_carlo(cfg, ("MT-lasso",), threads=1)
    for r in rep.records:
        active = np.flatnonzero(np.asarray(r["beta"])[1:]) + 1
        recovered = np.intersect1d(active, cfg.support).size
        assert r["fn"] + recovered == 3
        assert r["size"] == np.count_nonzero(r["beta"])


def test_replicate_failures_are_recorded(monkeypatch):
    real = simulation.fit_method

    def flaky(method, X, y, *a, **k):
        if method == "ML-lasso":
            raise RuntimeError("boom")
        return real(method, X, y, *a, **k)

    monkeypatch.setattr(simulation, "fit_method", flaky)
    cfg = ScenarioConfig("AVY", n=30, p=2, replications=2, seed=14)
    rep = run_monte_carlo(cfg, ("MT-lasso", "ML-lasso"), threads=1)
    row = rep.row("ML-lasso", 0.0, 0.0)
    assert row["n_failed"] == 2 and row["n_ok"] == 0
    assert rep.failures == {"ML-lasso|0.0|0.0": 2}
    assert np.isfinite(rep.mse("MT-lasso"))
    assert '"mse": null' in rep.to_json()


def test_unknown_method():
    with pytest.raises(ValueError):
        run_monte_carlo(ScenarioConfig(n=30, p=2, replications=1), ("RQL-lasso",))
