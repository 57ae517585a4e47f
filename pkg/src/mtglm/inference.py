"""Sandwich covariance, bootstrap deviance-residual outlier flags and the
asymptotic breakdown-point lower bound."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special

from .families import cached_table, m_value, poisson_deviance_residual
from .robust_loss import MtObjective, RhoFunction, mt_hessian, observation_scores
from .solver import FitResult

ETA_CLAMP = 700.0
# bootstrap and Monte Carlo draws are generated in fixed-size blocks, each
# with its own spawned stream, so results do not depend on scheduling
BLOCK = 10_000
POISSON_NORMAL = 1e15


class RankDeficiency(np.linalg.LinAlgError):
    """The Hessian block requested for a sandwich is singular."""


@dataclass
class SandwichCovariance:
    A: np.ndarray
    B: np.ndarray
    cov: np.ndarray | None
    active: np.ndarray
    cov_active: np.ndarray | None

    def standard_errors(self) -> np.ndarray:
        if self.cov is None:
            raise RankDeficiency("full covariance was not computed")
        return np.sqrt(np.maximum(np.diag(self.cov), 0.0))


def _sandwich(A, B, n, name):
    if A.shape[0] == 0:
        return np.zeros((0, 0))
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > 1e12:
        raise RankDeficiency(f"{name} block of A_n is singular (condition number {cond:.3g})")
    Ai = np.linalg.inv(A)
    S = Ai @ B @ Ai / n
    return 0.5 * (S + S.T)


def sandwich_covariance(obj: MtObjective, fit: FitResult, block: str = "both") -> SandwichCovariance:
    """A_n^{-1} B_n A_n^{-1} / n at the fitted coefficients.

    A_n is the empirical Hessian of the unpenalized loss and B_n the mean
    outer product of the per-observation scores. ``block`` selects "full",
    "active" (intercept plus nonzero slopes) or "both".
    """
    if block not in ("full", "active", "both"):
        raise ValueError("block must be 'full', 'active' or 'both'")
    if not fit.converged:
        raise ValueError("sandwich covariance needs a converged fit")
    beta = fit.beta
    A = mt_hessian(obj, beta)
    S = observation_scores(obj, beta)
    B = S.T @ S / obj.n
    act = np.concatenate([[0], np.flatnonzero(beta[1:]) + 1])
    full = _sandwich(A, B, obj.n, "full") if block in ("full", "both") else None
    sub = None
    if block in ("active", "both"):
        sub = _sandwich(A[np.ix_(act, act)], B[np.ix_(act, act)], obj.n, "active-set")
    return SandwichCovariance(A, B, full, act, sub)


@dataclass
class OutlierReport:
    B: int
    q1: float
    q2: float
    residuals: np.ndarray
    flags: np.ndarray

    @property
    def count(self) -> int:
        return int(self.flags.sum())

    @property
    def outliers(self) -> np.ndarray:
        return np.flatnonzero(self.flags)


def _fitted_mean(X, beta):
    eta = np.asarray(X, float) @ np.asarray(beta, float)
    if np.any(eta > ETA_CLAMP):
        warnings.warn(f"linear predictor above {ETA_CLAMP:g} clamped", RuntimeWarning, stacklevel=3)
        eta = np.minimum(eta, ETA_CLAMP)
    return np.exp(eta)


def _poisson_draw(rng, mu):
    # numpy's sampler rejects means near 1e19 and above; the normal
    # approximation is exact to rounding there
    big = mu > POISSON_NORMAL
    if not np.any(big):
        return rng.poisson(mu).astype(float)
    out = np.empty(mu.shape)
    out[~big] = rng.poisson(mu[~big])
    z = rng.standard_normal(int(big.sum()))
    out[big] = np.maximum(np.round(mu[big] + np.sqrt(mu[big]) * z), 0.0)
    return out


def detect_outliers(X, y, beta, B: int = 100_000, seed: int = 0) -> OutlierReport:
    """Flag rows whose deviance residual falls outside the range of B
    parametric-bootstrap residuals.

    Each draw picks a row i uniformly, simulates y ~ Poisson(mu_i) with
    mu_i = exp(x_i' beta) and records its deviance residual at mu_i.
    B below 1000 gives a crude range and triggers a warning.
    """
    if B < 1:
        raise ValueError("B must be at least 1")
    if B < 1000:
        warnings.warn("fewer than 1000 bootstrap draws", RuntimeWarning, stacklevel=2)
    y = np.asarray(y, dtype=float)
    mu = _fitted_mean(X, beta)
    n = mu.shape[0]
    blocks = -(-B // BLOCK)
    streams = np.random.SeedSequence(int(seed)).spawn(blocks)
    lo, hi = np.inf, -np.inf
    for b, ss in enumerate(streams):
        m = min(BLOCK, B - b * BLOCK)
        rng = np.random.default_rng(ss)
        idx = rng.integers(0, n, size=m)
        ystar = _poisson_draw(rng, mu[idx])
        d = poisson_deviance_residual(ystar, mu[idx])
        lo, hi = min(lo, float(d.min())), max(hi, float(d.max()))
    res = np.atleast_1d(poisson_deviance_residual(y, mu))
    flags = (res < lo) | (res > hi)
    return OutlierReport(int(B), lo, hi, res, flags)


@dataclass
class AbpBound:
    """Lower bound eps* = c / (1 + c) with its Monte Carlo standard error."""

    value: float
    se: float
    c: float
    c_se: float
    n_draws: int


def _expected_rho(rho: RhoFunction, mu, shift):
    """E rho(sqrt(Y) - shift_i), Y ~ Poisson(mu_i), by truncated sums."""
    mu = np.asarray(mu, float)
    sd = np.sqrt(mu)
    lo = np.maximum(np.floor(mu - 12.0 * sd - 10.0), 0.0)
    width = int(np.ceil(np.max(mu + 12.0 * sd + 10.0 - lo))) + 1
    y = lo[:, None] + np.arange(width)[None, :]
    logp = y * np.log(np.maximum(mu, 1e-300))[:, None] - mu[:, None] - special.gammaln(y + 1.0)
    p = np.exp(logp)
    return np.sum(rho.rho(np.sqrt(y) - np.asarray(shift, float)[:, None]) * p, axis=1)


def abp_lower_bound(sampler, beta_star, rho: RhoFunction | None = None, n_draws: int = 100_000,
                    seed: int = 0, chunk: int = 2_000, cells: int = 4_000_000) -> AbpBound:
    """Asymptotic breakdown-point lower bound for a Poisson MT-estimator.

    ``sampler(rng, size)`` returns covariate rows (leading ones) drawn from
    the design distribution; alternatively pass an array of rows, which is
    then used as the design distribution itself. With m(0) = 0 and
    m(inf) = inf the bound is c / (1 + c) where
    c = E rho(sqrt(y)) - E rho(sqrt(y) - m(exp(x' beta*))). A nonpositive c
    yields 0.
    """
    rho = rho or RhoFunction()
    if not rho.bounded:
        raise ValueError("the breakdown bound needs a bounded rho-function")
    table = cached_table(rho)
    beta_star = np.asarray(beta_star, float)
    if callable(sampler):
        streams = np.random.SeedSequence(int(seed)).spawn(-(-n_draws // BLOCK))
        X = np.vstack([sampler(np.random.default_rng(ss), min(BLOCK, n_draws - i * BLOCK))
                       for i, ss in enumerate(streams)])
    else:
        X = np.asarray(sampler, float)
    mu = _fitted_mean(X, beta_star)
    eta = np.log(np.maximum(mu, 1e-300))
    s = table(eta)
    # beyond the tabulated range linear extrapolation of s is too crude here
    for i in np.flatnonzero(eta > table.eta[-1]):
        s[i] = m_value(mu[i], rho)
    d = np.empty(mu.shape[0])
    # sorted means keep the truncated supports of a block of similar width
    order = np.argsort(mu, kind="stable")
    i = 0
    while i < order.size:
        width = 24.0 * np.sqrt(mu[order[min(i + chunk, order.size) - 1]]) + 22.0
        m = int(max(1, min(chunk, cells // width)))
        sl = order[i:i + m]
        d[sl] = _expected_rho(rho, mu[sl], np.zeros(sl.size)) - _expected_rho(rho, mu[sl], s[sl])
        i += m
    c = float(d.mean())
    c_se = float(d.std(ddof=1) / np.sqrt(d.size)) if d.size > 1 else 0.0
    if c <= 0.0:
        return AbpBound(0.0, 0.0, c, c_se, int(d.size))
    return AbpBound(c / (1.0 + c), c_se / (1.0 + c) ** 2, c, c_se, int(d.size))
