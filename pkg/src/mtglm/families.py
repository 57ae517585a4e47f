"""Poisson family primitives and the tabulated m-function.

For a rho-function the m-function is

    m(mu) = argmin_gamma E_mu[ rho(sqrt(Y) - gamma) ],   Y ~ Poisson(mu),

and the solver works with s(eta) = m(exp(eta)) and its first two
derivatives, tabulated once on a uniform eta grid.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special, stats

from ._kernels import hermite_eval
from .robust_loss import RhoFunction

TAIL_MASS = 1e-12
ETA_RANGE = (-12.0, 12.0)
GRID_SIZE = 2001


class DomainError(ValueError):
    """Argument outside the domain of a family primitive."""


class DegenerateInput(ValueError):
    """Input too small or too degenerate for the requested computation."""


class AssumptionViolation(RuntimeError):
    """A tabulated quantity breaks a model assumption (e.g. m not increasing)."""


class PoissonFamily:
    """Poisson GLM: log link, square-root transform, a(phi) = 1."""

    name = "poisson"

    @staticmethod
    def link(mu):
        return np.log(mu)

    @staticmethod
    def inverse_link(eta):
        return np.exp(eta)

    @staticmethod
    def transform(y):
        return np.sqrt(y)

    @staticmethod
    def dispersion(phi=1.0):
        return 1.0

    @staticmethod
    def pmf(y, mu):
        return stats.poisson.pmf(y, mu)

    @staticmethod
    def cdf(y, mu):
        return stats.poisson.cdf(y, mu)

    @staticmethod
    def quantile(prob, mu):
        return stats.poisson.ppf(prob, mu)

    @staticmethod
    def sample(mu, rng):
        return rng.poisson(mu)

    @staticmethod
    def mean_transform(mu):
        """m_LS(mu) = E_mu[sqrt(Y)]."""
        mu = float(mu)
        if mu < 0:
            raise DomainError("mu must be nonnegative")
        if mu == 0:
            return 0.0
        y, p = _support(mu)
        return float(np.sum(np.sqrt(y) * p))

    @staticmethod
    def var_transform(mu):
        """Var_mu(sqrt(Y))."""
        mu = float(mu)
        if mu == 0:
            return 0.0
        y, p = _support(mu)
        m = np.sum(np.sqrt(y) * p)
        return float(np.sum(y * p) - m * m)

    def deviance_residual(self, y, mu):
        return poisson_deviance_residual(y, mu)


POISSON = PoissonFamily()


def _support(mu, tail=TAIL_MASS):
    """Integer support carrying all but ``tail`` of the Poisson(mu) mass."""
    hi = int(stats.poisson.ppf(1.0 - tail, mu)) + 1
    lo = int(stats.poisson.ppf(tail * 1e-3, mu)) if mu > 50 else 0
    y = np.arange(max(lo, 0), hi + 1, dtype=float)
    logp = y * np.log(mu) - mu - special.gammaln(y + 1.0)
    return y, np.exp(logp)


def _solve_m(mu, rho: RhoFunction):
    """Minimizer of E rho(sqrt(Y) - gamma) plus the support used."""
    y, p = _support(mu)
    sy = np.sqrt(y)
    if rho.kind == "square":
        return float(np.sum(sy * p)), y, p

    def objective(g):
        return np.sum(rho.rho(sy - g) * p)

    def foc(g):
        return np.sum(rho.psi(sy - g) * p)

    lo = np.sqrt(stats.poisson.ppf(1e-6, mu))
    hi = np.sqrt(stats.poisson.ppf(1.0 - 1e-6, mu))
    if hi <= lo:
        hi = lo + 1.0
    # coarse scan locates the global minimum among possible local ones,
    # golden-section narrows it, the first-order condition polishes it
    grid = np.linspace(lo, hi, 65)
    vals = np.array([objective(g) for g in grid])
    i = int(np.argmin(vals))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    res = optimize.minimize_scalar(objective, bracket=None, bounds=(a, b), method="bounded",
                                   options={"xatol": 1e-10})
    g0 = float(res.x)
    step = max(b - a, 1e-3)
    left, right = g0 - step, g0 + step
    for _ in range(60):
        if foc(left) > 0 and foc(right) < 0:
            break
        left -= step
        right += step
        step *= 2
    else:
        raise DegenerateInput(f"could not bracket the m-function root at mu={mu}")
    if foc(left) <= 0 or foc(right) >= 0:
        raise DegenerateInput(f"could not bracket the m-function root at mu={mu}")
    # narrow the bracket around the coarse minimizer without leaving its basin
    fl, fr = foc(max(g0 - 1e-6, left)), foc(min(g0 + 1e-6, right))
    if fl > 0 and fr < 0:
        left, right = max(g0 - 1e-6, left), min(g0 + 1e-6, right)
    g = optimize.brentq(foc, left, right, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    return float(g), y, p


def m_value(mu, rho: RhoFunction) -> float:
    """m(mu) for the Poisson distribution and the given rho-function."""
    mu = float(mu)
    if not mu > 0 or not np.isfinite(mu):
        raise DomainError("mu must be positive and finite")
    return _solve_m(mu, rho)[0]


def m_derivatives(eta, rho: RhoFunction) -> tuple[float, float, float]:
    """s(eta) = m(exp(eta)) and its first two eta-derivatives.

    Derivatives come from implicit differentiation of the first-order
    condition G(gamma, eta) = sum_y psi(sqrt(y) - gamma) p(y; e^eta) = 0.
    """
    mu = float(np.exp(eta))
    g, y, p = _solve_m(mu, rho)
    u = np.sqrt(y) - g
    d = y - mu
    psi, psi1, psi2 = rho.psi(u), rho.psi_prime(u), rho.psi_second(u)
    G_g = -np.sum(psi1 * p)
    G_e = np.sum(psi * p * d)
    G_gg = np.sum(psi2 * p)
    G_ge = -np.sum(psi1 * p * d)
    G_ee = np.sum(psi * p * (d * d - mu))
    if G_g == 0:
        raise AssumptionViolation(f"E psi'(sqrt(Y) - m) vanishes at mu={mu}")
    s1 = -G_e / G_g
    s2 = -(G_ee + 2.0 * G_ge * s1 + G_gg * s1 * s1) / G_g
    return g, float(s1), float(s2)


@dataclass(frozen=True)
class MFunctionTable:
    """s(eta) = m(exp(eta)) with s', s'' on a uniform eta grid.

    Between nodes a quintic Hermite interpolant built from (s, s', s'') is
    used, so s', s'' returned by :meth:`evaluate` are the exact derivatives of
    the interpolated s. Outside the grid s is extended linearly (floored at 0).
    """

    eta: np.ndarray
    values: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    rho: RhoFunction

    @property
    def step(self) -> float:
        return float(self.eta[1] - self.eta[0])

    def evaluate(self, eta):
        eta = np.ascontiguousarray(np.atleast_1d(eta), dtype=float)
        f = np.empty_like(eta)
        f1 = np.empty_like(eta)
        f2 = np.empty_like(eta)
        hermite_eval(eta.ravel(), float(self.eta[0]), self.step, self.values, self.d1, self.d2,
                     f.ravel(), f1.ravel(), f2.ravel())
        return f, f1, f2

    def __call__(self, eta):
        return self.evaluate(eta)[0]

    def m(self, mu):
        return self(np.log(mu))

    def inverse(self, target):
        """eta with s(eta) = target (target > 0), by bisection on the table."""
        target = float(target)
        if target <= 0:
            raise DomainError("m-function values are positive")
        lo, hi = -60.0, 60.0
        f = lambda e: float(self(np.array([e]))[0]) - target
        return optimize.brentq(f, lo, hi, xtol=1e-14)


def build_m_table(rho: RhoFunction, eta_range=ETA_RANGE, grid_size: int = GRID_SIZE,
                  family: PoissonFamily = POISSON) -> MFunctionTable:
    """Tabulate s(eta) = m(exp(eta)) and its derivatives for ``rho``."""
    lo, hi = eta_range
    if grid_size < 200:
        raise ValueError("grid_size must be at least 200")
    if lo > -10 or hi < 10:
        raise ValueError("eta_range must contain [-10, 10]")
    eta = np.linspace(lo, hi, grid_size)
    out = np.array([m_derivatives(e, rho) for e in eta])
    values, d1, d2 = out[:, 0].copy(), out[:, 1].copy(), out[:, 2].copy()
    if np.any(np.diff(values) <= 0) or np.any(d1 <= 0):
        raise AssumptionViolation(
            "tabulated m-function is not strictly increasing; check the rho tuning constant"
        )
    return MFunctionTable(eta, values, d1, d2, rho)


@functools.lru_cache(maxsize=16)
def cached_table(rho: RhoFunction, eta_range=ETA_RANGE, grid_size: int = GRID_SIZE) -> MFunctionTable:
    """Shared immutable table per rho (tables are pure functions of rho)."""
    return build_m_table(rho, eta_range, grid_size)


def poisson_deviance_residual(y, mu):
    """sign(y - mu) sqrt(2 (y log(y/mu) - (y - mu))), with 2 mu under the root at y = 0."""
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if np.any(mu <= 0):
        raise DomainError("mu must be positive")
    ylogy = np.where(y > 0, y * np.log(np.where(y > 0, y, 1.0) / mu), 0.0)
    dev = 2.0 * (ylogy - (y - mu))
    out = np.sign(y - mu) * np.sqrt(np.maximum(dev, 0.0))
    return out if out.ndim else float(out)
