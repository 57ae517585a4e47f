"""Bounded rho-functions and the (penalized) MT objective."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .penalties import PenaltySpec, penalty_value

RHO_KINDS = ("quartic", "tukey", "square")
# sqrt(Y) has variance close to 1/4, so k = 2 rejects residuals beyond about
# four standard deviations; smaller k (1.6 was tried) loses noticeable
# efficiency on clean data because m(mu) becomes steep near mu = 1
DEFAULT_K = 2.0


@dataclass(frozen=True)
class RhoFunction:
    """rho-function of a given ``kind`` with tuning constant ``k``.

    quartic: 1 - (1 - (u/k)^2)^4 on |u| <= k, 1 outside (three bounded
    derivatives); tukey: the bisquare 1 - (1 - (u/k)^2)^3; square: u^2, which
    gives the least-squares-on-transformation estimator.
    """

    kind: str = "quartic"
    k: float = DEFAULT_K

    def __post_init__(self):
        if self.kind not in RHO_KINDS:
            raise ValueError(f"unknown rho kind {self.kind!r}; expected one of {RHO_KINDS}")
        if not self.k > 0:
            raise ValueError("tuning constant k must be positive")

    @classmethod
    def square(cls) -> "RhoFunction":
        return cls("square", 1.0)

    @property
    def bounded(self) -> bool:
        return self.kind != "square"

    def rho(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "square":
            return u * u
        v = np.minimum((u / self.k) ** 2, 1.0)
        power = 4 if self.kind == "quartic" else 3
        return 1.0 - (1.0 - v) ** power

    def psi(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "square":
            return 2.0 * u
        k2 = self.k**2
        v = np.minimum(u * u / k2, 1.0)
        if self.kind == "quartic":
            return 8.0 * u / k2 * (1.0 - v) ** 3
        return 6.0 * u / k2 * (1.0 - v) ** 2

    def psi_prime(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "square":
            return np.full_like(u, 2.0)
        k2 = self.k**2
        v = u * u / k2
        inside = v < 1.0
        v = np.minimum(v, 1.0)
        if self.kind == "quartic":
            out = 8.0 / k2 * (1.0 - v) ** 2 * (1.0 - 7.0 * v)
        else:
            out = 6.0 / k2 * (1.0 - v) * (1.0 - 5.0 * v)
        return np.where(inside, out, 0.0)

    def psi_second(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "square":
            return np.zeros_like(u)
        k2 = self.k**2
        v = u * u / k2
        inside = v < 1.0
        v = np.minimum(v, 1.0)
        if self.kind == "quartic":
            out = 16.0 * u / k2**2 * (1.0 - v) * (21.0 * v - 9.0)
        else:
            out = 12.0 * u / k2**2 * (10.0 * v - 6.0)
        return np.where(inside, out, 0.0)

    def weight(self, u):
        """psi(u)/u, continuously extended by psi'(0) at u = 0."""
        u = np.asarray(u, dtype=float)
        if self.kind == "square":
            return np.full_like(u, 2.0)
        k2 = self.k**2
        v = np.minimum(u * u / k2, 1.0)
        if self.kind == "quartic":
            return 8.0 / k2 * (1.0 - v) ** 3
        return 6.0 / k2 * (1.0 - v) ** 2

    @property
    def psi_prime_zero(self) -> float:
        return float(self.psi_prime(np.array(0.0)))


@dataclass
class MtObjective:
    """Data, m-function table, rho and penalty defining the MT objective.

    ``X`` is the n x (p+1) design whose first column is all ones; ``y`` holds
    the counts. ``table`` is an :class:`~mtglm.families.MFunctionTable` built
    for the same ``rho``.
    """

    X: np.ndarray
    y: np.ndarray
    table: object
    rho: RhoFunction
    penalty: PenaltySpec | None = None
    ty: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X must be n x (p+1) with one row per response")
        if not np.all(self.X[:, 0] == 1.0):
            raise ValueError("first design column must be all ones")
        if np.any(self.y < 0):
            raise ValueError("responses must be nonnegative counts")
        self.ty = np.sqrt(self.y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def n_coef(self) -> int:
        return self.X.shape[1]

    def with_penalty(self, penalty):
        return MtObjective(self.X, self.y, self.table, self.rho, penalty)

    def subset(self, rows):
        return MtObjective(self.X[rows], self.y[rows], self.table, self.rho, self.penalty)

    def _check(self, beta):
        beta = np.asarray(beta, dtype=float)
        if beta.shape != (self.n_coef,):
            raise ValueError(f"beta must have length {self.n_coef}")
        if not np.all(np.isfinite(beta)):
            raise ValueError("beta must be finite")
        return beta

    def residuals(self, beta):
        """Returns (r, eta, s, s', s'') with r = t(y) - s(eta)."""
        beta = self._check(beta)
        eta = self.X @ beta
        s, s1, s2 = self.table.evaluate(eta)
        return self.ty - s, eta, s, s1, s2

    def loss(self, beta) -> float:
        r = self.residuals(beta)[0]
        return float(np.mean(self.rho.rho(r)))

    def penalty_value(self, beta) -> float:
        if self.penalty is None:
            return 0.0
        return penalty_value(self.penalty, beta)

    def value(self, beta) -> float:
        return self.loss(beta) + self.penalty_value(beta)


def mt_loss(obj: MtObjective, beta, penalized: bool = True) -> float:
    """(1/n) sum rho(sqrt(y_i) - s(x_i' beta)), plus the penalty if attached."""
    if penalized:
        return obj.value(beta)
    return obj.loss(beta)


def mt_gradient(obj: MtObjective, beta) -> np.ndarray:
    """Gradient of the unpenalized MT loss: -(1/n) sum psi(r_i) s'(eta_i) x_i."""
    r, _, _, s1, _ = obj.residuals(beta)
    return -(obj.X.T @ (obj.rho.psi(r) * s1)) / obj.n


def mt_hessian(obj: MtObjective, beta) -> np.ndarray:
    """Hessian of the unpenalized MT loss.

    Each observation contributes [psi'(r) s'(eta)^2 - psi(r) s''(eta)] x x'.
    """
    r, _, _, s1, s2 = obj.residuals(beta)
    c = obj.rho.psi_prime(r) * s1**2 - obj.rho.psi(r) * s2
    H = (obj.X * c[:, None]).T @ obj.X / obj.n
    return 0.5 * (H + H.T)


def observation_scores(obj: MtObjective, beta) -> np.ndarray:
    """n x (p+1) matrix of per-observation gradients Psi(y_i, x_i, beta)."""
    r, _, _, s1, _ = obj.residuals(beta)
    return -obj.X * (obj.rho.psi(r) * s1)[:, None]
