"""Regularization paths, effective degrees of freedom, information criteria
and robust K-fold cross-validation."""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .families import DegenerateInput
from .init import InitConfig, InitResult, robust_start
from .penalties import PenaltySpec
from .robust_loss import MtObjective
from .solver import (FitResult, PoissonMlObjective, SolverConfig, fit_ml, irwls_fit,
                     linearize)

FLAVORS = ("aic", "bic", "ebic")
# variance of sqrt(Y) that the transformation stabilizes to
TRANSFORM_VARIANCE = 0.25


class ConfigurationError(ValueError):
    """Invalid combination of selection settings."""


def complexity(flavor: str, n: int, p: int | None = None, gamma: float = 0.5) -> float:
    """C(n, p): 2 for AIC, log n for BIC, log n + gamma log p for EBIC."""
    if flavor == "aic":
        return 2.0
    if flavor == "bic":
        return math.log(n)
    if flavor == "ebic":
        if not 0.0 <= gamma <= 1.0:
            raise ValueError("EBIC gamma must lie in [0, 1]")
        if p is None or p < 1:
            raise ValueError("EBIC needs the number of slopes p >= 1")
        return math.log(n) + gamma * math.log(p)
    raise ValueError(f"unknown criterion {flavor!r}; expected one of {FLAVORS}")


def ric(loss: float, df: float, n: int, flavor: str = "bic", p: int | None = None,
        gamma: float = 0.5) -> float:
    """Robust information criterion loss + C(n, p) * df."""
    return float(loss) + complexity(flavor, n, p, gamma) * float(df)


def hat_trace(XA, W, ridge) -> float:
    """tr(H) for H = sqrt(W) XA (XA' W XA + diag(ridge))^-1 XA' sqrt(W).

    ``ridge`` is a scalar or per-column vector added to the diagonal.
    """
    XA = np.asarray(XA, dtype=float)
    W = np.asarray(W, dtype=float)
    if np.any(W < 0):
        raise ValueError("weights must be nonnegative")
    G = XA.T @ (XA * W[:, None])
    D = np.broadcast_to(np.asarray(ridge, dtype=float), (XA.shape[1],))
    M = G + np.diag(D)
    try:
        if np.linalg.cond(M) > 1e12:
            raise np.linalg.LinAlgError
        return float(np.trace(np.linalg.solve(M, G)))
    except np.linalg.LinAlgError:
        warnings.warn("singular equivalent-projection system; using a pseudo-inverse",
                      RuntimeWarning, stacklevel=2)
        return float(np.trace(np.linalg.pinv(M) @ G))


def _active_columns(beta) -> np.ndarray:
    return np.concatenate([[0], np.flatnonzero(np.asarray(beta)[1:] != 0.0) + 1])


def _df_from_weights(X, beta, W, spec: PenaltySpec) -> float:
    A = _active_columns(beta)
    if not spec.is_elastic_net:
        # the H formula is specific to elastic-net penalties
        return float(A.size)
    n = X.shape[0]
    ridge = np.full(A.size, n * spec.lam * (1.0 - spec.alpha))
    if not spec.penalize_intercept:
        ridge[0] = 0.0
    return hat_trace(X[:, A], W, ridge)


def degrees_of_freedom(fit: FitResult, obj: MtObjective) -> float:
    """Effective degrees of freedom tr(H) of the converged weighted ridge system.

    W_ii = s'(eta_i)^2 w*_i; the intercept always belongs to the active
    columns and carries no ridge term. The ridge term is n lam (1 - alpha)
    because the inner least-squares problem is scaled by 1/(2n).
    """
    spec = fit.penalty or obj.penalty or PenaltySpec("lasso", 0.0)
    L = linearize(obj, fit.beta)
    return _df_from_weights(obj.X, fit.beta, L.s1**2 * L.w, spec)


def lambda_max(obj: MtObjective, alpha: float, beta=None) -> tuple[float, np.ndarray]:
    """Smallest lam whose first coordinate-descent sweep keeps every slope at 0.

    The inner problem is linearized at ``beta`` (by default the intercept-only
    MT fit); slopes are removed from the working response and the intercept
    refitted before the scores are taken. Returns the value and ``beta``.
    """
    if beta is None:
        beta = intercept_only_fit(obj)
    beta = np.asarray(beta, dtype=float)
    L = linearize(obj, beta)
    if obj.n_coef < 2 or not np.any(L.V[:, 1:]):
        raise DegenerateInput("all working regressors vanish; cannot size the lambda grid")
    ytil = L.z + L.V @ beta
    v0 = L.V[:, 0]
    b0 = float(v0 @ ytil / (v0 @ v0)) if np.any(v0) else 0.0
    g = np.abs(L.V[:, 1:].T @ (ytil - v0 * b0)) / obj.n
    return float(np.max(g) / max(alpha, 1e-3)), beta


def reference_lambda(obj: MtObjective, spec: PenaltySpec | None = None) -> float:
    """Penalty level used for the robust initial fit of a path.

    Universal threshold sigma sqrt(2 log p / n) on the variance-stabilized
    scale (sigma^2 = 1/4 for sqrt(y), inflated by the square-loss weight 2),
    times the median root-mean-square working regressor of the
    intercept-only least-squares fit.
    """
    from .init import lst_objective, lst_start

    lo = lst_objective(obj.X, obj.y, None)
    L = linearize(lo, lst_start(lo))
    p = max(obj.n_coef - 1, 2)
    rms = np.sqrt(np.mean(L.V[:, 1:] ** 2, axis=0)) if obj.n_coef > 1 else np.ones(1)
    sigma = math.sqrt(TRANSFORM_VARIANCE * 2.0)
    return float(sigma * math.sqrt(2.0 * math.log(p) / obj.n) * np.median(rms))


def intercept_only_fit(obj: MtObjective) -> np.ndarray:
    """Global minimizer over the intercept with all slopes at zero.

    A grid scan over eta guards against local minima of the bounded loss
    before the IRWLS refinement.
    """
    X1 = obj.X[:, :1]
    sub = MtObjective(X1, obj.y, obj.table, obj.rho, None)
    top = math.log(float(np.max(obj.y)) + 1.0) + 1.0
    grid = np.linspace(-6.0, max(top, 0.0), 241)
    vals = [sub.loss(np.array([g])) for g in grid]
    b = np.array([grid[int(np.argmin(vals))]])
    b = irwls_fit(sub, b).beta
    out = np.zeros(obj.n_coef)
    out[0] = b[0]
    return out


def lambda_grid(obj: MtObjective, spec: PenaltySpec, n_points: int = 50, ratio: float = 1e-3,
                lam_max: float | None = None, start=None) -> np.ndarray:
    """Descending geometric grid from lam_max to lam_max * ratio.

    Without ``lam_max`` the top is the larger of the lambda_max values at the
    linearizations of ``start`` (the robust initial fit) and of the
    intercept-only fit.
    """
    if n_points < 2:
        raise ValueError("n_points must be at least 2")
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie in (0, 1)")
    if lam_max is None:
        lam_max = lambda_max(obj, spec.l1_ratio)[0]
        if start is not None:
            lam_max = max(lam_max, lambda_max(obj, spec.l1_ratio, start)[0])
    return lam_max * ratio ** (np.arange(n_points) / (n_points - 1))


@dataclass
class PathResult:
    """Fits along a descending lam grid with their df and criteria."""

    lambdas: np.ndarray
    fits: list
    df: np.ndarray
    ric: dict
    selected: dict
    init: InitResult | None = None
    starts: list = field(default_factory=list)
    settings: dict = field(default_factory=dict)
    mid_init: InitResult | None = None

    def best(self, flavor: str = "bic") -> FitResult:
        return self.fits[self.selected[flavor]]

    @property
    def sizes(self) -> np.ndarray:
        return np.array([f.size for f in self.fits])


def fit_scale(obj: MtObjective, scale: str) -> float:
    """Multiplier turning a mean loss into the goodness-of-fit term.

    "mean" keeps the per-observation loss, "sum" multiplies by n, and
    "deviance" divides the summed loss by psi'(0) sigma^2 / 2 with
    sigma^2 = 1/4 the stabilized variance of sqrt(y); for the square loss
    this is the residual sum of squares over sigma^2.
    """
    if scale == "mean":
        return 1.0
    if scale == "sum":
        return float(obj.n)
    if scale == "deviance":
        return 2.0 * obj.n / (obj.rho.psi_prime_zero * TRANSFORM_VARIANCE)
    raise ConfigurationError(f"unknown criterion scale {scale!r}")


def _criteria(losses, dfs, n, p, factor, gamma):
    base = np.asarray(losses) * factor
    out = {}
    for fl in FLAVORS:
        if fl == "ebic" and p < 1:
            continue
        c = complexity(fl, n, p, gamma)
        out[fl] = base + c * np.asarray(dfs)
    return out


def _select(values) -> int:
    # lambdas descend, so the first minimum is the largest lam
    v = np.where(np.isfinite(values), values, np.inf)
    return int(np.argmin(v))


def fit_path(obj: MtObjective, spec: PenaltySpec, lambdas=None, n_points: int = 50,
             ratio: float = 1e-3, init: InitResult | None = None,
             init_cfg: InitConfig = InitConfig(), cfg: SolverConfig = SolverConfig(),
             ric_loss: str = "unpenalized", ric_scale: str = "deviance",
             gamma: float = 0.5, mid_start: bool = True) -> PathResult:
    """Penalized MT fits along a lam grid, warm-started down the path.

    At every lam the fit started from the previous solution competes with
    fits started from two robust initial estimates, one at
    :func:`reference_lambda` and one at the middle of the grid; the lower
    penalized objective wins. A heavy penalty can favour a contaminated
    basin that the lighter end of the path should leave, and warm starts
    alone never do. ``mid_start=False`` keeps only the first start.

    ``ric_loss`` picks the goodness-of-fit term of the criteria ("penalized"
    uses the penalized objective) and ``ric_scale`` its scaling, see
    :func:`fit_scale`.
    """
    if ric_loss not in ("penalized", "unpenalized"):
        raise ConfigurationError("ric_loss must be 'penalized' or 'unpenalized'")
    factor = fit_scale(obj, ric_scale)
    if init is None:
        ref = obj.with_penalty(spec.with_lam(reference_lambda(obj, spec)))
        init = robust_start(ref, init_cfg)
    if lambdas is None:
        lambdas = lambda_grid(obj, spec, n_points, ratio, start=init.beta)
    lambdas = np.asarray(lambdas, dtype=float)
    if lambdas.ndim != 1 or lambdas.size == 0 or np.any(np.diff(lambdas) >= 0):
        raise ConfigurationError("lambda grid must be strictly descending")
    anchors = [("init", init.beta)]
    mid_init = None
    if mid_start and lambdas.size > 2:
        mid = obj.with_penalty(spec.with_lam(float(lambdas[lambdas.size // 2])))
        mid_init = robust_start(mid, init_cfg)
        if not np.array_equal(mid_init.beta, init.beta):
            anchors.append(("mid", mid_init.beta))
    fits, starts = [], []
    prev = None
    for lam in lambdas:
        o = obj.with_penalty(spec.with_lam(float(lam)))
        best, origin = None, None
        for name, b in anchors:
            fit = irwls_fit(o, b, cfg)
            if best is None or fit.objective < best.objective:
                best, origin = fit, name
        if prev is not None:
            warm = irwls_fit(o, prev.beta, cfg)
            if warm.objective <= best.objective:
                best, origin = warm, "warm"
        fits.append(best)
        starts.append(origin)
        prev = best
    dfs = np.array([degrees_of_freedom(f, obj.with_penalty(f.penalty)) for f in fits])
    losses = np.array([f.objective if ric_loss == "penalized" else f.loss for f in fits])
    crit = _criteria(losses, dfs, obj.n, obj.n_coef - 1, factor, gamma)
    sel = {k: _select(v) for k, v in crit.items()}
    return PathResult(lambdas, fits, dfs, crit, sel, init, starts,
                      dict(ric_loss=ric_loss, ric_scale=ric_scale, gamma=gamma), mid_init)


def ml_lambda_max(X, y, alpha: float) -> float:
    y = np.asarray(y, dtype=float)
    g = np.abs(X[:, 1:].T @ (y - y.mean())) / X.shape[0]
    return float(np.max(g) / max(alpha, 1e-3))


def fit_ml_path(X, y, spec: PenaltySpec, lambdas=None, n_points: int = 50, ratio: float = 1e-3,
                cfg: SolverConfig = SolverConfig(), gamma: float = 0.5) -> PathResult:
    """Penalized Poisson maximum-likelihood path; criteria use the deviance."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if lambdas is None:
        lmax = ml_lambda_max(X, y, spec.l1_ratio)
        lambdas = lmax * ratio ** (np.arange(n_points) / (n_points - 1))
    lambdas = np.asarray(lambdas, dtype=float)
    obj = PoissonMlObjective(X, y)
    fits = []
    prev = None
    for lam in lambdas:
        fit = fit_ml(X, y, spec.with_lam(float(lam)), None if prev is None else prev.beta, cfg)
        fits.append(fit)
        prev = fit
    dfs = np.array([_df_from_weights(X, f.beta, f.weights, f.penalty) for f in fits])
    dev = np.array([obj.deviance(f.beta) for f in fits])
    crit = {}
    for fl in FLAVORS:
        if fl == "ebic" and X.shape[1] < 2:
            continue
        crit[fl] = dev + complexity(fl, X.shape[0], X.shape[1] - 1, gamma) * dfs
    sel = {k: _select(v) for k, v in crit.items()}
    return PathResult(lambdas, fits, dfs, crit, sel, None, ["warm"] * len(fits),
                      dict(ric_loss="deviance", ric_scale="sum", gamma=gamma))


@dataclass
class RcvResult:
    lambdas: np.ndarray
    alphas: list
    values: np.ndarray
    folds: np.ndarray
    selected: tuple

    @property
    def best_lambda(self) -> float:
        return float(self.lambdas[self.selected[1]])

    @property
    def best_alpha(self):
        return self.alphas[self.selected[0]]


def make_folds(n: int, K: int, seed) -> np.ndarray:
    """Fold label per row from a seeded permutation; sizes differ by at most 1."""
    if K < 2:
        raise ConfigurationError("K must be at least 2")
    if K > n or n - int(np.ceil(n / K)) < 2:
        raise ConfigurationError("every training set needs at least 2 observations")
    perm = np.random.default_rng(seed).permutation(n)
    labels = np.empty(n, dtype=int)
    labels[perm] = np.arange(n) % K
    return labels


def rcv(obj: MtObjective, spec: PenaltySpec, lambdas, K: int = 5, seed=0, alphas=None,
        literal: bool = False, init_cfg: InitConfig = InitConfig(),
        cfg: SolverConfig = SolverConfig(), threads: int = 1) -> RcvResult:
    """Robust K-fold cross-validation over (alpha, lam).

    RCV = (1/n) sum_j c_j Lhat^(j), where Lhat^(j) is the loss on fold j of
    the fit computed without it. The held-out loss excludes the penalty
    unless ``literal`` is set. Folds run on ``threads`` workers; the sum is
    taken in fold order, so the result does not depend on scheduling.
    """
    if seed is None:
        raise ConfigurationError("cross-validation needs an explicit seed")
    lambdas = np.asarray(lambdas, dtype=float)
    alphas = [spec.alpha] if alphas is None else list(alphas)
    labels = make_folds(obj.n, K, seed)

    def fold(task):
        _, a, j = task
        sp = PenaltySpec(spec.kind, spec.lam, a, spec.penalize_intercept)
        test = labels == j
        train = obj.subset(np.flatnonzero(~test))
        held = obj.subset(np.flatnonzero(test))
        path = fit_path(train, sp, lambdas, init_cfg=init_cfg, cfg=cfg)
        out = np.empty(lambdas.size)
        for li, fit in enumerate(path.fits):
            loss = held.loss(fit.beta)
            if literal:
                loss += held.with_penalty(fit.penalty).penalty_value(fit.beta)
            out[li] = test.sum() * loss / obj.n
        return out

    tasks = [(ai, a, j) for ai, a in enumerate(alphas) for j in range(K)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(fold, tasks))
    else:
        parts = [fold(t) for t in tasks]
    values = np.zeros((len(alphas), lambdas.size))
    for (ai, _, _), v in zip(tasks, parts):
        values[ai] += v
    flat = np.where(np.isfinite(values), values, np.inf)
    # lambdas descend: the first minimum in each row is the largest lam
    idx = np.unravel_index(int(np.argmin(flat)), flat.shape)
    return RcvResult(lambdas, alphas, values, labels, (int(idx[0]), int(idx[1])))
