"""Deterministic robust starting values from principal sensitivity components.

Stage 1 builds candidate fits by penalized least squares on the transformed
scale (LST) over data subsets chosen from the leading directions of the
leave-one-out sensitivity matrix, keeps the candidate with the smallest
penalized MT objective, and repeats after trimming implausible responses.
Stage 2 trims once more, restores rows that the refit deems plausible and
returns a final LST fit that serves as the IRWLS start.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, stats

from .families import DegenerateInput, cached_table
from .penalties import PenaltySpec
from .robust_loss import MtObjective, RhoFunction
from .solver import FitResult, SolverConfig, irwls_fit

LOO_CONFIG = SolverConfig(tol=1e-7, inner_tol=1e-9)


class InitializationFailure(RuntimeError):
    """No usable candidate could be produced."""


@dataclass(frozen=True)
class InitConfig:
    alpha_trim: float = 0.05
    q: int | None = None
    max_iter: int = 10
    tol: float = 1e-6

    def __post_init__(self):
        if not 0.0 < self.alpha_trim < 0.5:
            raise ValueError("alpha_trim must lie in (0, 0.5)")
        if self.q is not None and self.q < 1:
            raise ValueError("q must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")

    def n_components(self, n: int, p: int) -> int:
        q = min(n, p, 10) if self.q is None else min(self.q, n)
        return max(q, 1)


@dataclass
class SensitivityDecomposition:
    """Rows of ``R`` are the sensitivity vectors r_(j) = s(X b) - s(X b_(j)).

    ``components`` holds v_1..v_q as columns and ``scores`` the matching
    z_i = R v_i, whose entry j is the projection of r_(j) on v_i.
    """

    R: np.ndarray
    components: np.ndarray
    scores: np.ndarray
    explained: np.ndarray
    failed: list = field(default_factory=list)

    @property
    def q(self) -> int:
        return self.components.shape[1]


@dataclass
class InitResult:
    beta: np.ndarray
    stage1_beta: np.ndarray
    kept: np.ndarray
    n_candidates: list
    iterations: int
    warnings: list = field(default_factory=list)


def lst_objective(X, y, spec: PenaltySpec | None) -> MtObjective:
    rho = RhoFunction.square()
    return MtObjective(X, y, cached_table(rho), rho, spec)


def lst_start(obj: MtObjective) -> np.ndarray:
    """Intercept-only start matching mean sqrt(y) on the transformed scale."""
    beta = np.zeros(obj.n_coef)
    target = float(np.mean(obj.ty))
    beta[0] = obj.table.inverse(target) if target > 0 else float(obj.table.eta[0])
    return beta


def penalized_lst_fit(X, y, spec: PenaltySpec | None, subset=None, start=None,
                      cfg: SolverConfig = SolverConfig()) -> FitResult:
    """Square-loss fit on the transformed responses over ``subset`` rows."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if subset is not None:
        X, y = X[subset], y[subset]
    if y.shape[0] < 2:
        raise DegenerateInput("a least-squares fit needs at least 2 rows")
    obj = lst_objective(X, y, spec)
    if start is None:
        start = lst_start(obj)
    return irwls_fit(obj, start, cfg)


def _unit_sign(v):
    i = int(np.argmax(np.abs(v)))
    return -v if v[i] < 0 else v


def decompose(R: np.ndarray, q: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Top-q right singular vectors of R, scores R v and explained sums."""
    n = R.shape[1]
    q = min(q, n)
    G = R.T @ R
    vals, vecs = linalg.eigh(G, subset_by_index=[n - q, n - 1])
    order = np.argsort(-vals, kind="stable")
    V = np.column_stack([_unit_sign(vecs[:, i]) for i in order])
    return V, R @ V, np.maximum(vals[order], 0.0)


def sensitivity_components(X, y, spec, base_fit: FitResult, q: int,
                           cfg: SolverConfig = LOO_CONFIG) -> SensitivityDecomposition:
    """Leave-one-out LST refits, warm-started at ``base_fit``, and their SVD."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    table = cached_table(RhoFunction.square())
    fitted = table(X @ base_fit.beta)
    R = np.zeros((n, n))
    failed = []
    keep = np.ones(n, dtype=bool)
    for j in range(n):
        keep[j] = False
        fit = penalized_lst_fit(X, y, spec, keep, start=base_fit.beta, cfg=cfg)
        keep[j] = True
        if not fit.converged:
            failed.append(j)
            continue
        R[j] = fitted - table(X @ fit.beta)
    V, Z, explained = decompose(R, q)
    return SensitivityDecomposition(R, V, Z, explained, failed)


def candidate_subsets(scores: np.ndarray):
    """For each component, rows kept after dropping the smallest half, the
    largest half, and the largest-in-absolute-value half of its scores."""
    n = scores.shape[0]
    h = n // 2
    out = []
    for i in range(scores.shape[1]):
        z = scores[:, i]
        by_value = np.argsort(z, kind="stable")
        by_abs = np.argsort(np.abs(z), kind="stable")
        out.append(np.sort(by_value[h:]))
        out.append(np.sort(by_value[: n - h]))
        out.append(np.sort(by_abs[: n - h]))
    return out


def quantile_band(y, mu, alpha_trim):
    """Boolean mask of responses inside the central 1 - alpha_trim Poisson band."""
    mu = np.clip(mu, 1e-300, 1e300)
    lo = stats.poisson.ppf(alpha_trim / 2, mu)
    hi = stats.poisson.ppf(1.0 - alpha_trim / 2, mu)
    return (y >= lo) & (y <= hi)


def _mu(X, beta):
    return np.exp(np.clip(X @ beta, -700.0, 700.0))


def stage1(obj: MtObjective, cfg: InitConfig = InitConfig(), record: dict | None = None) -> np.ndarray:
    """Robust but possibly inefficient estimate; minimizes the penalized MT
    objective of ``obj`` over the candidate set of each iteration."""
    X, y, spec = obj.X, obj.y, obj.penalty
    n = obj.n
    q = cfg.n_components(n, obj.n_coef - 1)
    rows = np.arange(n)
    prev = None
    counts = []
    warnings = []
    best = None
    k = 0
    for k in range(1, cfg.max_iter + 1):
        if prev is not None:
            rows = np.flatnonzero(quantile_band(y, _mu(X, prev), cfg.alpha_trim))
            if rows.size < 2:
                break
        Xr, yr = X[rows], y[rows]
        base = penalized_lst_fit(Xr, yr, spec)
        cands = [base.beta]
        if prev is not None:
            cands.append(prev)
        if rows.size >= 4:
            dec = sensitivity_components(Xr, yr, spec, base, q)
            if dec.failed:
                warnings.append(f"iteration {k}: {len(dec.failed)} leave-one-out fits did not converge")
            for sub in candidate_subsets(dec.scores):
                fit = penalized_lst_fit(Xr, yr, spec, sub, start=base.beta)
                if np.all(np.isfinite(fit.beta)):
                    cands.append(fit.beta)
        values = []
        for b in cands:
            try:
                values.append(obj.value(b))
            except ValueError:
                values.append(np.inf)
        values = np.asarray(values)
        if not np.any(np.isfinite(values)):
            raise InitializationFailure("no finite candidate in the stage-1 set")
        counts.append(len(cands))
        best = cands[int(np.argmin(values))]
        if prev is not None and np.linalg.norm(best - prev) <= cfg.tol * (1.0 + np.linalg.norm(prev)):
            break
        prev = best
    if best is None:
        raise InitializationFailure("stage 1 produced no candidate")
    if record is not None:
        record.update(n_candidates=counts, iterations=k, warnings=warnings)
    return best


def stage2(obj: MtObjective, beta1, cfg: InitConfig = InitConfig(), record: dict | None = None) -> np.ndarray:
    """Trim, refit, restore plausible rows and refit; returns the final LST fit."""
    X, y, spec = obj.X, obj.y, obj.penalty
    beta1 = np.asarray(beta1, dtype=float)
    if not np.all(np.isfinite(beta1)):
        raise ValueError("stage-1 coefficients must be finite")
    keep = quantile_band(y, _mu(X, beta1), cfg.alpha_trim)
    if keep.sum() < 2:
        raise InitializationFailure("trimming removed (almost) every observation")
    beta2 = penalized_lst_fit(X, y, spec, np.flatnonzero(keep), start=beta1).beta
    restore = ~keep & quantile_band(y, _mu(X, beta2), cfg.alpha_trim)
    final = keep | restore
    fit = penalized_lst_fit(X, y, spec, np.flatnonzero(final), start=beta2)
    if record is not None:
        record.update(kept=np.flatnonzero(final))
    return fit.beta


def robust_start(obj: MtObjective, cfg: InitConfig = InitConfig()) -> InitResult:
    """Two-stage robust initialization for the penalized MT fit of ``obj``."""
    rec: dict = {}
    b1 = stage1(obj, cfg, rec)
    try:
        b2 = stage2(obj, b1, cfg, rec)
    except InitializationFailure as exc:
        # with a contaminated majority no row may be plausible under the
        # stage-1 fit; that fit is then the start
        rec["warnings"].append(f"stage 2 skipped: {exc}")
        b2, rec["kept"] = b1, np.arange(obj.n)
    return InitResult(b2, b1, rec["kept"], rec["n_candidates"], rec["iterations"], rec["warnings"])
