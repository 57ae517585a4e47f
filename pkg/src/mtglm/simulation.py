"""Monte Carlo harness for the AVY, AVY2 and AMR designs under contamination."""
from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .dataio import dumps, table_to_csv
from .families import cached_table
from .init import InitConfig
from .penalties import PenaltySpec
from .robust_loss import MtObjective, RhoFunction
from .selection import fit_ml_path, fit_path

DESIGNS = ("AVY", "AVY2", "AMR")
METHODS = ("MT-lasso", "MT-ridge", "MT-elastic-net", "ML-lasso", "ML-ridge")
_ALPHA = {"lasso": 1.0, "ridge": 0.0, "elastic-net": 0.5}
# lam_max is divided by max(alpha, 0.001), so a pure ridge grid needs more
# decades to reach weakly shrunk fits
_RATIO = {"lasso": 1e-3, "ridge": 1e-6, "elastic-net": 1e-3}


@dataclass(frozen=True)
class ScenarioConfig:
    design: str = "AVY"
    n: int = 100
    p: int = 10
    rho_corr: float = 0.5
    eps: float = 0.0
    y0: float = 0.0
    replications: int = 100
    seed: int = 0
    allow_large_p: bool = False

    def __post_init__(self):
        if self.design not in DESIGNS:
            raise ValueError(f"unknown design {self.design!r}; expected one of {DESIGNS}")
        if not 0.0 <= self.eps < 0.5:
            raise ValueError("contamination fraction must lie in [0, 0.5)")
        if self.y0 < 0:
            raise ValueError("y0 must be nonnegative")
        if self.n < 2 or self.replications < 1:
            raise ValueError("n >= 2 and replications >= 1 are required")
        need = 5 if self.design == "AMR" else 1
        if self.p < need:
            raise ValueError(f"design {self.design} needs p >= {need}")
        if self.design == "AMR" and self.p > 400 and not self.allow_large_p:
            raise ValueError("AMR with p > 400 requires allow_large_p=True")
        if not -1.0 < self.rho_corr < 1.0:
            raise ValueError("rho_corr must lie in (-1, 1)")

    @property
    def beta_star(self) -> np.ndarray:
        b = np.zeros(self.p + 1)
        if self.design == "AVY":
            b[1] = 1.0
        elif self.design == "AVY2":
            b[0], b[1] = 2.0, 1.0
        else:
            b[1], b[2], b[5] = 1.8, 1.0, 1.5
        return b

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.beta_star[1:]) + 1

    def replace(self, **kw) -> "ScenarioConfig":
        d = asdict(self)
        d.update(kw)
        return ScenarioConfig(**d)


def _ar1(p, r):
    idx = np.arange(p)
    return r ** np.abs(np.subtract.outer(idx, idx))


def replicate_seeds(master: int, replicate: int):
    """(sample, contamination) generators for one replicate.

    The same replicate index yields the same clean sample for every
    contamination level, so contamination grids use common random numbers.
    """
    ss = np.random.SeedSequence([int(master), int(replicate)])
    a, b = ss.spawn(2)
    return np.random.default_rng(a), np.random.default_rng(b)


def sample_design(cfg: ScenarioConfig, rng, n: int | None = None) -> np.ndarray:
    """n x (p+1) covariate draws with a leading column of ones."""
    rng = np.random.default_rng(rng)
    n = cfg.n if n is None else int(n)
    p = cfg.p
    if cfg.design == "AMR":
        # Gaussian copula: latent correlation 2 sin(pi r / 6) gives uniform
        # margins with Pearson correlation r
        target = _ar1(p, cfg.rho_corr)
        latent = 2.0 * np.sin(np.pi * target / 6.0)
        L = np.linalg.cholesky(latent)
        Z = stats.norm.cdf(rng.standard_normal((n, p)) @ L.T)
    else:
        L = np.linalg.cholesky(_ar1(p, cfg.rho_corr))
        Z = rng.standard_normal((n, p)) @ L.T
    return np.column_stack([np.ones(n), Z])


def generate_sample(cfg: ScenarioConfig, rng) -> tuple[np.ndarray, np.ndarray]:
    """Design matrix with leading ones and Poisson responses under beta*."""
    rng = np.random.default_rng(rng)
    X = sample_design(cfg, rng)
    y = rng.poisson(np.exp(X @ cfg.beta_star)).astype(float)
    return X, y


def contaminate(X, y, cfg: ScenarioConfig, rng):
    """Returns contaminated copies and the boolean mask of replaced rows."""
    rng = np.random.default_rng(rng)
    X = np.array(X, dtype=float, copy=True)
    y = np.array(y, dtype=float, copy=True)
    n = y.shape[0]
    mask = np.zeros(n, dtype=bool)
    if cfg.eps == 0.0:
        return X, y, mask
    if cfg.design == "AMR":
        b = rng.random(n) < cfg.eps
        mu = np.exp(X @ cfg.beta_star)
        y[b] = rng.poisson(cfg.y0 * mu[b])
        mask = b
    else:
        m = math.ceil(cfg.eps * n)
        rows = rng.permutation(n)[:m]
        x0 = np.zeros(X.shape[1])
        x0[0], x0[1] = 1.0, 3.0
        X[rows] = x0
        y[rows] = cfg.y0
        mask[rows] = True
    return X, y, mask


def selection_counts(beta, beta_star):
    """(Size, #FN, #FP) with Size counting every nonzero coefficient."""
    nz = np.asarray(beta) != 0.0
    true = np.asarray(beta_star) != 0.0
    size = int(nz.sum())
    fn = int(np.sum(true[1:] & ~nz[1:]))
    fp = int(np.sum(~true[1:] & nz[1:]))
    return size, fn, fp


def fit_method(method: str, X, y, criterion: str = "bic", rho: RhoFunction | None = None,
               n_lambda: int = 50, ratio: float | None = None, ric_loss: str = "unpenalized",
               ric_scale: str = "deviance", init_cfg: InitConfig = InitConfig()):
    """Selected fit and its path for one named method."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    family, kind = method.split("-", 1)
    spec = PenaltySpec(kind, 0.0, _ALPHA[kind])
    ratio = _RATIO[kind] if ratio is None else ratio
    if family == "ML":
        path = fit_ml_path(X, y, spec, n_points=n_lambda, ratio=ratio)
    else:
        rho = rho or RhoFunction()
        obj = MtObjective(X, y, cached_table(rho), rho, spec)
        path = fit_path(obj, spec, n_points=n_lambda, ratio=ratio, init_cfg=init_cfg,
                        ric_loss=ric_loss, ric_scale=ric_scale)
    i = path.selected[criterion]
    return path.fits[i], path, i


@dataclass
class MonteCarloReport:
    """Per-replicate records and their aggregates.

    ``records`` and ``summary`` are deterministic given the configuration;
    wall-clock times live in ``timings`` and are kept out of the canonical
    serializations.
    """

    config: dict
    methods: list
    criterion: str
    records: list
    summary: list
    failures: dict
    timings: list = field(default_factory=list)

    def mse(self, method: str, eps: float | None = None, y0: float | None = None) -> float:
        rows = [s for s in self.summary if s["method"] == method
                and (eps is None or s["eps"] == eps) and (y0 is None or s["y0"] == y0)]
        if len(rows) != 1:
            raise KeyError(f"no unique summary row for {method}, eps={eps}, y0={y0}")
        return rows[0]["mse"]

    def row(self, method: str, eps: float, y0: float) -> dict:
        for s in self.summary:
            if s["method"] == method and s["eps"] == eps and s["y0"] == y0:
                return s
        raise KeyError((method, eps, y0))

    def to_json(self) -> str:
        return dumps(dict(kind="monte-carlo", config=self.config, methods=self.methods,
                          criterion=self.criterion, summary=self.summary,
                          failures=self.failures, records=self.records))

    def to_csv(self) -> str:
        cols = ["method", "eps", "y0", "mse", "size_median", "size_mad", "fn_median", "fn_mad",
                "fp_median", "fp_mad", "lambda_median", "n_ok", "n_failed"]
        return table_to_csv(cols, [[s[c] for c in cols] for s in self.summary])


def _mad(v):
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        return float("nan")
    return float(np.median(np.abs(v - np.median(v))))


def run_replicate(cfg: ScenarioConfig, replicate: int, methods, criterion="bic",
                  rho: RhoFunction | None = None, **fit_kw) -> tuple[list, list]:
    """Generate, contaminate and fit one replicate; returns (records, timings)."""
    g_sample, g_cont = replicate_seeds(cfg.seed, replicate)
    X, y = generate_sample(cfg, g_sample)
    X, y, _ = contaminate(X, y, cfg, g_cont)
    bstar = cfg.beta_star
    out, times = [], []
    for m in methods:
        t0 = time.perf_counter()
        rec = dict(method=m, eps=cfg.eps, y0=cfg.y0, replicate=replicate)
        try:
            fit, path, i = fit_method(m, X, y, criterion, rho, **fit_kw)
            size, fn, fp = selection_counts(fit.beta, bstar)
            rec.update(ok=True, sq_error=float(np.sum((fit.beta - bstar) ** 2)), size=size, fn=fn,
                       fp=fp, lam=float(path.lambdas[i]), df=float(path.df[i]),
                       criterion_value=float(path.ric[criterion][i]), converged=bool(fit.converged),
                       kkt=float(fit.kkt), beta=fit.beta.tolist(),
                       trace_monotone=bool(all(np.diff(f.trace).max(initial=0.0) <= 0.0
                                               for f in path.fits)),
                       max_kkt_converged=float(max((f.kkt for f in path.fits if f.converged),
                                                   default=0.0)))
        except (ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
            rec.update(ok=False, error=f"{type(exc).__name__}: {exc}")
        out.append(rec)
        times.append(dict(method=m, eps=cfg.eps, y0=cfg.y0, replicate=replicate,
                          seconds=time.perf_counter() - t0))
    return out, times


def _summarize(records, methods, grid):
    summary = []
    failures = {}
    for eps, y0 in grid:
        for m in methods:
            rs = [r for r in records if r["method"] == m and r["eps"] == eps and r["y0"] == y0]
            ok = [r for r in rs if r["ok"]]
            bad = len(rs) - len(ok)
            if bad:
                failures[f"{m}|{eps}|{y0}"] = bad
            col = lambda k: np.array([r[k] for r in ok], dtype=float)
            summary.append(dict(
                method=m, eps=eps, y0=y0,
                mse=float(np.mean(col("sq_error"))) if ok else float("nan"),
                size_median=float(np.median(col("size"))) if ok else float("nan"),
                size_mad=_mad(col("size")),
                fn_median=float(np.median(col("fn"))) if ok else float("nan"),
                fn_mad=_mad(col("fn")),
                fp_median=float(np.median(col("fp"))) if ok else float("nan"),
                fp_mad=_mad(col("fp")),
                lambda_median=float(np.median(col("lam"))) if ok else float("nan"),
                n_ok=len(ok), n_failed=bad,
            ))
    return summary, failures


def default_threads() -> int:
    env = os.environ.get("MTGLM_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_monte_carlo(cfg: ScenarioConfig, methods=("MT-lasso", "ML-lasso"), criterion: str = "bic",
                    y0_grid=None, eps_grid=None, rho: RhoFunction | None = None,
                    threads: int | None = None, progress=None, **fit_kw) -> MonteCarloReport:
    """Replicates over the (eps, y0) grid and their aggregated summary.

    Replicates are independent seeded tasks; results are gathered in task
    order, so the report does not depend on ``threads``.
    """
    methods = list(methods)
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; expected one of {METHODS}")
    eps_grid = [cfg.eps] if eps_grid is None else [float(e) for e in eps_grid]
    y0_grid = [cfg.y0] if y0_grid is None else [float(v) for v in y0_grid]
    grid = [(e, v) for e in eps_grid for v in y0_grid]
    tasks = [(cfg.replace(eps=e, y0=v), r) for e, v in grid for r in range(cfg.replications)]
    threads = threads or default_threads()

    def work(task):
        res = run_replicate(task[0], task[1], methods, criterion, rho, **fit_kw)
        if progress is not None:
            progress(task)
        return res

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(work, tasks))
    else:
        results = [work(t) for t in tasks]
    records = [r for res in results for r in res[0]]
    timings = [t for res in results for t in res[1]]
    summary, failures = _summarize(records, methods, grid)
    conf = asdict(cfg)
    conf.update(eps_grid=eps_grid, y0_grid=y0_grid, rho=asdict(rho or RhoFunction()),
                fit_options={k: v for k, v in fit_kw.items() if k != "init_cfg"})
    return MonteCarloReport(conf, methods, criterion, records, summary, failures, timings)
