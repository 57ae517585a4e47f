"""Command-line interface: ``mtglm <subcommand> [options]``.

Every subcommand writes its artifact to ``--output`` and prints a one-line
summary. Exit status is 0 on success, 2 on invalid input and 3 when a fit
fails to converge.
"""
from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

import numpy as np

from .dataio import Dataset, ValidationError, dumps, load_csv, table_to_csv
from .families import DegenerateInput, cached_table
from .inference import abp_lower_bound, detect_outliers
from .init import InitConfig, lst_start, robust_start
from .penalties import SOLVER_KINDS, PenaltySpec
from .robust_loss import RHO_KINDS, MtObjective, RhoFunction
from .selection import FLAVORS, ConfigurationError, fit_path, lambda_grid, rcv, reference_lambda
from .simulation import DESIGNS, METHODS, ScenarioConfig, default_threads, run_monte_carlo, sample_design
from .solver import irwls_fit

EXIT_OK, EXIT_INVALID, EXIT_NOT_CONVERGED = 0, 2, 3


class NotConverged(RuntimeError):
    pass


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mtglm", description="Robust penalized Poisson regression (MT-estimators).")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--output", "-o", required=True, help="artifact file to write")
        sp.add_argument("--format", choices=("json", "csv"), default=None)
        sp.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: MTGLM_THREADS or all cores)")
        sp.add_argument("--seed", type=int, default=None)
        if data:
            sp.add_argument("--input", "-i", required=True, help="CSV file with a header row")
            sp.add_argument("--response", default="y")
            sp.add_argument("--covariates", default=None,
                            help="comma-separated covariate columns (default: all; '' for none)")
            sp.add_argument("--penalty", choices=SOLVER_KINDS, default="lasso")
            sp.add_argument("--lambda", dest="lam", type=float, default=None,
                            help="fixed penalty level (default: select along a grid)")
            sp.add_argument("--alpha", type=float, default=None, help="elastic-net mixing or SCAD/MCP shape")
            sp.add_argument("--n-lambda", type=int, default=50)
            sp.add_argument("--ratio", type=float, default=1e-3)
            sp.add_argument("--criterion", choices=FLAVORS, default="bic")
        sp.add_argument("--rho", choices=RHO_KINDS, default="quartic")
        sp.add_argument("--k", type=float, default=None, help="rho tuning constant")

    common(sub.add_parser("fit", help="fit at a fixed lambda or at the criterion-selected lambda"))
    common(sub.add_parser("path", help="fit a lambda grid and tabulate df and criteria"))
    cv = sub.add_parser("cv", help="robust K-fold cross-validation")
    common(cv)
    cv.add_argument("--folds", "-K", type=int, default=5)
    cv.add_argument("--alphas", type=_floats, default=None)
    det = sub.add_parser("detect-outliers", help="bootstrap deviance-residual outlier flags")
    common(det)
    det.add_argument("--bootstrap", "-B", type=int, default=100_000)

    sim = sub.add_parser("simulate", help="Monte Carlo comparison of MT and ML fits")
    common(sim, data=False)
    sim.add_argument("--design", choices=DESIGNS, default="AVY")
    sim.add_argument("--n", type=int, default=100)
    sim.add_argument("--p", type=int, default=10)
    sim.add_argument("--eps", type=_floats, default=[0.0])
    sim.add_argument("--y0", type=_floats, default=[0.0])
    sim.add_argument("--replications", "-N", type=int, default=100)
    sim.add_argument("--methods", default="MT-lasso,ML-lasso")
    sim.add_argument("--criterion", choices=FLAVORS, default="bic")
    sim.add_argument("--allow-large-p", action="store_true")

    abp = sub.add_parser("abp", help="asymptotic breakdown-point lower bound")
    common(abp, data=False)
    abp.add_argument("--design", choices=DESIGNS, default="AVY")
    abp.add_argument("--p", type=int, default=10)
    abp.add_argument("--draws", type=int, default=100_000)
    return p


def _rho(args) -> RhoFunction:
    if args.rho == "square":
        return RhoFunction.square()
    return RhoFunction(args.rho) if args.k is None else RhoFunction(args.rho, args.k)


def _threads(args) -> int:
    if args.threads is not None:
        if args.threads < 1:
            raise ValidationError("--threads must be positive")
        return args.threads
    return default_threads()


def _format(args, default):
    fmt = args.format or (Path(args.output).suffix.lstrip(".").lower() or default)
    return fmt if fmt in ("json", "csv") else default


def _data(args) -> Dataset:
    data = load_csv(args.input, args.response)
    if args.covariates is not None:
        cols = [c.strip() for c in args.covariates.split(",") if c.strip()]
        data = data.select(cols)
    return data


def _spec(args) -> PenaltySpec:
    return PenaltySpec(args.penalty, 0.0 if args.lam is None else args.lam, args.alpha)


def _objective(args, data, spec):
    rho = _rho(args)
    return MtObjective(data.X, data.y, cached_table(rho), rho, spec)


def _start(obj):
    if not obj.rho.bounded or obj.n_coef == 1:
        return lst_start(obj)
    return robust_start(obj, InitConfig()).beta


def _path(args, obj, spec):
    return fit_path(obj, spec, n_points=args.n_lambda, ratio=args.ratio)


def _fit_doc(data, fit, spec, args, lam, extra=None):
    names = data.coef_names
    doc = dict(kind="fit", coefficients=dict(zip(names, fit.beta.tolist())),
               intercept=float(fit.beta[0]), objective=fit.objective, loss=fit.loss,
               active=[names[j] for j in np.flatnonzero(fit.beta[1:]) + 1],
               iterations=fit.iterations, converged=fit.converged, kkt=fit.kkt,
               penalty=spec.kind, alpha=spec.alpha, lam=lam,
               rho=args.rho, k=_rho(args).k if args.rho != "square" else None,
               n=int(data.X.shape[0]), seed=args.seed)
    doc.update(extra or {})
    return doc


def _single_fit(args, data):
    spec = _spec(args)
    obj = _objective(args, data, spec)
    if args.lam is not None or obj.n_coef == 1:
        fit = irwls_fit(obj, _start(obj))
        return fit, spec, spec.lam, {}
    path = _path(args, obj, spec)
    i = path.selected[args.criterion]
    return path.fits[i], spec, float(path.lambdas[i]), dict(criterion=args.criterion, path_index=int(i))


def cmd_fit(args):
    data = _data(args)
    fit, spec, lam, extra = _single_fit(args, data)
    _write(args.output, dumps(_fit_doc(data, fit, spec, args, lam, extra)))
    if not fit.converged:
        raise NotConverged(f"fit stopped after {fit.iterations} iterations without converging")
    return f"fit: {len(np.flatnonzero(fit.beta[1:]))} active slopes, objective {fit.objective:.6g}"


def cmd_path(args):
    data = _data(args)
    spec = _spec(args)
    obj = _objective(args, data, spec)
    if obj.n_coef < 2:
        raise ValidationError("a path needs at least one covariate")
    path = _path(args, obj, spec)
    flavors = list(path.ric)
    rows = [[float(lam), float(df)] + [float(path.ric[f][i]) for f in flavors]
            + [int(fit.size), fit.objective, fit.loss, bool(fit.converged)]
            for i, (lam, df, fit) in enumerate(zip(path.lambdas, path.df, path.fits))]
    cols = ["lambda", "df"] + flavors + ["size", "objective", "loss", "converged"]
    if _format(args, "csv") == "csv":
        _write(args.output, table_to_csv(cols, rows))
    else:
        _write(args.output, dumps(dict(kind="path", columns=cols, rows=rows,
                                       selected={k: int(v) for k, v in path.selected.items()},
                                       coef_names=data.coef_names,
                                       coefficients=[f.beta for f in path.fits])))
    return f"path: {len(rows)} lambdas, {args.criterion} selects index {path.selected[args.criterion]}"


def _need_seed(args):
    if args.seed is None:
        raise ValidationError(f"{args.command} needs --seed")


def cmd_cv(args):
    _need_seed(args)
    data = _data(args)
    spec = _spec(args)
    obj = _objective(args, data, spec)
    if obj.n_coef < 2:
        raise ValidationError("cross-validation needs at least one covariate")
    ref = obj.with_penalty(spec.with_lam(reference_lambda(obj, spec)))
    init = robust_start(ref)
    lams = lambda_grid(obj, spec, args.n_lambda, args.ratio, start=init.beta)
    res = rcv(obj, spec, lams, K=args.folds, seed=args.seed, alphas=args.alphas, threads=_threads(args))
    if _format(args, "json") == "csv":
        rows = [[a, float(l), float(res.values[ai, li])]
                for ai, a in enumerate(res.alphas) for li, l in enumerate(res.lambdas)]
        _write(args.output, table_to_csv(["alpha", "lambda", "rcv"], rows))
    else:
        _write(args.output, dumps(dict(kind="cv", K=args.folds, seed=args.seed, alphas=res.alphas,
                                       lambdas=res.lambdas, values=res.values, folds=res.folds,
                                       selected=dict(alpha=res.best_alpha, lam=res.best_lambda,
                                                     index=list(res.selected)))))
    return f"cv: best lambda {res.best_lambda:.6g}, alpha {res.best_alpha}"


def cmd_detect(args):
    _need_seed(args)
    if args.bootstrap < 1:
        raise ValidationError("--bootstrap must be positive")
    data = _data(args)
    fit, spec, lam, _ = _single_fit(args, data)
    rep = detect_outliers(data.X, data.y, fit.beta, args.bootstrap, args.seed)
    if _format(args, "json") == "csv":
        rows = [[i + 1, float(r), bool(f)] for i, (r, f) in enumerate(zip(rep.residuals, rep.flags))]
        _write(args.output, table_to_csv(["row", "deviance_residual", "outlier"], rows))
    else:
        _write(args.output, dumps(dict(kind="outliers", B=rep.B, seed=args.seed, q1=rep.q1, q2=rep.q2,
                                       residuals=rep.residuals, flags=rep.flags,
                                       outliers=[int(i) + 1 for i in rep.outliers], count=rep.count,
                                       coefficients=dict(zip(data.coef_names, fit.beta.tolist())),
                                       lam=lam, penalty=spec.kind)))
    if not fit.converged:
        raise NotConverged("the fit behind the outlier bounds did not converge")
    return f"detect-outliers: {rep.count} of {rep.residuals.size} rows outside [{rep.q1:.4g}, {rep.q2:.4g}]"


def cmd_simulate(args):
    _need_seed(args)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise ValidationError(f"unknown method(s) {bad}; expected a subset of {list(METHODS)}")
    cfg = ScenarioConfig(args.design, args.n, args.p, eps=args.eps[0], y0=args.y0[0],
                         replications=args.replications, seed=args.seed, allow_large_p=args.allow_large_p)
    rho = _rho(args)
    rep = run_monte_carlo(cfg, methods, args.criterion, y0_grid=args.y0, eps_grid=args.eps,
                          rho=rho, threads=_threads(args))
    _write(args.output, rep.to_csv() if _format(args, "json") == "csv" else rep.to_json())
    parts = ", ".join(f"{s['method']}@eps={s['eps']:g},y0={s['y0']:g}: {s['mse']:.4g}" for s in rep.summary)
    return f"simulate: MSE {parts}"


def cmd_abp(args):
    cfg = ScenarioConfig(args.design, 10, args.p, allow_large_p=True)
    rho = _rho(args)
    if not rho.bounded:
        raise ValidationError("the breakdown bound needs a bounded rho (quartic or tukey)")
    if args.draws < 2:
        raise ValidationError("--draws must be at least 2")
    seed = 0 if args.seed is None else args.seed
    res = abp_lower_bound(lambda rng, size: sample_design(cfg, rng, size), cfg.beta_star, rho,
                          n_draws=args.draws, seed=seed)
    doc = dict(kind="abp", design=args.design, p=args.p, rho=rho.kind, k=rho.k, draws=res.n_draws,
               seed=seed, epsilon=res.value, se=res.se, c=res.c, c_se=res.c_se)
    if _format(args, "json") == "csv":
        _write(args.output, table_to_csv(list(doc), [list(doc.values())]))
    else:
        _write(args.output, dumps(doc))
    return f"abp: epsilon* >= {res.value:.4f} (se {res.se:.2g})"


def _write(path, text):
    Path(path).write_text(text, encoding="utf-8")


COMMANDS = {"fit": cmd_fit, "path": cmd_path, "cv": cmd_cv, "detect-outliers": cmd_detect,
            "simulate": cmd_simulate, "abp": cmd_abp}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            summary = COMMANDS[args.command](args)
    except NotConverged as exc:
        print(f"mtglm {args.command}: not converged: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except (ValidationError, ConfigurationError, DegenerateInput, ValueError) as exc:
        print(f"mtglm {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(summary)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
