"""Command-line interface: ``lurk-vecchia {fit,predict,cv,simulate,benchmark}``.

Exit codes: 0 success, 2 data or configuration error, 3 numerical failure.
``VECCHIA_THREADS`` caps the worker processes used by ``simulate``.
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
from dataclasses import replace
from typing import List, Optional

import numpy as np

from . import __version__
from .baselines import METHODS, fit_method, rebuild_fit
from .estimate import EstimationConfig, FitError
from .geometry import CoordSet
from .io import (COORD_COLS, DataError, Dataset, RunConfig, fmt, grid_coords, read_config,
                 read_dataset, read_fit_artifact, write_dataset, write_fit_artifact)
from .penalty import fold_ids
from .simulate import (Scenario, baseline_scenarios, joint_scenarios, run_study,
                       score_predictions, simulate_replicate, summarize, write_long_csv)
from .sparse_core import VecchiaFactorError

log = logging.getLogger("lurk_vecchia")

EXIT_OK, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3


def _threads() -> int:
    raw = os.environ.get("VECCHIA_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise DataError(f"VECCHIA_THREADS must be an integer, got {raw!r}") from None


def _run_config(args) -> RunConfig:
    rc = read_config(args.config) if getattr(args, "config", None) else RunConfig()
    est = rc.estimation
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "m", None) is not None:
        over["m"] = args.m
    if getattr(args, "tol", None) is not None:
        over["tol"] = args.tol
    if over:
        try:
            est = replace(est, **over)
        except ValueError as exc:
            raise DataError(str(exc)) from exc
    rc = replace(rc, estimation=est)
    for key in ("data", "out", "method", "folds", "response"):
        v = getattr(args, key, None)
        if v is not None:
            rc = replace(rc, **{key: v})
    if getattr(args, "log_response", False):
        rc = replace(rc, log_response=True)
    if getattr(args, "lonlat", False):
        rc = replace(rc, lonlat=True)
    if getattr(args, "covariates", None):
        rc = replace(rc, covariates=[c.strip() for c in args.covariates.split(",") if c.strip()])
    for meth in rc.method.split(","):
        if meth not in METHODS:
            raise DataError(f"unknown method {meth!r}; choose from {', '.join(METHODS)}")
    if rc.folds < 2:
        raise DataError("folds must be at least 2")
    return rc


def _load(rc: RunConfig) -> Dataset:
    if not rc.data:
        raise DataError("--data is required")
    ds = read_dataset(rc.data, response=rc.response, covariates=rc.covariates,
                      log_response=rc.log_response, lonlat=rc.lonlat)
    if ds.n_dropped:
        print(f"dropped {ds.n_dropped} row(s) with missing values", file=sys.stderr)
    if ds.n < 2:
        raise DataError(f"{rc.data}: need at least 2 complete rows, found {ds.n}")
    return ds


def _fit(method: str, ds: Dataset, cfg: EstimationConfig):
    X = ds.X if ds.X.shape[1] else None
    if X is None and method != "local-kriging":
        raise DataError(f"method {method!r} needs at least one covariate column")
    return fit_method(method, ds.z, ds.coords, X, cfg)


def _print_summary(fitted, ds: Dataset, out=None):
    out = out or sys.stdout
    print(f"method      {fitted.method}", file=out)
    print(f"n           {ds.n}", file=out)
    if fitted.theta is not None:
        th = fitted.theta
        print(f"theta       sigma={th.sigma:.6g} gamma_s={th.gamma_s:.6g} km "
              f"gamma_t={th.gamma_t:.6g} d tau={th.tau:.6g}", file=out)
    res = fitted.extra if hasattr(fitted.extra, "converged") else None
    if res is not None:
        print(f"converged   {'true' if res.converged else 'false'}", file=out)
        print(f"iterations  {res.n_outer}", file=out)
    if fitted.coef is None:
        return
    slopes = fitted.coef[1:] / fitted.x_sd
    sel = np.flatnonzero(slopes)
    print(f"selected    {sel.size} of {slopes.size}", file=out)
    print(f"{'covariate':<24} {'beta':>14} {'pct_change':>12}", file=out)
    for j in sel:
        print(f"{ds.names[j]:<24} {slopes[j]:>14.6g} {math.expm1(slopes[j]) * 100:>12.4g}",
              file=out)


def cmd_fit(args) -> int:
    rc = _run_config(args)
    if "," in rc.method:
        raise DataError("fit takes a single --method")
    ds = _load(rc)
    fitted = _fit(rc.method, ds, rc.estimation)
    if rc.out:
        write_fit_artifact(rc.out, fitted, ds, {"seed": rc.estimation.seed})
    _print_summary(fitted, ds)
    return EXIT_OK


def _artifact_predictor(path):
    art = read_fit_artifact(path)
    tr = art.train
    info = {}
    for k in ("m", "residual_variance", "mean", "lambda_hat", "objective"):
        if k in art.meta:
            info[k] = float(art.meta[k]) if k != "m" else int(art.meta[k])
    X = tr.X if tr.X.shape[1] else None
    fitted = rebuild_fit(art.method, tr.z, tr.coords, X, art.coef, art.theta,
                         art.x_mean, art.x_sd, info)
    return art, fitted


def cmd_predict(args) -> int:
    if not args.fit:
        raise DataError("--fit (a fit artifact directory) is required")
    art, fitted = _artifact_predictor(args.fit)
    names = art.names
    if args.data:
        ds = read_dataset(args.data, response=None, covariates=names, lonlat=args.lonlat,
                          require_response=False)
        xyt, XP = ds.coords.xyt, ds.X
    elif args.grid:
        xyt = grid_coords(args.grid)
        if names:
            # covariates are needed at the lattice: write a template to be filled in
            tmpl = Dataset(None, CoordSet(xyt), np.full((xyt.shape[0], len(names)), np.nan),
                           names)
            _write_template(args.out, tmpl)
            print(f"wrote a {xyt.shape[0]}-row grid template; add covariate values and "
                  f"rerun with --data", file=sys.stderr)
            return EXIT_OK
        XP = np.zeros((xyt.shape[0], 0))
    else:
        raise DataError("predict needs --data or --grid")
    if xyt.shape[0] == 0:
        pred_mu = pred_var = pred_vn = np.zeros(0)
    else:
        out = fitted.predict(xyt, XP if names else None)
        pred_mu, pred_var, pred_vn = out.mu, out.var, out.var_noisy
    head = list(COORD_COLS) + ["mu", "sd", "sd_noisy"]
    if art.log_response:
        head += ["geo_mean", "geo_sd"]
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(head)
        for i in range(xyt.shape[0]):
            sd, sdn = math.sqrt(pred_var[i]), math.sqrt(pred_vn[i])
            row = [fmt(v) for v in xyt[i]] + [fmt(pred_mu[i]), fmt(sd), fmt(sdn)]
            if art.log_response:
                row += [fmt(math.exp(pred_mu[i])), fmt(math.exp(sd))]
            w.writerow(row)
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


def _write_template(path, tmpl: Dataset):
    if path:
        write_dataset(path, tmpl)
        return
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(list(COORD_COLS) + tmpl.names)
    for r in tmpl.coords.xyt:
        w.writerow([fmt(v) for v in r] + [""] * len(tmpl.names))


def cross_validate(ds: Dataset, methods: List[str], cfg: EstimationConfig, folds: int,
                   seed: int):
    """Rows ``(method, fold, n_test, mse, crps, log_score)``; fold ``all`` aggregates.

    Scores use the response-scale predictive ``N(mu, var + tau^2)``. The
    aggregate weights folds by size.
    """
    f_id = fold_ids(ds.n, folds, seed)
    rows = []
    for method in methods:
        acc = []
        for f in range(folds):
            te = np.flatnonzero(f_id == f)
            tr = np.flatnonzero(f_id != f)
            sub = Dataset(ds.z[tr], ds.coords.subset(tr), ds.X[tr], ds.names, ds.response,
                          ds.log_response)
            fitted = _fit(method, sub, cfg)
            XP = ds.X[te] if ds.X.shape[1] else None
            pr = fitted.predict(ds.coords.xyt[te], XP)
            var = np.maximum(pr.var_noisy, 1e-300)
            mse, crps, ls = score_predictions(ds.z[te], pr.mu, var)
            acc.append((te.size, mse, crps, ls))
            rows.append((method, str(f), te.size, mse, crps, ls))
        a = np.asarray(acc)
        w = a[:, 0] / a[:, 0].sum()
        rows.append((method, "all", int(a[:, 0].sum()), *(float(w @ a[:, k]) for k in (1, 2, 3))))
    return rows


def cmd_cv(args) -> int:
    rc = _run_config(args)
    ds = _load(rc)
    rows = cross_validate(ds, rc.method.split(","), rc.estimation, rc.folds, rc.estimation.seed)
    fh = open(rc.out, "w", newline="") if rc.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "fold", "n", "mse", "crps", "log_score"])
        for r in rows:
            w.writerow([r[0], r[1], r[2]] + [fmt(v) for v in r[3:]])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.dataset:
        sc = Scenario(n=args.n, n_P=args.n)
        d = simulate_replicate(sc, 0, args.seed)
        write_dataset(args.dataset, Dataset(d.train_z, d.train_coords, d.train_X, d.names))
        print(f"wrote {d.train_z.size} rows to {args.dataset}", file=sys.stderr)
        return EXIT_OK
    scen = baseline_scenarios(args.n, args.n)
    if args.scenarios:
        want = set(args.scenarios.split(","))
        scen = [s for s in scen if s.scenario_id in want]
        if not scen:
            raise DataError(f"no scenario matches {args.scenarios!r}")
    if args.joint:
        scen += joint_scenarios(args.n, args.n)
    methods = args.methods.split(",")
    for mth in methods:
        if mth not in METHODS:
            raise DataError(f"unknown method {mth!r}")
    cfg = EstimationConfig(m=args.m if args.m is not None else 25, seed=args.seed)
    rows = run_study(scen, methods, args.replicates, args.seed, cfg, n_jobs=_threads())
    if args.out:
        write_long_csv(rows, args.out)
    n_fail = sum(1 for r in rows if r[3] == "failed")
    n_cells = len(scen) * args.replicates * len(methods)
    summ = summarize(rows)
    for (sc, mth, metric), (mean, sd, cnt) in sorted(summ.items()):
        if metric in ("mse", "crps", "log_score", "kappa"):
            print(f"{sc:<24} {mth:<14} {metric:<10} {mean:.6g} (sd {sd:.3g}, n={cnt})")
    if n_fail:
        print(f"{n_fail} of {n_cells} method fits failed", file=sys.stderr)
    return EXIT_NUMERIC if n_fail == n_cells else EXIT_OK


def cmd_benchmark(args) -> int:
    from .bench import compare_backends, time_stages
    sizes = [int(s) for s in args.sizes.split(",")]
    m = args.m if args.m is not None else 25
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        if args.compare_backends:
            w.writerow(["n", "kernel", "backend", "wall_ms"])
            for n in sizes:
                for r in compare_backends(n, m, seed=args.seed or 0, repeats=args.repeats):
                    w.writerow([r[0], r[1], r[2], "%.6g" % r[3]])
                fh.flush()
        else:
            w.writerow(["n", "stage", "wall_ms"])
            for n in sizes:
                for r in time_stages(n, m, seed=args.seed or 0, nm_evals=args.nm_evals,
                                     repeats=args.repeats):
                    w.writerow([r[0], r[1], "%.6g" % r[2]])
                fh.flush()
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


def _common(p, data=True):
    if data:
        p.add_argument("--data", help="input CSV (x_km, y_km, t_days, covariates, response)")
    p.add_argument("--config", help="INI run configuration")
    p.add_argument("--out", help="output path")
    p.add_argument("--seed", type=int)
    p.add_argument("--m", type=int, help="conditioning-set size")
    p.add_argument("--tol", type=float, help="outer-loop relative tolerance")
    p.add_argument("--method", help=f"one of {', '.join(METHODS)}")
    p.add_argument("--folds", type=int)
    p.add_argument("--response", help="response column (default z)")
    p.add_argument("--covariates", help="comma-separated covariate columns (default: all others)")
    p.add_argument("--log-response", action="store_true", help="model the natural log of the response")
    p.add_argument("--lonlat", action="store_true", help="coordinates given as lon, lat, t_days")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lurk-vecchia",
                                 description="Penalized regression with spatiotemporal "
                                             "Gaussian-process errors.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a model and write a fit artifact directory")
    _common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predict from a fit artifact")
    p.add_argument("--fit", required=True, help="fit artifact directory")
    p.add_argument("--data", help="prediction CSV with coordinates and covariates")
    p.add_argument("--grid", help="xmin,xmax,ymin,ymax,nx,ny,t lattice")
    p.add_argument("--out", help="output CSV (default stdout)")
    p.add_argument("--lonlat", action="store_true")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("cv", help="k-fold cross-validated scores")
    _common(p)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("simulate", help="run the simulation study or write a sample dataset")
    p.add_argument("--out", help="long-format study CSV")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--m", type=int)
    p.add_argument("--n", type=int, default=500, help="training and test size")
    p.add_argument("--replicates", type=int, default=20)
    p.add_argument("--scenarios", help="comma-separated scenario ids (default: all one-at-a-time)")
    p.add_argument("--joint", action="store_true", help="add the 30-cell joint grid")
    p.add_argument("--methods", default=",".join(METHODS))
    p.add_argument("--dataset", help="write one simulated training set to this CSV and stop")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("benchmark", help="timing CSV for the scaling check")
    p.add_argument("--sizes", default="2000,5000,10000,20000")
    p.add_argument("--m", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--nm-evals", type=int, default=30)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--out", help="output CSV (default stdout)")
    p.add_argument("--compare-backends", action="store_true",
                   help="time each kernel under the compiled and Python backends")
    p.set_defaults(func=cmd_benchmark)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FitError, VecchiaFactorError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
