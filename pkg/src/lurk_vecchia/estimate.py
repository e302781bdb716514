"""Alternating estimation of covariance parameters and sparse coefficients.

Each outer iteration minimizes the Vecchia objective over ``theta`` with
``beta`` fixed (Nelder-Mead on log-parameters), refreshes the ordering and
conditioning sets under the new ranges, rebuilds the pseudo-data and refits
the SCAD path with cross-validated lambda.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.optimize import minimize
from scipy.spatial import ConvexHull, QhullError

from .geometry import CoordLike, CovParams, as_coord_array
from .objective import factorize, make_pseudo_data, neg2loglik_direct, penalized_objective
from .ordering import build_ordering_plan
from .penalty import DEFAULT_A, ScadParams, select_lambda_cv
from .sparse_core import VecchiaFactorError

__all__ = [
    "EstimationConfig",
    "OuterStep",
    "FitResult",
    "FitError",
    "ThetaResult",
    "standardize",
    "initialize_theta",
    "optimize_theta",
    "fit",
]


class FitError(ArithmeticError):
    """Estimation produced a non-finite objective; ``state`` holds the last valid fit."""

    def __init__(self, msg, state=None):
        super().__init__(msg)
        self.state = state


@dataclass
class EstimationConfig:
    """Settings for :func:`fit`.

    ``tol`` is relative: iteration stops once the penalized objective fails
    to drop by more than ``tol * |previous|``. ``exact_shortcut`` lets full
    conditioning (``m >= n - 1``) use the dense exact likelihood.
    """

    m: int = 25
    tol: float = 1e-6
    max_outer: int = 10
    max_nm_evals: int = 300
    nm_restart: bool = True
    log_bound: float = math.log(1000.0)
    cd_tol: float = 1e-7
    cd_max_iter: int = 1000
    k_folds: int = 10
    n_lambda: int = 100
    lambda_ratio: float = 1e-3
    scad_a: float = DEFAULT_A
    theta0: Optional[CovParams] = None
    seed: int = 0
    exact_shortcut: bool = True
    spatial_only_split: bool = False
    refresh_ordering: bool = True

    def __post_init__(self):
        if self.m < 0:
            raise ValueError("m must be nonnegative")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_outer < 1 or self.max_nm_evals < 1:
            raise ValueError("iteration caps must be positive")


@dataclass
class OuterStep:
    iteration: int
    theta: CovParams
    lambda_: float
    neg2loglik: float
    penalty: float
    objective: float
    nnz: int
    nm_evals: int
    cd_iters: int
    accepted: bool


@dataclass
class FitResult:
    """Outcome of :func:`fit`.

    ``coef`` is on the standardized design ``[1, (X - x_mean) / x_sd]``;
    ``beta_hat`` drops the intercept. :meth:`beta_raw` maps back to the
    caller's covariate scale.
    """

    coef: np.ndarray
    theta_hat: CovParams
    lambda_hat: float
    trace: List[OuterStep]
    converged: bool
    n_outer: int
    nm_evals: int
    cd_iters: int
    wall_time: float
    x_mean: np.ndarray
    x_sd: np.ndarray
    m: int
    objective: float
    names: Optional[List[str]] = None
    init_coef: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def beta_hat(self) -> np.ndarray:
        return self.coef[1:]

    @property
    def intercept(self) -> float:
        return float(self.coef[0])

    @property
    def selected(self) -> np.ndarray:
        return self.beta_hat != 0

    @property
    def objective_trace(self) -> np.ndarray:
        return np.array([s.objective for s in self.trace if s.accepted])

    def beta_raw(self):
        """``(intercept, slopes)`` for the unstandardized covariates."""
        slopes = self.beta_hat / self.x_sd
        return float(self.coef[0] - slopes @ self.x_mean), slopes

    def design(self, X) -> np.ndarray:
        X = np.asarray(X, float).reshape(-1, self.x_mean.size)
        return np.column_stack([np.ones(X.shape[0]), (X - self.x_mean) / self.x_sd])

    def mean(self, X) -> np.ndarray:
        return self.design(X) @ self.coef


def standardize(X):
    """Columns to mean 0 and variance 1 (ddof 0); returns ``(Xs, mean, sd)``."""
    X = np.asarray(X, float)
    if X.ndim != 2:
        raise ValueError("X must be a 2-D array")
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    bad = ~(sd > 0)
    if bad.any():
        raise ValueError(f"covariate column(s) {np.flatnonzero(bad).tolist()} are constant")
    return (X - mu) / sd, mu, sd


def _spatial_diameter(xy: np.ndarray) -> float:
    pts = np.unique(xy, axis=0)
    if pts.shape[0] < 2:
        return 0.0
    try:
        hull = pts[ConvexHull(pts).vertices]
    except (QhullError, ValueError):
        hull = pts[[np.argmin(pts[:, 0]), np.argmax(pts[:, 0]),
                    np.argmin(pts[:, 1]), np.argmax(pts[:, 1])]]
    d = hull[:, None, :] - hull[None, :, :]
    return float(np.sqrt((d * d).sum(-1)).max())


def initialize_theta(z, X, coords: CoordLike) -> CovParams:
    """Moment-based starting values.

    ``sigma^2 = tau^2 = var(OLS residuals) / 2``, ``gamma_s`` a fifth of the
    spatial diameter and ``gamma_t`` a fifth of the time span.
    """
    z = np.asarray(z, float)
    xyt = as_coord_array(coords)
    if not np.var(z) > 0:
        raise ValueError("response has zero variance")
    X = np.asarray(X, float).reshape(z.size, -1)
    D = np.column_stack([np.ones(z.size), X])
    resid = z - D @ np.linalg.lstsq(D, z, rcond=None)[0]
    v = float(np.var(resid))
    if not v > 1e-12 * np.var(z):
        v = 1e-6 * float(np.var(z))
    half = 0.5 * v
    diam = _spatial_diameter(xyt[:, :2])
    span = float(np.ptp(xyt[:, 2]))
    return CovParams(math.sqrt(half), 0.2 * diam if diam > 0 else 1.0,
                     0.2 * span if span > 0 else 1.0, math.sqrt(half))


@dataclass
class ThetaResult:
    theta: CovParams
    value: float
    value0: float
    n_evals: int
    history: List[float]


def optimize_theta(residual, plan, theta0: CovParams, cfg: EstimationConfig) -> ThetaResult:
    """Nelder-Mead over ``log(sigma, gamma_s, gamma_t, tau)`` with the plan fixed.

    The start simplex steps 0.5 along each log-parameter and the search is
    bounded to ``log_bound`` around the start. If the last 20 evaluations
    improved by less than 1e-4 and budget remains, one restart is made from
    the best vertex with a simplex a fifth the size.
    """
    residual = np.asarray(residual, float)
    x0 = theta0.to_log()
    bounds = list(zip(x0 - cfg.log_bound, x0 + cfg.log_bound))
    hist: List[float] = []
    best = {"x": x0.copy(), "f": math.inf}

    def f(x):
        if len(hist) >= cfg.max_nm_evals:
            return best["f"] if math.isfinite(best["f"]) else math.inf
        try:
            val = neg2loglik_direct(factorize(plan, CovParams.from_log(x), cfg.exact_shortcut),
                                    residual)
        except (VecchiaFactorError, ValueError, FloatingPointError):
            val = math.inf
        if not math.isfinite(val):
            val = math.inf
        hist.append(val)
        if val < best["f"]:
            best["f"], best["x"] = val, np.array(x, copy=True)
        return val

    def run(start, step):
        budget = cfg.max_nm_evals - len(hist)
        if budget <= 1:
            return
        sim = np.vstack([start] + [start + step * e for e in np.eye(4)])
        sim = np.clip(sim, [b[0] for b in bounds], [b[1] for b in bounds])
        minimize(f, start, method="Nelder-Mead", bounds=bounds,
                 options={"initial_simplex": sim, "maxfev": budget,
                          "xatol": 1e-4, "fatol": 1e-6 * max(1.0, abs(best["f"]))
                          if math.isfinite(best["f"]) else 1e-6})

    v0 = f(x0)
    run(x0, 0.5)
    if cfg.nm_restart and 20 < len(hist) < cfg.max_nm_evals:
        so_far = np.minimum.accumulate(hist)
        gain = so_far[-21] - so_far[-1]
        if not gain > 1e-4 * max(1.0, abs(best["f"])):
            run(best["x"].copy(), 0.1)
    if not math.isfinite(best["f"]):
        raise FitError("covariance optimization found no finite objective value")
    return ThetaResult(CovParams.from_log(best["x"]), best["f"], v0, len(hist), hist)


def fit(z, coords: CoordLike, X, cfg: Optional[EstimationConfig] = None,
        names: Optional[List[str]] = None) -> FitResult:
    """Penalized spatiotemporal regression by alternating optimization.

    Parameters
    ----------
    z : (n,) response
    coords : (n, 3) coordinates ``[x_km, y_km, t_days]`` or a CoordSet
    X : (n, p) covariates; standardized internally, intercept added
    cfg : EstimationConfig

    Returns
    -------
    FitResult
        The best accepted iterate. An iteration is accepted when it lowers
        the penalized objective; the loop stops at the first iteration that
        fails to lower it by more than ``tol`` relative, or after
        ``max_outer`` iterations (``converged`` is then False).
    """
    cfg = cfg or EstimationConfig()
    t_start = time.perf_counter()
    z = np.asarray(z, float).reshape(-1)
    xyt = as_coord_array(coords)
    X = np.asarray(X, float)
    if X.ndim == 1:
        X = X[:, None]
    n = z.size
    if xyt.shape[0] != n or X.shape[0] != n:
        raise ValueError("z, coords and X must have the same number of rows")
    if not (np.all(np.isfinite(z)) and np.all(np.isfinite(X))):
        raise ValueError("z and X must not contain missing or infinite values")
    if X.shape[1] < 1:
        raise ValueError("at least one covariate is required")
    Xs, mu, sd = standardize(X)
    D = np.column_stack([np.ones(n), Xs])
    pen = np.r_[False, np.ones(X.shape[1], bool)]
    scad = ScadParams(0.0, cfg.scad_a)
    cv_args = dict(k_folds=cfg.k_folds, seed=cfg.seed, penalized=pen, n_lambda=cfg.n_lambda,
                   lambda_ratio=cfg.lambda_ratio, tol=cfg.cd_tol, max_iter=cfg.cd_max_iter)

    theta = cfg.theta0 or initialize_theta(z, X, xyt)
    init_path = select_lambda_cv(D, scad, z=z, **cv_args)
    coef = init_path.beta.copy()
    lam = init_path.lambda_
    cd_total = init_path.n_iter
    m = min(cfg.m, n - 1)
    plan = build_ordering_plan(xyt, theta, m, cfg.spatial_only_split)

    trace: List[OuterStep] = []
    nm_total = 0
    prev = math.inf
    best = None
    converged = False
    for it in range(1, cfg.max_outer + 1):
        resid = z - D @ coef
        tres = optimize_theta(resid, plan, theta, cfg)
        nm_total += tres.n_evals
        theta_new = tres.theta
        if cfg.refresh_ordering:
            plan = build_ordering_plan(xyt, theta_new, m, cfg.spatial_only_split)
        try:
            factor = factorize(plan, theta_new, cfg.exact_shortcut)
            pseudo = make_pseudo_data(factor, z, D)
            path = select_lambda_cv(pseudo, scad, **cv_args)
            coef_new = path.beta.copy()
            neg2 = neg2loglik_direct(factor, z - D @ coef_new)
        except VecchiaFactorError as exc:
            raise FitError(f"factorization failed in outer iteration {it}: {exc}",
                           best) from exc
        cd_total += path.n_iter
        obj = penalized_objective(neg2, coef_new, path.lambda_, cfg.scad_a, scale=path.scale,
                                  penalized=pen, weight=2.0 * pseudo.n_rows)
        if not math.isfinite(obj.penalized):
            raise FitError(f"non-finite objective in outer iteration {it}", best)
        if math.isinf(prev):
            stop = math.isinf(cfg.tol)
        else:
            stop = obj.penalized > prev - cfg.tol * abs(prev)
        accepted = obj.penalized < prev
        trace.append(OuterStep(it, theta_new, path.lambda_, obj.neg2loglik, obj.penalty,
                               obj.penalized, int(np.count_nonzero(coef_new[1:])),
                               tres.n_evals, path.n_iter, accepted))
        if accepted:
            coef, theta, lam, prev = coef_new, theta_new, path.lambda_, obj.penalized
            best = (coef, theta, lam, prev)
        if stop:
            converged = True
            break

    accepted_steps = [s for s in trace if s.accepted]
    return FitResult(
        coef=coef, theta_hat=theta, lambda_hat=lam, trace=trace, converged=converged,
        n_outer=len(trace), nm_evals=nm_total, cd_iters=cd_total,
        wall_time=time.perf_counter() - t_start, x_mean=mu, x_sd=sd, m=m,
        objective=accepted_steps[-1].objective if accepted_steps else math.nan,
        names=list(names) if names is not None else None, init_coef=init_path.beta.copy())
