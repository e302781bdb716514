"""Comparison methods sharing one prediction interface.

``lur-iid``
    SCAD regression with independent errors.
``lurk-local``
    LUR-iid coefficients, covariance parameters averaged over small random
    subsamples of residuals, local kriging of residuals at prediction time.
``local-kriging``
    Same as ``lurk-local`` without covariates (constant mean).
``lurk-full``
    The main estimator with complete conditioning.
``lurk-vecchia``
    The main estimator with ``m`` nearest neighbours.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize
from scipy.spatial import cKDTree

from .estimate import EstimationConfig, FitResult, fit, initialize_theta, standardize
from .geometry import CoordLike, CovParams, as_coord_array, observed_cov_matrix, scaled_coords
from .penalty import ScadParams, select_lambda_cv
from .predict import PredictionResult, predict

__all__ = [
    "METHODS",
    "BaselineFit",
    "dense_ml",
    "local_kriging",
    "fit_lur_iid",
    "fit_lurk_local",
    "fit_local_kriging",
    "fit_lurk_full",
    "fit_lurk_vecchia",
    "fit_method",
    "FULL_MAX_N",
    "rebuild_fit",
]

METHODS = ("lurk-vecchia", "lurk-full", "lurk-local", "lur-iid", "local-kriging")
FULL_MAX_N = 2000


@dataclass
class BaselineFit:
    """A fitted method with a uniform ``predict(coords_P, X_P)`` closure.

    ``coef`` is on the standardized design ``[1, (X - x_mean) / x_sd]`` and
    ``None`` for methods without covariates.
    """

    method: str
    coef: Optional[np.ndarray]
    theta: Optional[CovParams]
    _predict: Callable
    x_mean: Optional[np.ndarray] = None
    x_sd: Optional[np.ndarray] = None
    extra: Optional[object] = None      # FitResult, or a dict of method details

    @property
    def beta_hat(self) -> Optional[np.ndarray]:
        return None if self.coef is None else self.coef[1:]

    def predict(self, coords_P, X_P=None) -> PredictionResult:
        return self._predict(coords_P, X_P)


def _design(X, mu, sd):
    X = np.asarray(X, float).reshape(-1, mu.size)
    return np.column_stack([np.ones(X.shape[0]), (X - mu) / sd])


def fit_lur_iid(z, X, k_folds: int = 10, seed: int = 0, a: float = 3.7,
                cfg: Optional[EstimationConfig] = None) -> BaselineFit:
    """SCAD-penalized least squares with an unpenalized intercept.

    The predictive variance is the residual mean square, for latent and
    response prediction alike.
    """
    z = np.asarray(z, float)
    X = np.asarray(X, float).reshape(z.size, -1)
    if cfg is not None:
        k_folds, seed, a = cfg.k_folds, cfg.seed, cfg.scad_a
        extra = dict(n_lambda=cfg.n_lambda, lambda_ratio=cfg.lambda_ratio,
                     tol=cfg.cd_tol, max_iter=cfg.cd_max_iter)
    else:
        extra = {}
    Xs, mu, sd = standardize(X)
    D = np.column_stack([np.ones(z.size), Xs])
    pen = np.r_[False, np.ones(X.shape[1], bool)]
    path = select_lambda_cv(D, ScadParams(0.0, a), k_folds=k_folds, seed=seed,
                            penalized=pen, z=z, **extra)
    coef = path.beta.copy()
    resid = z - D @ coef
    s2 = float(np.mean(resid * resid))

    def _pred(coords_P, X_P):
        DP = _design(X_P, mu, sd)
        v = np.full(DP.shape[0], s2)
        return PredictionResult(DP @ coef, v, v.copy())

    return BaselineFit("lur-iid", coef, None, _pred, mu, sd,
                       {"path": path, "residual_variance": s2})


# --------------------------------------------------------------------------- #
# Dense ML on subsamples and local kriging
# --------------------------------------------------------------------------- #

def _dense_neg2ll(r, xyt, theta):
    S = observed_cov_matrix(xyt, theta)
    try:
        cf = cho_factor(S, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        return math.inf
    return float(r @ cho_solve(cf, r, check_finite=False)
                 + 2.0 * np.sum(np.log(np.diag(cf[0]))))


def dense_ml(r, coords: CoordLike, theta0: CovParams, max_evals: int = 300,
             log_bound: float = math.log(1000.0)):
    """Zero-mean Gaussian ML for ``theta`` by Nelder-Mead on log-parameters.

    Returns ``(theta, value)``; ``value`` is ``inf`` if nothing finite was found.
    """
    r = np.asarray(r, float)
    xyt = as_coord_array(coords)
    x0 = theta0.to_log()
    bounds = list(zip(x0 - log_bound, x0 + log_bound))

    def f(x):
        try:
            v = _dense_neg2ll(r, xyt, CovParams.from_log(x))
        except ValueError:
            return math.inf
        return v if math.isfinite(v) else math.inf

    sim = np.vstack([x0] + [x0 + 0.5 * e for e in np.eye(4)])
    res = minimize(f, x0, method="Nelder-Mead", bounds=bounds,
                   options={"initial_simplex": sim, "maxfev": max_evals,
                            "xatol": 1e-4, "fatol": 1e-8})
    return CovParams.from_log(res.x), float(res.fun)


def _subsample_theta(r, xyt, theta0, m, k, seed, l=None, average="arithmetic",
                     max_evals=300):
    n = r.size
    if l is None:
        l = int(round((m * n / k) ** (1.0 / 3.0)))
    l = min(int(l), n)
    if l < 4:
        raise ValueError(f"subsample size {l} is below 4; increase m or n")
    rng = np.random.default_rng(seed)
    ests = []
    for _ in range(k):
        for attempt in range(4):
            idx = np.sort(rng.choice(n, size=l, replace=False)) if l < n else np.arange(n)
            th, val = dense_ml(r[idx], xyt[idx], theta0, max_evals)
            if math.isfinite(val):
                ests.append(th.as_tuple())
                break
        else:
            raise ArithmeticError("subsample likelihood failed after 3 redraws")
    E = np.asarray(ests)
    if average == "log":
        vals = np.exp(np.log(E).mean(axis=0))
    elif average == "arithmetic":
        vals = E.mean(axis=0)
    else:
        raise ValueError("average must be 'arithmetic' or 'log'")
    return CovParams(*vals), E, l


def local_kriging(r, obs_coords, pred_coords, theta: CovParams, m: int,
                  chunk: int = 2048) -> PredictionResult:
    """Simple (zero-mean) kriging of ``r`` from the ``m`` nearest observations."""
    obs = as_coord_array(obs_coords)
    pred = np.asarray(getattr(pred_coords, "xyt", pred_coords), float).reshape(-1, 3)
    r = np.asarray(r, float)
    npred = pred.shape[0]
    if npred == 0:
        return PredictionResult(np.zeros(0), np.zeros(0), np.zeros(0))
    k = min(int(m), obs.shape[0])
    So = scaled_coords(obs, theta)
    Sp = scaled_coords(pred, theta)
    mu = np.zeros(npred)
    var = np.full(npred, theta.sigma2)
    if k == 0:
        return PredictionResult(mu, var, var + theta.tau2)
    tree = cKDTree(So)
    for lo in range(0, npred, chunk):
        hi = min(npred, lo + chunk)
        _, nb = tree.query(Sp[lo:hi], k=k)
        nb = nb.reshape(hi - lo, k)
        P = So[nb]
        dd = P[:, :, None, :] - P[:, None, :, :]
        K = theta.sigma2 * np.exp(-np.sqrt(np.einsum("bijk,bijk->bij", dd, dd)))
        K += theta.tau2 * np.eye(k)
        dp = P - Sp[lo:hi, None, :]
        c = theta.sigma2 * np.exp(-np.sqrt(np.einsum("bik,bik->bi", dp, dp)))
        w = np.linalg.solve(K, c[:, :, None])[:, :, 0]
        mu[lo:hi] = np.einsum("bi,bi->b", w, r[nb])
        var[lo:hi] = theta.sigma2 - np.einsum("bi,bi->b", w, c)
    var = np.maximum(var, 0.0)
    return PredictionResult(mu, var, var + theta.tau2)


def _residual_theta0(r, xyt):
    return initialize_theta(r, np.zeros((r.size, 0)), xyt)


def fit_lurk_local(z, coords: CoordLike, X, m: int = 25, k: int = 10, seed: int = 0,
                   average: str = "arithmetic", l: Optional[int] = None,
                   lur: Optional[BaselineFit] = None, k_folds: int = 10,
                   max_evals: int = 300) -> BaselineFit:
    """LUR-iid coefficients plus local kriging of its residuals.

    Covariance parameters average ``k`` dense ML fits on random residual
    subsamples of size ``l = round((m n / k)^(1/3))``.
    """
    z = np.asarray(z, float)
    xyt = as_coord_array(coords)
    lur = lur or fit_lur_iid(z, X, k_folds=k_folds, seed=seed)
    X = np.asarray(X, float).reshape(z.size, -1)
    r = z - _design(X, lur.x_mean, lur.x_sd) @ lur.coef
    theta, E, l_used = _subsample_theta(r, xyt, _residual_theta0(r, xyt), m, k, seed, l,
                                        average, max_evals)
    coef, mu_x, sd_x = lur.coef, lur.x_mean, lur.x_sd

    def _pred(coords_P, X_P):
        out = local_kriging(r, xyt, coords_P, theta, m)
        out.mu = _design(X_P, mu_x, sd_x) @ coef + out.mu
        return out

    return BaselineFit("lurk-local", coef.copy(), theta, _pred, mu_x, sd_x,
                       {"subsample_estimates": E, "l": l_used, "m": int(m),
                        "lambda": lur.extra["path"].lambda_})


def fit_local_kriging(z, coords: CoordLike, m: int = 25, k: int = 10, seed: int = 0,
                      average: str = "arithmetic", l: Optional[int] = None,
                      max_evals: int = 300) -> BaselineFit:
    """Kriging with a constant mean (the sample mean) and no covariates."""
    z = np.asarray(z, float)
    xyt = as_coord_array(coords)
    zbar = float(z.mean())
    r = z - zbar
    if not np.any(r != 0):
        # constant field: nothing to krige
        theta = CovParams(1e-8, 1.0, 1.0, 0.0)

        def _const(coords_P, X_P=None):
            npred = np.asarray(getattr(coords_P, "xyt", coords_P)).reshape(-1, 3).shape[0]
            zero = np.zeros(npred)
            return PredictionResult(np.full(npred, zbar), zero, zero.copy())

        return BaselineFit("local-kriging", None, theta, _const,
                           extra={"mean": zbar, "m": int(m)})
    theta, E, l_used = _subsample_theta(r, xyt, _residual_theta0(r, xyt), m, k, seed, l,
                                        average, max_evals)

    def _pred(coords_P, X_P=None):
        out = local_kriging(r, xyt, coords_P, theta, m)
        out.mu = zbar + out.mu
        return out

    return BaselineFit("local-kriging", None, theta, _pred,
                       extra={"mean": zbar, "subsample_estimates": E, "l": l_used, "m": int(m)})


def _wrap_fit(method, res: FitResult, z, xyt, X, pred_m=None) -> BaselineFit:
    obs = (z, xyt, X)

    def _pred(coords_P, X_P):
        return predict(res, obs, (coords_P, X_P), m=pred_m)

    return BaselineFit(method, res.coef.copy(), res.theta_hat, _pred, res.x_mean, res.x_sd, res)


def fit_lurk_vecchia(z, coords: CoordLike, X, cfg: Optional[EstimationConfig] = None,
                     pred_m: Optional[int] = None) -> BaselineFit:
    cfg = cfg or EstimationConfig()
    z = np.asarray(z, float)
    xyt = as_coord_array(coords)
    res = fit(z, xyt, X, cfg)
    return _wrap_fit("lurk-vecchia", res, z, xyt, X, pred_m)


def fit_lurk_full(z, coords: CoordLike, X, cfg: Optional[EstimationConfig] = None) -> BaselineFit:
    """The main estimator with ``m = n - 1`` (exact likelihood)."""
    z = np.asarray(z, float)
    n = z.size
    if n > FULL_MAX_N:
        raise ValueError(f"lurk-full is limited to n <= {FULL_MAX_N} (got {n}); "
                         "use lurk-vecchia for larger data")
    cfg = replace(cfg or EstimationConfig(), m=n - 1)
    xyt = as_coord_array(coords)
    res = fit(z, xyt, X, cfg)
    return _wrap_fit("lurk-full", res, z, xyt, X)


def fit_method(method: str, z, coords: CoordLike, X, cfg: Optional[EstimationConfig] = None,
               k: int = 10, lur: Optional[BaselineFit] = None) -> BaselineFit:
    """Dispatch by method name; ``cfg`` supplies ``m``, folds and seed."""
    cfg = cfg or EstimationConfig()
    if method == "lurk-vecchia":
        return fit_lurk_vecchia(z, coords, X, cfg)
    if method == "lurk-full":
        return fit_lurk_full(z, coords, X, cfg)
    if method == "lur-iid":
        return fit_lur_iid(z, X, cfg=cfg)
    if method == "lurk-local":
        return fit_lurk_local(z, coords, X, m=cfg.m, k=k, seed=cfg.seed, lur=lur,
                              k_folds=cfg.k_folds)
    if method == "local-kriging":
        return fit_local_kriging(z, coords, m=cfg.m, k=k, seed=cfg.seed)
    raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")


def rebuild_fit(method: str, z, coords: CoordLike, X, coef=None, theta: Optional[CovParams] = None,
                x_mean=None, x_sd=None, info: Optional[dict] = None) -> BaselineFit:
    """Reconstruct a predictor from stored estimates and the training data.

    ``info`` carries the method-specific scalars: ``m`` for the kriging
    methods, ``residual_variance`` for ``lur-iid`` and ``mean`` for
    ``local-kriging``.
    """
    info = dict(info or {})
    z = np.asarray(z, float)
    xyt = as_coord_array(coords)
    if method in ("lurk-vecchia", "lurk-full"):
        res = FitResult(coef=np.asarray(coef, float), theta_hat=theta,
                        lambda_hat=float(info.get("lambda_hat", math.nan)), trace=[],
                        converged=bool(info.get("converged", True)), n_outer=0, nm_evals=0,
                        cd_iters=0, wall_time=0.0, x_mean=np.asarray(x_mean, float),
                        x_sd=np.asarray(x_sd, float), m=int(info["m"]),
                        objective=float(info.get("objective", math.nan)))
        return _wrap_fit(method, res, z, xyt, X)
    if method == "lur-iid":
        coef = np.asarray(coef, float)
        mu, sd, s2 = np.asarray(x_mean, float), np.asarray(x_sd, float), float(info["residual_variance"])

        def _pred(coords_P, X_P):
            DP = _design(X_P, mu, sd)
            v = np.full(DP.shape[0], s2)
            return PredictionResult(DP @ coef, v, v.copy())

        return BaselineFit(method, coef, None, _pred, mu, sd, info)
    if method == "lurk-local":
        coef = np.asarray(coef, float)
        mu, sd, m = np.asarray(x_mean, float), np.asarray(x_sd, float), int(info["m"])
        r = z - _design(X, mu, sd) @ coef

        def _pred(coords_P, X_P):
            out = local_kriging(r, xyt, coords_P, theta, m)
            out.mu = _design(X_P, mu, sd) @ coef + out.mu
            return out

        return BaselineFit(method, coef, theta, _pred, mu, sd, info)
    if method == "local-kriging":
        zbar, m = float(info["mean"]), int(info["m"])
        r = z - zbar

        def _pred(coords_P, X_P=None):
            out = local_kriging(r, xyt, coords_P, theta, m)
            out.mu = zbar + out.mu
            return out

        return BaselineFit(method, None, theta, _pred, extra=info)
    raise ValueError(f"unknown method {method!r}")
