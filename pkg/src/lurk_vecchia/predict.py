"""Joint kriging prediction with the response-first plan.

The latent field at observed and prediction coordinates is conditioned on
the observed responses. Its posterior precision is ``W_all = A_all A_all'``
and its mean is

    mu_all = X_all beta - W_all^{-1} A_all B_all' (z - X beta),

with variances read off the selected inverse of ``W_all``. Uncertainty in
``beta`` is ignored.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .geometry import CovParams, as_coord_array, latent_cov_matrix
from .ordering import build_prediction_plan
from .sparse_core import build_factor

__all__ = ["PredictionResult", "predict", "predict_from_theta", "joint_posterior_summaries"]


@dataclass
class PredictionResult:
    """Latent mean and variance at prediction coordinates (input order)."""

    mu: np.ndarray
    var: np.ndarray
    var_noisy: np.ndarray

    @property
    def mu_P(self) -> np.ndarray:
        return self.mu

    @property
    def var_P(self) -> np.ndarray:
        return self.var

    @property
    def var_P_noisy(self) -> np.ndarray:
        return self.var_noisy

    @property
    def sd(self) -> np.ndarray:
        return np.sqrt(self.var)

    @property
    def sd_noisy(self) -> np.ndarray:
        return np.sqrt(self.var_noisy)

    def __len__(self) -> int:
        return self.mu.shape[0]


def _empty() -> PredictionResult:
    return PredictionResult(np.zeros(0), np.zeros(0), np.zeros(0))


def _dense_kriging(eps, obs_xyt, pred_xyt, theta: CovParams):
    S = latent_cov_matrix(obs_xyt, theta)
    S[np.diag_indices_from(S)] += theta.tau2
    cf = cho_factor(S, lower=True, check_finite=False)
    Cpo = latent_cov_matrix(pred_xyt, theta, obs_xyt)
    mean_off = Cpo @ cho_solve(cf, eps, check_finite=False)
    var = theta.sigma2 - np.einsum("ij,ji->i", Cpo, cho_solve(cf, Cpo.T, check_finite=False))
    return mean_off, var


def _joint(eps, obs_xyt, pred_xyt, theta, m):
    plan = build_prediction_plan(obs_xyt, pred_xyt, theta, m)
    factor = build_factor(plan, theta)
    r = factor.B.T @ eps[plan.obs_order]
    w = factor.chol.solve_W(factor.A @ r)
    return plan, factor, w


def predict_from_theta(theta: CovParams, eps, obs_coords, pred_coords, m: int,
                       exact_shortcut: bool = True) -> PredictionResult:
    """Zero-mean kriging of residuals ``eps``; the caller adds the trend.

    Returns offsets ``mu`` (to be added to ``X_P beta``) and variances.
    """
    obs_xyt = as_coord_array(obs_coords)
    pred_xyt = np.asarray(getattr(pred_coords, "xyt", pred_coords), float).reshape(-1, 3)
    eps = np.asarray(eps, float)
    n, npred = obs_xyt.shape[0], pred_xyt.shape[0]
    if npred == 0:
        return _empty()
    if exact_shortcut and m >= n + npred - 1:
        off, var = _dense_kriging(eps, obs_xyt, pred_xyt, theta)
    else:
        plan, factor, w = _joint(eps, obs_xyt, pred_xyt, theta, m)
        var_all = factor.chol.selected_inverse().diag()
        off = np.empty(npred)
        var = np.empty(npred)
        off[plan.pred_order] = -w[n:]
        var[plan.pred_order] = var_all[n:]
    var = np.maximum(var, 0.0)
    return PredictionResult(off, var, var + theta.tau2)


def _unpack(fit, obs, pred):
    z, coords, X = obs
    coords_P, X_P = pred
    z = np.asarray(z, float)
    X = np.asarray(X, float).reshape(z.size, -1)
    X_P = np.asarray(X_P, float)
    pred_xyt = np.asarray(getattr(coords_P, "xyt", coords_P), float).reshape(-1, 3)
    X_P = X_P.reshape(pred_xyt.shape[0], X.shape[1] if X_P.size == 0 else -1)
    if X.shape[1] != fit.x_mean.size or X_P.shape[1] != fit.x_mean.size:
        raise ValueError("covariate columns do not match the fitted model")
    eps = z - fit.mean(X)
    return eps, as_coord_array(coords), pred_xyt, X_P


def predict(fit, obs: Tuple, pred: Tuple, m: Optional[int] = None,
            exact_shortcut: bool = True) -> PredictionResult:
    """Kriging mean and variance at new coordinates from a fitted model.

    Parameters
    ----------
    fit : FitResult
    obs : ``(z, coords, X)`` used for the fit
    pred : ``(coords_P, X_P)``
    m : conditioning size for the joint plan (default: the fit's ``m``)
    """
    eps, obs_xyt, pred_xyt, X_P = _unpack(fit, obs, pred)
    if pred_xyt.shape[0] == 0:
        return _empty()
    m = fit.m if m is None else int(m)
    out = predict_from_theta(fit.theta_hat, eps, obs_xyt, pred_xyt, m, exact_shortcut)
    out.mu = fit.mean(X_P) + out.mu
    return out


def joint_posterior_summaries(fit, obs: Tuple, pred: Tuple, m: Optional[int] = None,
                              pairs: Sequence[Tuple[int, int]] = ()) -> np.ndarray:
    """Posterior covariances between prediction points ``(i, j)``.

    Indices refer to rows of the prediction set. Only pairs inside the
    pattern of the joint factor are available; others raise
    :class:`~lurk_vecchia.sparse_core.NotSelectedInvertibleError`.
    """
    pairs = list(pairs)
    if not pairs:
        return np.zeros(0)
    eps, obs_xyt, pred_xyt, _ = _unpack(fit, obs, pred)
    m = fit.m if m is None else int(m)
    plan, factor, _ = _joint(eps, obs_xyt, pred_xyt, fit.theta_hat, m)
    n = plan.n
    pos = np.empty(plan.n_pred, dtype=np.int64)
    pos[plan.pred_order] = np.arange(plan.n_pred)
    idx = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if np.any((idx < 0) | (idx >= plan.n_pred)):
        raise IndexError("prediction index out of range")
    sel = factor.chol.selected_inverse()
    return sel.entries(n + pos[idx[:, 0]], n + pos[idx[:, 1]])
