"""SCAD penalty, coordinate descent and cross-validated lambda selection.

The solver works in Gram form on columns scaled to unit second moment
(``mean(x_j^2) = 1``), without centering: pseudo-data have no constant
column, so the intercept is just another (unpenalized) column. Coefficients
are returned on the caller's scale.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from ._backend import kernels

__all__ = [
    "DEFAULT_A",
    "ScadParams",
    "CDResult",
    "SolutionPath",
    "scad_value",
    "scad_threshold",
    "coordinate_descent",
    "lambda_grid",
    "fit_path",
    "select_lambda_cv",
]

DEFAULT_A = 3.7


@dataclass(frozen=True)
class ScadParams:
    """SCAD concavity ``a`` (> 2) and level ``lam`` (>= 0, standardized scale)."""

    lam: float = 0.0
    a: float = DEFAULT_A

    def __post_init__(self):
        if not self.a > 2:
            raise ValueError("SCAD requires a > 2")
        if not self.lam >= 0:
            raise ValueError("lambda must be nonnegative")


def _unpack(lam, a):
    if isinstance(lam, ScadParams):
        return lam.lam, lam.a
    return float(lam), float(a)


def scad_value(beta, lam: Union[float, ScadParams], a: float = DEFAULT_A):
    """SCAD penalty ``P_lambda(beta)``, elementwise.

    ``lam |b|`` up to ``lam``, a quadratic blend up to ``a lam``, then the
    constant ``lam^2 (a + 1) / 2``.
    """
    lam, a = _unpack(lam, a)
    b = np.abs(np.asarray(beta, dtype=float))
    out = np.where(
        b <= lam,
        lam * b,
        np.where(b <= a * lam,
                 (2.0 * a * lam * b - b * b - lam * lam) / (2.0 * (a - 1.0)),
                 lam * lam * (a + 1.0) / 2.0),
    )
    return out if out.ndim else float(out)


def _soft(z, t):
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


def scad_threshold(z, lam: Union[float, ScadParams], a: float = DEFAULT_A):
    """Minimizer of ``0.5 (z - b)^2 + P_lambda(b)`` for a unit-scaled column."""
    lam, a = _unpack(lam, a)
    z = np.asarray(z, dtype=float)
    az = np.abs(z)
    out = np.where(
        az <= 2.0 * lam,
        _soft(z, lam),
        np.where(az <= a * lam,
                 _soft(z, a * lam / (a - 1.0)) / (1.0 - 1.0 / (a - 1.0)),
                 z),
    )
    return out if out.ndim else float(out)


# --------------------------------------------------------------------------- #
# Solvers
# --------------------------------------------------------------------------- #

def _design(pseudo_or_X, z=None):
    if z is None:
        return np.asarray(pseudo_or_X.X_tilde, float), np.asarray(pseudo_or_X.z_tilde, float)
    return np.asarray(pseudo_or_X, float), np.asarray(z, float)


def _scales(X):
    s = np.sqrt(np.mean(X * X, axis=0))
    dead = ~(s > 0)
    s = np.where(dead, 1.0, s)
    return s, dead


def _gram(X, z, s):
    N = X.shape[0]
    Xs = X / s
    G = np.ascontiguousarray(Xs.T @ Xs / N)
    c = np.ascontiguousarray(Xs.T @ z / N)
    return G, c


def _unpenalized_start(G, c, pen, dead):
    b = np.zeros(G.shape[0])
    u = np.flatnonzero(~pen & ~dead)
    if u.size:
        b[u] = np.linalg.lstsq(G[np.ix_(u, u)], c[u], rcond=None)[0]
    return b


@dataclass
class CDResult:
    beta: np.ndarray
    n_iter: int
    converged: bool
    trace: Optional[list] = None


def coordinate_descent(pseudo, p: ScadParams, beta0=None, tol: float = 1e-7,
                       max_iter: int = 1000, penalized=None, record: bool = False,
                       z=None) -> CDResult:
    """SCAD coordinate descent at a single lambda.

    Parameters
    ----------
    pseudo : PseudoData, or a design matrix when ``z`` is given
    p : ScadParams
    beta0 : starting coefficients on the original scale (default zero)
    tol : stop when the largest standardized update falls below
        ``tol * rms(z)``
    max_iter : cap on sweeps; exceeding it warns and returns the last iterate
    penalized : boolean mask, default all True
    record : keep the objective after every sweep in ``trace``
    """
    X, y = _design(pseudo, z)
    N, q = X.shape
    pen = np.ones(q, bool) if penalized is None else np.asarray(penalized, bool)
    s, dead = _scales(X)
    G, c = _gram(X, y, s)
    b0 = np.zeros(q) if beta0 is None else np.asarray(beta0, float) * s
    b0[dead] = 0.0
    tol_eff = tol * max(float(np.sqrt(np.mean(y * y))), 1e-300)
    betas, iters, conv, trace = kernels.scad_cd_path(
        G, c, np.array([p.lam], float), p.a, pen.view(np.uint8), b0, tol_eff,
        int(max_iter), bool(record))
    if not conv[0]:
        warnings.warn(f"coordinate descent hit max_iter={max_iter} before converging",
                      RuntimeWarning, stacklevel=2)
    return CDResult(np.asarray(betas)[0] / s, int(iters[0]), bool(conv[0]), trace)


def lambda_grid(X, z, penalized=None, n_lambda: int = 100, ratio: float = 1e-3) -> np.ndarray:
    """Geometric grid from ``lambda_max`` down to ``ratio * lambda_max``.

    ``lambda_max = max_j |x_j' r| / N`` over penalized unit-scaled columns,
    where ``r`` is the residual after fitting the unpenalized columns; at
    that level the all-zero penalized solution is stationary.
    """
    X, z = np.asarray(X, float), np.asarray(z, float)
    q = X.shape[1]
    pen = np.ones(q, bool) if penalized is None else np.asarray(penalized, bool)
    s, dead = _scales(X)
    G, c = _gram(X, z, s)
    b = _unpenalized_start(G, c, pen, dead)
    # the solver thresholds grad_j / G_jj, and G_jj is 1 only up to rounding
    grad = (c - G @ b) / np.where(dead, 1.0, np.diag(G))
    live = pen & ~dead
    lmax = float(np.max(np.abs(grad[live]))) if live.any() else 0.0
    if not lmax > 0:
        lmax = 1.0
    return lmax * np.geomspace(1.0, ratio, n_lambda)


def fit_path(X, z, lambdas, a: float = DEFAULT_A, penalized=None, tol: float = 1e-7,
             max_iter: int = 1000):
    """Warm-started path; returns ``(betas, iters, converged, scale)``.

    ``betas`` has one row per lambda on the original column scale. Penalized
    coefficients start at zero so the first (largest) lambda gives the empty
    model; unpenalized ones start at their least-squares values.
    """
    X, z = np.asarray(X, float), np.asarray(z, float)
    q = X.shape[1]
    pen = np.ones(q, bool) if penalized is None else np.asarray(penalized, bool)
    s, dead = _scales(X)
    G, c = _gram(X, z, s)
    b0 = _unpenalized_start(G, c, pen, dead)
    tol_eff = tol * max(float(np.sqrt(np.mean(z * z))), 1e-300)
    betas, iters, conv, _ = kernels.scad_cd_path(
        G, c, np.asarray(lambdas, float), a, pen.view(np.uint8), b0, tol_eff,
        int(max_iter), False)
    return np.asarray(betas) / s, np.asarray(iters), np.asarray(conv), s


@dataclass
class SolutionPath:
    """Lambda path with cross-validation summary and the selected model."""

    lambdas: np.ndarray
    betas: np.ndarray
    cv_mse: np.ndarray
    cv_se: np.ndarray
    index: int
    scale: np.ndarray
    penalized: np.ndarray
    n_iter: int
    converged: bool

    @property
    def lambda_(self) -> float:
        return float(self.lambdas[self.index])

    @property
    def beta(self) -> np.ndarray:
        return self.betas[self.index]

    @property
    def nnz(self) -> np.ndarray:
        return np.count_nonzero(self.betas[:, self.penalized], axis=1)


def fold_ids(n_rows: int, k_folds: int, seed) -> np.ndarray:
    """Balanced random fold labels, deterministic in ``seed``."""
    if k_folds < 2:
        raise ValueError("k_folds must be at least 2")
    if n_rows < k_folds:
        raise ValueError(f"{n_rows} rows cannot fill {k_folds} folds")
    rng = np.random.default_rng(seed)
    return rng.permutation(n_rows) % k_folds


def select_lambda_cv(pseudo, p_base: ScadParams = ScadParams(), k_folds: int = 10,
                     seed=0, penalized=None, n_lambda: int = 100,
                     lambda_ratio: float = 1e-3, tol: float = 1e-7,
                     max_iter: int = 1000, z=None, groups=None) -> SolutionPath:
    """Fit the SCAD path and pick lambda by k-fold cross-validated MSE.

    Folds are drawn over rows. Rows sharing a ``groups`` label (by default
    the pseudo-data's own labels: the two pseudo-rows of one observation)
    go to the same fold. Each training fold is rescaled on its own rows and
    fitted on the full-data grid.
    """
    X, y = _design(pseudo, z)
    N, q = X.shape
    pen = np.ones(q, bool) if penalized is None else np.asarray(penalized, bool)
    if groups is None and z is None:
        groups = getattr(pseudo, "groups", None)
    if groups is None:
        folds = fold_ids(N, k_folds, seed)
    else:
        labels, inv = np.unique(np.asarray(groups), return_inverse=True)
        if inv.size != N:
            raise ValueError("groups must have one label per row")
        folds = fold_ids(labels.size, k_folds, seed)[inv.reshape(-1)]
    lambdas = lambda_grid(X, y, pen, n_lambda, lambda_ratio)
    betas, iters, conv, scale = fit_path(X, y, lambdas, p_base.a, pen, tol, max_iter)
    total_iter = int(iters.sum())
    sse = np.zeros((k_folds, lambdas.size))
    counts = np.zeros(k_folds)
    for f in range(k_folds):
        test = folds == f
        bf, it, _, _ = fit_path(X[~test], y[~test], lambdas, p_base.a, pen, tol, max_iter)
        total_iter += int(it.sum())
        resid = y[test][:, None] - X[test] @ bf.T
        sse[f] = np.sum(resid * resid, axis=0)
        counts[f] = test.sum()
    cv = sse.sum(axis=0) / N
    fold_mse = sse / counts[:, None]
    se = fold_mse.std(axis=0, ddof=1) / np.sqrt(k_folds)
    idx = int(np.argmin(cv))
    return SolutionPath(lambdas, betas, cv, se, idx, scale, pen, total_iter, bool(conv.all()))
