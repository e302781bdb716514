"""Vecchia objective in residual form and pseudo-data form.

Both forms omit the additive ``n log(2 pi)`` constant. For a residual
``e = z - X beta``::

    -2 log f(z) = |B'e|^2 - |V^{-1} A B'e|^2 - 2 sum log U_ii + 2 sum log V_ii

and the pseudo-data ``z~ = B'z - A'W^{-1}AB'z`` (same map for ``X``) satisfy
``|z~ - X~ beta|^2 = |B'e|^2 - |V^{-1} A B'e|^2``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .geometry import CovParams, latent_cov_matrix
from .penalty import DEFAULT_A, scad_value
from .sparse_core import VecchiaFactorError, build_factor

__all__ = [
    "PseudoData",
    "ObjectiveValue",
    "DenseFactor",
    "factorize",
    "neg2loglik_direct",
    "make_pseudo_data",
    "logdet_terms",
    "penalized_objective",
]


@dataclass
class PseudoData:
    """Decorrelated response and design: an i.i.d. least-squares problem.

    ``groups`` labels the observation each pseudo-row belongs to (a latent
    row and a response row per observation); cross-validation keeps a group
    in one fold.
    """

    z_tilde: np.ndarray
    X_tilde: np.ndarray
    groups: Optional[np.ndarray] = None

    def __post_init__(self):
        self.z_tilde = np.asarray(self.z_tilde, dtype=float)
        self.X_tilde = np.asarray(self.X_tilde, dtype=float)
        if self.X_tilde.ndim != 2 or self.X_tilde.shape[0] != self.z_tilde.shape[0]:
            raise ValueError("X_tilde must be a matrix with one row per pseudo-observation")
        if self.groups is not None:
            self.groups = np.asarray(self.groups, dtype=np.int64)
            if self.groups.shape != self.z_tilde.shape:
                raise ValueError("groups must have one label per pseudo-row")
        if not (np.all(np.isfinite(self.z_tilde)) and np.all(np.isfinite(self.X_tilde))):
            raise VecchiaFactorError("pseudo-data contain non-finite values")

    @property
    def n_rows(self) -> int:
        return self.z_tilde.shape[0]


@dataclass(frozen=True)
class ObjectiveValue:
    penalized: float
    neg2loglik: float
    penalty: float


class DenseFactor:
    """Exact Gaussian likelihood used when every conditioning set is full.

    With complete conditioning the Vecchia factorization is exact, and the
    generic sparse path costs far more than a dense Cholesky. This class
    gives the same objective and pseudo-data (rows ``L'S^{-1}z`` for the
    latent variables and ``tau S^{-1}z`` for the responses, ``C = L L'``,
    ``S = C + tau^2 I``) at dense cost.
    """

    def __init__(self, coords_ordered: np.ndarray, params: CovParams, order=None):
        self.params = params
        self.order = None if order is None else np.asarray(order)
        self.C = latent_cov_matrix(coords_ordered, params)
        S = self.C.copy()
        S[np.diag_indices_from(S)] += params.tau2
        try:
            self._S = cho_factor(S, lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise VecchiaFactorError("observed covariance is not positive definite") from exc
        self._logdet = 2.0 * float(np.sum(np.log(np.diag(self._S[0]))))
        self._LC = None

    def _frame(self, v):
        v = np.asarray(v, dtype=float)
        return v if self.order is None else v[self.order]

    def neg2loglik(self, residual) -> float:
        e = self._frame(residual)
        return float(e @ cho_solve(self._S, e, check_finite=False)) + self._logdet

    def pseudo_data(self, z, X) -> PseudoData:
        if self._LC is None:
            try:
                self._LC = np.linalg.cholesky(self.C)
            except np.linalg.LinAlgError:
                C = self.C.copy()
                C[np.diag_indices_from(C)] += 1e-10 * np.trace(C) / C.shape[0]
                self._LC = np.linalg.cholesky(C)
        Z = np.column_stack([self._frame(z), self._frame(X)])
        SiZ = cho_solve(self._S, Z, check_finite=False)
        n = Z.shape[0]
        out = np.empty((2 * n, Z.shape[1]))
        out[0::2] = self._LC.T @ SiZ
        out[1::2] = self.params.tau * SiZ
        return PseudoData(out[:, 0], out[:, 1:], np.arange(2 * n) // 2)


def factorize(plan, params: CovParams, exact_shortcut: bool = True):
    """Factor for a plan: dense when the plan has full conditioning, else sparse."""
    if exact_shortcut and plan.is_full:
        return DenseFactor(plan.coords, params, plan.order)
    return build_factor(plan, params)


def _frame(factor, v):
    order = getattr(factor, "order", None)
    v = np.asarray(v, dtype=float)
    return v if order is None else v[order]


def neg2loglik_direct(factor, residual) -> float:
    """Residual-form ``-2 log f(z)`` without the ``n log 2pi`` constant.

    ``residual`` is ``z - X beta`` in the original observation order.
    """
    if isinstance(factor, DenseFactor):
        return factor.neg2loglik(residual)
    e = _frame(factor, residual)
    if e.shape[0] != factor.B.shape[0]:
        raise ValueError("residual length does not match the factor")
    r = factor.B.T @ e
    t = factor.chol.solve(factor.A @ r)
    val = float(r @ r - t @ t) - 2.0 * factor.logdet_U() + factor.chol.logdet_W()
    if not np.isfinite(val):
        raise VecchiaFactorError("objective is not finite")
    return val


def make_pseudo_data(factor, z, X) -> PseudoData:
    """Pseudo-data ``z~ = B'z - A'W^{-1}AB'z`` and ``X~`` likewise.

    One pair of triangular solves with ``V`` handles ``z`` and all columns of
    ``X`` together.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if isinstance(factor, DenseFactor):
        return factor.pseudo_data(z, X)
    Z = np.column_stack([_frame(factor, z), _frame(factor, X)])
    R = np.asarray(factor.B.T @ Z)
    Wi = factor.chol.solve_W(np.asarray(factor.A @ R))
    out = R - np.asarray(factor.A.T @ Wi)
    return PseudoData(out[:, 0], out[:, 1:], factor.row_groups)


def logdet_terms(factor) -> float:
    """``-2 sum log U_ii + 2 sum log V_ii`` (``log|Sigma|`` for the dense factor)."""
    if isinstance(factor, DenseFactor):
        return factor._logdet
    return -2.0 * factor.logdet_U() + factor.chol.logdet_W()


def penalized_objective(neg2ll: float, beta, lam: float, a: float = DEFAULT_A,
                        scale=None, penalized=None, weight: float = 1.0) -> ObjectiveValue:
    """``Q = -2 log f + weight * sum_j P_lambda(scale_j beta_j)``.

    ``scale`` maps coefficients to the standardized scale on which lambda is
    defined; ``penalized`` masks unpenalized entries such as the intercept.
    ``weight`` converts the per-row least-squares scale used by the solver
    to the ``-2 log`` scale (``2N`` for ``N`` pseudo-rows).
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    b = np.asarray(beta, dtype=float).reshape(-1)
    if scale is not None:
        b = b * np.asarray(scale, dtype=float)
    if penalized is not None:
        b = b[np.asarray(penalized, bool)]
    pen = float(weight * np.sum(scad_value(b, lam, a))) if lam > 0 else 0.0
    return ObjectiveValue(float(neg2ll) + pen, float(neg2ll), pen)
