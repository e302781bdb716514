"""Sparse triangular factors for the general Vecchia approximation.

``U`` is upper triangular with one column per variable of the interleaved
vector; ``A`` and ``B`` are its latent and response rows, ``W = A A'`` is the
posterior precision of the latent field and ``V`` its Cholesky factor in
reverse ordering (``W = V V'`` with ``V`` upper triangular).

Internally ``V`` is held as the lower factor ``L`` of ``M = P W P`` where
``P`` reverses indices, so ``V = P L P``. Every operation with ``V`` or
``W^{-1}`` is a pair of sparse triangular solves with ``L``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from ._backend import kernels
from .geometry import CovParams, scaled_coords

__all__ = [
    "VecchiaFactorError",
    "NotSelectedInvertibleError",
    "SparseUpperTri",
    "ReverseCholesky",
    "SelectedInverse",
    "VecchiaFactor",
    "build_U",
    "split_AB",
    "form_W",
    "reverse_cholesky",
    "tri_solve",
    "takahashi_selected_inverse",
    "build_factor",
]


class VecchiaFactorError(ArithmeticError):
    """A local conditioning covariance or W itself is numerically singular."""

    def __init__(self, msg, index=None):
        super().__init__(msg)
        self.index = index


class NotSelectedInvertibleError(KeyError):
    """Requested an entry of W^{-1} outside the factor's sparsity pattern."""


# --------------------------------------------------------------------------- #
# Upper-triangular storage
# --------------------------------------------------------------------------- #

def _reverse_csc(n, indptr, indices, data):
    """``P T P`` for a CSC matrix whose columns are sorted.

    Reversing the flat entry arrays reverses both the column order and the
    row order within each column, so the result is again sorted CSC.
    """
    counts = np.diff(indptr)[::-1]
    rp = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=rp[1:])
    ri = (n - 1 - indices[::-1]).astype(np.int64)
    rx = None if data is None else np.ascontiguousarray(data[::-1])
    return rp, ri, rx


@dataclass
class SparseUpperTri:
    """Upper-triangular CSC matrix with rows sorted and the diagonal last.

    Attributes
    ----------
    n : dimension
    indptr, indices, data : CSC arrays
    """

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    _lower: Optional[tuple] = field(default=None, repr=False)

    def __post_init__(self):
        self.indptr = np.ascontiguousarray(self.indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(self.indices, dtype=np.int64)
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)

    @property
    def diag(self) -> np.ndarray:
        return self.data[self.indptr[1:] - 1]

    @property
    def nnz(self) -> int:
        return int(self.indptr[-1])

    def col_counts(self) -> np.ndarray:
        return np.diff(self.indptr)

    def to_scipy(self) -> sp.csc_matrix:
        return sp.csc_matrix((self.data, self.indices, self.indptr), shape=(self.n, self.n))

    def toarray(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def reversed_lower(self):
        """``(Lp, Li, Lx)`` of the lower-triangular ``P T P``."""
        if self._lower is None:
            self._lower = _reverse_csc(self.n, self.indptr, self.indices, self.data)
        return self._lower

    @classmethod
    def from_reversed_lower(cls, n, Lp, Li, Lx) -> "SparseUpperTri":
        up, ui, ux = _reverse_csc(n, Lp, Li, Lx)
        out = cls(n, up, ui, ux)
        out._lower = (np.asarray(Lp), np.asarray(Li), np.asarray(Lx))
        return out


def _as_2d(rhs):
    b = np.array(rhs, dtype=np.float64, copy=True)
    vec = b.ndim == 1
    if vec:
        b = b[:, None]
    return np.ascontiguousarray(b), vec


def _lower_apply(Lp, Li, Lx, rhs, trans: bool):
    """``L^{-1} rhs`` or ``L^{-T} rhs`` in the reversed frame of ``rhs``."""
    b, vec = _as_2d(rhs)
    b = np.ascontiguousarray(b[::-1])
    if trans:
        kernels.lower_t_solve(Lp, Li, Lx, b)
    else:
        kernels.lower_solve(Lp, Li, Lx, b)
    b = b[::-1]
    return b[:, 0].copy() if vec else np.ascontiguousarray(b)


def tri_solve(T: SparseUpperTri, rhs, trans: bool = False) -> np.ndarray:
    """Solve ``T x = rhs`` (or ``T' x = rhs`` with ``trans``).

    ``rhs`` may be a vector or an ``(n, k)`` matrix. With ``T = P L P`` the
    solve is ``x = P L^{-1} P rhs``, one sparse substitution per column.
    """
    rhs = np.asarray(rhs, dtype=np.float64)
    if rhs.shape[0] != T.n:
        raise ValueError(f"rhs has {rhs.shape[0]} rows, matrix is {T.n}x{T.n}")
    if np.any(T.diag == 0.0):
        raise ZeroDivisionError("triangular matrix has a zero diagonal entry")
    Lp, Li, Lx = T.reversed_lower()
    return _lower_apply(Lp, Li, Lx, rhs, trans)


# --------------------------------------------------------------------------- #
# Reverse Cholesky of W
# --------------------------------------------------------------------------- #

def _pattern_positions(Lp, Li, n, rows, cols):
    """Positions of ``(rows, cols)`` in a sorted CSC pattern, -1 where absent."""
    want = np.asarray(cols, np.int64) * n + np.asarray(rows, np.int64)
    if Li.size == 0:
        return np.full(want.shape, -1, dtype=np.int64)
    keys = np.repeat(np.arange(n, dtype=np.int64), np.diff(Lp)) * n + Li
    pos = np.minimum(np.searchsorted(keys, want), keys.size - 1)
    return np.where(keys[pos] == want, pos, -1)


class SelectedInverse:
    """Entries of ``W^{-1}`` on the pattern of ``V + V'``."""

    def __init__(self, n, Lp, Li, S):
        self.n = n
        self.Lp, self.Li, self.S = Lp, Li, S

    def diag(self) -> np.ndarray:
        return self.S[self.Lp[:-1]][::-1].copy()

    def entries(self, rows, cols) -> np.ndarray:
        """``W^{-1}[rows[k], cols[k]]``; refuses pairs outside the pattern."""
        rows = np.asarray(rows, np.int64).reshape(-1)
        cols = np.asarray(cols, np.int64).reshape(-1)
        if rows.size == 0:
            return np.zeros(0)
        if np.any((rows < 0) | (rows >= self.n) | (cols < 0) | (cols >= self.n)):
            raise IndexError("pair index out of range")
        rr = self.n - 1 - rows
        rc = self.n - 1 - cols
        lo_row = np.maximum(rr, rc)
        lo_col = np.minimum(rr, rc)
        pos = _pattern_positions(self.Lp, self.Li, self.n, lo_row, lo_col)
        if np.any(pos < 0):
            bad = int(np.flatnonzero(pos < 0)[0])
            raise NotSelectedInvertibleError(
                f"pair ({rows[bad]}, {cols[bad]}) is not in the factor pattern; "
                "it is not selected-invertible")
        return self.S[pos]

    def to_sparse(self) -> sp.csc_matrix:
        """Symmetric sparse matrix of the selected entries (original frame)."""
        n = self.n
        col = np.repeat(np.arange(n), np.diff(self.Lp))
        r = n - 1 - self.Li
        c = n - 1 - col
        M = sp.coo_matrix((self.S, (r, c)), shape=(n, n))
        off = r != c
        Mt = sp.coo_matrix((self.S[off], (c[off], r[off])), shape=(n, n))
        return (M + Mt).tocsc()


class ReverseCholesky:
    """Factor ``W = V V'`` with ``V`` upper triangular, stored as ``L`` of ``P W P``."""

    def __init__(self, n, Lp, Li, Lx, pattern=None):
        self.n = int(n)
        self.Lp = np.asarray(Lp, np.int64)
        self.Li = np.asarray(Li, np.int64)
        self.Lx = np.asarray(Lx, np.float64)
        self._pattern = pattern
        self._V = None

    @property
    def V(self) -> SparseUpperTri:
        if self._V is None:
            self._V = SparseUpperTri.from_reversed_lower(self.n, self.Lp, self.Li, self.Lx)
        return self._V

    @property
    def diag(self) -> np.ndarray:
        """Diagonal of V in the original frame."""
        return self.Lx[self.Lp[:-1]][::-1]

    def logdet_W(self) -> float:
        return 2.0 * float(np.sum(np.log(self.Lx[self.Lp[:-1]])))

    def solve(self, b):
        """``V^{-1} b``."""
        return _lower_apply(self.Lp, self.Li, self.Lx, b, False)

    def solve_t(self, b):
        """``V^{-T} b``."""
        return _lower_apply(self.Lp, self.Li, self.Lx, b, True)

    def solve_W(self, b):
        """``W^{-1} b`` through two triangular solves."""
        x, vec = _as_2d(b)
        x = np.ascontiguousarray(x[::-1])
        kernels.lower_solve(self.Lp, self.Li, self.Lx, x)
        kernels.lower_t_solve(self.Lp, self.Li, self.Lx, x)
        x = x[::-1]
        return x[:, 0].copy() if vec else np.ascontiguousarray(x)

    def selected_inverse(self) -> SelectedInverse:
        pat = self._pattern or kernels.CholeskyPattern(self.Lp, self.Li)
        S = pat.selected_inverse(self.Lx)
        return SelectedInverse(self.n, self.Lp, self.Li, np.asarray(S))


def _lower_pattern_from_sym(W) -> tuple:
    """Sorted CSC pattern and values of ``lower(P W P)``, diagonal always present."""
    W = sp.coo_matrix(W)
    n = W.shape[0]
    r = n - 1 - W.row
    c = n - 1 - W.col
    keep = r >= c
    d = np.arange(n)
    rows = np.concatenate([r[keep], d])
    cols = np.concatenate([c[keep], d])
    vals = np.concatenate([W.data[keep], np.zeros(n)])
    M = sp.csc_matrix((vals, (rows, cols)), shape=(n, n))
    M.sum_duplicates()
    M.sort_indices()
    return n, M.indptr.astype(np.int64), M.indices.astype(np.int64), M.data


def reverse_cholesky(W) -> ReverseCholesky:
    """Cholesky factor of a sparse SPD ``W`` in reverse ordering.

    Returns a :class:`ReverseCholesky` whose ``V`` attribute is the upper
    triangular factor with ``W = V V'``.

    Raises
    ------
    VecchiaFactorError
        If ``W`` is not numerically positive definite; the message names the
        pivot (in the original index frame).
    """
    W = sp.csr_matrix(W)
    if W.shape[0] != W.shape[1]:
        raise ValueError("W must be square")
    n, Mp, Mi, Mx = _lower_pattern_from_sym(W)
    Lp, Li, _ = kernels.symbolic_cholesky(n, Mp, Mi)
    Lp = np.asarray(Lp)
    Li = np.asarray(Li)
    col = np.repeat(np.arange(n), np.diff(Mp))
    pos = _pattern_positions(Lp, Li, n, Mi, col)
    L0 = np.zeros(Li.size)
    L0[pos] = Mx
    pat = kernels.CholeskyPattern(Lp, Li)
    Lx, status, piv = pat.factor(L0)
    if status != 0:
        raise VecchiaFactorError(
            f"W is not positive definite (pivot at index {n - 1 - piv})", n - 1 - piv)
    return ReverseCholesky(n, Lp, Li, Lx, pat)


def takahashi_selected_inverse(V) -> SelectedInverse:
    """Exact entries of ``W^{-1}`` on the pattern of ``V + V'``.

    ``V`` is either a :class:`ReverseCholesky` or the :class:`SparseUpperTri`
    it exposes. Cost is ``O(n m^2)`` for ``m`` off-diagonals per column.
    """
    if isinstance(V, ReverseCholesky):
        return V.selected_inverse()
    Lp, Li, Lx = V.reversed_lower()
    S = kernels.CholeskyPattern(Lp, Li).selected_inverse(Lx)
    return SelectedInverse(V.n, np.asarray(Lp), np.asarray(Li), np.asarray(S))


# --------------------------------------------------------------------------- #
# U, A, B, W from a plan
# --------------------------------------------------------------------------- #

class _Symbolic:
    """Everything about a plan's factor that does not depend on theta."""

    def __init__(self, layout):
        nv = layout.n_vars
        self.nv = nv
        self.Up = (layout.g_ptr + np.arange(nv + 1)).astype(np.int64)
        Ui = np.empty(self.Up[-1], dtype=np.int64)
        diag_pos = self.Up[1:] - 1
        mask = np.ones(Ui.size, bool)
        mask[diag_pos] = False
        Ui[mask] = layout.g_idx
        Ui[diag_pos] = np.arange(nv)
        self.Ui = Ui
        is_y = layout.is_y
        self.is_y = is_y
        self.y_rows = np.flatnonzero(is_y)
        self.z_rows = np.flatnonzero(~is_y)
        self.ny = self.y_rows.size
        yrank = np.full(nv, -1, dtype=np.int64)
        yrank[self.y_rows] = np.arange(self.ny)
        self.yrank = yrank
        # pattern of W = A A' from the boolean pattern of A
        Upat = sp.csc_matrix((np.ones(Ui.size), Ui, self.Up), shape=(nv, nv)).tocsr()
        Apat = Upat[self.y_rows]
        Wpat = (Apat @ Apat.T).tocoo()
        n, Mp, Mi, _ = _lower_pattern_from_sym(Wpat)
        Lp, Li, _ = kernels.symbolic_cholesky(n, Mp, Mi)
        self.Lp = np.asarray(Lp)
        self.Li = np.asarray(Li)
        self.assembler = kernels.WAssembler(self.Up, self.Ui, yrank, self.ny, self.Lp, self.Li)
        self.chol = kernels.CholeskyPattern(self.Lp, self.Li)

    def row_blocks(self, Ux):
        U = sp.csc_matrix((Ux, self.Ui, self.Up), shape=(self.nv, self.nv))
        Ur = U.tocsr()
        return Ur[self.y_rows], Ur[self.z_rows]


def _symbolic_for(plan) -> _Symbolic:
    sym = getattr(plan, "_symbolic", None)
    if sym is None:
        sym = _Symbolic(plan.layout())
        plan._symbolic = sym
    return sym


def build_U(plan, params: CovParams) -> SparseUpperTri:
    """Vecchia factor ``U`` for a plan at parameters ``params``.

    Column ``v`` holds ``-b_v / sqrt(r_v)`` on the rows ``g(v)`` and
    ``1 / sqrt(r_v)`` on the diagonal, where ``b_v`` are the kriging weights
    of ``u_v`` on ``u_g(v)`` and ``r_v`` the conditional variance.

    Raises
    ------
    VecchiaFactorError
        If a local covariance stays singular after jitter escalation.
    """
    lay = plan.layout()
    sym = _symbolic_for(plan)
    xs = np.ascontiguousarray(scaled_coords(lay.coords, params))
    data, status, bad, _ = kernels.vecchia_columns(
        xs, lay.var_coord, lay.var_is_z.view(np.uint8), lay.g_ptr, lay.g_idx,
        params.sigma2, params.tau2)
    if status != 0:
        kind = "z" if lay.var_is_z[bad] else "y"
        raise VecchiaFactorError(
            f"conditional covariance for variable {bad} ({kind} at ordered coordinate "
            f"{lay.var_coord[bad]}) is singular after jitter escalation", int(bad))
    return SparseUpperTri(sym.nv, sym.Up, sym.Ui, np.asarray(data))


def split_AB(U: SparseUpperTri, is_y):
    """Latent rows ``A`` and response rows ``B`` of ``U`` as CSR matrices."""
    is_y = np.asarray(is_y, bool)
    if is_y.size != U.n:
        raise ValueError(f"row mask has length {is_y.size}, U has {U.n} rows")
    Ur = U.to_scipy().tocsr()
    return Ur[np.flatnonzero(is_y)], Ur[np.flatnonzero(~is_y)]


def form_W(A) -> sp.csc_matrix:
    """``W = A A'`` as a sparse matrix (reference path; factors use the cached pattern)."""
    return (A @ A.T).tocsc()


@dataclass
class VecchiaFactor:
    """``U`` with its derived ``A``, ``B`` and the reverse Cholesky of ``W``."""

    U: SparseUpperTri
    is_y: np.ndarray
    A: sp.csr_matrix
    B: sp.csr_matrix
    chol: ReverseCholesky
    order: Optional[np.ndarray] = None
    row_groups: Optional[np.ndarray] = None     # coordinate index of each variable

    @property
    def V(self) -> SparseUpperTri:
        return self.chol.V

    @property
    def W(self) -> sp.csc_matrix:
        return form_W(self.A)

    def logdet_U(self) -> float:
        return float(np.sum(np.log(self.U.diag)))


def build_factor(plan, params: CovParams) -> VecchiaFactor:
    """Numeric factorization for a plan, reusing its cached symbolic analysis."""
    sym = _symbolic_for(plan)
    U = build_U(plan, params)
    Lx0 = sym.assembler.assemble(U.data)
    Lx, status, piv = sym.chol.factor(np.asarray(Lx0))
    if status != 0:
        idx = sym.ny - 1 - int(piv)
        raise VecchiaFactorError(f"W is not positive definite (pivot at latent index {idx})", idx)
    chol = ReverseCholesky(sym.ny, sym.Lp, sym.Li, Lx, sym.chol)
    A, B = sym.row_blocks(U.data)
    return VecchiaFactor(U, sym.is_y, A, B, chol, getattr(plan, "order", None),
                         plan.layout().var_coord)
