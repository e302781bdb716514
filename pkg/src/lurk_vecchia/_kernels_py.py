"""Pure-Python/NumPy versions of the compiled kernels.

Same call signatures and results as ``_kernels`` (up to floating-point
summation order). Loops are vectorized per column or per batch of columns
so the fallback stays usable at moderate n.
"""
from __future__ import annotations

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.linalg import spsolve_triangular

BACKEND = "python"

OK = 0
SINGULAR = 1


def _local_cov(xs, var_coord, var_is_z, members, sigma2, tau2):
    """Batched joint covariance blocks for rows of ``members`` (cnt, s)."""
    c = var_coord[members]
    P = xs[c]
    diff = P[:, :, None, :] - P[:, None, :, :]
    K = sigma2 * np.exp(-np.sqrt(np.einsum("bijk,bijk->bij", diff, diff)))
    z = var_is_z[members].astype(bool)
    nug = (c[:, :, None] == c[:, None, :]) & z[:, :, None] & z[:, None, :]
    return K + tau2 * nug


def _solve_block(Kb, max_escalations):
    s = Kb.shape[0]
    trace = np.trace(Kb)
    jit = 0.0
    for attempt in range(max_escalations + 2):
        if attempt == 1:
            jit = 1e-10 * trace / s
        elif attempt > 1:
            jit *= 100.0
        try:
            return np.linalg.cholesky(Kb + jit * np.eye(s)), jit
        except np.linalg.LinAlgError:
            continue
    return None, jit


def vecchia_columns(xs, var_coord, var_is_z, g_ptr, g_idx, sigma2, tau2,
                    max_escalations=3):
    nv = var_coord.shape[0]
    data = np.empty(g_ptr[nv] + nv)
    sizes = np.diff(g_ptr)
    max_jit = 0.0
    for s0 in np.unique(sizes):
        cols = np.flatnonzero(sizes == s0)
        s = s0 + 1
        members = np.empty((cols.size, s), dtype=np.int64)
        if s0:
            members[:, :s0] = g_idx[g_ptr[cols][:, None] + np.arange(s0)]
        members[:, s0] = cols
        K = _local_cov(xs, var_coord, var_is_z, members, sigma2, tau2)
        try:
            L = np.linalg.cholesky(K)
            ok = np.all(np.isfinite(L[:, np.arange(s), np.arange(s)]), axis=1)
            if not ok.all():
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            L = np.empty_like(K)
            for r in range(cols.size):
                Lr, jit = _solve_block(K[r], max_escalations)
                if Lr is None:
                    return data, SINGULAR, int(cols[r]), jit
                L[r] = Lr
                max_jit = max(max_jit, jit)
        rdiag = L[:, s0, s0]
        base = g_ptr[cols] + cols
        if s0:
            lrow = L[:, s0, :s0]
            Lg = L[:, :s0, :s0]
            b = np.linalg.solve(np.transpose(Lg, (0, 2, 1)), lrow[:, :, None])[:, :, 0]
            data[base[:, None] + np.arange(s0)] = -b / rdiag[:, None]
        data[base + s0] = 1.0 / rdiag
    return data, OK, -1, max_jit


def symbolic_cholesky(n, Mp, Mi):
    Lp = np.zeros(n + 1, dtype=np.int64)
    parent = np.full(n, -1, dtype=np.int64)
    children: list = [[] for _ in range(n)]
    cols = []
    nnz = 0
    for j in range(n):
        s = set(int(i) for i in Mi[Mp[j]:Mp[j + 1]] if i > j)
        for c in children[j]:
            ch = cols[c]
            s.update(int(i) for i in ch[1:] if i > j)
        rows = np.array([j] + sorted(s), dtype=np.int64)
        cols.append(rows)
        nnz += rows.size
        Lp[j + 1] = nnz
        if rows.size > 1:
            parent[j] = rows[1]
            children[rows[1]].append(j)
    Li = np.concatenate(cols) if cols else np.zeros(0, np.int64)
    return Lp, Li, parent


def _positions(Lp, Li, n, cols, rows):
    """Positions of entries (row, col) in the CSC pattern; -1 if absent."""
    keys = np.repeat(np.arange(n, dtype=np.int64), np.diff(Lp)) * n + Li
    want = cols.astype(np.int64) * n + rows
    pos = np.searchsorted(keys, want)
    pos = np.minimum(pos, keys.size - 1)
    bad = keys[pos] != want
    pos[bad] = -1
    return pos


class WAssembler:
    """``W = A A'`` into the reversed lower pattern via precomputed pair maps."""

    def __init__(self, Up, Ui, yrank, ny, Lp, Li):
        Up = np.asarray(Up, np.int64)
        Ui = np.asarray(Ui, np.int64)
        yrank = np.asarray(yrank, np.int64)
        pa, pb = [], []
        for c in range(Up.size - 1):
            p = np.arange(Up[c], Up[c + 1])
            p = p[yrank[Ui[p]] >= 0]
            if p.size == 0:
                continue
            i, j = np.triu_indices(p.size)
            pa.append(p[i])
            pb.append(p[j])
        self.pa = np.concatenate(pa) if pa else np.zeros(0, np.int64)
        self.pb = np.concatenate(pb) if pb else np.zeros(0, np.int64)
        ra = yrank[Ui[self.pa]]
        rb = yrank[Ui[self.pb]]
        self.target = _positions(np.asarray(Lp), np.asarray(Li), ny, ny - 1 - rb, ny - 1 - ra)
        if np.any(self.target < 0):
            raise ValueError("W entry outside the factor pattern")
        self.size = np.asarray(Li).size

    def assemble(self, Ux):
        Ux = np.asarray(Ux)
        return np.bincount(self.target, weights=Ux[self.pa] * Ux[self.pb],
                           minlength=self.size).astype(np.float64)


class CholeskyPattern:
    """Numeric Cholesky and Takahashi inversion with per-column update maps."""

    def __init__(self, Lp, Li):
        self.Lp = np.asarray(Lp, np.int64)
        self.Li = np.asarray(Li, np.int64)
        self.n = self.Lp.size - 1
        self._maps = None

    def _build_maps(self):
        # for column j with below-diagonal rows R, the positions of L[R[b], R[a]]
        # for a <= b, grouped per column
        n, Lp, Li = self.n, self.Lp, self.Li
        below = np.diff(Lp) - 1
        tri = below * (below + 1) // 2
        off = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(tri, out=off[1:])
        ia = np.empty(off[-1], dtype=np.int64)
        ib = np.empty(off[-1], dtype=np.int64)
        for s in np.unique(below):
            if s == 0:
                continue
            jj = np.flatnonzero(below == s)
            a, b = np.triu_indices(s)
            ia[off[jj][:, None] + np.arange(a.size)] = Lp[jj][:, None] + 1 + a
            ib[off[jj][:, None] + np.arange(a.size)] = Lp[jj][:, None] + 1 + b
        rows_a = Li[ia]
        rows_b = Li[ib]
        tgt = _positions(Lp, Li, n, rows_a, rows_b)
        if np.any(tgt < 0):
            raise ValueError("pattern is not closed under elimination")
        self._maps = (off, ia, ib, tgt, below)

    def factor(self, Mx):
        if self._maps is None:
            self._build_maps()
        off, ia, ib, tgt, below = self._maps
        Lp = self.Lp
        Lx = np.array(Mx, dtype=np.float64, copy=True)
        for j in range(self.n):
            p = Lp[j]
            d = Lx[p]
            if not d > 0.0:
                return Lx, SINGULAR, j
            d = np.sqrt(d)
            Lx[p] = d
            if below[j]:
                Lx[p + 1:Lp[j + 1]] /= d
                o0, o1 = off[j], off[j + 1]
                Lx[tgt[o0:o1]] -= Lx[ia[o0:o1]] * Lx[ib[o0:o1]]
        return Lx, OK, -1

    def selected_inverse(self, Lx):
        if self._maps is None:
            self._build_maps()
        off, ia, ib, tgt, below = self._maps
        Lp, Li = self.Lp, self.Li
        S = np.zeros(Li.size)
        for j in range(self.n - 1, -1, -1):
            p = Lp[j]
            ljj = Lx[p]
            s = below[j]
            if s:
                o0, o1 = off[j], off[j + 1]
                a, b = np.triu_indices(s)
                Sub = np.empty((s, s))
                vals = S[tgt[o0:o1]]
                Sub[a, b] = vals
                Sub[b, a] = vals
                lv = Lx[p + 1:Lp[j + 1]]
                col = -(Sub @ lv) / ljj
                S[p + 1:Lp[j + 1]] = col
                S[p] = 1.0 / (ljj * ljj) - lv @ col / ljj
            else:
                S[p] = 1.0 / (ljj * ljj)
        return S


def _lower_csr(Lp, Li, Lx):
    n = Lp.size - 1
    # CSC of L is CSR of L'; transposing gives CSR of L
    return csr_matrix((Lx, Li, Lp), shape=(n, n)).T.tocsr()


def lower_solve(Lp, Li, Lx, B):
    L = _lower_csr(np.asarray(Lp), np.asarray(Li), np.asarray(Lx))
    B[...] = spsolve_triangular(L, B, lower=True).reshape(B.shape)


def lower_t_solve(Lp, Li, Lx, B):
    n = len(Lp) - 1
    Lt = csr_matrix((np.asarray(Lx), np.asarray(Li), np.asarray(Lp)), shape=(n, n))
    B[...] = spsolve_triangular(Lt, B, lower=False).reshape(B.shape)


def _soft(z, lam):
    return np.sign(z) * max(abs(z) - lam, 0.0)


def _scad_thr(z, lam, a):
    az = abs(z)
    if az <= 2.0 * lam:
        return _soft(z, lam)
    if az <= a * lam:
        return _soft(z, a * lam / (a - 1.0)) / (1.0 - 1.0 / (a - 1.0))
    return z


def _scad_vals(b, lam, a):
    ab = np.abs(b)
    return np.where(ab <= lam, lam * ab,
                    np.where(ab <= a * lam,
                             (2 * a * lam * ab - ab * ab - lam * lam) / (2 * (a - 1)),
                             lam * lam * (a + 1) / 2))


def _objective(c, beta, gb, pen, lam, a):
    return float(0.5 * beta @ gb - c @ beta + np.sum(_scad_vals(beta[pen], lam, a)))


def scad_cd_path(G, c, lambdas, a, penalized, beta0, tol, max_iter, record=False):
    G = np.asarray(G, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    pen = np.asarray(penalized).astype(bool)
    p = G.shape[0]
    nl = len(lambdas)
    betas = np.zeros((nl, p))
    iters = np.zeros(nl, dtype=np.int64)
    conv = np.zeros(nl, dtype=bool)
    beta = np.array(beta0, dtype=np.float64, copy=True)
    gb = G @ beta
    diag = np.diag(G).copy()
    trace = [] if record else None

    def cycle(lam, active_only):
        maxd = 0.0
        for j in range(p):
            if active_only and pen[j] and beta[j] == 0.0:
                continue
            v = diag[j]
            if not v > 0.0:
                continue
            z = (c[j] - gb[j]) / v + beta[j]
            new = _scad_thr(z, lam, a) if pen[j] else z
            delta = new - beta[j]
            if delta != 0.0:
                beta[j] = new
                gb[:] += delta * G[j]
                if abs(delta) > maxd:
                    maxd = abs(delta)
        return maxd

    for l in range(nl):
        lam = float(lambdas[l])
        it = 0
        done = False
        while it < max_iter:
            maxd = cycle(lam, False)
            it += 1
            if record:
                trace.append(_objective(c, beta, gb, pen, lam, a))
            if maxd < tol:
                done = True
                break
            while it < max_iter:
                maxd = cycle(lam, True)
                it += 1
                if record:
                    trace.append(_objective(c, beta, gb, pen, lam, a))
                if maxd < tol:
                    break
        iters[l] = it
        conv[l] = done
        betas[l] = beta
    return betas, iters, conv, trace
