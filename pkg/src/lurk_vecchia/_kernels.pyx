# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops.

Every function here has a counterpart with the same signature and semantics
in ``_kernels_py``; ``_backend`` picks one at import time.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt, fabs

cnp.import_array()

ctypedef cnp.int64_t idx_t

BACKEND = "cython"

# status codes shared with the Python kernels
OK = 0
SINGULAR = 1


cdef inline bint _chol_inplace(double* a, Py_ssize_t s) nogil:
    """Lower Cholesky of a row-major s*s block; False if a pivot is not positive."""
    cdef Py_ssize_t i, j, k
    cdef double acc
    for j in range(s):
        acc = a[j * s + j]
        for k in range(j):
            acc -= a[j * s + k] * a[j * s + k]
        if not acc > 0.0:
            return False
        acc = sqrt(acc)
        a[j * s + j] = acc
        for i in range(j + 1, s):
            for k in range(j):
                a[i * s + j] -= a[i * s + k] * a[j * s + k]
            a[i * s + j] /= acc
    return True


def vecchia_columns(const double[:, ::1] xs, const idx_t[::1] var_coord,
                    const unsigned char[::1] var_is_z, const idx_t[::1] g_ptr,
                    const idx_t[::1] g_idx, double sigma2, double tau2,
                    int max_escalations=3):
    """Values of U in its CSC layout (conditioning rows, then the diagonal).

    Each column solves the local system through one Cholesky of the joint
    covariance of ``(u_g, u_v)``; the last pivot equals ``sqrt(r_v)``.
    Returns ``(data, status, bad_column, jitter_used)``.
    """
    cdef Py_ssize_t nv = var_coord.shape[0]
    cdef Py_ssize_t v, a, b, s, s0, ca, cb, k, attempt, base
    cdef Py_ssize_t smax = 1
    for v in range(nv):
        s = g_ptr[v + 1] - g_ptr[v] + 1
        if s > smax:
            smax = s
    data_arr = np.empty(g_ptr[nv] + nv, dtype=np.float64)
    cdef double[::1] data = data_arr
    kbuf_arr = np.empty(smax * smax, dtype=np.float64)
    lbuf_arr = np.empty(smax * smax, dtype=np.float64)
    mem_arr = np.empty(smax, dtype=np.int64)
    cdef double[::1] kbuf = kbuf_arr
    cdef double[::1] lbuf = lbuf_arr
    cdef idx_t[::1] mem = mem_arr
    cdef double d, dx, dy, dt, val, trace, jit, rdiag, acc
    cdef double max_jit = 0.0
    cdef bint ok
    for v in range(nv):
        s0 = g_ptr[v + 1] - g_ptr[v]
        s = s0 + 1
        for a in range(s0):
            mem[a] = g_idx[g_ptr[v] + a]
        mem[s0] = v
        trace = 0.0
        for a in range(s):
            ca = var_coord[mem[a]]
            for b in range(a + 1):
                cb = var_coord[mem[b]]
                dx = xs[ca, 0] - xs[cb, 0]
                dy = xs[ca, 1] - xs[cb, 1]
                dt = xs[ca, 2] - xs[cb, 2]
                d = sqrt(dx * dx + dy * dy + dt * dt)
                val = sigma2 * exp(-d)
                if ca == cb and var_is_z[mem[a]] and var_is_z[mem[b]]:
                    val += tau2
                kbuf[a * s + b] = val
            trace += kbuf[a * s + a]
        ok = False
        jit = 0.0
        for attempt in range(max_escalations + 2):
            if attempt == 1:
                jit = 1e-10 * trace / s
            elif attempt > 1:
                jit *= 100.0
            for a in range(s):
                for b in range(a + 1):
                    lbuf[a * s + b] = kbuf[a * s + b]
                lbuf[a * s + a] += jit
            if _chol_inplace(&lbuf[0], s):
                ok = True
                break
        if not ok:
            return data_arr, SINGULAR, v, jit
        if jit > max_jit:
            max_jit = jit
        rdiag = lbuf[s0 * s + s0]
        base = g_ptr[v] + v
        # b = L_gg^{-T} l, with l the last row of the joint factor
        for a in range(s0 - 1, -1, -1):
            acc = lbuf[s0 * s + a]
            for k in range(a + 1, s0):
                acc -= lbuf[k * s + a] * data[base + k]
            data[base + a] = acc / lbuf[a * s + a]
        for a in range(s0):
            data[base + a] = -data[base + a] / rdiag
        data[base + s0] = 1.0 / rdiag
    return data_arr, OK, -1, max_jit


def symbolic_cholesky(Py_ssize_t n, const idx_t[::1] Mp, const idx_t[::1] Mi):
    """Pattern of the lower Cholesky factor of a matrix with lower pattern M.

    Column j of L is the union of column j of M and the below-diagonal parts
    of its elimination-tree children. Returns ``(Lp, Li, parent)``.
    """
    Lp_arr = np.zeros(n + 1, dtype=np.int64)
    parent_arr = np.full(n, -1, dtype=np.int64)
    head_arr = np.full(n, -1, dtype=np.int64)
    nxt_arr = np.full(n, -1, dtype=np.int64)
    mark_arr = np.full(n, -1, dtype=np.int64)
    rows_arr = np.empty(max(n, 1), dtype=np.int64)
    cdef idx_t[::1] Lp = Lp_arr
    cdef idx_t[::1] parent = parent_arr
    cdef idx_t[::1] head = head_arr
    cdef idx_t[::1] nxt = nxt_arr
    cdef idx_t[::1] mark = mark_arr
    cdef idx_t[::1] rows = rows_arr
    cdef Py_ssize_t cap = max(2 * (Mp[n] if n > 0 else 1), 16)
    Li_arr = np.empty(cap, dtype=np.int64)
    cdef idx_t[::1] Li = Li_arr
    cdef Py_ssize_t j, p, c, i, cnt, a, b, nnz = 0
    cdef idx_t tmp
    for j in range(n):
        mark[j] = j
        rows[0] = j
        cnt = 1
        for p in range(Mp[j], Mp[j + 1]):
            i = Mi[p]
            if i > j and mark[i] != j:
                mark[i] = j
                rows[cnt] = i
                cnt += 1
        c = head[j]
        while c != -1:
            for p in range(Lp[c], Lp[c + 1]):
                i = Li[p]
                if i > j and mark[i] != j:
                    mark[i] = j
                    rows[cnt] = i
                    cnt += 1
            c = nxt[c]
        # insertion sort of the new rows (rows[0] = j is already minimal)
        for a in range(2, cnt):
            tmp = rows[a]
            b = a - 1
            while b >= 1 and rows[b] > tmp:
                rows[b + 1] = rows[b]
                b -= 1
            rows[b + 1] = tmp
        if nnz + cnt > cap:
            cap = max(2 * cap, nnz + cnt)
            Li_arr = np.resize(Li_arr, cap)
            Li = Li_arr
        for a in range(cnt):
            Li[nnz + a] = rows[a]
        nnz += cnt
        Lp[j + 1] = nnz
        if cnt > 1:
            parent[j] = rows[1]
            nxt[j] = head[rows[1]]
            head[rows[1]] = j
    return Lp_arr, Li_arr[:nnz].copy(), parent_arr


cdef inline Py_ssize_t _find(const idx_t[::1] Li, Py_ssize_t lo, Py_ssize_t hi, idx_t r) nogil:
    cdef Py_ssize_t mid
    hi -= 1
    while lo <= hi:
        mid = (lo + hi) >> 1
        if Li[mid] < r:
            lo = mid + 1
        elif Li[mid] > r:
            hi = mid - 1
        else:
            return mid
    return -1


cdef class WAssembler:
    """Accumulates ``W = A A'`` into the reversed lower factor pattern.

    ``yrank[row]`` is the position of a U-row among the latent rows (-1 for
    response rows). Entry ``W[a, b]`` with ``a <= b`` lands in the reversed
    frame at ``M[ny-1-a, ny-1-b]``. The pair-to-slot map is built on the
    first call and reused.
    """
    cdef readonly object Up, Ui, yrank, Lp, Li
    cdef readonly Py_ssize_t ny
    cdef object _pa, _pb, _pos

    def __init__(self, Up, Ui, yrank, Py_ssize_t ny, Lp, Li):
        self.Up = np.ascontiguousarray(Up, dtype=np.int64)
        self.Ui = np.ascontiguousarray(Ui, dtype=np.int64)
        self.yrank = np.ascontiguousarray(yrank, dtype=np.int64)
        self.ny = ny
        self.Lp = np.ascontiguousarray(Lp, dtype=np.int64)
        self.Li = np.ascontiguousarray(Li, dtype=np.int64)
        self._pa = None

    cdef _build(self):
        cdef const idx_t[::1] Up = self.Up
        cdef const idx_t[::1] Ui = self.Ui
        cdef const idx_t[::1] yr = self.yrank
        cdef const idx_t[::1] Lp = self.Lp
        cdef const idx_t[::1] Li = self.Li
        cdef Py_ssize_t ny = self.ny
        cdef Py_ssize_t ncol = Up.shape[0] - 1
        cdef Py_ssize_t c, p, q, ra, rb, col, k, npair = 0, cnt
        for c in range(ncol):
            cnt = 0
            for p in range(Up[c], Up[c + 1]):
                if yr[Ui[p]] >= 0:
                    cnt += 1
            npair += cnt * (cnt + 1) // 2
        pa_arr = np.empty(npair, dtype=np.int64)
        pb_arr = np.empty(npair, dtype=np.int64)
        pos_arr = np.empty(npair, dtype=np.int64)
        cdef idx_t[::1] pa = pa_arr
        cdef idx_t[::1] pb = pb_arr
        cdef idx_t[::1] pos = pos_arr
        k = 0
        for c in range(ncol):
            for p in range(Up[c], Up[c + 1]):
                ra = yr[Ui[p]]
                if ra < 0:
                    continue
                for q in range(p, Up[c + 1]):
                    rb = yr[Ui[q]]
                    if rb < 0:
                        continue
                    # rows are sorted so ra <= rb; reversed: column ny-1-rb, row ny-1-ra
                    col = ny - 1 - rb
                    pa[k] = p
                    pb[k] = q
                    pos[k] = _find(Li, Lp[col], Lp[col + 1], ny - 1 - ra)
                    k += 1
        self._pa, self._pb, self._pos = pa_arr, pb_arr, pos_arr

    def assemble(self, const double[::1] Ux):
        if self._pa is None:
            self._build()
        cdef const idx_t[::1] pa = self._pa
        cdef const idx_t[::1] pb = self._pb
        cdef const idx_t[::1] pos = self._pos
        out_arr = np.zeros(self.Li.shape[0], dtype=np.float64)
        cdef double[::1] out = out_arr
        cdef Py_ssize_t k
        for k in range(pa.shape[0]):
            out[pos[k]] += Ux[pa[k]] * Ux[pb[k]]
        return out_arr


cdef class CholeskyPattern:
    """Numeric Cholesky and selected inversion on a fixed lower pattern."""
    cdef readonly object Lp, Li
    cdef readonly Py_ssize_t n

    def __init__(self, Lp, Li):
        self.Lp = np.ascontiguousarray(Lp, dtype=np.int64)
        self.Li = np.ascontiguousarray(Li, dtype=np.int64)
        self.n = self.Lp.shape[0] - 1

    def factor(self, const double[::1] Mx):
        """Right-looking numeric factorization; returns ``(Lx, status, pivot)``."""
        cdef const idx_t[::1] Lp = self.Lp
        cdef const idx_t[::1] Li = self.Li
        cdef Py_ssize_t n = self.n
        Lx_arr = np.array(Mx, dtype=np.float64, copy=True)
        cdef double[::1] Lx = Lx_arr
        pos_arr = np.full(max(n, 1), -1, dtype=np.int64)
        cdef idx_t[::1] pos = pos_arr
        cdef Py_ssize_t j, p, p2, q, c, end
        cdef double d, lcj
        for j in range(n):
            p = Lp[j]
            end = Lp[j + 1]
            d = Lx[p]
            if not d > 0.0:
                return Lx_arr, SINGULAR, j
            d = sqrt(d)
            Lx[p] = d
            for p2 in range(p + 1, end):
                Lx[p2] /= d
            for p2 in range(p + 1, end):
                c = Li[p2]
                lcj = Lx[p2]
                for q in range(Lp[c], Lp[c + 1]):
                    pos[Li[q]] = q
                for q in range(p2, end):
                    Lx[pos[Li[q]]] -= Lx[q] * lcj
        return Lx_arr, OK, -1

    def selected_inverse(self, const double[::1] Lx):
        """Entries of ``(L L')^{-1}`` on the pattern of L (Takahashi recursions)."""
        cdef const idx_t[::1] Lp = self.Lp
        cdef const idx_t[::1] Li = self.Li
        cdef Py_ssize_t n = self.n
        S_arr = np.zeros(Li.shape[0], dtype=np.float64)
        cdef double[::1] S = S_arr
        cdef Py_ssize_t j, p, q, i, k, lo, hi, col, row, pos, start, end
        cdef double ljj, acc, sik
        for j in range(n - 1, -1, -1):
            start = Lp[j]
            end = Lp[j + 1]
            ljj = Lx[start]
            for p in range(start + 1, end):
                i = Li[p]
                acc = 0.0
                for q in range(start + 1, end):
                    k = Li[q]
                    if i >= k:
                        col = k
                        row = i
                    else:
                        col = i
                        row = k
                    pos = _find(Li, Lp[col], Lp[col + 1], row)
                    acc += Lx[q] * S[pos]
                S[p] = -acc / ljj
            acc = 0.0
            for p in range(start + 1, end):
                acc += Lx[p] * S[p]
            S[start] = 1.0 / (ljj * ljj) - acc / ljj
        return S_arr


def lower_solve(const idx_t[::1] Lp, const idx_t[::1] Li, const double[::1] Lx,
                double[:, ::1] B):
    """In place ``B <- L^{-1} B`` for lower CSC ``L``."""
    cdef Py_ssize_t n = Lp.shape[0] - 1
    cdef Py_ssize_t k = B.shape[1]
    cdef Py_ssize_t j, p, c, r
    cdef double d, lv
    for j in range(n):
        d = Lx[Lp[j]]
        for c in range(k):
            B[j, c] /= d
        for p in range(Lp[j] + 1, Lp[j + 1]):
            r = Li[p]
            lv = Lx[p]
            for c in range(k):
                B[r, c] -= lv * B[j, c]


def lower_t_solve(const idx_t[::1] Lp, const idx_t[::1] Li, const double[::1] Lx,
                  double[:, ::1] B):
    """In place ``B <- L^{-T} B`` for lower CSC ``L``."""
    cdef Py_ssize_t n = Lp.shape[0] - 1
    cdef Py_ssize_t k = B.shape[1]
    cdef Py_ssize_t j, p, c, r
    cdef double d, lv
    for j in range(n - 1, -1, -1):
        for p in range(Lp[j] + 1, Lp[j + 1]):
            r = Li[p]
            lv = Lx[p]
            for c in range(k):
                B[j, c] -= lv * B[r, c]
        d = Lx[Lp[j]]
        for c in range(k):
            B[j, c] /= d


cdef inline double _soft(double z, double lam) nogil:
    if z > lam:
        return z - lam
    if z < -lam:
        return z + lam
    return 0.0


cdef inline double _scad_thr(double z, double lam, double a) nogil:
    cdef double az = fabs(z)
    if az <= 2.0 * lam:
        return _soft(z, lam)
    if az <= a * lam:
        return _soft(z, a * lam / (a - 1.0)) / (1.0 - 1.0 / (a - 1.0))
    return z


cdef inline double _scad_val(double b, double lam, double a) nogil:
    cdef double ab = fabs(b)
    if ab <= lam:
        return lam * ab
    if ab <= a * lam:
        return (2.0 * a * lam * ab - ab * ab - lam * lam) / (2.0 * (a - 1.0))
    return lam * lam * (a + 1.0) / 2.0


cdef double _objective(const double[:, ::1] G, const double[::1] c, double[::1] beta,
                       double[::1] gb, const unsigned char[::1] pen, double lam,
                       double a) nogil:
    cdef Py_ssize_t p = beta.shape[0]
    cdef Py_ssize_t j
    cdef double val = 0.0
    for j in range(p):
        val += 0.5 * beta[j] * gb[j] - c[j] * beta[j]
        if pen[j]:
            val += _scad_val(beta[j], lam, a)
    return val


cdef double _cycle(const double[:, ::1] G, const double[::1] c, double[::1] beta,
                   double[::1] gb, const unsigned char[::1] pen, double lam, double a,
                   bint active_only) nogil:
    cdef Py_ssize_t p = beta.shape[0]
    cdef Py_ssize_t j, k
    cdef double v, z, new, delta, maxd = 0.0
    for j in range(p):
        if active_only and pen[j] and beta[j] == 0.0:
            continue
        v = G[j, j]
        if not v > 0.0:
            continue
        z = (c[j] - gb[j]) / v + beta[j]
        if pen[j]:
            new = _scad_thr(z, lam, a)
        else:
            new = z
        delta = new - beta[j]
        if delta != 0.0:
            beta[j] = new
            for k in range(p):
                gb[k] += delta * G[j, k]
            if fabs(delta) > maxd:
                maxd = fabs(delta)
    return maxd


def scad_cd_path(const double[:, ::1] G, const double[::1] c, const double[::1] lambdas,
                 double a, const unsigned char[::1] penalized, const double[::1] beta0,
                 double tol, int max_iter, bint record=False):
    """SCAD coordinate descent over a lambda path in Gram form.

    Minimizes ``0.5 b'Gb - c'b + sum_pen P(b_j)`` for each lambda with warm
    starts, alternating full sweeps and sweeps over the active set.
    Returns ``(betas, iters, converged, trace)``; ``trace`` holds the
    objective after every sweep when ``record`` is set.
    """
    cdef Py_ssize_t p = G.shape[0]
    cdef Py_ssize_t nl = lambdas.shape[0]
    betas_arr = np.zeros((nl, p), dtype=np.float64)
    iters_arr = np.zeros(nl, dtype=np.int64)
    conv_arr = np.zeros(nl, dtype=bool)
    beta_arr = np.array(beta0, dtype=np.float64, copy=True)
    gb_arr = np.asarray(G) @ beta_arr
    cdef double[:, ::1] betas = betas_arr
    cdef idx_t[::1] iters = iters_arr
    cdef double[::1] beta = beta_arr
    cdef double[::1] gb = gb_arr
    cdef Py_ssize_t l, j, it
    cdef double lam, maxd
    cdef bint done
    trace = [] if record else None
    for l in range(nl):
        lam = lambdas[l]
        it = 0
        done = False
        while it < max_iter:
            maxd = _cycle(G, c, beta, gb, penalized, lam, a, False)
            it += 1
            if record:
                trace.append(_objective(G, c, beta, gb, penalized, lam, a))
            if maxd < tol:
                done = True
                break
            while it < max_iter:
                maxd = _cycle(G, c, beta, gb, penalized, lam, a, True)
                it += 1
                if record:
                    trace.append(_objective(G, c, beta, gb, penalized, lam, a))
                if maxd < tol:
                    break
        iters[l] = it
        conv_arr[l] = done
        for j in range(p):
            betas[l, j] = beta[j]
    return betas_arr, iters_arr, conv_arr, trace
