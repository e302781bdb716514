"""Maxmin ordering and Vecchia conditioning sets.

All positions returned by this module live in the *ordered* frame: position
``i`` is the ``i``-th coordinate of the maxmin order, and conditioning sets
hold positions, not original indices. Tie-breaking always falls back to the
lower original index so plans are reproducible.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .geometry import CoordLike, CovParams, as_coord_array, scaled_coords

__all__ = [
    "VariableLayout",
    "OrderingPlan",
    "PredictionPlan",
    "maxmin_order",
    "nn_condition",
    "sgv_split",
    "build_ordering_plan",
    "build_prediction_plan",
]


# --------------------------------------------------------------------------- #
# Ordering
# --------------------------------------------------------------------------- #

def _maxmin_scaled(X: np.ndarray) -> np.ndarray:
    n = X.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    centroid = X.mean(axis=0)
    first = int(np.argmin(np.sum((X - centroid) ** 2, axis=1)))
    order = np.empty(n, dtype=np.int64)
    order[0] = first
    if n == 1:
        return order
    tree = cKDTree(X)
    d = np.sqrt(np.sum((X - X[first]) ** 2, axis=1))
    selected = np.zeros(n, dtype=bool)
    selected[first] = True
    # lazy max-heap of (-d, index); stale entries are skipped on pop
    heap = [(-d[j], j) for j in range(n) if j != first]
    heapq.heapify(heap)
    k = 1
    while heap:
        negd, i = heapq.heappop(heap)
        if selected[i] or -negd != d[i]:
            continue
        selected[i] = True
        order[k] = i
        k += 1
        r = d[i]
        if r <= 0.0:
            continue
        nb = np.asarray(tree.query_ball_point(X[i], r), dtype=np.int64)
        if nb.size == 0:
            continue
        nb = nb[~selected[nb]]
        dn = np.sqrt(np.sum((X[nb] - X[i]) ** 2, axis=1))
        upd = dn < d[nb]
        for j, dj in zip(nb[upd].tolist(), dn[upd].tolist()):
            d[j] = dj
            heapq.heappush(heap, (-dj, j))
    return order


def maxmin_order(coords: CoordLike, params: CovParams) -> np.ndarray:
    """Exact maximum-minimum distance ordering under the scaled distance.

    The first point is the one nearest the centroid of the scaled
    coordinates. Each subsequent point maximizes its minimum distance to
    the points already ordered; ties go to the lower original index.

    Returns
    -------
    numpy.ndarray
        Permutation of ``0..n-1`` (original indices in order).
    """
    return _maxmin_scaled(scaled_coords(coords, params))


# --------------------------------------------------------------------------- #
# Nearest previously-ordered neighbours
# --------------------------------------------------------------------------- #

def _ordered_nn_scaled(X: np.ndarray, m: int, tie_key: np.ndarray):
    """``min(m, i)`` nearest predecessors of each position of ``X``.

    Returns CSR arrays ``(ptr, idx)``; each row is sorted nearest first.
    """
    n = X.shape[0]
    m = int(m)
    if m < 0:
        raise ValueError("m must be nonnegative")
    counts = np.minimum(np.arange(n), m)
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=ptr[1:])
    idx = np.empty(ptr[-1], dtype=np.int64)
    if m == 0 or n <= 1:
        return ptr, idx

    def _store_sorted(i, cand, dist):
        o = np.lexsort((tie_key[cand], dist))
        idx[ptr[i]:ptr[i + 1]] = cand[o[: counts[i]]]

    # early positions: every predecessor is a neighbour
    head = min(n, m + 1)
    for i in range(1, head):
        cand = np.arange(i)
        dist = np.sqrt(np.sum((X[cand] - X[i]) ** 2, axis=1))
        _store_sorted(i, cand, dist)

    pending = np.arange(head, n)
    if pending.size == 0:
        return ptr, idx
    tree = cKDTree(X)
    k = min(n, 2 * (m + 1))
    while pending.size:
        dd, ii = tree.query(X[pending], k=k)
        dd = dd.reshape(len(pending), k)
        ii = ii.reshape(len(pending), k)
        is_pred = ii < pending[:, None]
        npred = is_pred.sum(axis=1)
        still = []
        for r, i in enumerate(pending.tolist()):
            if npred[r] < m:
                still.append(i)
                continue
            sel = is_pred[r]
            cand = ii[r, sel]
            dist = dd[r, sel]
            o = np.lexsort((tie_key[cand], dist))
            # a tie at the edge of the query window could hide an equal
            # neighbour with a lower index; widen the window in that case
            if k < n and dist[o[m - 1]] >= dd[r, -1]:
                still.append(i)
                continue
            idx[ptr[i]:ptr[i + 1]] = cand[o[:m]]
        pending = np.asarray(still, dtype=np.int64)
        if k >= n:
            break
        k = min(n, 2 * k)
    return ptr, idx


def nn_condition(order: np.ndarray, coords: CoordLike, params: CovParams, m: int):
    """Conditioning sets ``q(i)``: the ``min(m, i)`` nearest predecessors.

    Parameters
    ----------
    order : permutation from :func:`maxmin_order`
    coords : coordinates in the *original* frame
    m : maximum conditioning size

    Returns
    -------
    (ptr, idx) : CSR arrays over positions of the ordered frame, each row
        sorted nearest first.
    """
    order = np.asarray(order, dtype=np.int64)
    X = scaled_coords(coords, params)[order]
    return _ordered_nn_scaled(X, m, order)


# --------------------------------------------------------------------------- #
# SGV latent/response split
# --------------------------------------------------------------------------- #

def sgv_split(q, coords_ordered: CoordLike, params: CovParams, tie_key=None,
              spatial_only: bool = False):
    """Split each ``q(i)`` into latent (``q_y``) and response (``q_z``) parts.

    ``p(i)`` is the set of members of ``q(i)`` whose own latent set overlaps
    ``q(i)`` the most; ``k_i`` is the member of ``p(i)`` nearest ``i`` and
    ``q_y(i) = {k_i} | (q_y(k_i) & q(i))``. With ``spatial_only`` the nearest
    member is chosen using the spatial norm alone.

    Parameters
    ----------
    q : (ptr, idx) CSR conditioning sets over ordered positions
    coords_ordered : coordinates already in the ordered frame
    tie_key : optional per-position keys for distance ties (original indices)

    Returns
    -------
    (qy_ptr, qy_idx, qz_ptr, qz_idx), each row sorted ascending.
    """
    ptr, idx = q
    xyt = as_coord_array(coords_ordered)
    if spatial_only:
        X = xyt[:, :2] / params.gamma_s
    else:
        X = scaled_coords(xyt, params)
    n = len(ptr) - 1
    if tie_key is None:
        tie_key = np.arange(n)
    qy: list = [frozenset()] * n
    qy_rows = []
    qz_rows = []
    for i in range(n):
        qi = idx[ptr[i]:ptr[i + 1]]
        if qi.size == 0:
            qy_rows.append(())
            qz_rows.append(())
            continue
        qset = frozenset(qi.tolist())
        overlaps = [len(qy[j] & qset) for j in qi.tolist()]
        best = max(overlaps)
        cands = qi[np.asarray(overlaps) == best]
        if cands.size == 1:
            k = int(cands[0])
        else:
            dist = np.sum((X[cands] - X[i]) ** 2, axis=1)
            k = int(cands[np.lexsort((tie_key[cands], dist))[0]])
        s = (qy[k] & qset) | {k}
        qy[i] = frozenset(s)
        qy_rows.append(tuple(sorted(s)))
        qz_rows.append(tuple(sorted(qset - s)))
    return _rows_to_csr(qy_rows) + _rows_to_csr(qz_rows)


def _rows_to_csr(rows):
    counts = np.fromiter((len(r) for r in rows), dtype=np.int64, count=len(rows))
    ptr = np.zeros(len(rows) + 1, dtype=np.int64)
    np.cumsum(counts, out=ptr[1:])
    flat = np.fromiter((v for r in rows for v in r), dtype=np.int64, count=int(ptr[-1]))
    return ptr, flat


def _row(ptr, idx, i):
    return idx[ptr[i]:ptr[i + 1]]


# --------------------------------------------------------------------------- #
# Plans
# --------------------------------------------------------------------------- #

@dataclass
class VariableLayout:
    """Generic description of the interleaved variable vector behind U.

    Variable ``v`` is either the latent ``y`` or the response ``z`` at
    coordinate ``var_coord[v]`` (a row of ``coords``). Its conditioning set
    ``g(v)``, stored sorted in CSR form, only holds variables ``< v``.
    """

    coords: np.ndarray
    var_coord: np.ndarray
    var_is_z: np.ndarray
    g_ptr: np.ndarray
    g_idx: np.ndarray

    @property
    def n_vars(self) -> int:
        return self.var_coord.shape[0]

    @property
    def is_y(self) -> np.ndarray:
        return ~self.var_is_z


@dataclass
class OrderingPlan:
    """Estimation plan: maxmin order, conditioning sets and their SGV split.

    Attributes
    ----------
    order : original indices in maxmin order
    coords : coordinates in the ordered frame, shape (n, 3)
    m : maximum conditioning size
    q_ptr, q_idx : conditioning sets (positions, nearest first)
    qy_ptr, qy_idx, qz_ptr, qz_idx : SGV split (positions, ascending)
    """

    order: np.ndarray
    coords: np.ndarray
    m: int
    q_ptr: np.ndarray
    q_idx: np.ndarray
    qy_ptr: np.ndarray
    qy_idx: np.ndarray
    qz_ptr: np.ndarray
    qz_idx: np.ndarray

    def __post_init__(self):
        self._layout = None
        self._symbolic = None

    @property
    def n(self) -> int:
        return self.order.shape[0]

    def q(self, i: int) -> np.ndarray:
        return _row(self.q_ptr, self.q_idx, i)

    def q_y(self, i: int) -> np.ndarray:
        return _row(self.qy_ptr, self.qy_idx, i)

    def q_z(self, i: int) -> np.ndarray:
        return _row(self.qz_ptr, self.qz_idx, i)

    @property
    def is_full(self) -> bool:
        return bool(np.all(np.diff(self.q_ptr) == np.arange(self.n)))

    def layout(self) -> VariableLayout:
        """Interleaved ``u = (y_0, z_0, y_1, z_1, ...)``."""
        if self._layout is None:
            n = self.n
            nv = 2 * n
            var_coord = np.repeat(np.arange(n, dtype=np.int64), 2)
            var_is_z = np.tile(np.array([False, True]), n)
            ny = np.diff(self.qy_ptr)
            nz = np.diff(self.qz_ptr)
            sizes = np.empty(nv, dtype=np.int64)
            sizes[0::2] = ny + nz
            sizes[1::2] = 1
            g_ptr = np.zeros(nv + 1, dtype=np.int64)
            np.cumsum(sizes, out=g_ptr[1:])
            g_idx = np.empty(g_ptr[-1], dtype=np.int64)
            # y-members map to 2j, z-members to 2j+1; merge keeps rows sorted
            ycol = np.repeat(np.arange(n), ny)
            zcol = np.repeat(np.arange(n), nz)
            members = np.concatenate([2 * self.qy_idx, 2 * self.qz_idx + 1])
            owner = np.concatenate([ycol, zcol])
            o = np.lexsort((members, owner))
            ystarts = g_ptr[0:-1:2]
            pos = ystarts[owner[o]] + (np.arange(o.size) - np.repeat(
                np.concatenate([[0], np.cumsum(ny + nz)[:-1]]), ny + nz))
            g_idx[pos] = members[o]
            g_idx[g_ptr[1::2][:n]] = 2 * np.arange(n)
            self._layout = VariableLayout(self.coords, var_coord, var_is_z, g_ptr, g_idx)
        return self._layout


def build_ordering_plan(coords: CoordLike, params: CovParams, m: int,
                        spatial_only_split: bool = False) -> OrderingPlan:
    """Maxmin order, nearest-neighbour conditioning and SGV split in one call."""
    xyt = as_coord_array(coords)
    order = maxmin_order(xyt, params)
    ordered = xyt[order]
    n = xyt.shape[0]
    if m >= n - 1:
        # full conditioning: every predecessor, and the SGV split is all-latent
        # (by induction each predecessor's latent set is all of its predecessors)
        q_ptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.arange(n), out=q_ptr[1:])
        q_idx = np.concatenate([np.arange(i) for i in range(n)]).astype(np.int64)
        empty = np.zeros(n + 1, dtype=np.int64)
        return OrderingPlan(order, ordered, int(m), q_ptr, q_idx, q_ptr, q_idx,
                            empty, np.zeros(0, np.int64))
    q_ptr, q_idx = nn_condition(order, xyt, params, m)
    qy_ptr, qy_idx, qz_ptr, qz_idx = sgv_split(
        (q_ptr, q_idx), ordered, params, tie_key=order, spatial_only=spatial_only_split)
    return OrderingPlan(order, ordered, int(m), q_ptr, q_idx, qy_ptr, qy_idx, qz_ptr, qz_idx)


@dataclass
class PredictionPlan:
    """Response-first joint plan over ``(z_0..z_{n-1}, y_0..y_{n_all-1})``.

    Positions ``0..n-1`` of ``y`` are observed coordinates (maxmin order
    ``obs_order``) and ``n..n_all-1`` are prediction coordinates (order
    ``pred_order``). Every ``z`` is unconditioned; ``y_i`` conditions on
    ``q(i)``, of which members ``j < i`` enter as ``y_j`` and the rest as
    ``z_j``.
    """

    obs_order: np.ndarray
    pred_order: np.ndarray
    coords: np.ndarray
    m: int
    q_ptr: np.ndarray
    q_idx: np.ndarray

    def __post_init__(self):
        self._layout = None
        self._symbolic = None

    @property
    def n(self) -> int:
        return self.obs_order.shape[0]

    @property
    def n_pred(self) -> int:
        return self.pred_order.shape[0]

    @property
    def n_all(self) -> int:
        return self.n + self.n_pred

    def q(self, i: int) -> np.ndarray:
        return _row(self.q_ptr, self.q_idx, i)

    def q_y(self, i: int) -> np.ndarray:
        qi = self.q(i)
        return np.sort(qi[qi < i])

    def q_z(self, i: int) -> np.ndarray:
        qi = self.q(i)
        return np.sort(qi[qi >= i])

    @property
    def is_full(self) -> bool:
        n, na = self.n, self.n_all
        expect = np.concatenate([np.full(n, n), np.arange(n, na)])
        return bool(np.all(np.diff(self.q_ptr) == expect))

    def layout(self) -> VariableLayout:
        if self._layout is None:
            n, na = self.n, self.n_all
            nv = n + na
            var_coord = np.concatenate([np.arange(n), np.arange(na)]).astype(np.int64)
            var_is_z = np.concatenate([np.ones(n, bool), np.zeros(na, bool)])
            sizes = np.concatenate([np.zeros(n, np.int64), np.diff(self.q_ptr)])
            g_ptr = np.zeros(nv + 1, dtype=np.int64)
            np.cumsum(sizes, out=g_ptr[1:])
            owner = np.repeat(np.arange(na), np.diff(self.q_ptr))
            j = self.q_idx
            # y_j (variable n + j) when j precedes the owner, else z_j (variable j)
            members = np.where(j < owner, n + j, j)
            o = np.lexsort((members, owner))
            g_idx = members[o].astype(np.int64)
            self._layout = VariableLayout(self.coords, var_coord, var_is_z, g_ptr, g_idx)
        return self._layout


def build_prediction_plan(obs: CoordLike, pred: CoordLike, params: CovParams, m: int,
                          obs_order: Optional[np.ndarray] = None) -> PredictionPlan:
    """RF-full plan for joint prediction.

    Observed coordinates come first in their own maxmin order, followed by
    the prediction coordinates in theirs. For an observed position ``i`` the
    eligible set is every observed coordinate including ``i`` itself (which
    is always kept when ``m >= 1``); for a prediction position it is every
    observed coordinate plus earlier prediction coordinates. The ``m``
    nearest eligible coordinates form ``q(i)``.
    """
    m = int(m)
    if m < 0:
        raise ValueError("m must be nonnegative")
    obs_xyt = as_coord_array(obs)
    pred_xyt = np.asarray(pred.xyt if hasattr(pred, "xyt") else pred, dtype=float).reshape(-1, 3)
    if obs_xyt.shape[0] < 1:
        raise ValueError("at least one observation is required")
    n, npred = obs_xyt.shape[0], pred_xyt.shape[0]
    oo = maxmin_order(obs_xyt, params) if obs_order is None else np.asarray(obs_order, np.int64)
    po = maxmin_order(pred_xyt, params) if npred else np.zeros(0, np.int64)
    coords = np.vstack([obs_xyt[oo], pred_xyt[po]])
    Xo = scaled_coords(obs_xyt[oo], params)
    Xp = scaled_coords(pred_xyt[po], params) if npred else np.zeros((0, 3))
    key = np.concatenate([oo, n + po])
    rows: list = []

    mo = min(m, n)
    tree = cKDTree(Xo)
    if mo > 0:
        # observed block: self plus nearest other observations
        kq = min(n, mo + 1)
        dd, ii = tree.query(Xo, k=kq)
        dd = dd.reshape(n, kq)
        ii = ii.reshape(n, kq)
        for i in range(n):
            if kq >= n:
                cand = np.arange(n)
                dist = np.sqrt(np.sum((Xo - Xo[i]) ** 2, axis=1))
            else:
                cand, dist = ii[i], dd[i]
                if dist[-1] <= dist[min(mo, kq) - 1]:   # tie at window edge
                    cand = np.arange(n)
                    dist = np.sqrt(np.sum((Xo - Xo[i]) ** 2, axis=1))
            keep = cand != i
            cand, dist = cand[keep], dist[keep]
            o = np.lexsort((key[cand], dist))[: mo - 1]
            rows.append(np.concatenate([[i], cand[o]]))
    else:
        rows.extend(np.zeros(0, np.int64) for _ in range(n))

    if npred:
        mp = min(m, n + npred - 1)
        pp_ptr, pp_idx = _ordered_nn_scaled(Xp, m, key[n:]) if m > 0 else (
            np.zeros(npred + 1, np.int64), np.zeros(0, np.int64))
        kq = min(n, m)
        if kq > 0:
            dd, ii = tree.query(Xp, k=kq)
            dd = dd.reshape(npred, kq)
            ii = ii.reshape(npred, kq)
        for k in range(npred):
            pv = pp_idx[pp_ptr[k]:pp_ptr[k + 1]]
            cp = n + pv
            dp = np.sqrt(np.sum((Xp[pv] - Xp[k]) ** 2, axis=1))
            if kq > 0:
                co, do = ii[k], dd[k]
                if kq < n:
                    # observations tied with the window edge would be missed
                    extra = tree.query_ball_point(Xp[k], do[-1])
                    if len(extra) > kq:
                        co = np.asarray(extra, np.int64)
                        do = np.sqrt(np.sum((Xo[co] - Xp[k]) ** 2, axis=1))
            else:
                co = np.zeros(0, np.int64)
                do = np.zeros(0)
            cand = np.concatenate([co, cp])
            dist = np.concatenate([do, dp])
            o = np.lexsort((key[cand], dist))[:mp]
            rows.append(cand[o])

    counts = np.fromiter((len(r) for r in rows), dtype=np.int64, count=len(rows))
    q_ptr = np.zeros(len(rows) + 1, dtype=np.int64)
    np.cumsum(counts, out=q_ptr[1:])
    q_idx = np.concatenate(rows).astype(np.int64) if rows else np.zeros(0, np.int64)
    return PredictionPlan(oo, po, coords, m, q_ptr, q_idx)
