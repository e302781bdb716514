"""Spatiotemporal coordinates, scaled distance and the exponential kernel.

Coordinates are planar kilometres plus time in days. Everything downstream
works on an ``(n, 3)`` float array ``[x_km, y_km, t_days]``; :class:`CoordSet`
is a thin validated wrapper around that array.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.spatial.distance import cdist

__all__ = [
    "Coord",
    "CoordSet",
    "CovParams",
    "as_coord_array",
    "scaled_coords",
    "scaled_distance",
    "cov_latent",
    "cov_observed",
    "kernel_entry",
    "latent_cov_matrix",
    "observed_cov_matrix",
    "lonlat_to_km",
]

EARTH_RADIUS_KM = 6371.0088


@dataclass(frozen=True)
class Coord:
    """A single (s, t) pair: planar position in km and time in days."""

    s: tuple
    t: float

    def __post_init__(self):
        s = tuple(float(v) for v in self.s)
        if len(s) != 2:
            raise ValueError("spatial position must have two components")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "t", float(self.t))
        if not (np.all(np.isfinite(s)) and np.isfinite(self.t)):
            raise ValueError("coordinate components must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.s[0], self.s[1], self.t])


@dataclass
class CoordSet:
    """Ordered coordinates stored as an ``(n, 3)`` array.

    Parameters
    ----------
    xyt : array_like, shape (n, 3)
        Columns are x (km), y (km) and t (days).
    ids : sequence, optional
        Labels carried along for output; not used in any computation.
    """

    xyt: np.ndarray
    ids: Optional[Sequence] = field(default=None)

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.xyt, dtype=float))
        if arr.ndim == 1 and arr.size == 3:
            arr = arr.reshape(1, 3)
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise ValueError(f"coordinates must have shape (n, 3), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("coordinates contain NaN or infinite entries")
        self.xyt = arr
        if self.ids is not None and len(self.ids) != arr.shape[0]:
            raise ValueError("ids length does not match number of coordinates")

    @classmethod
    def from_coords(cls, coords: Sequence[Coord], ids=None) -> "CoordSet":
        return cls(np.array([c.as_array() for c in coords]).reshape(-1, 3), ids)

    def __len__(self) -> int:
        return self.xyt.shape[0]

    def __getitem__(self, i) -> Coord:
        x, y, t = self.xyt[i]
        return Coord((x, y), t)

    def subset(self, idx) -> "CoordSet":
        idx = np.asarray(idx)
        ids = None if self.ids is None else [self.ids[i] for i in idx]
        return CoordSet(self.xyt[idx], ids)


@dataclass(frozen=True)
class CovParams:
    """Covariance parameters ``theta = (sigma, gamma_s, gamma_t, tau)``.

    ``sigma`` and ``tau`` are standard deviations in response units,
    ``gamma_s`` is in km and ``gamma_t`` in days.
    """

    sigma: float
    gamma_s: float
    gamma_t: float
    tau: float

    def __post_init__(self):
        for name in ("sigma", "gamma_s", "gamma_t", "tau"):
            v = float(getattr(self, name))
            object.__setattr__(self, name, v)
            if not np.isfinite(v):
                raise ValueError(f"{name} must be finite")
        if self.sigma <= 0 or self.gamma_s <= 0 or self.gamma_t <= 0:
            raise ValueError("sigma, gamma_s and gamma_t must be positive")
        if self.tau < 0:
            raise ValueError("tau must be nonnegative")

    @property
    def sigma2(self) -> float:
        return self.sigma * self.sigma

    @property
    def tau2(self) -> float:
        return self.tau * self.tau

    def to_log(self) -> np.ndarray:
        return np.log([self.sigma, self.gamma_s, self.gamma_t, self.tau])

    @classmethod
    def from_log(cls, v) -> "CovParams":
        s, gs, gt, t = np.exp(np.asarray(v, dtype=float))
        return cls(s, gs, gt, t)

    def as_tuple(self) -> tuple:
        return (self.sigma, self.gamma_s, self.gamma_t, self.tau)


CoordLike = Union[CoordSet, np.ndarray]


def as_coord_array(coords: CoordLike) -> np.ndarray:
    """Return the ``(n, 3)`` float array behind ``coords``."""
    if isinstance(coords, CoordSet):
        return coords.xyt
    return CoordSet(coords).xyt


def scaled_coords(coords: CoordLike, params: CovParams) -> np.ndarray:
    """Coordinates divided by the ranges, so Euclidean distance equals d_theta."""
    xyt = as_coord_array(coords)
    scale = np.array([params.gamma_s, params.gamma_s, params.gamma_t])
    return xyt / scale


def _as_point(a) -> np.ndarray:
    if isinstance(a, Coord):
        return a.as_array()
    return np.asarray(a, dtype=float).reshape(3)


def scaled_distance(a: Coord, b: Coord, params: CovParams) -> float:
    """``sqrt(|s_a - s_b|^2 / gamma_s^2 + (t_a - t_b)^2 / gamma_t^2)``."""
    pa, pb = _as_point(a), _as_point(b)
    dx = (pa[0] - pb[0]) / params.gamma_s
    dy = (pa[1] - pb[1]) / params.gamma_s
    dt = (pa[2] - pb[2]) / params.gamma_t
    return float(np.sqrt(dx * dx + dy * dy + dt * dt))


def cov_latent(a: Coord, b: Coord, params: CovParams) -> float:
    """Latent process covariance ``sigma^2 exp(-d(a, b))``."""
    return params.sigma2 * float(np.exp(-scaled_distance(a, b, params)))


def _check_index(i: int, n: int) -> int:
    if not (-n <= i < n) or isinstance(i, bool):
        raise IndexError(f"coordinate index {i} out of range for n={n}")
    return i % n


def cov_observed(a_idx: int, b_idx: int, coords: CoordLike, params: CovParams) -> float:
    """Covariance of the noisy responses ``z_a`` and ``z_b``.

    The nugget ``tau^2`` is added only when the two indices coincide, so two
    distinct observations at the same location still carry independent noise.
    """
    return kernel_entry(a_idx, b_idx, "z", "z", coords, params)


def kernel_entry(a_idx: int, b_idx: int, kind_a: str, kind_b: str,
                 coords: CoordLike, params: CovParams) -> float:
    """Covariance between a latent (``"y"``) or response (``"z"``) variable pair.

    ``K(z_i, z_j) = C_ij + 1{i=j} tau^2``; every other combination is ``C_ij``.
    """
    xyt = as_coord_array(coords)
    n = xyt.shape[0]
    i = _check_index(a_idx, n)
    j = _check_index(b_idx, n)
    for k in (kind_a, kind_b):
        if k not in ("y", "z"):
            raise ValueError(f"variable kind must be 'y' or 'z', got {k!r}")
    val = cov_latent(xyt[i], xyt[j], params)
    if kind_a == "z" and kind_b == "z" and i == j:
        val += params.tau2
    return val


def _pairwise_scaled(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return cdist(a, b)


def latent_cov_matrix(coords: CoordLike, params: CovParams,
                      coords2: Optional[CoordLike] = None) -> np.ndarray:
    """Dense latent covariance matrix. Intended for oracles and small baselines."""
    a = scaled_coords(coords, params)
    b = a if coords2 is None else scaled_coords(coords2, params)
    return params.sigma2 * np.exp(-_pairwise_scaled(a, b))


def observed_cov_matrix(coords: CoordLike, params: CovParams) -> np.ndarray:
    """Dense ``C + tau^2 I``."""
    K = latent_cov_matrix(coords, params)
    K[np.diag_indices_from(K)] += params.tau2
    return K


def lonlat_to_km(lon, lat, lat0: Optional[float] = None, lon0: float = 0.0):
    """Equirectangular projection of degrees to planar km.

    ``lat0`` defaults to the mean latitude, which keeps east-west distances
    honest over a regional domain.
    """
    lon = np.asarray(lon, dtype=float)
    lat = np.asarray(lat, dtype=float)
    if lat0 is None:
        lat0 = float(np.mean(lat)) if lat.size else 0.0
    k = np.pi / 180.0 * EARTH_RADIUS_KM
    x = (lon - lon0) * k * np.cos(np.deg2rad(lat0))
    y = lat * k
    return x, y
