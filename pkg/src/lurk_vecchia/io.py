"""Data ingestion, run configuration and fit-artifact persistence.

A fit artifact is a directory holding

``fit.txt``
    ``key=value`` lines, starting with ``format_version``.
``beta.csv``
    ``name, beta_std, beta_raw, pct_change, x_mean, x_sd``
    (the first row is the intercept).
``trace.csv``
    One row per outer iteration (main estimator only).
``train.csv``
    The training data as ingested, so the artifact alone supports prediction.
``timings.txt``
    Wall-clock times. Everything else is a pure function of inputs and seed.

Floats are written with 17 significant digits.
"""
from __future__ import annotations

import configparser
import csv
import dataclasses
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .estimate import EstimationConfig, FitResult
from .geometry import CoordSet, CovParams, lonlat_to_km

log = logging.getLogger(__name__)

__all__ = [
    "FORMAT_VERSION",
    "DataError",
    "Dataset",
    "RunConfig",
    "read_dataset",
    "write_dataset",
    "read_config",
    "grid_coords",
    "write_fit_artifact",
    "read_fit_artifact",
    "FitArtifact",
]

FORMAT_VERSION = 1
COORD_COLS = ("x_km", "y_km", "t_days")
LONLAT_COLS = ("lon", "lat", "t_days")


class DataError(ValueError):
    """Invalid input data or configuration (command-line exit code 2)."""


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


@dataclass
class Dataset:
    """Response, coordinates and covariates read from a CSV file.

    ``z`` is on the modelling scale: the natural log of the raw response
    when ``log_response`` is set.
    """

    z: Optional[np.ndarray]
    coords: CoordSet
    X: np.ndarray
    names: List[str]
    response: str = "z"
    log_response: bool = False
    n_dropped: int = 0

    @property
    def n(self) -> int:
        return len(self.coords)


def _read_rows(path):
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            rows = [r for r in reader if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if header is None:
        raise DataError(f"{path} is empty (no header)")
    header = [h.strip() for h in header]
    dup = sorted({h for h in header if header.count(h) > 1})
    if dup:
        raise DataError(f"duplicate column name(s) in {path}: {', '.join(dup)}")
    return header, rows


def _parse_cell(s):
    s = s.strip()
    if s == "" or s.lower() in ("na", "nan", "null"):
        return math.nan
    return float(s)


def read_dataset(path, response: Optional[str] = "z", covariates: Optional[Sequence[str]] = None,
                 log_response: bool = False, lonlat: bool = False,
                 require_response: bool = True) -> Dataset:
    """Read a CSV with a header row.

    Coordinates come from ``x_km, y_km, t_days`` (or ``lon, lat, t_days``
    with ``lonlat``). Covariates default to every other column except the
    response. Rows with a missing cell are dropped and counted.
    """
    header, rows = _read_rows(path)
    ccols = LONLAT_COLS if lonlat else COORD_COLS
    missing = [c for c in ccols if c not in header]
    has_resp = response is not None and response in header
    if require_response and not has_resp:
        missing.append(response)
    if covariates is None:
        skip = set(ccols) | ({response} if response else set())
        covariates = [h for h in header if h not in skip]
    else:
        covariates = list(covariates)
        missing += [c for c in covariates if c not in header]
    if missing:
        raise DataError(f"{path}: missing column(s): {', '.join(missing)}")
    cols = list(ccols) + list(covariates) + ([response] if has_resp else [])
    idx = [header.index(c) for c in cols]
    vals = np.full((len(rows), len(cols)), math.nan)
    for i, r in enumerate(rows):
        if len(r) != len(header):
            raise DataError(f"{path}: row {i + 2} has {len(r)} fields, header has {len(header)}")
        for j, k in enumerate(idx):
            try:
                vals[i, j] = _parse_cell(r[k])
            except ValueError:
                raise DataError(f"{path}: row {i + 2}, column {cols[j]!r}: "
                                f"not a number: {r[k]!r}") from None
    ok = np.all(np.isfinite(vals), axis=1)
    dropped = int((~ok).sum())
    if dropped:
        log.warning("%s: dropped %d row(s) with missing values", path, dropped)
    vals = vals[ok]
    xyt = vals[:, :3].copy()
    if lonlat:
        xyt[:, 0], xyt[:, 1] = lonlat_to_km(xyt[:, 0], xyt[:, 1])
    X = vals[:, 3:3 + len(covariates)]
    z = None
    if has_resp:
        z = vals[:, -1].copy()
        if log_response:
            if np.any(z <= 0):
                raise DataError(f"{path}: log transform needs a positive {response!r}")
            z = np.log(z)
    return Dataset(z, CoordSet(xyt), X, list(covariates), response or "z", bool(log_response),
                   dropped)


def write_dataset(path, ds: Dataset) -> None:
    """Write ``x_km, y_km, t_days``, covariates and (raw-scale) response."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = list(COORD_COLS) + list(ds.names) + ([ds.response] if ds.z is not None else [])
        w.writerow(head)
        z = None if ds.z is None else (np.exp(ds.z) if ds.log_response else ds.z)
        for i in range(ds.n):
            row = [fmt(v) for v in ds.coords.xyt[i]] + [
                "" if math.isnan(v) else fmt(v) for v in ds.X[i]]
            if z is not None:
                row.append(fmt(z[i]))
            w.writerow(row)


def grid_coords(spec: str) -> np.ndarray:
    """Regular lattice from ``"xmin,xmax,ymin,ymax,nx,ny,t"``; x varies fastest."""
    try:
        parts = [p.strip() for p in spec.split(",")]
        if len(parts) != 7:
            raise ValueError
        x0, x1, y0, y1 = (float(p) for p in parts[:4])
        nx, ny = int(parts[4]), int(parts[5])
        t = float(parts[6])
    except ValueError:
        raise DataError("--grid expects xmin,xmax,ymin,ymax,nx,ny,t") from None
    if nx < 1 or ny < 1:
        raise DataError("grid sizes must be positive")
    gx = np.linspace(x0, x1, nx)
    gy = np.linspace(y0, y1, ny)
    X, Y = np.meshgrid(gx, gy)
    return np.column_stack([X.ravel(), Y.ravel(), np.full(nx * ny, t)])


# --------------------------------------------------------------------------- #
# Run configuration
# --------------------------------------------------------------------------- #

_EST_FIELDS = {f.name: f for f in dataclasses.fields(EstimationConfig)}
_EST_SKIP = {"theta0"}


@dataclass
class RunConfig:
    """Estimation settings plus data paths, method and output location."""

    estimation: EstimationConfig = field(default_factory=EstimationConfig)
    data: Optional[str] = None
    predict_data: Optional[str] = None
    out: Optional[str] = None
    method: str = "lurk-vecchia"
    folds: int = 10
    response: str = "z"
    covariates: Optional[List[str]] = None
    log_response: bool = False
    lonlat: bool = False


_RUN_KEYS = {"data", "predict_data", "out", "method", "folds", "response", "covariates",
             "log_response", "lonlat"}


def _convert(name, raw, typ):
    raw = raw.strip()
    typ = str(typ)
    try:
        if "bool" in typ:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if "int" in typ:
            return int(raw)
        if "float" in typ:
            return float(raw)
    except ValueError:
        raise DataError(f"config key {name!r}: cannot parse {raw!r} as {typ}") from None
    return raw


def read_config(path) -> RunConfig:
    """Parse an INI file with ``[run]`` and ``[estimation]`` sections.

    Unknown keys and sections are rejected before any computation.
    """
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    bad = [s for s in cp.sections() if s not in ("run", "estimation")]
    if bad:
        raise DataError(f"unknown config section(s): {', '.join(bad)}")
    est = {}
    if cp.has_section("estimation"):
        for k, v in cp.items("estimation"):
            if k not in _EST_FIELDS or k in _EST_SKIP:
                raise DataError(f"unknown estimation key {k!r}")
            est[k] = _convert(k, v, _EST_FIELDS[k].type)
    run = {}
    if cp.has_section("run"):
        types = {f.name: f.type for f in dataclasses.fields(RunConfig)}
        for k, v in cp.items("run"):
            if k not in _RUN_KEYS:
                raise DataError(f"unknown run key {k!r}")
            if k == "covariates":
                run[k] = [c.strip() for c in v.split(",") if c.strip()]
            else:
                run[k] = _convert(k, v, types[k])
    try:
        cfg = EstimationConfig(**est)
    except (TypeError, ValueError) as exc:
        raise DataError(f"invalid estimation settings: {exc}") from exc
    rc = RunConfig(estimation=cfg, **run)
    if rc.folds < 2:
        raise DataError("folds must be at least 2")
    return rc


# --------------------------------------------------------------------------- #
# Fit artifacts
# --------------------------------------------------------------------------- #

@dataclass
class FitArtifact:
    """Contents of a fit directory."""

    meta: Dict[str, str]
    names: List[str]
    coef: Optional[np.ndarray]
    x_mean: np.ndarray
    x_sd: np.ndarray
    train: Dataset

    @property
    def method(self) -> str:
        return self.meta["method"]

    @property
    def theta(self) -> Optional[CovParams]:
        if "theta_sigma" not in self.meta:
            return None
        return CovParams(*(float(self.meta[f"theta_{k}"])
                           for k in ("sigma", "gamma_s", "gamma_t", "tau")))

    @property
    def log_response(self) -> bool:
        return self.meta.get("log_response", "false") == "true"


def write_fit_artifact(outdir, fitted, train: Dataset, extra_meta: Optional[dict] = None):
    """Persist a :class:`~lurk_vecchia.baselines.BaselineFit` to ``outdir``."""
    os.makedirs(outdir, exist_ok=True)
    meta = {"format_version": FORMAT_VERSION, "method": fitted.method,
            "n": train.n, "p": len(train.names), "response": train.response,
            "log_response": train.log_response}
    res = fitted.extra if isinstance(fitted.extra, FitResult) else None
    info = fitted.extra if isinstance(fitted.extra, dict) else {}
    if fitted.theta is not None:
        for k, v in zip(("sigma", "gamma_s", "gamma_t", "tau"), fitted.theta.as_tuple()):
            meta[f"theta_{k}"] = v
    if res is not None:
        meta.update(m=res.m, lambda_hat=res.lambda_hat, converged=res.converged,
                    n_outer=res.n_outer, nm_evals=res.nm_evals, cd_iters=res.cd_iters,
                    objective=res.objective)
    for k in ("m", "lambda", "residual_variance", "mean", "l"):
        if k in info:
            meta[k] = info[k]
    if "path" in info:
        meta["lambda_hat"] = info["path"].lambda_
    if fitted.coef is not None:
        meta["nnz"] = int(np.count_nonzero(fitted.coef[1:]))
    meta.update(extra_meta or {})
    with open(os.path.join(outdir, "fit.txt"), "w") as fh:
        for k, v in meta.items():
            fh.write(f"{k}={fmt(v)}\n")

    with open(os.path.join(outdir, "beta.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "beta_std", "beta_raw", "pct_change", "x_mean", "x_sd"])
        if fitted.coef is not None:
            slopes = fitted.coef[1:] / fitted.x_sd
            b0 = fitted.coef[0] - slopes @ fitted.x_mean
            w.writerow(["(intercept)", fmt(fitted.coef[0]), fmt(b0), "", "", ""])
            for j, name in enumerate(train.names):
                pct = math.expm1(slopes[j]) * 100.0
                w.writerow([name, fmt(fitted.coef[j + 1]), fmt(slopes[j]), fmt(pct),
                            fmt(fitted.x_mean[j]), fmt(fitted.x_sd[j])])

    with open(os.path.join(outdir, "trace.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "sigma", "gamma_s", "gamma_t", "tau", "lambda",
                    "neg2loglik", "penalty", "objective", "nnz", "nm_evals", "accepted"])
        for s in (res.trace if res is not None else []):
            w.writerow([s.iteration] + [fmt(v) for v in s.theta.as_tuple()]
                       + [fmt(s.lambda_), fmt(s.neg2loglik), fmt(s.penalty), fmt(s.objective),
                          s.nnz, s.nm_evals, fmt(s.accepted)])
    write_dataset(os.path.join(outdir, "train.csv"), train)
    if res is not None:
        with open(os.path.join(outdir, "timings.txt"), "w") as fh:
            fh.write(f"wall_time_s={res.wall_time:.6f}\n")


def read_fit_artifact(outdir) -> FitArtifact:
    path = os.path.join(outdir, "fit.txt")
    try:
        with open(path) as fh:
            meta = dict(line.rstrip("\n").split("=", 1) for line in fh if "=" in line)
    except OSError as exc:
        raise DataError(f"cannot read fit artifact {outdir}: {exc}") from exc
    if int(meta.get("format_version", -1)) != FORMAT_VERSION:
        raise DataError(f"unsupported fit artifact version {meta.get('format_version')}")
    header, rows = _read_rows(os.path.join(outdir, "beta.csv"))
    names, coef, mu, sd = [], [], [], []
    for r in rows:
        if r[0] == "(intercept)":
            coef.insert(0, float(r[1]))
            continue
        names.append(r[0])
        coef.append(float(r[1]))
        mu.append(float(r[4]))
        sd.append(float(r[5]))
    log_resp = meta.get("log_response") == "true"
    resp = meta.get("response", "z")
    train = read_dataset(os.path.join(outdir, "train.csv"), response=resp,
                         covariates=names or None, log_response=log_resp)
    if not names:
        train.X = np.zeros((train.n, 0))
        train.names = []
    return FitArtifact(meta, names, np.asarray(coef) if coef else None,
                       np.asarray(mu), np.asarray(sd), train)
