"""Simulation study: scenarios, synthetic data, scores and the study runner.

Covariates are synthetic: families of smooth spatiotemporal random fields
seen through three buffer scales, point-source decay fields at three decay
ranges, and pure-noise columns (p = 123 in total). Eight of the non-noise
columns carry the true effects.
"""
from __future__ import annotations

import csv
import logging
import math
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import erf

from .geometry import CoordSet, CovParams, as_coord_array, latent_cov_matrix

log = logging.getLogger(__name__)

__all__ = [
    "Scenario",
    "ScorePanel",
    "TruthSpec",
    "SimData",
    "TRUE_COEFS",
    "DEFAULT_DOMAIN",
    "sample_coords",
    "synth_covariates",
    "sample_gp_error",
    "score_predictions",
    "gaussian_crps",
    "score_selection",
    "simulate_replicate",
    "baseline_scenarios",
    "joint_scenarios",
    "run_study",
    "summarize",
    "write_long_csv",
]

TRUE_COEFS = (5.0, 5.0, 3.0, -3.0, -5.0, 10.0, 3.0, 5.0)
DEFAULT_DOMAIN = (4500.0, 2700.0)        # km, roughly the contiguous US
N_GP_FAMILIES = 32
N_PS_FAMILIES = 6
N_NOISE = 9
BUFFERS_KM = (1.0, 10.0, 100.0)
DECAYS_KM = (1.0, 10.0, 100.0)
GP_DENSE_MAX_N = 5000


@dataclass(frozen=True)
class Scenario:
    """One data-generating setting.

    ``sigma2_mult`` sets ``sigma2_total = sigma2_mult * s2_trend`` where
    ``s2_trend`` is the sample variance of the true trend ``X beta``.
    """

    scenario_id: str = "baseline"
    gamma_s: float = 1000.0
    gamma_t: float = 30.0
    sigma2_mult: float = 1.0
    ratio: float = 0.25
    n: int = 500
    n_P: int = 500
    n_sites: int = 50
    n_days: int = 276

    def __post_init__(self):
        if not 0.0 < self.ratio < 1.0:
            raise ValueError("nugget-to-sill ratio must lie in (0, 1)")
        if not (self.gamma_s > 0 and self.gamma_t > 0 and self.sigma2_mult > 0):
            raise ValueError("ranges and variance multiple must be positive")

    def params(self, s2_trend: float) -> CovParams:
        total = self.sigma2_mult * s2_trend
        return CovParams(math.sqrt((1.0 - self.ratio) * total), self.gamma_s, self.gamma_t,
                         math.sqrt(self.ratio * total))


def baseline_scenarios(n: int = 500, n_P: int = 500) -> List[Scenario]:
    """Baseline plus one-at-a-time variations of each parameter."""
    base = Scenario("baseline", n=n, n_P=n_P)
    out = [base]
    for key, vals in (("gamma_s", (200.0, 3000.0)), ("gamma_t", (7.0, 365.0)),
                      ("sigma2_mult", (0.5, 5.0)), ("ratio", (0.01, 0.99))):
        for v in vals:
            kw = asdict(base)
            kw.update(scenario_id=f"{key}={v:g}", **{key: v})
            out.append(Scenario(**kw))
    return out


def joint_scenarios(n: int = 500, n_P: int = 500) -> List[Scenario]:
    """The 30-cell grid varying ratio, variance multiple and spatial range jointly."""
    out = []
    for r in (0.1, 0.33, 0.5, 0.67, 0.9):
        for mult in (1.0, 4.0):
            for gs in (30.0, 300.0, 3000.0):
                out.append(Scenario(f"joint:ratio={r:g},mult={mult:g},gamma_s={gs:g}",
                                    gamma_s=gs, gamma_t=30.0, sigma2_mult=mult, ratio=r,
                                    n=n, n_P=n_P))
    return out


# --------------------------------------------------------------------------- #
# Data generation
# --------------------------------------------------------------------------- #

def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_coords(n_total: int, n_sites: int = 50, n_days: int = 276,
                  domain: Tuple[float, float] = DEFAULT_DOMAIN, seed=0,
                  n_train: Optional[int] = None) -> Tuple[CoordSet, CoordSet]:
    """Draw ``n_total`` distinct site-day pairs and split them at random.

    Sites are uniform on ``[0, domain[0]] x [0, domain[1]]``; the ``n_days``
    distinct days are a sorted random subset of one year. ``n_train``
    defaults to half (rounded down).
    """
    n_total, n_sites, n_days = int(n_total), int(n_sites), int(n_days)
    if n_sites < 1 or n_days < 1 or not 0 < n_total <= n_sites * n_days:
        raise ValueError(f"cannot draw {n_total} coordinates from {n_sites} sites x {n_days} days")
    if n_days > 365:
        raise ValueError("at most 365 distinct days")
    n_train = n_total // 2 if n_train is None else int(n_train)
    if not 0 <= n_train <= n_total:
        raise ValueError("n_train must lie in [0, n_total]")
    rng = _rng(seed)
    sites = rng.uniform(0.0, 1.0, (n_sites, 2)) * np.asarray(domain, float)
    days = np.sort(rng.choice(365, size=n_days, replace=False)).astype(float)
    cells = rng.choice(n_sites * n_days, size=n_total, replace=False)
    si, di = np.divmod(cells, n_days)
    xyt = np.column_stack([sites[si], days[di]])
    perm = rng.permutation(n_total)
    tr, te = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    return CoordSet(xyt[tr], ids=[int(c) for c in cells[tr]]), \
        CoordSet(xyt[te], ids=[int(c) for c in cells[te]])


@dataclass
class TruthSpec:
    """True coefficients over the candidate columns."""

    beta: np.ndarray
    names: List[str]
    max_truth_corr: float

    @property
    def mask(self) -> np.ndarray:
        return self.beta != 0

    @property
    def index(self) -> np.ndarray:
        return np.flatnonzero(self.beta)


def _rff_field(xyt, rng, length_s, length_t, n_feat=200, buffer_km=0.0):
    """Smooth field by random Fourier features of a Gaussian kernel.

    A Gaussian buffer of radius ``buffer_km`` damps each spatial frequency.
    """
    w = rng.standard_normal((n_feat, 2)) / length_s
    nu = rng.standard_normal(n_feat) / length_t
    ph = rng.uniform(0.0, 2.0 * np.pi, n_feat)
    damp = np.exp(-0.5 * buffer_km ** 2 * np.sum(w * w, axis=1))
    arg = xyt[:, :2] @ w.T + np.outer(xyt[:, 2], nu) + ph
    return np.sqrt(2.0 / n_feat) * np.cos(arg) @ damp


def _point_source_field(xyt, rng, anchors, decay_km):
    k = anchors.shape[0]
    src = anchors + rng.normal(0.0, 2.0 * decay_km, (k, 2))
    amp = rng.lognormal(0.0, 0.5, k)
    phase = rng.uniform(0.0, 2.0 * np.pi, k)
    d = np.sqrt(((xyt[:, None, :2] - src[None]) ** 2).sum(-1))
    season = np.exp(0.3 * np.sin(2.0 * np.pi * xyt[:, 2:3] / 365.0 + phase))
    return (amp * season * np.exp(-d / decay_km)).sum(axis=1)


def _standardize_cols(X):
    X = X - X.mean(axis=0)
    sd = X.std(axis=0)
    X = X / np.where(sd > 0, sd, 1.0)
    # second pass trims rounding so mean and sd hold to ~1e-15
    X = X - X.mean(axis=0)
    return X / X.std(axis=0)


def synth_covariates(coords, seed=0, max_truth_corr: float = 0.6,
                     max_redraws: int = 200) -> Tuple[np.ndarray, List[str], TruthSpec]:
    """Synthetic candidate covariates at ``coords``; returns ``(X, names, truth)``.

    Columns are standardized over the rows supplied, so pass training and
    test coordinates together.
    """
    xyt = as_coord_array(coords)
    n = xyt.shape[0]
    rng = _rng(seed)
    cols, names = [], []
    for f in range(N_GP_FAMILIES):
        ls = math.exp(rng.uniform(math.log(300.0), math.log(3000.0)))
        lt = math.exp(rng.uniform(math.log(7.0), math.log(365.0)))
        feat_seed = int(rng.integers(2**63))
        for b, (bk, nv) in enumerate(zip(BUFFERS_KM, (0.3, 0.1, 0.02))):
            # same features for every buffer; only the damping and local noise differ
            base = _rff_field(xyt, np.random.default_rng(feat_seed), ls, lt, buffer_km=bk)
            local = rng.standard_normal(n) * math.sqrt(nv) * base.std()
            cols.append(base + local)
            names.append(f"field{f + 1:02d}_{int(bk)}km")
    for f in range(N_PS_FAMILIES):
        anchors = xyt[rng.choice(n, size=min(30, n), replace=False), :2]
        for dk in DECAYS_KM:
            cols.append(_point_source_field(xyt, rng, anchors, dk))
            names.append(f"source{f + 1}_{int(dk)}km")
    for j in range(N_NOISE):
        cols.append(rng.standard_normal(n))
        names.append(f"noise{j + 1}")
    X = np.column_stack(cols)
    if np.any(X.std(axis=0) == 0):
        raise ArithmeticError("a synthetic covariate came out constant")
    X = _standardize_cols(X)

    # truth: six buffered fields, one point source at the widest decay, one field
    gp_buffers = (0, 1, 2, 1, 2, 0, None, 1)
    corr = np.corrcoef(X, rowvar=False) if n > 1 else np.eye(X.shape[1])
    for _ in range(max_redraws):
        fams = rng.choice(N_GP_FAMILIES, size=7, replace=False)
        ps = rng.integers(N_PS_FAMILIES)
        idx = []
        fi = iter(fams)
        for b in gp_buffers:
            if b is None:
                idx.append(3 * N_GP_FAMILIES + 3 * int(ps) + 2)
            else:
                idx.append(3 * int(next(fi)) + b)
        sub = np.abs(corr[np.ix_(idx, idx)])
        np.fill_diagonal(sub, 0.0)
        worst = float(sub.max())
        if worst <= max_truth_corr:
            break
    else:
        raise ArithmeticError(f"no truth set with |rho| <= {max_truth_corr} "
                              f"after {max_redraws} draws")
    beta = np.zeros(X.shape[1])
    beta[idx] = TRUE_COEFS
    return X, names, TruthSpec(beta, names, worst)


def sample_gp_error(coords, params: CovParams, seed=0, return_parts: bool = False):
    """``eta + delta`` with ``eta ~ N(0, C_theta)`` and ``delta ~ N(0, tau^2 I)``.

    Dense Cholesky, limited to ``n <= 5000``. With ``return_parts`` the
    pair ``(eta, delta)`` is returned instead of the sum.
    """
    xyt = as_coord_array(coords)
    n = xyt.shape[0]
    if n > GP_DENSE_MAX_N:
        raise ValueError(f"dense GP sampling is limited to n <= {GP_DENSE_MAX_N} (got {n})")
    rng = _rng(seed)
    C = latent_cov_matrix(xyt, params)
    C[np.diag_indices_from(C)] += 1e-10 * params.sigma2
    L = np.linalg.cholesky(C)
    eta = L @ rng.standard_normal(n)
    delta = params.tau * rng.standard_normal(n)
    return (eta, delta) if return_parts else eta + delta


@dataclass
class SimData:
    train_z: np.ndarray
    train_coords: CoordSet
    train_X: np.ndarray
    test_y: np.ndarray              # latent truth X beta + eta
    test_z: np.ndarray              # with measurement noise
    test_coords: CoordSet
    test_X: np.ndarray
    truth: TruthSpec
    params: CovParams
    names: List[str]


def _cell_seed(seed: int, scenario_id: str, replicate: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), zlib.crc32(scenario_id.encode()), int(replicate)])


def simulate_replicate(scenario: Scenario, replicate: int = 0, seed: int = 0) -> SimData:
    """Training and test data for one (scenario, replicate) cell."""
    ss = _cell_seed(seed, scenario.scenario_id, replicate)
    s_coord, s_cov, s_err = (np.random.default_rng(s) for s in ss.spawn(3))
    n_total = scenario.n + scenario.n_P
    tr, te = sample_coords(n_total, scenario.n_sites, scenario.n_days, seed=s_coord,
                           n_train=scenario.n)
    allc = np.vstack([tr.xyt, te.xyt])
    X, names, truth = synth_covariates(allc, s_cov)
    trend = X @ truth.beta
    params = scenario.params(float(np.var(trend)))
    eta, delta = sample_gp_error(allc, params, s_err, return_parts=True)
    y = trend + eta
    z = y + delta
    n = scenario.n
    return SimData(z[:n], tr, X[:n], y[n:], z[n:], te, X[n:], truth, params, names)


# --------------------------------------------------------------------------- #
# Scores
# --------------------------------------------------------------------------- #

def gaussian_crps(y, mu, sd):
    """Closed-form CRPS of ``N(mu, sd^2)`` at ``y`` (elementwise)."""
    y, mu, sd = (np.asarray(a, float) for a in (y, mu, sd))
    w = (y - mu) / sd
    pdf = np.exp(-0.5 * w * w) / math.sqrt(2.0 * math.pi)
    cdf = 0.5 * (1.0 + erf(w / math.sqrt(2.0)))
    return sd * (w * (2.0 * cdf - 1.0) + 2.0 * pdf - 1.0 / math.sqrt(math.pi))


def score_predictions(y_true, mu, var, density_form: bool = False):
    """``(MSE, CRPS, log-score)`` of Gaussian predictives.

    The log-score is the mean negative log density. With ``density_form``
    a fourth value, minus the mean density, is appended.
    """
    y, mu, var = (np.asarray(a, float).reshape(-1) for a in (y_true, mu, var))
    if not (y.size == mu.size == var.size):
        raise ValueError("y_true, mu and var must have equal length")
    if np.any(~(var > 0)):
        raise ValueError("predictive variances must be positive")
    if y.size == 0:
        out = (math.nan, math.nan, math.nan)
        return out + (math.nan,) if density_form else out
    sd = np.sqrt(var)
    r = y - mu
    mse = float(np.mean(r * r))
    crps = float(np.mean(gaussian_crps(y, mu, sd)))
    nll = 0.5 * np.log(2.0 * math.pi * var) + 0.5 * r * r / var
    out = (mse, crps, float(np.mean(nll)))
    if density_form:
        out = out + (float(-np.mean(np.exp(-nll))),)
    return out


def score_selection(beta_hat, truth_mask):
    """``(TNR, TPR, kappa, nnz)`` for the selection pattern ``beta_hat != 0``.

    TNR or TPR is NaN when the truth has no negatives or positives. When the
    chance agreement is 1 (both patterns constant and equal) kappa is 1.
    """
    sel = np.asarray(beta_hat, float).reshape(-1) != 0
    tru = np.asarray(truth_mask, bool).reshape(-1)
    if sel.size != tru.size:
        raise ValueError("beta_hat and truth_mask differ in length")
    p = sel.size
    tp = int(np.sum(sel & tru))
    tn = int(np.sum(~sel & ~tru))
    pos, neg = int(tru.sum()), int((~tru).sum())
    tpr = tp / pos if pos else math.nan
    tnr = tn / neg if neg else math.nan
    po = (tp + tn) / p
    fs, ft = sel.mean(), tru.mean()
    pe = fs * ft + (1.0 - fs) * (1.0 - ft)
    if pe >= 1.0:
        kappa = 1.0 if po == 1.0 else 0.0
    else:
        kappa = (po - pe) / (1.0 - pe)
    return tnr, tpr, float(kappa), int(sel.sum())


@dataclass
class ScorePanel:
    mse: float
    crps: float
    log_score: float
    log_score_density: float
    tnr: float
    tpr: float
    kappa: float
    nnz: float
    fit_seconds: float = math.nan

    def items(self):
        return asdict(self).items()


# --------------------------------------------------------------------------- #
# Study runner
# --------------------------------------------------------------------------- #

_DEFAULT_METHODS = ("lurk-vecchia", "lurk-full", "lurk-local", "lur-iid", "local-kriging")


def _score_cell(data: SimData, fitted, target: str) -> ScorePanel:
    pred = fitted.predict(data.test_coords, data.test_X)
    if target == "latent":
        y, var = data.test_y, pred.var
    else:
        y, var = data.test_z, pred.var_noisy
    var = np.maximum(var, 1e-12 * max(1.0, float(np.var(y))))
    mse, crps, ls, lsd = score_predictions(y, pred.mu, var, density_form=True)
    if fitted.beta_hat is None:
        tnr = tpr = kappa = nnz = math.nan
    else:
        tnr, tpr, kappa, nnz = score_selection(fitted.beta_hat, data.truth.mask)
    return ScorePanel(mse, crps, ls, lsd, tnr, tpr, kappa, float(nnz))


def run_cell(scenario: Scenario, replicate: int, methods: Sequence[str], seed: int = 0,
             cfg=None, target: str = "latent") -> List[Tuple]:
    """Simulate one cell and score each method; failures become ``failed`` rows."""
    from .baselines import fit_method
    from .estimate import EstimationConfig

    cfg = cfg or EstimationConfig()
    data = simulate_replicate(scenario, replicate, seed)
    rows = []
    lur = None
    order = sorted(methods, key=lambda m: m != "lur-iid")    # lur-iid first, reused
    for method in order:
        t0 = time.perf_counter()
        try:
            fitted = fit_method(method, data.train_z, data.train_coords, data.train_X, cfg, lur=lur)
            if method == "lur-iid":
                lur = fitted
            panel = _score_cell(data, fitted, target)
        except Exception as exc:            # recorded, the study goes on
            log.warning("cell %s/%s/%d failed: %s", scenario.scenario_id, method, replicate, exc)
            rows.append((scenario.scenario_id, method, replicate, "failed", 1.0))
            continue
        panel.fit_seconds = time.perf_counter() - t0
        for k, v in panel.items():
            rows.append((scenario.scenario_id, method, replicate, k, float(v)))
    return rows


def _run_cell_args(args):
    return run_cell(*args)


def run_study(scenarios: Iterable[Scenario], methods: Sequence[str] = _DEFAULT_METHODS,
              replicates: int = 20, seed: int = 0, cfg=None, target: str = "latent",
              n_jobs: int = 1) -> List[Tuple]:
    """Long-format rows ``(scenario_id, method, replicate, metric, value)``.

    Each cell is seeded from ``(seed, scenario_id, replicate)`` alone, so the
    result does not depend on ``n_jobs`` or on which other cells run.
    """
    if target not in ("latent", "noisy"):
        raise ValueError("target must be 'latent' or 'noisy'")
    jobs = [(sc, r, tuple(methods), seed, cfg, target)
            for sc in scenarios for r in range(int(replicates))]
    if n_jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            parts = list(ex.map(_run_cell_args, jobs))
    else:
        parts = [run_cell(*j) for j in jobs]
    return [row for part in parts for row in part]


def summarize(rows: Iterable[Tuple]) -> Dict[Tuple[str, str, str], Tuple[float, float, int]]:
    """``(scenario, method, metric) -> (mean, sd, count)`` ignoring NaN values."""
    acc: Dict[Tuple[str, str, str], List[float]] = {}
    for sc, method, _, metric, value in rows:
        acc.setdefault((sc, method, metric), []).append(value)
    out = {}
    for k, vals in acc.items():
        v = np.asarray(vals, float)
        v = v[np.isfinite(v)]
        if v.size:
            out[k] = (float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0, int(v.size))
        else:
            out[k] = (math.nan, math.nan, 0)
    return out


def write_long_csv(rows: Iterable[Tuple], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario_id", "method", "replicate", "metric", "value"])
        for sc, method, rep, metric, value in rows:
            w.writerow([sc, method, rep, metric, "%.17g" % value])
