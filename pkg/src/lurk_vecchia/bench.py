"""Timing helpers for the scaling benchmark and the backend comparison.

Timings use synthetic data (uniform coordinates, Gaussian covariates and an
i.i.d. response); the cost of each stage does not depend on the values.
"""
from __future__ import annotations

import time
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from ._backend import available_backends
from .estimate import EstimationConfig, fit, standardize
from .geometry import CovParams, scaled_coords
from .objective import factorize, make_pseudo_data, neg2loglik_direct
from .ordering import build_ordering_plan
from .penalty import ScadParams, lambda_grid, select_lambda_cv
from .sparse_core import _Symbolic, _lower_pattern_from_sym

__all__ = ["synthetic_problem", "time_stages", "compare_backends", "BENCH_THETA"]

BENCH_THETA = CovParams(1.0, 500.0, 30.0, 0.5)


def synthetic_problem(n: int, p: int = 10, seed: int = 0):
    """``(z, xyt, X)`` on a 4500 x 2700 km, one-year domain."""
    rng = np.random.default_rng(seed)
    xyt = np.column_stack([rng.uniform(0, 4500, n), rng.uniform(0, 2700, n),
                           rng.uniform(0, 365, n)])
    X = rng.standard_normal((n, p))
    beta = np.zeros(p)
    beta[: min(3, p)] = (2.0, -1.0, 0.5)[: min(3, p)]
    z = X @ beta + rng.standard_normal(n)
    return z, xyt, X


def _ms(f, repeats=1):
    best = np.inf
    out = None
    for _ in range(max(1, repeats)):
        t0 = time.perf_counter()
        out = f()
        best = min(best, time.perf_counter() - t0)
    return 1e3 * best, out


def time_stages(n: int, m: int = 25, p: int = 10, seed: int = 0, nm_evals: int = 30,
                repeats: int = 1, stages: Optional[Sequence[str]] = None,
                theta: CovParams = BENCH_THETA) -> List[Tuple[int, str, float]]:
    """Wall-clock milliseconds per stage at a fixed ``m``.

    ``fit_iteration`` is one full outer iteration of the estimator (initial
    fit, ``nm_evals`` likelihood evaluations, plan refresh, pseudo-data and
    cross-validated SCAD), the unit of the linear-scaling check.
    """
    want = set(stages or ("plan", "factor", "neg2loglik", "pseudo_data", "scad_cv",
                          "fit_iteration"))
    z, xyt, X = synthetic_problem(n, p, seed)
    Xs, _, _ = standardize(X)
    D = np.column_stack([np.ones(n), Xs])
    pen = np.r_[False, np.ones(p, bool)]
    rows = []
    t, plan = _ms(lambda: build_ordering_plan(xyt, theta, m), repeats)
    if "plan" in want:
        rows.append((n, "plan", t))
    t, _ = _ms(lambda: factorize(plan, theta), 1)          # includes symbolic setup
    t, factor = _ms(lambda: factorize(plan, theta), repeats)
    if "factor" in want:
        rows.append((n, "factor", t))
    if "neg2loglik" in want:
        t, _ = _ms(lambda: neg2loglik_direct(factorize(plan, theta), z), repeats)
        rows.append((n, "neg2loglik", t))
    t, pseudo = _ms(lambda: make_pseudo_data(factor, z, D), repeats)
    if "pseudo_data" in want:
        rows.append((n, "pseudo_data", t))
    if "scad_cv" in want:
        t, _ = _ms(lambda: select_lambda_cv(pseudo, ScadParams(), penalized=pen), repeats)
        rows.append((n, "scad_cv", t))
    if "fit_iteration" in want:
        cfg = EstimationConfig(m=m, max_outer=1, max_nm_evals=nm_evals, nm_restart=False,
                               theta0=theta, seed=seed)
        t, _ = _ms(lambda: fit(z, xyt, X, cfg), repeats)
        rows.append((n, "fit_iteration", t))
    return rows


def compare_backends(n: int = 2000, m: int = 25, p: int = 20, seed: int = 0,
                     repeats: int = 3) -> List[Tuple[int, str, str, float]]:
    """Time each kernel under every importable backend on identical inputs.

    Rows are ``(n, kernel, backend, wall_ms)``; the best of ``repeats`` runs.
    """
    z, xyt, X = synthetic_problem(n, p, seed)
    theta = BENCH_THETA
    plan = build_ordering_plan(xyt, theta, m)
    lay = plan.layout()
    sym = _Symbolic(lay)
    xs = np.ascontiguousarray(scaled_coords(lay.coords, theta))
    isz = lay.var_is_z.view(np.uint8)
    rows = []
    # CD inputs in Gram form
    Xs, _, _ = standardize(X)
    D = np.column_stack([np.ones(n), Xs])
    G = np.ascontiguousarray(D.T @ D / n)
    c = np.ascontiguousarray(D.T @ z / n)
    pen = np.r_[False, np.ones(p, bool)].view(np.uint8)
    lams = lambda_grid(D, z, pen.view(bool), 100, 1e-3)
    for name, K in available_backends().items():
        t, res = _ms(lambda: K.vecchia_columns(xs, lay.var_coord, isz, lay.g_ptr, lay.g_idx,
                                               theta.sigma2, theta.tau2), repeats)
        rows.append((n, "vecchia_columns", name, t))
        Ux = np.asarray(res[0])
        Upat = sp.csc_matrix((np.ones(sym.Ui.size), sym.Ui, sym.Up),
                             shape=(sym.nv, sym.nv)).tocsr()[sym.y_rows]
        nW, Mp, Mi, _ = _lower_pattern_from_sym((Upat @ Upat.T).tocoo())
        t, (Lp, Li, _) = _ms(lambda: K.symbolic_cholesky(nW, Mp, Mi), repeats)
        rows.append((n, "symbolic_cholesky", name, t))
        Lp, Li = np.asarray(Lp), np.asarray(Li)
        asm = K.WAssembler(sym.Up, sym.Ui, sym.yrank, sym.ny, Lp, Li)
        asm.assemble(Ux)        # builds the slot map once, as in a fit
        t, Mx = _ms(lambda: np.asarray(asm.assemble(Ux)), repeats)
        rows.append((n, "assemble_W", name, t))
        pat = K.CholeskyPattern(Lp, Li)
        t, (Lx, st, _) = _ms(lambda: pat.factor(Mx), repeats)
        rows.append((n, "cholesky", name, t))
        Lx = np.asarray(Lx)
        t, _ = _ms(lambda: pat.selected_inverse(Lx), repeats)
        rows.append((n, "selected_inverse", name, t))
        B = np.ones((sym.ny, p + 1))

        def solves():
            b = B.copy()
            K.lower_solve(Lp, Li, Lx, b)
            K.lower_t_solve(Lp, Li, Lx, b)
            return b

        t, _ = _ms(solves, repeats)
        rows.append((n, "triangular_solves", name, t))
        t, _ = _ms(lambda: K.scad_cd_path(G, c, lams, 3.7, pen, np.zeros(p + 1), 1e-7, 1000,
                                          False), repeats)
        rows.append((n, "scad_cd_path", name, t))
    return rows
