import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lurk_vecchia.objective import PseudoData
from lurk_vecchia.penalty import (ScadParams, coordinate_descent, fit_path, fold_ids,
                                  lambda_grid, scad_threshold, scad_value, select_lambda_cv)
from oracles import scad_grid_argmin


def test_scad_value_examples():
    assert scad_value(0.0, 1.0) == 0.0
    assert scad_value(1.0, 1.0) == pytest.approx(1.0)
    assert scad_value(5.0, 1.0, 3.7) == pytest.approx(2.35)
    assert scad_value(-5.0, ScadParams(1.0, 3.7)) == pytest.approx(2.35)
    b = np.array([-2.0, 0.3, 7.0])
    np.testing.assert_allclose(scad_value(b, 0.8), [scad_value(x, 0.8) for x in b])


def test_scad_params_validation():
    with pytest.raises(ValueError):
        ScadParams(1.0, 2.0)
    with pytest.raises(ValueError):
        ScadParams(-1.0)


def test_threshold_examples():
    assert scad_threshold(0.0, 1.0) == 0.0
    assert scad_threshold(4.5, 1.0, 3.7) == 4.5
    assert scad_threshold(1.5, 1.0, 3.7) == pytest.approx(scad_grid_argmin(1.5, 1.0, 3.7), abs=2e-4)


@settings(max_examples=200, deadline=None)
@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(0.01, 3), st.floats(2.05, 8))
def test_threshold_odd_and_monotone(z1, z2, lam, a):
    assert scad_threshold(-z1, lam, a) == -scad_threshold(z1, lam, a)
    lo, hi = sorted((z1, z2))
    assert scad_threshold(lo, lam, a) <= scad_threshold(hi, lam, a) + 1e-12


@settings(max_examples=100, deadline=None)
@given(st.floats(-4, 4), st.floats(0.05, 1.5), st.floats(2.1, 6))
def test_threshold_vs_grid(z, lam, a):
    assert abs(scad_threshold(z, lam, a) - scad_grid_argmin(z, lam, a)) <= 1e-3


def regression(seed, n=200, p=6, noise=1.0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    beta = np.zeros(p)
    beta[:2] = (2.0, -1.5)
    return X, X @ beta + noise * rng.standard_normal(n), beta


def cd_objective(X, z, beta, lam, a):
    s = np.sqrt(np.mean(X * X, 0))
    r = z - X @ beta
    return 0.5 * np.mean(r * r) + np.sum(scad_value(s * beta, lam, a))


def test_cd_full_shrinkage():
    X, z, _ = regression(0)
    lmax = lambda_grid(X, z)[0]
    res = coordinate_descent(X, ScadParams(1.01 * lmax), z=z)
    assert np.all(res.beta == 0)


def test_cd_least_squares_at_zero_lambda():
    X, z, _ = regression(1)
    res = coordinate_descent(X, ScadParams(0.0), z=z, tol=1e-12)
    np.testing.assert_allclose(res.beta, np.linalg.lstsq(X, z, rcond=None)[0], atol=1e-6)
    ps = PseudoData(z, X)
    np.testing.assert_allclose(coordinate_descent(ps, ScadParams(0.0), tol=1e-12).beta,
                               res.beta, atol=1e-10)


def test_cd_two_dimensional_grid():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((80, 2))
    X[:, 1] += 0.6 * X[:, 0]
    z = X @ np.array([1.0, -0.4]) + 0.5 * rng.standard_normal(80)
    lam, a = 0.3, 3.7
    b = coordinate_descent(X, ScadParams(lam, a), z=z, tol=1e-12).beta
    f_hat = cd_objective(X, z, b, lam, a)
    g = np.linspace(-3, 3, 200)
    grid = min(cd_objective(X, z, np.array([u, v]), lam, a) for u in g for v in g)
    assert f_hat <= grid + 1e-12


def test_cd_monotone_trace():
    X, z, _ = regression(3, p=10)
    res = coordinate_descent(X, ScadParams(0.2), z=z, record=True)
    assert res.converged
    assert np.all(np.diff(res.trace) <= 1e-12)


def test_cd_max_iter_warns():
    X, z, _ = regression(4)
    with pytest.warns(RuntimeWarning):
        res = coordinate_descent(X, ScadParams(0.01), z=z, max_iter=1, tol=1e-16)
    assert not res.converged


def test_unpenalized_columns_survive():
    X, z, _ = regression(5)
    X[:, 0] = 1.0
    pen = np.r_[False, np.ones(5, bool)]
    lmax = lambda_grid(X, z, pen)[0]
    b = coordinate_descent(X, ScadParams(2 * lmax), z=z, penalized=pen).beta
    assert b[0] == pytest.approx(z.mean(), rel=1e-8)
    assert np.all(b[1:] == 0)


def test_path_empty_at_lambda_max():
    X, z, _ = regression(6)
    lams = lambda_grid(X, z, n_lambda=30)
    assert np.all(np.diff(lams) < 0)
    betas, _, conv, _ = fit_path(X, z, lams)
    nnz = np.count_nonzero(betas, axis=1)
    assert nnz[0] == 0 and nnz[-1] > 0 and conv.all()


def test_fold_ids():
    f = fold_ids(23, 5, 7)
    np.testing.assert_array_equal(f, fold_ids(23, 5, 7))
    assert np.bincount(f).tolist() in ([5, 5, 5, 4, 4],)
    with pytest.raises(ValueError):
        fold_ids(3, 5, 0)
    with pytest.raises(ValueError):
        fold_ids(10, 1, 0)


def test_cv_pure_noise_selects_nothing():
    empty = 0
    for rep in range(50):
        rng = np.random.default_rng(1000 + rep)
        X = rng.standard_normal((200, 8))
        z = rng.standard_normal(200)
        path = select_lambda_cv(X, z=z, seed=rep, n_lambda=50)
        assert np.all(np.isfinite(path.cv_mse))
        empty += int(np.count_nonzero(path.beta) == 0)
    assert empty >= 40


def test_cv_noiseless_recovery():
    X, z, beta = regression(7, noise=0.0)
    path = select_lambda_cv(X, z=z, n_lambda=60)
    np.testing.assert_array_equal(np.sign(path.beta), np.sign(beta))


def test_cv_groups_keep_rows_together():
    X, z, beta = regression(8, n=100)
    groups = np.arange(100) // 2
    a = select_lambda_cv(PseudoData(z, X, groups), k_folds=5, seed=3)
    b = select_lambda_cv(X, z=z, groups=groups, k_folds=5, seed=3)
    np.testing.assert_array_equal(a.cv_mse, b.cv_mse)
    c = select_lambda_cv(X, z=z, k_folds=5, seed=3)
    assert not np.array_equal(a.cv_mse, c.cv_mse)
    assert a.nnz[0] == 0
