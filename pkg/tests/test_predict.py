import numpy as np
import pytest

from lurk_vecchia.estimate import EstimationConfig, FitResult, fit, standardize
from lurk_vecchia.geometry import CovParams
from lurk_vecchia.predict import joint_posterior_summaries, predict, predict_from_theta
from lurk_vecchia.simulate import sample_gp_error
from lurk_vecchia.sparse_core import NotSelectedInvertibleError
from oracles import dense_kriging
from conftest import random_coords

THETA = CovParams(1.3, 30, 15, 0.4)


def make_fit(theta, X, coef, m):
    _, mu, sd = standardize(X)
    return FitResult(coef=np.asarray(coef, float), theta_hat=theta, lambda_hat=0.0, trace=[],
                     converged=True, n_outer=0, nm_evals=0, cd_iters=0, wall_time=0.0,
                     x_mean=mu, x_sd=sd, m=m, objective=0.0)


def data(seed, n, npred, p=2, theta=THETA):
    rng = np.random.default_rng(seed)
    obs = random_coords(rng, n)
    pred = random_coords(rng, npred)
    X = rng.standard_normal((n, p))
    XP = rng.standard_normal((npred, p))
    coef = rng.standard_normal(p + 1)
    f = make_fit(theta, X, coef, 5)
    z = f.mean(X) + sample_gp_error(obs, theta, rng)
    return f, z, obs, X, pred, XP


@pytest.mark.parametrize("shortcut", [False, True])
def test_full_conditioning_matches_dense(shortcut, backend):
    f, z, obs, X, pred, XP = data(0, 120, 30)
    res = predict(f, (z, obs, X), (pred, XP), m=149, exact_shortcut=shortcut)
    off, cov = dense_kriging(z - f.mean(X), obs, pred, THETA.as_tuple())
    np.testing.assert_allclose(res.mu, f.mean(XP) + off, rtol=1e-8, atol=1e-8)
    np.testing.assert_allclose(res.var, np.diag(cov), rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(res.var_noisy, res.var + THETA.tau2)


def test_interpolation_limit():
    theta = CovParams(1.0, 30, 15, 1e-6)
    rng = np.random.default_rng(1)
    obs = random_coords(rng, 40)
    eps = sample_gp_error(obs, theta, rng)
    for shortcut in (False, True):
        res = predict_from_theta(theta, eps, obs, obs[[3, 17]], 45, exact_shortcut=shortcut)
        np.testing.assert_allclose(res.mu, eps[[3, 17]], atol=1e-3)
        assert np.all(res.var < 1e-3)


def test_prior_reversion_far_away():
    f, z, obs, X, pred, XP = data(2, 60, 3)
    far = pred + np.array([1e6, 0, 0])
    res = predict(f, (z, obs, X), (far, XP), m=10)
    np.testing.assert_allclose(res.mu, f.mean(XP), atol=1e-4)
    np.testing.assert_allclose(res.var, THETA.sigma2, atol=1e-4)


def test_variance_bounded_by_prior():
    f, z, obs, X, pred, XP = data(3, 100, 40)
    res = predict(f, (z, obs, X), (pred, XP), m=8)
    assert np.all(res.var > 0) and np.all(res.var <= THETA.sigma2 + 1e-10)


def test_empty_prediction_set():
    f, z, obs, X, _, _ = data(4, 30, 1)
    res = predict(f, (z, obs, X), (np.zeros((0, 3)), np.zeros((0, 2))))
    assert len(res) == 0


def test_covariate_mismatch():
    f, z, obs, X, pred, XP = data(5, 30, 4)
    with pytest.raises(ValueError):
        predict(f, (z, obs, X), (pred, XP[:, :1]))


def test_joint_posterior(backend):
    f, z, obs, X, pred, XP = data(6, 80, 20)
    m = 99
    res = predict(f, (z, obs, X), (pred, XP), m=m, exact_shortcut=False)
    diag = joint_posterior_summaries(f, (z, obs, X), (pred, XP), m=m,
                                     pairs=[(i, i) for i in range(20)])
    np.testing.assert_allclose(diag, res.var, rtol=1e-12)
    _, cov = dense_kriging(z - f.mean(X), obs, pred, THETA.as_tuple())
    pairs = [(i, j) for i in range(20) for j in range(20)]
    got = joint_posterior_summaries(f, (z, obs, X), (pred, XP), m=m, pairs=pairs)
    np.testing.assert_allclose(got, cov.reshape(-1), rtol=1e-8, atol=1e-10)
    assert joint_posterior_summaries(f, (z, obs, X), (pred, XP), pairs=[]).size == 0


def test_joint_posterior_off_pattern():
    f, z, obs, X, pred, XP = data(7, 80, 60)
    pairs = [(i, j) for i in range(60) for j in range(i + 1, 60)]
    with pytest.raises(NotSelectedInvertibleError):
        joint_posterior_summaries(f, (z, obs, X), (pred, XP), m=2, pairs=pairs)
    with pytest.raises(IndexError):
        joint_posterior_summaries(f, (z, obs, X), (pred, XP), m=2, pairs=[(0, 60)])


def kl_gauss(mu1, v1, mu0, v0):
    return float(np.mean(0.5 * (np.log(v0 / v1) + (v1 + (mu1 - mu0) ** 2) / v0 - 1)))


def test_more_neighbours_closer_to_dense():
    kl = {5: [], 25: [], "full": []}
    for seed in range(10):
        rng = np.random.default_rng(50 + seed)
        obs = random_coords(rng, 120)
        pred = random_coords(rng, 30)
        eps = sample_gp_error(obs, THETA, rng)
        off, cov = dense_kriging(eps, obs, pred, THETA.as_tuple())
        for m in kl:
            mm = 149 if m == "full" else m
            r = predict_from_theta(THETA, eps, obs, pred, mm, exact_shortcut=False)
            kl[m].append(kl_gauss(r.mu, r.var, off, np.diag(cov)))
    med = [np.median(kl[m]) for m in (5, 25, "full")]
    assert med[0] >= med[1] >= med[2]
    assert med[2] < 1e-10


@pytest.fixture(scope="module")
def in_sample():
    rng = np.random.default_rng(8)
    theta = CovParams(1.0, 40, 20, 0.5)
    obs = random_coords(rng, 300, span_s=200, span_t=100)
    X = rng.standard_normal((300, 3))
    z = X @ np.array([1.0, 0.0, -1.0]) + sample_gp_error(obs, theta, rng)
    res = fit(z, obs, X, EstimationConfig(m=10, max_nm_evals=150))
    return z, res, predict(res, (z, obs, X), (obs, X))


def test_calibration_smoke(in_sample):
    z, res, p = in_sample
    stat = np.mean((z - p.mu) ** 2 / (p.var + res.theta_hat.tau2))
    assert 0.5 <= stat <= 2.0


def test_training_sd_envelope(in_sample):
    z, res, p = in_sample
    assert np.all(np.isfinite(p.sd))
    assert np.all(p.sd <= res.theta_hat.sigma + res.theta_hat.tau)


def test_held_out_calibration():
    rng = np.random.default_rng(9)
    theta = CovParams(1.0, 40, 20, 0.5)
    xyt = random_coords(rng, 400, span_s=200, span_t=100)
    X = rng.standard_normal((400, 3))
    z = X @ np.array([1.0, 0.0, -1.0]) + sample_gp_error(xyt, theta, rng)
    tr, te = slice(0, 300), slice(300, 400)
    res = fit(z[tr], xyt[tr], X[tr], EstimationConfig(m=10, max_nm_evals=150))
    p = predict(res, (z[tr], xyt[tr], X[tr]), (xyt[te], X[te]))
    stat = np.mean((z[te] - p.mu) ** 2 / p.var_noisy)
    assert 0.5 <= stat <= 2.0
