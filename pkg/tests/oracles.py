"""Brute-force reference implementations used by the test suite.

Everything here is dense, slow and written for clarity; none of it reuses
the package's numerical code beyond the covariance definition itself.
"""
import itertools
import math

import numpy as np
from scipy import integrate, stats


def exp_cov(xyt_a, xyt_b, sigma, gamma_s, gamma_t):
    a = np.asarray(xyt_a, float)
    b = np.asarray(xyt_b, float)
    ds = (a[:, None, :2] - b[None, :, :2]) / gamma_s
    dt = (a[:, None, 2] - b[None, :, 2]) / gamma_t
    d = np.sqrt((ds ** 2).sum(-1) + dt ** 2)
    return sigma ** 2 * np.exp(-d)


def dense_neg2loglik(resid, xyt, theta):
    """``e' S^-1 e + log|S|`` with ``S = C + tau^2 I``, no ``n log 2pi``."""
    s, gs, gt, tau = theta
    S = exp_cov(xyt, xyt, s, gs, gt) + tau ** 2 * np.eye(len(resid))
    sign, logdet = np.linalg.slogdet(S)
    assert sign > 0
    return float(resid @ np.linalg.solve(S, resid) + logdet)


def interleaved_cov(xyt, theta):
    """Joint covariance of ``(y_0, z_0, y_1, z_1, ...)``."""
    s, gs, gt, tau = theta
    n = len(xyt)
    C = exp_cov(xyt, xyt, s, gs, gt)
    K = np.kron(C, np.ones((2, 2)))
    K[1::2, 1::2] += tau ** 2 * np.eye(n)
    return K


def dense_kriging(eps, obs, pred, theta):
    """Simple-kriging offsets and latent variances of zero-mean residuals."""
    s, gs, gt, tau = theta
    S = exp_cov(obs, obs, s, gs, gt) + tau ** 2 * np.eye(len(obs))
    Cpo = exp_cov(pred, obs, s, gs, gt)
    mu = Cpo @ np.linalg.solve(S, eps)
    Cpp = exp_cov(pred, pred, s, gs, gt)
    cov = Cpp - Cpo @ np.linalg.solve(S, Cpo.T)
    return mu, cov


def dense_gls(z, X, xyt, theta):
    s, gs, gt, tau = theta
    S = exp_cov(xyt, xyt, s, gs, gt) + tau ** 2 * np.eye(len(z))
    Si = np.linalg.inv(S)
    return np.linalg.solve(X.T @ Si @ X, X.T @ Si @ z)


def scaled(xyt, gamma_s, gamma_t):
    return np.asarray(xyt, float) / np.array([gamma_s, gamma_s, gamma_t])


def brute_maxmin(X):
    """Greedy maxmin with an explicit start rule (nearest the centroid)."""
    X = np.asarray(X, float)
    n = len(X)
    c = X.mean(0)
    first = int(np.argmin(((X - c) ** 2).sum(1)))
    order = [first]
    left = set(range(n)) - {first}
    while left:
        best, bd = None, -1.0
        for j in sorted(left):
            d = min(np.linalg.norm(X[j] - X[i]) for i in order)
            if d > bd:
                best, bd = j, d
        order.append(best)
        left.remove(best)
    return np.array(order)


def brute_nn(Xo, m):
    """``q(i)``: the ``min(m, i)`` nearest predecessors, as sets."""
    out = []
    for i in range(len(Xo)):
        d = [(np.linalg.norm(Xo[i] - Xo[j]), j) for j in range(i)]
        d.sort()
        out.append({j for _, j in d[:m]})
    return out


def scad_grid_argmin(z, lam, a, lo=-5.0, hi=5.0, step=1e-4):
    b = np.arange(lo, hi + step / 2, step)
    ab = np.abs(b)
    pen = np.where(ab <= lam, lam * ab,
                   np.where(ab <= a * lam, (2 * a * lam * ab - ab ** 2 - lam ** 2) / (2 * (a - 1)),
                            lam ** 2 * (a + 1) / 2))
    return float(b[np.argmin(0.5 * (z - b) ** 2 + pen)])


def crps_quadrature(mu, sd, y):
    """``int (F(x) - 1{x >= y})^2 dx`` split at ``y``."""
    F = stats.norm(mu, sd).cdf
    lo = min(mu - 12 * sd, y) - 1.0
    hi = max(mu + 12 * sd, y) + 1.0
    left = integrate.quad(lambda x: F(x) ** 2, lo, y, epsabs=1e-11, limit=200)[0]
    right = integrate.quad(lambda x: (1 - F(x)) ** 2, y, hi, epsabs=1e-11, limit=200)[0]
    return left + right


def kappa_oracle(est, truth):
    est = np.asarray(est, bool)
    truth = np.asarray(truth, bool)
    po = np.mean(est == truth)
    pe = np.mean(est) * np.mean(truth) + np.mean(~est) * np.mean(~truth)
    if math.isclose(pe, 1.0):
        return 1.0 if po == 1 else 0.0
    return (po - pe) / (1 - pe)


def all_orderings_first_fixed(X, first):
    """Every ordering starting at ``first`` that obeys the maxmin greedy rule."""
    n = len(X)
    ok = []
    for perm in itertools.permutations([i for i in range(n) if i != first]):
        order = (first,) + perm
        good = True
        for k in range(1, n):
            placed = order[:k]
            mind = [min(np.linalg.norm(X[j] - X[i]) for i in placed) for j in order[k:]]
            if mind[0] < max(mind) - 1e-12:
                good = False
                break
        if good:
            ok.append(order)
    return ok
