import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lurk_vecchia.geometry import (Coord, CoordSet, CovParams, cov_latent, cov_observed,
                                   kernel_entry, latent_cov_matrix, lonlat_to_km,
                                   observed_cov_matrix, scaled_distance)
from oracles import exp_cov

finite = st.floats(-1e4, 1e4, allow_nan=False)
point = st.tuples(finite, finite, finite)


def C(x, y, t):
    return Coord((x, y), t)


def test_distance_examples():
    p = CovParams(1, 1, 1, 0)
    a = C(1.0, 2.0, 3.0)
    assert scaled_distance(a, a, p) == 0.0
    assert scaled_distance(C(3, 4, 0), C(0, 0, 0), p) == pytest.approx(5.0)
    q = CovParams(1, 1000, 30, 0)
    assert scaled_distance(C(0, 0, 0), C(0, 0, 30), q) == pytest.approx(1.0)


def test_cov_examples():
    a = C(0, 0, 0)
    assert cov_latent(a, a, CovParams(2, 1, 1, 0)) == pytest.approx(4.0)
    assert cov_latent(C(0, 0, 0), C(1, 0, 0), CovParams(1, 1, 1, 0)) == pytest.approx(math.exp(-1))
    coords = np.array([[0, 0, 0], [0, 0, 0], [5, 1, 2.0]])
    p = CovParams(1, 10, 10, 0.5)
    assert cov_observed(0, 0, coords, p) == pytest.approx(1.25)
    # same location, distinct observations: no nugget
    assert cov_observed(0, 1, coords, p) == pytest.approx(1.0)
    assert cov_observed(0, 2, coords, p) == pytest.approx(
        cov_latent(CoordSet(coords)[0], CoordSet(coords)[2], p))


def test_kernel_entry_kinds():
    coords = np.array([[0, 0, 0], [3, 4, 0.0]])
    p = CovParams(1.5, 5, 1, 0.7)
    assert kernel_entry(0, 0, "y", "z", coords, p) == pytest.approx(2.25)
    assert kernel_entry(1, 1, "z", "z", coords, p) == pytest.approx(2.25 + 0.49)
    with pytest.raises(ValueError):
        kernel_entry(0, 0, "y", "w", coords, p)
    with pytest.raises(IndexError):
        kernel_entry(0, 5, "y", "y", coords, p)


def test_dense_matrices(rng):
    xyt = rng.uniform(0, 50, (10, 3))
    p = CovParams(1.3, 20, 7, 0.4)
    Cm = latent_cov_matrix(xyt, p)
    np.testing.assert_allclose(Cm, exp_cov(xyt, xyt, 1.3, 20, 7), rtol=1e-14)
    np.testing.assert_allclose(Cm, Cm.T)
    assert np.linalg.eigvalsh(Cm).min() > 0
    S = observed_cov_matrix(xyt[:5], p)
    np.testing.assert_allclose(S, latent_cov_matrix(xyt[:5], p) + 0.16 * np.eye(5))


def test_param_validation():
    with pytest.raises(ValueError):
        CovParams(0, 1, 1, 0)
    with pytest.raises(ValueError):
        CovParams(1, 1, 1, -0.1)
    with pytest.raises(ValueError):
        CovParams(1, float("nan"), 1, 0)
    p = CovParams(2, 3, 4, 5)
    assert CovParams.from_log(p.to_log()).as_tuple() == pytest.approx(p.as_tuple())


def test_coordset_validation():
    with pytest.raises(ValueError):
        CoordSet(np.array([[0, 0, np.nan]]))
    with pytest.raises(ValueError):
        CoordSet(np.zeros((3, 2)))
    with pytest.raises(ValueError):
        Coord((0, 0, 0), 1)
    cs = CoordSet.from_coords([C(1, 2, 3), C(4, 5, 6)], ids=["a", "b"])
    assert len(cs) == 2 and cs.subset([1]).ids == ["b"]


@settings(max_examples=200, deadline=None)
@given(point, point, point, st.floats(0.1, 1e3), st.floats(0.1, 1e3))
def test_metric_axioms(a, b, c, gs, gt):
    p = CovParams(1, gs, gt, 0)
    A, B, Cc = C(*a), C(*b), C(*c)
    dab = scaled_distance(A, B, p)
    assert dab >= 0
    assert dab == pytest.approx(scaled_distance(B, A, p))
    assert dab <= scaled_distance(A, Cc, p) + scaled_distance(Cc, B, p) + 1e-9 * (1 + dab)


@settings(max_examples=100, deadline=None)
@given(point, point, st.floats(0.1, 10))
def test_cov_bounded_by_variance(a, b, s):
    p = CovParams(s, 50, 20, 0)
    A, B = C(*a), C(*b)
    cab = cov_latent(A, B, p)
    assert cab <= cov_latent(A, A, p)
    if scaled_distance(A, B, p) > 1e-8:
        assert cab < cov_latent(A, A, p)


@settings(max_examples=100, deadline=None)
@given(point, point, st.sampled_from([0.5, 2.0, 4.0, 8.0]))
def test_rescaling_invariance(a, b, c):
    p = CovParams(1, 37, 11, 0)
    pc = CovParams(1, 37 * c, 11 * c, 0)
    d1 = scaled_distance(C(*a), C(*b), p)
    d2 = scaled_distance(C(*(c * np.array(a))), C(*(c * np.array(b))), pc)
    # powers of two rescale exactly
    assert d1 == pytest.approx(d2, rel=1e-15, abs=0)


def test_lonlat_projection():
    x, y = lonlat_to_km(np.array([0.0, 1.0]), np.array([0.0, 0.0]))
    assert x[1] - x[0] == pytest.approx(111.195, rel=1e-4)
    assert np.allclose(y, 0)
