import numpy as np
import pytest

from lurk_vecchia.geometry import CovParams, scaled_coords
from lurk_vecchia.ordering import (build_ordering_plan, build_prediction_plan, maxmin_order,
                                   nn_condition, sgv_split)
from oracles import all_orderings_first_fixed, brute_maxmin, brute_nn
from conftest import random_coords

UNIT = CovParams(1, 1, 1, 0)


def rows(ptr, idx):
    return [set(idx[ptr[i]:ptr[i + 1]].tolist()) for i in range(len(ptr) - 1)]


def test_single_point():
    assert maxmin_order(np.zeros((1, 3)), UNIT).tolist() == [0]


def test_collinear_three_points():
    xyt = np.array([[0, 0, 0], [1, 0, 0], [10, 0, 0.0]])
    order = maxmin_order(xyt, UNIT)
    X = scaled_coords(xyt, UNIT)
    valid = all_orderings_first_fixed(X, int(order[0]))
    assert tuple(order.tolist()) in valid


@pytest.mark.parametrize("seed", range(5))
def test_maxmin_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    xyt = random_coords(rng, 40)
    p = CovParams(1, 30, 10, 0)
    order = maxmin_order(xyt, p)
    np.testing.assert_array_equal(order, brute_maxmin(scaled_coords(xyt, p)))


def test_maxmin_min_distance_nonincreasing(rng):
    xyt = random_coords(rng, 50)
    p = CovParams(1, 25, 8, 0)
    X = scaled_coords(xyt, p)[maxmin_order(xyt, p)]
    dmin = [np.min(np.linalg.norm(X[:k] - X[k], axis=1)) for k in range(1, 50)]
    assert np.all(np.diff(dmin) <= 1e-12)


@pytest.mark.parametrize("m", [0, 1, 3, 7])
def test_nn_condition_matches_brute_force(m, rng):
    xyt = random_coords(rng, 45)
    p = CovParams(1, 30, 10, 0)
    order = maxmin_order(xyt, p)
    q = rows(*nn_condition(order, xyt, p, m))
    Xo = scaled_coords(xyt, p)[order]
    assert q == brute_nn(Xo, m)
    assert q[0] == set()


def test_nn_condition_full(rng):
    xyt = random_coords(rng, 12)
    order = maxmin_order(xyt, UNIT)
    q = rows(*nn_condition(order, xyt, UNIT, 11))
    assert q == [set(range(i)) for i in range(12)]
    with pytest.raises(ValueError):
        nn_condition(order, xyt, UNIT, -1)


def check_closure(plan):
    for i in range(plan.n):
        qy = set(plan.q_y(i).tolist())
        qz = set(plan.q_z(i).tolist())
        qi = set(plan.q(i).tolist())
        assert qy.isdisjoint(qz) and qy | qz == qi
        assert all(j < i for j in qi)
        for j in qy:
            for k in qy:
                if j < k:
                    assert j in set(plan.q_y(k).tolist())


@pytest.mark.parametrize("seed", range(8))
def test_sgv_closure_random(seed):
    rng = np.random.default_rng(100 + seed)
    n = int(rng.integers(5, 51))
    m = int(rng.integers(1, 8))
    plan = build_ordering_plan(random_coords(rng, n), CovParams(1, 40, 15, 0.3), m)
    check_closure(plan)


def test_sgv_trivial_rows():
    ptr = np.array([0, 0, 1])
    idx = np.array([0])
    qy_ptr, qy_idx, qz_ptr, qz_idx = sgv_split((ptr, idx), np.array([[0, 0, 0], [1, 0, 0.0]]),
                                               UNIT)
    assert rows(qy_ptr, qy_idx) == [set(), {0}]
    assert rows(qz_ptr, qz_idx) == [set(), set()]


def test_sgv_spatial_only_closure(rng):
    plan = build_ordering_plan(random_coords(rng, 40), CovParams(1, 40, 15, 0.3), 5,
                               spatial_only_split=True)
    check_closure(plan)


def test_full_plan(rng):
    plan = build_ordering_plan(random_coords(rng, 10), UNIT, 9)
    assert plan.is_full
    for i in range(10):
        assert plan.q_y(i).tolist() == list(range(i))
        assert plan.q_z(i).size == 0


def test_plan_deterministic(rng):
    xyt = random_coords(rng, 60)
    p = CovParams(1, 30, 10, 0.3)
    a = build_ordering_plan(xyt, p, 6)
    b = build_ordering_plan(xyt.copy(), p, 6)
    for f in ("order", "q_idx", "qy_idx", "qz_idx"):
        np.testing.assert_array_equal(getattr(a, f), getattr(b, f))


def test_layout_structure(rng):
    plan = build_ordering_plan(random_coords(rng, 20), CovParams(1, 30, 10, 0.3), 4)
    lay = plan.layout()
    assert lay.n_vars == 40
    for v in range(40):
        g = lay.g_idx[lay.g_ptr[v]:lay.g_ptr[v + 1]]
        assert np.all(g < v) and np.all(np.diff(g) > 0)
        if lay.var_is_z[v]:
            # a response conditions on its own latent only
            assert g.tolist() == [v - 1]


def test_prediction_plan_no_pred(rng):
    xyt = random_coords(rng, 8)
    plan = build_prediction_plan(xyt, np.zeros((0, 3)), UNIT, 8)
    assert plan.n_pred == 0 and plan.is_full
    for i in range(8):
        # own response plus every earlier latent
        assert plan.q_y(i).tolist() == list(range(i))
        assert i in plan.q_z(i).tolist()


def test_prediction_plan_two_points():
    obs = np.array([[0, 0, 0.0]])
    pred = np.array([[1, 0, 0.0]])
    plan = build_prediction_plan(obs, pred, UNIT, 1)
    assert plan.q(0).tolist() == [0]
    assert plan.q_z(0).tolist() == [0]
    # the observation precedes y_P, so y_P conditions on the latent y_0
    assert plan.q(1).tolist() == [0]
    assert plan.q_y(1).tolist() == [0] and plan.q_z(1).size == 0
    lay = plan.layout()
    assert lay.g_ptr[1] - lay.g_ptr[0] == 0


def test_prediction_plan_invariants(rng):
    obs = random_coords(rng, 30)
    pred = random_coords(rng, 12)
    plan = build_prediction_plan(obs, pred, CovParams(1, 30, 10, 0.3), 5)
    n = plan.n
    lay = plan.layout()
    for v in range(n):
        assert lay.g_ptr[v + 1] == lay.g_ptr[v]
    for i in range(plan.n_all):
        qi = plan.q(i).tolist()
        assert len(qi) <= 5
        if i < n:
            assert i in qi
        else:
            assert i not in qi and all(j < i for j in qi)
