"""Exact transport solvers: greedy matching, LP/assignment, 1d fast paths."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otcpcc import (
    WeightedPointSet,
    cost_matrix,
    emd_1d,
    emd_1d_general,
    emd_exact,
    gaussian_w2_oracle,
    greedy_flow_matching,
    l2_centroid_distance,
    transport_cost,
    uniform_weights,
    validate_plan,
)
from oracles import (
    emd_1d_quantile_oracle,
    emd_expansion_oracle,
    emd_lp_oracle,
    integer_expansion_weights,
    nw_corner_prefix_oracle,
)


def _random_simplex(rng, n):
    w = rng.random(n) + 1e-3
    return w / w.sum()


def _random_instance(rng, m, n, d):
    a = WeightedPointSet(rng.normal(size=(m, d)), _random_simplex(rng, m))
    b = WeightedPointSet(rng.normal(size=(n, d)), _random_simplex(rng, n))
    return a, b


# ---------------------------------------------------------------------------
# centroid distance
# ---------------------------------------------------------------------------


def test_l2_centroid_distance_small_case():
    a = WeightedPointSet.from_points(np.array([[0.0, 0.0], [2.0, 0.0]]))
    b = WeightedPointSet.from_points(np.array([[1.0, 3.0]]))
    assert l2_centroid_distance(a, b) == pytest.approx(3.0)


def test_l2_centroid_distance_uses_weights():
    a = WeightedPointSet(np.array([[0.0], [4.0]]), np.array([0.75, 0.25]))
    b = WeightedPointSet.from_points(np.array([[0.0]]))
    assert l2_centroid_distance(a, b) == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# greedy front-to-front matching
# ---------------------------------------------------------------------------


def test_greedy_small_case_matches_hand_computation():
    plan = greedy_flow_matching(
        np.array([0.5, 0.5]), np.array([1, 1, 1]) / 3.0
    )
    expected = {
        (0, 0): 1 / 3,
        (0, 1): 1 / 6,
        (1, 1): 1 / 6,
        (1, 2): 1 / 3,
    }
    got = {(i, j): m for i, j, m in plan.triplets()}
    assert set(got) == set(expected)
    for key, mass in expected.items():
        assert got[key] == pytest.approx(mass, abs=1e-15)


@given(
    m=st.integers(1, 12),
    n=st.integers(1, 12),
    seed=st.integers(0, 5000),
)
def test_greedy_matches_prefix_sum_oracle(m, n, seed):
    rng = np.random.default_rng(seed)
    wa, wb = _random_simplex(rng, m), _random_simplex(rng, n)
    plan = greedy_flow_matching(wa, wb)
    got = {(i, j): mass for i, j, mass in plan.triplets() if mass > 1e-12}
    want = nw_corner_prefix_oracle(wa, wb)
    assert set(got) == set(want)
    for key in want:
        assert got[key] == pytest.approx(want[key], abs=1e-12)


@given(
    m=st.integers(1, 20),
    n=st.integers(1, 20),
    seed=st.integers(0, 5000),
)
def test_greedy_is_feasible_sparse_staircase(m, n, seed):
    rng = np.random.default_rng(seed)
    wa, wb = _random_simplex(rng, m), _random_simplex(rng, n)
    plan = greedy_flow_matching(wa, wb)
    assert validate_plan(plan, wa, wb)
    assert plan.nnz <= m + n - 1
    trips = plan.triplets()
    rows = [t[0] for t in trips]
    cols = [t[1] for t in trips]
    assert rows == sorted(rows)
    assert cols == sorted(cols)


def test_greedy_uniform_equal_sizes_gives_identity():
    plan = greedy_flow_matching(uniform_weights(5), uniform_weights(5))
    assert {(i, j) for i, j, _ in plan.triplets()} == {(k, k) for k in range(5)}


# ---------------------------------------------------------------------------
# exact solver
# ---------------------------------------------------------------------------


def test_emd_unit_translation_in_2d():
    a = WeightedPointSet.from_points(
        np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    )
    b = WeightedPointSet.from_points(a.points + np.array([1.0, 0.0]))
    value, plan = emd_exact(a, b)
    assert value == pytest.approx(1.0, abs=1e-12)
    assert validate_plan(plan, a.weights, b.weights)


def test_emd_two_points_each_1d():
    a = WeightedPointSet.from_points(np.array([[0.0], [1.0]]))
    b = WeightedPointSet.from_points(np.array([[2.0], [3.0]]))
    value, _ = emd_exact(a, b)
    assert value == pytest.approx(2.0, abs=1e-12)


def test_emd_identity_of_indiscernibles():
    rng = np.random.default_rng(21)
    a = WeightedPointSet(rng.normal(size=(8, 3)), _random_simplex(rng, 8))
    value, _ = emd_exact(a, a)
    assert value <= 1e-12


@given(
    m=st.integers(1, 10),
    n=st.integers(1, 10),
    d=st.integers(1, 4),
    seed=st.integers(0, 5000),
)
def test_emd_symmetry(m, n, d, seed):
    rng = np.random.default_rng(seed)
    a, b = _random_instance(rng, m, n, d)
    assert emd_exact(a, b)[0] == pytest.approx(emd_exact(b, a)[0], abs=1e-9)


@given(seed=st.integers(0, 5000))
@settings(max_examples=20)
def test_emd_triangle_inequality(seed):
    rng = np.random.default_rng(seed)
    a, b = _random_instance(rng, 6, 5, 3)
    c = WeightedPointSet(rng.normal(size=(7, 3)), _random_simplex(rng, 7))
    ab, _ = emd_exact(a, b)
    bc, _ = emd_exact(b, c)
    ac, _ = emd_exact(a, c)
    assert ac <= ab + bc + 1e-8


@given(
    m=st.integers(1, 8),
    n=st.integers(1, 8),
    seed=st.integers(0, 5000),
)
def test_emd_matches_independent_lp(m, n, seed):
    rng = np.random.default_rng(seed)
    a, b = _random_instance(rng, m, n, 3)
    value, plan = emd_exact(a, b)
    costs = cost_matrix(a, b)
    assert value == pytest.approx(
        emd_lp_oracle(a.weights, b.weights, costs.entries), abs=1e-9
    )
    assert transport_cost(plan, costs) == pytest.approx(value, abs=1e-12)
    assert validate_plan(plan, a.weights, b.weights)
    assert plan.nnz <= m + n - 1


@given(
    m=st.integers(2, 8),
    n=st.integers(2, 8),
    seed=st.integers(0, 5000),
)
@settings(max_examples=20)
def test_emd_matches_assignment_expansion_on_dyadic_weights(m, n, seed):
    rng = np.random.default_rng(seed)
    wa = integer_expansion_weights(rng, m)
    wb = integer_expansion_weights(rng, n)
    pa, pb = rng.normal(size=(m, 2)), rng.normal(size=(n, 2))
    value, _ = emd_exact(WeightedPointSet(pa, wa), WeightedPointSet(pb, wb))
    assert value == pytest.approx(
        emd_expansion_oracle(pa, wa, pb, wb), abs=1e-9
    )


def test_emd_uniform_equal_sizes_matches_lp_oracle():
    # the balanced-uniform fast path must agree with a from-scratch LP
    rng = np.random.default_rng(33)
    a = WeightedPointSet.from_points(rng.normal(size=(9, 3)))
    b = WeightedPointSet.from_points(rng.normal(size=(9, 3)))
    value, plan = emd_exact(a, b)
    oracle = emd_lp_oracle(a.weights, b.weights, cost_matrix(a, b).entries)
    assert value == pytest.approx(oracle, abs=1e-9)
    assert plan.nnz == 9


@given(seed=st.integers(0, 2000), scale=st.sampled_from([0.01, 0.5, 3.0, 40.0]))
@settings(max_examples=15)
def test_emd_scale_equivariance(seed, scale):
    rng = np.random.default_rng(seed)
    a, b = _random_instance(rng, 5, 6, 2)
    base, _ = emd_exact(a, b)
    scaled, _ = emd_exact(
        WeightedPointSet(a.points * scale, a.weights),
        WeightedPointSet(b.points * scale, b.weights),
    )
    assert scaled == pytest.approx(scale * base, rel=1e-9)


@given(seed=st.integers(0, 2000))
@settings(max_examples=15)
def test_emd_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    a, b = _random_instance(rng, 6, 7, 2)
    perm = rng.permutation(6)
    shuffled = WeightedPointSet(a.points[perm], a.weights[perm])
    assert emd_exact(a, b)[0] == pytest.approx(
        emd_exact(shuffled, b)[0], abs=1e-9
    )


@given(seed=st.integers(0, 5000))
@settings(max_examples=25)
def test_emd_lower_bounded_by_centroid_gap(seed):
    rng = np.random.default_rng(seed)
    a, b = _random_instance(rng, 7, 5, 3)
    assert emd_exact(a, b)[0] >= l2_centroid_distance(a, b) - 1e-9


# ---------------------------------------------------------------------------
# 1d fast paths
# ---------------------------------------------------------------------------


def test_emd_1d_two_points_each():
    assert emd_1d(np.array([0.0, 1.0]), np.array([2.0, 3.0])) == pytest.approx(2.0)


def test_emd_1d_rejects_unequal_sizes():
    with pytest.raises(ValueError, match="emd_1d_general"):
        emd_1d(np.array([0.0]), np.array([1.0, 2.0]))


def test_emd_1d_general_single_source_split():
    a = WeightedPointSet.from_points(np.array([[0.0]]))
    b = WeightedPointSet.from_points(np.array([[1.0], [3.0]]))
    value, plan = emd_1d_general(a, b)
    assert value == pytest.approx(2.0, abs=1e-12)
    assert plan.nnz == 2


@given(
    m=st.integers(1, 15),
    n=st.integers(1, 15),
    seed=st.integers(0, 5000),
)
def test_emd_1d_general_matches_quantile_oracle(m, n, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=m) * 3
    y = rng.normal(size=n) * 3
    wa, wb = _random_simplex(rng, m), _random_simplex(rng, n)
    a = WeightedPointSet(x[:, None], wa)
    b = WeightedPointSet(y[:, None], wb)
    value, plan = emd_1d_general(a, b)
    assert value == pytest.approx(
        emd_1d_quantile_oracle(x, wa, y, wb), abs=1e-9
    )
    assert validate_plan(plan, wa, wb)
    assert plan.nnz <= m + n - 1


@given(n=st.integers(1, 20), seed=st.integers(0, 5000))
def test_emd_1d_agrees_with_general_path(n, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=n), rng.normal(size=n)
    a = WeightedPointSet.from_points(x[:, None])
    b = WeightedPointSet.from_points(y[:, None])
    assert emd_1d(x, y) == pytest.approx(emd_1d_general(a, b)[0], abs=1e-12)


def test_emd_1d_general_ties_are_deterministic():
    # repeated coordinates: stable sort keeps original order, so the plan
    # is reproducible run to run
    x = np.array([[1.0], [0.0], [1.0]])
    y = np.array([[1.0], [1.0], [2.0]])
    a = WeightedPointSet.from_points(x)
    b = WeightedPointSet.from_points(y)
    t1 = emd_1d_general(a, b)[1].triplets()
    t2 = emd_1d_general(a, b)[1].triplets()
    assert t1 == t2


# ---------------------------------------------------------------------------
# closed-form reference for isotropic normals
# ---------------------------------------------------------------------------


def test_gaussian_oracle_mean_shift_only():
    v = gaussian_w2_oracle(np.array([0.0, 0.0]), np.array([1.0, 1.0]),
                           np.array([3.0, 4.0]), np.array([1.0, 1.0]))
    assert v == pytest.approx(5.0)


def test_gaussian_oracle_variance_mismatch_1d():
    v = gaussian_w2_oracle(np.array([0.0]), np.array([1.0]),
                           np.array([0.0]), np.array([4.0]))
    assert v == pytest.approx(1.0)


def test_gaussian_oracle_rejects_negative_variance():
    with pytest.raises(ValueError):
        gaussian_w2_oracle(np.array([0.0]), np.array([-1.0]),
                           np.array([0.0]), np.array([1.0]))


def test_gaussian_oracle_zero_variance_reduces_to_mean_gap():
    v = gaussian_w2_oracle(np.array([1.0]), np.array([0.0]),
                           np.array([4.0]), np.array([0.0]))
    assert v == pytest.approx(3.0)
