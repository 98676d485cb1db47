"""Tree/feature correlation, flow weights, plan caching, gradients."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otcpcc import (
    BACKENDS,
    BackendParams,
    ClassBatch,
    PlanCache,
    WeightedPointSet,
    bottom_up_tree_matching,
    cost_matrix,
    cpcc,
    cpcc_regularized_loss,
    emd_cpcc_subgradient,
    evaluate_cpcc,
    flow_weights,
    gradient_check,
    l2_centroid_distance,
    pairwise_rho,
    parse_label_tree,
    transport_cost,
    tree_metric,
)
from oracles import pearson_oracle

THREE_CLASS_TREE = parse_label_tree(
    '{"name": "root", "children": ['
    '{"name": "c1", "children": ['
    '{"name": "l0", "label": "c0"}, {"name": "l1", "label": "c1"}]}, '
    '{"name": "c2", "children": [{"name": "l2", "label": "c2"}]}]}'
)

TWO_CLASS_TREE = parse_label_tree(
    '{"name": "root", "children": ['
    '{"name": "l0", "label": "c0"}, {"name": "l1", "label": "c1"}]}'
)


def _random_batch(rng, k=3, n=5, d=3, spread=2.0):
    features = {
        f"c{c}": spread * c + rng.normal(size=(n, d)) for c in range(k)
    }
    return ClassBatch.from_features(features)


# ---------------------------------------------------------------------------
# flow weights
# ---------------------------------------------------------------------------


def test_flow_weights_uniform_and_symmetric_case():
    z = np.array([[0.0], [2.0]])
    for scheme in ("uniform", "dist", "inv"):
        assert np.allclose(flow_weights(z, scheme), [0.5, 0.5])


def test_flow_weights_orderings():
    z = np.array([[0.0], [0.9], [5.0]])  # centroid far from the outlier
    dist = flow_weights(z, "dist")
    inv = flow_weights(z, "inv")
    assert abs(dist.sum() - 1.0) < 1e-12 and abs(inv.sum() - 1.0) < 1e-12
    # "dist" favors points far from the centroid, "inv" favors near ones
    assert dist[2] == dist.max()
    assert inv[2] == inv.min()


def test_flow_weights_rejects_unknown_scheme():
    with pytest.raises(ValueError):
        flow_weights(np.zeros((2, 1)), "banana")


def test_flow_weights_stable_under_large_magnitudes():
    z = np.array([[0.0], [1e6]])
    for scheme in ("dist", "inv"):
        w = flow_weights(z, scheme)
        assert np.all(np.isfinite(w)) and abs(w.sum() - 1.0) < 1e-12


# ---------------------------------------------------------------------------
# class batches
# ---------------------------------------------------------------------------


def test_class_batch_basics():
    rng = np.random.default_rng(31)
    batch = _random_batch(rng, k=4, n=3, d=2)
    assert batch.labels == ("c0", "c1", "c2", "c3")
    assert len(batch.class_pairs()) == 6
    measure = batch.measure("c1")
    assert isinstance(measure, WeightedPointSet)
    assert measure.n == 3 and measure.d == 2


def test_class_batch_rejects_empty_class_and_mismatched_dims():
    with pytest.raises(ValueError):
        ClassBatch.from_features({"a": np.zeros((0, 2)), "b": np.zeros((2, 2))})
    with pytest.raises(ValueError):
        ClassBatch.from_features({"a": np.zeros((2, 2)), "b": np.zeros((2, 3))})
    with pytest.raises(ValueError):
        ClassBatch.from_features({})


def test_class_batch_weight_override_is_validated():
    with pytest.raises(ValueError):
        ClassBatch(
            features={"a": np.zeros((2, 2))},
            weights={"a": np.array([0.9, 0.9])},
        )


# ---------------------------------------------------------------------------
# pairwise distances
# ---------------------------------------------------------------------------


def test_pairwise_rho_l2_matches_direct_centroids():
    rng = np.random.default_rng(32)
    batch = _random_batch(rng)
    rho = pairwise_rho(batch, "l2")
    for (u, v), value in rho.items():
        direct = l2_centroid_distance(batch.measure(u), batch.measure(v))
        assert value == pytest.approx(direct, abs=1e-15)


def test_pairwise_rho_fastft_equals_priced_bottom_up_plan():
    rng = np.random.default_rng(33)
    batch = _random_batch(rng)
    from otcpcc import augment_tree

    aug = augment_tree(
        THREE_CLASS_TREE, {c: batch.weights[c] for c in batch.labels}
    )
    rho = pairwise_rho(batch, "fastft", tree=THREE_CLASS_TREE)
    for u, v in batch.class_pairs():
        mu, mv = batch.measure(u), batch.measure(v)
        plan = bottom_up_tree_matching(aug, mu, mv, class_a=u, class_b=v)
        priced = transport_cost(plan, cost_matrix(mu, mv))
        assert rho[(u, v)] == pytest.approx(priced, abs=1e-12)


def test_pairwise_rho_fastft_requires_tree():
    rng = np.random.default_rng(34)
    with pytest.raises(ValueError):
        pairwise_rho(_random_batch(rng), "fastft")


def test_pairwise_rho_backend_ordering_on_shared_instance():
    # approximations that price feasible plans can never undercut the
    # exact value; the centroid distance can never exceed it
    rng = np.random.default_rng(35)
    batch = _random_batch(rng, k=3, n=6, d=2)
    exact = pairwise_rho(batch, "emd")
    lo = pairwise_rho(batch, "l2")
    fast = pairwise_rho(batch, "fastft", tree=THREE_CLASS_TREE)
    for pair in exact:
        assert lo[pair] <= exact[pair] + 1e-9
        assert fast[pair] >= exact[pair] - 1e-9


def test_pairwise_rho_rejects_unknown_backend():
    rng = np.random.default_rng(36)
    with pytest.raises(ValueError):
        pairwise_rho(_random_batch(rng), "nope")


def test_pairwise_rho_parallel_matches_serial():
    rng = np.random.default_rng(37)
    batch = _random_batch(rng, k=4, n=5, d=3)
    serial = pairwise_rho(batch, "emd")
    parallel = pairwise_rho(
        batch, "emd", params=BackendParams(workers=4)
    )
    assert serial == parallel


def test_all_backends_produce_finite_rho():
    rng = np.random.default_rng(38)
    batch = _random_batch(rng, k=3, n=4, d=2)
    for backend in BACKENDS:
        tree = THREE_CLASS_TREE if backend == "fastft" else None
        rho = pairwise_rho(batch, backend, tree=tree)
        assert len(rho) == 3
        assert all(np.isfinite(v) for v in rho.values())


# ---------------------------------------------------------------------------
# correlation
# ---------------------------------------------------------------------------


@given(
    n=st.integers(3, 12),
    seed=st.integers(0, 10_000),
)
def test_cpcc_matches_textbook_pearson(n, seed):
    rng = np.random.default_rng(seed)
    keys = [(f"a{i}", f"b{i}") for i in range(n)]
    t = dict(zip(keys, rng.normal(size=n) * 3 + 1))
    r = dict(zip(keys, rng.normal(size=n) * 2))
    oracle = pearson_oracle(list(t.values()), list(r.values()))
    assert oracle is not None
    assert cpcc(t, r) == pytest.approx(oracle, abs=1e-12)


@given(
    seed=st.integers(0, 5000),
    alpha=st.sampled_from([0.5, 2.0, 17.0]),
    beta=st.sampled_from([-3.0, 0.0, 11.0]),
)
def test_cpcc_affine_invariance(seed, alpha, beta):
    rng = np.random.default_rng(seed)
    keys = [(str(i), str(i + 1)) for i in range(6)]
    t = dict(zip(keys, rng.normal(size=6)))
    r = dict(zip(keys, rng.normal(size=6)))
    base = cpcc(t, r)
    moved = {k: alpha * v + beta for k, v in t.items()}
    assert cpcc(moved, r) == pytest.approx(base, abs=1e-12)
    flipped = {k: -alpha * v + beta for k, v in t.items()}
    assert cpcc(flipped, r) == pytest.approx(-base, abs=1e-12)


def test_cpcc_extremal_cases_hit_plus_minus_one():
    keys = [("a", "b"), ("a", "c"), ("b", "c")]
    t = dict(zip(keys, [1.0, 2.0, 4.0]))
    up = {k: 3.0 * v + 0.5 for k, v in t.items()}
    down = {k: -2.0 * v + 9.0 for k, v in t.items()}
    assert cpcc(t, up) == pytest.approx(1.0, abs=1e-12)
    assert cpcc(t, down) == pytest.approx(-1.0, abs=1e-12)
    assert abs(cpcc(t, up)) <= 1.0


def test_cpcc_degenerate_variance_returns_zero_not_nan():
    keys = [("a", "b"), ("a", "c"), ("b", "c")]
    t = dict(zip(keys, [2.0, 2.0, 2.0]))
    r = dict(zip(keys, [1.0, 5.0, 9.0]))
    assert cpcc(t, r) == 0.0
    assert cpcc(r, t) == 0.0


def test_cpcc_rejects_mismatched_or_tiny_inputs():
    with pytest.raises(ValueError):
        cpcc({("a", "b"): 1.0}, {("a", "c"): 1.0})
    with pytest.raises(ValueError):
        cpcc({("a", "b"): 1.0}, {("a", "b"): 2.0})


def test_evaluate_cpcc_full_pipeline_and_bounds():
    rng = np.random.default_rng(39)
    batch = _random_batch(rng, k=3, n=6, d=3)
    for backend in BACKENDS:
        result = evaluate_cpcc(batch, THREE_CLASS_TREE, backend)
        assert -1.0 <= result.value <= 1.0
        assert result.backend == backend
        assert len(result.pairs) == 3
        metric = tree_metric(THREE_CLASS_TREE)
        for pair in result.pairs:
            assert pair.t == pytest.approx(metric.distance(pair.u, pair.v))


def test_evaluate_cpcc_two_class_tree_is_degenerate_flagged():
    rng = np.random.default_rng(40)
    features = {"c0": rng.normal(size=(4, 2)), "c1": rng.normal(size=(4, 2))}
    batch = ClassBatch.from_features(features)
    result = evaluate_cpcc(batch, TWO_CLASS_TREE, "l2")
    assert result.degenerate
    assert result.value == 0.0


def test_evaluate_cpcc_well_separated_hierarchy_scores_high():
    # classes laid out so feature distance grows with tree distance
    rng = np.random.default_rng(41)
    features = {
        "c0": rng.normal(size=(5, 2)) * 0.1,
        "c1": np.array([2.0, 0.0]) + rng.normal(size=(5, 2)) * 0.1,
        "c2": np.array([9.0, 0.0]) + rng.normal(size=(5, 2)) * 0.1,
    }
    batch = ClassBatch.from_features(features)
    result = evaluate_cpcc(batch, THREE_CLASS_TREE, "emd")
    assert result.value > 0.9


def test_cpcc_regularized_loss_arithmetic():
    rng = np.random.default_rng(42)
    batch = _random_batch(rng)
    value = evaluate_cpcc(batch, THREE_CLASS_TREE, "l2").value
    loss = cpcc_regularized_loss(
        batch, THREE_CLASS_TREE, "l2", lam=0.5, ce_loss=2.0
    )
    assert loss == pytest.approx(2.0 - 0.5 * value, abs=1e-12)


# ---------------------------------------------------------------------------
# plan cache
# ---------------------------------------------------------------------------


def test_plan_cache_counts_hits_and_serves_transposes():
    cache = PlanCache()
    p1 = cache.lookup(4, 6)
    p2 = cache.lookup(4, 6)
    p3 = cache.lookup(6, 4)
    assert cache.misses == 1
    assert cache.hits == 2
    assert p1.triplets() == p2.triplets()
    assert p3.shape == (6, 4)
    assert p3.to_dense() == pytest.approx(p1.to_dense().T)


def test_cached_and_uncached_fastft_agree():
    rng = np.random.default_rng(44)
    features = {f"c{c}": c + rng.normal(size=(6, 2)) for c in range(3)}
    batch = ClassBatch.from_features(features)
    cache = PlanCache()
    cached = pairwise_rho(
        batch, "fastft", tree=THREE_CLASS_TREE,
        params=BackendParams(cache=cache),
    )
    plain = pairwise_rho(batch, "fastft", tree=THREE_CLASS_TREE)
    assert cached == plain
    assert cache.hits + cache.misses > 0


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------


def test_subgradient_shapes_and_finiteness_all_gradient_backends():
    rng = np.random.default_rng(45)
    batch = _random_batch(rng, k=3, n=4, d=3)
    from otcpcc import GRADIENT_BACKENDS

    for backend in GRADIENT_BACKENDS:
        grads = emd_cpcc_subgradient(batch, THREE_CLASS_TREE, backend)
        assert set(grads) == set(batch.labels)
        for c in batch.labels:
            assert grads[c].shape == batch.features[c].shape
            assert np.all(np.isfinite(grads[c]))


def test_gradient_check_l2_backend_tight():
    rng = np.random.default_rng(46)
    batch = _random_batch(rng, k=3, n=5, d=3)
    check = gradient_check(batch, THREE_CLASS_TREE, "l2")
    assert check.max_rel_error <= 1e-4
    assert check.passed(1e-4)


def test_gradient_check_emd_and_fastft_generic_points():
    rng = np.random.default_rng(47)
    batch = _random_batch(rng, k=3, n=4, d=3)
    for backend in ("emd", "fastft"):
        check = gradient_check(batch, THREE_CLASS_TREE, backend)
        assert check.max_rel_error <= 1e-3, (backend, check.max_rel_error)


def test_gradient_check_swd_generic_points():
    rng = np.random.default_rng(48)
    batch = _random_batch(rng, k=3, n=4, d=3)
    check = gradient_check(batch, THREE_CLASS_TREE, "swd")
    assert check.max_rel_error <= 1e-3


def test_degenerate_correlation_has_zero_gradient():
    rng = np.random.default_rng(49)
    features = {"c0": rng.normal(size=(3, 2)), "c1": rng.normal(size=(3, 2))}
    batch = ClassBatch.from_features(features)
    grads = emd_cpcc_subgradient(batch, TWO_CLASS_TREE, "l2")
    for grad in grads.values():
        assert np.all(grad == 0.0)


def test_coincident_centroids_give_finite_l2_gradient():
    features = {
        "c0": np.array([[1.0, 0.0], [-1.0, 0.0]]),
        "c1": np.array([[0.0, 1.0], [0.0, -1.0]]),
        "c2": np.array([[5.0, 5.0], [6.0, 6.0]]),
    }
    batch = ClassBatch.from_features(features)
    grads = emd_cpcc_subgradient(batch, THREE_CLASS_TREE, "l2")
    for grad in grads.values():
        assert np.all(np.isfinite(grad))
