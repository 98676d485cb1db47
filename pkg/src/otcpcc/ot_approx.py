"""Approximate earth mover's distances.

Four families: entropic matrix scaling (``sinkhorn``), random-projection
averaging (``swd``), tree transport in closed form (``twd_closed_form`` on a
user tree, ``quadtree_twd`` on a spatial quadtree), and tree-matching plans
priced with Euclidean costs (``flowtree`` on a quadtree, ``fast_flowtree``
on a sample-augmented label tree).  On an augmented label tree the bottom-up
matcher and the greedy front-to-front matcher perform identical arithmetic,
so their plans agree exactly; ``fast_flowtree`` exploits that to skip tree
traversal entirely and runs in time linear in the number of samples.
"""

from __future__ import annotations

import dataclasses
import math
from collections import deque

import numpy as np
from scipy.special import logsumexp

from .measures import (
    ZERO_MASS,
    FlowPlan,
    WeightedPointSet,
    cost_matrix,
    normalize_weights,
)
from .ot_exact import emd_1d_general, greedy_flow_matching
from .trees import AugmentedTree, LabelTree, QuadNode, QuadTree, TreeNode, build_quadtree

__all__ = [
    "SinkhornResult",
    "sinkhorn",
    "swd",
    "twd_closed_form",
    "quadtree_twd",
    "bottom_up_tree_matching",
    "flowtree",
    "fast_flowtree",
]

# Below this fraction of the median ground cost, plain scaling underflows
# and the iterations move to log space.
_LOG_DOMAIN_FRACTION = 0.05


# ---------------------------------------------------------------------------
# Sinkhorn
# ---------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class SinkhornResult:
    """Entropic transport outcome: cost readout, plan, convergence state."""

    value: float
    plan: FlowPlan
    converged: bool
    iterations: int
    epsilon: float


def _round_to_polytope(plan: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Project a near-feasible dense plan onto exact marginals.

    Scales rows then columns down where they overshoot, then repairs the
    remaining deficit with a rank-one correction.  The output marginals
    match ``a`` and ``b`` to machine precision.
    """
    row = plan.sum(axis=1)
    plan = plan * np.minimum(1.0, a / np.maximum(row, 1e-300))[:, None]
    col = plan.sum(axis=0)
    plan = plan * np.minimum(1.0, b / np.maximum(col, 1e-300))[None, :]
    missing_a = a - plan.sum(axis=1)
    missing_b = b - plan.sum(axis=0)
    deficit = np.abs(missing_a).sum()
    if deficit > 0.0:
        plan = plan + np.outer(missing_a, missing_b) / deficit
    return plan


def sinkhorn(
    a: WeightedPointSet,
    b: WeightedPointSet,
    epsilon: float = 10.0,
    max_iters: int = 200,
    tol: float = 1e-6,
) -> SinkhornResult:
    """Entropically regularized transport via alternating matrix scaling.

    Iterates until the marginal error drops below ``tol`` or ``max_iters``
    is reached; small ``epsilon`` switches the iterations to log space to
    avoid underflow.  The reported value is the plain transport cost of the
    scaled plan (no entropy term), after the plan has been projected onto
    exact marginals, so the returned plan is always feasible even when the
    iterations were cut short (``converged`` says which happened).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    costs = cost_matrix(a, b).entries
    wa, wb = a.weights, b.weights
    median_cost = float(np.median(costs))
    use_log = epsilon < _LOG_DOMAIN_FRACTION * median_cost
    iterations = 0
    converged = False

    if use_log:
        with np.errstate(divide="ignore"):
            log_a = np.log(wa)
            log_b = np.log(wb)
        kernel = -costs / epsilon
        f = np.zeros(wa.size)
        g = np.zeros(wb.size)
        for iterations in range(1, max_iters + 1):
            f = epsilon * (log_a - logsumexp(kernel + g[None, :] / epsilon, axis=1))
            g = epsilon * (log_b - logsumexp(kernel + f[:, None] / epsilon, axis=0))
            if iterations % 10 == 0 or iterations == max_iters:
                plan = np.exp(kernel + f[:, None] / epsilon + g[None, :] / epsilon)
                err = (
                    np.abs(plan.sum(1) - wa).max() + np.abs(plan.sum(0) - wb).max()
                )
                if err < tol:
                    converged = True
                    break
        plan = np.exp(kernel + f[:, None] / epsilon + g[None, :] / epsilon)
    else:
        kernel = np.exp(-costs / epsilon)
        u = np.ones(wa.size)
        v = np.ones(wb.size)
        for iterations in range(1, max_iters + 1):
            u = wa / np.maximum(kernel @ v, 1e-300)
            v = wb / np.maximum(kernel.T @ u, 1e-300)
            plan = u[:, None] * kernel * v[None, :]
            err = np.abs(plan.sum(1) - wa).max() + np.abs(plan.sum(0) - wb).max()
            if err < tol:
                converged = True
                break
        plan = u[:, None] * kernel * v[None, :]

    plan = _round_to_polytope(plan, wa, wb)
    value = float((plan * costs).sum())
    return SinkhornResult(
        value=value,
        plan=FlowPlan.from_dense(plan),
        converged=converged,
        iterations=iterations,
        epsilon=float(epsilon),
    )


# ---------------------------------------------------------------------------
# Sliced distance
# ---------------------------------------------------------------------------

def _unit_direction(d: int, seed: int, index: int) -> np.ndarray:
    """Deterministic unit vector for projection ``index`` under ``seed``.

    Each projection owns an independent stream keyed by (seed, index), so
    evaluation order cannot change the result.  The sign is canonicalized
    (first nonzero component positive); projections are sign-symmetric, so
    this only pins the representative.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, index]))
    while True:
        direction = rng.standard_normal(d)
        norm = np.linalg.norm(direction)
        if norm > 0:
            direction = direction / norm
            break
    for component in direction:
        if component != 0.0:
            if component < 0.0:
                direction = -direction
            break
    return direction


def swd(
    a: WeightedPointSet,
    b: WeightedPointSet,
    num_projections: int = 10,
    seed: int = 0,
) -> float:
    """Sliced distance: average 1-d transport over random directions.

    Args:
        a: left measure.
        b: right measure.
        num_projections: number of unit directions drawn on the sphere.
        seed: stream seed; fixed seed gives a fixed value.

    Returns:
        Mean over directions of the exact 1-d transport distance between
        the projected measures.  In one dimension this equals the 1-d
        distance itself.
    """
    if a.d != b.d:
        raise ValueError(f"dimension mismatch: {a.d} vs {b.d}")
    if num_projections < 1:
        raise ValueError("need at least one projection")
    values = []
    for index in range(num_projections):
        direction = _unit_direction(a.d, seed, index)
        proj_a = WeightedPointSet(a.points @ direction, a.weights)
        proj_b = WeightedPointSet(b.points @ direction, b.weights)
        value, _ = emd_1d_general(proj_a, proj_b)
        values.append(value)
    # fsum keeps the mean independent of summation order.
    return math.fsum(values) / num_projections


# ---------------------------------------------------------------------------
# Tree transport
# ---------------------------------------------------------------------------

def twd_closed_form(
    tree: LabelTree, a: dict[str, float], b: dict[str, float]
) -> float:
    """Tree transport distance in closed form.

    For every non-root node, the mass difference between the two
    distributions inside its subtree must cross the node's parent edge;
    the distance is the weighted sum of those absolute differences
    (equivalently the l1 form over the ancestor incidence matrix).

    Args:
        tree: weighted tree whose leaves carry the distributions.
        a: left distribution, label to mass (a simplex).
        b: right distribution, same support rules.
    """
    for name, dist in (("a", a), ("b", b)):
        unknown = set(dist) - set(tree.leaves)
        if unknown:
            raise ValueError(f"distribution {name} puts mass outside the leaves: {sorted(unknown)}")
        normalize_weights(np.asarray(list(dist.values()), dtype=float), what=f"distribution {name}")

    total = 0.0

    def subtree_diff(node: TreeNode) -> float:
        nonlocal total
        diff = 0.0
        if node.is_leaf:
            diff = a.get(node.label, 0.0) - b.get(node.label, 0.0)
        for child in node.children:
            diff += subtree_diff(child)
        if node.parent is not None:
            total += node.weight * abs(diff)
        return diff

    subtree_diff(tree.root)
    return total


def _union_cloud(a: WeightedPointSet, b: WeightedPointSet) -> WeightedPointSet:
    points = np.vstack([a.points, b.points])
    weights = np.concatenate([a.weights, b.weights]) / 2.0
    return WeightedPointSet(points, weights)


def quadtree_twd(
    a: WeightedPointSet, b: WeightedPointSet, seed: int = 0
) -> float:
    """Tree transport distance over a quadtree built on the union cloud.

    The quadtree's tree metric dominates the Euclidean one pointwise, so
    this value never falls below the exact transport distance (nor below
    the distance between barycenters).
    """
    if a.d != b.d:
        raise ValueError(f"dimension mismatch: {a.d} vs {b.d}")
    tree = build_quadtree(_union_cloud(a, b), seed)
    m = a.n
    total = 0.0

    def signed_subtree_mass(node: QuadNode) -> float:
        nonlocal total
        if node.is_point_leaf:
            pid = node.point_id
            diff = a.weights[pid] if pid < m else -b.weights[pid - m]
        else:
            diff = 0.0
            for child in node.children:
                diff += signed_subtree_mass(child)
        if node.depth > 0:
            total += tree.edge_weight(node.depth) * abs(diff)
        return diff

    signed_subtree_mass(tree.root)
    return total


# ---------------------------------------------------------------------------
# Tree matching
# ---------------------------------------------------------------------------

def _match_queues(
    queue_a: deque,
    queue_b: deque,
    rows: list[int],
    cols: list[int],
    mass: list[float],
) -> None:
    """Match front a-mass against front b-mass until one side drains.

    Performs exactly the greedy front-to-front arithmetic: move the smaller
    residual, snap residue at or below ``ZERO_MASS``, emit only positive
    masses.
    """
    while queue_a and queue_b:
        ia, ra = queue_a[0]
        ib, rb = queue_b[0]
        eta = ra if ra <= rb else rb
        if eta > ZERO_MASS:
            rows.append(ia)
            cols.append(ib)
            mass.append(eta)
        ra -= eta
        rb -= eta
        if ra <= ZERO_MASS:
            queue_a.popleft()
        else:
            queue_a[0] = (ia, ra)
        if rb <= ZERO_MASS:
            queue_b.popleft()
        else:
            queue_b[0] = (ib, rb)


def _match_label_tree(
    tree: AugmentedTree,
    class_a: str,
    class_b: str,
    weights_a: np.ndarray,
    weights_b: np.ndarray,
) -> FlowPlan:
    rows: list[int] = []
    cols: list[int] = []
    mass: list[float] = []

    def process(node: TreeNode) -> tuple[deque, deque]:
        queue_a: deque = deque()
        queue_b: deque = deque()
        if node.is_leaf:
            # Sample leaves hang below the class leaf in stored order.
            if node.label == class_a:
                queue_a.extend((i, float(w)) for i, w in enumerate(weights_a))
            if node.label == class_b:
                queue_b.extend((j, float(w)) for j, w in enumerate(weights_b))
        for child in node.children:
            child_a, child_b = process(child)
            queue_a.extend(child_a)
            queue_b.extend(child_b)
        _match_queues(queue_a, queue_b, rows, cols, mass)
        return queue_a, queue_b

    process(tree.base.root)
    return FlowPlan(
        np.asarray(rows), np.asarray(cols), np.asarray(mass),
        (weights_a.size, weights_b.size),
    )


def _match_quadtree(
    tree: QuadTree, a: WeightedPointSet, b: WeightedPointSet
) -> FlowPlan:
    m = a.n

    rows: list[int] = []
    cols: list[int] = []
    mass: list[float] = []

    def process(node: QuadNode) -> tuple[deque, deque]:
        queue_a: deque = deque()
        queue_b: deque = deque()
        if node.is_point_leaf:
            pid = node.point_id
            if pid < m:
                queue_a.append((pid, float(a.weights[pid])))
            else:
                queue_b.append((pid - m, float(b.weights[pid - m])))
        for child in node.children:
            child_a, child_b = process(child)
            queue_a.extend(child_a)
            queue_b.extend(child_b)
        _match_queues(queue_a, queue_b, rows, cols, mass)
        return queue_a, queue_b

    process(tree.root)
    return FlowPlan(np.asarray(rows), np.asarray(cols), np.asarray(mass), (m, b.n))


def bottom_up_tree_matching(
    tree: AugmentedTree | QuadTree,
    a: WeightedPointSet,
    b: WeightedPointSet,
    class_a: str | None = None,
    class_b: str | None = None,
) -> FlowPlan:
    """Match the two measures bottom-up along a tree.

    Children are drained before their parents, so all matching for a node's
    subtree happens at the deepest node containing both kinds of mass;
    unmatched residue propagates upward.  On a sample-augmented label tree
    this reproduces the greedy front-to-front plan exactly.

    Args:
        tree: an augmented label tree (pass ``class_a``/``class_b`` to say
            which class leaves the measures hang from) or a quadtree built
            over the concatenation of ``a`` and ``b``.
        a: left measure.
        b: right measure.
    """
    if isinstance(tree, AugmentedTree):
        if class_a is None or class_b is None:
            raise ValueError("augmented trees need class_a and class_b")
        weights_a = tree.weights_for(class_a)
        weights_b = tree.weights_for(class_b)
        if weights_a.size != a.n or weights_b.size != b.n:
            raise ValueError("measure sizes do not match the stored sample weights")
        if (
            np.abs(weights_a - a.weights).max() > 1e-9
            or np.abs(weights_b - b.weights).max() > 1e-9
        ):
            raise ValueError("measure weights disagree with the stored sample weights")
        return _match_label_tree(tree, class_a, class_b, weights_a, weights_b)
    if isinstance(tree, QuadTree):
        if tree.n_points != a.n + b.n:
            raise ValueError("quadtree does not cover the union of the samples")
        return _match_quadtree(tree, a, b)
    raise TypeError(f"unsupported tree type: {type(tree).__name__}")


def _price_plan(plan: FlowPlan, za: np.ndarray, zb: np.ndarray) -> float:
    """Euclidean cost of a sparse plan, touching only its support pairs."""
    if plan.nnz == 0:
        return 0.0
    diffs = za[plan.rows] - zb[plan.cols]
    return float(np.dot(plan.mass, np.sqrt((diffs * diffs).sum(axis=1))))


def flowtree(
    a: WeightedPointSet, b: WeightedPointSet, seed: int = 0
) -> tuple[float, FlowPlan]:
    """Tree-matching plan priced with true Euclidean costs.

    Builds a quadtree over the union of the points, matches bottom-up, and
    evaluates the resulting feasible plan against Euclidean distances; being
    feasible, the value never falls below the exact transport distance.
    """
    if a.d != b.d:
        raise ValueError(f"dimension mismatch: {a.d} vs {b.d}")
    tree = build_quadtree(_union_cloud(a, b), seed)
    plan = _match_quadtree(tree, a, b)
    return _price_plan(plan, a.points, b.points), plan


def fast_flowtree(
    tree: AugmentedTree,
    class_u: str,
    class_v: str,
    zu: np.ndarray,
    zv: np.ndarray,
) -> tuple[float, FlowPlan]:
    """Linear-time tree-matching distance on an augmented label tree.

    All cross-class sample pairs share one tree distance, so any feasible
    plan is tree-optimal and the bottom-up match reduces to greedy
    front-to-front matching of the per-class weights in stored sample
    order.  Only the at most ``m + n - 1`` support pairs are ever priced,
    making the total work linear in the number of samples (times d).

    Args:
        tree: augmented label tree holding per-class sample weights.
        class_u: class label for the left side.
        class_v: class label for the right side.
        zu: left feature matrix, rows aligned with the stored weights.
        zv: right feature matrix.
    """
    weights_u = tree.weights_for(class_u)
    weights_v = tree.weights_for(class_v)
    zu = np.asarray(zu, dtype=float)
    zv = np.asarray(zv, dtype=float)
    if zu.ndim == 1:
        zu = zu.reshape(-1, 1)
    if zv.ndim == 1:
        zv = zv.reshape(-1, 1)
    if zu.shape[0] != weights_u.size or zv.shape[0] != weights_v.size:
        raise ValueError("feature row counts do not match the stored sample weights")
    if zu.shape[1] != zv.shape[1]:
        raise ValueError(f"dimension mismatch: {zu.shape[1]} vs {zv.shape[1]}")
    plan = greedy_flow_matching(weights_u, weights_v)
    return _price_plan(plan, zu, zv), plan
