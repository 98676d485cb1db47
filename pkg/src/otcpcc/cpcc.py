"""Correlation between a label-tree metric and feature-space class distances.

Given per-class feature batches and a class hierarchy, every unordered class
pair contributes two numbers: the tree distance ``t(u, v)`` between the class
leaves and a feature-space distance ``rho(u, v)`` computed by a pluggable
backend (centroid distance, exact transport, or one of the approximations).
The statistic is the Pearson correlation of the two lists.  Analytic
subgradients with respect to the features are assembled by treating every
transport plan as a constant, which matches finite differences wherever the
optimal plan is locally unique.
"""

from __future__ import annotations

import dataclasses
import math
import threading
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .measures import FlowPlan, WeightedPointSet, normalize_weights, uniform_weights
from .ot_approx import _unit_direction, flowtree, quadtree_twd, sinkhorn, swd
from .ot_exact import (
    emd_1d_general,
    emd_exact,
    greedy_flow_matching,
    l2_centroid_distance,
)
from .trees import AugmentedTree, LabelTree, augment_tree, tree_metric

__all__ = [
    "BACKENDS",
    "GRADIENT_BACKENDS",
    "BackendParams",
    "ClassBatch",
    "PairDistance",
    "CpccResult",
    "PlanCache",
    "flow_weights",
    "pairwise_rho",
    "cpcc",
    "evaluate_cpcc",
    "cpcc_regularized_loss",
    "emd_cpcc_subgradient",
    "gradient_check",
    "GradCheckResult",
]

BACKENDS = ("l2", "emd", "sinkhorn", "swd", "twd", "flowtree", "fastft")
# Backends with an analytic subgradient; the l1 tree form is excluded.
GRADIENT_BACKENDS = ("l2", "emd", "fastft", "flowtree", "swd", "sinkhorn")

# Support pairs closer than this get a zero subgradient contribution (the
# unit direction is undefined at coincident points).
_COINCIDENT_TOL = 1e-300


@dataclasses.dataclass(frozen=True)
class BackendParams:
    """Tunables threaded through the distance backends."""

    epsilon: float = 10.0
    max_iters: int = 200
    tol: float = 1e-6
    num_projections: int = 10
    seed: int = 0
    cache: "PlanCache | None" = None
    workers: int = 1


class PlanCache:
    """Memo of greedy plans for uniform weights, keyed by (m, n).

    All writers compute identical plans, so concurrent inserts are benign;
    reads may race with writes under last-writer-wins semantics.
    """

    def __init__(self) -> None:
        self._plans: dict[tuple[int, int], FlowPlan] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def lookup(self, m: int, n: int) -> FlowPlan:
        """Cached greedy plan for uniform marginals of sizes (m, n)."""
        plan = self._plans.get((m, n))
        if plan is not None:
            with self._lock:
                self.hits += 1
            return plan
        swapped = self._plans.get((n, m))
        if swapped is not None:
            plan = swapped.transpose()
            self._plans[(m, n)] = plan
            with self._lock:
                self.hits += 1
            return plan
        plan = greedy_flow_matching(uniform_weights(m), uniform_weights(n))
        self._plans[(m, n)] = plan
        with self._lock:
            self.misses += 1
        return plan

    def __len__(self) -> int:
        return len(self._plans)


def flow_weights(z: np.ndarray, scheme: str = "uniform") -> np.ndarray:
    """Per-sample simplex weights for one class's features.

    ``uniform`` gives 1/n each; ``dist`` is a softmax of the distances to
    the class centroid (far samples weigh more); ``inv`` is the softmax of
    the negated distances (near samples weigh more).
    """
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z.reshape(-1, 1)
    n = z.shape[0]
    if n < 1:
        raise ValueError("need at least one sample")
    if scheme == "uniform":
        return uniform_weights(n)
    if scheme not in ("dist", "inv"):
        raise ValueError(f"unknown flow weight scheme {scheme!r}")
    centroid = z.mean(axis=0)
    dists = np.linalg.norm(z - centroid, axis=1)
    logits = dists if scheme == "dist" else -dists
    logits = logits - logits.max()  # stable softmax
    weights = np.exp(logits)
    return weights / weights.sum()


@dataclasses.dataclass(frozen=True)
class ClassBatch:
    """Per-class feature matrices with per-class sample weights."""

    features: dict[str, np.ndarray]
    weights: dict[str, np.ndarray]

    def __post_init__(self) -> None:
        if not self.features:
            raise ValueError("batch has no classes")
        frozen_features: dict[str, np.ndarray] = {}
        frozen_weights: dict[str, np.ndarray] = {}
        dim = None
        for label, z in self.features.items():
            z = np.asarray(z, dtype=float)
            if z.ndim == 1:
                z = z.reshape(-1, 1)
            if z.ndim != 2 or z.shape[0] < 1:
                raise ValueError(f"class {label!r} needs an n x d feature matrix")
            if not np.all(np.isfinite(z)):
                raise ValueError(f"class {label!r} has non-finite features")
            if dim is None:
                dim = z.shape[1]
            elif z.shape[1] != dim:
                raise ValueError("classes disagree on feature dimension")
            w = self.weights.get(label)
            w = uniform_weights(z.shape[0]) if w is None else (
                normalize_weights(np.asarray(w, float), what=f"weights of {label!r}")
            )
            if w.size != z.shape[0]:
                raise ValueError(f"class {label!r}: weight length vs sample count")
            z = z.copy()
            z.setflags(write=False)
            w.setflags(write=False)
            frozen_features[label] = z
            frozen_weights[label] = w
        object.__setattr__(self, "features", frozen_features)
        object.__setattr__(self, "weights", frozen_weights)

    @classmethod
    def from_features(
        cls,
        features: dict[str, np.ndarray],
        scheme: str = "uniform",
    ) -> "ClassBatch":
        """Build a batch, deriving weights from ``scheme`` per class."""
        weights = {
            label: flow_weights(np.asarray(z, dtype=float), scheme)
            for label, z in features.items()
        }
        return cls(features=dict(features), weights=weights)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(sorted(self.features))

    def measure(self, label: str) -> WeightedPointSet:
        return WeightedPointSet(self.features[label], self.weights[label])

    def class_pairs(self) -> tuple[tuple[str, str], ...]:
        labels = self.labels
        return tuple(
            (labels[i], labels[j])
            for i in range(len(labels))
            for j in range(i + 1, len(labels))
        )


def _is_uniform(w: np.ndarray) -> bool:
    return bool(np.abs(w - 1.0 / w.size).max() <= 1e-12)


def _augmented_for(batch: ClassBatch, tree: LabelTree) -> AugmentedTree:
    missing = [label for label in batch.labels if label not in tree.leaves]
    if missing:
        raise ValueError(f"classes missing from the label tree: {missing}")
    return augment_tree(tree, {label: batch.weights[label] for label in batch.labels})


def _fastft_plan(
    aug: AugmentedTree, u: str, v: str, cache: PlanCache | None
) -> FlowPlan:
    wu = aug.weights_for(u)
    wv = aug.weights_for(v)
    if cache is not None and _is_uniform(wu) and _is_uniform(wv):
        return cache.lookup(wu.size, wv.size)
    return greedy_flow_matching(wu, wv)


def _plan_cost(plan: FlowPlan, zu: np.ndarray, zv: np.ndarray) -> float:
    if plan.nnz == 0:
        return 0.0
    diffs = zu[plan.rows] - zv[plan.cols]
    return float(np.dot(plan.mass, np.sqrt((diffs * diffs).sum(axis=1))))


def _pair_value(
    batch: ClassBatch,
    u: str,
    v: str,
    backend: str,
    aug: AugmentedTree | None,
    params: BackendParams,
) -> float:
    mu = batch.measure(u)
    mv = batch.measure(v)
    if backend == "l2":
        return l2_centroid_distance(mu, mv)
    if backend == "emd":
        return emd_exact(mu, mv)[0]
    if backend == "sinkhorn":
        return sinkhorn(
            mu, mv, epsilon=params.epsilon, max_iters=params.max_iters, tol=params.tol
        ).value
    if backend == "swd":
        return swd(mu, mv, num_projections=params.num_projections, seed=params.seed)
    if backend == "twd":
        return quadtree_twd(mu, mv, seed=params.seed)
    if backend == "flowtree":
        return flowtree(mu, mv, seed=params.seed)[0]
    if backend == "fastft":
        plan = _fastft_plan(aug, u, v, params.cache)
        return _plan_cost(plan, batch.features[u], batch.features[v])
    raise ValueError(f"unknown backend {backend!r}")


def pairwise_rho(
    batch: ClassBatch,
    backend: str,
    tree: LabelTree | None = None,
    params: BackendParams | None = None,
) -> dict[tuple[str, str], float]:
    """Feature-space distance for every unordered pair of present classes.

    Args:
        batch: per-class features and weights (at least two classes).
        backend: one of ``BACKENDS``; ``l2`` is the barycenter distance.
        tree: class hierarchy, required by the ``fastft`` backend.
        params: backend tunables; ``params.workers > 1`` evaluates the
            (independent) pairs on a thread pool.
    """
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}; expected one of {BACKENDS}")
    if len(batch.labels) < 2:
        raise ValueError("need at least two classes")
    params = params or BackendParams()
    aug = None
    if backend == "fastft":
        if tree is None:
            raise ValueError("the fastft backend needs a label tree")
        aug = _augmented_for(batch, tree)
    pairs = batch.class_pairs()
    if params.workers > 1:
        with ThreadPoolExecutor(max_workers=params.workers) as pool:
            values = list(
                pool.map(
                    lambda pair: _pair_value(batch, *pair, backend, aug, params), pairs
                )
            )
    else:
        values = [_pair_value(batch, u, v, backend, aug, params) for u, v in pairs]
    return dict(zip(pairs, values))


def _pearson(t: np.ndarray, r: np.ndarray) -> tuple[float, bool]:
    """Pearson correlation with a degenerate flag instead of NaN."""
    tc = t - t.mean()
    rc = r - r.mean()
    stt = float(tc @ tc)
    srr = float(rc @ rc)
    if stt <= 0.0 or srr <= 0.0:
        return 0.0, True
    value = float((tc @ rc) / np.sqrt(stt * srr))
    if not np.isfinite(value):
        return 0.0, True
    return float(np.clip(value, -1.0, 1.0)), False


def cpcc(
    t_values: dict[tuple[str, str], float],
    rho_values: dict[tuple[str, str], float],
) -> float:
    """Pearson correlation between two per-pair distance maps.

    Both maps must cover the same pairs (at least two).  Zero variance in
    either list makes the correlation undefined; the value is then 0 rather
    than NaN so downstream losses stay finite.
    """
    if set(t_values) != set(rho_values):
        raise ValueError("the two maps must cover identical pairs")
    keys = sorted(t_values)
    if len(keys) < 2:
        raise ValueError("need at least two pairs")
    t = np.asarray([t_values[k] for k in keys], dtype=float)
    r = np.asarray([rho_values[k] for k in keys], dtype=float)
    value, _ = _pearson(t, r)
    return value


@dataclasses.dataclass(frozen=True)
class PairDistance:
    """One class pair's tree distance and feature distance."""

    u: str
    v: str
    t: float
    rho: float


@dataclasses.dataclass(frozen=True)
class CpccResult:
    """Correlation value with the per-pair table and optional gradients."""

    value: float
    degenerate: bool
    pairs: tuple[PairDistance, ...]
    backend: str
    gradients: dict[str, np.ndarray] | None = None


def evaluate_cpcc(
    batch: ClassBatch,
    tree: LabelTree,
    backend: str,
    params: BackendParams | None = None,
    with_gradients: bool = False,
) -> CpccResult:
    """Correlate the label-tree metric with a backend's class distances.

    A single class pair (or any constant distance list) has no variance;
    the result is then flagged degenerate with value 0.
    """
    params = params or BackendParams()
    metric = tree_metric(tree)
    missing = [label for label in batch.labels if label not in metric.index]
    if missing:
        raise ValueError(f"classes missing from the label tree: {missing}")
    rho = pairwise_rho(batch, backend, tree=tree, params=params)
    keys = sorted(rho)
    t = np.asarray([metric.distance(u, v) for u, v in keys])
    r = np.asarray([rho[k] for k in keys])
    value, degenerate = _pearson(t, r)
    gradients = None
    if with_gradients:
        gradients = _assemble_gradients(batch, tree, backend, params, keys, t, r)
    pairs = tuple(
        PairDistance(u=u, v=v, t=float(tv), rho=float(rv))
        for (u, v), tv, rv in zip(keys, t, r)
    )
    return CpccResult(
        value=value, degenerate=degenerate, pairs=pairs, backend=backend,
        gradients=gradients,
    )


def cpcc_regularized_loss(
    batch: ClassBatch,
    tree: LabelTree,
    backend: str,
    lam: float,
    ce_loss: float,
    params: BackendParams | None = None,
) -> float:
    """Training objective ``ce_loss - lam * cpcc``.

    Positive ``lam`` rewards feature geometry that follows the hierarchy
    (the correlation enters negated, so maximizing it lowers the loss).
    """
    result = evaluate_cpcc(batch, tree, backend, params=params)
    return float(ce_loss) + float(lam) * (-result.value)


# ---------------------------------------------------------------------------
# Subgradients
# ---------------------------------------------------------------------------

def _pair_grad(
    batch: ClassBatch,
    u: str,
    v: str,
    backend: str,
    aug: AugmentedTree | None,
    params: BackendParams,
) -> tuple[float, np.ndarray, np.ndarray]:
    """One pair's distance and its (plan-held-constant) feature gradients."""
    zu = batch.features[u]
    zv = batch.features[v]
    gu = np.zeros_like(zu)
    gv = np.zeros_like(zv)
    mu = batch.measure(u)
    mv = batch.measure(v)

    if backend == "l2":
        delta = mu.mean() - mv.mean()
        rho = float(np.linalg.norm(delta))
        if rho > _COINCIDENT_TOL:
            direction = delta / rho
            gu += np.outer(mu.weights, direction)
            gv -= np.outer(mv.weights, direction)
        return rho, gu, gv

    if backend == "swd":
        p = params.num_projections
        rho_parts = []
        for index in range(p):
            direction = _unit_direction(zu.shape[1], params.seed, index)
            proj_u = zu @ direction
            proj_v = zv @ direction
            value, plan = emd_1d_general(
                WeightedPointSet(proj_u, mu.weights),
                WeightedPointSet(proj_v, mv.weights),
            )
            rho_parts.append(value)
            signs = np.sign(proj_u[plan.rows] - proj_v[plan.cols])
            scaled = plan.mass * signs / p
            np.add.at(gu, plan.rows, np.outer(scaled, direction))
            np.add.at(gv, plan.cols, -np.outer(scaled, direction))
        return math.fsum(rho_parts) / p, gu, gv

    if backend == "emd":
        rho, plan = emd_exact(mu, mv)
    elif backend == "fastft":
        plan = _fastft_plan(aug, u, v, params.cache)
        rho = _plan_cost(plan, zu, zv)
    elif backend == "flowtree":
        rho, plan = flowtree(mu, mv, seed=params.seed)
    elif backend == "sinkhorn":
        result = sinkhorn(
            mu, mv, epsilon=params.epsilon, max_iters=params.max_iters, tol=params.tol
        )
        rho, plan = result.value, result.plan
    else:
        raise ValueError(f"backend {backend!r} has no subgradient")

    diffs = zu[plan.rows] - zv[plan.cols]
    norms = np.sqrt((diffs * diffs).sum(axis=1))
    keep = norms > _COINCIDENT_TOL  # coincident pairs contribute zero
    scaled = np.zeros_like(norms)
    scaled[keep] = plan.mass[keep] / norms[keep]
    contrib = diffs * scaled[:, None]
    np.add.at(gu, plan.rows, contrib)
    np.add.at(gv, plan.cols, -contrib)
    return rho, gu, gv


def _assemble_gradients(
    batch: ClassBatch,
    tree: LabelTree,
    backend: str,
    params: BackendParams,
    keys: list[tuple[str, str]],
    t: np.ndarray,
    r: np.ndarray,
) -> dict[str, np.ndarray]:
    if backend not in GRADIENT_BACKENDS:
        raise ValueError(
            f"backend {backend!r} has no subgradient; choose from {GRADIENT_BACKENDS}"
        )
    aug = _augmented_for(batch, tree) if backend == "fastft" else None
    grads = {label: np.zeros_like(batch.features[label]) for label in batch.labels}
    tc = t - t.mean()
    rc = r - r.mean()
    stt = float(tc @ tc)
    srr = float(rc @ rc)
    if stt <= 0.0 or srr <= 0.0:
        return grads  # flat correlation: zero subgradient
    str_ = float(tc @ rc)
    # d pearson / d rho_q, by the quotient rule through the centered sums.
    dr = tc / np.sqrt(stt * srr) - str_ * rc / (np.sqrt(stt) * srr ** 1.5)
    # Centering makes each rho_q enter through (rho_q - mean), whose
    # Jacobian rows sum to zero; the formula above already accounts for it.
    for weight_q, (u, v) in zip(dr, keys):
        _, gu, gv = _pair_grad(batch, u, v, backend, aug, params)
        grads[u] = grads[u] + weight_q * gu
        grads[v] = grads[v] + weight_q * gv
    return grads


def emd_cpcc_subgradient(
    batch: ClassBatch,
    tree: LabelTree,
    backend: str,
    params: BackendParams | None = None,
) -> dict[str, np.ndarray]:
    """Per-class gradient matrices of the correlation w.r.t. the features.

    Transport plans (and flow weights) are held constant; on the plan's
    support each pair (i, j) contributes mass times the unit direction
    between the two points, with coincident points contributing zero.
    """
    params = params or BackendParams()
    result = evaluate_cpcc(batch, tree, backend, params=params, with_gradients=True)
    assert result.gradients is not None
    return result.gradients


@dataclasses.dataclass(frozen=True)
class GradCheckResult:
    """Analytic-vs-numeric gradient comparison."""

    backend: str
    max_rel_error: float
    per_class: dict[str, float]
    step: float

    def passed(self, tol: float) -> bool:
        return self.max_rel_error <= tol


def gradient_check(
    batch: ClassBatch,
    tree: LabelTree,
    backend: str,
    params: BackendParams | None = None,
    step: float = 1e-5,
) -> GradCheckResult:
    """Compare analytic subgradients against central finite differences.

    Perturbs every feature coordinate by ``step`` both ways, re-evaluating
    the full correlation with the stored weights kept fixed.  Meaningful at
    generic points where the optimal plans are locally unique.
    """
    params = params or BackendParams()
    analytic = emd_cpcc_subgradient(batch, tree, backend, params=params)

    def value_at(features: dict[str, np.ndarray]) -> float:
        probe = ClassBatch(features=features, weights=dict(batch.weights))
        return evaluate_cpcc(probe, tree, backend, params=params).value

    per_class: dict[str, float] = {}
    for label in batch.labels:
        z = batch.features[label]
        numeric = np.zeros_like(z)
        for i in range(z.shape[0]):
            for k in range(z.shape[1]):
                plus = {lab: f.copy() for lab, f in batch.features.items()}
                minus = {lab: f.copy() for lab, f in batch.features.items()}
                plus[label][i, k] += step
                minus[label][i, k] -= step
                numeric[i, k] = (value_at(plus) - value_at(minus)) / (2.0 * step)
        denom = max(float(np.linalg.norm(numeric)), 1e-12)
        per_class[label] = float(np.linalg.norm(analytic[label] - numeric)) / denom
    worst = max(per_class.values())
    return GradCheckResult(
        backend=backend, max_rel_error=worst, per_class=per_class, step=step
    )
