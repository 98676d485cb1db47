"""Core discrete-measure types shared by every transport routine.

A :class:`WeightedPointSet` is a finite measure: ``n`` feature vectors in
``d`` dimensions carrying simplex weights.  A :class:`CostMatrix` holds the
pairwise Euclidean ground distances between two such sets, and a
:class:`FlowPlan` is a sparse transport plan whose marginals must match the
two weight vectors.  All types are immutable after construction and safe to
share across threads.
"""

from __future__ import annotations

import csv
import dataclasses
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

__all__ = [
    "MARGINAL_TOL",
    "RECOMPUTE_TOL",
    "WEIGHT_DRIFT_TOL",
    "WEIGHT_SUM_TOL",
    "ZERO_MASS",
    "WeightedPointSet",
    "CostMatrix",
    "FlowPlan",
    "PlanCheck",
    "cost_matrix",
    "transport_cost",
    "validate_plan",
    "uniform_weights",
    "normalize_weights",
    "load_points_csv",
    "load_weights_file",
]

# Marginal feasibility tolerance for transport plans (per row / column).
MARGINAL_TOL = 1e-8
# Tolerance when re-deriving a cost matrix entry from its point rows.
RECOMPUTE_TOL = 1e-12
# Weight vectors whose sum drifts from 1 by at most this are renormalized;
# larger deviations are rejected as malformed input.
WEIGHT_DRIFT_TOL = 1e-6
# After construction, weights must sum to 1 within this.
WEIGHT_SUM_TOL = 1e-9
# Residual mass at or below this is rounding noise, not mass; greedy matching
# snaps it to zero so rounding residue cannot stall the pointer walk.
ZERO_MASS = 1e-15


def _freeze(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def uniform_weights(n: int) -> np.ndarray:
    """Uniform simplex vector of length ``n``."""
    if n < 1:
        raise ValueError("need at least one point")
    return np.full(n, 1.0 / n)


def normalize_weights(weights: np.ndarray, *, what: str = "weights") -> np.ndarray:
    """Validate a simplex vector, renormalizing small parser drift.

    Sums within ``WEIGHT_DRIFT_TOL`` of 1 are accepted (and renormalized when
    they miss 1 by more than ``WEIGHT_SUM_TOL``); anything further off is an
    error rather than a silent rescale.
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size < 1:
        raise ValueError(f"{what} must be a non-empty 1-d vector")
    if not np.all(np.isfinite(w)):
        raise ValueError(f"{what} contain non-finite entries")
    if np.any(w < 0):
        raise ValueError(f"{what} contain negative entries")
    total = float(w.sum())
    if abs(total - 1.0) > WEIGHT_DRIFT_TOL:
        raise ValueError(
            f"{what} sum to {total!r}, more than {WEIGHT_DRIFT_TOL} away from 1"
        )
    if abs(total - 1.0) > WEIGHT_SUM_TOL:
        w = w / total
    return w


@dataclasses.dataclass(frozen=True)
class WeightedPointSet:
    """A discrete measure: points (n rows, d columns) with simplex weights."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise ValueError("points must be an n x d matrix with n, d >= 1")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points contain non-finite coordinates")
        w = normalize_weights(self.weights)
        if w.size != pts.shape[0]:
            raise ValueError(
                f"{w.size} weights for {pts.shape[0]} points"
            )
        object.__setattr__(self, "points", _freeze(pts.copy()))
        object.__setattr__(self, "weights", _freeze(w.copy()))

    @classmethod
    def from_points(
        cls, points: np.ndarray, weights: np.ndarray | None = None
    ) -> "WeightedPointSet":
        """Build a measure, defaulting to uniform weights."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if weights is None:
            weights = uniform_weights(pts.shape[0])
        return cls(pts, np.asarray(weights, dtype=float))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def mean(self) -> np.ndarray:
        """Weighted mean (the measure's barycenter)."""
        return self.weights @ self.points


@dataclasses.dataclass(frozen=True)
class CostMatrix:
    """Pairwise ground distances between two point sets (always Euclidean)."""

    entries: np.ndarray
    ground_metric: str = "euclidean"

    def __post_init__(self) -> None:
        ent = np.asarray(self.entries, dtype=float)
        if ent.ndim != 2:
            raise ValueError("cost matrix must be 2-d")
        if not np.all(np.isfinite(ent)) or np.any(ent < 0):
            raise ValueError("cost matrix entries must be finite and nonnegative")
        object.__setattr__(self, "entries", _freeze(ent.copy()))

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape


def cost_matrix(a: WeightedPointSet, b: WeightedPointSet) -> CostMatrix:
    """Euclidean distance matrix between the points of two measures.

    Args:
        a: left measure (m points).
        b: right measure (n points).

    Returns:
        CostMatrix with entries[i][j] = ||a.points[i] - b.points[j]||.
    """
    if a.d != b.d:
        raise ValueError(f"dimension mismatch: {a.d} vs {b.d}")
    return CostMatrix(cdist(a.points, b.points))


@dataclasses.dataclass(frozen=True)
class FlowPlan:
    """Sparse transport plan: strictly positive masses on (row, col) pairs."""

    rows: np.ndarray
    cols: np.ndarray
    mass: np.ndarray
    shape: tuple[int, int]

    def __post_init__(self) -> None:
        rows = np.asarray(self.rows, dtype=np.int64)
        cols = np.asarray(self.cols, dtype=np.int64)
        mass = np.asarray(self.mass, dtype=float)
        m, n = self.shape
        if not (rows.ndim == cols.ndim == mass.ndim == 1):
            raise ValueError("plan triplet arrays must be 1-d")
        if not (rows.size == cols.size == mass.size):
            raise ValueError("plan triplet arrays must share a length")
        if m < 1 or n < 1:
            raise ValueError("plan shape must be at least 1 x 1")
        if rows.size:
            if rows.min() < 0 or rows.max() >= m or cols.min() < 0 or cols.max() >= n:
                raise ValueError("plan indices out of bounds for shape")
            if np.any(~np.isfinite(mass)) or np.any(mass <= 0):
                raise ValueError("plan masses must be finite and strictly positive")
            flat = rows * n + cols
            if np.unique(flat).size != flat.size:
                raise ValueError("duplicate (row, col) pair in plan")
        object.__setattr__(self, "rows", _freeze(rows.copy()))
        object.__setattr__(self, "cols", _freeze(cols.copy()))
        object.__setattr__(self, "mass", _freeze(mass.copy()))
        object.__setattr__(self, "shape", (int(m), int(n)))

    @classmethod
    def from_dense(cls, dense: np.ndarray, *, keep_above: float = 0.0) -> "FlowPlan":
        """Triplet view of a dense plan, dropping entries <= ``keep_above``."""
        dense = np.asarray(dense, dtype=float)
        rows, cols = np.nonzero(dense > keep_above)
        return cls(rows, cols, dense[rows, cols], dense.shape)

    @property
    def nnz(self) -> int:
        return int(self.mass.size)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.rows, self.cols] = self.mass
        return out

    def transpose(self) -> "FlowPlan":
        return FlowPlan(self.cols, self.rows, self.mass, (self.shape[1], self.shape[0]))

    def row_sums(self) -> np.ndarray:
        return np.bincount(self.rows, weights=self.mass, minlength=self.shape[0])

    def col_sums(self) -> np.ndarray:
        return np.bincount(self.cols, weights=self.mass, minlength=self.shape[1])

    def triplets(self) -> list[tuple[int, int, float]]:
        return [
            (int(i), int(j), float(v))
            for i, j, v in zip(self.rows, self.cols, self.mass)
        ]


def transport_cost(plan: FlowPlan, costs: CostMatrix | np.ndarray) -> float:
    """Total cost ``sum(mass * distance)`` of a plan under a cost matrix."""
    entries = costs.entries if isinstance(costs, CostMatrix) else np.asarray(costs, float)
    if entries.shape != plan.shape:
        raise ValueError(f"plan shape {plan.shape} vs cost shape {entries.shape}")
    if plan.nnz == 0:
        return 0.0
    return float(np.dot(plan.mass, entries[plan.rows, plan.cols]))


@dataclasses.dataclass(frozen=True)
class PlanCheck:
    """Outcome of a marginal feasibility check, with worst offenders."""

    ok: bool
    max_row_error: float
    worst_row: int
    max_col_error: float
    worst_col: int
    tol: float

    def __bool__(self) -> bool:
        return self.ok

    def describe(self) -> str:
        state = "feasible" if self.ok else "infeasible"
        return (
            f"{state} at tol={self.tol:g}: worst row {self.worst_row} "
            f"(err {self.max_row_error:.3e}), worst col {self.worst_col} "
            f"(err {self.max_col_error:.3e})"
        )


def validate_plan(
    plan: FlowPlan,
    a: np.ndarray,
    b: np.ndarray,
    tol: float = MARGINAL_TOL,
) -> PlanCheck:
    """Check that a plan's marginals match the weight vectors within ``tol``.

    Returns a :class:`PlanCheck` that is truthy iff every row and column sum
    lands within ``tol`` of its target; the check names the worst-violating
    row and column either way.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size != plan.shape[0] or b.size != plan.shape[1]:
        raise ValueError("weight vector lengths do not match plan shape")
    row_err = np.abs(plan.row_sums() - a)
    col_err = np.abs(plan.col_sums() - b)
    worst_row = int(row_err.argmax())
    worst_col = int(col_err.argmax())
    max_row = float(row_err[worst_row])
    max_col = float(col_err[worst_col])
    return PlanCheck(
        ok=max_row <= tol and max_col <= tol,
        max_row_error=max_row,
        worst_row=worst_row,
        max_col_error=max_col,
        worst_col=worst_col,
        tol=tol,
    )


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

def load_points_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read a labeled point file: header ``label,f0,...,f{d-1}``.

    Returns:
        (labels, points): integer label per row and the n x d feature matrix.
    """
    path = Path(path)
    with path.open(newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if not header or header[0].strip() != "label":
            raise ValueError(f"{path}: expected header starting with 'label'")
        expected = ["label"] + [f"f{k}" for k in range(len(header) - 1)]
        if [h.strip() for h in header] != expected:
            raise ValueError(f"{path}: malformed header {header!r}")
        labels: list[int] = []
        rows: list[list[float]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields")
            labels.append(int(row[0]))
            rows.append([float(v) for v in row[1:]])
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return np.asarray(labels, dtype=np.int64), np.asarray(rows, dtype=float)


def load_weights_file(path: str | Path, n: int) -> np.ndarray:
    """Read a weight file (one real per line) and validate it as a simplex."""
    values = [
        float(line)
        for line in Path(path).read_text().splitlines()
        if line.strip()
    ]
    if len(values) != n:
        raise ValueError(f"{path}: {len(values)} weights for {n} points")
    return normalize_weights(np.asarray(values), what=f"weights in {path}")
