"""Label hierarchies, tree metrics, sample-augmented trees, and quadtrees.

A :class:`LabelTree` is a weighted class hierarchy parsed from JSON; its
:func:`tree_metric` is the leaf-to-leaf shortest-path distance.  An
:class:`AugmentedTree` extends each class leaf with per-sample leaves over
unit-weight edges, which makes the tree distance between samples of two
distinct classes a constant.  A :class:`QuadTree` is a randomly shifted
spatial subdivision of a point cloud whose per-level edge weights halve,
used to approximate Euclidean transport with tree transport.
"""

from __future__ import annotations

import dataclasses
import json
import math
from pathlib import Path

import numpy as np

from .measures import WeightedPointSet, normalize_weights

__all__ = [
    "EXTENDED_EDGE_WEIGHT",
    "TreeNode",
    "LabelTree",
    "TreeMetric",
    "AugmentedTree",
    "QuadNode",
    "QuadTree",
    "parse_label_tree",
    "serialize_label_tree",
    "load_label_tree",
    "tree_metric",
    "augment_tree",
    "build_quadtree",
]

# Weight of every edge joining a sample leaf to its class leaf.
EXTENDED_EDGE_WEIGHT = 1.0

_SCHEMA_KEYS = {"name", "weight", "label", "children"}


class TreeNode:
    """One node of a label tree; ``weight`` is the edge to its parent."""

    __slots__ = ("name", "weight", "label", "children", "parent", "depth", "wdepth", "path")

    def __init__(self, name: str, weight: float | None, label: str | None):
        self.name = name
        self.weight = weight  # None at the root
        self.label = label
        self.children: list[TreeNode] = []
        self.parent: TreeNode | None = None
        self.depth = 0
        self.wdepth = 0.0  # sum of edge weights from the root
        self.path = name

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclasses.dataclass(frozen=True)
class LabelTree:
    """A validated class hierarchy: single root, labeled leaves."""

    root: TreeNode
    nodes: tuple[TreeNode, ...]
    leaves: dict[str, TreeNode]

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(self.leaves)


def parse_label_tree(document: str | dict) -> LabelTree:
    """Parse and validate a label-tree document.

    Accepts a JSON string or an already-decoded mapping.  Schema per node:
    ``{"name": str, "weight": number (edge to parent, omitted at the root,
    default 1), "label": str (leaves only), "children": [...]}``.  Unknown
    keys, duplicate labels, unlabeled leaves, labeled internal nodes, and
    nonpositive weights are rejected with the offending node's path.
    """
    if isinstance(document, str):
        document = json.loads(document)
    if not isinstance(document, dict):
        raise ValueError("label tree document must be a JSON object")

    nodes: list[TreeNode] = []
    leaves: dict[str, TreeNode] = {}

    def build(obj: dict, parent: TreeNode | None, path: str) -> TreeNode:
        if not isinstance(obj, dict):
            raise ValueError(f"{path}: node must be an object")
        unknown = set(obj) - _SCHEMA_KEYS
        if unknown:
            raise ValueError(f"{path}: unknown keys {sorted(unknown)}")
        name = obj.get("name")
        if not isinstance(name, str) or not name:
            raise ValueError(f"{path}: missing or empty 'name'")
        path = name if parent is None else f"{path}/{name}"
        weight = obj.get("weight")
        if parent is None:
            if weight is not None:
                raise ValueError(f"{path}: root node must not carry a weight")
        else:
            if weight is None:
                weight = 1.0
            if not isinstance(weight, (int, float)) or isinstance(weight, bool):
                raise ValueError(f"{path}: weight must be a number")
            weight = float(weight)
            if not math.isfinite(weight) or weight <= 0:
                raise ValueError(f"{path}: weight must be finite and > 0")
        label = obj.get("label")
        if label is not None and not isinstance(label, str):
            raise ValueError(f"{path}: label must be a string")
        node = TreeNode(name, weight if parent is not None else None, label)
        node.parent = parent
        node.path = path
        if parent is not None:
            node.depth = parent.depth + 1
            node.wdepth = parent.wdepth + node.weight
        nodes.append(node)
        children = obj.get("children", [])
        if not isinstance(children, list):
            raise ValueError(f"{path}: children must be a list")
        for child_obj in children:
            node.children.append(build(child_obj, node, path))
        if node.is_leaf:
            if label is None:
                raise ValueError(f"{path}: leaf is missing a class label")
            if label in leaves:
                raise ValueError(f"{path}: duplicate class label {label!r}")
            leaves[label] = node
        elif label is not None:
            raise ValueError(f"{path}: only leaves may carry a class label")
        return node

    root = build(document, None, "")
    return LabelTree(root=root, nodes=tuple(nodes), leaves=leaves)


def serialize_label_tree(tree: LabelTree) -> dict:
    """Inverse of :func:`parse_label_tree`; default weights are omitted."""

    def emit(node: TreeNode) -> dict:
        obj: dict = {"name": node.name}
        if node.parent is not None and node.weight != 1.0:
            obj["weight"] = node.weight
        if node.label is not None:
            obj["label"] = node.label
        if node.children:
            obj["children"] = [emit(child) for child in node.children]
        return obj

    return emit(tree.root)


def _lca(u: TreeNode, v: TreeNode) -> TreeNode:
    # Parent-pointer walking; trees are small so no sparse tables needed.
    while u.depth > v.depth:
        u = u.parent
    while v.depth > u.depth:
        v = v.parent
    while u is not v:
        u = u.parent
        v = v.parent
    return u


@dataclasses.dataclass(frozen=True)
class TreeMetric:
    """Dense leaf-to-leaf shortest-path distances with a label index."""

    matrix: np.ndarray
    labels: tuple[str, ...]
    index: dict[str, int]

    def distance(self, u: str, v: str) -> float:
        return float(self.matrix[self.index[u], self.index[v]])


def tree_metric(tree: LabelTree) -> TreeMetric:
    """Shortest-path distance between every pair of leaves.

    Distances are sums of edge weights through the lowest common ancestor.
    """
    labels = tree.labels
    index = {label: k for k, label in enumerate(labels)}
    k = len(labels)
    matrix = np.zeros((k, k))
    leaf_nodes = [tree.leaves[label] for label in labels]
    for i in range(k):
        for j in range(i + 1, k):
            anc = _lca(leaf_nodes[i], leaf_nodes[j])
            dist = leaf_nodes[i].wdepth + leaf_nodes[j].wdepth - 2.0 * anc.wdepth
            matrix[i, j] = matrix[j, i] = dist
    matrix.setflags(write=False)
    return TreeMetric(matrix=matrix, labels=labels, index=index)


@dataclasses.dataclass(frozen=True)
class AugmentedTree:
    """A label tree whose class leaves carry per-sample leaves.

    Every sample hangs below its class leaf over an edge of weight
    ``EXTENDED_EDGE_WEIGHT``; per-class sample weights form a simplex.  The
    tree distance between any sample of class ``u`` and any sample of a
    different class ``v`` is the constant ``t(u, v) + 2``.
    """

    base: LabelTree
    sample_weights: dict[str, np.ndarray]
    metric: TreeMetric

    def classes(self) -> tuple[str, ...]:
        return tuple(self.sample_weights)

    def weights_for(self, label: str) -> np.ndarray:
        try:
            return self.sample_weights[label]
        except KeyError:
            raise KeyError(f"class {label!r} has no samples in this tree") from None

    def cross_class_sample_distance(self, u: str, v: str) -> float:
        """Tree distance between samples of two distinct classes."""
        if u == v:
            raise ValueError("classes must differ")
        return self.metric.distance(u, v) + 2.0 * EXTENDED_EDGE_WEIGHT


def augment_tree(
    tree: LabelTree, samples_per_class: dict[str, np.ndarray]
) -> AugmentedTree:
    """Attach per-sample weight vectors to class leaves.

    Args:
        tree: the class hierarchy.
        samples_per_class: map from class label to that class's sample
            weight vector (a simplex; small drift is renormalized).

    Raises:
        KeyError: a map key is not a leaf of ``tree``.
        ValueError: a weight vector is not on the simplex.
    """
    weights: dict[str, np.ndarray] = {}
    for label, w in samples_per_class.items():
        if label not in tree.leaves:
            raise KeyError(f"class {label!r} is not a leaf of the tree")
        w = normalize_weights(np.asarray(w, dtype=float), what=f"weights of {label!r}")
        w.setflags(write=False)
        weights[label] = w
    return AugmentedTree(base=tree, sample_weights=weights, metric=tree_metric(tree))


# ---------------------------------------------------------------------------
# Quadtree
# ---------------------------------------------------------------------------

# Leaf cells stop subdividing once their diameter falls below this fraction
# of the (bounding-box estimate of the) data diameter.
CELL_DIAMETER_FRACTION = 1e-3


class QuadNode:
    """One quadtree node: a spatial cell, or a single point below a cell."""

    __slots__ = ("depth", "origin", "children", "point_id")

    def __init__(self, depth: int, origin: np.ndarray | None, point_id: int | None = None):
        self.depth = depth
        self.origin = origin  # None for point leaves
        self.children: list[QuadNode] = []
        self.point_id = point_id

    @property
    def is_point_leaf(self) -> bool:
        return self.point_id is not None


@dataclasses.dataclass(frozen=True)
class QuadTree:
    """Randomly shifted 2^d-ary subdivision with halving edge weights.

    Only occupied children are materialized.  Every input point terminates
    in its own point leaf below the smallest cell that still contains it;
    the edge into any depth-``l`` node weighs ``root_side * 2**-l * sqrt(d)``
    (the diameter of a level-``l`` cell), so edge weights halve per level and
    the path distance between two points always dominates their Euclidean
    distance.
    """

    root: QuadNode
    shift: np.ndarray
    origin: np.ndarray
    root_side: float
    depth_cap: int
    n_points: int
    d: int
    point_leaves: tuple[QuadNode, ...]

    def edge_weight(self, depth: int) -> float:
        """Weight of the edge entering a node at ``depth`` (>= 1)."""
        if depth < 1:
            raise ValueError("the root has no incoming edge")
        return self.root_side * 2.0 ** (-depth) * math.sqrt(self.d)

    def leaf_cell_of(self, point_id: int) -> QuadNode:
        """Deepest cell containing the point (parent of its point leaf)."""
        return self._parents[self.point_leaves[point_id]]

    @property
    def cell_depth(self) -> int:
        """Depth of the deepest cell (point leaves hang one level below)."""
        return max(leaf.depth - 1 for leaf in self.point_leaves)

    def __post_init__(self) -> None:
        parents: dict[QuadNode, QuadNode] = {}
        stack = [self.root]
        while stack:
            node = stack.pop()
            for child in node.children:
                parents[child] = node
                stack.append(child)
        object.__setattr__(self, "_parents", parents)

    def point_distance(self, i: int, j: int) -> float:
        """Tree path distance between two input points."""
        u: QuadNode = self.point_leaves[i]
        v: QuadNode = self.point_leaves[j]
        dist = 0.0
        while u.depth > v.depth:
            dist += self.edge_weight(u.depth)
            u = self._parents[u]
        while v.depth > u.depth:
            dist += self.edge_weight(v.depth)
            v = self._parents[v]
        while u is not v:
            dist += self.edge_weight(u.depth) + self.edge_weight(v.depth)
            u = self._parents[u]
            v = self._parents[v]
        return dist


def build_quadtree(points: WeightedPointSet, seed: int) -> QuadTree:
    """Build a randomly shifted quadtree over a point cloud.

    The root cell has side twice the widest bounding-box extent and is
    shifted by a uniform random offset, so all points land strictly inside.
    Cells split until they hold a single point or reach the depth cap, which
    is chosen so leaf cell diameters drop below
    ``CELL_DIAMETER_FRACTION`` of the data diameter estimate.  Deterministic
    for a fixed seed.
    """
    pts = points.points
    n, d = pts.shape
    lo = pts.min(axis=0)
    width = float((pts.max(axis=0) - lo).max())
    if width <= 0.0:
        width = 1.0  # degenerate cloud: any positive cell size works
    rng = np.random.default_rng(seed)
    shift = rng.uniform(0.0, width, size=d)
    origin = lo - shift
    root_side = 2.0 * width
    depth_cap = math.ceil(math.log2(1.0 / CELL_DIAMETER_FRACTION)) + 1

    point_leaves: list[QuadNode | None] = [None] * n

    def subdivide(node: QuadNode, ids: np.ndarray, side: float) -> None:
        if ids.size == 1 or node.depth >= depth_cap:
            for pid in ids.tolist():
                leaf = QuadNode(node.depth + 1, None, point_id=pid)
                node.children.append(leaf)
                point_leaves[pid] = leaf
            return
        half = side / 2.0
        centers = node.origin + half
        bits = pts[ids] >= centers  # (len(ids), d) child selector
        codes = np.packbits(bits, axis=1)
        keys = [row.tobytes() for row in codes]
        order: dict[bytes, list[int]] = {}
        for pos, key in enumerate(keys):
            order.setdefault(key, []).append(pos)
        for key in sorted(order):
            positions = order[key]
            sub_ids = ids[positions]
            child_origin = node.origin + half * bits[positions[0]]
            child = QuadNode(node.depth + 1, child_origin)
            node.children.append(child)
            subdivide(child, sub_ids, half)

    root = QuadNode(0, origin)
    subdivide(root, np.arange(n), root_side)
    return QuadTree(
        root=root,
        shift=shift,
        origin=origin,
        root_side=root_side,
        depth_cap=depth_cap,
        n_points=n,
        d=d,
        point_leaves=tuple(point_leaves),  # type: ignore[arg-type]
    )


def load_label_tree(path: str | Path) -> LabelTree:
    """Parse a label tree from a JSON file."""
    return parse_label_tree(Path(path).read_text())
