"""Optimal-transport distances over labeled data, tree/feature correlation,
analytic subgradients, and a synthetic benchmark harness.

Highlights: an exact Earth Mover's Distance solver, four approximations
(entropic scaling, sliced projections, quadtree flows, and a linear-time
greedy matcher on augmented label trees), the Pearson correlation between
label-tree distances and feature-space class distances, and gradients of
that correlation for every differentiable backend.
"""

from .bench import (
    BenchRecord,
    SyntheticSpec,
    bench_error,
    bench_timing,
    generate_synthetic,
    loglog_slope,
    read_records_csv,
    write_records_csv,
)
from .cpcc import (
    BACKENDS,
    GRADIENT_BACKENDS,
    BackendParams,
    ClassBatch,
    CpccResult,
    GradCheckResult,
    PairDistance,
    PlanCache,
    cpcc,
    cpcc_regularized_loss,
    emd_cpcc_subgradient,
    evaluate_cpcc,
    flow_weights,
    gradient_check,
    pairwise_rho,
)
from .measures import (
    CostMatrix,
    FlowPlan,
    PlanCheck,
    WeightedPointSet,
    cost_matrix,
    load_points_csv,
    load_weights_file,
    normalize_weights,
    transport_cost,
    uniform_weights,
    validate_plan,
)
from .ot_approx import (
    SinkhornResult,
    bottom_up_tree_matching,
    fast_flowtree,
    flowtree,
    quadtree_twd,
    sinkhorn,
    swd,
    twd_closed_form,
)
from .ot_exact import (
    emd_1d,
    emd_1d_general,
    emd_exact,
    gaussian_w2_oracle,
    greedy_flow_matching,
    l2_centroid_distance,
)
from .trees import (
    AugmentedTree,
    LabelTree,
    QuadTree,
    TreeMetric,
    augment_tree,
    build_quadtree,
    load_label_tree,
    parse_label_tree,
    serialize_label_tree,
    tree_metric,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # measures
    "WeightedPointSet",
    "CostMatrix",
    "FlowPlan",
    "PlanCheck",
    "cost_matrix",
    "transport_cost",
    "validate_plan",
    "normalize_weights",
    "uniform_weights",
    "load_points_csv",
    "load_weights_file",
    # trees
    "LabelTree",
    "TreeMetric",
    "AugmentedTree",
    "QuadTree",
    "parse_label_tree",
    "serialize_label_tree",
    "load_label_tree",
    "tree_metric",
    "augment_tree",
    "build_quadtree",
    # exact solvers
    "emd_exact",
    "emd_1d",
    "emd_1d_general",
    "greedy_flow_matching",
    "l2_centroid_distance",
    "gaussian_w2_oracle",
    # approximate solvers
    "SinkhornResult",
    "sinkhorn",
    "swd",
    "twd_closed_form",
    "quadtree_twd",
    "bottom_up_tree_matching",
    "flowtree",
    "fast_flowtree",
    # correlation
    "BACKENDS",
    "GRADIENT_BACKENDS",
    "BackendParams",
    "ClassBatch",
    "PlanCache",
    "PairDistance",
    "CpccResult",
    "GradCheckResult",
    "flow_weights",
    "pairwise_rho",
    "cpcc",
    "evaluate_cpcc",
    "cpcc_regularized_loss",
    "emd_cpcc_subgradient",
    "gradient_check",
    # benchmarks
    "SyntheticSpec",
    "BenchRecord",
    "generate_synthetic",
    "bench_timing",
    "bench_error",
    "write_records_csv",
    "read_records_csv",
    "loglog_slope",
]
