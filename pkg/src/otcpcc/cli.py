"""Command-line interface.

Subcommands: ``dist`` (one distance between two point files), ``cpcc``
(tree/feature correlation over a labeled dataset), ``bench time`` and
``bench error`` (synthetic studies written to CSV with companion figures),
and ``gradcheck`` (analytic-versus-numeric gradient comparison).  All
numeric output uses 12 significant digits; any error exits nonzero.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .bench import (
    DEFAULT_BUDGET_SECONDS,
    ERROR_DIMENSION,
    ERROR_SIZES,
    METHODS,
    TIMING_DIMENSION,
    TIMING_SIZES,
    bench_error,
    bench_timing,
    write_records_csv,
)
from .cpcc import (
    BACKENDS,
    GRADIENT_BACKENDS,
    BackendParams,
    ClassBatch,
    evaluate_cpcc,
    gradient_check,
)
from .figures import plot_error, plot_timing
from .measures import (
    FlowPlan,
    WeightedPointSet,
    load_points_csv,
    load_weights_file,
    uniform_weights,
)
from .ot_approx import fast_flowtree, flowtree, quadtree_twd, sinkhorn, swd
from .ot_exact import emd_exact, l2_centroid_distance
from .trees import augment_tree, load_label_tree, parse_label_tree

GRADCHECK_TOL = 1e-3


def _fmt(value: float) -> str:
    return f"{float(value):.12g}"


def _load_side(points_path: str, weights_path: str | None) -> WeightedPointSet:
    _, points = load_points_csv(points_path)
    if weights_path is None:
        weights = uniform_weights(points.shape[0])
    else:
        weights = load_weights_file(weights_path, points.shape[0])
    return WeightedPointSet(points, weights)


def _write_plan_csv(plan: FlowPlan, path: str) -> None:
    with Path(path).open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["i", "j", "mass"])
        for i, j, mass in plan.triplets():
            writer.writerow([i, j, _fmt(mass)])


def _cmd_dist(args: argparse.Namespace) -> int:
    method = args.method
    tree_given = any(v is not None for v in (args.tree, args.class_a, args.class_b))
    if method == "fastft":
        if not (args.tree and args.class_a and args.class_b):
            raise ValueError("fastft requires --tree, --class-a, and --class-b")
    elif tree_given:
        raise ValueError("--tree/--class-a/--class-b apply to fastft only")
    if args.epsilon is not None and method != "sinkhorn":
        raise ValueError("--epsilon applies to sinkhorn only")
    if args.projections is not None and method != "swd":
        raise ValueError("--projections applies to swd only")

    a = _load_side(args.a, args.weights_a)
    b = _load_side(args.b, args.weights_b)
    plan: FlowPlan | None = None
    if method == "l2":
        value = l2_centroid_distance(a, b)
    elif method == "emd":
        value, plan = emd_exact(a, b)
    elif method == "sinkhorn":
        epsilon = 10.0 if args.epsilon is None else args.epsilon
        result = sinkhorn(a, b, epsilon=epsilon)
        value, plan = result.value, result.plan
    elif method == "swd":
        projections = 10 if args.projections is None else args.projections
        value = swd(a, b, num_projections=projections, seed=args.seed)
    elif method == "twd":
        value = quadtree_twd(a, b, seed=args.seed)
    elif method == "flowtree":
        value, plan = flowtree(a, b, seed=args.seed)
    else:
        tree = load_label_tree(args.tree)
        aug = augment_tree(
            tree, {args.class_a: a.weights, args.class_b: b.weights}
        )
        value, plan = fast_flowtree(
            aug, args.class_a, args.class_b, a.points, b.points
        )

    if args.emit_plan:
        if plan is None:
            raise ValueError(f"method {method} does not produce a transport plan")
        _write_plan_csv(plan, args.emit_plan)
    print(_fmt(value))
    return 0


def _cmd_cpcc(args: argparse.Namespace) -> int:
    labels, points = load_points_csv(args.data)
    features: dict[str, np.ndarray] = {}
    for name in np.unique(labels):
        features[str(name)] = points[labels == name]
    batch = ClassBatch.from_features(features, scheme=args.flow_weights)
    tree = load_label_tree(args.tree)
    params = BackendParams(
        epsilon=args.epsilon if args.epsilon is not None else 10.0,
        num_projections=args.projections if args.projections is not None else 10,
        seed=args.seed,
    )
    want_grad = args.grad is not None
    result = evaluate_cpcc(
        batch, tree, args.backend, params=params, with_gradients=want_grad
    )
    print(_fmt(result.value))
    if result.degenerate:
        print("degenerate: zero variance across pairs", file=sys.stderr)

    table_rows = [
        (pair.u, pair.v, _fmt(pair.t), _fmt(pair.rho)) for pair in result.pairs
    ]
    if args.pairs_out:
        with Path(args.pairs_out).open("w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["u", "v", "t", "rho"])
            writer.writerows(table_rows)
    else:
        print("u,v,t,rho")
        for row in table_rows:
            print(",".join(str(x) for x in row))

    if want_grad:
        out_dir = Path(args.grad)
        out_dir.mkdir(parents=True, exist_ok=True)
        for name, grad in result.gradients.items():
            with (out_dir / f"grad_{name}.csv").open("w", newline="") as handle:
                writer = csv.writer(handle)
                for grad_row in np.atleast_2d(grad):
                    writer.writerow([_fmt(g) for g in grad_row])
    return 0


def _parse_int_list(text: str) -> list[int]:
    values = [int(part) for part in text.split(",") if part.strip() != ""]
    if not values:
        raise ValueError(f"empty integer list: {text!r}")
    return values


def _parse_methods(text: str) -> list[str]:
    methods = [part.strip() for part in text.split(",") if part.strip()]
    if not methods:
        raise ValueError("empty method list")
    for method in methods:
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    return methods


def _cmd_bench_time(args: argparse.Namespace) -> int:
    records = bench_timing(
        _parse_methods(args.methods),
        sizes=_parse_int_list(args.sizes),
        repeats=args.repeats,
        seed=args.seed,
        d=args.d,
        budget=args.budget,
    )
    metadata = {
        "command": "bench time",
        "methods": args.methods,
        "sizes": args.sizes,
        "repeats": args.repeats,
        "seed": args.seed,
        "d": args.d,
        "budget": args.budget,
    }
    out = write_records_csv(records, args.out, metadata=metadata)
    print(f"wrote {out}")
    if not args.no_plot:
        figure = plot_timing(records, Path(args.out).with_suffix(".png"))
        print(f"wrote {figure}")
    return 0


def _cmd_bench_error(args: argparse.Namespace) -> int:
    records = bench_error(
        _parse_methods(args.methods),
        sizes=_parse_int_list(args.sizes),
        seeds=_parse_int_list(args.seeds),
        scenario=args.scenario,
        d=args.d,
        budget=args.budget,
    )
    metadata = {
        "command": "bench error",
        "scenario": args.scenario,
        "methods": args.methods,
        "sizes": args.sizes,
        "seeds": args.seeds,
        "d": args.d,
        "budget": args.budget,
    }
    out = write_records_csv(records, args.out, metadata=metadata)
    print(f"wrote {out}")
    if not args.no_plot:
        figure = plot_error(records, Path(args.out).with_suffix(".png"))
        print(f"wrote {figure}")
    return 0


_GRADCHECK_TREE = (
    '{"name": "root", "children": ['
    '{"name": "coarse_ab", "children": ['
    '{"name": "leaf_a", "label": "0"}, {"name": "leaf_b", "label": "1"}]}, '
    '{"name": "coarse_c", "children": [{"name": "leaf_c", "label": "2"}]}]}'
)


def _cmd_gradcheck(args: argparse.Namespace) -> int:
    if args.backend not in GRADIENT_BACKENDS:
        raise ValueError(
            f"backend {args.backend!r} has no gradient; "
            f"choose from {GRADIENT_BACKENDS}"
        )
    rng = np.random.default_rng(args.seed)
    features = {
        str(c): c + rng.standard_normal((args.n, args.d)) for c in range(3)
    }
    batch = ClassBatch.from_features(features)
    tree = parse_label_tree(_GRADCHECK_TREE)
    params = BackendParams(seed=args.seed)
    check = gradient_check(
        batch, tree, args.backend, params=params, step=args.step
    )
    passed = check.passed(GRADCHECK_TOL)
    print(f"max relative error {_fmt(check.max_rel_error)}")
    print("pass" if passed else "fail")
    return 0 if passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="otcpcc",
        description="Optimal-transport distances, tree correlation, benchmarks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    dist = sub.add_parser("dist", help="distance between two point files")
    dist.add_argument("--method", required=True, choices=METHODS)
    dist.add_argument("--a", required=True, help="first point CSV")
    dist.add_argument("--b", required=True, help="second point CSV")
    dist.add_argument("--weights-a", default=None, help="weight file for --a")
    dist.add_argument("--weights-b", default=None, help="weight file for --b")
    dist.add_argument("--tree", default=None, help="label tree JSON (fastft)")
    dist.add_argument("--class-a", default=None, help="tree class of --a (fastft)")
    dist.add_argument("--class-b", default=None, help="tree class of --b (fastft)")
    dist.add_argument("--epsilon", type=float, default=None)
    dist.add_argument("--projections", type=int, default=None)
    dist.add_argument("--seed", type=int, default=0)
    dist.add_argument("--emit-plan", default=None, metavar="PLAN_CSV")
    dist.set_defaults(func=_cmd_dist)

    cpcc_p = sub.add_parser("cpcc", help="tree/feature distance correlation")
    cpcc_p.add_argument("--data", required=True, help="labeled point CSV")
    cpcc_p.add_argument("--tree", required=True, help="label tree JSON")
    cpcc_p.add_argument("--backend", required=True, choices=BACKENDS)
    cpcc_p.add_argument(
        "--flow-weights", default="uniform", choices=("uniform", "dist", "inv")
    )
    cpcc_p.add_argument("--epsilon", type=float, default=None)
    cpcc_p.add_argument("--projections", type=int, default=None)
    cpcc_p.add_argument("--seed", type=int, default=0)
    cpcc_p.add_argument("--grad", default=None, metavar="OUT_DIR")
    cpcc_p.add_argument("--pairs-out", default=None, metavar="PAIRS_CSV")
    cpcc_p.set_defaults(func=_cmd_cpcc)

    bench = sub.add_parser("bench", help="synthetic benchmark studies")
    bench_sub = bench.add_subparsers(dest="bench_command", required=True)

    btime = bench_sub.add_parser("time", help="wall-clock scaling study")
    btime.add_argument("--methods", required=True, help="comma-separated")
    btime.add_argument("--sizes", default=",".join(map(str, TIMING_SIZES)))
    btime.add_argument("--repeats", type=int, default=10)
    btime.add_argument("--seed", type=int, default=0)
    btime.add_argument("--d", type=int, default=TIMING_DIMENSION)
    btime.add_argument("--budget", type=float, default=DEFAULT_BUDGET_SECONDS)
    btime.add_argument("--out", required=True, help="output CSV path")
    btime.add_argument("--no-plot", action="store_true")
    btime.set_defaults(func=_cmd_bench_time)

    berror = bench_sub.add_parser("error", help="approximation error study")
    berror.add_argument(
        "--scenario", required=True, choices=("gaussian", "mixture")
    )
    berror.add_argument("--methods", required=True, help="comma-separated")
    berror.add_argument("--sizes", default=",".join(map(str, ERROR_SIZES)))
    berror.add_argument("--seeds", default=",".join(map(str, range(20))))
    berror.add_argument("--d", type=int, default=ERROR_DIMENSION)
    berror.add_argument("--budget", type=float, default=DEFAULT_BUDGET_SECONDS)
    berror.add_argument("--out", required=True, help="output CSV path")
    berror.add_argument("--no-plot", action="store_true")
    berror.set_defaults(func=_cmd_bench_error)

    grad = sub.add_parser("gradcheck", help="analytic vs numeric gradients")
    grad.add_argument("--backend", required=True)
    grad.add_argument("--n", type=int, default=6, help="samples per class")
    grad.add_argument("--d", type=int, default=4, help="feature dimension")
    grad.add_argument("--seed", type=int, default=0)
    grad.add_argument("--step", type=float, default=1e-5)
    grad.set_defaults(func=_cmd_gradcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # single choke point so every failure exits nonzero
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
