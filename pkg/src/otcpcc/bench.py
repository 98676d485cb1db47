"""Synthetic benchmark harness: timing and approximation-error studies.

Instances are pairs of random point clouds (plain Gaussians with different
means, or two-component mixtures whose mixture means coincide so centroid
distances collapse).  Every (method, size, trial) triple owns an independent
random stream derived from stable integer entropy, so adding a method to a
run never perturbs another method's data and re-running with the same seeds
reproduces every value bit for bit.  Results go to CSV with the fixed header
``method,n,seed,seconds,value,abs_error``; run parameters land in a JSON
sidecar next to the CSV.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import time
import zlib
from pathlib import Path
from typing import Callable

import numpy as np

from .measures import WeightedPointSet
from .ot_approx import fast_flowtree, flowtree, quadtree_twd, sinkhorn, swd
from .ot_exact import emd_exact, l2_centroid_distance
from .trees import augment_tree, parse_label_tree

__all__ = [
    "METHODS",
    "TIMING_SIZES",
    "ERROR_SIZES",
    "SyntheticSpec",
    "BenchRecord",
    "generate_synthetic",
    "bench_timing",
    "bench_error",
    "write_records_csv",
    "read_records_csv",
    "loglog_slope",
]

METHODS = ("l2", "emd", "sinkhorn", "swd", "twd", "flowtree", "fastft")

# Default grids; override from the CLI for smaller or larger studies.
TIMING_SIZES = (128, 256, 512, 1024, 2048, 4096)
ERROR_SIZES = (50, 100, 200, 500)
TIMING_DIMENSION = 128
ERROR_DIMENSION = 2
DEFAULT_BUDGET_SECONDS = 60.0

CSV_HEADER = ("method", "n", "seed", "seconds", "value", "abs_error")


@dataclasses.dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic scenarios.

    ``gaussian``: isotropic normals whose per-coordinate means are
    ``mean_a`` and ``mean_b``.  ``mixture``: each side is an equal-weight
    two-component mixture; per-coordinate component means come from
    ``mixture_means_a`` / ``mixture_means_b`` (both average 2.5, so the two
    clouds share a barycenter while their shapes differ).
    """

    scenario: str = "gaussian"
    d: int = TIMING_DIMENSION
    std: float = 1.0
    mean_a: float = 1.0
    mean_b: float = 4.0
    mixture_means_a: tuple[float, float] = (0.0, 5.0)
    mixture_means_b: tuple[float, float] = (2.0, 3.0)

    def __post_init__(self) -> None:
        if self.scenario not in ("gaussian", "mixture"):
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.d < 1:
            raise ValueError("dimension must be at least 1")
        finite = [
            self.std, self.mean_a, self.mean_b,
            *self.mixture_means_a, *self.mixture_means_b,
        ]
        if not all(np.isfinite(finite)):
            raise ValueError("scenario parameters must be finite")
        if self.std < 0:
            raise ValueError("std must be nonnegative")


def generate_synthetic(
    spec: SyntheticSpec, n: int, seed
) -> tuple[WeightedPointSet, WeightedPointSet]:
    """Draw one instance: two uniform clouds of ``n`` points in ``spec.d``.

    ``seed`` may be an integer or a numpy SeedSequence.  Draw order is
    fixed (side a fully first), so outputs are bit-identical per seed.
    """
    if n < 1:
        raise ValueError("need at least one point per side")
    rng = np.random.default_rng(seed)
    d = spec.d
    if spec.scenario == "gaussian":
        pts_a = spec.mean_a + spec.std * rng.standard_normal((n, d))
        pts_b = spec.mean_b + spec.std * rng.standard_normal((n, d))
    else:
        means_a = np.asarray(spec.mixture_means_a)
        means_b = np.asarray(spec.mixture_means_b)
        comp_a = rng.integers(0, 2, size=n)
        pts_a = means_a[comp_a][:, None] + spec.std * rng.standard_normal((n, d))
        comp_b = rng.integers(0, 2, size=n)
        pts_b = means_b[comp_b][:, None] + spec.std * rng.standard_normal((n, d))
    return (
        WeightedPointSet.from_points(pts_a),
        WeightedPointSet.from_points(pts_b),
    )


@dataclasses.dataclass(frozen=True)
class BenchRecord:
    """One measured trial; ``abs_error`` is None when no oracle was run."""

    method: str
    n: int
    seed: int
    seconds: float
    value: float
    abs_error: float | None
    timed_out: bool = False


def _trial_stream(seed: int, method: str, n: int, trial: int) -> np.random.SeedSequence:
    """Independent entropy per (seed, method, n, trial).

    The method name enters through crc32, which is stable across runs and
    interpreters (unlike the builtin hash), so streams never depend on which
    other methods were requested.
    """
    return np.random.SeedSequence(
        [int(seed), zlib.crc32(method.encode("utf-8")), int(n), int(trial)]
    )


_TWO_CLASS_TREE = (
    '{"name": "root", "children": ['
    '{"name": "a", "label": "a"}, {"name": "b", "label": "b"}]}'
)


def _prepare_call(
    method: str, a: WeightedPointSet, b: WeightedPointSet, seed: int
) -> Callable[[], float]:
    """Bind a method to one instance; setup that is not part of the measured
    distance computation (the label tree for fastft) happens here."""
    if method == "l2":
        return lambda: l2_centroid_distance(a, b)
    if method == "emd":
        return lambda: emd_exact(a, b)[0]
    if method == "sinkhorn":
        return lambda: sinkhorn(a, b).value
    if method == "swd":
        return lambda: swd(a, b, seed=seed)
    if method == "twd":
        return lambda: quadtree_twd(a, b, seed=seed)
    if method == "flowtree":
        return lambda: flowtree(a, b, seed=seed)[0]
    if method == "fastft":
        tree = parse_label_tree(_TWO_CLASS_TREE)
        aug = augment_tree(tree, {"a": a.weights, "b": b.weights})
        return lambda: fast_flowtree(aug, "a", "b", a.points, b.points)[0]
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def bench_timing(
    methods: list[str] | tuple[str, ...],
    sizes: list[int] | tuple[int, ...] = TIMING_SIZES,
    repeats: int = 10,
    seed: int = 0,
    d: int = TIMING_DIMENSION,
    scenario: str = "gaussian",
    budget: float = DEFAULT_BUDGET_SECONDS,
) -> list[BenchRecord]:
    """Wall-clock one distance computation per (method, size, trial).

    Each trial draws a fresh instance from its own stream, runs one warm-up
    call at the same size, then times a single call on the monotonic clock.
    A trial exceeding ``budget`` seconds yields a record flagged timed-out
    (excluded from CSV output), and larger sizes are skipped for that
    method.  The ``seed`` column of a timing record is the trial index.
    """
    if not methods:
        raise ValueError("need at least one method")
    spec = SyntheticSpec(scenario=scenario, d=d)
    records: list[BenchRecord] = []
    for method in methods:
        over_budget = False
        for n in sorted(sizes):
            if over_budget:
                break
            # Warm-up on a spare stream so caches and allocators settle.
            warm_a, warm_b = generate_synthetic(
                spec, n, _trial_stream(seed, method, n, repeats)
            )
            _prepare_call(method, warm_a, warm_b, seed=repeats)()
            for trial in range(repeats):
                inst_a, inst_b = generate_synthetic(
                    spec, n, _trial_stream(seed, method, n, trial)
                )
                call = _prepare_call(method, inst_a, inst_b, seed=trial)
                start = time.perf_counter()
                value = call()
                elapsed = time.perf_counter() - start
                timed_out = elapsed > budget
                records.append(
                    BenchRecord(
                        method=method,
                        n=n,
                        seed=trial,
                        seconds=elapsed,
                        value=float(value),
                        abs_error=0.0 if method == "emd" else None,
                        timed_out=timed_out,
                    )
                )
                if timed_out:
                    over_budget = True
                    break
    return records


def bench_error(
    methods: list[str] | tuple[str, ...],
    sizes: list[int] | tuple[int, ...] = ERROR_SIZES,
    seeds: list[int] | tuple[int, ...] = tuple(range(20)),
    scenario: str = "gaussian",
    d: int = ERROR_DIMENSION,
    budget: float = DEFAULT_BUDGET_SECONDS,
) -> list[BenchRecord]:
    """Absolute error of each method against the exact distance.

    One instance per (method, size, seed); the centroid distance row
    (method ``l2``) is always included as the baseline.  If the exact
    solve itself exceeds ``budget`` seconds, that row is flagged (and
    excluded from CSV) and larger sizes are skipped entirely.
    """
    if not methods:
        raise ValueError("need at least one method")
    methods = list(methods)
    if "l2" not in methods:
        methods.append("l2")
    spec = SyntheticSpec(scenario=scenario, d=d)
    records: list[BenchRecord] = []
    for n in sorted(sizes):
        oracle_over_budget = False
        for method in methods:
            for master_seed in seeds:
                inst_a, inst_b = generate_synthetic(
                    spec, n, _trial_stream(master_seed, method, n, 0)
                )
                call = _prepare_call(method, inst_a, inst_b, seed=master_seed)
                start = time.perf_counter()
                value = float(call())
                elapsed = time.perf_counter() - start
                oracle_start = time.perf_counter()
                exact_value, _ = emd_exact(inst_a, inst_b)
                oracle_elapsed = time.perf_counter() - oracle_start
                timed_out = oracle_elapsed > budget
                records.append(
                    BenchRecord(
                        method=method,
                        n=n,
                        seed=master_seed,
                        seconds=elapsed,
                        value=value,
                        abs_error=abs(value - exact_value),
                        timed_out=timed_out,
                    )
                )
                if timed_out:
                    oracle_over_budget = True
                    break
            if oracle_over_budget:
                break
        if oracle_over_budget:
            break
    return records


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------

def write_records_csv(
    records: list[BenchRecord],
    path: str | Path,
    metadata: dict | None = None,
) -> Path:
    """Write records (skipping timed-out ones) with the fixed header.

    Floats are written in round-trip form, so identical runs produce
    identical value and error fields.  Run parameters go to a JSON sidecar
    ``<path>.meta.json`` to keep the CSV schema-stable.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(CSV_HEADER)
        for record in records:
            if record.timed_out:
                continue
            writer.writerow(
                [
                    record.method,
                    record.n,
                    record.seed,
                    repr(record.seconds),
                    repr(record.value),
                    "" if record.abs_error is None else repr(record.abs_error),
                ]
            )
    if metadata is not None:
        sidecar = path.with_name(path.name + ".meta.json")
        sidecar.write_text(json.dumps(metadata, indent=2, sort_keys=True) + "\n")
    return path


def read_records_csv(path: str | Path) -> list[BenchRecord]:
    """Read back a benchmark CSV written by :func:`write_records_csv`."""
    records: list[BenchRecord] = []
    with Path(path).open(newline="") as handle:
        reader = csv.reader(handle)
        header = tuple(next(reader))
        if header != CSV_HEADER:
            raise ValueError(f"unexpected header {header!r}")
        for row in reader:
            if not row:
                continue
            records.append(
                BenchRecord(
                    method=row[0],
                    n=int(row[1]),
                    seed=int(row[2]),
                    seconds=float(row[3]),
                    value=float(row[4]),
                    abs_error=None if row[5] == "" else float(row[5]),
                )
            )
    return records


def loglog_slope(sizes: np.ndarray, times: np.ndarray) -> float:
    """Least-squares slope of log(time) against log(size)."""
    sizes = np.asarray(sizes, dtype=float)
    times = np.asarray(times, dtype=float)
    if sizes.size < 2:
        raise ValueError("need at least two sizes to fit a slope")
    if np.any(sizes <= 0) or np.any(times <= 0):
        raise ValueError("sizes and times must be positive")
    slope, _ = np.polyfit(np.log(sizes), np.log(times), 1)
    return float(slope)


def mean_seconds_by_size(
    records: list[BenchRecord], method: str
) -> tuple[np.ndarray, np.ndarray]:
    """Mean wall-clock per size for one method, timed-out trials excluded."""
    by_n: dict[int, list[float]] = {}
    for record in records:
        if record.method == method and not record.timed_out:
            by_n.setdefault(record.n, []).append(record.seconds)
    if not by_n:
        raise ValueError(f"no usable records for method {method!r}")
    sizes = np.asarray(sorted(by_n), dtype=float)
    means = np.asarray([np.mean(by_n[int(n)]) for n in sizes])
    return sizes, means
