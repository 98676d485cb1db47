"""Render benchmark figures to image files next to the CSV output."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .bench import BenchRecord, mean_seconds_by_size

__all__ = ["plot_timing", "plot_error"]

_STYLE = {
    "l2": dict(color="tab:gray", marker="o"),
    "emd": dict(color="tab:red", marker="s"),
    "sinkhorn": dict(color="tab:purple", marker="v"),
    "swd": dict(color="tab:orange", marker="^"),
    "twd": dict(color="tab:green", marker="D"),
    "flowtree": dict(color="tab:blue", marker="x"),
    "fastft": dict(color="tab:cyan", marker="*"),
}


def _style(method: str) -> dict:
    return _STYLE.get(method, dict(marker="."))


def plot_timing(records: list[BenchRecord], out_path: str | Path) -> Path:
    """Log-log mean wall-clock versus size, one line per method."""
    out_path = Path(out_path)
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    methods = sorted({r.method for r in records if not r.timed_out})
    for method in methods:
        sizes, means = mean_seconds_by_size(records, method)
        ax.plot(sizes, means, label=method, **_style(method))
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("points per side")
    ax.set_ylabel("seconds per distance")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def plot_error(records: list[BenchRecord], out_path: str | Path) -> Path:
    """Mean absolute error versus size, one line per method."""
    out_path = Path(out_path)
    by_method: dict[str, dict[int, list[float]]] = {}
    for record in records:
        if record.timed_out or record.abs_error is None:
            continue
        by_method.setdefault(record.method, {}).setdefault(
            record.n, []
        ).append(record.abs_error)
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    for method in sorted(by_method):
        per_n = by_method[method]
        sizes = np.asarray(sorted(per_n), dtype=float)
        means = np.asarray([np.mean(per_n[int(n)]) for n in sizes])
        ax.plot(sizes, means, label=method, **_style(method))
    ax.set_xscale("log", base=2)
    ax.set_xlabel("points per side")
    ax.set_ylabel("mean absolute error")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path
