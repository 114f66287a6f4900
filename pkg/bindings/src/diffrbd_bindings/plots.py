"""Plot helpers for the engine's benchmark tables and loss curves."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

BENCHMARK_COLUMNS = ("scene", "jacobian", "analytic", "central", "speedup",
                     "ridders", "speedup")


def _read_csv(path):
    lines = [l for l in Path(path).read_text(encoding="utf-8")
             .strip().splitlines() if l]
    if not lines:
        raise ValueError(f"{path}: empty table")
    header = lines[0].split(",")
    rows = [line.split(",") for line in lines[1:]]
    return header, rows


def plot_benchmark(table_path, out_path) -> str:
    """Grouped bar chart of analytic-vs-central speedups per block."""
    header, rows = _read_csv(table_path)
    if tuple(header) != BENCHMARK_COLUMNS:
        raise ValueError(
            f"benchmark table must have columns {','.join(BENCHMARK_COLUMNS)}"
            f", got {','.join(header)}")
    if not rows:
        raise ValueError("benchmark table has no rows")
    scenes = sorted({r[0] for r in rows}, key=[r[0] for r in rows].index)
    labels = sorted({r[1] for r in rows}, key=[r[1] for r in rows].index)
    fig, ax = plt.subplots(figsize=(1.8 + 1.2 * len(labels), 4.0))
    width = 0.8 / max(1, len(scenes))
    x = np.arange(len(labels))
    for k, scene in enumerate(scenes):
        speedups = []
        for label in labels:
            match = [r for r in rows if r[0] == scene and r[1] == label]
            speedups.append(float(match[0][4]) if match else 0.0)
        ax.bar(x + k * width, speedups, width, label=scene)
    ax.set_yscale("log")
    ax.set_xticks(x + width * (len(scenes) - 1) / 2)
    ax.set_xticklabels(labels, rotation=20)
    ax.set_ylabel("speedup over central differences")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return str(out_path)


def plot_loss(curve_paths, out_path, labels=None) -> str:
    """Overlay line plot of one or more optimization loss curves."""
    curve_paths = list(curve_paths)
    if not curve_paths:
        raise ValueError("no loss curves given")
    fig, ax = plt.subplots(figsize=(6, 4))
    for i, path in enumerate(curve_paths):
        header, rows = _read_csv(path)
        if header[:2] != ["iteration", "loss"]:
            raise ValueError(f"{path}: expected columns iteration,loss")
        if not rows:
            raise ValueError(f"{path}: no data rows")
        iters = [int(r[0]) for r in rows]
        loss = [float(r[1]) for r in rows]
        label = labels[i] if labels else Path(path).stem
        ax.plot(iters, loss, label=label)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return str(out_path)
