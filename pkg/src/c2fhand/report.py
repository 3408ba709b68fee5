"""Figures for training, evaluation and ablation reports (written to files)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

DELIM = "=" * 60


def block(title: str, body: str) -> str:
    """Delimited plain-text section, used for every CLI report."""
    return f"{DELIM}\n{title}\n{DELIM}\n{body.rstrip()}\n"


def plot_loss_curve(records, path, keys=("total", "mesh", "edge", "norm", "sil", "pose")) -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 4))
    x = [r.get("step", r.get("epoch", i)) for i, r in enumerate(records)]
    for k in keys:
        y = [r[k] for r in records if k in r]
        if len(y) == len(x):
            ax.plot(x, y, label=k, lw=1.2)
    ax.set_yscale("log")
    ax.set_xlabel("step" if records and "step" in records[0] else "epoch")
    ax.set_ylabel("loss")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_metrics(report, path) -> Path:
    path = Path(path)
    fig, (a, b) = plt.subplots(1, 2, figsize=(7, 3))
    a.bar(["PA-MPJPE", "PA-MPVPE"], [report.pa_mpjpe, report.pa_mpvpe], color=["#4c72b0", "#55a868"])
    a.set_ylabel("mm")
    b.bar(["F@5", "F@15"], [report.f5, report.f15], color=["#c44e52", "#8172b2"])
    b.set_ylim(0, 1)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_ablation(summary: dict, path, metric: str = "pa_mpvpe") -> Path:
    """Bar chart of per-variant mean and seed spread."""
    path = Path(path)
    names = list(summary)
    vals = [np.asarray(summary[n][metric]) for n in names]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(names, [v.mean() for v in vals], yerr=[v.std() for v in vals], capsize=4, color="#4c72b0")
    for i, v in enumerate(vals):
        ax.scatter(np.full(len(v), i), v, color="k", s=10, zorder=3)
    ax.set_ylabel(metric.replace("_", "-").upper() + " (mm)")
    plt.setp(ax.get_xticklabels(), rotation=15)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_mesh_levels(levels, faces_per_level, path) -> Path:
    """Side-by-side x/y scatter of each decoded level, coarse to fine."""
    path = Path(path)
    n = len(levels)
    fig, axes = plt.subplots(1, n, figsize=(2.5 * n, 2.8))
    for ax, V, F in zip(np.atleast_1d(axes), levels, faces_per_level):
        ax.triplot(V[:, 0], V[:, 1], F, lw=0.4, color="#333333")
        ax.set_title(f"{len(V)} vertices", fontsize=8)
        ax.set_aspect("equal")
        ax.invert_yaxis()
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
