"""Figure rendering for the report path.

Figures are written to files next to the delimited exports; nothing
here is needed to compute any metric.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def roc_figure(curves: dict, path: str) -> None:
    """Overlay ROC curves on linear and log-log axes.

    The log-log panel shows the low-FPR regime, which is where attack
    comparisons are actually decided.
    """
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    fig, (ax_lin, ax_log) = plt.subplots(1, 2, figsize=(11, 4.5))
    for name, curve in curves.items():
        label = f"{name} (AUC={curve.auc:.3f})"
        ax_lin.plot(curve.fpr, curve.tpr, lw=1.4, label=label)
        ax_log.plot(curve.fpr, curve.tpr, lw=1.4, label=label)
    ax_lin.plot([0, 1], [0, 1], ls="--", c="grey", lw=1)
    ax_lin.set_xlabel("false-positive rate")
    ax_lin.set_ylabel("true-positive rate")
    ax_lin.set_title("ROC")
    ax_lin.legend(fontsize=7, loc="lower right")

    floor = 1e-4
    ax_log.plot([floor, 1], [floor, 1], ls="--", c="grey", lw=1)
    ax_log.set_xscale("log")
    ax_log.set_yscale("log")
    ax_log.set_xlim(floor, 1)
    ax_log.set_ylim(floor, 1)
    ax_log.set_xlabel("false-positive rate")
    ax_log.set_ylabel("true-positive rate")
    ax_log.set_title("low-FPR regime")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def sweep_figure(rows, x_key: str, y_key: str, path: str,
                 group_key: str | None = None, logx: bool = False) -> None:
    """Line plot of an ablation sweep, one line per group value."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    fig, ax = plt.subplots(figsize=(5.5, 4))
    groups: dict = {}
    for row in rows:
        key = row[group_key] if group_key else ""
        groups.setdefault(key, []).append((row[x_key], row[y_key]))
    for key, pts in sorted(groups.items()):
        pts.sort()
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        ax.plot(xs, ys, marker="o", lw=1.4, label=str(key) if key != "" else None)
    if logx:
        ax.set_xscale("log")
    ax.set_xlabel(x_key.replace("_", " "))
    ax.set_ylabel(y_key.replace("_", " "))
    if group_key:
        ax.legend(title=group_key.replace("_", " "), fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def training_curve_figure(series: dict, path: str, ylabel: str = "loss") -> None:
    """Per-epoch training curves (e.g. contrastive loss per epoch)."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for name, values in series.items():
        ax.plot(range(1, len(values) + 1), values, lw=1.4, label=name)
    ax.set_xlabel("epoch")
    ax.set_ylabel(ylabel)
    if len(series) > 1:
        ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
