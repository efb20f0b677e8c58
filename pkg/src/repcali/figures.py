"""Matplotlib figures for the CLI report paths.

Rendered PNGs sit alongside the delimited tables: training curves for
`train`, a bar chart for `compare`, and before/after projection panels
for `project`. Uses the Agg backend so headless runs work.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _plt():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def render_training_curves(log_rows: list[list], out_png: Path) -> Path:
    plt = _plt()
    train_steps = [r[0] for r in log_rows if r[1] == "train"]
    train_loss = [r[2] for r in log_rows if r[1] == "train"]
    dev_steps = [r[0] for r in log_rows if r[1] == "dev"]
    dev_acc = [r[3] for r in log_rows if r[1] == "dev"]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
    ax1.plot(train_steps, train_loss, lw=0.8, color="#4477aa")
    ax1.set_xlabel("step")
    ax1.set_ylabel("training loss")
    if dev_steps:
        ax2.plot(dev_steps, dev_acc, marker="o", ms=3, color="#ee6677")
    ax2.set_xlabel("step")
    ax2.set_ylabel("dev token accuracy")
    ax2.set_ylim(-0.02, 1.02)
    for ax in (ax1, ax2):
        ax.spines["top"].set_visible(False)
        ax.spines["right"].set_visible(False)
    fig.tight_layout()
    out_png = Path(out_png)
    out_png.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_png, dpi=130)
    plt.close(fig)
    return out_png


def render_method_comparison(rows, out_png: Path) -> Path:
    plt = _plt()
    methods = [r.method for r in rows]
    acc = [r.token_acc for r in rows]
    pct = [r.pct_of_base for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
    ax1.bar(methods, acc, color="#4477aa")
    ax1.set_ylabel("test token accuracy")
    ax1.set_ylim(0, 1.0)
    ax2.bar(methods, pct, color="#ccbb44")
    ax2.set_ylabel("trainable % of model")
    for ax in (ax1, ax2):
        ax.tick_params(axis="x", rotation=45)
        ax.spines["top"].set_visible(False)
        ax.spines["right"].set_visible(False)
    fig.tight_layout()
    out_png = Path(out_png)
    out_png.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_png, dpi=130)
    plt.close(fig)
    return out_png


def render_projection_panels(panels: list[tuple[str, np.ndarray, np.ndarray]],
                             out_png: Path) -> Path:
    """Scatter panels: list of (title, coords [N,2], labels [N])."""
    plt = _plt()
    n = len(panels)
    fig, axes = plt.subplots(1, n, figsize=(4.2 * n, 3.8), squeeze=False)
    for ax, (title, coords, labels) in zip(axes[0], panels):
        for lab in sorted(set(labels.tolist())):
            sel = labels == lab
            ax.scatter(coords[sel, 0], coords[sel, 1], s=9, alpha=0.75, label=str(lab))
        ax.set_title(title, fontsize=10)
        ax.set_xticks([])
        ax.set_yticks([])
        for side in ("top", "right", "bottom", "left"):
            ax.spines[side].set_visible(False)
    axes[0][-1].legend(fontsize=7, title="length", loc="best", frameon=False)
    fig.tight_layout()
    out_png = Path(out_png)
    out_png.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_png, dpi=130)
    plt.close(fig)
    return out_png
