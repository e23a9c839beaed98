"""Figure rendering for experiment reports.

Non-interactive by construction: everything is drawn on the Agg backend and
written straight to files next to the delimited output.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import METRIC_NAMES
from .train import FitResult


def render_summary_figure(summary: dict[str, dict[str, tuple[float, float]]],
                          path: str | Path) -> Path:
    """Grouped bars, one group per metric and one bar per variant, with the
    across-fold standard deviation as error bars."""
    path = Path(path)
    variants = list(summary.keys())
    x = np.arange(len(METRIC_NAMES))
    width = 0.8 / max(len(variants), 1)

    fig, ax = plt.subplots(figsize=(9, 4.5))
    for i, variant in enumerate(variants):
        means = [summary[variant][m][0] for m in METRIC_NAMES]
        stds = [summary[variant][m][1] for m in METRIC_NAMES]
        ax.bar(x + (i - (len(variants) - 1) / 2) * width, means, width,
               yerr=stds, capsize=2, label=variant)
    ax.set_xticks(x)
    ax.set_xticklabels([m.capitalize() if m != "auc" else "AUC" for m in METRIC_NAMES])
    ax.set_ylabel("Score (mean over folds)")
    ax.set_ylim(0.0, 1.05)
    ax.axhline(0.5, color="grey", linewidth=0.8, linestyle=":")
    ax.legend(fontsize=8, ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_history_figure(result: FitResult, path: str | Path, title: str = "") -> Path:
    """Training and validation loss curves with the best epoch marked."""
    path = Path(path)
    epochs = [row.epoch for row in result.history]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, [row.train_loss for row in result.history], label="train")
    ax.plot(epochs, [row.val_loss for row in result.history], label="validation")
    if result.best_epoch:
        ax.axvline(result.best_epoch, color="grey", linewidth=0.8, linestyle="--",
                   label=f"best epoch {result.best_epoch}")
    ax.set_xlabel("Epoch")
    ax.set_ylabel("Loss")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
