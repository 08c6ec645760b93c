"""Matplotlib renderings written alongside the delimited report outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .metrics import DISPLAY_NAMES, BenchmarkTable, MetricsReport
from .models import KINDS


def render_curve(report: MetricsReport, path, title="Forecast curve of sales volume"):
    """Actual (blue) vs predicted (red) sales volume over quarters."""
    quarters = [p[0] for p in report.pairs]
    actual = [p[1] for p in report.pairs]
    predicted = [p[2] for p in report.pairs]
    fig, ax = plt.subplots(figsize=(9, 4.5))
    ax.plot(quarters, actual, color="tab:blue", marker="o", label="actual")
    ax.plot(quarters, predicted, color="tab:red", marker="s", label="predicted")
    ax.set_xlabel("quarter")
    ax.set_ylabel("sales volume")
    ax.set_title(title)
    ax.legend()
    ax.grid(True, alpha=0.3)
    if len(quarters) > 12:
        for i, tick in enumerate(ax.get_xticklabels()):
            tick.set_visible(i % 4 == 0)
    plt.setp(ax.get_xticklabels(), rotation=45, ha="right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_benchmark(table: BenchmarkTable, path):
    """Bar chart of median MSE/RMSE per model kind."""
    labels = [DISPLAY_NAMES[k] for k in KINDS]
    mses = [table.medians[k][0] for k in KINDS]
    rmses = [table.medians[k][1] for k in KINDS]
    x = range(len(labels))
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar([i - 0.2 for i in x], mses, width=0.4, label="MSE", color="tab:blue")
    ax.bar([i + 0.2 for i in x], rmses, width=0.4, label="RMSE", color="tab:orange")
    ax.set_xticks(list(x))
    ax.set_xticklabels(labels)
    ax.set_ylabel("median error on test set")
    ax.set_title("Model comparison")
    ax.legend()
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_history(history, path):
    """Training and validation MSE per epoch."""
    train_mse = [e[0] for e in history.epochs]
    val_mse = [e[1] for e in history.epochs]
    fig, ax = plt.subplots(figsize=(7, 4))
    epochs = range(1, len(train_mse) + 1)
    ax.plot(epochs, train_mse, color="tab:blue", label="train MSE")
    if any(v == v for v in val_mse):  # skip if all NaN
        ax.plot(epochs, val_mse, color="tab:red", label="validation MSE")
    ax.set_xlabel("epoch")
    ax.set_ylabel("MSE (normalized units)")
    ax.set_yscale("log")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
