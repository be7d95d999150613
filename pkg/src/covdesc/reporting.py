"""Matplotlib rendering of evaluation reports and cross-validation tables."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import EvalReport
from .svm import GridSearchResult


def render_confusion_matrix(report: EvalReport, path, *, title: str | None = None) -> Path:
    """Row-normalized confusion heatmap with raw counts annotated."""
    path = Path(path)
    k = len(report.class_names)
    counts = report.confusion.astype(np.float64)
    row_sums = counts.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        shares = np.where(row_sums > 0, counts / row_sums, 0.0)

    fig, ax = plt.subplots(figsize=(1.0 + 0.7 * k, 1.0 + 0.7 * k))
    image = ax.imshow(shares, cmap="Blues", vmin=0.0, vmax=1.0)
    ax.set_xticks(range(k), report.class_names, rotation=45, ha="right")
    ax.set_yticks(range(k), report.class_names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("truth")
    ax.set_title(title or f"{report.unit} confusion ({report.overall_accuracy:.2f}%)")
    for i in range(k):
        for j in range(k):
            color = "white" if shares[i, j] > 0.5 else "black"
            ax.text(j, i, str(int(report.confusion[i, j])),
                    ha="center", va="center", color=color, fontsize=8)
    fig.colorbar(image, ax=ax, fraction=0.046, pad=0.04)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def render_cv_table(result: GridSearchResult, path, *, title: str | None = None) -> Path:
    """Heatmap of mean CV accuracy over the (gamma, cost) grid."""
    path = Path(path)
    gammas = sorted({cell.gamma for cell in result.table}, reverse=True)
    costs = sorted({cell.cost for cell in result.table})
    grid = np.full((len(gammas), len(costs)), np.nan)
    for cell in result.table:
        grid[gammas.index(cell.gamma), costs.index(cell.cost)] = cell.mean_accuracy

    fig, ax = plt.subplots(figsize=(1.5 + 0.8 * len(costs), 1.2 + 0.55 * len(gammas)))
    masked = np.ma.masked_invalid(grid)
    image = ax.imshow(masked, cmap="viridis", vmin=0.0, vmax=1.0, aspect="auto")
    ax.set_xticks(range(len(costs)), [f"{c:g}" for c in costs], rotation=45, ha="right")
    ax.set_yticks(range(len(gammas)), [f"{g:g}" for g in gammas])
    ax.set_xlabel("cost")
    ax.set_ylabel("gamma")
    ax.set_title(title or "cross-validated accuracy")
    best = (gammas.index(result.best_gamma), costs.index(result.best_cost))
    for i in range(len(gammas)):
        for j in range(len(costs)):
            if np.isnan(grid[i, j]):
                text = "fail"
            else:
                text = f"{100 * grid[i, j]:.0f}"
            weight = "bold" if (i, j) == best else "normal"
            ax.text(j, i, text, ha="center", va="center", fontsize=7,
                    color="white", fontweight=weight)
    fig.colorbar(image, ax=ax, fraction=0.046, pad=0.04)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
