"""Optional figure emission for evaluation reports (SVG, batch only).

Figures mirror the report files: per-quantity metric heatmaps colored by
the directionalized Z-scores, one radar per category with the three
quantity scores, and a ranked horizontal bar chart of the final scores.
matplotlib is imported lazily so the core package does not depend on it.
"""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from .metrics import METRIC_NAMES, QUANTITIES, MetricReport
from .scoring import CATEGORIES, ZScoreTable

_SVG_META = {"Date": None}  # keep output files reproducible


def _pyplot():
    import matplotlib

    matplotlib.use("Agg", force=False)
    matplotlib.rcParams["svg.hashsalt"] = "cfbench"  # deterministic element ids
    import matplotlib.pyplot as plt

    return plt


def plot_metric_heatmaps(reports: Sequence[MetricReport], table: ZScoreTable, out_dir) -> list:
    """One heatmap per quantity: rows = models, columns = metrics.

    Cell color is the directionalized Z-score (blue = better), the
    annotation is the raw metric value.
    """
    plt = _pyplot()
    out_dir = Path(out_dir)
    raw = {(r.model, q, m): v for r in reports for (q, m), v in r.values.items()}
    models = [r.model for r in reports]
    paths = []
    for quantity in QUANTITIES:
        z = np.array(
            [
                [table.metric_z.get((model, quantity, metric), np.nan) for metric in METRIC_NAMES]
                for model in models
            ]
        )
        fig, ax = plt.subplots(figsize=(1.1 * len(METRIC_NAMES), 0.6 * len(models) + 1.2))
        image = ax.imshow(z, cmap="coolwarm", vmin=-2.5, vmax=2.5, aspect="auto")
        ax.set_xticks(range(len(METRIC_NAMES)), METRIC_NAMES, rotation=45, ha="right", fontsize=8)
        ax.set_yticks(range(len(models)), models, fontsize=8)
        for i, model in enumerate(models):
            for j, metric in enumerate(METRIC_NAMES):
                value = raw.get((model, quantity, metric))
                if value is not None and np.isfinite(value):
                    ax.text(j, i, f"{value:.3g}", ha="center", va="center", fontsize=6)
        ax.set_title(f"{quantity} metrics (color: cross-model Z-score, lower is better)")
        fig.colorbar(image, ax=ax, shrink=0.8)
        fig.tight_layout()
        path = out_dir / f"heatmap_{quantity}.svg"
        fig.savefig(path, metadata=_SVG_META)
        plt.close(fig)
        paths.append(path)
    return paths


def plot_category_radar(table: ZScoreTable, out_dir) -> Path:
    """One polar panel per category; spokes are the three quantities."""
    plt = _pyplot()
    out_dir = Path(out_dir)
    angles = np.linspace(0.0, 2.0 * np.pi, len(QUANTITIES), endpoint=False)
    closed = np.concatenate([angles, angles[:1]])
    fig, axes = plt.subplots(
        1, len(CATEGORIES), figsize=(4.2 * len(CATEGORIES), 4.2), subplot_kw={"polar": True}
    )
    for ax, category in zip(np.atleast_1d(axes), CATEGORIES):
        for model in table.models:
            scores = [
                table.category_quantity_scores.get((model, q, category), np.nan)
                for q in QUANTITIES
            ]
            values = np.concatenate([scores, scores[:1]])
            ax.plot(closed, values, linewidth=1.2, label=model)
            ax.fill(closed, values, alpha=0.08)
        ax.set_xticks(angles, QUANTITIES, fontsize=8)
        ax.set_title(f"{category} score", fontsize=10)
    handles, labels = np.atleast_1d(axes)[0].get_legend_handles_labels()
    fig.legend(handles, labels, loc="lower center", ncol=min(len(table.models), 5), fontsize=8)
    fig.tight_layout(rect=(0.0, 0.08, 1.0, 1.0))
    path = out_dir / "radar.svg"
    fig.savefig(path, metadata=_SVG_META)
    plt.close(fig)
    return path


def plot_final_ranking(table: ZScoreTable, out_dir) -> Path:
    """Horizontal bars of final scores; bars left of zero beat the cohort mean."""
    plt = _pyplot()
    out_dir = Path(out_dir)
    entries = list(table.ranking)[::-1]  # best at the top
    names = [e.model for e in entries]
    scores = [e.score for e in entries]
    fig, ax = plt.subplots(figsize=(6.0, 0.5 * len(entries) + 1.2))
    colors = ["#2c7fb8" if s <= 0 else "#d95f0e" for s in scores]
    ax.barh(range(len(entries)), scores, color=colors)
    ax.axvline(0.0, color="black", linewidth=0.8)
    ax.set_yticks(range(len(entries)), names, fontsize=9)
    ax.set_xlabel("aggregate Z-score (negative = better than average)")
    fig.tight_layout()
    path = out_dir / "ranking.svg"
    fig.savefig(path, metadata=_SVG_META)
    plt.close(fig)
    return path


def emit_all(reports: Sequence[MetricReport], table: ZScoreTable, out_dir) -> list:
    paths = plot_metric_heatmaps(reports, table, out_dir)
    paths.append(plot_category_radar(table, out_dir))
    paths.append(plot_final_ranking(table, out_dir))
    return paths
