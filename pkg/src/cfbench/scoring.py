"""Multi-criteria Z-score ranking across a model roster.

Raw metric values are directionalized so lower is uniformly better, then
each (quantity, metric) column is standardized across the models. Category
scores are plain means of the member metrics' Z-scores; the final score
averages over quantities and categories with equal weights, and the
ascending sort is the ranking.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .dataio import _fmt
from .metrics import METRIC_NAMES, QUANTITIES, MetricReport

CATEGORY_MAP = {
    "mae": "error",
    "rmse": "error",
    "mse": "error",
    "fft_energy_rel": "stability",
    "theil_u": "stability",
    "theil_b": "stability",
    "theil_v": "stability",
    "theil_c": "stability",
    "cv_rel": "stability",
    "ks": "similarity",
    "emd": "similarity",
    "dtw": "similarity",
}
CATEGORIES = ("error", "stability", "similarity")


class ScoringError(Exception):
    pass


class RankedModel(NamedTuple):
    model: str
    score: float
    rank: int


@dataclass(frozen=True)
class MetricMatrix:
    """Raw (model x quantity x metric) values for a roster of >= 2 models."""

    models: tuple
    values: Mapping  # (model, quantity, metric) -> float, NaN for missing
    category_map: Mapping

    def __post_init__(self):
        if len(self.models) < 2:
            raise ScoringError(f"Z-scores need >= 2 models, got {len(self.models)}")
        for cat in CATEGORIES:
            if cat not in set(self.category_map.values()):
                raise ScoringError(f"category {cat!r} has no metrics")

    def column(self, quantity: str, metric: str) -> np.ndarray:
        return np.array(
            [self.values.get((m, quantity, metric), np.nan) for m in self.models], dtype=float
        )


@dataclass(frozen=True)
class ZScoreTable:
    models: tuple
    metric_z: Mapping  # (model, quantity, metric) -> z
    category_quantity_scores: Mapping  # (model, quantity, category) -> score
    category_scores: Mapping  # (model, category) -> score
    final_scores: Mapping  # model -> score
    ranking: tuple  # RankedModel, ascending score
    constant_columns: tuple  # (quantity, metric) columns with zero spread


def build_metric_matrix(reports: Sequence[MetricReport]) -> MetricMatrix:
    names = [r.model for r in reports]
    if len(set(names)) != len(names):
        raise ScoringError(f"duplicate model names in reports: {names}")
    values = {}
    for report in reports:
        for (quantity, metric), value in report.values.items():
            values[(report.model, quantity, metric)] = float(value)
    return MetricMatrix(models=tuple(names), values=values, category_map=dict(CATEGORY_MAP))


def directionalize(matrix: MetricMatrix) -> MetricMatrix:
    """Invert Theil's C (higher is better) so every column is lower-is-better."""
    values = dict(matrix.values)
    for (model, quantity, metric), value in matrix.values.items():
        if metric == "theil_c":
            values[(model, quantity, metric)] = 1.0 - value
    return MetricMatrix(models=matrix.models, values=values, category_map=matrix.category_map)


def zscore_normalize(matrix: MetricMatrix) -> ZScoreTable:
    """Standardize each (quantity, metric) column across the model cohort.

    Columns with zero spread become all-zero and are flagged; missing cells
    stay missing and are excluded from the column statistics.
    """
    metric_z = {}
    constant_cols = []
    keys = sorted({(q, m) for (_, q, m) in matrix.values})
    for quantity, metric in keys:
        col = matrix.column(quantity, metric)
        present = np.isfinite(col)
        if present.sum() == 0:
            continue
        mu = float(np.mean(col[present]))
        sigma = float(np.std(col[present]))
        if sigma <= 0.0:
            constant_cols.append((quantity, metric))
        for model, value in zip(matrix.models, col):
            if not np.isfinite(value):
                metric_z[(model, quantity, metric)] = float("nan")
            elif sigma <= 0.0:
                metric_z[(model, quantity, metric)] = 0.0
            else:
                metric_z[(model, quantity, metric)] = (value - mu) / sigma
    return ZScoreTable(
        models=matrix.models,
        metric_z=metric_z,
        category_quantity_scores={},
        category_scores={},
        final_scores={},
        ranking=(),
        constant_columns=tuple(constant_cols),
    )


def category_scores(table: ZScoreTable, category_map: Mapping | None = None) -> ZScoreTable:
    """Mean of each category's metric Z-scores, per model and quantity."""
    category_map = dict(CATEGORY_MAP if category_map is None else category_map)
    for cat in CATEGORIES:
        if cat not in set(category_map.values()):
            raise ScoringError(f"category {cat!r} has no metrics")
    quantities = sorted({q for (_, q, _) in table.metric_z})
    cq_scores = {}
    for model in table.models:
        for quantity in quantities:
            for category in CATEGORIES:
                zs = [
                    table.metric_z[(model, quantity, metric)]
                    for metric, cat in category_map.items()
                    if cat == category and (model, quantity, metric) in table.metric_z
                ]
                zs = [z for z in zs if np.isfinite(z)]
                cq_scores[(model, quantity, category)] = (
                    float(np.mean(zs)) if zs else float("nan")
                )
    return ZScoreTable(
        models=table.models,
        metric_z=table.metric_z,
        category_quantity_scores=cq_scores,
        category_scores=table.category_scores,
        final_scores=table.final_scores,
        ranking=table.ranking,
        constant_columns=table.constant_columns,
    )


def aggregate_final(table: ZScoreTable) -> ZScoreTable:
    """Equal-weight mean over quantities and categories; ascending sort ranks.

    Ties break on the error-category score, then lexicographic model name.
    """
    if not table.category_quantity_scores:
        raise ScoringError("category scores must be computed before aggregation")
    quantities = sorted({q for (_, q, _) in table.category_quantity_scores})
    cat_scores = {}
    final = {}
    for model in table.models:
        for category in CATEGORIES:
            vals = [
                table.category_quantity_scores[(model, q, category)]
                for q in quantities
                if np.isfinite(table.category_quantity_scores.get((model, q, category), float("nan")))
            ]
            cat_scores[(model, category)] = float(np.mean(vals)) if vals else float("nan")
        cells = [
            table.category_quantity_scores[(model, q, c)]
            for q in quantities
            for c in CATEGORIES
            if np.isfinite(table.category_quantity_scores.get((model, q, c), float("nan")))
        ]
        final[model] = float(np.mean(cells)) if cells else float("nan")

    def sort_key(model: str):
        score = final[model]
        err = cat_scores.get((model, "error"), float("nan"))
        return (_finite_or_inf(score), _finite_or_inf(err), model)

    ordered = sorted(table.models, key=sort_key)
    ranking = tuple(
        RankedModel(model=m, score=final[m], rank=i + 1) for i, m in enumerate(ordered)
    )
    return ZScoreTable(
        models=table.models,
        metric_z=table.metric_z,
        category_quantity_scores=table.category_quantity_scores,
        category_scores=cat_scores,
        final_scores=final,
        ranking=ranking,
        constant_columns=table.constant_columns,
    )


def _finite_or_inf(x: float) -> float:
    """NaN scores sort to the bottom of the ranking."""
    return x if np.isfinite(x) else float("inf")


def rank_models(reports: Sequence[MetricReport]) -> ZScoreTable:
    """Full pipeline: matrix -> directionalize -> Z-scores -> categories -> ranking."""
    matrix = directionalize(build_metric_matrix(reports))
    return aggregate_final(category_scores(zscore_normalize(matrix)))


# ---------------------------------------------------------------------------
# report files


def write_zscores(path, table: ZScoreTable) -> None:
    with open(path, "w") as fh:
        fh.write("model,quantity,metric,zscore\n")
        for model in table.models:
            for quantity in QUANTITIES:
                for metric in METRIC_NAMES:
                    key = (model, quantity, metric)
                    if key in table.metric_z:
                        fh.write(f"{model},{quantity},{metric},{_fmt(table.metric_z[key])}\n")


def write_radar(path, table: ZScoreTable) -> None:
    """Per model, the three category scores per quantity (radar chart shape)."""
    with open(path, "w") as fh:
        fh.write("model,quantity,category,score\n")
        for model in table.models:
            for quantity in QUANTITIES:
                for category in CATEGORIES:
                    key = (model, quantity, category)
                    if key in table.category_quantity_scores:
                        fh.write(
                            f"{model},{quantity},{category},"
                            f"{_fmt(table.category_quantity_scores[key])}\n"
                        )


def write_ranking(path, table: ZScoreTable) -> None:
    with open(path, "w") as fh:
        fh.write("model,final_score,rank\n")
        for entry in table.ranking:
            fh.write(f"{entry.model},{_fmt(entry.score)},{entry.rank}\n")
