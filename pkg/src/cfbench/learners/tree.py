"""Regression tree with exact greedy split search on raw feature values."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_LEAF = -1


@dataclass
class RegressionTree:
    """Flat-array binary tree: leaves carry values, internal nodes a split."""

    feature: np.ndarray  # int, -1 for leaves
    threshold: np.ndarray
    left: np.ndarray  # child indices, -1 for leaves
    right: np.ndarray
    value: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        out = np.empty(X.shape[0])
        stack = [(0, np.arange(X.shape[0]))]
        while stack:
            node, rows = stack.pop()
            if rows.size == 0:
                continue
            if self.feature[node] == _LEAF:
                out[rows] = self.value[node]
                continue
            go_left = X[rows, self.feature[node]] <= self.threshold[node]
            stack.append((int(self.left[node]), rows[go_left]))
            stack.append((int(self.right[node]), rows[~go_left]))
        return out

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "RegressionTree":
        return cls(
            feature=np.array(payload["feature"], dtype=int),
            threshold=np.array(payload["threshold"], dtype=float),
            left=np.array(payload["left"], dtype=int),
            right=np.array(payload["right"], dtype=int),
            value=np.array(payload["value"], dtype=float),
        )


def _soft_threshold(total: float, alpha: float) -> float:
    if total > alpha:
        return total - alpha
    if total < -alpha:
        return total + alpha
    return 0.0


def _leaf_value(y: np.ndarray, l1: float) -> float:
    # L1 shrinkage on the leaf sum, as in regularized boosting
    return _soft_threshold(float(np.sum(y)), l1) / y.size


def _best_split(X, y, rows, features, min_leaf):
    """Minimum-SSE split over the candidate features; None when no valid one."""
    best = None
    y_node = y[rows]
    n = rows.size
    total = float(np.sum(y_node))
    total_sq = float(np.sum(y_node**2))
    parent_sse = total_sq - total * total / n
    for f in features:
        order = np.argsort(X[rows, f], kind="stable")
        xs = X[rows[order], f]
        ys = y_node[order]
        cum = np.cumsum(ys)
        cum_sq = np.cumsum(ys**2)
        # split after position i: left has i+1 samples
        sizes_left = np.arange(1, n)
        valid = (
            (sizes_left >= min_leaf)
            & (n - sizes_left >= min_leaf)
            & (xs[:-1] < xs[1:])
        )
        if not np.any(valid):
            continue
        sse_left = cum_sq[:-1] - cum[:-1] ** 2 / sizes_left
        sse_right = (total_sq - cum_sq[:-1]) - (total - cum[:-1]) ** 2 / (n - sizes_left)
        sse = np.where(valid, sse_left + sse_right, np.inf)
        i = int(np.argmin(sse))
        if best is None or sse[i] < best[0]:
            best = (float(sse[i]), f, 0.5 * (xs[i] + xs[i + 1]), order, i)
    if best is None:
        return None
    sse, f, threshold, order, i = best
    if parent_sse - sse <= 1e-12:
        return None
    return f, threshold, rows[order[: i + 1]], rows[order[i + 1 :]]


def fit_tree(
    X: np.ndarray,
    y: np.ndarray,
    max_depth: int,
    min_samples_split: int = 2,
    min_samples_leaf: int = 1,
    leaf_l1: float = 0.0,
    feature_fraction: float = 1.0,
    rng: np.random.Generator | None = None,
) -> RegressionTree:
    """Depth-first builder with an explicit stack (deep trees, no recursion limit).

    ``feature_fraction`` < 1 samples a feature subset per split (random
    forests); the boosted trees search all features.
    """
    n_features = X.shape[1]
    n_candidates = max(1, int(round(feature_fraction * n_features)))
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        feature.append(_LEAF)
        threshold.append(0.0)
        left.append(_LEAF)
        right.append(_LEAF)
        value.append(0.0)
        return len(feature) - 1

    root = new_node()
    stack = [(root, np.arange(X.shape[0]), 0)]
    while stack:
        node, rows, depth = stack.pop()
        value[node] = _leaf_value(y[rows], leaf_l1)
        if depth >= max_depth or rows.size < min_samples_split or rows.size < 2 * min_samples_leaf:
            continue
        if n_candidates < n_features and rng is not None:
            candidates = np.sort(rng.choice(n_features, size=n_candidates, replace=False))
        else:
            candidates = np.arange(n_features)
        split = _best_split(X, y, rows, candidates, min_samples_leaf)
        if split is None:
            continue
        f, thr, rows_left, rows_right = split
        feature[node] = int(f)
        threshold[node] = float(thr)
        node_left = new_node()
        node_right = new_node()
        left[node] = node_left
        right[node] = node_right
        stack.append((node_right, rows_right, depth + 1))
        stack.append((node_left, rows_left, depth + 1))

    return RegressionTree(
        feature=np.array(feature, dtype=int),
        threshold=np.array(threshold, dtype=float),
        left=np.array(left, dtype=int),
        right=np.array(right, dtype=int),
        value=np.array(value, dtype=float),
    )
