"""Tree ensembles: boosted regression trees and a random forest."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import (
    GbtHyperparameters,
    RfHyperparameters,
    Standardizer,
    TrainedRegressor,
    training_arrays,
)
from .tree import RegressionTree, fit_tree


@dataclass
class TreeEnsemble:
    """base + scale * sum(tree predictions); mode distinguishes sum vs mean."""

    base: float
    scale: float
    trees: list
    aggregate: str  # "sum" (boosting) or "mean" (forest)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        acc = np.zeros(X.shape[0])
        for tree in self.trees:
            acc += tree.predict(X)
        if self.aggregate == "mean" and self.trees:
            acc /= len(self.trees)
        return self.base + self.scale * acc

    def to_dict(self) -> dict:
        return {
            "base": self.base,
            "scale": self.scale,
            "aggregate": self.aggregate,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "TreeEnsemble":
        return cls(
            base=float(payload["base"]),
            scale=float(payload["scale"]),
            aggregate=payload["aggregate"],
            trees=[RegressionTree.from_dict(t) for t in payload["trees"]],
        )


def fit_gbt(pairs, hp: GbtHyperparameters | None = None, seed: int = 0) -> TrainedRegressor:
    """Additive trees on squared-error residuals with shrinkage and L1 leaves.

    The training MSE is non-increasing per round (each leaf moves toward its
    local optimum by at most the optimal amount).
    """
    hp = hp or GbtHyperparameters()
    X, y = training_arrays(pairs, minimum=50, kind="gbt")
    base = float(np.mean(y))
    pred = np.full(y.size, base)
    trees = []
    loss_curve = []
    for _ in range(hp.n_rounds):
        residual = y - pred
        tree = fit_tree(
            X,
            residual,
            max_depth=hp.max_depth,
            min_samples_split=2 * hp.min_samples_leaf,
            min_samples_leaf=hp.min_samples_leaf,
            leaf_l1=hp.l1_reg,
        )
        pred = pred + hp.learning_rate * tree.predict(X)
        trees.append(tree)
        loss_curve.append(float(np.mean((y - pred) ** 2)))
    core = TreeEnsemble(base=base, scale=hp.learning_rate, trees=trees, aggregate="sum")
    return TrainedRegressor(
        kind="gbt",
        hyperparameters={
            "learning_rate": hp.learning_rate,
            "n_rounds": hp.n_rounds,
            "max_depth": hp.max_depth,
            "l1_reg": hp.l1_reg,
            "min_samples_leaf": hp.min_samples_leaf,
        },
        seed=seed,
        x_scaler=Standardizer.identity(X.shape[1]),
        y_scaler=Standardizer.identity(1),
        core=core,
        loss_curve=tuple(loss_curve),
        n_train=y.size,
    )


def fit_rf(pairs, hp: RfHyperparameters | None = None, seed: int = 0) -> TrainedRegressor:
    """Bootstrap-aggregated trees with per-split feature subsampling."""
    hp = hp or RfHyperparameters()
    X, y = training_arrays(pairs, minimum=50, kind="rf")
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(hp.n_trees)]
    trees = []
    running = np.zeros(y.size)
    loss_curve = []
    for rng in streams:
        rows = rng.integers(0, y.size, y.size)
        tree = fit_tree(
            X[rows],
            y[rows],
            max_depth=hp.max_depth,
            min_samples_split=hp.min_samples_split,
            min_samples_leaf=hp.min_samples_leaf,
            feature_fraction=hp.feature_subsample,
            rng=rng,
        )
        trees.append(tree)
        running += tree.predict(X)
        loss_curve.append(float(np.mean((y - running / len(trees)) ** 2)))
    core = TreeEnsemble(base=0.0, scale=1.0, trees=trees, aggregate="mean")
    return TrainedRegressor(
        kind="rf",
        hyperparameters={
            "n_trees": hp.n_trees,
            "max_depth": hp.max_depth,
            "min_samples_split": hp.min_samples_split,
            "min_samples_leaf": hp.min_samples_leaf,
            "feature_subsample": hp.feature_subsample,
        },
        seed=seed,
        x_scaler=Standardizer.identity(X.shape[1]),
        y_scaler=Standardizer.identity(1),
        core=core,
        loss_curve=tuple(loss_curve),
        n_train=y.size,
    )
