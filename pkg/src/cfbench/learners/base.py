"""Shared learner machinery: hyperparameters, scaling, the trained wrapper,
and model-file serialization."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from ..dataio import CarFollowingState, FeaturePair, pairs_to_arrays

MODEL_FILE_VERSION = "cfbench-model/1"


class LearnerError(Exception):
    pass


class TrainingDivergedError(LearnerError):
    def __init__(self, epoch: int, message: str = ""):
        self.epoch = epoch
        super().__init__(message or f"training loss became non-finite at epoch {epoch}")


@dataclass(frozen=True)
class GbtHyperparameters:
    """Boosted-tree settings; defaults follow the tuned reference configuration."""

    learning_rate: float = 0.477
    n_rounds: int = 125
    max_depth: int = 6
    l1_reg: float = 0.946
    min_samples_leaf: int = 1

    def __post_init__(self):
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must be in (0, 1]")
        if self.n_rounds < 1 or self.max_depth < 1 or self.min_samples_leaf < 1:
            raise ValueError("n_rounds, max_depth and min_samples_leaf must be >= 1")
        if self.l1_reg < 0:
            raise ValueError("l1_reg must be non-negative")


@dataclass(frozen=True)
class RfHyperparameters:
    n_trees: int = 776
    max_depth: int = 146
    min_samples_split: int = 5
    min_samples_leaf: int = 3
    feature_subsample: float = 1.0

    def __post_init__(self):
        if self.n_trees < 1 or self.max_depth < 1:
            raise ValueError("n_trees and max_depth must be >= 1")
        if self.min_samples_split < 2 or self.min_samples_leaf < 1:
            raise ValueError("min_samples_split >= 2 and min_samples_leaf >= 1 required")
        if not 0 < self.feature_subsample <= 1:
            raise ValueError("feature_subsample must be in (0, 1]")


@dataclass(frozen=True)
class FnnHyperparameters:
    n_layers: int = 4
    units_per_layer: int = 41
    dropout: float = 0.0723
    learning_rate: float = 0.0127
    batch_size: int = 32
    epochs: int = 20

    def __post_init__(self):
        if self.n_layers < 1 or self.units_per_layer < 1:
            raise ValueError("n_layers and units_per_layer must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("invalid optimizer settings")


@dataclass(frozen=True)
class Standardizer:
    """Per-feature mean/std transform; zero-spread features pass through."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        std = np.asarray(self.std, dtype=float).copy()
        std[std < 1e-12] = 1.0
        object.__setattr__(self, "std", std)

    @classmethod
    def fit(cls, values: np.ndarray) -> "Standardizer":
        values = np.asarray(values, dtype=float)
        return cls(mean=values.mean(axis=0), std=values.std(axis=0))

    @classmethod
    def identity(cls, n_features: int) -> "Standardizer":
        return cls(mean=np.zeros(n_features), std=np.ones(n_features))

    def transform(self, values):
        return (np.asarray(values, dtype=float) - self.mean) / self.std

    def inverse(self, values):
        return np.asarray(values, dtype=float) * self.std + self.mean


@dataclass
class TrainedRegressor:
    """A fitted learner exposing the car-following model interface.

    ``core`` is the fitted structure (tree ensemble or network); inputs and
    targets are (de)standardized internally so predictions come back in
    m/s^2.
    """

    kind: str
    hyperparameters: dict
    seed: int
    x_scaler: Standardizer
    y_scaler: Standardizer
    core: object
    loss_curve: tuple = ()
    n_train: int = 0

    @property
    def name(self) -> str:
        return self.kind

    def predict_batch(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        raw = self.core.predict(self.x_scaler.transform(X))
        return self.y_scaler.inverse(raw.reshape(-1, 1)).ravel()

    def predict(self, state: CarFollowingState) -> float:
        return float(self.predict_batch(state.as_array().reshape(1, -1))[0])

    def parameters(self) -> Mapping[str, float]:
        return dict(self.hyperparameters)


def training_arrays(pairs, minimum: int, kind: str):
    if isinstance(pairs, tuple) and len(pairs) == 2:  # already (X, y)
        X = np.asarray(pairs[0], dtype=float)
        y = np.asarray(pairs[1], dtype=float)
    else:
        if len(pairs) and not isinstance(pairs[0], FeaturePair):
            raise LearnerError(f"{kind}: expected FeaturePair sequence or (X, y) tuple")
        X, y, _ = pairs_to_arrays(pairs)
    if y.size < minimum:
        raise LearnerError(f"{kind}: need >= {minimum} training pairs, got {y.size}")
    return X, y


# ---------------------------------------------------------------------------
# serialization


def save_model(model: TrainedRegressor, path) -> None:
    """Self-describing JSON model file; floats round-trip bit-exactly."""
    payload = {
        "version": MODEL_FILE_VERSION,
        "kind": model.kind,
        "hyperparameters": model.hyperparameters,
        "seed": model.seed,
        "x_mean": model.x_scaler.mean.tolist(),
        "x_std": model.x_scaler.std.tolist(),
        "y_mean": model.y_scaler.mean.tolist(),
        "y_std": model.y_scaler.std.tolist(),
        "loss_curve": [float(v) for v in model.loss_curve],
        "n_train": model.n_train,
        "core": model.core.to_dict(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def load_model(path) -> TrainedRegressor:
    from .ensemble import TreeEnsemble
    from .fnn import MlpCore

    with open(path, "r") as fh:
        payload = json.load(fh)
    version = payload.get("version")
    if version != MODEL_FILE_VERSION:
        raise LearnerError(f"{path}: unsupported model file version {version!r}")
    kind = payload["kind"]
    if kind in ("gbt", "rf"):
        core = TreeEnsemble.from_dict(payload["core"])
    elif kind == "fnn":
        core = MlpCore.from_dict(payload["core"])
    else:
        raise LearnerError(f"{path}: unknown model kind {kind!r}")
    return TrainedRegressor(
        kind=kind,
        hyperparameters=payload["hyperparameters"],
        seed=payload["seed"],
        x_scaler=Standardizer(np.array(payload["x_mean"]), np.array(payload["x_std"])),
        y_scaler=Standardizer(np.array(payload["y_mean"]), np.array(payload["y_std"])),
        core=core,
        loss_curve=tuple(payload["loss_curve"]),
        n_train=payload["n_train"],
    )


def predict(model: TrainedRegressor, state: CarFollowingState) -> float:
    """Functional form of TrainedRegressor.predict."""
    return model.predict(state)
