"""Fully connected network trained with explicit backprop and Adam.

ReLU hidden layers, linear output, squared-error loss. Inputs and targets
are standardized by the caller (fit_fnn); dropout is active during training
only, so inference is deterministic.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import (
    FnnHyperparameters,
    Standardizer,
    TrainedRegressor,
    TrainingDivergedError,
    training_arrays,
)

_ADAM_B1 = 0.9
_ADAM_B2 = 0.999
_ADAM_EPS = 1e-8


@dataclass
class MlpCore:
    weights: list
    biases: list

    @classmethod
    def init(cls, sizes, rng: np.random.Generator) -> "MlpCore":
        """He-normal weights, zero biases."""
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights=weights, biases=biases)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def predict(self, X: np.ndarray) -> np.ndarray:
        h = np.atleast_2d(X)
        for i in range(self.n_layers - 1):
            h = np.maximum(h @ self.weights[i] + self.biases[i], 0.0)
        out = h @ self.weights[-1] + self.biases[-1]
        return out.ravel()

    def to_dict(self) -> dict:
        return {
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "MlpCore":
        return cls(
            weights=[np.array(w, dtype=float) for w in payload["weights"]],
            biases=[np.array(b, dtype=float) for b in payload["biases"]],
        )


def loss_and_gradients(core: MlpCore, X: np.ndarray, y: np.ndarray, dropout_masks=None):
    """MSE loss and analytic gradients for every weight and bias.

    ``dropout_masks`` (one per hidden layer, already scaled for inverted
    dropout) reproduce a training step; None evaluates the plain network.
    """
    X = np.atleast_2d(X)
    y = np.asarray(y, dtype=float).ravel()
    n_layers = core.n_layers
    activations = [X]
    h = X
    for i in range(n_layers - 1):
        z = h @ core.weights[i] + core.biases[i]
        h = np.maximum(z, 0.0)
        if dropout_masks is not None:
            h = h * dropout_masks[i]
        activations.append(h)
    pred = (h @ core.weights[-1] + core.biases[-1]).ravel()
    err = pred - y
    loss = float(np.mean(err**2))

    grad_w = [None] * n_layers
    grad_b = [None] * n_layers
    delta = (2.0 * err / y.size).reshape(-1, 1)
    grad_w[-1] = activations[-1].T @ delta
    grad_b[-1] = delta.sum(axis=0)
    back = delta @ core.weights[-1].T
    for i in range(n_layers - 2, -1, -1):
        if dropout_masks is not None:
            back = back * dropout_masks[i]
        back = back * (activations[i + 1] > 0.0)
        grad_w[i] = activations[i].T @ back
        grad_b[i] = back.sum(axis=0)
        if i > 0:
            back = back @ core.weights[i].T
    return loss, grad_w, grad_b


def fit_fnn(pairs, hp: FnnHyperparameters | None = None, seed: int = 0) -> TrainedRegressor:
    """Mini-batch Adam on standardized features and targets."""
    hp = hp or FnnHyperparameters()
    X_raw, y_raw = training_arrays(pairs, minimum=100, kind="fnn")
    x_scaler = Standardizer.fit(X_raw)
    y_scaler = Standardizer.fit(y_raw.reshape(-1, 1))
    X = x_scaler.transform(X_raw)
    y = y_scaler.transform(y_raw.reshape(-1, 1)).ravel()

    rng = np.random.default_rng(seed)
    sizes = [X.shape[1]] + [hp.units_per_layer] * hp.n_layers + [1]
    core = MlpCore.init(sizes, rng)

    m_w = [np.zeros_like(w) for w in core.weights]
    v_w = [np.zeros_like(w) for w in core.weights]
    m_b = [np.zeros_like(b) for b in core.biases]
    v_b = [np.zeros_like(b) for b in core.biases]
    step = 0
    loss_curve = []
    n = y.size
    for epoch in range(hp.epochs):
        order = rng.permutation(n)
        for start in range(0, n, hp.batch_size):
            batch = order[start : start + hp.batch_size]
            masks = None
            if hp.dropout > 0:
                masks = [
                    (rng.random((batch.size, hp.units_per_layer)) >= hp.dropout)
                    / (1.0 - hp.dropout)
                    for _ in range(hp.n_layers)
                ]
            _, grad_w, grad_b = loss_and_gradients(core, X[batch], y[batch], masks)
            step += 1
            for i in range(core.n_layers):
                m_w[i] = _ADAM_B1 * m_w[i] + (1 - _ADAM_B1) * grad_w[i]
                v_w[i] = _ADAM_B2 * v_w[i] + (1 - _ADAM_B2) * grad_w[i] ** 2
                m_b[i] = _ADAM_B1 * m_b[i] + (1 - _ADAM_B1) * grad_b[i]
                v_b[i] = _ADAM_B2 * v_b[i] + (1 - _ADAM_B2) * grad_b[i] ** 2
                m_w_hat = m_w[i] / (1 - _ADAM_B1**step)
                v_w_hat = v_w[i] / (1 - _ADAM_B2**step)
                m_b_hat = m_b[i] / (1 - _ADAM_B1**step)
                v_b_hat = v_b[i] / (1 - _ADAM_B2**step)
                core.weights[i] -= hp.learning_rate * m_w_hat / (np.sqrt(v_w_hat) + _ADAM_EPS)
                core.biases[i] -= hp.learning_rate * m_b_hat / (np.sqrt(v_b_hat) + _ADAM_EPS)
        epoch_loss = float(np.mean((core.predict(X) - y) ** 2))
        if not np.isfinite(epoch_loss):
            raise TrainingDivergedError(epoch)
        loss_curve.append(epoch_loss)

    return TrainedRegressor(
        kind="fnn",
        hyperparameters={
            "n_layers": hp.n_layers,
            "units_per_layer": hp.units_per_layer,
            "dropout": hp.dropout,
            "learning_rate": hp.learning_rate,
            "batch_size": hp.batch_size,
            "epochs": hp.epochs,
        },
        seed=seed,
        x_scaler=x_scaler,
        y_scaler=y_scaler,
        core=core,
        loss_curve=tuple(loss_curve),
        n_train=n,
    )
