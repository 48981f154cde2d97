"""Native trainable regressors mapping car-following states to acceleration."""

from .base import (
    FnnHyperparameters,
    GbtHyperparameters,
    LearnerError,
    RfHyperparameters,
    Standardizer,
    TrainedRegressor,
    TrainingDivergedError,
    load_model,
    predict,
    save_model,
)
from .ensemble import fit_gbt, fit_rf
from .fnn import fit_fnn

__all__ = [
    "GbtHyperparameters",
    "RfHyperparameters",
    "FnnHyperparameters",
    "TrainedRegressor",
    "Standardizer",
    "LearnerError",
    "TrainingDivergedError",
    "fit_gbt",
    "fit_rf",
    "fit_fnn",
    "predict",
    "save_model",
    "load_model",
]
