"""Inverse solvers: learned convolutional regression and a least-squares oracle."""

from .nn import (
    FeatureScaler,
    LocalizationModel,
    build_model,
    gradient_check,
    mse_loss,
)
from .oracle import (
    InversionResult,
    ensemble_splitting_curve,
    least_squares_invert,
    predicted_splittings,
)
from .train import Adam, LabelledDataset, TrainConfig, TrainResult, split_indices, train

__all__ = [
    "Adam",
    "FeatureScaler",
    "InversionResult",
    "LabelledDataset",
    "LocalizationModel",
    "TrainConfig",
    "TrainResult",
    "build_model",
    "ensemble_splitting_curve",
    "gradient_check",
    "least_squares_invert",
    "mse_loss",
    "predicted_splittings",
    "split_indices",
    "train",
]
