"""Transformation-invariant feature learning with sparse transformation operators."""

from . import classify, data, features, tiae, tiomp, tirbm, transform_ops
from ._common import TrainConfig, TrainingDivergedError
from .transform_ops import InvalidParameterError, TransformSet, preset

__version__ = "0.1.0"

__all__ = [
    "classify", "data", "features", "tiae", "tiomp", "tirbm", "transform_ops",
    "TrainConfig", "TrainingDivergedError", "InvalidParameterError", "TransformSet",
    "preset",
]
