"""Shared numerics and small records used by the learners."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .transform_ops import InvalidParameterError

sigmoid = expit


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, what: str = "parameters"):
        super().__init__(f"non-finite {what} detected at epoch {epoch}")
        self.epoch = epoch


def softmax_with_off(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Softmax over the last axis with an extra implicit logit fixed at 0.

    Returns ``(P, P_off)`` where ``P`` has the shape of ``A`` and ``P_off``
    drops the last axis.  The max over ``{0, logits}`` is subtracted first.
    """
    m = np.maximum(A.max(axis=-1), 0.0)
    E = np.exp(A - m[..., None])
    off = np.exp(-m)
    denom = off + E.sum(axis=-1)
    return E / denom[..., None], off / denom


def as_patches(data) -> np.ndarray:
    """Accept a ``PatchDataset``-like object or a plain N x D array."""
    X = getattr(data, "patches", data)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise InvalidParameterError(f"expected an N x D patch matrix, got {X.shape}")
    return X


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    batch_size: int = 100
    epochs: int = 10
    cd_steps: int = 1
    sparsity_target: float = 0.05
    sparsity_weight: float = 3.0
    init_scale: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise InvalidParameterError(f"invalid optimizer settings in {self}")
        if self.cd_steps < 1:
            raise InvalidParameterError("cd_steps must be >= 1")
        if not 0.0 < self.sparsity_target < 1.0:
            raise InvalidParameterError("sparsity_target must lie in (0, 1)")
        if self.sparsity_weight < 0 or self.init_scale < 0:
            raise InvalidParameterError("sparsity_weight and init_scale must be >= 0")


@dataclass
class Gradient:
    """Parameter-shaped gradient record (``c`` may be all zeros)."""

    W: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate([self.W.ravel(), self.b.ravel(), self.c.ravel()])


def minibatches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]
