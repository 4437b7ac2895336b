"""Transformation-invariant autoencoder with tied weights.

The encoder is the same row-wise softmax (with an "off" state) used by the
TIRBM hidden layer; the decoder sums the transformed filters weighted by the
codes and applies a sigmoid (or nothing, for real-valued data).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from ._common import (Gradient, TrainConfig, TrainingDivergedError, as_patches,
                      minibatches, sigmoid, softmax_with_off)
from .transform_ops import InvalidParameterError, TransformSet

OUTPUT_FAMILIES = ("sigmoid_cross_entropy", "linear_squared_error")


@dataclass(frozen=True, eq=False)
class TiaeModel:
    W: np.ndarray  # D2 x K, shared by encoder and decoder
    b: np.ndarray  # K x S
    c: np.ndarray  # D1
    transforms: TransformSet
    output: str = "sigmoid_cross_entropy"

    def __post_init__(self):
        K = self.W.shape[1]
        if self.W.shape[0] != self.transforms.D2 or self.b.shape != (K, len(self.transforms)) \
                or self.c.shape != (self.transforms.D1,):
            raise InvalidParameterError("parameter shapes do not fit the transform set")
        if self.output not in OUTPUT_FAMILIES:
            raise InvalidParameterError(f"unknown output family {self.output!r}")

    @property
    def K(self) -> int:
        return self.W.shape[1]

    @property
    def S(self) -> int:
        return len(self.transforms)

    @property
    def visible(self) -> str:
        return "binary" if self.output == "sigmoid_cross_entropy" else "gaussian"

    def with_params(self, W=None, b=None, c=None) -> "TiaeModel":
        return replace(self, W=self.W if W is None else W,
                       b=self.b if b is None else b, c=self.c if c is None else c)


def init_model(transforms: TransformSet, K: int, output: str = "sigmoid_cross_entropy",
               init_scale: float = 0.01, seed=0) -> TiaeModel:
    rng = np.random.default_rng(seed)
    W = rng.uniform(-init_scale, init_scale, size=(transforms.D2, K))
    return TiaeModel(W, np.zeros((K, len(transforms))), np.zeros(transforms.D1),
                     transforms, output)


def _forward(m: TiaeModel, V: np.ndarray):
    U = m.transforms.adjoint_filters(m.W)  # S x D1 x K
    A = np.stack([V @ U[s] for s in range(m.S)], axis=-1) + m.b
    F, _ = softmax_with_off(A)
    act = sum(F[:, :, s] @ U[s].T for s in range(m.S)) + m.c
    out = sigmoid(act) if m.output == "sigmoid_cross_entropy" else act
    return F, act, out


def encode_batch(m: TiaeModel, V) -> np.ndarray:
    V = as_patches(V)
    if V.shape[1] != m.transforms.D1:
        raise InvalidParameterError(f"input dim {V.shape[1]} != {m.transforms.D1}")
    U = m.transforms.adjoint_filters(m.W)
    A = np.stack([V @ U[s] for s in range(m.S)], axis=-1) + m.b
    return softmax_with_off(A)[0]


def encode(m: TiaeModel, v) -> np.ndarray:
    """Soft codes ``f_{j,s}(v)`` as a K x S matrix."""
    return encode_batch(m, v)[0]


def pooled_features(m: TiaeModel, V) -> np.ndarray:
    """Row sums of the codes, one K-vector per input."""
    return encode_batch(m, V).sum(axis=-1)


def decode(m: TiaeModel, f) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (m.K, m.S):
        raise InvalidParameterError(f"code shape {f.shape} != {(m.K, m.S)}")
    U = m.transforms.adjoint_filters(m.W)
    act = sum(U[s] @ f[:, s] for s in range(m.S)) + m.c
    return sigmoid(act) if m.output == "sigmoid_cross_entropy" else act


def _loss_from(m, V, act, out):
    if m.output == "sigmoid_cross_entropy":
        # log(sigmoid(a)) = -logaddexp(0, -a)
        return np.sum(V * np.logaddexp(0, -act) + (1 - V) * np.logaddexp(0, act))
    return 0.5 * np.sum((out - V) ** 2)


def loss(m: TiaeModel, data) -> float:
    """Mean per-sample reconstruction loss."""
    V = as_patches(data)
    _, act, out = _forward(m, V)
    return float(_loss_from(m, V, act, out) / V.shape[0])


def loss_and_gradient(m: TiaeModel, data) -> tuple[float, Gradient]:
    """Mean loss and its exact gradient by backpropagation."""
    V = as_patches(data)
    N = V.shape[0]
    F, act, out = _forward(m, V)
    L = _loss_from(m, V, act, out) / N
    delta = (out - V) / N  # d loss / d act for both output families
    mats = m.transforms.matrices
    TD = [(t @ delta.T).T for t in mats]  # T_s delta, S x (N x D2)
    # d loss / d f_{j,s} = w_j^T T_s delta
    G = np.stack([TD[s] @ m.W for s in range(m.S)], axis=-1)
    # softmax-with-off Jacobian
    dA = F * (G - np.sum(G * F, axis=-1, keepdims=True))
    dW = np.zeros_like(m.W)
    for s, t in enumerate(mats):
        dW += TD[s].T @ F[:, :, s]           # decoder occurrence
        dW += t @ (V.T @ dA[:, :, s])        # encoder occurrence
    return float(L), Gradient(dW, dA.sum(axis=0), delta.sum(axis=0))


def train(m: TiaeModel, data, cfg: TrainConfig, callback=None):
    """Minibatch SGD on the reconstruction loss; returns ``(model, metrics)``."""
    X = as_patches(data)
    rng = np.random.default_rng(cfg.seed)
    metrics = []
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        total = 0.0
        for idx in minibatches(X.shape[0], cfg.batch_size, rng):
            L, g = loss_and_gradient(m, X[idx])
            if not np.isfinite(L):
                raise TrainingDivergedError(epoch, "loss")
            total += L * idx.size
            lr = cfg.learning_rate
            m = m.with_params(m.W - lr * g.W, m.b - lr * g.b, m.c - lr * g.c)
        pooled = pooled_features(m, X).mean()
        row = {"epoch": epoch, "reconstruction_error": total / X.shape[0],
               "mean_pooled_activation": float(pooled),
               "wall_seconds": time.perf_counter() - t0}
        metrics.append(row)
        if callback is not None:
            callback(row)
    return m, metrics
