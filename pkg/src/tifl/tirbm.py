"""Transformation-invariant restricted Boltzmann machine.

Hidden units form a ``K x S`` grid; each row ``j`` is a softmax over the
``S`` transformed copies of filter ``w_j`` plus an "off" state, so at most
one unit per row is active.  The pooled unit ``z_j`` is on when any unit in
its row is on.  A plain RBM is the special case ``S = 1`` with the identity
transform.

Batched helpers take an ``N x D1`` matrix of visible vectors; the
single-vector functions mirror them for one input.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from ._common import (Gradient, TrainConfig, TrainingDivergedError, as_patches,
                      minibatches, sigmoid, softmax_with_off)
from .transform_ops import InvalidParameterError, TransformSet

VISIBLE_FAMILIES = ("binary", "gaussian")


@dataclass(frozen=True, eq=False)
class TirbmModel:
    W: np.ndarray  # D2 x K, column j is filter w_j
    b: np.ndarray  # K x S
    c: np.ndarray  # D1
    transforms: TransformSet
    visible: str = "binary"
    _adjoint: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        D2, K = self.W.shape
        S = len(self.transforms)
        if D2 != self.transforms.D2 or self.b.shape != (K, S) or \
                self.c.shape != (self.transforms.D1,):
            raise InvalidParameterError(
                f"parameter shapes W{self.W.shape} b{self.b.shape} c{self.c.shape} "
                f"do not fit transforms D1={self.transforms.D1} D2={self.transforms.D2} S={S}")
        if self.visible not in VISIBLE_FAMILIES:
            raise InvalidParameterError(f"unknown visible family {self.visible!r}")

    @property
    def K(self) -> int:
        return self.W.shape[1]

    @property
    def S(self) -> int:
        return len(self.transforms)

    @property
    def D1(self) -> int:
        return self.transforms.D1

    @property
    def transformed_filters(self) -> np.ndarray:
        """``T_s^T W`` stacked as S x D1 x K (cached per model instance)."""
        if self._adjoint is None:
            object.__setattr__(self, "_adjoint", self.transforms.adjoint_filters(self.W))
        return self._adjoint

    def with_params(self, W=None, b=None, c=None) -> "TirbmModel":
        return replace(self, W=self.W if W is None else W,
                       b=self.b if b is None else b,
                       c=self.c if c is None else c, _adjoint=None)


def init_model(transforms: TransformSet, K: int, visible: str = "binary",
               init_scale: float = 0.01, seed: int | np.random.Generator = 0) -> TirbmModel:
    """Uniform(-a, a) filters, zero biases."""
    rng = np.random.default_rng(seed)
    W = rng.uniform(-init_scale, init_scale, size=(transforms.D2, K))
    return TirbmModel(W, np.zeros((K, len(transforms))), np.zeros(transforms.D1),
                      transforms, visible)


def _check_v(m: TirbmModel, V: np.ndarray) -> np.ndarray:
    V = as_patches(V)
    if V.shape[1] != m.D1:
        raise InvalidParameterError(f"visible dim {V.shape[1]} != D1={m.D1}")
    return V


def hidden_logits(m: TirbmModel, V) -> np.ndarray:
    """``w_j^T T_s v + b_{j,s}`` for each row of ``V`` -> N x K x S."""
    V = _check_v(m, V)
    U = m.transformed_filters  # S x D1 x K
    S, D1, K = U.shape
    A = V @ U.transpose(1, 0, 2).reshape(D1, S * K)  # column s*K + j
    return A.reshape(-1, S, K).transpose(0, 2, 1) + m.b


def hidden_probs(m: TirbmModel, V) -> tuple[np.ndarray, np.ndarray]:
    """Batched ``P(h_{j,s}=1 | v)`` (N x K x S) and ``P(row off | v)`` (N x K)."""
    return softmax_with_off(hidden_logits(m, V))


def hidden_conditional(m: TirbmModel, v) -> np.ndarray:
    return hidden_probs(m, v)[0][0]


def pooled_activations(m: TirbmModel, V) -> np.ndarray:
    """``E[z_j | v]`` for each row of ``V`` -> N x K."""
    return hidden_probs(m, V)[0].sum(axis=-1)


def pooled_activation(m: TirbmModel, v) -> np.ndarray:
    return pooled_activations(m, v)[0]


def _check_hidden(m: TirbmModel, H: np.ndarray) -> np.ndarray:
    H = np.asarray(H, dtype=np.float64)
    if H.ndim == 2:
        H = H[None]
    if H.shape[1:] != (m.K, m.S):
        raise InvalidParameterError(f"hidden state shape {H.shape[1:]} != {(m.K, m.S)}")
    if not np.all((H == 0) | (H == 1)) or np.any(H.sum(axis=-1) > 1):
        raise InvalidParameterError("hidden state violates the one-active-per-row constraint")
    return H


def visible_mean_batch(m: TirbmModel, H: np.ndarray) -> np.ndarray:
    """Visible probabilities (binary) or means (gaussian) for N x K x S states."""
    U = m.transformed_filters  # S x D1 x K
    N, K, S = H.shape
    Hs = np.ascontiguousarray(H.transpose(0, 2, 1)).reshape(N, S * K)
    act = Hs @ U.transpose(0, 2, 1).reshape(S * K, -1) + m.c
    return sigmoid(act) if m.visible == "binary" else act


def visible_conditional(m: TirbmModel, h) -> np.ndarray:
    """``P(v_i = 1 | H)`` for binary units; the conditional mean for gaussian."""
    return visible_mean_batch(m, _check_hidden(m, h))[0]


def energy(m: TirbmModel, v, h) -> float:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (m.D1,):
        raise InvalidParameterError(f"visible vector shape {v.shape} != ({m.D1},)")
    if m.visible == "binary" and not np.all((v == 0) | (v == 1)):
        raise InvalidParameterError("binary family requires v in {0, 1}")
    H = _check_hidden(m, h)[0]
    TV = m.transforms.forward(v[None])[:, 0, :]  # S x D2
    e = -np.sum((TV @ m.W) * H.T) - np.sum(m.b * H) - m.c @ v
    if m.visible == "gaussian":
        e += 0.5 * v @ v
    return float(e)


def sample_hidden_batch(m: TirbmModel, V, rng: np.random.Generator) -> np.ndarray:
    """Draw one (S+1)-way categorical outcome per row; returns one-hot N x K x S."""
    P, off = hidden_probs(m, V)
    return _sample_from_probs(P, off, rng)


def _sample_from_probs(P, off, rng):
    N, K, S = P.shape
    cum = np.concatenate([off[..., None], P], axis=-1).cumsum(axis=-1)
    u = rng.random((N, K))
    choice = np.minimum((u[..., None] >= cum).sum(axis=-1), S)  # 0 means off
    H = np.zeros((N, K, S + 1))
    np.put_along_axis(H, choice[..., None], 1.0, axis=-1)
    return H[..., 1:]


def sample_hidden(m: TirbmModel, v, rng: np.random.Generator) -> np.ndarray:
    return sample_hidden_batch(m, v, rng)[0]


def _filter_stat(m: TirbmModel, V: np.ndarray, P: np.ndarray) -> np.ndarray:
    """``sum_n sum_s (T_s v_n) P[n, :, s]^T`` -> D2 x K."""
    N, K, S = P.shape
    Ps = np.ascontiguousarray(P.transpose(0, 2, 1)).reshape(N, S * K)
    M = V.T @ Ps  # D1 x (S*K), block s holds V^T P_s
    return sum(t.matrix @ M[:, s * K:(s + 1) * K] for s, t in enumerate(m.transforms))


def _cd(m: TirbmModel, V: np.ndarray, cd_steps: int, rng):
    P0, off0 = hidden_probs(m, V)
    P, off, Vk = P0, off0, V
    for _ in range(cd_steps):
        H = _sample_from_probs(P, off, rng)
        Vk = visible_mean_batch(m, H)
        P, off = hidden_probs(m, Vk)
    N = V.shape[0]
    grad = Gradient(
        W=(_filter_stat(m, V, P0) - _filter_stat(m, Vk, P)) / N,
        b=(P0 - P).mean(axis=0),
        c=(V - Vk).mean(axis=0),
    )
    return grad, P0, Vk


def cd_gradient(m: TirbmModel, batch, cd_steps: int, rng: np.random.Generator):
    """CD-k estimate of the log-likelihood gradient (ascent direction).

    Returns ``(gradient, mean_pooled)`` where ``mean_pooled`` is the batch
    mean of ``E[z_j | v]`` on the data (length K).
    """
    V = _check_v(m, batch)
    if V.shape[0] == 0:
        raise InvalidParameterError("empty batch")
    if cd_steps < 1:
        raise InvalidParameterError("cd_steps must be >= 1")
    grad, P0, _ = _cd(m, V, cd_steps, rng)
    return grad, P0.sum(axis=-1).mean(axis=0)


def positive_phase(m: TirbmModel, batch) -> Gradient:
    """Data-dependent half of the CD gradient: ``-dE/dtheta`` under ``P(h|v)``."""
    V = _check_v(m, batch)
    P = hidden_probs(m, V)[0]
    N = V.shape[0]
    return Gradient(_filter_stat(m, V, P) / N, P.mean(axis=0), V.mean(axis=0))


def _sparsity_from_probs(m, V, P, p):
    N = V.shape[0]
    z = P.sum(axis=-1)
    q = z.mean(axis=0)
    coef = -2.0 * (p - q) / N
    dA = coef[None, :, None] * P * (1.0 - z)[..., None]
    return Gradient(_filter_stat(m, V, dA), dA.sum(axis=0), np.zeros_like(m.c))


def sparsity_penalty(m: TirbmModel, batch, p: float) -> float:
    """``sum_j (p - mean_n E[z_j | v_n])^2``."""
    q = pooled_activations(m, batch).mean(axis=0)
    return float(np.sum((p - q) ** 2))


def sparsity_gradient(m: TirbmModel, batch, p: float) -> Gradient:
    """Gradient of :func:`sparsity_penalty` w.r.t. ``W`` and ``b`` (``c`` is zero)."""
    if not 0.0 < p < 1.0:
        raise InvalidParameterError("target sparsity must lie in (0, 1)")
    V = _check_v(m, batch)
    if V.shape[0] == 0:
        raise InvalidParameterError("empty batch")
    return _sparsity_from_probs(m, V, hidden_probs(m, V)[0], p)


def train(m: TirbmModel, data, cfg: TrainConfig, callback=None):
    """Minibatch SGD with CD-k and the pooled sparsity penalty.

    Returns ``(model, metrics)``; ``metrics`` holds one dict per epoch with
    ``epoch``, ``reconstruction_error``, ``mean_pooled_activation`` and
    ``wall_seconds``.
    """
    X = _check_v(m, data)
    rng = np.random.default_rng(cfg.seed)
    W, b, c = m.W.copy(), m.b.copy(), m.c.copy()
    metrics = []
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        err = pooled = 0.0
        for idx in minibatches(X.shape[0], cfg.batch_size, rng):
            cur = m.with_params(W, b, c)
            V = X[idx]
            grad, P0, Vk = _cd(cur, V, cfg.cd_steps, rng)
            if cfg.sparsity_weight > 0:
                sg = _sparsity_from_probs(cur, V, P0, cfg.sparsity_target)
                grad.W -= cfg.sparsity_weight * sg.W
                grad.b -= cfg.sparsity_weight * sg.b
            W = W + cfg.learning_rate * grad.W
            b = b + cfg.learning_rate * grad.b
            c = c + cfg.learning_rate * grad.c
            err += np.sum((V - Vk) ** 2)
            pooled += P0.sum(axis=-1).mean(axis=1).sum()
        if not (np.isfinite(W).all() and np.isfinite(b).all() and np.isfinite(c).all()):
            raise TrainingDivergedError(epoch)
        row = {"epoch": epoch,
               "reconstruction_error": err / X.shape[0],
               "mean_pooled_activation": pooled / X.shape[0],
               "wall_seconds": time.perf_counter() - t0}
        metrics.append(row)
        if callback is not None:
            callback(row)
    return m.with_params(W, b, c), metrics
