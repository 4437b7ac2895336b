"""Transformation-invariant sparse coding.

Atoms are the transformed filters ``T_s^T w_j``.  Codes may use at most one
transformation per filter and at most ``gamma`` atoms overall; they are
found greedily with orthogonal matching pursuit.  The dictionary is learned
by alternating code updates with projected gradient steps on the filters.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ._common import as_patches
from .transform_ops import InvalidParameterError, TransformSet

RESIDUAL_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class Dictionary:
    W: np.ndarray  # D2 x K, unit-ball columns
    transforms: TransformSet

    def __post_init__(self):
        if self.W.shape[0] != self.transforms.D2:
            raise InvalidParameterError("filter dim does not match transform set D2")

    @property
    def K(self) -> int:
        return self.W.shape[1]

    @property
    def S(self) -> int:
        return len(self.transforms)

    def atoms(self) -> np.ndarray:
        """All atoms as D1 x (K*S); column ``j*S + s`` is ``T_s^T w_j``."""
        U = self.transforms.adjoint_filters(self.W)  # S x D1 x K
        return U.transpose(1, 2, 0).reshape(self.transforms.D1, -1)


@dataclass
class SparseCode:
    entries: list = field(default_factory=list)  # (j, s, coefficient)
    K: int = 0
    S: int = 0

    def __post_init__(self):
        js = [j for j, _, _ in self.entries]
        if len(set(js)) != len(js):
            raise InvalidParameterError("a filter is used by more than one transformation")

    def __len__(self):
        return len(self.entries)

    def todense(self) -> np.ndarray:
        H = np.zeros((self.K, self.S))
        for j, s, a in self.entries:
            H[j, s] = a
        return H


def project_unit_ball(W: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(W, axis=0)
    return W / np.maximum(norms, 1.0)


def init_dictionary(transforms: TransformSet, K: int, seed=0, data=None) -> Dictionary:
    """Random unit-norm filters, or normalized random data windows if given."""
    rng = np.random.default_rng(seed)
    if data is not None:
        X = as_patches(data)
        pick = rng.choice(X.shape[0], size=K, replace=X.shape[0] < K)
        s0 = transforms[0].matrix
        W = (s0 @ X[pick].T) + 1e-3 * rng.standard_normal((transforms.D2, K))
    else:
        W = rng.standard_normal((transforms.D2, K))
    return Dictionary(W / np.linalg.norm(W, axis=0), transforms)


def _omp(A: np.ndarray, norms2: np.ndarray, v: np.ndarray, gamma: int, S: int,
         trace: list | None = None):
    r = v.copy()
    chosen: list[int] = []
    used = np.zeros(A.shape[1] // S, dtype=bool)
    coef = np.zeros(0)
    rnorm = np.linalg.norm(r)
    if trace is not None:
        trace.append(rnorm)
    while len(chosen) < gamma and rnorm >= RESIDUAL_TOL:
        corr = np.abs(A.T @ r)
        corr[np.repeat(used, S)] = -1.0
        corr[norms2 == 0] = -1.0
        k = int(np.argmax(corr))  # first maximum = lowest (j, s)
        if corr[k] <= 0:
            break
        chosen.append(k)
        used[k // S] = True
        sub = A[:, chosen]
        coef = np.linalg.lstsq(sub, v, rcond=None)[0]
        r = v - sub @ coef
        rnorm = np.linalg.norm(r)
        if trace is not None:
            trace.append(rnorm)
    return chosen, coef


def encode_omp(d: Dictionary, v, gamma: int, trace: list | None = None) -> SparseCode:
    """Greedy TIOMP code for one patch.

    If ``trace`` is a list, the residual norm after each step is appended.
    """
    v = np.asarray(v, dtype=np.float64)
    if gamma < 1 or gamma > d.K:
        raise InvalidParameterError(f"gamma must lie in [1, K={d.K}], got {gamma}")
    if v.shape != (d.transforms.D1,):
        raise InvalidParameterError(f"patch shape {v.shape} != ({d.transforms.D1},)")
    A = d.atoms()
    chosen, coef = _omp(A, np.einsum("ij,ij->j", A, A), v, gamma, d.S, trace)
    entries = sorted((k // d.S, k % d.S, float(a)) for k, a in zip(chosen, coef))
    return SparseCode(entries, d.K, d.S)


def encode_batch(d: Dictionary, X, gamma: int) -> np.ndarray:
    """Dense codes for every row of ``X`` -> N x K x S (vectorized for gamma=1)."""
    X = as_patches(X)
    if gamma < 1 or gamma > d.K:
        raise InvalidParameterError(f"gamma must lie in [1, K={d.K}], got {gamma}")
    A = d.atoms()
    norms2 = np.einsum("ij,ij->j", A, A)
    H = np.zeros((X.shape[0], d.K * d.S))
    if gamma == 1:
        C = X @ A
        score = np.abs(C)
        score[:, norms2 == 0] = -1.0
        k = np.argmax(score, axis=1)
        rows = np.arange(X.shape[0])
        ok = (score[rows, k] > 0) & (np.linalg.norm(X, axis=1) >= RESIDUAL_TOL)
        H[rows[ok], k[ok]] = C[rows[ok], k[ok]] / norms2[k[ok]]
    else:
        for n, v in enumerate(X):
            chosen, coef = _omp(A, norms2, v, gamma, d.S)
            H[n, chosen] = coef
    return H.reshape(X.shape[0], d.K, d.S)


def codes_to_dense(codes, K: int, S: int) -> np.ndarray:
    if isinstance(codes, np.ndarray):
        return codes
    return np.stack([c.todense() for c in codes]) if codes else np.zeros((0, K, S))


def reconstruct(d: Dictionary, H: np.ndarray) -> np.ndarray:
    """``sum_{j,s} T_s^T w_j h_{j,s}`` for each code in N x K x S -> N x D1."""
    U = d.transforms.adjoint_filters(d.W)
    return sum(H[:, :, s] @ U[s].T for s in range(d.S))


def objective(d: Dictionary, batch, codes) -> float:
    """Summed squared reconstruction error over the batch."""
    X = as_patches(batch)
    H = codes_to_dense(codes, d.K, d.S)
    return float(np.sum((reconstruct(d, H) - X) ** 2))


def objective_gradient(d: Dictionary, batch, codes) -> np.ndarray:
    """Gradient of :func:`objective` with respect to ``W`` (D2 x K)."""
    X = as_patches(batch)
    H = codes_to_dense(codes, d.K, d.S)
    if H.shape[0] != X.shape[0]:
        raise InvalidParameterError(f"{H.shape[0]} codes for {X.shape[0]} patches")
    R = reconstruct(d, H) - X
    return 2.0 * sum(t.matrix @ (R.T @ H[:, :, s]) for s, t in enumerate(d.transforms))


def lipschitz_estimate(d: Dictionary, H: np.ndarray, iters: int = 30) -> float:
    """Largest eigenvalue of the objective's Hessian in ``W`` (power iteration)."""
    mats = d.transforms.matrices

    def hess(Z):
        R = sum(H[:, :, s] @ (t.T @ Z).T for s, t in enumerate(mats))
        return 2.0 * sum(t @ (R.T @ H[:, :, s]) for s, t in enumerate(mats))

    Z = np.ones_like(d.W)
    lam = 0.0
    for _ in range(iters):
        Y = hess(Z)
        lam = np.linalg.norm(Y)
        if lam == 0:
            return 0.0
        Z = Y / lam
    return float(lam)


def dictionary_update(d: Dictionary, batch, codes, step: float | None = None) -> Dictionary:
    """One projected gradient step on the filters with codes held fixed.

    The default step is ``1 / (2 L)`` with ``L`` the power-iteration estimate
    of the batch Lipschitz constant.
    """
    X = as_patches(batch)
    H = codes_to_dense(codes, d.K, d.S)
    if H.shape[0] != X.shape[0]:
        raise InvalidParameterError(f"{H.shape[0]} codes for {X.shape[0]} patches")
    if step is None:
        L = lipschitz_estimate(d, H)
        if L == 0:
            return Dictionary(project_unit_ball(d.W), d.transforms)
        step = 1.0 / (2.0 * L)
    W = d.W - step * objective_gradient(d, X, H)
    return Dictionary(project_unit_ball(W), d.transforms)


def train(d: Dictionary, data, gamma: int = 1, epochs: int = 10, batch_size: int = 1000,
          seed: int = 0, callback=None):
    """Alternate TIOMP coding and dictionary steps over shuffled minibatches."""
    X = as_patches(data)
    rng = np.random.default_rng(seed)
    metrics = []
    for epoch in range(1, epochs + 1):
        t0 = time.perf_counter()
        total = 0.0
        order = rng.permutation(X.shape[0])
        for start in range(0, X.shape[0], batch_size):
            B = X[order[start:start + batch_size]]
            H = encode_batch(d, B, gamma)
            d = dictionary_update(d, B, H)
            total += objective(d, B, H)
        row = {"epoch": epoch, "reconstruction_error": total / X.shape[0],
               "mean_pooled_activation": float("nan"),
               "wall_seconds": time.perf_counter() - t0}
        metrics.append(row)
        if callback is not None:
            callback(row)
    return d, metrics


def threshold_responses(d: Dictionary, X, alpha: float) -> np.ndarray:
    """Two-sided soft-threshold features for each row of ``X`` -> N x 2K."""
    if alpha < 0:
        raise InvalidParameterError("alpha must be >= 0")
    X = as_patches(X)
    U = d.transforms.adjoint_filters(d.W)
    R = np.stack([X @ U[s] for s in range(d.S)], axis=-1)  # N x K x S
    pos = np.maximum(R.max(axis=-1) - alpha, 0.0)
    neg = np.maximum(-R.min(axis=-1) - alpha, 0.0)
    return np.concatenate([pos, neg], axis=1)


def threshold_encode(d: Dictionary, v, alpha: float) -> np.ndarray:
    return threshold_responses(d, v, alpha)[0]
