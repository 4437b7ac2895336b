"""Multinomial softmax classifier with L2 penalty and cross-validation."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import minimize
from scipy.special import log_softmax
from sklearn.model_selection import StratifiedKFold

from .transform_ops import InvalidParameterError

DEFAULT_REG_GRID = (1e-4, 1e-3, 1e-2, 1e-1, 1.0)
DEFAULT_ALPHA_GRID = (0.1, 0.25, 0.5)
RESULT_COLUMNS = ["dataset", "model", "K", "S", "reg", "accuracy", "error"]


@dataclass
class SoftmaxClassifier:
    weights: np.ndarray  # dim x classes
    bias: np.ndarray     # classes
    reg: float
    converged: bool = True
    grad_norm: float = 0.0
    objective: float = float("nan")

    @property
    def n_classes(self) -> int:
        return self.bias.size

    def scores(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.weights + self.bias

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.scores(X), axis=1)


def objective_and_gradient(theta, X, Y, reg):
    """Mean cross-entropy plus ``reg/2 ||weights||^2``; ``theta`` packs (W, b)."""
    N, D = X.shape
    C = Y.shape[1]
    W = theta[:D * C].reshape(D, C)
    b = theta[D * C:]
    logp = log_softmax(X @ W + b, axis=1)
    f = -np.sum(Y * logp) / N + 0.5 * reg * np.sum(W * W)
    G = (np.exp(logp) - Y) / N
    gW = X.T @ G + reg * W
    return f, np.concatenate([gW.ravel(), G.sum(axis=0)])


def fit(features, labels, reg: float = 1e-3, max_iter: int = 500, tol: float = 1e-4,
        n_classes: int | None = None) -> SoftmaxClassifier:
    """Deterministic full-batch L-BFGS fit from the zero point."""
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    C = int(n_classes or y.max() + 1)
    if np.unique(y).size < 2:
        raise InvalidParameterError("need at least two distinct classes")
    if X.shape[0] < C or y.min() < 0 or y.max() >= C:
        raise InvalidParameterError("labels out of range or fewer samples than classes")
    Y = np.eye(C)[y]
    theta0 = np.zeros(X.shape[1] * C + C)
    res = minimize(objective_and_gradient, theta0, args=(X, Y, reg), jac=True,
                   method="L-BFGS-B",
                   options={"maxiter": max_iter, "gtol": tol * 1e-2, "ftol": 0.0})
    f, g = objective_and_gradient(res.x, X, Y, reg)
    gn = float(np.linalg.norm(g))
    D = X.shape[1]
    return SoftmaxClassifier(res.x[:D * C].reshape(D, C).copy(), res.x[D * C:].copy(),
                             reg, gn < tol, gn, float(f))


def evaluate(clf: SoftmaxClassifier, features, labels):
    """Accuracy and confusion matrix (rows are true classes)."""
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if X.shape[0] != y.size or X.shape[1] != clf.weights.shape[0]:
        raise InvalidParameterError("feature/label dimensions do not match the classifier")
    pred = clf.predict(X)
    C = clf.n_classes
    conf = np.zeros((C, C), dtype=np.int64)
    np.add.at(conf, (y, pred), 1)
    return float(np.trace(conf) / max(y.size, 1)), conf


def stratified_folds(labels, folds: int, seed: int = 0):
    y = np.asarray(labels)
    if folds < 2:
        raise InvalidParameterError("need at least 2 folds")
    if np.bincount(y)[np.unique(y)].min() < folds:
        raise InvalidParameterError("a class has fewer samples than folds")
    skf = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    return list(skf.split(np.zeros(y.size), y))


def cross_validate(features, labels, reg_grid=DEFAULT_REG_GRID, folds: int = 5,
                   seed: int = 0, max_iter: int = 500):
    """Pick the reg with best mean validation accuracy (ties -> smaller reg).

    Returns ``(best_reg, {reg: mean_accuracy})``.
    """
    grid = sorted(set(float(r) for r in reg_grid))
    if not grid:
        raise InvalidParameterError("empty regularization grid")
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    C = int(y.max() + 1)
    splits = stratified_folds(y, folds, seed)
    scores = {}
    for reg in grid:
        accs = []
        for tr, va in splits:
            clf = fit(X[tr], y[tr], reg, max_iter=max_iter, n_classes=C)
            accs.append(evaluate(clf, X[va], y[va])[0])
        scores[reg] = float(np.mean(accs))
    best = max(grid, key=lambda r: (scores[r], -r))
    return best, scores


def write_results(path, rows, append: bool = False):
    path = Path(path)
    new = not (append and path.exists())
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
        if new:
            w.writeheader()
        for row in rows:
            w.writerow({k: row[k] for k in RESULT_COLUMNS})


def write_confusion(path, conf: np.ndarray, title: str = ""):
    lines = [title] if title else []
    lines += [" ".join(f"{v:5d}" for v in row) for row in conf]
    Path(path).write_text("\n".join(lines) + "\n")
