"""Scripted experiments: digit-variation comparison and the patch pipeline."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import classify, features, tiae, tiomp, tirbm
from ._common import TrainConfig
from .data import (PatchDataset, fit_preprocessing, load_digits, sample_patches,
                   synthesize_variation)
from .transform_ops import preset

log = logging.getLogger(__name__)

VARIATION_PRESETS = {"rot": "rot16", "scale": "scale28-20", "trans": "trans28-24"}

# budget shared by the RBM baseline and the TIRBM in every digit experiment
DIGIT_TRAIN_CONFIG = TrainConfig(learning_rate=0.2, batch_size=20, epochs=75,
                                 sparsity_target=0.05, sparsity_weight=10.0)


@dataclass
class DigitExperiment:
    variation: str = "rot"
    background: str = "none"
    n_train: int = 2000
    n_test: int = 1000
    K: int = 100
    seed: int = 0
    cfg: TrainConfig = DIGIT_TRAIN_CONFIG
    reg_grid: tuple = classify.DEFAULT_REG_GRID
    folds: int = 5

    @property
    def name(self) -> str:
        bg = "-bgrand" if self.background == "random_uniform" else ""
        return f"mnist-{self.variation}{bg}-small"


def digit_splits(exp: DigitExperiment, base: PatchDataset | None = None):
    """Seeded train/test split of base digits followed by the variation."""
    base = load_digits() if base is None else base
    n = exp.n_train + exp.n_test
    if n > len(base):
        raise ValueError(f"need {n} base digits, have {len(base)}")
    rng = np.random.default_rng(exp.seed)
    pick = rng.permutation(len(base))[:n]
    varied = synthesize_variation(base.subset(pick), exp.variation, exp.background,
                                  seed=exp.seed + 1)
    return varied.subset(np.arange(exp.n_train)), varied.subset(np.arange(exp.n_train, n))


def train_and_score(transforms, train: PatchDataset, test: PatchDataset,
                    exp: DigitExperiment):
    """Train a sparse TIRBM, classify pooled features; returns a result dict."""
    model = tirbm.init_model(transforms, exp.K, "binary", exp.cfg.init_scale, exp.cfg.seed)
    model, metrics = tirbm.train(model, train, exp.cfg)
    ftr = tirbm.pooled_activations(model, train.patches)
    fte = tirbm.pooled_activations(model, test.patches)
    reg, cv = classify.cross_validate(ftr, train.labels, exp.reg_grid, exp.folds, exp.seed)
    clf = classify.fit(ftr, train.labels, reg)
    acc, conf = classify.evaluate(clf, fte, test.labels)
    return {"model": model, "metrics": metrics, "reg": reg, "cv": cv,
            "accuracy": acc, "error": 1.0 - acc, "confusion": conf,
            "mean_pooled_activation": float(ftr.mean())}


def run_digit_experiment(exp: DigitExperiment, base: PatchDataset | None = None):
    """Sparse RBM (S=1) versus sparse TIRBM under identical budgets."""
    train, test = digit_splits(exp, base)
    out = {}
    for label, name in (("RBM", "identity28"), ("TIRBM", VARIATION_PRESETS[exp.variation])):
        ts = preset(name)
        res = train_and_score(ts, train, test, exp)
        res.update(dataset=exp.name, K=exp.K, S=len(ts))
        log.info("%s %s: error %.4f (reg %g, pooled %.3f)", exp.name, label,
                 res["error"], res["reg"], res["mean_pooled_activation"])
        out[label] = res
    return out


def result_rows(results: dict):
    return [{"dataset": r["dataset"], "model": label, "K": r["K"], "S": r["S"],
             "reg": r["reg"], "accuracy": f"{r['accuracy']:.6f}",
             "error": f"{r['error']:.6f}"} for label, r in results.items()]


def synthetic_color_images(n: int, size: int = 32, seed: int = 0, n_classes: int = 10):
    """Smooth random color images with class-dependent oriented gratings."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % n_classes
    rng.shuffle(labels)
    yy, xx = np.mgrid[0:size, 0:size] / size
    imgs = np.empty((n, size, size, 3))
    for i, y in enumerate(labels):
        ang = np.pi * y / n_classes + rng.normal(0, 0.1)
        freq = 3 + rng.uniform(0, 1)
        phase = rng.uniform(0, 2 * np.pi)
        g = np.sin(2 * np.pi * freq * (np.cos(ang) * xx + np.sin(ang) * yy) + phase)
        col = rng.uniform(0.2, 1.0, size=3)
        imgs[i] = 0.5 + 0.4 * g[..., None] * col + 0.05 * rng.standard_normal((size, size, 3))
    return np.clip(imgs, 0, 1), labels


def patch_pipeline(images, labels, model_kind: str = "tirbm", preset_name: str = "cifar-trans",
                   K: int = 16, n_patches: int = 5000, epochs: int = 3, alpha: float = 0.25,
                   seed: int = 0):
    """Dense-extraction pipeline: patches -> whitening -> learner -> 4K features."""
    ts = preset(preset_name, channels=images.shape[-1])
    r = ts.input_width
    patches = sample_patches(images, n_patches, r, seed)
    pre = fit_preprocessing(patches.patches, "zca_whiten")
    X = pre.apply(patches.patches)
    if model_kind == "tirbm":
        cfg = TrainConfig(learning_rate=0.005, epochs=epochs, seed=seed)
        model = tirbm.init_model(ts, K, "gaussian", seed=seed)
        model, _ = tirbm.train(model, X, cfg)
    elif model_kind == "tiae":
        cfg = TrainConfig(learning_rate=0.005, epochs=epochs, seed=seed)
        model = tiae.init_model(ts, K, "linear_squared_error", seed=seed)
        model, _ = tiae.train(model, X, cfg)
    elif model_kind == "tiomp":
        model = tiomp.init_dictionary(ts, K, seed=seed, data=X)
        model, _ = tiomp.train(model, X, gamma=1, epochs=epochs, seed=seed)
    else:
        raise ValueError(f"unknown model kind {model_kind!r}")
    fx = features.extractor_for(model, r, images.shape[-1], alpha=alpha, preprocess=pre)
    feats = features.extract_all(fx, images)
    return model, pre, feats
