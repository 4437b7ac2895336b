"""Patch encoders, dense extraction and quadrant pooling."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import tiae, tiomp, tirbm
from .transform_ops import InvalidParameterError

FEATURE_MAGIC = b"TIFV"
FEATURE_VERSION = 1


@dataclass
class FeatureExtractor:
    """Maps ``r x r x channels`` patches to invariant features.

    ``encode`` is a batched function from an N x D1 matrix to N x dim.
    """

    encode: Callable[[np.ndarray], np.ndarray]
    dim: int
    r: int
    channels: int = 1
    stride: int = 1
    pooling: str = "quadrant_average"
    preprocess: Callable[[np.ndarray], np.ndarray] | None = None

    @property
    def patch_dim(self) -> int:
        return self.r * self.r * self.channels


def extractor_for(model, r: int, channels: int = 1, alpha: float = 0.25,
                  preprocess=None, stride: int = 1,
                  pooling: str = "quadrant_average") -> FeatureExtractor:
    """Build an extractor around a trained TIRBM, TIAE or TIOMP dictionary."""
    if isinstance(model, tirbm.TirbmModel):
        enc, dim = (lambda X: tirbm.pooled_activations(model, X)), model.K
    elif isinstance(model, tiae.TiaeModel):
        enc, dim = (lambda X: tiae.pooled_features(model, X)), model.K
    elif isinstance(model, tiomp.Dictionary):
        enc, dim = (lambda X: tiomp.threshold_responses(model, X, alpha)), 2 * model.K
    else:
        raise InvalidParameterError(f"no feature encoder for {type(model).__name__}")
    if model.transforms.D1 != r * r * channels:
        raise InvalidParameterError("model input dim does not match patch geometry")
    return FeatureExtractor(enc, dim, r, channels, stride, pooling, preprocess)


def patch_features(fx: FeatureExtractor, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != fx.patch_dim:
        raise InvalidParameterError(f"patch dim {X.shape[1]} != {fx.patch_dim}")
    if fx.preprocess is not None:
        X = fx.preprocess(X)
    return fx.encode(X)


def patch_feature(fx: FeatureExtractor, patch) -> np.ndarray:
    """Feature vector (length K, or 2K for thresholding) for one patch."""
    return patch_features(fx, patch)[0]


def dense_extract(fx: FeatureExtractor, image) -> np.ndarray:
    """Features of every ``r x r`` window at the extractor's stride.

    ``image`` is H x W (x C); the result is an h x w x dim feature map.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[..., None]
    H, W, C = image.shape
    if C != fx.channels:
        raise InvalidParameterError(f"image has {C} channels, extractor expects {fx.channels}")
    if H < fx.r or W < fx.r:
        raise InvalidParameterError(f"image {H}x{W} smaller than patch size {fx.r}")
    win = sliding_window_view(image, (fx.r, fx.r), axis=(0, 1))  # h x w x C x r x r
    win = win[::fx.stride, ::fx.stride]
    h, w = win.shape[:2]
    feats = patch_features(fx, win.reshape(h * w, -1))
    return feats.reshape(h, w, -1)


def quadrant_pool(fmap) -> np.ndarray:
    """Average over the four spatial quadrants (TL, TR, BL, BR), concatenated.

    For odd sizes the middle row/column belongs to the bottom/right quadrant.
    """
    fmap = np.asarray(fmap, dtype=np.float64)
    if fmap.ndim != 3 or fmap.shape[0] < 2 or fmap.shape[1] < 2:
        raise InvalidParameterError(f"need an h x w x dim map with h, w >= 2, got {fmap.shape}")
    hy, hx = fmap.shape[0] // 2, fmap.shape[1] // 2
    quads = [fmap[:hy, :hx], fmap[:hy, hx:], fmap[hy:, :hx], fmap[hy:, hx:]]
    return np.concatenate([q.mean(axis=(0, 1)) for q in quads])


def image_features(fx: FeatureExtractor, image) -> np.ndarray:
    fmap = dense_extract(fx, image)
    if fx.pooling == "quadrant_average":
        return quadrant_pool(fmap)
    if fx.pooling == "global_average":
        return fmap.mean(axis=(0, 1))
    raise InvalidParameterError(f"unknown pooling {fx.pooling!r}")


def extract_all(fx: FeatureExtractor, images) -> np.ndarray:
    """Image-level features for N x H x W (x C) images -> N x (4*dim)."""
    return np.stack([image_features(fx, img) for img in images])


# --- TIFV container -------------------------------------------------------------

def write_features(path, X):
    X = np.ascontiguousarray(X, dtype="<f4")
    if X.ndim != 2:
        raise InvalidParameterError("feature matrix must be 2-d")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC + struct.pack("<III", FEATURE_VERSION, *X.shape))
        fh.write(X.tobytes())


def read_features(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != FEATURE_MAGIC:
        raise ValueError(f"{path}: not a TIFV feature file")
    version, n, dim = struct.unpack("<III", raw[4:16])
    if version != FEATURE_VERSION:
        raise ValueError(f"{path}: unsupported TIFV version {version}")
    body = raw[16:]
    if len(body) != 4 * n * dim:
        raise ValueError(f"{path}: expected {n}x{dim} floats, payload is {len(body)} bytes")
    return np.frombuffer(body, dtype="<f4").reshape(n, dim).copy()
