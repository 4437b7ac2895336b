"""Datasets: IDX ingestion, digit variations, patch sampling, preprocessing."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .transform_ops import InvalidParameterError, apply, make_rotation_2d, make_zoom_2d

FOREGROUND = 0.1
STANDARDIZE_EPS = 10.0
ZCA_EPS = 0.1


class IdxParseError(ValueError):
    pass


class BadMagicError(IdxParseError):
    pass


class TruncatedPayloadError(IdxParseError):
    pass


class CountMismatchError(IdxParseError):
    pass


class DegenerateDataError(RuntimeError):
    pass


@dataclass
class PatchDataset:
    """Patch matrix (N x D1, channel-major flattening) with metadata."""

    patches: np.ndarray
    labels: np.ndarray | None = None
    r: int = 28
    channels: int = 1
    value_range: str = "unit_interval"
    provenance: dict = field(default_factory=dict)

    def __len__(self):
        return self.patches.shape[0]

    def images(self) -> np.ndarray:
        """Patches reshaped to N x r x r x channels."""
        N = len(self)
        return self.patches.reshape(N, self.channels, self.r, self.r).transpose(0, 2, 3, 1)

    def subset(self, idx) -> "PatchDataset":
        return PatchDataset(self.patches[idx],
                            None if self.labels is None else self.labels[idx],
                            self.r, self.channels, self.value_range, dict(self.provenance))


def images_to_patches(images: np.ndarray) -> np.ndarray:
    """N x H x W (x C) images -> N x (C*H*W) channel-major vectors."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[..., None]
    return images.transpose(0, 3, 1, 2).reshape(images.shape[0], -1)


# --- IDX --------------------------------------------------------------------

def _read_bytes(path) -> bytes:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw: bytes, magic: int, ndim: int) -> np.ndarray:
    if len(raw) < 4 + 4 * ndim:
        raise TruncatedPayloadError(f"IDX header needs {4 + 4 * ndim} bytes, got {len(raw)}")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise BadMagicError(f"bad IDX magic 0x{found:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    size = int(np.prod(dims))
    payload = raw[4 + 4 * ndim:]
    if len(payload) < size:
        raise TruncatedPayloadError(f"IDX payload has {len(payload)} bytes, need {size}")
    return np.frombuffer(payload[:size], dtype=np.uint8).reshape(dims)


def read_idx_images(path) -> np.ndarray:
    return _parse_idx(_read_bytes(path), 0x00000803, 3)


def read_idx_labels(path) -> np.ndarray:
    return _parse_idx(_read_bytes(path), 0x00000801, 1)


def write_idx_images(path, images: np.ndarray):
    images = np.asarray(images, dtype=np.uint8)
    n, h, w = images.shape
    Path(path).write_bytes(struct.pack(">4I", 0x00000803, n, h, w) + images.tobytes())


def write_idx_labels(path, labels: np.ndarray):
    labels = np.asarray(labels, dtype=np.uint8)
    Path(path).write_bytes(struct.pack(">2I", 0x00000801, labels.size) + labels.tobytes())


def load_idx(images_path, labels_path=None) -> PatchDataset:
    """Load an IDX image file (and optional label file) scaled to [0, 1]."""
    imgs = read_idx_images(images_path)
    n, h, w = imgs.shape
    if h != w:
        raise IdxParseError(f"non-square images {h}x{w}")
    labels = None
    if labels_path is not None:
        labels = read_idx_labels(labels_path).astype(np.int64)
        if labels.size != n:
            raise CountMismatchError(f"{n} images but {labels.size} labels")
    return PatchDataset(imgs.reshape(n, -1) / 255.0, labels, h, 1, "unit_interval",
                        {"source": str(images_path)})


def load_bundled_digits() -> PatchDataset:
    """The 5,000-digit MNIST subset shipped with ``mlxtend`` (500 per class)."""
    try:
        from mlxtend.data import mnist_data
    except ImportError as exc:  # pragma: no cover
        raise RuntimeError("bundled digits need the optional 'mlxtend' package; "
                           "pass IDX files instead") from exc
    X, y = mnist_data()
    return PatchDataset(X / 255.0, y.astype(np.int64), 28, 1, "unit_interval",
                        {"source": "mlxtend.mnist_data"})


def load_digits(images_path=None, labels_path=None) -> PatchDataset:
    if images_path:
        return load_idx(images_path, labels_path)
    return load_bundled_digits()


# --- variations ---------------------------------------------------------------

def _shift_image(img: np.ndarray, dx: int, dy: int) -> np.ndarray:
    out = np.zeros_like(img)
    h, w = img.shape
    ys, xs = slice(max(dy, 0), h + min(dy, 0)), slice(max(dx, 0), w + min(dx, 0))
    yt, xt = slice(max(-dy, 0), h + min(-dy, 0)), slice(max(-dx, 0), w + min(-dx, 0))
    out[ys, xs] = img[yt, xt]
    return out


def synthesize_variation(base: PatchDataset, kind: str, background: str = "none",
                         seed: int = 0) -> PatchDataset:
    """Rotated, scaled or translated copies of 28x28 digits.

    Per-sample parameters (angle, scale factor or ``(dx, dy)``) are recorded
    in ``provenance["params"]``.
    """
    if base.r != 28 or base.channels != 1 or base.patches.shape[1] != 784:
        raise InvalidParameterError("variations need 28x28 single-channel digits")
    if kind not in ("rot", "scale", "trans"):
        raise InvalidParameterError(f"unknown variation kind {kind!r}")
    if background not in ("none", "random_uniform"):
        raise InvalidParameterError(f"unknown background {background!r}")
    # separate streams so the geometry does not depend on the background choice
    rng, bg_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    out = np.empty_like(base.patches)
    params = []
    for n, v in enumerate(base.patches):
        if kind == "rot":
            theta = rng.uniform(0.0, 2 * np.pi)
            x = apply(make_rotation_2d(28, theta), v)
            params.append(theta)
        elif kind == "scale":
            f = rng.uniform(0.3, 1.0)
            x = apply(make_zoom_2d(28, f), v)
            params.append(f)
        else:
            img = v.reshape(28, 28)
            ys, xs = np.nonzero(img > FOREGROUND)
            if ys.size == 0:
                dx = dy = 0
            else:
                dx = int(rng.integers(-xs.min(), 27 - xs.max() + 1))
                dy = int(rng.integers(-ys.min(), 27 - ys.max() + 1))
            x = _shift_image(img, dx, dy).ravel()
            params.append((dx, dy))
        x = np.clip(x, 0.0, 1.0)
        if background == "random_uniform":
            bg = x <= FOREGROUND
            x = np.where(bg, np.minimum(x + bg_rng.uniform(0.0, 1.0, size=x.shape), 1.0), x)
        out[n] = x
    prov = dict(base.provenance)
    prov.update({"kind": kind, "background": background, "seed": seed,
                 "params": np.asarray(params)})
    return PatchDataset(out, None if base.labels is None else base.labels.copy(),
                        28, 1, "unit_interval", prov)


# --- patches ------------------------------------------------------------------

def sample_patches(images, count: int, r: int, seed: int = 0,
                   max_retries: int = 100) -> PatchDataset:
    """Uniformly placed ``r x r`` windows from N x H x W (x C) images.

    Windows with variance below 1e-8 are redrawn, at most ``max_retries``
    times per slot.  Window positions go to ``provenance["positions"]``.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[..., None]
    N, H, W, C = images.shape
    if H < r or W < r:
        raise InvalidParameterError(f"images {H}x{W} smaller than patch size {r}")
    rng = np.random.default_rng(seed)
    out = np.empty((count, C * r * r))
    pos = np.empty((count, 3), dtype=np.int64)
    for k in range(count):
        for _ in range(max_retries):
            i = int(rng.integers(N))
            y = int(rng.integers(H - r + 1))
            x = int(rng.integers(W - r + 1))
            win = images[i, y:y + r, x:x + r, :]
            if win.var() >= 1e-8:
                break
        else:
            raise DegenerateDataError(f"no non-constant window found for slot {k}")
        out[k] = win.transpose(2, 0, 1).ravel()
        pos[k] = (i, y, x)
    return PatchDataset(out, None, r, C, "unit_interval",
                        {"source": "sample_patches", "seed": seed, "positions": pos})


# --- preprocessing --------------------------------------------------------------

@dataclass
class Preprocessing:
    kind: str = "none"
    mean: np.ndarray | None = None
    whiten: np.ndarray | None = None
    eps: float = ZCA_EPS
    standardize: bool = True  # per-patch standardization before whitening

    def __call__(self, X) -> np.ndarray:
        return self.apply(X)

    def apply(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if self.kind == "none":
            return X
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if self.kind == "per_patch_standardize" or self.standardize:
            X = _standardize(X)
        if self.kind == "zca_whiten":
            if X.shape[1] != self.mean.size:
                raise InvalidParameterError(
                    f"patch dim {X.shape[1]} != fitted dim {self.mean.size}")
            X = (X - self.mean) @ self.whiten
        return X[0] if single else X


def _standardize(X):
    X = X - X.mean(axis=1, keepdims=True)
    return X / np.sqrt(X.var(axis=1, keepdims=True) + STANDARDIZE_EPS)


def fit_preprocessing(X, kind: str = "none", eps: float = ZCA_EPS,
                      standardize: bool = True) -> Preprocessing:
    """Fit preprocessing statistics.

    ``zca_whiten`` optionally standardizes each patch first, then whitens
    with eigenvalues floored at ``eps``: directions with variance at least
    ``eps`` come out with unit variance.
    """
    X = np.asarray(getattr(X, "patches", X), dtype=np.float64)
    if kind not in ("none", "per_patch_standardize", "zca_whiten"):
        raise InvalidParameterError(f"unknown preprocessing {kind!r}")
    if kind != "zca_whiten":
        return Preprocessing(kind)
    if X.shape[0] < 2:
        raise InvalidParameterError("need at least two patches to fit statistics")
    Z = _standardize(X) if standardize else X
    mean = Z.mean(axis=0)
    cov = np.cov(Z - mean, rowvar=False)
    evals, evecs = np.linalg.eigh(cov)
    M = (evecs / np.sqrt(np.maximum(evals, eps))) @ evecs.T
    return Preprocessing(kind, mean, (M + M.T) / 2, eps, standardize)


def fit_apply_preprocessing(data: PatchDataset, kind: str = "none", eps: float = ZCA_EPS,
                            standardize: bool = True) -> tuple[Preprocessing, PatchDataset]:
    """Fit statistics on ``data`` and return them with the transformed copy."""
    pre = fit_preprocessing(data.patches, kind, eps, standardize)
    out = PatchDataset(pre.apply(data.patches), data.labels, data.r, data.channels,
                       "unit_interval" if kind == "none" else "standardized",
                       dict(data.provenance, preprocessing=kind))
    return pre, out


# --- containers -----------------------------------------------------------------

def write_provenance(path, prov: dict):
    lines = []
    for k, v in prov.items():
        if isinstance(v, np.ndarray):
            v = f"<array {v.shape}>"
        lines.append(f"{k}={v}")
    Path(path).write_text("\n".join(lines) + "\n")


def save_dataset(path, data: PatchDataset):
    """Patches in the TIFV container plus a ``.provenance`` sidecar.

    Labels, when present, go to a ``.labels`` IDX file next to it.
    """
    from .features import write_features

    path = Path(path)
    write_features(path, data.patches)
    prov = {"source": data.provenance.get("source", "unknown"), "r": data.r,
            "channels": data.channels, "value_range": data.value_range}
    prov.update({k: v for k, v in data.provenance.items() if k != "source"})
    write_provenance(path.with_name(path.name + ".provenance"), prov)
    if data.labels is not None:
        write_idx_labels(path.with_name(path.name + ".labels"), data.labels)


def load_dataset(path) -> PatchDataset:
    from .features import read_features

    path = Path(path)
    X = read_features(path).astype(np.float64)
    prov = {}
    side = path.with_name(path.name + ".provenance")
    if side.exists():
        for line in side.read_text().splitlines():
            if "=" in line:
                k, v = line.split("=", 1)
                prov[k] = v
    labels = None
    lab = path.with_name(path.name + ".labels")
    if lab.exists():
        labels = read_idx_labels(lab).astype(np.int64)
    r = int(prov.get("r", int(round(np.sqrt(X.shape[1])))))
    return PatchDataset(X, labels, r, int(prov.get("channels", 1)),
                        prov.get("value_range", "unit_interval"), prov)
