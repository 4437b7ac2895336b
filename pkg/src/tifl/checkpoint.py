"""TIFL model checkpoints and metrics CSV.

Layout (little-endian)::

    "TIFL" | u32 version | u32 model kind | u32 D1 | u32 D2 | u32 K | u32 S
    | u32 visible/output family
    manifest: u32 r | u32 w | u32 channels | S x (u32 kind | 4 x f64 params)
    W (D2 x K f64) [| b (K x S f64) | c (D1 f64)]   # b, c absent for dictionaries
    preprocessing: u32 kind | u32 standardize | f64 eps | u32 dim
                   [| mean (dim f64) | whitening (dim x dim f64)]

Only the manifest of each transform is stored; matrices are regenerated.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from . import tiae, tiomp, tirbm
from .data import Preprocessing
from .transform_ops import transform_set_from_manifest

MAGIC = b"TIFL"
VERSION = 1
MODEL_KINDS = {"tirbm": 1, "tiae": 2, "tiomp": 3}
TRANSFORM_KINDS = {"identity": 0, "shift1d": 1, "translation2d": 2,
                   "rotation2d": 3, "scaling2d": 4, "zoom2d": 5}
_PARAM_KEYS = {
    "identity": ("dim",),
    "shift1d": ("dim", "s"),
    "translation2d": ("r", "w", "dx", "dy"),
    "rotation2d": ("r", "w", "theta"),
    "scaling2d": ("r", "w", "l", "gs"),
    "zoom2d": ("w", "factor"),
}
_FLOAT_KEYS = {"theta", "factor"}
PRE_KINDS = {"none": 0, "per_patch_standardize": 1, "zca_whiten": 2}
METRIC_COLUMNS = ["epoch", "reconstruction_error", "mean_pooled_activation", "wall_seconds"]


class CheckpointError(ValueError):
    pass


def _kind_of(model) -> str:
    if isinstance(model, tirbm.TirbmModel):
        return "tirbm"
    if isinstance(model, tiae.TiaeModel):
        return "tiae"
    if isinstance(model, tiomp.Dictionary):
        return "tiomp"
    raise TypeError(f"cannot checkpoint {type(model).__name__}")


def _f64(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def dumps(model, preprocessing: Preprocessing | None = None) -> bytes:
    kind = _kind_of(model)
    ts = model.transforms
    K, S = model.W.shape[1], len(ts)
    if kind == "tirbm":
        fam = 0 if model.visible == "binary" else 1
    elif kind == "tiae":
        fam = tiae.OUTPUT_FAMILIES.index(model.output)
    else:
        fam = 0
    out = [MAGIC, struct.pack("<7I", VERSION, MODEL_KINDS[kind], ts.D1, ts.D2, K, S, fam)]
    out.append(struct.pack("<3I", ts.input_width, ts.filter_width, ts.channels))
    for tkind, params in ts.manifest:
        vals = [float(params[k]) for k in _PARAM_KEYS[tkind]]
        vals += [0.0] * (4 - len(vals))
        out.append(struct.pack("<I4d", TRANSFORM_KINDS[tkind], *vals))
    out.append(_f64(model.W))
    if kind != "tiomp":
        out += [_f64(model.b), _f64(model.c)]
    pre = preprocessing or Preprocessing()
    dim = 0 if pre.mean is None else pre.mean.size
    out.append(struct.pack("<2IdI", PRE_KINDS[pre.kind], int(pre.standardize), pre.eps, dim))
    if dim:
        out += [_f64(pre.mean), _f64(pre.whiten)]
    return b"".join(out)


def save(path, model, preprocessing: Preprocessing | None = None):
    Path(path).write_bytes(dumps(model, preprocessing))


class _Reader:
    def __init__(self, raw: bytes):
        self.raw, self.pos = raw, 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.raw):
            raise CheckpointError("truncated checkpoint")
        vals = struct.unpack_from(fmt, self.raw, self.pos)
        self.pos += size
        return vals

    def array(self, *shape):
        n = int(np.prod(shape))
        if self.pos + 8 * n > len(self.raw):
            raise CheckpointError("truncated checkpoint")
        a = np.frombuffer(self.raw, dtype="<f8", count=n, offset=self.pos)
        self.pos += 8 * n
        return a.astype(np.float64).reshape(shape)


def loads(raw: bytes):
    """Return ``(model, preprocessing)``."""
    if raw[:4] != MAGIC:
        raise CheckpointError("not a TIFL checkpoint (bad magic)")
    rd = _Reader(raw)
    rd.pos = 4
    version, kind_tag, D1, D2, K, S, fam = rd.take("<7I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    kinds = {v: k for k, v in MODEL_KINDS.items()}
    tkinds = {v: k for k, v in TRANSFORM_KINDS.items()}
    if kind_tag not in kinds:
        raise CheckpointError(f"unknown model kind tag {kind_tag}")
    kind = kinds[kind_tag]
    r, w, channels = rd.take("<3I")
    manifest = []
    for _ in range(S):
        tk, *vals = rd.take("<I4d")
        if tk not in tkinds:
            raise CheckpointError(f"unknown transform kind tag {tk}")
        tname = tkinds[tk]
        keys = _PARAM_KEYS[tname]
        manifest.append((tname, {k: (v if k in _FLOAT_KEYS else int(v))
                                 for k, v in zip(keys, vals)}))
    ts = transform_set_from_manifest(manifest, r, w, channels)
    if (ts.D1, ts.D2) != (D1, D2):
        raise CheckpointError("manifest geometry disagrees with header dimensions")
    W = rd.array(D2, K)
    if kind == "tiomp":
        model = tiomp.Dictionary(W, ts)
    else:
        b, c = rd.array(K, S), rd.array(D1)
        if kind == "tirbm":
            model = tirbm.TirbmModel(W, b, c, ts, tirbm.VISIBLE_FAMILIES[fam])
        else:
            model = tiae.TiaeModel(W, b, c, ts, tiae.OUTPUT_FAMILIES[fam])
    pk, std, eps, dim = rd.take("<2IdI")
    pkinds = {v: k for k, v in PRE_KINDS.items()}
    pre = Preprocessing(pkinds.get(pk, "none"), eps=eps, standardize=bool(std))
    if dim:
        pre.mean, pre.whiten = rd.array(dim), rd.array(dim, dim)
    if rd.pos != len(raw):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return model, pre


def load(path):
    return loads(Path(path).read_bytes())


def append_metrics(path, rows):
    """Append per-epoch rows to a metrics CSV, writing the header once."""
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
        if new:
            w.writeheader()
        for row in rows:
            w.writerow({k: row[k] for k in METRIC_COLUMNS})
