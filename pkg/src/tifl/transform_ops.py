"""Sparse linear transformation operators for image patches.

Every operator maps a flattened input patch (``D1`` values) to a flattened
filter-space patch (``D2`` values, ``D2 <= D1``).  Patches are flattened
channel-major, then row-major within a channel: index ``c*H*W + y*W + x``.
Multi-channel operators replicate the spatial block once per channel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "InvalidParameterError",
    "SparseTransform",
    "TransformSet",
    "make_identity",
    "make_shift_1d",
    "make_translation_2d",
    "make_rotation_2d",
    "make_scaling_2d",
    "make_zoom_2d",
    "apply",
    "apply_adjoint",
    "build_transform_set",
    "transform_set_from_manifest",
    "PRESETS",
    "preset",
]

KINDS = ("identity", "shift1d", "translation2d", "rotation2d", "scaling2d", "zoom2d")

# source coordinates closer than this to a grid node are snapped onto it
_SNAP = 1e-9


class InvalidParameterError(ValueError):
    """Raised for out-of-range geometry or mismatched dimensions."""


@dataclass(frozen=True, eq=False)
class SparseTransform:
    """Immutable coordinate-list sparse matrix with geometry metadata.

    ``row``/``col``/``val`` are sorted by row, then column.  ``params`` holds
    the kind-specific record needed to regenerate the matrix.
    """

    rows: int
    cols: int
    row: np.ndarray
    col: np.ndarray
    val: np.ndarray
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("row", "col", "val"):
            getattr(self, name).setflags(write=False)

    @property
    def nnz(self) -> int:
        return int(self.val.size)

    @property
    def matrix(self) -> sp.csr_matrix:
        """The operator as a CSR matrix (built lazily, cached)."""
        cached = self.__dict__.get("_csr")
        if cached is None:
            cached = sp.csr_matrix(
                (self.val, (self.row, self.col)), shape=(self.rows, self.cols)
            )
            object.__setattr__(self, "_csr", cached)
        return cached

    def toarray(self) -> np.ndarray:
        out = np.zeros((self.rows, self.cols))
        out[self.row, self.col] = self.val
        return out


def _from_entries(rows, cols, r_idx, c_idx, vals, kind, params) -> SparseTransform:
    r_idx = np.asarray(r_idx, dtype=np.int64)
    c_idx = np.asarray(c_idx, dtype=np.int64)
    vals = np.asarray(vals, dtype=np.float64)
    keep = vals != 0.0
    r_idx, c_idx, vals = r_idx[keep], c_idx[keep], vals[keep]
    order = np.lexsort((c_idx, r_idx))
    r_idx, c_idx, vals = r_idx[order], c_idx[order], vals[order]
    if r_idx.size > 1:
        dup = (np.diff(r_idx) == 0) & (np.diff(c_idx) == 0)
        if dup.any():
            # merge duplicates produced by coinciding bilinear corners
            key = r_idx * cols + c_idx
            uniq, inv = np.unique(key, return_inverse=True)
            vals = np.bincount(inv, weights=vals)
            r_idx, c_idx = uniq // cols, uniq % cols
    return SparseTransform(rows, cols, r_idx, c_idx, vals, kind, dict(params))


def _replicate(t: SparseTransform, channels: int) -> SparseTransform:
    if channels == 1:
        return t
    k = np.arange(channels)[:, None]
    r_idx = (t.row[None, :] + k * t.rows).ravel()
    c_idx = (t.col[None, :] + k * t.cols).ravel()
    vals = np.tile(t.val, channels)
    params = dict(t.params, channels=channels)
    return SparseTransform(t.rows * channels, t.cols * channels, r_idx, c_idx,
                           vals, t.kind, params)


def make_identity(dim: int, channels: int = 1) -> SparseTransform:
    if dim < 1:
        raise InvalidParameterError(f"dim must be >= 1, got {dim}")
    idx = np.arange(dim)
    t = _from_entries(dim, dim, idx, idx, np.ones(dim), "identity", {"dim": dim})
    return _replicate(t, channels)


def make_shift_1d(dim: int, s: int) -> SparseTransform:
    """Square shift operator: ``T[i, j] = 1`` iff ``i == j + s``."""
    if dim < 1:
        raise InvalidParameterError(f"dim must be >= 1, got {dim}")
    if abs(s) >= dim:
        raise InvalidParameterError(f"|s| must be < dim ({dim}), got {s}")
    j = np.arange(max(0, -s), min(dim, dim - s))
    return _from_entries(dim, dim, j + s, j, np.ones(j.size), "shift1d",
                         {"dim": dim, "s": int(s)})


def make_translation_2d(r: int, w: int, dx: int, dy: int,
                        channels: int = 1) -> SparseTransform:
    """Select the ``w x w`` window at column offset ``dx``, row offset ``dy``."""
    if not 1 <= w <= r:
        raise InvalidParameterError(f"need 1 <= w <= r, got w={w}, r={r}")
    if not (0 <= dx <= r - w and 0 <= dy <= r - w):
        raise InvalidParameterError(
            f"window offset ({dx}, {dy}) exceeds {r}x{r} grid for w={w}")
    yy, xx = np.divmod(np.arange(w * w), w)
    src = (yy + dy) * r + (xx + dx)
    t = _from_entries(w * w, r * r, np.arange(w * w), src, np.ones(w * w),
                      "translation2d", {"r": r, "w": w, "dx": int(dx), "dy": int(dy)})
    return _replicate(t, channels)


def _bilinear(w: int, r: int, sx: np.ndarray, sy: np.ndarray, kind: str,
              params: dict) -> SparseTransform:
    """Bilinear sampling operator from an ``r x r`` grid to ``w x w`` outputs.

    ``sx``/``sy`` give the source point of each output pixel (length ``w*w``).
    Sources outside ``[0, r-1]^2`` produce empty rows.
    """
    sx = np.where(np.abs(sx - np.round(sx)) < _SNAP, np.round(sx), sx)
    sy = np.where(np.abs(sy - np.round(sy)) < _SNAP, np.round(sy), sy)
    inside = (sx >= 0) & (sx <= r - 1) & (sy >= 0) & (sy <= r - 1)
    out = np.flatnonzero(inside)
    sx, sy = sx[inside], sy[inside]
    x0 = np.minimum(np.floor(sx).astype(np.int64), r - 1)
    y0 = np.minimum(np.floor(sy).astype(np.int64), r - 1)
    fx, fy = sx - x0, sy - y0
    x1 = np.minimum(x0 + 1, r - 1)
    y1 = np.minimum(y0 + 1, r - 1)
    rows = np.concatenate([out] * 4)
    cols = np.concatenate([y0 * r + x0, y0 * r + x1, y1 * r + x0, y1 * r + x1])
    vals = np.concatenate([(1 - fx) * (1 - fy), fx * (1 - fy),
                           (1 - fx) * fy, fx * fy])
    return _from_entries(w * w, r * r, rows, cols, vals, kind, params)


def make_rotation_2d(w: int, theta: float, r: int | None = None,
                     channels: int = 1) -> SparseTransform:
    """Rotate by ``theta`` radians about the grid center with bilinear sampling.

    With ``r > w`` the output is the centered ``w x w`` window of the rotated
    ``r x r`` input, which keeps the operator consistent with translation and
    scaling operators sharing the same receptive field.
    """
    r = w if r is None else r
    if w < 2 or r < w:
        raise InvalidParameterError(f"need 2 <= w <= r, got w={w}, r={r}")
    if (r - w) % 2:
        raise InvalidParameterError("r - w must be even for a centered window")
    off = (r - w) // 2
    center = (r - 1) / 2.0
    yy, xx = np.divmod(np.arange(w * w), w)
    px, py = xx + off - center, yy + off - center
    c, s = math.cos(theta), math.sin(theta)
    # R(-theta) applied to the output offset
    sx = c * px + s * py + center
    sy = -s * px + c * py + center
    t = _bilinear(w, r, sx, sy, "rotation2d",
                  {"r": r, "w": w, "theta": float(theta)})
    return _replicate(t, channels)


def make_scaling_2d(r: int, w: int, l: int, gs: int,
                    channels: int = 1) -> SparseTransform:
    """Resample the centered ``(r - l*gs)`` square region onto ``w x w``."""
    if not 1 <= w <= r or gs < 1:
        raise InvalidParameterError(f"bad geometry r={r}, w={w}, gs={gs}")
    if not 0 <= l <= (r - w) // gs:
        raise InvalidParameterError(
            f"crop level l={l} outside [0, {(r - w) // gs}]")
    m = r - l * gs
    off = (r - m) / 2.0
    u = np.arange(w)
    # pixel-center aligned mapping of output pixel u into the source region
    src = off + (u + 0.5) * (m / w) - 0.5
    yy, xx = np.divmod(np.arange(w * w), w)
    t = _bilinear(w, r, src[xx], src[yy], "scaling2d",
                  {"r": r, "w": w, "l": int(l), "gs": int(gs)})
    return _replicate(t, channels)


def make_zoom_2d(w: int, factor: float, channels: int = 1) -> SparseTransform:
    """Square zoom about the center: content is magnified by ``factor``.

    ``factor < 1`` shrinks the content; sources beyond the grid give zeros.
    """
    if w < 2 or not factor > 0:
        raise InvalidParameterError(f"bad zoom w={w}, factor={factor}")
    center = (w - 1) / 2.0
    yy, xx = np.divmod(np.arange(w * w), w)
    sx = (xx - center) / factor + center
    sy = (yy - center) / factor + center
    t = _bilinear(w, w, sx, sy, "zoom2d", {"w": w, "factor": float(factor)})
    return _replicate(t, channels)


def _check_len(n: int, expected: int):
    if n != expected:
        raise InvalidParameterError(f"length {n} does not match {expected}")


def apply(t: SparseTransform, x) -> np.ndarray:
    """``y = T x`` as the explicit sparse sum ``y_i = sum_j T_ij x_j``."""
    x = np.asarray(x, dtype=np.float64)
    _check_len(x.shape[0], t.cols)
    return np.bincount(t.row, weights=t.val * x[t.col], minlength=t.rows)


def apply_adjoint(t: SparseTransform, h) -> np.ndarray:
    """``T^T h``."""
    h = np.asarray(h, dtype=np.float64)
    _check_len(h.shape[0], t.rows)
    return np.bincount(t.col, weights=t.val * h[t.row], minlength=t.cols)


@dataclass(frozen=True, eq=False)
class TransformSet:
    """Ordered operators sharing one ``(D2, D1)`` shape.

    ``specs`` is the manifest: one ``(kind, params)`` record per member, in
    order, from which every matrix can be regenerated exactly.
    """

    transforms: tuple
    input_width: int
    filter_width: int
    channels: int = 1

    def __post_init__(self):
        if len(self.transforms) < 1:
            raise InvalidParameterError("a transform set needs at least one member")
        shapes = {(t.rows, t.cols) for t in self.transforms}
        if len(shapes) != 1:
            raise InvalidParameterError(f"inconsistent transform shapes {sorted(shapes)}")

    def __len__(self) -> int:
        return len(self.transforms)

    def __iter__(self):
        return iter(self.transforms)

    def __getitem__(self, s):
        return self.transforms[s]

    @property
    def D1(self) -> int:
        return self.transforms[0].cols

    @property
    def D2(self) -> int:
        return self.transforms[0].rows

    @property
    def manifest(self) -> list[tuple[str, dict]]:
        return [(t.kind, dict(t.params)) for t in self.transforms]

    @property
    def matrices(self) -> list[sp.csr_matrix]:
        return [t.matrix for t in self.transforms]

    def forward(self, V: np.ndarray) -> np.ndarray:
        """Apply every operator to each row of ``V`` (N x D1) -> S x N x D2."""
        return np.stack([(t.matrix @ V.T).T for t in self.transforms])

    def adjoint_filters(self, W: np.ndarray) -> np.ndarray:
        """``T_s^T W`` for every ``s``; ``W`` is D2 x K, result S x D1 x K."""
        return np.stack([t.matrix.T @ W for t in self.transforms])

    def __repr__(self):
        kinds = sorted({t.kind for t in self.transforms})
        return (f"TransformSet(S={len(self)}, D1={self.D1}, D2={self.D2}, "
                f"kinds={kinds})")


def _make(kind: str, params: dict, channels: int) -> SparseTransform:
    p = params
    if kind == "identity":
        return make_identity(p["dim"], channels)
    if kind == "shift1d":
        return make_shift_1d(p["dim"], p["s"])
    if kind == "translation2d":
        return make_translation_2d(p["r"], p["w"], p["dx"], p["dy"], channels)
    if kind == "rotation2d":
        return make_rotation_2d(p["w"], p["theta"], p.get("r"), channels)
    if kind == "scaling2d":
        return make_scaling_2d(p["r"], p["w"], p["l"], p["gs"], channels)
    if kind == "zoom2d":
        return make_zoom_2d(p["w"], p["factor"], channels)
    raise InvalidParameterError(f"unknown transform kind {kind!r}")


def _expand_family(fam: dict, r: int, w: int) -> list[tuple[str, dict]]:
    kind = fam["kind"]
    if kind == "identity":
        if r == w:
            return [("identity", {"dim": r * r})]
        off = (r - w) // 2
        return [("translation2d", {"r": r, "w": w, "dx": off, "dy": off})]
    if kind == "translation2d":
        gs = fam.get("gs", 1)
        offsets = fam.get("offsets")
        if offsets is None:
            steps = range(0, r - w + 1, gs)
            offsets = [(dx, dy) for dy in steps for dx in steps]
        return [("translation2d", {"r": r, "w": w, "dx": dx, "dy": dy})
                for dx, dy in offsets]
    if kind == "rotation2d":
        angles = fam.get("angles")
        if angles is None:
            n, step = fam["steps"], fam.get("step", 2 * math.pi / fam["steps"])
            start = fam.get("start", 0.0)
            angles = [start + k * step for k in range(n)]
        return [("rotation2d", {"r": r, "w": w, "theta": float(a)}) for a in angles]
    if kind == "scaling2d":
        gs = fam.get("gs", 2)
        levels = fam.get("levels")
        if levels is None:
            levels = range((r - w) // gs + 1)
        return [("scaling2d", {"r": r, "w": w, "l": l, "gs": gs}) for l in levels]
    if kind == "shift1d":
        return [("shift1d", {"dim": r, "s": s}) for s in fam["offsets"]]
    raise InvalidParameterError(f"unknown transform family {kind!r}")


def build_transform_set(spec: dict) -> TransformSet:
    """Build an ordered :class:`TransformSet` from a geometry record.

    ``spec`` has keys ``r``, ``w``, optional ``channels`` and ``families``: a
    list of dicts, each with ``kind`` plus the grid for that kind
    (``gs``/``offsets`` for translation, ``steps``/``step``/``angles`` for
    rotation, ``gs``/``levels`` for scaling).  Families are concatenated in
    declaration order.
    """
    r, w = int(spec["r"]), int(spec["w"])
    channels = int(spec.get("channels", 1))
    families = spec.get("families") or []
    if not families:
        raise InvalidParameterError("spec names no transformation family")
    members = []
    for fam in families:
        members.extend(_expand_family(fam, r, w))
    return transform_set_from_manifest(members, r, w, channels)


def transform_set_from_manifest(manifest: Iterable[tuple[str, dict]], r: int,
                                w: int, channels: int = 1) -> TransformSet:
    ts = tuple(_make(kind, params, channels) for kind, params in manifest)
    return TransformSet(ts, r, w, channels)


def _rot(steps, step, start=0.0):
    return {"kind": "rotation2d", "steps": steps, "step": step, "start": start}


# r, w, families (channels supplied at build time)
PRESETS: dict[str, tuple[int, int, list]] = {
    "identity28": (28, 28, [{"kind": "identity"}]),
    "rot16": (28, 28, [_rot(16, math.pi / 8)]),
    "scale28-20": (28, 20, [{"kind": "scaling2d", "gs": 2}]),
    "trans28-24": (28, 24, [{"kind": "translation2d", "gs": 2}]),
    "cifar-identity": (6, 6, [{"kind": "identity"}]),
    "cifar-rot": (6, 6, [_rot(5, math.pi / 8, -math.pi / 4)]),
    "cifar-scale": (8, 6, [{"kind": "scaling2d", "gs": 2}]),
    "cifar-trans": (8, 6, [{"kind": "translation2d", "gs": 2}]),
    "cifar-combined": (8, 6, [{"kind": "translation2d", "gs": 2},
                              {"kind": "scaling2d", "gs": 2},
                              _rot(5, math.pi / 8, -math.pi / 4)]),
    "natural-identity": (14, 14, [{"kind": "identity"}]),
    "natural-trans": (14, 12, [{"kind": "translation2d", "gs": 1}]),
    "natural-rot": (14, 14, [_rot(5, math.pi / 8, -math.pi / 4)]),
    "natural-scale": (14, 10, [{"kind": "scaling2d", "gs": 2, "levels": [0, 1]}]),
}
_ALIASES = {"scale28→20": "scale28-20", "trans28→24": "trans28-24",
            "identity": "identity28"}


def preset(name: str, channels: int = 1) -> TransformSet:
    """Named transform configurations; ``a+b`` concatenates presets."""
    parts = [_ALIASES.get(p, p) for p in name.split("+")]
    for p in parts:
        if p not in PRESETS:
            raise InvalidParameterError(
                f"unknown preset {p!r}; choose from {sorted(PRESETS)}")
    geoms = {PRESETS[p][:2] for p in parts}
    if len(geoms) != 1:
        raise InvalidParameterError(f"presets {parts} disagree on (r, w): {geoms}")
    r, w = geoms.pop()
    families = [f for p in parts for f in PRESETS[p][2]]
    return build_transform_set({"r": r, "w": w, "channels": channels,
                                "families": families})


def dense_stack(ts: TransformSet | Sequence[SparseTransform]) -> np.ndarray:
    """All operators as a dense S x D2 x D1 array (tests / tiny models only)."""
    return np.stack([t.toarray() for t in ts])
