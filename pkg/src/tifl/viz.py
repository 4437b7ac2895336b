"""Filter-grid rendering to binary PGM."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from . import checkpoint


def normalize_tile(tile: np.ndarray) -> np.ndarray:
    """Min-max scale to 0..255 uint8; a constant tile becomes all 128."""
    lo, hi = tile.min(), tile.max()
    if hi - lo <= 0:
        return np.full(tile.shape, 128, dtype=np.uint8)
    return np.rint((tile - lo) / (hi - lo) * 255).astype(np.uint8)


def tile_grid(tiles) -> np.ndarray:
    """Arrange equally sized tiles in a near-square grid with 1-px black borders."""
    tiles = list(tiles)
    if not tiles:
        raise ValueError("no tiles to render")
    th, tw = tiles[0].shape
    cols = math.ceil(math.sqrt(len(tiles)))
    rows = math.ceil(len(tiles) / cols)
    img = np.zeros((rows * (th + 1) + 1, cols * (tw + 1) + 1), dtype=np.uint8)
    for k, t in enumerate(tiles):
        y, x = divmod(k, cols)
        img[1 + y * (th + 1):1 + y * (th + 1) + th, 1 + x * (tw + 1):1 + x * (tw + 1) + tw] = t
    return img


def filter_tiles(model, transform_index: int | None = None):
    """One 2-D array per filter; channels are laid side by side."""
    ts = model.transforms
    if transform_index is None:
        F, side = model.W, ts.filter_width
    else:
        if not 0 <= transform_index < len(ts):
            raise ValueError(f"transform index {transform_index} out of range [0, {len(ts)})")
        F, side = ts.transforms[transform_index].matrix.T @ model.W, ts.input_width
    C = ts.channels
    out = []
    for j in range(F.shape[1]):
        chans = F[:, j].reshape(C, side, side)
        out.append(np.concatenate(list(chans), axis=1))
    return out


def write_pgm(path, img: np.ndarray):
    img = np.asarray(img, dtype=np.uint8)
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    if fields[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h, maxval = (int(f) for f in fields[1:])
    if maxval > 255:
        raise ValueError("16-bit PGM not supported")
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos + 1)
    return data.reshape(h, w).copy()


def export_filter_grid(checkpoint_path, path, transform_index: int | None = None) -> np.ndarray:
    """Render the filters of a checkpoint as a PGM grid and return the image."""
    model, _ = checkpoint.load(checkpoint_path)
    img = tile_grid(normalize_tile(t) for t in filter_tiles(model, transform_index))
    write_pgm(path, img)
    return img
