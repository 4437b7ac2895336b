"""Transformation operators as sparse matrices.

Builds the 16-rotation set used for rotated digits, checks the adjoint
identity on random vectors, and writes a strip of one digit seen through
every operator to ``rotations.pgm``.

    python demos/01_transform_operators.py
"""

import numpy as np

from tifl import transform_ops as tops
from tifl.viz import normalize_tile, tile_grid, write_pgm

ts = tops.preset("rot16")
print(f"{len(ts)} operators, each {ts.D2} x {ts.D1}, "
      f"{sum(t.nnz for t in ts.transforms)} non-zeros in total")

# <Tx, h> == <x, T^T h> for every operator
rng = np.random.default_rng(0)
x, h = rng.random(ts.D1), rng.random(ts.D2)
worst = max(abs(tops.apply(t, x) @ h - x @ tops.apply_adjoint(t, h)) for t in ts.transforms)
print(f"largest adjoint mismatch: {worst:.2e}")

# A quarter turn is an exact permutation
q = tops.make_rotation_2d(28, np.pi / 2).toarray()
print("quarter turn is a permutation:", bool(np.all(np.isin(q, (0, 1))) and np.all(q.sum(1) == 1)))

# A synthetic "7" through every rotation
img = np.zeros((28, 28))
img[6:9, 7:21] = 1.0
for k in range(14):
    img[8 + k, 20 - k // 2 - 1:20 - k // 2 + 2] = 1.0
views = ts.forward(img.reshape(1, -1))[:, 0]
write_pgm("rotations.pgm", tile_grid(normalize_tile(v.reshape(28, 28)) for v in views))
print("wrote rotations.pgm")
