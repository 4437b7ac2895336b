import numpy as np
import pytest

from tifl import tiae, tirbm, tiomp, transform_ops as tops


def tiny_transforms(S: int = 2, dim: int = 6):
    """1-d shift set on ``dim`` pixels with offsets 0, 1, ..., S-1."""
    ts = tuple(tops.make_shift_1d(dim, s) for s in range(S))
    return tops.TransformSet(ts, dim, dim)


def random_tirbm(rng, S=2, dim=6, K=2, scale=0.5, visible="binary", ts=None):
    ts = ts or tiny_transforms(S, dim)
    return tirbm.TirbmModel(rng.normal(0, scale, (ts.D2, K)),
                            rng.normal(0, scale, (K, len(ts))),
                            rng.normal(0, scale, ts.D1), ts, visible)


def random_tiae(rng, S=2, dim=6, K=3, scale=0.5, output="sigmoid_cross_entropy"):
    ts = tiny_transforms(S, dim)
    return tiae.TiaeModel(rng.normal(0, scale, (ts.D2, K)),
                          rng.normal(0, scale, (K, S)),
                          rng.normal(0, scale, ts.D1), ts, output)


def random_pixel_transforms(rng, S=3, r=5, w=4):
    """A small mixed 2-d transform set (translation, rotation, scaling)."""
    members = [tops.make_translation_2d(r, w, 1, 0),
               tops.make_scaling_2d(r, w, 0, 1),
               tops.make_translation_2d(r, w, 0, 1)][:S]
    return tops.TransformSet(tuple(members), r, w)


def central_diff(f, x, eps=1e-6):
    """Central finite-difference gradient of scalar ``f`` at array ``x``."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        fp = f(x)
        x[i] = old - eps
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g


def rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-300)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
