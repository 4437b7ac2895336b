import struct

import numpy as np
import pytest
from scipy import stats

from tifl import data as D
from tifl.transform_ops import InvalidParameterError


@pytest.fixture
def idx_files(tmp_path):
    imgs = np.arange(32, dtype=np.uint8).reshape(2, 4, 4) * 7
    ip, lp = tmp_path / "img.idx", tmp_path / "lab.idx"
    ip.write_bytes(struct.pack(">4I", 0x803, 2, 4, 4) + imgs.tobytes())
    lp.write_bytes(struct.pack(">2I", 0x801, 2) + bytes([3, 9]))
    return ip, lp, imgs


def test_load_idx_exact_values(idx_files):
    ip, lp, imgs = idx_files
    ds = D.load_idx(ip, lp)
    assert ds.patches.shape == (2, 16)
    np.testing.assert_array_equal(ds.patches, imgs.reshape(2, 16) / 255.0)
    np.testing.assert_array_equal(ds.labels, [3, 9])
    assert ds.r == 4


def test_idx_errors(tmp_path, idx_files):
    ip, lp, _ = idx_files
    empty = tmp_path / "empty"
    empty.write_bytes(b"")
    with pytest.raises(D.IdxParseError):
        D.load_idx(empty)
    bad = tmp_path / "bad"
    bad.write_bytes(struct.pack(">4I", 0x802, 1, 2, 2) + bytes(4))
    with pytest.raises(D.BadMagicError):
        D.load_idx(bad)
    short = tmp_path / "short"
    short.write_bytes(struct.pack(">4I", 0x803, 2, 4, 4) + bytes(20))
    with pytest.raises(D.TruncatedPayloadError):
        D.load_idx(short)
    wrong = tmp_path / "wrong"
    wrong.write_bytes(struct.pack(">2I", 0x801, 3) + bytes(3))
    with pytest.raises(D.CountMismatchError):
        D.load_idx(ip, wrong)


def test_idx_round_trip(tmp_path):
    imgs = np.random.default_rng(0).integers(0, 256, (3, 5, 5)).astype(np.uint8)
    D.write_idx_images(tmp_path / "a", imgs)
    np.testing.assert_array_equal(D.read_idx_images(tmp_path / "a"), imgs)


def digits(n=40, seed=0):
    """Blobby synthetic 28x28 'digits' with foreground in the middle."""
    rng = np.random.default_rng(seed)
    X = np.zeros((n, 28, 28))
    for i in range(n):
        y0, x0 = rng.integers(6, 12, 2)
        h, w = rng.integers(8, 14, 2)
        X[i, y0:y0 + h, x0:x0 + w] = rng.uniform(0.5, 1.0)
    return D.PatchDataset(X.reshape(n, -1), np.arange(n) % 10, 28)


def test_variation_determinism_and_provenance():
    base = digits()
    for kind in ("rot", "scale", "trans"):
        a = D.synthesize_variation(base, kind, "random_uniform", seed=5)
        b = D.synthesize_variation(base, kind, "random_uniform", seed=5)
        assert a.patches.tobytes() == b.patches.tobytes()
        assert a.provenance["kind"] == kind and a.provenance["seed"] == 5
        assert a.patches.min() >= 0 and a.patches.max() <= 1
        np.testing.assert_array_equal(a.labels, base.labels)


def test_translation_keeps_all_foreground():
    base = digits(200, seed=1)
    out = D.synthesize_variation(base, "trans", seed=3)
    for v, w in zip(base.patches, out.patches):
        assert np.count_nonzero(v > D.FOREGROUND) == np.count_nonzero(w > D.FOREGROUND)
        np.testing.assert_allclose(np.sort(v[v > 0]), np.sort(w[w > 0]))


def test_translation_of_full_frame_digit_is_identity():
    img = np.zeros((28, 28))
    img[0, 0] = img[27, 27] = 1.0
    img[5:20, 5:20] = 0.6
    base = D.PatchDataset(img.reshape(1, -1), None, 28)
    out = D.synthesize_variation(base, "trans", seed=9)
    np.testing.assert_array_equal(out.patches, base.patches)
    assert tuple(out.provenance["params"][0]) == (0, 0)


def test_scale_factors_are_uniform():
    base = D.PatchDataset(np.zeros((10_000, 784)), None, 28)
    out = D.synthesize_variation(base, "scale", seed=0)
    f = out.provenance["params"]
    assert f.min() >= 0.3 and f.max() <= 1.0
    assert stats.kstest(f, stats.uniform(loc=0.3, scale=0.7).cdf).pvalue > 0.01


def test_background_only_touches_background():
    base = digits(10)
    out = D.synthesize_variation(base, "rot", "random_uniform", seed=0)
    clean = D.synthesize_variation(base, "rot", "none", seed=0)
    fg = clean.patches > D.FOREGROUND
    np.testing.assert_array_equal(out.patches[fg], clean.patches[fg])
    assert out.patches[~fg].mean() > 0.3


def test_variation_rejects_wrong_geometry():
    with pytest.raises(InvalidParameterError):
        D.synthesize_variation(D.PatchDataset(np.zeros((2, 64)), None, 8), "rot")


def test_sample_patches_bounds_and_determinism():
    rng = np.random.default_rng(0)
    imgs = rng.random((7, 20, 15, 3))
    assert len(D.sample_patches(imgs, 0, 5)) == 0
    a = D.sample_patches(imgs, 10_000, 5, seed=3)
    b = D.sample_patches(imgs, 10_000, 5, seed=3)
    np.testing.assert_array_equal(a.patches, b.patches)
    pos = a.provenance["positions"]
    assert pos[:, 1].max() <= 20 - 5 and pos[:, 2].max() <= 15 - 5 and pos.min() >= 0
    i, y, x = pos[17]
    np.testing.assert_array_equal(a.patches[17],
                                  imgs[i, y:y + 5, x:x + 5].transpose(2, 0, 1).ravel())
    with pytest.raises(D.DegenerateDataError):
        D.sample_patches(np.ones((2, 8, 8)), 3, 4)


def test_preprocessing_kinds():
    rng = np.random.default_rng(0)
    X = rng.random((50, 12))
    pre, out = D.fit_apply_preprocessing(D.PatchDataset(X, None, 2, 3), "none")
    np.testing.assert_array_equal(out.patches, X)
    _, out = D.fit_apply_preprocessing(D.PatchDataset(X, None, 2, 3), "per_patch_standardize")
    np.testing.assert_allclose(out.patches.mean(axis=1), 0, atol=1e-10)
    assert out.value_range == "standardized"


def test_zca_whitens_known_covariance():
    rng = np.random.default_rng(1)
    sd = np.array([5.0, 3.0, 2.0, 1.0, 0.5])
    X = rng.normal(size=(20_000, 5)) * sd + 4.0
    pre = D.fit_preprocessing(X, "zca_whiten", standardize=False)
    Z = pre.apply(X)
    np.testing.assert_allclose(Z.mean(axis=0), 0, atol=1e-10)
    np.testing.assert_allclose(np.cov(Z, rowvar=False), np.eye(5), atol=1e-6)
    np.testing.assert_allclose(pre.whiten, pre.whiten.T)
    with pytest.raises(InvalidParameterError):
        pre.apply(np.zeros((2, 4)))


def test_zca_floor_attenuates_small_directions():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(5000, 3)) * [2.0, 1.0, 0.01]
    pre = D.fit_preprocessing(X, "zca_whiten", eps=0.1, standardize=False)
    var = np.var(pre.apply(X), axis=0, ddof=1)
    np.testing.assert_allclose(var[:2], 1.0, atol=1e-6)
    assert var[2] < 0.01


def test_dataset_container_round_trip(tmp_path):
    ds = digits(5)
    D.save_dataset(tmp_path / "d.tifv", ds)
    back = D.load_dataset(tmp_path / "d.tifv")
    np.testing.assert_allclose(back.patches, ds.patches, atol=1e-7)
    np.testing.assert_array_equal(back.labels, ds.labels)
    text = (tmp_path / "d.tifv.provenance").read_text()
    assert "r=28" in text
