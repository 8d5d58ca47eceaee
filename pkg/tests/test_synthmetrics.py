import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lge_synthlab.errors import (
    DimensionMismatch,
    MalformedFeatureFile,
    TooFewSamples,
    VolumeTooSmall,
    ZeroMse,
)
from lge_synthlab.synthmetrics import (
    FEATURE_DIM,
    FeatureMoments,
    FeatureSet,
    MsSsimConfig,
    extract_features,
    fid,
    load_features,
    mmd2,
    moments,
    ms_ssim,
    psnr,
    save_features,
)
from lge_synthlab.volcore import Volume3D
from oracles import dense_ms_ssim, eig_fid, loop_mmd2, random_psd

SMALL = MsSsimConfig(win_size=7)


# --- PSNR --------------------------------------------------------------------

def test_psnr_constructed_mse(rng):
    a = rng.random((8, 8, 8))
    assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)


def test_psnr_identical_raises(rng):
    a = rng.random((2, 2, 2))
    with pytest.raises(ZeroMse):
        psnr(a, a)


@settings(max_examples=25, deadline=None)
@given(st.floats(1e-3, 1.0), st.floats(1.01, 4.0))
def test_psnr_strictly_decreasing(scale, growth):
    rng = np.random.default_rng(0)
    a = rng.random((4, 4, 4))
    noise = rng.standard_normal((4, 4, 4))
    assert psnr(a, a + growth * scale * noise) < psnr(a, a + scale * noise)


# --- MS-SSIM -----------------------------------------------------------------

def test_ms_ssim_self_and_constant():
    rng = np.random.default_rng(1)
    a = rng.random((32, 32, 32))
    assert ms_ssim(a, a, SMALL) == pytest.approx(1.0, abs=1e-6)
    c = np.full((44, 44, 44), 0.3)
    assert ms_ssim(c, c) == pytest.approx(1.0, abs=1e-12)


def test_ms_ssim_default_window_on_44_cube():
    rng = np.random.default_rng(2)
    a = rng.random((44, 44, 44))
    b = np.clip(a + 0.1 * rng.standard_normal(a.shape), 0, 1)
    s = ms_ssim(a, b)
    assert 0 < s < 1
    assert ms_ssim(b, a) == pytest.approx(s, abs=1e-12)


def test_ms_ssim_matches_dense_oracle():
    rng = np.random.default_rng(3)
    a = rng.random((32, 32, 32))
    b = np.clip(0.6 * a + 0.4 * rng.random(a.shape), 0, 1)
    assert ms_ssim(a, b, SMALL) == pytest.approx(dense_ms_ssim(a, b, SMALL), abs=1e-5)


def test_ms_ssim_too_small_names_axis_and_scale():
    with pytest.raises(VolumeTooSmall, match="axis 0 .* scale 3"):
        ms_ssim(np.zeros((32, 64, 64)), np.zeros((32, 64, 64)))


def test_ms_ssim_renormalize_flag():
    cfg = MsSsimConfig(renormalize=True)
    assert cfg.effective_weights().sum() == pytest.approx(1.0)
    assert MsSsimConfig().effective_weights().sum() == pytest.approx(0.6305)


# --- features ----------------------------------------------------------------

def test_features_constant_volume():
    f = extract_features(np.full((16, 16, 8), 0.5))
    assert f.shape == (FEATURE_DIM,) == (296,)
    np.testing.assert_allclose(f[:292], 0.5)
    np.testing.assert_allclose(f[292:], [0.5, 0.0, 0.5, 0.5])


def test_features_half_split():
    a = np.zeros((16, 8, 4))
    a[8:] = 1.0
    f = extract_features(Volume3D(a))
    fine = f[:256].reshape(8, 8, 4)
    assert np.all(fine[:4] == 0) and np.all(fine[4:] == 1)
    mid = f[256:288].reshape(4, 4, 2)
    assert np.all(mid[:2] == 0) and np.all(mid[2:] == 1)
    np.testing.assert_array_equal(f[288:292], [0, 0, 1, 1])


# --- moments / FID / MMD ---------------------------------------------------

def test_moments_two_points_and_identical_rows():
    m = moments(FeatureSet(np.array([[0.0, 0.0], [2.0, 0.0]])))
    np.testing.assert_array_equal(m.mu, [1, 0])
    np.testing.assert_array_equal(m.sigma, [[2, 0], [0, 0]])
    m = moments(FeatureSet(np.ones((5, 3))))
    assert not m.sigma.any()
    with pytest.raises(TooFewSamples):
        moments(FeatureSet(np.ones((1, 3))))


def test_moments_two_pass_oracle(rng):
    x = rng.standard_normal((50, 5))
    m = moments(FeatureSet(x))
    mu = [sum(x[:, j]) / 50 for j in range(5)]
    cov = np.array([[sum((x[i, a] - mu[a]) * (x[i, b] - mu[b]) for i in range(50)) / 49
                     for b in range(5)] for a in range(5)])
    np.testing.assert_allclose(m.mu, mu, atol=1e-12)
    np.testing.assert_allclose(m.sigma, cov, atol=1e-10)


def test_fid_closed_forms():
    eye = np.eye(2)
    assert fid(FeatureMoments([0, 0], eye), FeatureMoments([1, 0], eye)) == pytest.approx(1.0, abs=1e-8)
    assert fid(FeatureMoments([0.0], [[4.0]]), FeatureMoments([0.0], [[1.0]])) == pytest.approx(1.0, abs=1e-10)
    with pytest.raises(DimensionMismatch):
        fid(FeatureMoments([0.0], [[1.0]]), FeatureMoments([0, 0], eye))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 20), st.integers(1, 16))
def test_fid_matches_eigen_oracle_and_is_symmetric(seed, d):
    rng = np.random.default_rng(seed)
    r = FeatureMoments(rng.standard_normal(d), random_psd(rng, d))
    g = FeatureMoments(rng.standard_normal(d), random_psd(rng, d))
    value = fid(r, g)
    oracle = eig_fid(r.mu, r.sigma, g.mu, g.sigma)
    assert value == pytest.approx(oracle, rel=1e-6, abs=1e-9)
    assert fid(g, r) == pytest.approx(value, abs=1e-8)
    assert fid(r, r) == pytest.approx(0.0, abs=1e-8)


def test_fid_rank_deficient_and_eps():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((4, 10))
    y = rng.standard_normal((4, 10)) + 0.5
    r, g = moments(FeatureSet(x)), moments(FeatureSet(y))
    assert fid(r, g) >= 0
    assert fid(r, g, eps=1e-6) >= 0


def test_mmd_negative_fixture():
    x = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert mmd2(x, x) == -1.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 20), st.integers(2, 16), st.integers(2, 16), st.integers(1, 8))
def test_mmd_matches_double_loop(seed, n, m, d):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d))
    y = rng.standard_normal((m, d))
    dot = lambda a, b: float(np.dot(a, b))  # noqa: E731
    assert mmd2(x, y) == pytest.approx(loop_mmd2(x, y, dot), abs=1e-12, rel=1e-12)
    assert mmd2(y, x) == pytest.approx(mmd2(x, y), abs=1e-12)
    rbf = lambda a, b: float(np.exp(-0.3 * np.sum((a - b) ** 2)))  # noqa: E731
    assert mmd2(x, y, "rbf", 0.3) == pytest.approx(loop_mmd2(x, y, rbf), abs=1e-12)


def test_mmd_same_distribution_small():
    rng = np.random.default_rng(5)
    x, y = rng.standard_normal((400, 4)), rng.standard_normal((400, 4))
    scale = np.mean(np.sum(x * x, axis=1))
    assert abs(mmd2(x, y)) < 0.05 * scale


# --- FEAT / CSV -----------------------------------------------------------------

@pytest.mark.parametrize("fmt, name", [("feat", "f.feat"), ("csv", "f.csv")])
def test_feature_round_trip(tmp_path, rng, fmt, name):
    rows = rng.random((3, 5)).astype(np.float32).astype(np.float64)
    save_features(FeatureSet(rows), tmp_path / name, format=fmt)
    np.testing.assert_array_equal(load_features(tmp_path / name).rows, rows)


def test_feat_layout(tmp_path):
    save_features(FeatureSet(np.array([[1.0, 2.0]])), tmp_path / "x.feat")
    raw = (tmp_path / "x.feat").read_bytes()
    assert raw[:4] == b"FEAT"
    assert struct.unpack_from("<HII", raw, 4) == (1, 1, 2)
    assert struct.unpack_from("<2f", raw, 14) == (1.0, 2.0)


def test_feat_errors(tmp_path):
    p = tmp_path / "bad.feat"
    p.write_bytes(b"FEAT" + struct.pack("<HII", 1, 0, 4))
    with pytest.raises(MalformedFeatureFile, match="n=0"):
        load_features(p)
    p.write_bytes(b"FEAT" + struct.pack("<HII", 1, 2, 2) + b"\x00" * 10)
    with pytest.raises(MalformedFeatureFile, match="expected 16 bytes, found 10"):
        load_features(p)
