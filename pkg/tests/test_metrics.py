import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from skimage.metrics import structural_similarity

from dynrecon.metrics import SER_CAP_DB, evaluate, latent_alignment, psnr, ser, ssim


def series(rng, m=3, n=24):
    return rng.standard_normal((m, n, n)) + 1j * rng.standard_normal((m, n, n))


def test_ser_closed_forms(rng):
    x = series(rng)
    assert ser(x, x) == SER_CAP_DB
    assert ser(x, x / 2) == pytest.approx(20 * np.log10(2), abs=1e-12)
    assert ser(x, np.zeros_like(x)) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        ser(np.zeros((2, 2)), np.ones((2, 2)))
    with pytest.raises(ValueError):
        ser(x, x[:2])


def test_ser_global_phase_invariance(rng):
    x, y = series(rng), series(rng)
    rot = np.exp(1j * 0.83)
    assert ser(x * rot, y * rot) == pytest.approx(ser(x, y), abs=1e-10)


def test_psnr_uniform_error(rng):
    ref = np.abs(series(rng))
    ref /= ref.max()
    assert psnr(ref, ref + 0.1) == pytest.approx(20.0, abs=1e-9)


def test_ssim_identical_and_shuffled(rng):
    x = np.abs(series(rng, m=4))
    assert ssim(x, x) == pytest.approx(1.0)
    y = x.copy()
    y[1] = x[2]
    assert ssim(x, y) < 1.0


def test_ssim_matches_skimage(rng):
    # smooth images so the comparison exercises realistic structure
    from scipy.ndimage import gaussian_filter
    a = gaussian_filter(rng.random((48, 48)), 2)
    b = a + 0.05 * rng.standard_normal(a.shape)
    peak = a.max()
    ours = ssim(a, b)
    ref = structural_similarity(a / peak, np.abs(b) / peak, data_range=1.0, gaussian_weights=True,
                                sigma=1.5, use_sample_covariance=False)
    assert ours == pytest.approx(ref, abs=1e-3)


@settings(max_examples=20, deadline=None)
@given(scale=st.floats(0.01, 100.0), seed=st.integers(0, 1000))
def test_scale_invariance(scale, seed):
    rng = np.random.default_rng(seed)
    a, b = np.abs(series(rng, 2, 16)), np.abs(series(rng, 2, 16))
    assert psnr(scale * a, scale * b) == pytest.approx(psnr(a, b), abs=1e-9)
    assert ssim(scale * a, scale * b) == pytest.approx(ssim(a, b), abs=1e-9)
    assert -1.0 <= ssim(a, b) <= 1.0


def test_alignment_identity_and_mixing(rng):
    ph = rng.uniform(-1, 1, size=(50, 2))
    assert latent_alignment(ph, ph) == pytest.approx((1.0, 1.0))
    mix = np.array([[0.3, 2.0], [-1.1, 0.4]])
    corr = latent_alignment(ph @ mix.T + np.array([5.0, -2.0]), ph)
    assert corr == pytest.approx((1.0, 1.0))


def test_alignment_noise_null():
    rng = np.random.default_rng(0)
    ph = np.stack([np.sin(0.75 * np.arange(1000)), np.sin(0.1 * np.arange(1000))], axis=1)
    # permutation null: correlations from a fit to noise stay small
    corr = latent_alignment(rng.standard_normal((1000, 2)), ph)
    assert max(abs(c) for c in corr) < 0.2


def test_alignment_degenerate_and_short():
    ph = np.random.default_rng(1).uniform(-1, 1, (10, 2))
    assert latent_alignment(np.ones((10, 2)), ph) == (0.0, 0.0)
    with pytest.raises(ValueError):
        latent_alignment(np.zeros((5, 2)), ph[:5])


def test_evaluate_report(rng):
    truth = series(rng, m=8)
    recon = truth + 0.1 * series(rng, m=8)
    rep = evaluate(truth, recon, truth.real[:, :2, 0], truth.real[:, :2, 0])
    assert len(rep.ser_frames) == len(rep.psnr_frames) == len(rep.ssim_frames) == 8
    assert rep.ser_db == pytest.approx(ser(truth, recon))
    assert rep.latent_alignment == pytest.approx((1.0, 1.0))
