"""Image-quality and latent-alignment metrics."""
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

SER_CAP_DB = 300.0


@dataclass
class EvalReport:
    ser_db: float
    psnr_db: float
    ssim: float
    ser_frames: np.ndarray = field(repr=False)
    psnr_frames: np.ndarray = field(repr=False)
    ssim_frames: np.ndarray = field(repr=False)
    latent_alignment: tuple = (float("nan"), float("nan"))


def _pair(ref, recon):
    ref = np.asarray(ref)
    recon = np.asarray(recon)
    if ref.shape != recon.shape:
        raise ValueError(f"shape mismatch: {ref.shape} vs {recon.shape}")
    return ref, recon


def ser(ref, recon):
    """Signal-to-error ratio 20 log10(||ref|| / ||ref - recon||) in dB."""
    ref, recon = _pair(ref, recon)
    signal = np.linalg.norm(ref.ravel())
    if signal == 0:
        raise ValueError("reference has zero norm")
    err = np.linalg.norm((ref - recon).ravel())
    if err < 1e-15 * signal:
        return SER_CAP_DB
    return float(20.0 * np.log10(signal / err))


def _magnitudes(ref, recon):
    ref, recon = _pair(ref, recon)
    peak = np.max(np.abs(ref))
    if peak == 0:
        raise ValueError("reference has zero norm")
    return np.abs(ref) / peak, np.abs(recon) / peak


def psnr(ref, recon):
    """PSNR of magnitude images scaled by the reference maximum."""
    a, b = _magnitudes(ref, recon)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return SER_CAP_DB
    return float(10.0 * np.log10(1.0 / mse))


def _ssim_frame(a, b, sigma=1.5, k1=0.01, k2=0.03):
    # 11x11 Gaussian window: radius 5 = truncate * sigma
    filt = dict(sigma=sigma, truncate=5.0 / sigma, mode="reflect")
    c1, c2 = k1 ** 2, k2 ** 2
    mu_a, mu_b = gaussian_filter(a, **filt), gaussian_filter(b, **filt)
    saa = gaussian_filter(a * a, **filt) - mu_a ** 2
    sbb = gaussian_filter(b * b, **filt) - mu_b ** 2
    sab = gaussian_filter(a * b, **filt) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2)
    # valid-window average: drop the border where the window leaves the image
    r = 5
    smap = num / den
    if min(a.shape) > 2 * r:
        smap = smap[r:-r, r:-r]
    return float(np.mean(smap))


def ssim(ref, recon):
    """Mean SSIM over frames of magnitude images (data range 1 after scaling)."""
    a, b = _magnitudes(ref, recon)
    if a.ndim == 2:
        return _ssim_frame(a, b)
    return float(np.mean([_ssim_frame(x, y) for x, y in zip(a, b)]))


def latent_alignment(Z, phases):
    """Correlation of an affine fit from latents to the true motion phases.

    Returns (corr_cardiac, corr_resp); components that cannot be predicted
    (constant latents or constant prediction) are reported as 0.
    """
    Z = np.asarray(Z, dtype=np.float64)
    phases = np.asarray(phases, dtype=np.float64)
    if len(Z) != len(phases):
        raise ValueError("latents and phases differ in length")
    if len(Z) < 8:
        raise ValueError("latent alignment needs at least 8 frames")
    if np.allclose(Z, Z[0]):
        return (0.0, 0.0)
    design = np.column_stack([Z, np.ones(len(Z))])
    coef, *_ = np.linalg.lstsq(design, phases, rcond=None)
    pred = design @ coef
    out = []
    for j in range(phases.shape[1]):
        p, t = pred[:, j], phases[:, j]
        if np.std(p) < 1e-12 * max(np.std(t), 1e-300) or np.std(t) == 0:
            out.append(0.0)
        else:
            out.append(float(np.corrcoef(p, t)[0, 1]))
    return tuple(out)


def evaluate(truth_images, recon, Z=None, phases=None):
    """Whole-series and per-frame metrics."""
    truth_images, recon = _pair(truth_images, recon)
    frames_ser = np.array([ser(t, r) for t, r in zip(truth_images, recon)])
    frames_psnr = np.array([psnr(t, r) for t, r in zip(truth_images, recon)])
    frames_ssim = np.array([ssim(t, r) for t, r in zip(truth_images, recon)])
    align = (float("nan"), float("nan"))
    if Z is not None and phases is not None and len(Z) >= 8:
        align = latent_alignment(Z, phases)
    return EvalReport(ser(truth_images, recon), psnr(truth_images, recon),
                      ssim(truth_images, recon), frames_ser, frames_psnr, frames_ssim, align)
