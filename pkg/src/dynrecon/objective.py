"""Training cost: data fidelity, Jacobian (distance) penalty and latent smoothness.

All functions are stateless and return gradients with respect to the
generator arrays (``params.arrays()`` order) and the latents.
"""
from dataclasses import dataclass

import numpy as np

from .generator import (backward, complex_cotangent, forward, jacobian_penalty,
                        to_complex)
from .kspace import (exact_residual_norm, gridding_recon, ndft_adjoint, ndft_forward,
                     projection)

MODES = ("exact", "approx")


@dataclass
class CostBreakdown:
    data: float
    distance: float
    latent: float
    total: float
    n_terms: int
    # the distance term is skipped (reported as 0) when its weight is 0
    distance_evaluated: bool = True


def _batch(batch):
    batch = np.asarray(batch, dtype=np.intp)
    if batch.ndim != 1 or len(batch) == 0:
        raise ValueError("batch must be a nonempty index list")
    return batch


def _exact_term(frame, coils, image):
    """||A x - b||^2 and its image gradient for one frame.

    Frames with at least N^2 samples (pooled levels) go through the
    Toeplitz normal operator, which is much cheaper there; its expanded
    form loses absolute accuracy near a zero residual, so ordinary frames
    use the direct k-space residual.
    """
    if frame.n_samples >= image.size:
        return exact_residual_norm(frame, coils, image)
    r = ndft_forward(image, coils, frame.trajectory) - frame.samples
    return np.vdot(r, r).real, 2.0 * ndft_adjoint(r, coils, frame.trajectory)


def _exact_residuals(images, frames, batch, coils):
    value = 0.0
    grad = np.empty_like(images)
    for j, i in enumerate(batch):
        fr = frames[i]
        v, g = _exact_term(fr, coils, images[j])
        value += v / fr.n_samples
        grad[j] = g / fr.n_samples
    return value / len(batch), grad / len(batch)


def _approx_residuals(images, frames, batch, coils):
    value = 0.0
    grad = np.empty_like(images)
    for j, i in enumerate(batch):
        fr = frames[i]
        if fr.scale is None or fr.weights is None:
            raise ValueError(f"frame {i} lacks density weights for the approximate data term")
        r = projection(fr, coils, images[j]) - gridding_recon(fr, coils)
        value += np.vdot(r, r).real
        # P is Hermitian, so the gradient is 2 P r
        grad[j] = 2.0 * projection(fr, coils, r)
    return value / len(batch), grad / len(batch)


def image_loss(images, frames, batch, coils, mode):
    """Data term on already generated images; returns (value, d/d image)."""
    images = np.asarray(images, dtype=np.complex128)
    if mode == "exact":
        return _exact_residuals(images, frames, batch, coils)
    if mode == "approx":
        return _approx_residuals(images, frames, batch, coils)
    raise ValueError(f"unknown loss mode {mode!r}")


def _data_loss(params, Z, frames, batch, coils, mode):
    batch = _batch(batch)
    out, cache = forward(params, Z[batch], keep=True)
    value, gimg = image_loss(to_complex(out), frames, batch, coils, mode)
    grads, dzb = backward(params, cache, complex_cotangent(gimg).astype(out.dtype))
    dZ = np.zeros(np.shape(Z), dtype=np.float64)
    np.add.at(dZ, batch, dzb)
    return value, grads, dZ


def data_loss_exact(params, Z, frames, batch, coils):
    """Mean over the batch of ||A_i G(z_i) - b_i||^2 / S_i."""
    return _data_loss(params, Z, frames, batch, coils, "exact")


def data_loss_approx(params, Z, frames, batch, coils):
    """Mean over the batch of ||P_i G(z_i) - g_i||^2 with P_i, g_i from gridding."""
    return _data_loss(params, Z, frames, batch, coils, "approx")


def latent_reg(Z):
    """Sum of squared forward differences of the latent trajectory, with gradient."""
    Z = np.asarray(Z, dtype=np.float64)
    grad = np.zeros_like(Z)
    if len(Z) < 2:
        return 0.0, grad
    diff = Z[1:] - Z[:-1]
    grad[:-1] -= 2.0 * diff
    grad[1:] += 2.0 * diff
    return float(np.sum(diff * diff)), grad


def distance_reg(params, Z_batch, h=1e-3):
    """Mean Jacobian surrogate over ``Z_batch`` with gradients (grads, dZ_batch)."""
    value, _, pullback = jacobian_penalty(params, Z_batch, h)
    grads, dz, _ = pullback()
    return value, grads, dz


def total_cost(params, Z, frames, coils, batch, lam1, lam2, mode="exact", h=1e-3,
               distance_batch=None):
    """Full cost on one batch.

    The latent term always covers the whole trajectory; data and distance
    terms cover the batch. The generator is run once on the batch latents
    and their finite-difference neighbours.

    ``distance_batch`` limits the distance term to the first that many
    batch members, an unbiased estimate of the batch mean when batches are
    shuffled. None uses the whole batch.

    Returns
    -------
    CostBreakdown, generator gradients, latent gradient (same shape as Z)
    """
    if lam1 < 0 or lam2 < 0:
        raise ValueError("regularization weights must be nonnegative")
    if mode not in MODES:
        raise ValueError(f"unknown loss mode {mode!r}")
    batch = _batch(batch)
    Zb = Z[batch]
    dZ = np.zeros(Z.shape, dtype=np.float64)
    if lam1 > 0:
        sub = batch if distance_batch is None else batch[:max(1, int(distance_batch))]
        dist, out, pullback = jacobian_penalty(params, Z[sub], h, extra=Zb)
        data, gimg = image_loss(to_complex(out), frames, batch, coils, mode)
        cot = complex_cotangent(gimg).astype(out.dtype)
        grads, dzd, dzb = pullback(cot, weight=lam1)
        np.add.at(dZ, sub, dzd)
        np.add.at(dZ, batch, dzb)
    else:
        dist = 0.0
        data, grads, dzb = _data_loss(params, Z, frames, batch, coils, mode)
        dZ += dzb
    lat, glat = latent_reg(Z)
    dZ += lam2 * glat
    total = data + lam1 * dist + lam2 * lat
    cost = CostBreakdown(data, dist, lat, total, len(batch), distance_evaluated=lam1 > 0)
    return cost, grads, dZ
