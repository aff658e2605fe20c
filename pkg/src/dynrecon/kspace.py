"""Multicoil non-uniform Fourier operators, gridding and Toeplitz embedding.

Conventions
-----------
Images are (N, N) complex arrays indexed [y, x]; pixel index i sits at the
integer offset ``i - N // 2`` from the grid centre. Trajectory column 0 is
k_x (paired with x, the column index) and column 1 is k_y, both in cycles
per sample within [-0.5, 0.5). The forward transform is unnormalized:

    s_c(k) = sum_r coil_c(r) x(r) exp(-2j pi k.r)
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

# exp() tables for the separable NDFT are built in chunks of this many samples
_CHUNK = 8192


@dataclass
class Trajectory:
    """k-space sample locations for one frame.

    ``samples_per_spoke`` is set for radial layouts (consecutive runs of
    that many samples lie on one line through the origin) and is None
    otherwise.
    """

    coords: np.ndarray
    samples_per_spoke: int = None

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 2 or self.coords.shape[1] != 2 or len(self.coords) < 1:
            raise ValueError(f"coords must be (S, 2) with S >= 1, got {self.coords.shape}")
        if not np.all(np.isfinite(self.coords)):
            raise ValueError("non-finite trajectory coordinates")
        if np.any(self.coords < -0.5) or np.any(self.coords >= 0.5):
            raise ValueError("trajectory coordinates must lie in [-0.5, 0.5)")
        if self.samples_per_spoke is not None and len(self.coords) % self.samples_per_spoke:
            raise ValueError("sample count is not a multiple of samples_per_spoke")

    @property
    def n_samples(self):
        return len(self.coords)

    @property
    def n_spokes(self):
        if self.samples_per_spoke is None:
            return None
        return self.n_samples // self.samples_per_spoke


def _offsets(n):
    return np.arange(n) - n // 2


def _bases(coords, n, sign):
    """exp(sign * 2j pi k r) tables, each (S, n), for the x and y axes."""
    r = _offsets(n)
    ex = np.exp(sign * 2j * np.pi * np.outer(coords[:, 0], r))
    ey = np.exp(sign * 2j * np.pi * np.outer(coords[:, 1], r))
    return ex, ey


def _check_coils(image, coils):
    if coils.ndim != 3 or coils.shape[1:] != image.shape[-2:]:
        raise ValueError(f"coil maps {coils.shape} do not match image grid {image.shape}")


def ndft_forward(image, coils, traj):
    """Exact multicoil NDFT; returns samples of shape (C, S)."""
    image = np.asarray(image)
    _check_coils(image, coils)
    n = image.shape[-1]
    weighted = coils * image[None]
    out = np.empty((coils.shape[0], traj.n_samples), dtype=np.complex128)
    for a in range(0, traj.n_samples, _CHUNK):
        ex, ey = _bases(traj.coords[a:a + _CHUNK], n, -1.0)
        # sum_y ey[s, y] m[y, x], then sum_x against ex[s, x]
        t = np.matmul(ey[None], weighted)
        out[:, a:a + _CHUNK] = np.einsum("csx,sx->cs", t, ex)
    return out


def ndft_adjoint(samples, coils, traj):
    """Adjoint of :func:`ndft_forward`; returns an (N, N) image."""
    samples = np.asarray(samples)
    if samples.shape != (coils.shape[0], traj.n_samples):
        raise ValueError(
            f"samples {samples.shape} do not match (coils, S) = {(coils.shape[0], traj.n_samples)}")
    n = coils.shape[-1]
    acc = np.zeros((coils.shape[0], n, n), dtype=np.complex128)
    for a in range(0, traj.n_samples, _CHUNK):
        ex, ey = _bases(traj.coords[a:a + _CHUNK], n, 1.0)
        # acc[c, y, x] += sum_s ey[s, y] s_c[s] ex[s, x]
        acc += np.matmul(ey.T[None], samples[:, a:a + _CHUNK, None] * ex[None])
    return np.sum(np.conj(coils) * acc, axis=0)


def _radial_ramp(traj):
    if traj.samples_per_spoke is None:
        raise ValueError("radial_ramp density compensation needs a radial trajectory")
    ns = traj.samples_per_spoke
    spokes = traj.coords.reshape(-1, ns, 2)
    # every spoke must be a line through the origin
    ref = spokes[np.arange(len(spokes)), np.argmax(np.hypot(spokes[..., 0], spokes[..., 1]), axis=1)]
    cross = spokes[..., 0] * ref[:, None, 1] - spokes[..., 1] * ref[:, None, 0]
    if np.max(np.abs(cross)) > 1e-6:
        raise ValueError("trajectory is not organized as spokes through the origin")
    radius = np.hypot(traj.coords[:, 0], traj.coords[:, 1])
    return np.where(radius < 1.0 / (2 * ns), 1.0 / (4 * ns), radius)


def density_weights(traj, kind="radial_ramp"):
    """Density compensation weights normalized to unit mean."""
    if kind != "radial_ramp":
        raise ValueError(f"unknown density compensation {kind!r}")
    raw = _radial_ramp(traj)
    return raw / raw.mean()


def gridding_scale(traj):
    """Factor turning a mean-1 weighted adjoint into a unit-gain gridding.

    A radial sample at radius |k| on ``P`` spokes with ``ns`` samples each
    represents the k-space area ``|k| * pi / (P * ns)``; with weights
    normalized to mean 1 that area is ``w * mean(raw) * pi / S``.
    """
    raw = _radial_ramp(traj)
    return float(raw.mean() * np.pi / traj.n_samples)


def toeplitz_kernel(traj, weights, n):
    """Spectrum of the (2n, 2n) circulant embedding of A^H W A.

    The point-spread function ``psf(d) = sum_k w_k exp(2j pi k.d)`` is
    evaluated for offsets d in [-(n-1), n-1]; the unused offset -n is left
    at zero so the kernel is real for real weights.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (traj.n_samples,):
        raise ValueError("weights do not match the trajectory")
    m = 2 * n
    d = np.arange(m)
    d = np.where(d < n, d, d - m)  # circular offsets 0..n-1, -n..-1
    psf = np.zeros((m, m), dtype=np.complex128)
    for a in range(0, traj.n_samples, _CHUNK):
        c = traj.coords[a:a + _CHUNK]
        ex = np.exp(2j * np.pi * np.outer(c[:, 0], d))
        ey = np.exp(2j * np.pi * np.outer(c[:, 1], d))
        psf += ey.T @ (weights[a:a + _CHUNK, None] * ex)
    psf[n, :] = 0.0
    psf[:, n] = 0.0
    return np.fft.fft2(psf)


def toeplitz_apply(kernel, coils, image):
    """Apply A^H W A through the circulant embedding.

    ``image`` may be (N, N) or a batch (B, N, N).
    """
    image = np.asarray(image)
    n = coils.shape[-1]
    if kernel.shape != (2 * n, 2 * n):
        raise ValueError(f"kernel {kernel.shape} does not match grid {n} (expected {(2 * n, 2 * n)})")
    if image.shape[-2:] != (n, n):
        raise ValueError(f"image {image.shape} does not match coil grid {n}")
    padded = np.zeros(image.shape[:-2] + (coils.shape[0], 2 * n, 2 * n), dtype=np.complex128)
    padded[..., :n, :n] = coils * image[..., None, :, :]
    conv = np.fft.ifft2(np.fft.fft2(padded) * kernel)[..., :n, :n]
    return np.sum(np.conj(coils) * conv, axis=-3)


@dataclass
class KSpaceFrame:
    """Measured data of one frame with lazily cached derived quantities."""

    trajectory: Trajectory
    samples: np.ndarray
    weights: np.ndarray = None
    scale: float = None
    _gridded: np.ndarray = field(default=None, repr=False)
    _kernel: np.ndarray = field(default=None, repr=False)
    _normal: tuple = field(default=None, repr=False)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.complex128)
        if self.samples.ndim != 2 or self.samples.shape[1] != self.trajectory.n_samples:
            raise ValueError(
                f"samples {self.samples.shape} do not match (C, S={self.trajectory.n_samples})")
        if self.weights is None:
            self.weights = density_weights(self.trajectory)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (self.trajectory.n_samples,) or np.any(self.weights <= 0):
            raise ValueError("density weights must be positive, one per sample")
        if self.scale is None:
            self.scale = gridding_scale(self.trajectory)

    @property
    def n_samples(self):
        return self.trajectory.n_samples

    def kernel(self, n):
        if self._kernel is None:
            self._kernel = toeplitz_kernel(self.trajectory, self.weights, n)
        return self._kernel

    def normal_terms(self, coils):
        """Cached (unweighted Toeplitz kernel, A^H b, ||b||^2) for the exact data term."""
        if self._normal is None:
            n = coils.shape[-1]
            kern = toeplitz_kernel(self.trajectory, np.ones(self.n_samples), n)
            self._normal = (kern, ndft_adjoint(self.samples, coils, self.trajectory),
                            float(np.vdot(self.samples, self.samples).real))
        return self._normal


def exact_residual_norm(frame, coils, image):
    """||A x - b||^2 and its gradient 2 (A^H A x - A^H b), without touching k-space.

    Uses the expansion x^H A^H A x - 2 Re x^H A^H b + ||b||^2 with A^H A
    applied by Toeplitz embedding, which is exact up to rounding.
    """
    kern, atb, energy = frame.normal_terms(coils)
    ata_x = toeplitz_apply(kern, coils, image)
    value = np.vdot(image, ata_x).real - 2.0 * np.vdot(image, atb).real + energy
    return max(float(value), 0.0), 2.0 * (ata_x - atb)


def gridding_recon(frame, coils):
    """Density-compensated adjoint reconstruction g = scale * A^H W b (cached)."""
    if frame._gridded is None:
        frame._gridded = frame.scale * ndft_adjoint(frame.weights * frame.samples, coils,
                                                    frame.trajectory)
    return frame._gridded


def least_squares_recon(frame, coils, n_iter=100, rtol=1e-8):
    """Minimizer of ||A x - b||^2 by conjugate gradients on A^H A x = A^H b.

    Applied to a pooled frame holding every sample of a series this is the
    best static (single-image) fit to the whole acquisition.
    """
    kern, atb, _ = frame.normal_terms(coils)
    n = coils.shape[-1]
    op = LinearOperator((n * n, n * n), dtype=np.complex128,
                        matvec=lambda v: toeplitz_apply(kern, coils, v.reshape(n, n)).ravel())
    x, info = cg(op, atb.ravel(), rtol=rtol, maxiter=n_iter)
    if info < 0:
        raise RuntimeError("conjugate gradients broke down")
    return x.reshape(n, n)


def projection(frame, coils, image):
    """Approximate projection P x = scale * A^H W A x via Toeplitz embedding."""
    return frame.scale * toeplitz_apply(frame.kernel(coils.shape[-1]), coils, image)


@dataclass
class Dataset:
    """Frames of one acquisition, shared coil maps and optional ground truth."""

    frames: list
    coils: np.ndarray
    truth: object = None

    @property
    def n_frames(self):
        return len(self.frames)

    @property
    def grid(self):
        return self.coils.shape[-1]

    @property
    def n_coils(self):
        return self.coils.shape[0]
