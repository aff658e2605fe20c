"""Dynamic analytic phantom with two independent motion factors.

A torso of ellipses translates vertically with a slow respiratory trace
while a blood-pool ellipse dilates with a faster cardiac trace. Data are
acquired along golden-angle radial spokes with smooth synthetic coils.
"""
from dataclasses import dataclass, field

import numpy as np

from .kspace import Dataset, KSpaceFrame, Trajectory, ndft_forward

GOLDEN_ANGLE = np.pi * (np.sqrt(5.0) - 1.0) / 2.0  # 111.246 degrees

# (x0, y0, semi_x, semi_y, rotation, amplitude) in pixels of a 64-pixel grid
DEFAULT_ELLIPSES = (
    (0.0, 0.0, 26.0, 20.0, 0.0, 0.35),      # torso
    (-13.0, -3.0, 7.0, 11.0, 0.1, -0.25),   # left lung
    (13.0, -3.0, 7.0, 11.0, -0.1, -0.25),   # right lung
    (14.0, 12.0, 7.0, 4.0, 0.2, 0.15),      # liver dome
    (0.0, 15.0, 3.5, 3.5, 0.0, 0.35),       # spine
    (-3.0, 3.0, 8.5, 7.5, 0.3, 0.30),       # myocardium
    (-3.0, 3.0, 5.0, 4.2, 0.3, 0.30),       # blood pool
)
BLOOD_POOL = 6


@dataclass
class PhantomConfig:
    N: int = 64
    M: int = 100
    ellipses: tuple = DEFAULT_ELLIPSES
    blood_pool: int = BLOOD_POOL
    cardiac_freq: float = 0.12
    cardiac_depth: float = 0.3
    resp_freq: float = 0.017
    resp_amplitude: float = 3.0
    snr_db: float = 30.0
    n_coils: int = 4
    spokes_per_frame: int = 8
    samples_per_spoke: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.cardiac_freq <= 0 or self.resp_freq <= 0:
            raise ValueError("motion frequencies must be positive")
        if self.cardiac_freq <= self.resp_freq:
            raise ValueError("cardiac frequency must exceed respiratory frequency")
        if self.N < 8 or self.M < 1:
            raise ValueError("need N >= 8 and M >= 1")
        if self.samples_per_spoke % 2:
            raise ValueError("samples_per_spoke must be even")
        s = self.N / 64.0
        half = self.N / 2.0
        for i, (x0, y0, ax, ay, rot, _) in enumerate(self.ellipses):
            grow = 1.0 + self.cardiac_depth if i == self.blood_pool else 1.0
            a, b = ax * s * grow, ay * s * grow
            # half-extents of the rotated ellipse along x and y
            ext_x = np.hypot(a * np.cos(rot), b * np.sin(rot))
            ext_y = np.hypot(a * np.sin(rot), b * np.cos(rot))
            reach_y = abs(y0) * s + ext_y + self.resp_amplitude
            if abs(x0) * s + ext_x >= half or reach_y >= half:
                raise ValueError(f"ellipse {i} leaves the field of view under motion")


@dataclass
class GroundTruth:
    images: np.ndarray
    phases: np.ndarray


def motion_trace(config):
    """(M, 2) array of (cardiac, respiratory) phases in [-1, 1]."""
    t = np.arange(config.M)
    return np.stack([np.sin(2 * np.pi * config.cardiac_freq * t),
                     np.sin(2 * np.pi * config.resp_freq * t)], axis=1)


def _subpixel_grid(n, sub):
    offs = (np.arange(sub) + 0.5) / sub - 0.5
    base = np.arange(n) - n // 2
    fine = (base[:, None] + offs[None, :]).ravel()
    return fine


def ellipse_coverage(n, x0, y0, ax, ay, rot, shift_y=0.0, sub=4):
    """Fraction of each pixel inside the ellipse, from sub x sub point sampling."""
    fine = _subpixel_grid(n, sub)
    y = (fine - shift_y)[:, None] - y0
    x = fine[None, :] - x0
    c, s = np.cos(rot), np.sin(rot)
    u = c * x + s * y
    v = -s * x + c * y
    inside = (u / ax) ** 2 + (v / ay) ** 2 <= 1.0
    return inside.reshape(n, sub, n, sub).mean(axis=(1, 3))


def _phase_map(n, shift_y, sub=4):
    fine = _subpixel_grid(n, sub)
    y = (fine - shift_y)[:, None]
    x = fine[None, :]
    phi = 0.6 * x / n + 0.4 * y / n + 0.3 * (x * x + y * y) / (n * n)
    return np.exp(1j * phi).reshape(n, sub, n, sub).mean(axis=(1, 3))


def phantom_frame(config, cardiac_phase, resp_phase):
    """Render one (N, N) complex frame for the given motion phases."""
    if not (-1.0 <= cardiac_phase <= 1.0 and -1.0 <= resp_phase <= 1.0):
        raise ValueError("motion phases must lie in [-1, 1]")
    n = config.N
    s = n / 64.0
    shift = config.resp_amplitude * resp_phase
    mag = np.zeros((n, n))
    for i, (x0, y0, ax, ay, rot, amp) in enumerate(config.ellipses):
        grow = 1.0 + config.cardiac_depth * cardiac_phase if i == config.blood_pool else 1.0
        mag += amp * ellipse_coverage(n, x0 * s, y0 * s, ax * s * grow, ay * s * grow, rot, shift)
    return mag * _phase_map(n, shift)


def golden_angle_trajectory(frame_idx, spokes_per_frame, samples_per_spoke):
    """Golden-angle radial spokes; global spoke g has angle g * 111.246 deg mod 180."""
    if samples_per_spoke % 2:
        raise ValueError("samples_per_spoke must be even")
    g = frame_idx * spokes_per_frame + np.arange(spokes_per_frame)
    angles = np.mod(g * GOLDEN_ANGLE, np.pi)
    radius = -0.5 + np.arange(samples_per_spoke) / samples_per_spoke
    kx = radius[None, :] * np.cos(angles)[:, None]
    ky = radius[None, :] * np.sin(angles)[:, None]
    coords = np.stack([kx.ravel(), ky.ravel()], axis=1)
    return Trajectory(coords, samples_per_spoke)


def simulate_coilmaps(n_coils, n, seed=0):
    """Smooth coil sensitivities normalized to unit root-sum-of-squares.

    Each coil is a broad Gaussian bump centred on the field-of-view border
    (the centre for a single coil) with a gentle linear phase.
    """
    if n_coils < 1:
        raise ValueError("need at least one coil")
    rng = np.random.default_rng(seed)
    r = np.arange(n) - n // 2
    y, x = np.meshgrid(r, r, indexing="ij")
    width = 0.5 * n
    maps = np.empty((n_coils, n, n), dtype=np.complex128)
    for c in range(n_coils):
        if n_coils == 1:
            cx = cy = 0.0
        else:
            ang = 2 * np.pi * c / n_coils
            cx, cy = 0.5 * n * np.cos(ang), 0.5 * n * np.sin(ang)
        bump = np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * width ** 2))
        slope = rng.uniform(-0.5, 0.5, size=2) * np.pi / n
        maps[c] = bump * np.exp(1j * (slope[0] * x + slope[1] * y))
    rss = np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
    return maps / rss


def acquire(config):
    """Simulate noisy multicoil measurements of the dynamic phantom.

    Returns
    -------
    Dataset with ground truth attached, GroundTruth, coil maps
    """
    phantom_seq, noise_seq = np.random.SeedSequence(config.seed).spawn(2)
    coils = simulate_coilmaps(config.n_coils, config.N, seed=phantom_seq.generate_state(1)[0])
    phases = motion_trace(config)
    images = np.stack([phantom_frame(config, c, r) for c, r in phases])
    trajs = [golden_angle_trajectory(i, config.spokes_per_frame, config.samples_per_spoke)
             for i in range(config.M)]
    clean = [ndft_forward(images[i], coils, trajs[i]) for i in range(config.M)]
    if np.isfinite(config.snr_db):
        total = np.sqrt(sum(np.sum(np.abs(b) ** 2) for b in clean))
        count = sum(b.size for b in clean)
        sigma = total / (np.sqrt(count) * 10 ** (config.snr_db / 20.0))
        rng = np.random.default_rng(noise_seq)
        noisy = []
        for b in clean:
            n = rng.standard_normal(b.shape) + 1j * rng.standard_normal(b.shape)
            noisy.append(b + sigma / np.sqrt(2.0) * n)
    else:
        noisy = clean
    frames = [KSpaceFrame(t, b) for t, b in zip(trajs, noisy)]
    truth = GroundTruth(images, phases)
    return Dataset(frames, coils, truth), truth, coils
