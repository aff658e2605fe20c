"""Joint ADAM optimization of generator weights and latents.

Training proceeds coarse-to-fine in time: first a single frame pooling all
measurements, then a few pooled groups, then every frame. Weights are
carried across levels and latents are interpolated in time.
"""
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .diffops import NonFiniteError
from .generator import build_generator, forward, to_complex
from .kspace import Dataset, KSpaceFrame, Trajectory
from .objective import CostBreakdown, image_loss, total_cost

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Non-finite loss during training; carries the state at the failure."""

    def __init__(self, message, history, params, Z):
        super().__init__(message)
        self.history = history
        self.params = params
        self.Z = Z


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(values, beta1=0.9, beta2=0.999, eps=1e-8):
    return AdamState([np.zeros_like(v) for v in values], [np.zeros_like(v) for v in values],
                     0, beta1, beta2, eps)


def adam_step(values, grads, state, lr):
    """One bias-corrected ADAM update.

    Returns new arrays (inputs are not modified) and the advanced state.
    A non-finite gradient rejects the whole step.
    """
    if len(values) != len(grads) or len(values) != len(state.m):
        raise ValueError("values, gradients and optimizer state disagree in length")
    for i, (v, g) in enumerate(zip(values, grads)):
        if v.shape != g.shape or v.shape != state.m[i].shape:
            raise ValueError(f"shape mismatch for array {i}: {v.shape} vs {g.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in array {i}; step rejected")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    out, m_new, v_new = [], [], []
    for v, g, m, s in zip(values, grads, state.m, state.v):
        g = g.astype(v.dtype, copy=False)
        m = b1 * m + (1.0 - b1) * g
        s = b2 * s + (1.0 - b2) * (g * g)
        step = (lr / bc1) * m / (np.sqrt(s / bc2) + state.eps)
        out.append(v - step.astype(v.dtype, copy=False))
        m_new.append(m)
        v_new.append(s)
    return out, AdamState(m_new, v_new, t, b1, b2, state.eps)


@dataclass
class LevelConfig:
    frame_count: int
    epochs: int
    lr_net: float
    lr_latent: float
    # "auto" switches from approx to exact after switch_fraction of the epochs
    loss_mode: str = "auto"


@dataclass
class TrainConfig:
    preset: str = "desk64"
    d: int = 16
    latent_dim: int = 2
    slope: float = 0.1
    lam1: float = 0.0005
    lam2: float = 2.0
    jacobian_step: float = 1e-3
    batch_size: int = 10
    # distance term on this many members of each batch; 0 means all of them
    distance_batch: int = 0
    switch_fraction: float = 0.8
    level1_epochs: int = 1000
    level1_lr_net: float = 1e-3
    level2_epochs: int = 600
    level2_lr_net: float = 5e-4
    level2_lr_latent: float = 5e-3
    level2_divisor: int = 10
    level3_epochs: int = 700
    level3_lr_net: float = 5e-4
    level3_lr_latent: float = 1e-3
    progressive: bool = True
    latent_init_std: float = 0.1
    precision: str = "float64"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def schedule(self, M):
        """Level list for a dataset of ``M`` frames."""
        full = LevelConfig(M, self.level3_epochs, self.level3_lr_net, self.level3_lr_latent)
        if not self.progressive or M == 1:
            return [full]
        levels = [LevelConfig(1, self.level1_epochs, self.level1_lr_net, 0.0)]
        groups = math.ceil(M / self.level2_divisor)
        if 1 < groups < M:
            levels.append(LevelConfig(groups, self.level2_epochs, self.level2_lr_net,
                                      self.level2_lr_latent))
        levels.append(full)
        return levels


@dataclass
class EpochRecord:
    level: int
    epoch: int
    cost: CostBreakdown
    mode: str
    wall_secs: float


@dataclass
class TrainReport:
    history: list = field(default_factory=list)
    level_boundaries: list = field(default_factory=list)
    level_wall: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)


def partition(M, groups):
    """Contiguous runs of near-equal length (longer runs first)."""
    if not 1 <= groups <= M:
        raise ValueError(f"groups must be in [1, {M}], got {groups}")
    return np.array_split(np.arange(M), groups)


def run_centers(runs):
    return np.array([(r[0] + r[-1]) / 2.0 for r in runs])


def pool_frames(dataset, groups):
    """Merge contiguous runs of frames into ``groups`` pooled frames.

    Density weights, gridding images and Toeplitz kernels are recomputed for
    the concatenated trajectories.
    """
    runs = partition(dataset.n_frames, groups)
    if groups == dataset.n_frames:
        return Dataset(list(dataset.frames), dataset.coils, dataset.truth)
    pooled = []
    for run in runs:
        members = [dataset.frames[i] for i in run]
        spokes = {f.trajectory.samples_per_spoke for f in members}
        coords = np.concatenate([f.trajectory.coords for f in members])
        traj = Trajectory(coords, spokes.pop() if len(spokes) == 1 else None)
        samples = np.concatenate([f.samples for f in members], axis=1)
        pooled.append(KSpaceFrame(traj, samples))
    return Dataset(pooled, dataset.coils, None)


def interpolate_latents(Z_coarse, M_fine, centers=None, positions=None):
    """Piecewise-linear temporal interpolation of latents.

    Coarse latents sit at ``centers`` (default: centres of the contiguous
    partition of ``M_fine`` frames into ``len(Z_coarse)`` runs) and are
    evaluated at ``positions`` (default: 0..M_fine-1). Ends are held
    constant.
    """
    Z_coarse = np.atleast_2d(np.asarray(Z_coarse, dtype=np.float64))
    m = len(Z_coarse)
    if m < 1:
        raise ValueError("need at least one coarse latent")
    if positions is None:
        positions = np.arange(M_fine, dtype=np.float64)
    if m == 1:
        return np.repeat(Z_coarse, len(positions), axis=0)
    if centers is None:
        centers = run_centers(partition(M_fine, m))
    return np.stack([np.interp(positions, centers, Z_coarse[:, j])
                     for j in range(Z_coarse.shape[1])], axis=1)


def expand_latents(Z_level, M):
    """Latents of a pooled level evaluated at every original frame."""
    if len(Z_level) == M:
        return np.asarray(Z_level, dtype=np.float64)
    return interpolate_latents(Z_level, M)


def _mean_cost(costs):
    n = len(costs)
    return CostBreakdown(
        sum(c.data for c in costs) / n,
        sum(c.distance for c in costs) / n,
        sum(c.latent for c in costs) / n,
        sum(c.total for c in costs) / n,
        sum(c.n_terms for c in costs),
        all(c.distance_evaluated for c in costs),
    )


def _mode_for(level, epoch, switch_fraction):
    if level.loss_mode != "auto":
        return level.loss_mode
    return "approx" if epoch < math.floor(switch_fraction * level.epochs) else "exact"


def run_level(level, params, Z, dataset, rng, config, level_index=0, monitor=None,
              clock=None):
    """Train on one level of the schedule.

    Parameters
    ----------
    monitor : callable(level_index, epoch, params, Z, record), optional
        Called after every epoch; its run time is excluded from wall-clock
        accounting.
    clock : list with one float, optional
        Running training time shared across levels (seconds).

    Returns
    -------
    params, Z, list of EpochRecord
    """
    clock = clock if clock is not None else [0.0]
    M = dataset.n_frames
    Z = np.array(Z, dtype=np.float64)
    if Z.shape != (M, params.latent_dim):
        raise ValueError(f"latents {Z.shape} do not match {M} frames x {params.latent_dim}")
    net_state = adam_init(params.arrays(), config.adam_beta1, config.adam_beta2, config.adam_eps)
    lat_state = adam_init([Z], config.adam_beta1, config.adam_beta2, config.adam_eps)
    history = []
    for epoch in range(level.epochs):
        start = time.perf_counter()
        mode = _mode_for(level, epoch, config.switch_fraction)
        order = rng.permutation(M)
        costs = []
        for a in range(0, M, config.batch_size):
            batch = order[a:a + config.batch_size]
            try:
                cost, grads, dZ = total_cost(params, Z, dataset.frames, dataset.coils, batch,
                                             config.lam1, config.lam2, mode,
                                             config.jacobian_step, config.distance_batch or None)
            except NonFiniteError as exc:
                raise TrainingDiverged(
                    f"level {level_index + 1}, epoch {epoch}: {exc}", history, params, Z) from exc
            if not np.isfinite(cost.total):
                raise TrainingDiverged(
                    f"non-finite loss at level {level_index + 1}, epoch {epoch}: {cost}",
                    history, params, Z)
            try:
                arrays, net_state = adam_step(params.arrays(), grads, net_state, level.lr_net)
                if level.lr_latent > 0:
                    (Z,), lat_state = adam_step([Z], [dZ], lat_state, level.lr_latent)
            except NonFiniteError as exc:
                raise TrainingDiverged(str(exc), history, params, Z) from exc
            params = params.with_arrays(arrays)
            costs.append(cost)
        clock[0] += time.perf_counter() - start
        record = EpochRecord(level_index + 1, epoch, _mean_cost(costs), mode, clock[0])
        history.append(record)
        log.debug("level %d epoch %d %s total=%.6g", record.level, epoch, mode, record.cost.total)
        if monitor is not None:
            monitor(level_index, epoch, params, Z, record)
    return params, Z, history


def dataset_loss(params, Z, dataset, mode="exact", chunk=25):
    """Mean data term over every frame of ``dataset`` (no gradients)."""
    M = dataset.n_frames
    total = 0.0
    for a in range(0, M, chunk):
        idx = np.arange(a, min(a + chunk, M))
        value, _ = image_loss(to_complex(forward(params, Z[idx])), dataset.frames, idx,
                              dataset.coils, mode)
        total += value * len(idx)
    return total / M


def initial_params(config):
    params = build_generator(config.preset, config.d, config.latent_dim, config.seed,
                             config.slope)
    return params.astype(np.dtype(config.precision))


def train(config, dataset, params=None, monitor=None, on_level_end=None):
    """Run the full schedule.

    Returns
    -------
    params, Z (M, latent_dim), TrainReport
    """
    M = dataset.n_frames
    if M < 1:
        raise ValueError("dataset has no frames")
    rng = np.random.default_rng(config.seed)
    if params is None:
        params = initial_params(config)
    levels = config.schedule(M)
    report = TrainReport()
    clock = [0.0]
    Z = None
    prev_centers = None
    for li, level in enumerate(levels):
        runs = partition(M, level.frame_count)
        centers = run_centers(runs)
        level_data = pool_frames(dataset, level.frame_count)
        if li == 0:
            if len(levels) > 1 and level.lr_latent == 0:
                Z = np.zeros((level.frame_count, config.latent_dim))
            else:
                Z = config.latent_init_std * rng.standard_normal((level.frame_count,
                                                                   config.latent_dim))
        else:
            Z = interpolate_latents(Z, level.frame_count, centers=prev_centers, positions=centers)
        start = clock[0]
        params, Z, hist = run_level(level, params, Z, level_data, rng, config, li, monitor, clock)
        report.history.extend(hist)
        report.level_boundaries.append(len(report.history))
        report.level_wall.append(clock[0] - start)
        prev_centers = centers
        if on_level_end is not None:
            on_level_end(li, params, Z)
    return params, Z, report
