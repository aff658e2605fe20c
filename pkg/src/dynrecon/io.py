"""Run configuration, binary containers and result export.

Configuration files hold one ``key = value`` per line with ``#`` comments.
Datasets use the GSTM container and trained models the GSCK container,
both little-endian with 32-bit fields.
"""
import io as _io
import math
import struct
from dataclasses import fields

import numpy as np

from .diffops import LayerWeights
from .generator import GeneratorParams
from .kspace import Dataset, KSpaceFrame, Trajectory
from .phantom import GroundTruth, PhantomConfig
from .trainer import TrainConfig

GSTM_MAGIC = b"GSTM1\0"
GSCK_MAGIC = b"GSCK1\0"
GSTM_VERSION = 1
GSCK_VERSION = 1
FLAG_TRUTH = 1

_ACTIVATIONS = ("leaky_relu", "tanh", "identity")
_PRESET_CODES = ("custom", "desk64", "paper340")


class ConfigError(ValueError):
    """Malformed configuration text; ``line`` is 1-based (0 when not line-specific)."""

    def __init__(self, message, line=0):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


class FormatError(ValueError):
    """Corrupt or mismatched binary container."""


# ---------------------------------------------------------------- config

PHANTOM_KEYS = ("N", "M", "spokes_per_frame", "samples_per_spoke", "n_coils", "snr_db",
                "cardiac_freq", "cardiac_depth", "resp_freq", "resp_amplitude")
TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig) if f.name != "seed")


def _defaults():
    out = {"seed": 0}
    pc = PhantomConfig()
    for k in PHANTOM_KEYS:
        out[k] = getattr(pc, k)
    tc = TrainConfig()
    for k in TRAIN_KEYS:
        out[k] = getattr(tc, k)
    return out


DEFAULTS = _defaults()


def _parse_value(key, text, line):
    default = DEFAULTS[key]
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false"):
                raise ValueError("expected true or false")
            return low == "true"
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            value = float(text)
            if math.isnan(value):
                raise ValueError("NaN is not allowed")
            return value
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {text!r} ({exc})", line) from None
    if not text:
        raise ConfigError(f"empty value for {key!r}", line)
    return text


def parse_config(text):
    """Parse configuration text into a full dict (defaults filled in)."""
    cfg = dict(DEFAULTS)
    seen = set()
    for n, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", n)
        key, value = (s.strip() for s in body.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"unknown key {key!r}", n)
        if key in seen:
            raise ConfigError(f"duplicate key {key!r}", n)
        seen.add(key)
        cfg[key] = _parse_value(key, value, n)
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    """Build the phantom and training configs once to surface range errors."""
    try:
        phantom_config(cfg)
        tc = train_config(cfg)
        if tc.precision not in ("float32", "float64"):
            raise ValueError("precision must be float32 or float64")
        if tc.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if tc.distance_batch < 0:
            raise ValueError("distance_batch must be >= 0")
        if not 0.0 <= tc.switch_fraction <= 1.0:
            raise ValueError("switch_fraction must lie in [0, 1]")
        if tc.preset not in ("desk64", "paper340"):
            raise ValueError(f"unknown preset {tc.preset!r}")
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_config(cfg):
    """Canonical text form: every key, sorted, one per line."""
    return "".join(f"{k} = {_format_value(cfg[k])}\n" for k in sorted(cfg))


def load_config(path=None):
    if path is None:
        return dict(DEFAULTS)
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def phantom_config(cfg):
    return PhantomConfig(seed=cfg["seed"], **{k: cfg[k] for k in PHANTOM_KEYS})


def train_config(cfg):
    return TrainConfig(seed=cfg["seed"], **{k: cfg[k] for k in TRAIN_KEYS})


# ------------------------------------------------------------- primitives

def _u32(fh, *values):
    fh.write(struct.pack(f"<{len(values)}I", *values))


def _read_exact(fh, n):
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated container: wanted {n} bytes, got {len(data)}")
    return data


def _read_u32(fh, count):
    return struct.unpack(f"<{count}I", _read_exact(fh, 4 * count))


def _write_f32(fh, arr):
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_f32(fh, count):
    return np.frombuffer(_read_exact(fh, 4 * count), dtype="<f4").astype(np.float32)


def _write_c64(fh, arr):
    arr = np.asarray(arr)
    inter = np.stack([arr.real, arr.imag], axis=-1)
    _write_f32(fh, inter)


def _read_c64(fh, shape):
    n = int(np.prod(shape))
    flat = _read_f32(fh, 2 * n).reshape(n, 2)
    return (flat[:, 0] + 1j * flat[:, 1]).astype(np.complex64).reshape(shape)


def _check_magic(fh, magic):
    got = fh.read(len(magic))
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}")


# ------------------------------------------------------------------ GSTM

def _infer_spoke_length(coords):
    """Samples per spoke for radial trajectories stored without that field.

    Each spoke starts at radius 0.5 (on the -0.5 edge); the gap between
    such starting points is the spoke length.
    """
    r = np.hypot(coords[:, 0].astype(np.float64), coords[:, 1].astype(np.float64))
    starts = np.flatnonzero(np.abs(r - 0.5) < 1e-6)
    if len(starts) < 1 or starts[0] != 0:
        return None
    n = len(coords)
    step = starts[1] - starts[0] if len(starts) > 1 else n
    if step < 2 or n % step or not np.array_equal(starts, np.arange(0, n, step)):
        return None
    return int(step)


def write_dataset(path_or_fh, dataset, truth=None):
    """Write a GSTM container. All frames must share one sample count."""
    truth = truth if truth is not None else dataset.truth
    M = dataset.n_frames
    N = dataset.grid
    C = dataset.n_coils
    counts = {f.n_samples for f in dataset.frames}
    if len(counts) != 1:
        raise FormatError("GSTM requires every frame to have the same sample count")
    S = counts.pop()
    flags = FLAG_TRUTH if truth is not None else 0
    fh, close = _open(path_or_fh, "wb")
    try:
        fh.write(GSTM_MAGIC)
        _u32(fh, GSTM_VERSION, N, M, C, S, flags)
        for f in dataset.frames:
            _write_f32(fh, f.trajectory.coords)
        for f in dataset.frames:
            _write_c64(fh, f.samples)
        _write_c64(fh, dataset.coils)
        if truth is not None:
            _write_c64(fh, truth.images)
            _write_f32(fh, truth.phases)
    finally:
        if close:
            fh.close()


def read_dataset(path_or_fh):
    """Read a GSTM container into a Dataset (truth attached when present)."""
    fh, close = _open(path_or_fh, "rb")
    try:
        _check_magic(fh, GSTM_MAGIC)
        version, N, M, C, S, flags = _read_u32(fh, 6)
        if version != GSTM_VERSION:
            raise FormatError(f"unsupported GSTM version {version}")
        if M < 1 or N < 1 or C < 1 or S < 1:
            raise FormatError("empty dimension in GSTM header")
        coords = [_read_f32(fh, 2 * S).reshape(S, 2) for _ in range(M)]
        samples = [_read_c64(fh, (C, S)) for _ in range(M)]
        coils = _read_c64(fh, (C, N, N))
        truth = None
        if flags & FLAG_TRUTH:
            images = _read_c64(fh, (M, N, N))
            phases = _read_f32(fh, 2 * M).reshape(M, 2)
            truth = GroundTruth(images, phases)
        if fh.read(1):
            raise FormatError("trailing bytes after GSTM payload")
    finally:
        if close:
            fh.close()
    frames = [KSpaceFrame(Trajectory(c, _infer_spoke_length(c)), b)
              for c, b in zip(coords, samples)]
    return Dataset(frames, coils, truth)


# ------------------------------------------------------------------ GSCK

def write_checkpoint(path_or_fh, params, Z):
    """Write generator weights and latents as a GSCK container.

    Layout after the magic: u32 version, u32 layer count, u32 latent_dim,
    u32 hidden/output activation codes, f32 slope, u32 preset code, u32 d;
    per layer u32 (C_in, C_out, k, stride, padding) then f32 kernel and
    bias; finally u32 (M, latent_dim) and the f32 latents.
    """
    Z = np.asarray(Z)
    fh, close = _open(path_or_fh, "wb")
    try:
        fh.write(GSCK_MAGIC)
        _u32(fh, GSCK_VERSION, len(params.layers), params.latent_dim,
             _ACTIVATIONS.index(params.hidden_activation),
             _ACTIVATIONS.index(params.output_activation))
        _write_f32(fh, np.array([params.slope]))
        preset = params.preset if params.preset in _PRESET_CODES else "custom"
        _u32(fh, _PRESET_CODES.index(preset), params.d)
        for lw in params.layers:
            _u32(fh, lw.c_in, lw.c_out, lw.k, lw.stride, lw.padding)
            _write_f32(fh, lw.kernel)
            _write_f32(fh, lw.bias)
        _u32(fh, Z.shape[0], Z.shape[1])
        _write_f32(fh, Z)
    finally:
        if close:
            fh.close()


def read_checkpoint(path_or_fh):
    """Read a GSCK container; returns (GeneratorParams in float32, Z float32)."""
    fh, close = _open(path_or_fh, "rb")
    try:
        _check_magic(fh, GSCK_MAGIC)
        version, n_layers, latent_dim, hid, out = _read_u32(fh, 5)
        if version != GSCK_VERSION:
            raise FormatError(f"unsupported GSCK version {version}")
        if hid >= len(_ACTIVATIONS) or out >= len(_ACTIVATIONS):
            raise FormatError("unknown activation code")
        slope = float(_read_f32(fh, 1)[0])
        preset_code, d = _read_u32(fh, 2)
        if preset_code >= len(_PRESET_CODES):
            raise FormatError("unknown preset code")
        layers = []
        for _ in range(n_layers):
            c_in, c_out, k, stride, pad = _read_u32(fh, 5)
            kernel = _read_f32(fh, c_in * c_out * k * k).reshape(c_in, c_out, k, k)
            bias = _read_f32(fh, c_out)
            layers.append(LayerWeights(kernel, bias, stride, pad))
        m, l = _read_u32(fh, 2)
        Z = _read_f32(fh, m * l).reshape(m, l)
        if fh.read(1):
            raise FormatError("trailing bytes after GSCK payload")
    finally:
        if close:
            fh.close()
    try:
        params = GeneratorParams(layers, latent_dim, d, slope, _ACTIVATIONS[hid],
                                 _ACTIVATIONS[out], _PRESET_CODES[preset_code])
    except ValueError as exc:
        raise FormatError(f"inconsistent layer list: {exc}") from None
    return params, Z


def _open(path_or_fh, mode):
    if isinstance(path_or_fh, (_io.IOBase,)) or hasattr(path_or_fh, "write" if "w" in mode else "read"):
        return path_or_fh, False
    return open(path_or_fh, mode), True


# ---------------------------------------------------------------- export

def write_pgm(path, image, vmax):
    """16-bit binary PGM of ``|image|`` scaled so ``vmax`` maps to 65535."""
    mag = np.abs(np.asarray(image))
    if mag.ndim != 2:
        raise ValueError("PGM export takes a single 2-D image")
    scaled = np.zeros_like(mag) if vmax <= 0 else np.clip(mag / vmax, 0.0, 1.0)
    data = np.round(scaled * 65535.0).astype(">u2")
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5" or len(parts) < 5:
        raise FormatError("not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    dtype = ">u2" if maxval > 255 else "u1"
    body = raw[len(raw) - w * h * np.dtype(dtype).itemsize:]
    return np.frombuffer(body, dtype=dtype).reshape(h, w)


LOSS_COLUMNS = ("level", "epoch", "data", "distance", "latent", "total", "wall_secs")


def loss_row(record):
    c = record.cost
    vals = ",".join(repr(float(v)) for v in (c.data, c.distance, c.latent, c.total,
                                              record.wall_secs))
    return f"{record.level},{record.epoch},{vals}\n"


def write_latents_csv(path, Z):
    Z = np.asarray(Z)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("frame," + ",".join(f"z{j + 1}" for j in range(Z.shape[1])) + "\n")
        for i, z in enumerate(Z):
            fh.write(f"{i}," + ",".join(repr(float(v)) for v in z) + "\n")


REPORT_FIELDS = ("frame", "ser_db", "psnr_db", "ssim", "grid_ser_db", "grid_psnr_db",
                 "grid_ssim")


def write_report(path, report, baseline, alignment):
    """EvalReport as CSV: an ``all`` row, then one row per frame.

    A trailing ``alignment`` row carries (corr_cardiac, corr_resp) in the
    first two metric columns.
    """
    def fmt(*vals):
        return ",".join(repr(float(v)) for v in vals)

    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(REPORT_FIELDS) + "\n")
        fh.write("all," + fmt(report.ser_db, report.psnr_db, report.ssim,
                               baseline.ser_db, baseline.psnr_db, baseline.ssim) + "\n")
        for i in range(len(report.ser_frames)):
            fh.write(f"{i}," + fmt(report.ser_frames[i], report.psnr_frames[i],
                                   report.ssim_frames[i], baseline.ser_frames[i],
                                   baseline.psnr_frames[i], baseline.ssim_frames[i]) + "\n")
        fh.write("alignment," + fmt(alignment[0], alignment[1], *[float("nan")] * 4) + "\n")


def read_report(path):
    """Parse a report CSV into {"all": {...}, "frames": [...], "alignment": (a, b)}."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    header = lines[0].split(",")
    if tuple(header) != REPORT_FIELDS:
        raise FormatError("unexpected report header")
    out = {"frames": []}
    for line in lines[1:]:
        key, *vals = line.split(",")
        vals = [float(v) for v in vals]
        if key == "all":
            out["all"] = dict(zip(REPORT_FIELDS[1:], vals))
        elif key == "alignment":
            out["alignment"] = (vals[0], vals[1])
        else:
            out["frames"].append(dict(zip(REPORT_FIELDS[1:], vals)))
    return out
