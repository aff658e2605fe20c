"""Convolutional generator mapping a latent vector to a complex image.

The network is a chain of transposed convolutions: leaky ReLU on hidden
layers, tanh on the output. Channel 0 of the output is the real part and
channel 1 the imaginary part of the image.
"""
from dataclasses import dataclass, field

import numpy as np

from .diffops import (LayerWeights, conv_transpose2d, conv_transpose2d_vjp,
                      leaky_relu, leaky_relu_vjp, tanh_act, tanh_vjp)

PRESETS = ("paper340", "desk64")


def preset_geometry(preset, d, latent_dim):
    """Layer geometry as a list of (C_in, C_out, k, stride, padding)."""
    if d < 1 or latent_dim < 1:
        raise ValueError("d and latent_dim must be >= 1")
    if preset == "paper340":
        return [
            (latent_dim, 100, 1, 1, 0),
            (100, 8 * d, 3, 1, 0),
            (8 * d, 8 * d, 3, 1, 0),
            (8 * d, 4 * d, 4, 2, 1),
            (4 * d, 4 * d, 4, 2, 1),
            (4 * d, 4 * d, 3, 2, 0),
            # listed with padding 1, which gives 83; padding 0 gives the listed 85
            (4 * d, 2 * d, 5, 2, 0),
            (2 * d, d, 4, 2, 1),
            (d, d, 4, 2, 1),
            # listed with stride 2; only stride 1 keeps 340 -> 340
            (d, 2, 3, 1, 1),
        ]
    if preset == "desk64":
        return [
            (latent_dim, 100, 1, 1, 0),
            (100, 8 * d, 4, 1, 0),
            (8 * d, 8 * d, 4, 2, 1),
            (8 * d, 4 * d, 4, 2, 1),
            (4 * d, 4 * d, 4, 2, 1),
            (4 * d, 2 * d, 4, 2, 1),
            (2 * d, d, 3, 1, 1),
            (d, 2, 3, 1, 1),
        ]
    raise ValueError(f"unknown preset {preset!r}; expected one of {PRESETS}")


@dataclass
class GeneratorParams:
    layers: list
    latent_dim: int
    d: int = 0
    slope: float = 0.1
    hidden_activation: str = "leaky_relu"
    output_activation: str = "tanh"
    preset: str = "custom"
    out_size: int = field(init=False)

    def __post_init__(self):
        if not self.layers:
            raise ValueError("generator needs at least one layer")
        if self.layers[0].c_in != self.latent_dim:
            raise ValueError(
                f"first layer consumes {self.layers[0].c_in} channels, latent_dim={self.latent_dim}")
        if self.layers[-1].c_out != 2:
            raise ValueError("last layer must emit 2 channels (real, imaginary)")
        n = 1
        for i, (a, b) in enumerate(zip(self.layers[:-1], self.layers[1:])):
            if a.c_out != b.c_in:
                raise ValueError(f"layer {i} emits {a.c_out} channels, layer {i + 1} expects {b.c_in}")
        for lw in self.layers:
            n = lw.output_size(n)
            if n < 1:
                raise ValueError("layer chain produces an empty image")
        self.out_size = n

    @property
    def dtype(self):
        return self.layers[0].kernel.dtype

    def arrays(self):
        """Flat list of trainable arrays [kernel0, bias0, kernel1, ...]."""
        out = []
        for lw in self.layers:
            out.extend((lw.kernel, lw.bias))
        return out

    def with_arrays(self, arrays):
        """New params sharing this geometry but holding ``arrays``."""
        layers = [LayerWeights(arrays[2 * i], arrays[2 * i + 1], lw.stride, lw.padding)
                  for i, lw in enumerate(self.layers)]
        return GeneratorParams(layers, self.latent_dim, self.d, self.slope,
                               self.hidden_activation, self.output_activation, self.preset)

    def astype(self, dtype):
        return self.with_arrays([a.astype(dtype) for a in self.arrays()])

    def copy(self):
        return self.with_arrays([a.copy() for a in self.arrays()])


def count_params(params):
    return sum(lw.n_params() for lw in params.layers)


def generator_from_geometry(geometry, latent_dim, seed=0, dtype=np.float64, **kwargs):
    """Randomly initialized generator for an explicit layer geometry.

    Kernels and biases are drawn uniformly from [-a, a] with
    ``a = sqrt(1 / (C_in * k**2))``.
    """
    rng = np.random.default_rng(seed)
    layers = []
    for c_in, c_out, k, stride, pad in geometry:
        a = np.sqrt(1.0 / (c_in * k * k))
        kernel = rng.uniform(-a, a, size=(c_in, c_out, k, k)).astype(dtype)
        bias = rng.uniform(-a, a, size=c_out).astype(dtype)
        layers.append(LayerWeights(kernel, bias, stride, pad))
    return GeneratorParams(layers, latent_dim, **kwargs)


def build_generator(preset="desk64", d=16, latent_dim=2, seed=0, slope=0.1, dtype=np.float64):
    geometry = preset_geometry(preset, d, latent_dim)
    return generator_from_geometry(geometry, latent_dim, seed=seed, dtype=dtype,
                                   d=d, slope=slope, preset=preset)


def _activate(params, pre, last):
    kind = params.output_activation if last else params.hidden_activation
    if kind == "tanh":
        return tanh_act(pre)
    if kind == "leaky_relu":
        return leaky_relu(pre, params.slope)
    if kind == "identity":
        return pre
    raise ValueError(f"unknown activation {kind!r}")


def _activate_vjp(params, pre, post, g, last):
    kind = params.output_activation if last else params.hidden_activation
    if kind == "tanh":
        return tanh_vjp(post, g)
    if kind == "leaky_relu":
        return leaky_relu_vjp(pre, g, params.slope)
    return g


def _latent_batch(params, Z):
    Z = np.asarray(Z, dtype=params.dtype)
    if Z.ndim == 1:
        Z = Z[None]
    if Z.ndim != 2 or Z.shape[1] != params.latent_dim:
        raise ValueError(f"latents must have length {params.latent_dim}, got shape {Z.shape}")
    if Z.shape[0] == 0:
        raise ValueError("empty latent batch")
    return Z


def forward(params, Z, keep=False):
    """Run the network on latents ``Z`` of shape (B, latent_dim).

    Returns the (B, 2, N, N) output and, if ``keep``, the per-layer
    (input, pre-activation, post-activation) cache needed by ``backward``.
    """
    Z = _latent_batch(params, Z)
    x = Z[:, :, None, None]
    cache = []
    last = len(params.layers) - 1
    for i, lw in enumerate(params.layers):
        pre = conv_transpose2d(x, lw)
        post = _activate(params, pre, i == last)
        if keep:
            cache.append((x, pre, post))
        x = post
    return (x, cache) if keep else x


def backward(params, cache, cotangent):
    """Reverse sweep through a cached forward pass.

    Returns
    -------
    grads : list of arrays matching ``params.arrays()``
    dZ : ndarray (B, latent_dim)
    """
    grads = [None] * (2 * len(params.layers))
    g = cotangent
    last = len(params.layers) - 1
    for i in range(last, -1, -1):
        x, pre, post = cache[i]
        g = _activate_vjp(params, pre, post, g, i == last)
        g, dk, db = conv_transpose2d_vjp(x, params.layers[i], g)
        grads[2 * i], grads[2 * i + 1] = dk, db
    return grads, g[:, :, 0, 0]


def to_complex(out):
    return out[:, 0] + 1j * out[:, 1]


def complex_cotangent(g):
    """Map a complex image gradient to the (real, imaginary) channel cotangent."""
    return np.stack([g.real, g.imag], axis=1)


def generate_batch(params, Z):
    return to_complex(forward(params, Z))


def generate_frame(params, z):
    z = np.asarray(z)
    if z.ndim != 1:
        raise ValueError("generate_frame takes a single latent vector")
    return generate_batch(params, z)[0]


def _perturbed(Z, h):
    """Stack of z + h e_j (first half) and z - h e_j (second half) per z."""
    B, L = Z.shape
    eye = np.eye(L, dtype=Z.dtype) * h
    plus = (Z[:, None, :] + eye[None]).reshape(B * L, L)
    minus = (Z[:, None, :] - eye[None]).reshape(B * L, L)
    return np.concatenate([plus, minus])


def jacobian_frobenius_sq(params, z, h=1e-3):
    """Central-difference estimate of the squared Frobenius norm of dG/dz.

    Sums ``||G(z + h e_j) - G(z - h e_j)||^2 / (2h)^2`` over latent
    coordinates, counting both real and imaginary parts.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    Z = _latent_batch(params, z)
    if Z.shape[0] != 1:
        raise ValueError("jacobian_frobenius_sq takes a single latent vector")
    out = forward(params, _perturbed(Z, h))
    L = Z.shape[1]
    diff = out[:L] - out[L:]
    return float(np.sum(diff.astype(np.float64) ** 2) / (2 * h) ** 2)


def jacobian_penalty(params, Z, h=1e-3, extra=None):
    """Mean Jacobian surrogate over a batch, with gradients.

    Parameters
    ----------
    Z : ndarray (B, L)
    extra : ndarray (B', L), optional
        Latents whose plain forward outputs should be computed in the same
        pass (so data terms can share it). Their outputs are returned and
        their cotangents may be supplied through the returned closure.

    Returns
    -------
    value : float
    outputs : ndarray (B', 2, N, N) or None
    pullback : callable(extra_cotangent=None, weight=1.0) -> (grads, dZ, d_extra)
        Gradients of ``weight * value + <extra_cotangent, outputs>``.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    Z = _latent_batch(params, Z)
    B, L = Z.shape
    pert = _perturbed(Z, h)
    n_extra = 0 if extra is None else len(extra)
    stack = pert if extra is None else np.concatenate([_latent_batch(params, extra), pert])
    out, cache = forward(params, stack, keep=True)
    plus = out[n_extra:n_extra + B * L]
    minus = out[n_extra + B * L:]
    diff = plus - minus
    scale = 1.0 / ((2 * h) ** 2 * B)
    value = float(np.sum(diff.astype(np.float64) ** 2) * scale)

    def pullback(extra_cotangent=None, weight=1.0):
        g = np.zeros_like(out)
        gd = (2.0 * scale * weight) * diff
        g[n_extra:n_extra + B * L] = gd
        g[n_extra + B * L:] = -gd
        if extra_cotangent is not None:
            g[:n_extra] = extra_cotangent
        grads, dstack = backward(params, cache, g)
        dp = dstack[n_extra:n_extra + B * L].reshape(B, L, L).sum(axis=1)
        dm = dstack[n_extra + B * L:].reshape(B, L, L).sum(axis=1)
        return grads, dp + dm, dstack[:n_extra]

    return value, (out[:n_extra] if n_extra else None), pullback


def path_length(params, z1, z2, n_steps=64):
    """Length of the image-space curve G(c(s)) for the straight latent line.

    Uses ``n_steps`` equal segments of s in [0, 1].
    """
    if n_steps < 2:
        raise ValueError("n_steps must be >= 2")
    z1 = np.asarray(z1, dtype=params.dtype)
    z2 = np.asarray(z2, dtype=params.dtype)
    s = np.linspace(0.0, 1.0, n_steps + 1)[:, None]
    pts = z1[None] + s * (z2 - z1)[None]
    imgs = generate_batch(params, pts).astype(np.complex128)
    seg = imgs[1:] - imgs[:-1]
    return float(np.sum(np.sqrt(np.sum(np.abs(seg) ** 2, axis=(1, 2)))))
