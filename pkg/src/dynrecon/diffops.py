"""Differentiable primitives used by the generator.

Each primitive has a forward function and a vector-Jacobian product (vjp).
Tensors are real arrays shaped (C, H, W) or batched (B, C, H, W); the
generator always works on batches.
"""
from dataclasses import dataclass

import numpy as np

from . import backend


@dataclass
class LayerWeights:
    """Weights of one transposed-convolution layer.

    Attributes
    ----------
    kernel : ndarray, shape (C_in, C_out, k, k)
    bias : ndarray, shape (C_out,)
    stride : int
    padding : int
    """

    kernel: np.ndarray
    bias: np.ndarray
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.kernel.ndim != 4 or self.kernel.shape[2] != self.kernel.shape[3]:
            raise ValueError(f"kernel must be (C_in, C_out, k, k), got {self.kernel.shape}")
        if self.bias.shape != (self.kernel.shape[1],):
            raise ValueError(
                f"bias length {self.bias.shape} does not match C_out={self.kernel.shape[1]}")
        if self.stride < 1 or self.padding < 0:
            raise ValueError("stride must be >= 1 and padding >= 0")

    @property
    def c_in(self):
        return self.kernel.shape[0]

    @property
    def c_out(self):
        return self.kernel.shape[1]

    @property
    def k(self):
        return self.kernel.shape[2]

    def output_size(self, n):
        return (n - 1) * self.stride - 2 * self.padding + self.k

    def n_params(self):
        return self.kernel.size + self.bias.size


def _as_batch(x):
    x = np.asarray(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ValueError(f"expected a (C, H, W) or (B, C, H, W) tensor, got shape {x.shape}")


class NonFiniteError(FloatingPointError, ValueError):
    """Raised when an activation, loss or gradient stops being finite."""


def _check_finite(x, what):
    # one reduction settles the common case; a non-finite sum may still come
    # from overflow of large finite values, so confirm element-wise
    if not np.isfinite(np.sum(x)) and not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite values in {what}")


def conv_transpose2d(x, w: LayerWeights):
    """Transposed 2-D convolution with zero padding and bias.

    Output size is ``(H - 1) * stride - 2 * padding + k`` on each axis.
    """
    xb, squeeze = _as_batch(x)
    B, C, H, W = xb.shape
    if C != w.c_in:
        raise ValueError(f"input has {C} channels, layer expects {w.c_in}")
    _check_finite(xb, "conv_transpose2d input")
    Ho, Wo = w.output_size(H), w.output_size(W)
    if Ho < 1 or Wo < 1:
        raise ValueError(f"layer maps {H}x{W} to empty output {Ho}x{Wo}")
    dtype = np.result_type(xb.dtype, w.kernel.dtype)
    k, co = w.k, w.c_out
    xt = xb.astype(dtype, copy=False).transpose(1, 0, 2, 3).reshape(C, B * H * W)
    kmat = w.kernel.astype(dtype, copy=False).reshape(C, co * k * k)
    cols = (kmat.T @ xt).reshape(co, k, k, B, H, W)
    out = backend.col2im(cols, w.stride, w.padding, Ho, Wo)
    out += w.bias.astype(dtype, copy=False)[None, :, None, None]
    return out[0] if squeeze else out


def conv_transpose2d_vjp(x, w: LayerWeights, cotangent):
    """Gradients of ``<cotangent, conv_transpose2d(x, w)>``.

    Returns
    -------
    d_input, d_kernel, d_bias
    """
    xb, squeeze = _as_batch(x)
    gb, _ = _as_batch(cotangent)
    B, C, H, W = xb.shape
    if C != w.c_in:
        raise ValueError(f"input has {C} channels, layer expects {w.c_in}")
    expected = (B, w.c_out, w.output_size(H), w.output_size(W))
    if gb.shape != expected:
        raise ValueError(f"cotangent shape {gb.shape} does not match output shape {expected}")
    dtype = np.result_type(xb.dtype, w.kernel.dtype, gb.dtype)
    k, co = w.k, w.c_out
    gb = np.ascontiguousarray(gb, dtype=dtype)
    dcols = backend.im2col(gb, k, w.stride, w.padding, H, W).reshape(co * k * k, B * H * W)
    kmat = w.kernel.astype(dtype, copy=False).reshape(C, co * k * k)
    dx = (kmat @ dcols).reshape(C, B, H, W).transpose(1, 0, 2, 3)
    xt = xb.astype(dtype, copy=False).transpose(1, 0, 2, 3).reshape(C, B * H * W)
    dk = (xt @ dcols.T).reshape(w.kernel.shape)
    db = gb.sum(axis=(0, 2, 3))
    dx = np.ascontiguousarray(dx)
    return (dx[0] if squeeze else dx), dk, db


def leaky_relu(x, slope=0.1):
    if not 0.0 < slope < 1.0:
        raise ValueError("slope must lie in (0, 1)")
    _check_finite(x, "leaky_relu input")
    # equal to where(x >= 0, x, slope * x) because 0 < slope < 1
    return np.maximum(x, slope * x)


def leaky_relu_vjp(x, cotangent, slope=0.1):
    # subgradient at exactly 0 is 1
    return np.where(x >= 0, cotangent, slope * cotangent)


def tanh_act(x):
    return np.tanh(x)


def tanh_vjp(y, cotangent):
    """vjp of tanh written in terms of the forward output ``y``."""
    return cotangent * (1.0 - y * y)
