"""Pure-numpy versions of the scatter/gather kernels in ``_kernels.pyx``."""
import numpy as np


def _full_size(n, k, stride):
    return (n - 1) * stride + k


def col2im(cols, stride, pad, Ho, Wo):
    Co, k, _, B, H, W = cols.shape
    Hf, Wf = _full_size(H, k, stride), _full_size(W, k, stride)
    full = np.zeros((B, Co, Hf, Wf), dtype=cols.dtype)
    moved = cols.transpose(3, 0, 1, 2, 4, 5)
    for ki in range(k):
        for kj in range(k):
            full[:, :, ki:ki + stride * (H - 1) + 1:stride,
                 kj:kj + stride * (W - 1) + 1:stride] += moved[:, :, ki, kj]
    return np.ascontiguousarray(full[:, :, pad:pad + Ho, pad:pad + Wo])


def im2col(grad, k, stride, pad, H, W):
    B, Co, Ho, Wo = grad.shape
    Hf, Wf = _full_size(H, k, stride), _full_size(W, k, stride)
    full = np.zeros((B, Co, Hf, Wf), dtype=grad.dtype)
    full[:, :, pad:pad + Ho, pad:pad + Wo] = grad
    cols = np.empty((Co, k, k, B, H, W), dtype=grad.dtype)
    for ki in range(k):
        for kj in range(k):
            cols[:, ki, kj] = full[:, :, ki:ki + stride * (H - 1) + 1:stride,
                                   kj:kj + stride * (W - 1) + 1:stride].transpose(1, 0, 2, 3)
    return cols
