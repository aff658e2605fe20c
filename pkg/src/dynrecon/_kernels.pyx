# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Scatter/gather kernels behind the transposed convolution.

``cols`` is laid out as (C_out, k, k, B, H, W) so that each (co, ki, kj)
block is the output of one GEMM row group.
"""
import numpy as np

ctypedef fused real:
    float
    double


cdef inline void _span(Py_ssize_t W, Py_ssize_t stride, Py_ssize_t off,
                       Py_ssize_t Wo, Py_ssize_t* lo, Py_ssize_t* hi) noexcept nogil:
    # input columns j with 0 <= j*stride + off < Wo
    cdef Py_ssize_t a = 0, b = W
    while a < W and a * stride + off < 0:
        a += 1
    while b > a and (b - 1) * stride + off >= Wo:
        b -= 1
    lo[0] = a
    hi[0] = b


def col2im(real[:, :, :, :, :, ::1] cols, int stride, int pad, int Ho, int Wo):
    cdef Py_ssize_t Co = cols.shape[0], k = cols.shape[1], B = cols.shape[3]
    cdef Py_ssize_t H = cols.shape[4], W = cols.shape[5]
    cdef Py_ssize_t co, b, ki, kj, i, j, oi, off, jlo, jhi
    cdef real* orow
    cdef real* crow
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((B, Co, Ho, Wo), dtype=dtype)
    cdef real[:, :, :, ::1] out = out_arr
    # batch and channel outermost: one output plane stays in cache while
    # all k*k kernel offsets accumulate into it
    with nogil:
        for b in range(B):
            for co in range(Co):
                for ki in range(k):
                    for kj in range(k):
                        off = kj - pad
                        _span(W, stride, off, Wo, &jlo, &jhi)
                        for i in range(H):
                            oi = i * stride + ki - pad
                            if oi < 0 or oi >= Ho:
                                continue
                            orow = &out[b, co, oi, 0]
                            crow = &cols[co, ki, kj, b, i, 0]
                            if stride == 1:
                                # unit stride lets the compiler vectorize
                                for j in range(jlo, jhi):
                                    orow[j + off] += crow[j]
                            else:
                                for j in range(jlo, jhi):
                                    orow[j * stride + off] += crow[j]
    return out_arr


def im2col(real[:, :, :, ::1] grad, int k, int stride, int pad, int H, int W):
    cdef Py_ssize_t B = grad.shape[0], Co = grad.shape[1]
    cdef Py_ssize_t Ho = grad.shape[2], Wo = grad.shape[3]
    cdef Py_ssize_t co, b, ki, kj, i, j, oi, off, jlo, jhi
    cdef real* grow
    cdef real* crow
    dtype = np.float32 if real is float else np.float64
    cols_arr = np.zeros((Co, k, k, B, H, W), dtype=dtype)
    cdef real[:, :, :, :, :, ::1] cols = cols_arr
    with nogil:
        for b in range(B):
            for co in range(Co):
                for ki in range(k):
                    for kj in range(k):
                        off = kj - pad
                        _span(W, stride, off, Wo, &jlo, &jhi)
                        for i in range(H):
                            oi = i * stride + ki - pad
                            if oi < 0 or oi >= Ho:
                                continue
                            grow = &grad[b, co, oi, 0]
                            crow = &cols[co, ki, kj, b, i, 0]
                            if stride == 1:
                                for j in range(jlo, jhi):
                                    crow[j] = grow[j + off]
                            else:
                                for j in range(jlo, jhi):
                                    crow[j] = grow[j * stride + off]
    return cols_arr
