# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot loops in ``_pykernels``; same signatures and
same accumulation order, so both backends agree bit for bit."""
import numpy as np

ctypedef fused real:
    float
    double


cdef inline object _dtype_of(real dummy):
    if real is float:
        return np.float32
    return np.float64


def im2col(const real[:, :, :, ::1] x, int kh, int kw, int stride, int dilation, int oh, int ow):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1]
    cdef real zero = 0
    out = np.empty((c * kh * kw, n * oh * ow), dtype=_dtype_of(zero))
    cdef real[:, ::1] cols = out
    cdef Py_ssize_t ci, i, j, b, y, xx, row, col, hy
    for ci in range(c):
        for i in range(kh):
            for j in range(kw):
                row = (ci * kh + i) * kw + j
                col = 0
                for b in range(n):
                    for y in range(oh):
                        hy = y * stride + i * dilation
                        for xx in range(ow):
                            cols[row, col] = x[b, ci, hy, xx * stride + j * dilation]
                            col += 1
    return out


def col2im(const real[:, ::1] cols, int n, int c, int hp, int wp, int kh, int kw,
           int stride, int dilation, int oh, int ow):
    cdef real zero = 0
    out = np.zeros((n, c, hp, wp), dtype=_dtype_of(zero))
    cdef real[:, :, :, ::1] img = out
    cdef Py_ssize_t ci, i, j, b, y, xx, row, col, hy
    for ci in range(c):
        for i in range(kh):
            for j in range(kw):
                row = (ci * kh + i) * kw + j
                col = 0
                for b in range(n):
                    for y in range(oh):
                        hy = y * stride + i * dilation
                        for xx in range(ow):
                            img[b, ci, hy, xx * stride + j * dilation] += cols[row, col]
                            col += 1
    return out


def maxpool_forward(const real[:, :, :, ::1] x, int k, int stride, int oh, int ow):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1]
    cdef real zero = 0
    out = np.empty((n, c, oh, ow), dtype=_dtype_of(zero))
    arg = np.empty((n, c, oh, ow), dtype=np.int32)
    cdef real[:, :, :, ::1] o = out
    cdef int[:, :, :, ::1] a = arg
    cdef Py_ssize_t b, ci, y, xx, i, j
    cdef real best, v
    cdef int besti
    for b in range(n):
        for ci in range(c):
            for y in range(oh):
                for xx in range(ow):
                    best = x[b, ci, y * stride, xx * stride]
                    besti = 0
                    for i in range(k):
                        for j in range(k):
                            v = x[b, ci, y * stride + i, xx * stride + j]
                            # strict > keeps the first maximum in row-major order
                            if v > best:
                                best = v
                                besti = <int>(i * k + j)
                    o[b, ci, y, xx] = best
                    a[b, ci, y, xx] = besti
    return out, arg


def maxpool_backward(const real[:, :, :, ::1] grad, const int[:, :, :, ::1] arg, int k, int stride,
                     int hp, int wp):
    cdef Py_ssize_t n = grad.shape[0], c = grad.shape[1], oh = grad.shape[2], ow = grad.shape[3]
    cdef real zero = 0
    out = np.zeros((n, c, hp, wp), dtype=_dtype_of(zero))
    cdef real[:, :, :, ::1] g = out
    cdef Py_ssize_t b, ci, y, xx
    cdef int idx
    for b in range(n):
        for ci in range(c):
            # same (i, j)-major order as the numpy path so overlaps sum identically
            for idx in range(k * k):
                for y in range(oh):
                    for xx in range(ow):
                        if arg[b, ci, y, xx] == idx:
                            g[b, ci, y * stride + idx // k, xx * stride + idx % k] += grad[b, ci, y, xx]
    return out
