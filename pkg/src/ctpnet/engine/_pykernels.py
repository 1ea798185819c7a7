"""Pure-numpy versions of the hot loops.

Every function here has a twin in ``_ckernels.pyx`` with the same signature;
``kernels`` picks one at import time. Inputs are already padded and
C-contiguous.

Column layout used by im2col/col2im: row ``(c*kh + i)*kw + j``, column
``(n*oh + y)*ow + x``.
"""
import numpy as np


def _window(length, offset, stride):
    return slice(offset, offset + stride * (length - 1) + 1, stride)


def im2col(x, kh, kw, stride, dilation, oh, ow):
    n, c = x.shape[0], x.shape[1]
    cols = np.empty((c, kh, kw, n, oh, ow), dtype=x.dtype)
    xt = x.transpose(1, 0, 2, 3)
    for i in range(kh):
        rows = _window(oh, i * dilation, stride)
        for j in range(kw):
            cols[:, i, j] = xt[:, :, rows, _window(ow, j * dilation, stride)]
    return cols.reshape(c * kh * kw, n * oh * ow)


def col2im(cols, n, c, hp, wp, kh, kw, stride, dilation, oh, ow):
    out = np.zeros((c, n, hp, wp), dtype=cols.dtype)
    cols = cols.reshape(c, kh, kw, n, oh, ow)
    for i in range(kh):
        rows = _window(oh, i * dilation, stride)
        for j in range(kw):
            out[:, :, rows, _window(ow, j * dilation, stride)] += cols[:, i, j]
    return np.ascontiguousarray(out.transpose(1, 0, 2, 3))


def maxpool_forward(x, k, stride, oh, ow):
    """Returns (pooled, argidx); argidx is the row-major offset inside the window.

    np.argmax keeps the first maximum, which is the tie rule we want.
    """
    n, c = x.shape[0], x.shape[1]
    stacked = np.empty((k * k, n, c, oh, ow), dtype=x.dtype)
    for i in range(k):
        rows = _window(oh, i, stride)
        for j in range(k):
            stacked[i * k + j] = x[:, :, rows, _window(ow, j, stride)]
    arg = stacked.argmax(axis=0).astype(np.int32)
    out = np.take_along_axis(stacked, arg[None].astype(np.intp), axis=0)[0]
    return out, arg


def maxpool_backward(grad, arg, k, stride, hp, wp):
    n, c, oh, ow = grad.shape
    out = np.zeros((n, c, hp, wp), dtype=grad.dtype)
    for i in range(k):
        rows = _window(oh, i, stride)
        for j in range(k):
            hit = arg == i * k + j
            out[:, :, rows, _window(ow, j, stride)] += np.where(hit, grad, 0)
    return out
