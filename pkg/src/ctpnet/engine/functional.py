"""Differentiable operations on 4-D feature maps (N, C, H, W)."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from . import kernels
from .tensor import Op, Tensor

Padding = Union[int, Tuple[int, int, int, int]]


def _pad4(padding: Padding) -> Tuple[int, int, int, int]:
    """Normalize to (top, bottom, left, right)."""
    if isinstance(padding, (int, np.integer)):
        p = int(padding)
        return (p, p, p, p)
    pads = tuple(int(p) for p in padding)
    if len(pads) != 4:
        raise ValueError(f"padding must be an int or (top, bottom, left, right), got {padding!r}")
    return pads  # type: ignore[return-value]


def _pad(x: np.ndarray, pads: Tuple[int, int, int, int]) -> np.ndarray:
    if not any(pads):
        return np.ascontiguousarray(x)
    t, b, l, r = pads
    return np.pad(x, ((0, 0), (0, 0), (t, b), (l, r)))


def _unpad(x: np.ndarray, pads: Tuple[int, int, int, int]) -> np.ndarray:
    t, b, l, r = pads
    h, w = x.shape[2], x.shape[3]
    return x[:, :, t : h - b, l : w - r]


def conv_output_size(size: int, k: int, stride: int, dilation: int, pad_total: int) -> int:
    return (size + pad_total - dilation * (k - 1) - 1) // stride + 1


def _require_4d(name: str, arr: np.ndarray) -> None:
    if arr.ndim != 4:
        raise ValueError(f"{name} expects a 4-D (N, C, H, W) tensor, got shape {arr.shape}")


class Conv2d(Op):
    def __init__(self, stride: int, dilation: int, padding: int) -> None:
        if stride < 1 or dilation < 1:
            raise ValueError("stride and dilation must be positive")
        if padding < 0:
            raise ValueError("padding must be non-negative")
        self.stride, self.dilation, self.padding = stride, dilation, padding

    def forward(self, x, w, b):
        _require_4d("conv2d", x)
        n, c, h, wd = x.shape
        k, kc, kh, kw = w.shape
        if kc != c:
            raise ValueError(f"conv2d: input has {c} channels, kernel expects {kc}")
        if b.shape != (k,):
            raise ValueError(f"conv2d: bias shape {b.shape} does not match {k} output channels")
        p = self.padding
        oh = conv_output_size(h, kh, self.stride, self.dilation, 2 * p)
        ow = conv_output_size(wd, kw, self.stride, self.dilation, 2 * p)
        if oh < 1 or ow < 1:
            raise ValueError(f"conv2d: non-positive output size {oh}x{ow}")
        xp = _pad(x, (p, p, p, p))
        cols = kernels.im2col(xp, kh, kw, self.stride, self.dilation, oh, ow)
        out = w.reshape(k, -1) @ cols
        out = out.reshape(k, n, oh, ow).transpose(1, 0, 2, 3) + b[None, :, None, None]
        self.cols = cols
        self.geom = (n, c, xp.shape[2], xp.shape[3], kh, kw, oh, ow)
        self.wshape = w.shape
        self.w = w
        return np.ascontiguousarray(out)

    def backward(self, grad):
        n, c, hp, wp, kh, kw, oh, ow = self.geom
        k = self.wshape[0]
        g2 = grad.transpose(1, 0, 2, 3).reshape(k, -1)
        gw = (g2 @ self.cols.T).reshape(self.wshape)
        gb = grad.sum(axis=(0, 2, 3))
        gx = None
        if self.inputs[0].requires_grad:
            gcols = self.w.reshape(k, -1).T @ g2
            gxp = kernels.col2im(gcols, n, c, hp, wp, kh, kw, self.stride, self.dilation, oh, ow)
            p = self.padding
            gx = _unpad(gxp, (p, p, p, p))
        return gx, gw, gb


def conv2d(
    x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, dilation: int = 1, padding: int = 0
) -> Tensor:
    """Cross-correlation of ``x`` with ``weight`` (K, C, kh, kw) plus per-channel bias."""
    return Conv2d(stride, dilation, padding)(x, weight, bias)


class ConvTranspose2d(Op):
    """Adjoint of :class:`Conv2d` with respect to its input."""

    def __init__(self, stride: int, padding: int, output_padding: int) -> None:
        if stride < 1 or padding < 0 or output_padding < 0:
            raise ValueError("invalid conv_transpose2d geometry")
        if output_padding >= stride:
            raise ValueError("output_padding must be smaller than stride")
        self.stride, self.padding, self.output_padding = stride, padding, output_padding

    def forward(self, x, w, b):
        _require_4d("conv_transpose2d", x)
        n, c, h, wd = x.shape
        wc, k, kh, kw = w.shape
        if wc != c:
            raise ValueError(f"conv_transpose2d: input has {c} channels, kernel expects {wc}")
        if b.shape != (k,):
            raise ValueError(f"conv_transpose2d: bias shape {b.shape} does not match {k} channels")
        s, p, op = self.stride, self.padding, self.output_padding
        oh = (h - 1) * s - 2 * p + kh + op
        ow = (wd - 1) * s - 2 * p + kw + op
        if oh < 1 or ow < 1:
            raise ValueError(f"conv_transpose2d: non-positive output size {oh}x{ow}")
        hp, wp = oh + 2 * p, ow + 2 * p
        x2 = x.transpose(1, 0, 2, 3).reshape(c, -1)
        cols = np.ascontiguousarray(w.reshape(c, -1).T @ x2)
        outp = kernels.col2im(cols, n, k, hp, wp, kh, kw, s, 1, h, wd)
        self.x2 = x2
        self.w = w
        self.geom = (n, c, h, wd, k, kh, kw, hp, wp)
        return np.ascontiguousarray(_unpad(outp, (p, p, p, p)) + b[None, :, None, None])

    def backward(self, grad):
        n, c, h, wd, k, kh, kw, hp, wp = self.geom
        p = self.padding
        gp = _pad(grad, (p, p, p, p))
        cols = kernels.im2col(gp, kh, kw, self.stride, 1, h, wd)
        gw = (self.x2 @ cols.T).reshape(self.w.shape)
        gb = grad.sum(axis=(0, 2, 3))
        gx = None
        if self.inputs[0].requires_grad:
            gx2 = self.w.reshape(c, -1) @ cols
            gx = np.ascontiguousarray(gx2.reshape(c, n, h, wd).transpose(1, 0, 2, 3))
        return gx, gw, gb


def conv_transpose2d(
    x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0, output_padding: int = 0
) -> Tensor:
    """Transposed convolution; ``weight`` is laid out (C_in, C_out, kh, kw)."""
    return ConvTranspose2d(stride, padding, output_padding)(x, weight, bias)


class MaxPool2d(Op):
    def __init__(self, kernel: int, stride: int, padding: Padding) -> None:
        self.k, self.stride, self.pads = kernel, stride, _pad4(padding)

    def forward(self, x):
        _require_4d("pool2d", x)
        xp = _pad(x, self.pads)
        oh = (xp.shape[2] - self.k) // self.stride + 1
        ow = (xp.shape[3] - self.k) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ValueError(f"pool2d: non-positive output size {oh}x{ow}")
        out, self.arg = kernels.maxpool_forward(xp, self.k, self.stride, oh, ow)
        self.padded = xp.shape
        return out

    def backward(self, grad):
        g = kernels.maxpool_backward(
            np.ascontiguousarray(grad), self.arg, self.k, self.stride, self.padded[2], self.padded[3]
        )
        return (_unpad(g, self.pads),)


class AvgPool2d(Op):
    # padded cells count toward the mean (zero padding)
    def __init__(self, kernel: int, stride: int, padding: Padding) -> None:
        self.k, self.stride, self.pads = kernel, stride, _pad4(padding)

    def forward(self, x):
        _require_4d("pool2d", x)
        xp = _pad(x, self.pads)
        n, c, hp, wp = xp.shape
        k, s = self.k, self.stride
        oh, ow = (hp - k) // s + 1, (wp - k) // s + 1
        if oh < 1 or ow < 1:
            raise ValueError(f"pool2d: non-positive output size {oh}x{ow}")
        cols = kernels.im2col(xp.reshape(n * c, 1, hp, wp), k, k, s, 1, oh, ow)
        self.geom = (n, c, hp, wp, oh, ow)
        return cols.mean(axis=0).reshape(n, c, oh, ow)

    def backward(self, grad):
        n, c, hp, wp, oh, ow = self.geom
        k = self.k
        share = np.ascontiguousarray(grad).reshape(1, -1) / (k * k)
        cols = np.repeat(share, k * k, axis=0)
        g = kernels.col2im(cols, n * c, 1, hp, wp, k, k, self.stride, 1, oh, ow)
        return (_unpad(g.reshape(n, c, hp, wp), self.pads),)


def pool2d(x: Tensor, mode: str, kernel: int, stride: int, padding: Padding = 0) -> Tensor:
    """Max or average pooling. ``padding`` is an int or (top, bottom, left, right), zero-filled."""
    if kernel < 1 or stride < 1:
        raise ValueError("pool kernel and stride must be positive")
    if mode == "max":
        return MaxPool2d(kernel, stride, padding)(x)
    if mode == "avg":
        return AvgPool2d(kernel, stride, padding)(x)
    raise ValueError(f"unknown pool mode {mode!r}")


@dataclass
class RunningStats:
    """Per-channel running mean/variance used by batch_norm in infer mode."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1

    @classmethod
    def fresh(cls, channels: int, dtype=np.float32, momentum: float = 0.1) -> "RunningStats":
        return cls(np.zeros(channels, dtype), np.ones(channels, dtype), momentum)


class BatchNorm(Op):
    def __init__(self, eps: float, train: bool, stats: Optional[RunningStats]) -> None:
        self.eps, self.train, self.stats = eps, train, stats

    def forward(self, x, gamma, beta):
        _require_4d("batch_norm", x)
        n, c, h, w = x.shape
        if gamma.shape != (c,) or beta.shape != (c,):
            raise ValueError(f"batch_norm: gamma/beta must have shape ({c},)")
        if self.train:
            m = n * h * w
            if m < 2:
                raise ValueError("batch_norm: train mode needs at least 2 values per channel")
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            if self.stats is not None:
                mom = self.stats.momentum
                unbiased = var * (m / (m - 1))
                self.stats.mean[...] = (1 - mom) * self.stats.mean + mom * mean
                self.stats.var[...] = (1 - mom) * self.stats.var + mom * unbiased
        else:
            if self.stats is None:
                raise ValueError("batch_norm: infer mode needs running stats")
            mean, var = self.stats.mean.astype(x.dtype), self.stats.var.astype(x.dtype)
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None, None]) * inv[None, :, None, None]
        self.xhat, self.inv, self.gamma = xhat, inv, gamma
        return xhat * gamma[None, :, None, None] + beta[None, :, None, None]

    def backward(self, grad):
        gbeta = grad.sum(axis=(0, 2, 3))
        ggamma = (grad * self.xhat).sum(axis=(0, 2, 3))
        gx = None
        if self.inputs[0].requires_grad:
            gxhat = grad * self.gamma[None, :, None, None]
            inv = self.inv[None, :, None, None]
            if self.train:
                mean_g = gxhat.mean(axis=(0, 2, 3), keepdims=True)
                mean_gx = (gxhat * self.xhat).mean(axis=(0, 2, 3), keepdims=True)
                gx = inv * (gxhat - mean_g - self.xhat * mean_gx)
            else:
                gx = gxhat * inv
        return gx, ggamma, gbeta


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    eps: float = 1e-5,
    train: bool = True,
    stats: Optional[RunningStats] = None,
) -> Tensor:
    return BatchNorm(eps, train, stats)(x, gamma, beta)


class Relu(Op):
    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, 0).astype(x.dtype, copy=False)

    def backward(self, grad):
        return (np.where(self.mask, grad, 0).astype(grad.dtype, copy=False),)


def relu(x: Tensor) -> Tensor:
    return Relu()(x)


class Add(Op):
    def forward(self, a, b):
        if a.shape != b.shape:
            raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")
        return a + b

    def backward(self, grad):
        return grad, grad


def add(a: Tensor, b: Tensor) -> Tensor:
    return Add()(a, b)


class Concat(Op):
    def forward(self, *xs):
        first = xs[0]
        for x in xs[1:]:
            if x.shape[0] != first.shape[0] or x.shape[2:] != first.shape[2:]:
                raise ValueError("concat: inputs differ outside the channel axis")
        self.splits = np.cumsum([x.shape[1] for x in xs])[:-1]
        return np.concatenate(xs, axis=1)

    def backward(self, grad):
        return [np.ascontiguousarray(g) for g in np.split(grad, self.splits, axis=1)]


def concat(xs: Sequence[Tensor]) -> Tensor:
    """Channel-axis concatenation (dense connectivity)."""
    return Concat()(*xs)


class Sum(Op):
    def forward(self, x):
        self.shape = x.shape
        return np.asarray(x.sum(), dtype=x.dtype)

    def backward(self, grad):
        return (np.full(self.shape, grad, dtype=grad.dtype),)


def tensor_sum(x: Tensor) -> Tensor:
    return Sum()(x)


class WeightedSum(Op):
    def __init__(self, weights: np.ndarray) -> None:
        self.weights = weights

    def forward(self, x):
        if x.shape != self.weights.shape:
            raise ValueError("weighted_sum: shape mismatch")
        return np.asarray((x * self.weights).sum(), dtype=x.dtype)

    def backward(self, grad):
        return ((grad * self.weights).astype(self.weights.dtype),)


def weighted_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    """sum(x * weights) for a constant array; projects any output to a scalar."""
    return WeightedSum(np.asarray(weights, dtype=x.dtype))(x)


def _softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class SoftmaxChannels(Op):
    def forward(self, x):
        self.p = _softmax(x)
        return self.p

    def backward(self, grad):
        p = self.p
        return (p * (grad - (grad * p).sum(axis=1, keepdims=True)),)


def softmax_channels(x: Tensor) -> Tensor:
    """Softmax over the channel axis, computed with max subtraction."""
    return SoftmaxChannels()(x)


class CrossEntropy(Op):
    def __init__(self, target: np.ndarray) -> None:
        self.target = target

    def forward(self, logits):
        t = self.target
        if logits.ndim != 4 or t.shape != (logits.shape[0],) + logits.shape[2:]:
            raise ValueError(f"cross_entropy_loss: target shape {t.shape} does not fit logits {logits.shape}")
        z = logits - logits.max(axis=1, keepdims=True)
        logsum = np.log(np.exp(z).sum(axis=1))
        picked = np.take_along_axis(z, t[:, None].astype(np.intp), axis=1)[:, 0]
        self.p = np.exp(z - logsum[:, None])
        self.count = t.size
        return np.asarray((logsum - picked).mean(), dtype=logits.dtype)

    def backward(self, grad):
        g = self.p.copy()
        onehot = np.zeros_like(g)
        np.put_along_axis(onehot, self.target[:, None].astype(np.intp), 1.0, axis=1)
        g -= onehot
        return (g * (grad / self.count),)


def cross_entropy_loss(logits: Tensor, target) -> Tensor:
    """Mean over pixels of -log softmax probability of the true class.

    ``target`` is an integer/binary array (N, H, W) or a Tensor holding one.
    """
    t = target.data if isinstance(target, Tensor) else np.asarray(target)
    if t.size and not np.isin(t, (0, 1)).all():
        raise ValueError("cross_entropy_loss: target must be binary")
    return CrossEntropy(t.astype(np.int64))(logits)
