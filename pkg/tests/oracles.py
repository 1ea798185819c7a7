"""Slow reference implementations used only by the tests."""
import itertools
import math

import numpy as np


def conv2d_loops(x, w, b, stride, dilation, padding):
    n, c, h, wd = x.shape
    k, _, kh, kw = w.shape
    oh = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    ow = (wd + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    out = np.zeros((n, k, oh, ow), dtype=np.float64)
    for bi in range(n):
        for ki in range(k):
            for y in range(oh):
                for xx in range(ow):
                    acc = float(b[ki])
                    for ci in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                hy = y * stride + i * dilation - padding
                                wx = xx * stride + j * dilation - padding
                                if 0 <= hy < h and 0 <= wx < wd:
                                    acc += float(x[bi, ci, hy, wx]) * float(w[ki, ci, i, j])
                    out[bi, ki, y, xx] = acc
    return out


def pool_loops(x, mode, k, stride, pads):
    top, bottom, left, right = pads
    xp = np.pad(x, ((0, 0), (0, 0), (top, bottom), (left, right)))
    n, c, hp, wp = xp.shape
    oh, ow = (hp - k) // stride + 1, (wp - k) // stride + 1
    out = np.zeros((n, c, oh, ow))
    for bi, ci, y, xx in itertools.product(range(n), range(c), range(oh), range(ow)):
        win = xp[bi, ci, y * stride : y * stride + k, xx * stride : xx * stride + k]
        out[bi, ci, y, xx] = win.max() if mode == "max" else win.mean()
    return out


def cross_entropy_pixels(logits, target):
    n, _, h, w = logits.shape
    total = 0.0
    for bi, y, x in itertools.product(range(n), range(h), range(w)):
        a, b = float(logits[bi, 0, y, x]), float(logits[bi, 1, y, x])
        m = max(a, b)
        lse = m + math.log(math.exp(a - m) + math.exp(b - m))
        picked = a if target[bi, y, x] == 0 else b
        total += lse - picked
    return total / (n * h * w)


def auc_pairs(prob, gt):
    prob, gt = np.ravel(prob), np.ravel(gt)
    pos, neg = prob[gt == 1], prob[gt == 0]
    score = 0.0
    for p in pos:
        for q in neg:
            score += 1.0 if p > q else 0.5 if p == q else 0.0
    return score / (len(pos) * len(neg))
