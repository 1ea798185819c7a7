"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Times each kernel at the shapes the tiny and desk models produce, checks the two
backends agree bit for bit, then times a full training step under each backend
(in a subprocess, since the backend is fixed at import).
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from ctpnet.engine import _pykernels

try:
    from ctpnet.engine import _ckernels
except ImportError:
    _ckernels = None

# (label, N, C, H, W, k, stride, dilation)
CONV_CASES = [
    ("3x3 c16 64px", 6, 16, 66, 66, 3, 1, 1),
    ("3x3 c32 dil2 8px", 6, 32, 12, 12, 3, 1, 2),
    ("4x4 s2 deconv c16 32px", 6, 16, 34, 34, 4, 2, 1),
]
POOL_CASES = [
    ("max k2 s1 c16 64px", 6, 16, 65, 65, 2, 1),
    ("max k2 s2 c32 32px", 6, 32, 32, 32, 2, 2),
]

STEP_SNIPPET = """
import time, numpy as np
from ctpnet.engine import BACKEND, Tensor, backward, cross_entropy_loss
from ctpnet.model import ModelConfig, build_model
m = build_model(ModelConfig.tiny({size}), seed=0)
rng = np.random.default_rng(0)
x = Tensor(rng.random((6, 3, {size}, {size}), dtype=np.float32))
t = (rng.random((6, {size}, {size})) > 0.8).astype(np.int64)
best = float("inf")
for _ in range({repeat}):
    s = time.perf_counter()
    backward(cross_entropy_loss(m(x), t))
    best = min(best, time.perf_counter() - s)
    for p in m.parameters():
        p.grad = None
print(BACKEND, best)
"""


def _best(fn, repeat: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def bench_kernels(repeat: int):
    rows = []
    rng = np.random.default_rng(0)
    for label, n, c, h, w, k, s, d in CONV_CASES:
        x = rng.random((n, c, h, w), dtype=np.float32)
        oh = (h - d * (k - 1) - 1) // s + 1
        ow = (w - d * (k - 1) - 1) // s + 1
        cols = _pykernels.im2col(x, k, k, s, d, oh, ow)
        for name, mod in (("python", _pykernels), ("cython", _ckernels)):
            if mod is None:
                continue
            if name == "cython":
                assert np.array_equal(mod.im2col(x, k, k, s, d, oh, ow), cols)
                assert np.array_equal(
                    mod.col2im(cols, n, c, h, w, k, k, s, d, oh, ow),
                    _pykernels.col2im(cols, n, c, h, w, k, k, s, d, oh, ow),
                )
            rows.append(("im2col " + label, name, _best(lambda: mod.im2col(x, k, k, s, d, oh, ow), repeat)))
            rows.append(("col2im " + label, name, _best(lambda: mod.col2im(cols, n, c, h, w, k, k, s, d, oh, ow), repeat)))
    for label, n, c, h, w, k, s in POOL_CASES:
        x = rng.random((n, c, h, w), dtype=np.float32)
        oh, ow = (h - k) // s + 1, (w - k) // s + 1
        out, arg = _pykernels.maxpool_forward(x, k, s, oh, ow)
        g = rng.random(out.shape, dtype=np.float32)
        for name, mod in (("python", _pykernels), ("cython", _ckernels)):
            if mod is None:
                continue
            if name == "cython":
                o2, a2 = mod.maxpool_forward(x, k, s, oh, ow)
                assert np.array_equal(o2, out) and np.array_equal(a2, arg)
            rows.append(("pool fwd " + label, name, _best(lambda: mod.maxpool_forward(x, k, s, oh, ow), repeat)))
            rows.append(("pool bwd " + label, name, _best(lambda: mod.maxpool_backward(g, arg, k, s, h, w), repeat)))
    return rows


def bench_step(size: int, repeat: int):
    out = {}
    for backend in ("python", "cython"):
        env = dict(os.environ, CTPN_KERNELS=backend)
        res = subprocess.run(
            [sys.executable, "-c", STEP_SNIPPET.format(size=size, repeat=repeat)],
            env=env, capture_output=True, text=True, check=True,
        )
        got, seconds = res.stdout.split()
        if got == backend:
            out[backend] = float(seconds)
    return out


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--size", type=int, default=64, help="input side for the training-step timing")
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args()
    if _ckernels is None:
        print("compiled kernels are not built; only the numpy fallback is timed")

    rows = bench_kernels(args.repeat)
    by_case: dict = {}
    for case, backend, t in rows:
        by_case.setdefault(case, {})[backend] = t
    print(f"{'kernel':<36} {'numpy ms':>9} {'cython ms':>10} {'speedup':>8}")
    for case, t in by_case.items():
        py, cy = t.get("python"), t.get("cython")
        speed = f"{py / cy:7.1f}x" if cy else "     n/a"
        print(f"{case:<36} {py * 1e3:9.2f} {cy * 1e3 if cy else float('nan'):10.2f} {speed}")

    step = bench_step(args.size, max(2, args.repeat // 2))
    if len(step) == 2:
        print(f"\ntraining step, tiny model, batch 6 at {args.size}px: "
              f"numpy {step['python']:.3f}s, cython {step['cython']:.3f}s ({step['python'] / step['cython']:.2f}x)")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"kernels": by_case, "train_step": step}, fh, indent=2)


if __name__ == "__main__":
    main()
