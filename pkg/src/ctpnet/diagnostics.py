"""Finite-difference gradient suite over every engine op and the full model."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from .engine import (
    RunningStats,
    Tensor,
    add,
    backward,
    batch_norm,
    concat,
    conv2d,
    conv_transpose2d,
    cross_entropy_loss,
    no_grad,
    pool2d,
    relu,
    softmax_channels,
)
from .engine.gradcheck import GradCheckResult, check_op, numeric_gradient, relative_error
from .model import ModelConfig, build_model

OP_TOLERANCE = 1e-4
OP_STEP = 1e-3
MODEL_TOLERANCE = 1e-3
MODEL_STEP = 1e-5
MODEL_PASS_FRACTION = 0.99

Case = Tuple[Callable[..., Tensor], List[Tensor]]


def _t(arr, grad=True) -> Tensor:
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=grad)


def _distinct(rng: np.random.Generator, shape, spacing: float = 0.02) -> np.ndarray:
    # well-separated values: no argmax flips (or zero-pad ties) under the FD step
    n = int(np.prod(shape))
    return ((rng.permutation(n) - n // 2 + 0.5) * spacing).reshape(shape)


def _away_from_zero(rng: np.random.Generator, shape, margin: float = 0.01) -> np.ndarray:
    x = rng.uniform(margin, 1.0, shape)
    return x * rng.choice([-1.0, 1.0], shape)


def _conv_case(rng):
    stride, dilation = int(rng.integers(1, 3)), int(rng.integers(1, 3))
    padding = int(rng.integers(0, 3))
    n, c, k = 1, int(rng.integers(1, 3)), int(rng.integers(1, 3))
    size = int(rng.integers(5, 8))
    args = [
        _t(rng.standard_normal((n, c, size, size))),
        _t(rng.standard_normal((k, c, 3, 3))),
        _t(rng.standard_normal(k)),
    ]
    return (lambda x, w, b: conv2d(x, w, b, stride, dilation, padding)), args


def _deconv_case(rng):
    stride = int(rng.integers(1, 3))
    kern = int(rng.integers(2, 5))
    padding = int(rng.integers(0, (kern + 1) // 2))
    c, k, size = int(rng.integers(1, 3)), int(rng.integers(1, 3)), int(rng.integers(2, 5))
    args = [
        _t(rng.standard_normal((1, c, size, size))),
        _t(rng.standard_normal((c, k, kern, kern))),
        _t(rng.standard_normal(k)),
    ]
    return (lambda x, w, b: conv_transpose2d(x, w, b, stride, padding)), args


def _maxpool_case(rng):
    k, stride = int(rng.integers(2, 4)), int(rng.integers(1, 3))
    pads = (0, 1, 0, 1) if rng.random() < 0.5 else 0
    shape = (1, int(rng.integers(1, 3)), int(rng.integers(4, 8)), int(rng.integers(4, 8)))
    return (lambda x: pool2d(x, "max", k, stride, pads)), [_t(_distinct(rng, shape))]


def _avgpool_case(rng):
    k, stride = int(rng.integers(2, 4)), int(rng.integers(1, 3))
    shape = (2, int(rng.integers(1, 3)), int(rng.integers(4, 8)), int(rng.integers(4, 8)))
    return (lambda x: pool2d(x, "avg", k, stride, 0)), [_t(rng.standard_normal(shape))]


def _bn_train_case(rng):
    c = int(rng.integers(1, 4))
    shape = (2, c, int(rng.integers(2, 5)), int(rng.integers(2, 5)))
    args = [_t(rng.standard_normal(shape) * 2 + 1), _t(rng.uniform(0.5, 2, c)), _t(rng.standard_normal(c))]
    return (lambda x, g, b: batch_norm(x, g, b, train=True)), args


def _bn_infer_case(rng):
    c = int(rng.integers(1, 4))
    stats = RunningStats(rng.standard_normal(c), rng.uniform(0.5, 2, c))
    shape = (2, c, 3, 3)
    args = [_t(rng.standard_normal(shape)), _t(rng.uniform(0.5, 2, c)), _t(rng.standard_normal(c))]
    return (lambda x, g, b: batch_norm(x, g, b, train=False, stats=stats)), args


def _relu_case(rng):
    return relu, [_t(_away_from_zero(rng, (2, 3, 4, 4)))]


def _add_case(rng):
    shape = (1, 2, 5, 5)
    return add, [_t(rng.standard_normal(shape)), _t(rng.standard_normal(shape))]


def _concat_case(rng):
    a = _t(rng.standard_normal((2, int(rng.integers(1, 4)), 4, 4)))
    b = _t(rng.standard_normal((2, int(rng.integers(1, 4)), 4, 4)))
    return (lambda x, y: concat([x, y])), [a, b]


def _softmax_case(rng):
    return softmax_channels, [_t(rng.standard_normal((2, 2, 4, 4)) * 2)]


def _ce_case(rng):
    target = rng.integers(0, 2, (2, 4, 4))
    return (lambda z: cross_entropy_loss(z, target)), [_t(rng.standard_normal((2, 2, 4, 4)) * 2)]


OP_CASES: Dict[str, Callable[[np.random.Generator], Case]] = {
    "conv2d": _conv_case,
    "conv_transpose2d": _deconv_case,
    "pool2d[max]": _maxpool_case,
    "pool2d[avg]": _avgpool_case,
    "batch_norm[train]": _bn_train_case,
    "batch_norm[infer]": _bn_infer_case,
    "relu": _relu_case,
    "add": _add_case,
    "concat": _concat_case,
    "softmax_channels": _softmax_case,
    "cross_entropy_loss": _ce_case,
}


def check_ops(instances: int = 20, seed: int = 0) -> List[GradCheckResult]:
    """One aggregated result per op over ``instances`` random cases."""
    results = []
    for name, make in OP_CASES.items():
        rng = np.random.default_rng([seed, len(name)])
        worst, checked, failed = 0.0, 0, 0
        for _ in range(instances):
            fn, args = make(rng)
            if sum(a.size for a in args) > 200:
                raise AssertionError(f"{name}: case exceeds 200 elements")
            r = check_op(name, fn, args, rng, eps=OP_STEP, tol=OP_TOLERANCE)
            worst = max(worst, r.max_rel_error)
            checked += r.n_checked
            failed += r.n_failed
        results.append(GradCheckResult(name, worst, checked, failed, OP_TOLERANCE))
    return results


@dataclass
class ModelCheck(GradCheckResult):
    required_fraction: float = MODEL_PASS_FRACTION

    @property
    def passed(self) -> bool:  # type: ignore[override]
        return self.pass_fraction >= self.required_fraction


def check_model(
    config: ModelConfig | None = None, samples: int = 600, seed: int = 0, step: float = MODEL_STEP
) -> ModelCheck:
    """Finite differences through the whole network on one 16x16 image.

    Samples ``samples`` parameter entries spread over every tensor.
    """
    config = config or ModelConfig.tiny(16)
    rng = np.random.default_rng(seed)
    model = build_model(config, seed=seed, dtype=np.float64)
    h, w = config.input_size
    image = Tensor(rng.random((1, 3, h, w)))
    target = np.zeros((1, h, w), dtype=np.int64)
    target[:, h // 4 : h // 2, w // 4 : (3 * w) // 4] = 1

    # stats updates are irrelevant to the train-mode loss but must not drift between calls
    snapshot = {k: (s.mean.copy(), s.var.copy()) for k, s in model.stats.items()}

    def restore() -> None:
        for k, s in model.stats.items():
            s.mean[...], s.var[...] = snapshot[k]

    def loss_value() -> float:
        with no_grad():
            v = float(cross_entropy_loss(model.forward(image), target).data)
        restore()
        return v

    loss = cross_entropy_loss(model.forward(image), target)
    backward(loss)
    restore()

    params = model.parameters()
    per = max(2, -(-samples // len(params)))
    worst, checked, failed = 0.0, 0, 0
    for p in params:
        idx = rng.choice(p.size, size=min(per, p.size), replace=False)
        num = numeric_gradient(loss_value, p.data, step, idx).reshape(-1)[idx]
        ana = p.grad.reshape(-1)[idx]
        err = relative_error(ana, num)
        worst = max(worst, float(err.max()))
        checked += err.size
        failed += int((err > MODEL_TOLERANCE).sum())
    return ModelCheck("full model", worst, checked, failed, MODEL_TOLERANCE)


def run_suite(instances: int = 20, seed: int = 0, model_samples: int = 600) -> Tuple[List[GradCheckResult], float]:
    start = time.perf_counter()
    results = check_ops(instances, seed)
    results.append(check_model(samples=model_samples, seed=seed))
    return results, time.perf_counter() - start
