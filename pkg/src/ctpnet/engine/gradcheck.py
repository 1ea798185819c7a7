"""Central finite-difference gradient checks."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .functional import weighted_sum
from .tensor import Tensor, backward, no_grad

# Below this magnitude both gradients count as zero; keeps roundoff on
# vanishing entries from dominating the relative error.
REL_FLOOR = 1e-7


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    n_checked: int
    n_failed: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.n_failed == 0

    @property
    def pass_fraction(self) -> float:
        return 1.0 - self.n_failed / max(self.n_checked, 1)


def numeric_gradient(
    loss_fn: Callable[[], float], arr: np.ndarray, eps: float, indices: Optional[Sequence[int]] = None
) -> np.ndarray:
    """d loss / d arr by central differences, perturbing ``arr`` in place.

    Only the flat ``indices`` are evaluated (all when None); others stay 0.
    """
    flat = arr.reshape(-1)
    out = np.zeros(flat.size, dtype=np.float64)
    idx = range(flat.size) if indices is None else indices
    for i in idx:
        orig = flat[i]
        flat[i] = orig + eps
        plus = loss_fn()
        flat[i] = orig - eps
        minus = loss_fn()
        flat[i] = orig
        out[i] = (plus - minus) / (2 * eps)
    return out.reshape(arr.shape)


def check_op(
    name: str,
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    rng: np.random.Generator,
    eps: float = 1e-3,
    tol: float = 1e-4,
) -> GradCheckResult:
    """Compare backward against finite differences for every requires_grad input.

    Non-scalar outputs are projected to a scalar with fixed random weights.
    """
    out = fn(*inputs)
    proj = rng.standard_normal(out.shape) if out.data.size > 1 else np.ones(out.shape)

    def scalar(t: Tensor) -> Tensor:
        return weighted_sum(t, proj) if t.data.size > 1 else t

    for t in inputs:
        t.grad = None
    backward(scalar(out))

    def loss_value() -> float:
        with no_grad():
            return float(scalar(fn(*inputs)).data)

    worst, checked, failed = 0.0, 0, 0
    for t in inputs:
        if not t.requires_grad:
            continue
        num = numeric_gradient(loss_value, t.data, eps)
        ana = t.grad if t.grad is not None else np.zeros_like(t.data)
        err = relative_error(ana, num)
        worst = max(worst, float(err.max(initial=0.0)))
        checked += err.size
        failed += int((err > tol).sum())
    return GradCheckResult(name, worst, checked, failed, tol)
