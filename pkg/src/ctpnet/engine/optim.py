"""Plain stochastic gradient descent."""
from __future__ import annotations

from typing import Iterable

from .tensor import Tensor


class MissingGradientError(RuntimeError):
    pass


class SGD:
    """p <- p - lr * grad for every registered parameter, then grads are cleared."""

    def __init__(self, params: Iterable[Tensor], lr: float) -> None:
        if not lr > 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = float(lr)

    def step(self, allow_missing: bool = False) -> None:
        for p in self.params:
            if p.grad is None:
                if allow_missing:
                    continue
                raise MissingGradientError(f"parameter {p.name or p.shape} has no gradient")
            p.data -= (self.lr * p.grad).astype(p.data.dtype, copy=False)
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
