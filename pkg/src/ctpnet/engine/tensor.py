"""Tensor values and the reverse-mode machinery behind them."""
from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Any, Iterator, Optional, Sequence, Tuple

import numpy as np

_state = threading.local()


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN or Inf."""


class GraphError(RuntimeError):
    pass


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Run ops without recording them (inference, parameter updates)."""
    prev = grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    """Dense real array with an optional gradient buffer.

    Tensors are treated as immutable once produced; only the optimizer
    writes into ``data`` of parameters.
    """

    __slots__ = ("data", "requires_grad", "grad", "_op", "name")

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        dtype: Any = None,
        name: Optional[str] = None,
    ) -> None:
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32 if dtype is None else dtype)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._op: Optional[Op] = None
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._op is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __add__(self, other: "Tensor") -> "Tensor":
        from .functional import add

        return add(self, other)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}{tag})"


def _check_finite(arr: np.ndarray, where: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values produced by {where}")


class Op:
    """One differentiable operation.

    Subclasses implement ``forward`` on raw arrays and ``backward`` which maps
    the output gradient to one gradient (or None) per input.
    """

    inputs: Tuple[Tensor, ...] = ()

    def forward(self, *arrays: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        raise NotImplementedError

    def __call__(self, *inputs: Tensor) -> Tensor:
        out = self.forward(*(t.data for t in inputs))
        _check_finite(out, type(self).__name__)
        needs = grad_enabled() and any(t.requires_grad for t in inputs)
        result = Tensor(out, requires_grad=needs)
        if needs:
            self.inputs = inputs
            result._op = self
        return result


class Graph:
    """Topologically ordered record of the ops that produced ``output``."""

    def __init__(self, output: Tensor) -> None:
        self.output = output
        self.order: list[Tensor] = []
        on_path: set[int] = set()
        done: set[int] = set()
        # iterative DFS; post-order gives inputs before consumers
        stack: list[Tuple[Tensor, bool]] = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            key = id(node)
            if expanded:
                on_path.discard(key)
                done.add(key)
                self.order.append(node)
                continue
            if key in done:
                continue
            if key in on_path:
                raise GraphError("cycle detected in computation graph")
            on_path.add(key)
            stack.append((node, True))
            if node._op is not None:
                for parent in reversed(node._op.inputs):
                    pkey = id(parent)
                    if pkey in on_path:
                        raise GraphError("cycle detected in computation graph")
                    if pkey not in done:
                        stack.append((parent, False))

    def __len__(self) -> int:
        return len(self.order)

    def leaves(self) -> list[Tensor]:
        return [t for t in self.order if t.is_leaf and t.requires_grad]


def backward(loss: Tensor, graph: Optional[Graph] = None) -> Graph:
    """Populate ``.grad`` on every requires_grad leaf reachable from ``loss``.

    Leaf gradients accumulate across calls until cleared.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if graph is None:
        graph = Graph(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._op is None:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        in_grads = node._op.backward(g)
        for parent, pg in zip(node._op.inputs, in_grads):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.shape:
                raise GraphError(
                    f"{type(node._op).__name__} returned grad of shape {pg.shape} for input {parent.shape}"
                )
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return graph
