"""Minimal dense-tensor autodiff core used by the CTP-Net model."""
from .functional import (
    RunningStats,
    add,
    batch_norm,
    concat,
    conv2d,
    conv_transpose2d,
    cross_entropy_loss,
    pool2d,
    relu,
    softmax_channels,
    tensor_sum,
    weighted_sum,
)
from .kernels import BACKEND
from .optim import SGD, MissingGradientError
from .tensor import Graph, GraphError, NonFiniteError, Tensor, backward, no_grad

__all__ = [
    "BACKEND",
    "Graph",
    "GraphError",
    "MissingGradientError",
    "NonFiniteError",
    "RunningStats",
    "SGD",
    "Tensor",
    "add",
    "backward",
    "batch_norm",
    "concat",
    "conv2d",
    "conv_transpose2d",
    "cross_entropy_loss",
    "no_grad",
    "pool2d",
    "relu",
    "softmax_channels",
    "tensor_sum",
    "weighted_sum",
]
