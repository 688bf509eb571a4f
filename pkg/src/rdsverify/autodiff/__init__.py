"""Minimal float64 tensor engine with reverse-mode differentiation."""

from .ops import BatchNormState, batchnorm, conv1d, linear, lstm, masked_mean_time, maxpool_indices
from .tensor import Tensor, affine, as_tensor, concat, exp, log, relu, sigmoid, softmax, sqrt, std, tanh

__all__ = [
    "BatchNormState",
    "Tensor",
    "affine",
    "as_tensor",
    "batchnorm",
    "concat",
    "conv1d",
    "exp",
    "linear",
    "log",
    "lstm",
    "masked_mean_time",
    "maxpool_indices",
    "relu",
    "sigmoid",
    "softmax",
    "sqrt",
    "std",
    "tanh",
]
