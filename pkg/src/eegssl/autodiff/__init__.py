"""Minimal reverse-mode autodiff engine (float64, CPU)."""
from . import functional
from .functional import (
    batch_norm, conv1d, cross_entropy, dropout, max_pool1d, mse_loss, one_hot,
)
from .nn import LSTM, BatchNorm1d, Conv1d, Dropout, Linear, Module, Parameter
from .optim import Adam, AdamState, adam_step, clip_gradients
from .tensor import (
    Tensor, add, as_tensor, concat, div, exp, flatten, getitem, leaky_relu, log,
    log_softmax, matmul, mean, mul, neg, no_grad, relu, reshape, sigmoid, softmax,
    split, stack, sub, tanh, topological_order, transpose, tsum,
)

__all__ = [
    "Tensor", "no_grad", "topological_order", "as_tensor",
    "add", "sub", "mul", "div", "neg", "matmul", "tanh", "sigmoid", "relu", "leaky_relu",
    "exp", "log", "softmax", "log_softmax", "tsum", "mean", "reshape", "flatten",
    "transpose", "getitem", "concat", "stack", "split",
    "conv1d", "batch_norm", "max_pool1d", "dropout", "mse_loss", "cross_entropy", "one_hot",
    "Module", "Parameter", "Linear", "Dropout", "Conv1d", "BatchNorm1d", "LSTM",
    "Adam", "AdamState", "adam_step", "clip_gradients", "functional",
]
