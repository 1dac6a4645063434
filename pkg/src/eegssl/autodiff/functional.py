"""Layer-level differentiable operations: convolution, normalization,
pooling, dropout and the two training losses."""
from __future__ import annotations

from typing import Optional

import numpy as np

from ..errors import DegenerateError, ShapeError, SchemaError
from .tensor import Tensor, _make, as_tensor, log_softmax, tsum


def conv1d(x, weight, bias=None, stride: int = 1) -> Tensor:
    """Valid (unpadded) 1-D cross-correlation.

    ``x`` is ``(batch, in_channels, length)`` or ``(in_channels, length)``;
    ``weight`` is ``(out_channels, in_channels, kernel)``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim == 2:
        out = conv1d(x.reshape(1, *x.shape), weight, bias, stride)
        return out.reshape(out.shape[1:])
    if x.ndim != 3 or weight.ndim != 3:
        raise ShapeError(f"conv1d: expected 3-D input and weight, got {x.shape} and {weight.shape}")
    batch, c_in, length = x.shape
    c_out, w_in, kernel = weight.shape
    if w_in != c_in:
        raise ShapeError(f"conv1d: input has {c_in} channels but weight {weight.shape} expects {w_in}")
    if length < kernel:
        raise ShapeError(f"conv1d: input length {length} shorter than kernel {kernel}")
    out_len = (length - kernel) // stride + 1
    idx = np.arange(out_len)[:, None] * stride + np.arange(kernel)[None, :]
    # (batch, out_len, c_in * kernel)
    patches = x.data[:, :, idx].transpose(0, 2, 1, 3).reshape(batch * out_len, c_in * kernel)
    w2 = weight.data.reshape(c_out, c_in * kernel)
    out = patches @ w2.T
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
    out = out.reshape(batch, out_len, c_out).transpose(0, 2, 1)

    def backward(g):
        g2 = g.transpose(0, 2, 1).reshape(batch * out_len, c_out)
        if weight.requires_grad:
            weight._accumulate((g2.T @ patches).reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g2.sum(axis=0))
        if x.requires_grad:
            gp = (g2 @ w2).reshape(batch, out_len, c_in, kernel)
            gx = np.zeros_like(x.data)
            stop = stride * (out_len - 1) + 1
            for k in range(kernel):
                gx[:, :, k:k + stop:stride] += gp[:, :, :, k].transpose(0, 2, 1)
            x._accumulate(gx)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(np.ascontiguousarray(out), parents, "conv1d", backward)


def batch_norm(x, gamma, beta, running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.1, eps: float = 1e-8) -> Tensor:
    """Batch normalization over ``(batch,)`` or ``(batch, length)`` axes.

    In training mode the batch statistics normalize the input and the
    running buffers are updated in place; in eval mode the buffers are used.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim not in (2, 3):
        raise ShapeError(f"batch_norm: expected 2-D or 3-D input, got {x.shape}")
    axes = (0,) if x.ndim == 2 else (0, 2)
    bshape = (1, -1) if x.ndim == 2 else (1, -1, 1)
    if training:
        if x.shape[0] < 2:
            raise DegenerateError("batch_norm: batch of size 1 has no variance in training mode")
        count = x.data.size // x.shape[1]
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * count / (count - 1)
    else:
        mu, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(bshape)) * inv_std.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)

    def backward(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=axes))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=axes))
        if x.requires_grad:
            dxhat = g * gamma.data.reshape(bshape)
            if training:
                m = x.data.size // x.shape[1]
                s1 = dxhat.sum(axis=axes, keepdims=True)
                s2 = (dxhat * xhat).sum(axis=axes, keepdims=True)
                x._accumulate(inv_std.reshape(bshape) / m * (m * dxhat - s1 - xhat * s2))
            else:
                x._accumulate(dxhat * inv_std.reshape(bshape))

    return _make(out, (x, gamma, beta), "batch_norm", backward)


def max_pool1d(x, window: int = 2, stride: int = 2) -> Tensor:
    """Max pooling over the last axis; a trailing partial window is dropped."""
    x = as_tensor(x)
    if window != stride:
        raise ShapeError("max_pool1d: only non-overlapping windows (window == stride) are supported")
    length = x.shape[-1]
    out_len = length // window
    if out_len < 1:
        raise ShapeError(f"max_pool1d: length {length} shorter than window {window}")
    trimmed = x.data[..., :out_len * window].reshape(x.shape[:-1] + (out_len, window))
    arg = trimmed.argmax(axis=-1)
    out = np.take_along_axis(trimmed, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gw = np.zeros_like(trimmed)
        np.put_along_axis(gw, arg[..., None], g[..., None], axis=-1)
        gx = np.zeros_like(x.data)
        gx[..., :out_len * window] = gw.reshape(x.shape[:-1] + (out_len * window,))
        x._accumulate(gx)

    return _make(out, (x,), "max_pool1d", backward)


def dropout(x, p: float, training: bool, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout: kept units are scaled by ``1 / (1 - p)``.

    Outside training (or with ``p == 0``) the input is returned unchanged.
    """
    x = as_tensor(x)
    if not training or p == 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if rng is None:
        raise ValueError("dropout in training mode needs a random generator")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return _make(x.data * mask, (x,), "dropout", lambda g: x._accumulate(g * mask))


def mse_loss(pred, target) -> Tensor:
    """Batch mean of the per-sample squared L2 distance.

    The first axis indexes samples; every other axis is summed.
    """
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: shapes {pred.shape} and {target.shape} differ")
    diff = pred - target
    return tsum(diff * diff) * (1.0 / pred.shape[0])


def one_hot(labels, num_classes: int = 3) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def cross_entropy(logits, targets) -> Tensor:
    """Mean negative log-likelihood of one-hot ``targets`` under softmax(logits)."""
    logits = as_tensor(logits)
    t = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=float)
    if t.shape != logits.shape:
        raise ShapeError(f"cross_entropy: logits {logits.shape} and targets {t.shape} differ")
    bad = ~(np.isin(t, (0.0, 1.0)).all(axis=1) & (t.sum(axis=1) == 1.0))
    if bad.any():
        raise SchemaError(f"cross_entropy: rows {np.flatnonzero(bad).tolist()} are not one-hot")
    return -tsum(log_softmax(logits, axis=-1) * t) * (1.0 / logits.shape[0])
