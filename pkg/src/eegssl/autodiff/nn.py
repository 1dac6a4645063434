"""Parameter containers and the layers the models are assembled from."""
from __future__ import annotations

from collections import OrderedDict
from typing import Iterator, Optional

import numpy as np

from ..errors import ShapeError
from . import functional as F
from .tensor import Tensor, matmul, sigmoid, tanh


class Parameter(Tensor):
    """A learnable leaf tensor."""

    def __init__(self, data, name: Optional[str] = None):
        super().__init__(data, requires_grad=True, name=name)


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Base class with recursive parameter, buffer and mode handling.

    Sub-modules, parameters and buffers are discovered from instance
    attributes in assignment order, which keeps parameter ordering (and
    therefore optimizer state and checkpoints) stable.
    """

    training = True

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, v in enumerate(value):
                    yield f"{name}.{i}", v

    def named_parameters(self, prefix: str = "") -> Iterator[tuple]:
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
        for name, child in self._children():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple]:
        for name in getattr(self, "_buffers", ()):
            yield prefix + name, getattr(self, name)
        for name, child in self._children():
            yield from child.named_buffers(prefix + name + ".")

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, child in self._children():
            yield from child.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def bind_rng(self, rng: np.random.Generator) -> "Module":
        """Route every stochastic layer to ``rng``."""
        for m in self.modules():
            if isinstance(m, Dropout):
                m.rng = rng
        return self

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state = OrderedDict((n, p.data.copy()) for n, p in self.named_parameters())
        state.update((n, b.copy()) for n, b in self.named_buffers())
        return state

    def load_state_dict(self, state) -> None:
        own = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = (set(own) | set(buffers)) - set(state)
        if missing:
            raise KeyError(f"state is missing entries: {sorted(missing)}")
        for name, p in own.items():
            value = np.asarray(state[name], dtype=float)
            if value.shape != p.shape:
                raise ShapeError(f"{name}: checkpoint shape {value.shape} != parameter shape {p.shape}")
            p.data[...] = value
        for name, b in buffers.items():
            b[...] = state[name]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(uniform_init(rng, (in_features, out_features), in_features))
        self.bias = Parameter(np.zeros(out_features))

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise ShapeError(f"Linear expects last axis {self.in_features}, got input {x.shape}")
        if x.ndim == 2:
            return matmul(x, self.weight) + self.bias
        lead = x.shape[:-1]
        flat = matmul(x.reshape(-1, self.in_features), self.weight) + self.bias
        return flat.reshape(*lead, self.out_features)


class Dropout(Module):
    def __init__(self, p: float = 0.5):
        self.p = p
        self.rng: Optional[np.random.Generator] = None

    def forward(self, x: Tensor) -> Tensor:
        return F.dropout(x, self.p, self.training, self.rng)


class Conv1d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator, stride: int = 1):
        fan_in = in_channels * kernel_size
        self.stride = stride
        self.weight = Parameter(uniform_init(rng, (out_channels, in_channels, kernel_size), fan_in))
        self.bias = Parameter(np.zeros(out_channels))

    def forward(self, x: Tensor) -> Tensor:
        return F.conv1d(x, self.weight, self.bias, self.stride)


class BatchNorm1d(Module):
    _buffers = ("running_mean", "running_var")

    def __init__(self, num_features: int, momentum: float = 0.1, eps: float = 1e-8):
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones(num_features))
        self.beta = Parameter(np.zeros(num_features))
        self.running_mean = np.zeros(num_features)
        self.running_var = np.ones(num_features)

    def forward(self, x: Tensor) -> Tensor:
        return F.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                            self.training, self.momentum, self.eps)


class LSTM(Module):
    """Single-layer unidirectional LSTM unrolled over a fixed number of steps.

    Gate layout inside the fused weight matrices is ``[input, forget, cell,
    output]``. The forget-gate bias starts at ``forget_bias``.
    """

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator,
                 steps: int = 8, forget_bias: float = 1.0):
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.steps = steps
        h = hidden_size
        self.w_input = Parameter(uniform_init(rng, (input_size, 4 * h), input_size))
        self.w_hidden = Parameter(uniform_init(rng, (h, 4 * h), h))
        bias = np.zeros(4 * h)
        bias[h:2 * h] = forget_bias
        self.bias = Parameter(bias)

    def forward(self, inputs) -> list:
        """Run the recurrence.

        ``inputs`` is either a ``(batch, steps, input_size)`` tensor, in
        which case the input projection is computed for all steps at once,
        or a list of ``(batch, input_size)`` tensors, one per step.
        Returns the list of hidden states.
        """
        h = self.hidden_size
        if isinstance(inputs, Tensor):
            if inputs.ndim != 3 or inputs.shape[1] != self.steps or inputs.shape[2] != self.input_size:
                raise ShapeError(f"LSTM expects (batch, {self.steps}, {self.input_size}), got {inputs.shape}")
            batch = inputs.shape[0]
            proj = (matmul(inputs.reshape(-1, self.input_size), self.w_input) + self.bias)
            proj = proj.reshape(batch, self.steps, 4 * h)
            step_inputs = [proj[:, t, :] for t in range(self.steps)]
        else:
            if len(inputs) != self.steps:
                raise ShapeError(f"LSTM expects {self.steps} steps, got {len(inputs)}")
            step_inputs = [matmul(x, self.w_input) + self.bias for x in inputs]
        return self.forward_projected(step_inputs)

    def forward_projected(self, step_inputs) -> list:
        """Recurrence over inputs already multiplied by ``w_input`` (bias included)."""
        h = self.hidden_size
        if len(step_inputs) != self.steps:
            raise ShapeError(f"LSTM expects {self.steps} steps, got {len(step_inputs)}")
        hidden = cell = None
        outputs = []
        for t, xp in enumerate(step_inputs):
            # zero initial state: the recurrent terms vanish at t == 0
            gates = xp if t == 0 else xp + matmul(hidden, self.w_hidden)
            i = sigmoid(gates[:, :h])
            f = sigmoid(gates[:, h:2 * h])
            g = tanh(gates[:, 2 * h:3 * h])
            o = sigmoid(gates[:, 3 * h:])
            cell = i * g if t == 0 else f * cell + i * g
            hidden = o * tanh(cell)
            outputs.append(hidden)
        return outputs


__all__ = [
    "Parameter", "Module", "Linear", "Dropout", "Conv1d", "BatchNorm1d", "LSTM",
    "uniform_init",
]
