"""Adam with bias correction and element-wise gradient clipping."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import TrainingError


def clip_gradients(params: Sequence, lo: float = -1.0, hi: float = 1.0) -> None:
    """Clamp every gradient component of ``params`` to ``[lo, hi]`` in place."""
    for p in params:
        if p.grad is not None:
            np.clip(p.grad, lo, hi, out=p.grad)


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)


def adam_step(params: Sequence, state: AdamState) -> None:
    """One Adam update of ``params`` from their ``.grad`` buffers."""
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p.data) for p in params]
        state.second_moment = [np.zeros_like(p.data) for p in params]
    if len(state.first_moment) != len(params):
        raise TrainingError("optimizer state does not match the parameter list")
    for k, p in enumerate(params):
        if p.grad is None:
            label = p.name or f"#{k}"
            raise TrainingError(f"parameter {label} {p.shape} has no gradient")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    lr_t = state.learning_rate
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, m, v in zip(params, state.first_moment, state.second_moment):
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr_t * (m / c1) / (np.sqrt(v / c2) + state.epsilon)


class Adam:
    """Thin stateful wrapper over :func:`adam_step`."""

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(learning_rate=lr, beta1=betas[0], beta2=betas[1], epsilon=eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        adam_step(self.params, self.state)
