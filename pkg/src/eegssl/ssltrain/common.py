"""Configuration and helpers shared by every trainer."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..autodiff import Adam, Tensor, clip_gradients
from ..autodiff.nn import Dropout, Module
from ..data import Dataset
from ..errors import NumericError
from ..models import predict
from .schedule import ramp


@dataclass
class TrainConfig:
    epochs: int = 30
    lr: float = 1e-3
    clip: float = 1.0
    batch_unlabeled: int = 64
    ramp_scale: float = 20.0
    ramp_sharpness: float = 5.0
    noise_std: float = 0.15
    ema_decay: float = 0.95
    te_momentum: float = 0.6
    # evaluate on the test set every k epochs (0: last epoch only)
    eval_every: int = 0
    # fixed unsupervised weight instead of the ramp (None: ramp)
    weight_override: Optional[float] = None

    def unsup_weight(self, t: int) -> float:
        if self.weight_override is not None:
            return float(self.weight_override)
        return ramp(t, self.epochs, self.ramp_scale, self.ramp_sharpness)


def make_optimizer(params, config: TrainConfig) -> Adam:
    return Adam(params, lr=config.lr)


def optimizer_step(loss: Tensor, optimizer: Adam, config: TrainConfig) -> None:
    """Backward, element-wise clip, Adam update."""
    if not np.isfinite(loss.data).all():
        raise NumericError("loss is not finite")
    optimizer.zero_grad()
    loss.backward()
    clip_gradients(optimizer.params, -config.clip, config.clip)
    optimizer.step()


def accuracy(model: Module, ds: Optional[Dataset]) -> float:
    if ds is None or len(ds) == 0:
        return math.nan
    return float(np.mean(predict(model, ds.x) == ds.y))


def should_eval(t: int, config: TrainConfig) -> bool:
    return t == config.epochs or (config.eval_every > 0 and t % config.eval_every == 0)


def set_dropout(model: Module, p: float) -> None:
    for m in model.modules():
        if isinstance(m, Dropout):
            m.p = p


class Stopwatch:
    def __init__(self):
        self.start = time.perf_counter()

    def ms(self) -> float:
        return (time.perf_counter() - self.start) * 1e3
