"""Gaussian ramp-up of the unsupervised loss weight."""
from __future__ import annotations

import math
from dataclasses import dataclass

from ..errors import ScheduleError


def ramp(t: float, total: int, scale: float = 20.0, sharpness: float = 5.0) -> float:
    """``scale * exp(-sharpness * (1 - t / total) ** 2)`` for ``0 <= t <= total``."""
    if total <= 0:
        raise ScheduleError(f"total epochs must be positive, got {total}")
    if t < 0 or t > total:
        raise ScheduleError(f"epoch {t} outside [0, {total}]")
    return scale * math.exp(-sharpness * (1.0 - t / total) ** 2)


@dataclass(frozen=True)
class RampSchedule:
    total_epochs: int = 30
    scale: float = 20.0
    sharpness: float = 5.0

    def __call__(self, t: float) -> float:
        return ramp(t, self.total_epochs, self.scale, self.sharpness)
