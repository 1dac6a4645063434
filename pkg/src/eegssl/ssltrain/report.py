"""Per-epoch training logs."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

# CSV header; the unsupervised loss weight is logged under "eta"
COLUMNS = ("epoch", "eta", "loss_u", "loss_s", "loss_total", "train_acc", "test_acc", "wall_ms")
_FIELDS = dict(zip(COLUMNS, ("epoch", "unsup_weight") + COLUMNS[2:]))


@dataclass
class EpochRecord:
    epoch: int
    unsup_weight: float
    loss_u: float
    loss_s: float
    loss_total: float
    train_acc: float
    test_acc: float = math.nan
    wall_ms: float = 0.0
    phase: str = "train"


@dataclass
class TrainReport:
    """Epoch records of one training run; multi-phase trainers keep counting
    epochs across phases and note the boundaries in ``phases``."""

    records: list = field(default_factory=list)
    phases: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def add(self, record: EpochRecord):
        for name in ("unsup_weight", "loss_u", "loss_s", "loss_total", "train_acc", "test_acc", "wall_ms"):
            setattr(record, name, float(getattr(record, name)))
        if self.phases and self.phases[-1][2] is None:
            record.phase = self.phases[-1][0]
        self.records.append(record)

    def begin_phase(self, name: str):
        self.phases.append([name, len(self.records) + 1, None])

    def end_phase(self):
        self.phases[-1][2] = len(self.records)

    def extend(self, other: "TrainReport", phase: str):
        self.begin_phase(phase)
        offset = len(self.records)
        for r in other.records:
            r.epoch += offset
            r.phase = phase
            self.add(r)
        self.notes.extend(other.notes)
        self.end_phase()

    def column(self, name: str) -> list:
        return [getattr(r, name) for r in self.records]

    def to_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(COLUMNS)
            for r in self.records:
                w.writerow(["" if isinstance(v, float) and math.isnan(v) else v
                            for v in (getattr(r, _FIELDS[c]) for c in COLUMNS)])
