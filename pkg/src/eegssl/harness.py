"""Experiment orchestration: configs, per-seed runs, result tables,
confusion matrices and PCA decision-boundary exports.

Every run lives in a directory named after a hash of its configuration::

    <out>/runs/<hash>/config.json
                     /seed<k>/split.json      labeled/unlabeled manifest
                     /seed<k>/report.csv      per-epoch training log
                     /seed<k>/model.ckpt      final weights
                     /result.json             per-seed test accuracies

A completed run directory is reused as-is unless ``force`` is set.
"""
from __future__ import annotations

import csv
import dataclasses
import fcntl
import hashlib
import io
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .checkpoint import load_model, save_model
from .data import Dataset, SplitPlan, SynthSpec, load_features, make_split, session_split, synth_features
from .errors import ConfigError, SchemaError
from .models import build_model, predict
from .ssltrain import (
    TrainConfig, pretrain_finetune, pseudo_label_train, train_joint, train_mean_teacher, train_pi_model,
    train_supervised, train_temporal_ensembling,
)

DEFAULT_SEEDS = (0, 1, 2, 3, 4)
AUTOENCODER_METHODS = ("att_rae", "rae", "sae", "pretrain_sae")
BACKBONE_METHODS = ("pseudo_label", "pi_model", "temporal_ensembling", "mean_teacher")
# supervised-only reference: a backbone, or (backbone n/a) the Att. RAE encoder + classifier
METHODS = AUTOENCODER_METHODS + BACKBONE_METHODS + ("supervised",)
BACKBONES = ("dnn", "cnn", "n/a")

_TRAINERS = {
    "att_rae": train_joint,
    "rae": train_joint,
    "sae": train_joint,
    "pretrain_sae": pretrain_finetune,
    "pseudo_label": pseudo_label_train,
    "pi_model": train_pi_model,
    "temporal_ensembling": train_temporal_ensembling,
    "mean_teacher": train_mean_teacher,
    "supervised": train_supervised,
}


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    method: str = "att_rae"
    backbone: str = "n/a"
    label_fraction: float = 0.1
    seeds: tuple = DEFAULT_SEEDS
    epochs: int = 30
    lr: float = 1e-3
    hidden_size: int = 256
    # feature CSV; empty means the bundled synthetic corpus
    data: str = ""
    synth_seed: int = 0
    synth_segments: int = 200
    out: str = "runs"

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if self.backbone not in BACKBONES:
            raise ConfigError(f"unknown backbone {self.backbone!r}; choose from {', '.join(BACKBONES)}")
        if self.method in AUTOENCODER_METHODS and self.backbone != "n/a":
            # autoencoder methods bring their own encoder
            object.__setattr__(self, "backbone", "n/a")
        if self.method in BACKBONE_METHODS and self.backbone == "n/a":
            raise ConfigError(f"method {self.method!r} needs a backbone (dnn or cnn)")
        if not 0.0 < self.label_fraction <= 1.0:
            raise ConfigError(f"label_fraction must lie in (0, 1], got {self.label_fraction}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.epochs < 1 or self.lr <= 0 or self.hidden_size < 1 or self.synth_segments < 1:
            raise ConfigError("epochs, lr, hidden_size and synth_segments must be positive")

    @property
    def model_kind(self) -> str:
        if self.method in ("att_rae", "rae", "sae"):
            return self.method
        if self.method == "pretrain_sae":
            return "sae"
        return "att_rae" if self.backbone == "n/a" else self.backbone

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def identity(self) -> dict:
        """Fields that determine the results (everything but the output root)."""
        d = dataclasses.asdict(self)
        d.pop("out")
        d["seeds"] = list(self.seeds)
        return d

    def digest(self) -> str:
        text = json.dumps(self.identity(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, lr=self.lr)


def _coerce(name: str, text: str):
    kind = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}[name]
    text = text.strip()
    try:
        if name == "seeds":
            return tuple(int(s) for s in text.replace(",", " ").split())
        if kind in ("int", int):
            return int(text)
        if kind in ("float", float):
            return float(text)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {text!r}") from None
    return text


def parse_config_text(text: str, base: ExperimentConfig = None) -> ExperimentConfig:
    """Parse flat ``key = value`` lines (``#`` starts a comment)."""
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    changes = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        changes[key] = _coerce(key, value)
    return dataclasses.replace(base or ExperimentConfig(), **changes)


def load_config(path, base: ExperimentConfig = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, base)


def format_config(cfg: ExperimentConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        lines.append(f"{f.name} = {' '.join(map(str, value)) if f.name == 'seeds' else value}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

def load_data(cfg: ExperimentConfig):
    """Train/test datasets by session, standardized with train statistics."""
    if cfg.data:
        ds = load_features(cfg.data)
    else:
        ds = synth_features(SynthSpec(segments_per_session=cfg.synth_segments), seed=cfg.synth_seed)
    if np.any(ds.y < 0):
        raise SchemaError("every segment needs a label for train/test evaluation")
    train, test = session_split(ds)
    if len(train) == 0 or len(test) == 0:
        raise SchemaError("session split left the train or test set empty")
    mean, std = train.standardizer()
    return train.standardized(mean, std), test.standardized(mean, std)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def metrics(predictions, truths) -> float:
    """Accuracy: the fraction of exact matches."""
    p, t = np.asarray(predictions), np.asarray(truths)
    if p.size == 0:
        raise ValueError("accuracy of an empty prediction set is undefined")
    if p.shape != t.shape:
        raise ValueError(f"predictions {p.shape} and truths {t.shape} differ in shape")
    return float(np.mean(p == t))


def confusion_matrix(truths, predictions, n_classes: int = 3) -> np.ndarray:
    """Row-normalized confusion matrix (rows true, columns predicted).

    A class absent from ``truths`` gets a row of NaN rather than zeros.
    """
    t, p = np.asarray(truths, dtype=int), np.asarray(predictions, dtype=int)
    if t.shape != p.shape:
        raise ValueError("truths and predictions differ in length")
    counts = np.zeros((n_classes, n_classes))
    np.add.at(counts, (t, p), 1.0)
    totals = counts.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = counts / totals
    out[totals[:, 0] == 0] = np.nan
    return out


def model_confusion(model, ds: Dataset) -> np.ndarray:
    return confusion_matrix(ds.y, predict(model, ds.x))


def write_matrix_csv(path, matrix: np.ndarray, names=("negative", "neutral", "positive")) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\pred"] + list(names))
        for name, row in zip(names, matrix):
            w.writerow([name] + ["" if math.isnan(v) else f"{v:.6f}" for v in row])


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------

@dataclass
class ResultRow:
    method: str
    backbone: str
    fraction: float
    mean: float
    std: float
    n_runs: int
    accuracies: tuple = ()


@dataclass
class ResultTable:
    rows: list = field(default_factory=list)

    COLUMNS = ("method", "backbone", "fraction", "mean", "std", "n_runs")

    def add(self, row: ResultRow):
        if not 0.0 <= row.mean <= 1.0 or row.std < 0:
            raise ValueError("mean accuracy must lie in [0, 1] and std must be non-negative")
        self.rows.append(row)

    def lookup(self, method: str, fraction: float, backbone: str = "n/a") -> ResultRow:
        for r in self.rows:
            if r.method == method and r.backbone == backbone and math.isclose(r.fraction, fraction):
                return r
        raise KeyError((method, backbone, fraction))

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for r in self.rows:
            w.writerow([r.method, r.backbone, f"{r.fraction:g}", f"{r.mean:.6f}", f"{r.std:.6f}", r.n_runs])
        return buf.getvalue()

    def to_csv(self, path):
        Path(path).write_text(self.to_csv_text())

    def to_json(self, path):
        rows = [dict(dataclasses.asdict(r), accuracies=list(r.accuracies)) for r in self.rows]
        Path(path).write_text(json.dumps({"rows": rows}, indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_csv(cls, path) -> "ResultTable":
        table = cls()
        with Path(path).open(newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != cls.COLUMNS:
                raise SchemaError(f"{path}: expected columns {', '.join(cls.COLUMNS)}")
            for rec in reader:
                table.add(ResultRow(rec["method"], rec["backbone"], float(rec["fraction"]),
                                    float(rec["mean"]), float(rec["std"]), int(rec["n_runs"])))
        return table

    @classmethod
    def concat(cls, tables) -> "ResultTable":
        out = cls()
        for t in tables:
            for r in t.rows:
                out.add(r)
        return out


def aggregate(cfg: ExperimentConfig, accuracies: Sequence[float]) -> ResultRow:
    """Mean and (population) std over every per-seed run."""
    acc = np.asarray(accuracies, dtype=float)
    return ResultRow(cfg.method, cfg.backbone, cfg.label_fraction, float(acc.mean()), float(acc.std()),
                     len(acc), tuple(float(a) for a in acc))


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------

def run_dir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.out) / "runs" / cfg.digest()


def _register(cfg: ExperimentConfig, status: str) -> None:
    """Record the run in ``<out>/registry.json`` under an exclusive file lock."""
    root = Path(cfg.out)
    root.mkdir(parents=True, exist_ok=True)
    with (root / "registry.lock").open("w") as lock:
        fcntl.flock(lock, fcntl.LOCK_EX)
        path = root / "registry.json"
        registry = json.loads(path.read_text()) if path.exists() else {}
        registry[cfg.digest()] = {"config": cfg.identity(), "status": status}
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(registry, indent=2, sort_keys=True) + "\n")
        os.replace(tmp, path)


def train_one(cfg: ExperimentConfig, train: Dataset, test: Dataset, seed: int):
    """Train one model for one seed. Returns ``(model, plan, report)``."""
    plan = make_split(train, cfg.label_fraction, seed)
    model = build_model(cfg.model_kind, seed=seed, input_size=train.n_features, hidden_size=cfg.hidden_size)
    report = _TRAINERS[cfg.method](model, train, plan, cfg.train_config(), test,
                                   np.random.default_rng([seed, 1]))
    return model, plan, report


def run_experiment(cfg: ExperimentConfig, data=None, force: bool = False) -> ResultRow:
    """Train every seed, evaluate on the test sessions and aggregate.

    ``data`` optionally supplies ``(train, test)`` to skip loading.
    """
    directory = run_dir(cfg)
    result_path = directory / "result.json"
    if result_path.exists() and not force:
        accs = json.loads(result_path.read_text())["accuracies"]
        return aggregate(cfg, [accs[str(s)] for s in cfg.seeds])
    train, test = data if data is not None else load_data(cfg)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "config.json").write_text(json.dumps(cfg.identity(), indent=2, sort_keys=True) + "\n")
    _register(cfg, "running")
    accs = {}
    for seed in cfg.seeds:
        model, plan, report = train_one(cfg, train, test, seed)
        seed_dir = directory / f"seed{seed}"
        seed_dir.mkdir(exist_ok=True)
        plan.save(seed_dir / "split.json")
        report.to_csv(seed_dir / "report.csv")
        save_model(seed_dir / "model.ckpt", model, cfg.model_kind, input_size=train.n_features,
                   hidden_size=cfg.hidden_size)
        accs[str(seed)] = metrics(predict(model, test.x), test.y)
    result_path.write_text(json.dumps({"accuracies": accs}, indent=2, sort_keys=True) + "\n")
    _register(cfg, "done")
    return aggregate(cfg, [accs[str(s)] for s in cfg.seeds])


def parse_method(spec: str):
    """``"pi_model:cnn"`` -> ``("pi_model", "cnn")``; a bare name uses backbone n/a."""
    method, _, backbone = spec.partition(":")
    return method.strip(), (backbone.strip() or "n/a")


def sweep(base: ExperimentConfig, methods: Sequence, fractions: Sequence[float],
          force: bool = False) -> ResultTable:
    """One row per (method, fraction); methods are names or ``(method, backbone)`` pairs.

    Every method sees the same labeled/unlabeled partition for a given
    (fraction, seed), since splits depend only on the data and the seed.
    """
    pairs = [parse_method(m) if isinstance(m, str) else tuple(m) for m in methods]
    configs = [base.replace(method=m, backbone=b, label_fraction=float(f)) for m, b in pairs for f in fractions]
    data = load_data(base) if configs else None
    table = ResultTable()
    for cfg in configs:
        table.add(run_experiment(cfg, data, force))
    return table


def load_run(cfg_or_dir, seed: int):
    """Model, split plan and config of one finished seed of a run."""
    directory = run_dir(cfg_or_dir) if isinstance(cfg_or_dir, ExperimentConfig) else Path(cfg_or_dir)
    identity = json.loads((directory / "config.json").read_text())
    cfg = ExperimentConfig(**identity, out=str(directory.parent.parent))
    seed_dir = directory / f"seed{seed}"
    if not seed_dir.exists():
        raise SchemaError(f"{directory}: no artifacts for seed {seed}")
    return load_model(seed_dir / "model.ckpt"), SplitPlan.load(seed_dir / "split.json"), cfg


# ---------------------------------------------------------------------------
# decision boundaries
# ---------------------------------------------------------------------------

class Pca2:
    """Two-component PCA from a thin SVD of the centered data."""

    def __init__(self, x: np.ndarray):
        x = np.asarray(x, dtype=float).reshape(len(x), -1)
        self.mean = x.mean(axis=0)
        _, s, vt = np.linalg.svd(x - self.mean, full_matrices=False)
        self.components = vt[:2]
        self.explained = s[:2] ** 2 / max(len(x) - 1, 1)

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float).reshape(len(x), -1) - self.mean) @ self.components.T

    def inverse_transform(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z) @ self.components + self.mean


class LinearReference:
    """One-vs-rest linear max-margin classifier on flattened features."""

    def __init__(self, c: float = 1.0, seed: int = 0):
        from sklearn.svm import LinearSVC

        self._svm = LinearSVC(C=c, random_state=seed, max_iter=20000)

    def fit(self, x: np.ndarray, y: np.ndarray) -> "LinearReference":
        self._svm.fit(np.asarray(x).reshape(len(x), -1), y)
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self._svm.predict(np.asarray(x).reshape(len(x), -1)).astype(int)


def _classify(model, x: np.ndarray) -> np.ndarray:
    if isinstance(model, LinearReference):
        return model.predict(x)
    return predict(model, x)


def boundary_grid(pca: Pca2, points2d: np.ndarray, grid_res: int, margin: float = 0.1):
    lo, hi = points2d.min(axis=0), points2d.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    lo, hi = lo - margin * span, hi + margin * span
    gx, gy = np.linspace(lo[0], hi[0], grid_res), np.linspace(lo[1], hi[1], grid_res)
    xx, yy = np.meshgrid(gx, gy)
    return np.column_stack([xx.ravel(), yy.ravel()])


def decision_boundary_export(model, train: Dataset, path, grid_res: int = 200,
                             plan: Optional[SplitPlan] = None, points: Optional[Dataset] = None) -> int:
    """Write ``px, py, predicted_class, role, label`` rows; returns the row count.

    The PCA is fitted on ``train``. Lattice points (role ``grid``) are mapped
    back to feature space with the PCA inverse and classified by ``model``.
    The projected ``points`` (default: ``train``) follow with role
    ``labeled`` or ``unlabeled`` according to ``plan`` (all ``labeled`` when
    no plan is given).
    """
    if grid_res < 2:
        raise ValueError(f"grid_res must be at least 2, got {grid_res}")
    points = train if points is None else points
    pca = Pca2(train.x)
    proj = pca.transform(points.x)
    grid = boundary_grid(pca, proj, grid_res)
    shape = (-1,) + train.x.shape[1:]
    grid_pred = _classify(model, pca.inverse_transform(grid).reshape(shape))
    point_pred = _classify(model, points.x)
    labeled = set(plan.labeled_ids) if plan is not None else None
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["px", "py", "predicted_class", "role", "label"])
        for (px, py), c in zip(grid, grid_pred):
            w.writerow([f"{px:.6g}", f"{py:.6g}", int(c), "grid", ""])
        for (px, py), c, sid, y in zip(proj, point_pred, points.ids, points.y):
            role = "labeled" if labeled is None or sid in labeled else "unlabeled"
            w.writerow([f"{px:.6g}", f"{py:.6g}", int(c), role, int(y) if y >= 0 else ""])
    return len(grid) + len(points)


__all__ = [
    "ExperimentConfig", "ResultRow", "ResultTable", "METHODS", "AUTOENCODER_METHODS", "BACKBONE_METHODS",
    "parse_config_text", "load_config", "format_config", "load_data", "metrics", "confusion_matrix",
    "model_confusion", "write_matrix_csv", "aggregate", "run_dir", "train_one", "run_experiment", "sweep",
    "parse_method", "load_run", "Pca2", "LinearReference", "decision_boundary_export",
]
