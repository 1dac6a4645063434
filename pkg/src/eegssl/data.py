"""Datasets of DE feature sequences, labeled/unlabeled splits and the
ratio-preserving mini-batch protocol.

A :class:`Dataset` is a set of arrays indexed by position; every sample also
carries a stable string id (used by split manifests and the temporal
ensembling buffer) and the recording session it came from.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import SchemaError, SplitError
from .sigproc import write_feature_csv

CLASS_NAMES = ("negative", "neutral", "positive")
UNLABELED = -1

# emotion label of each of the 15 film clips in a SEED experiment
SEED_SESSION_LABELS = (2, 1, 0, 0, 1, 2, 0, 1, 2, 2, 1, 0, 1, 2, 0)
TRAIN_SESSIONS = tuple(range(1, 10))
TEST_SESSIONS = tuple(range(10, 16))


@dataclass
class Dataset:
    """Feature sequences ``x`` (n, steps, features) with labels, ids and sessions.

    ``y`` holds class indices in {0, 1, 2} or -1 when unknown.
    """

    x: np.ndarray
    y: np.ndarray
    ids: np.ndarray
    sessions: np.ndarray
    _index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=int)
        self.ids = np.asarray(self.ids, dtype=str)
        self.sessions = np.asarray(self.sessions, dtype=int)
        n = len(self.x)
        if not (len(self.y) == len(self.ids) == len(self.sessions) == n):
            raise SchemaError("x, y, ids and sessions must have equal length")
        if self.x.ndim != 3:
            raise SchemaError(f"x must be (n, steps, features), got {self.x.shape}")
        if len(set(self.ids.tolist())) != n:
            raise SchemaError("sample ids are not unique")
        if np.any((self.y < UNLABELED) | (self.y > 2)):
            raise SchemaError("labels must lie in {0, 1, 2} (or -1 for unknown)")
        self._index = {sid: i for i, sid in enumerate(self.ids.tolist())}

    def __len__(self):
        return len(self.x)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (np.array_equal(self.x, other.x) and np.array_equal(self.y, other.y)
                and np.array_equal(self.ids, other.ids) and np.array_equal(self.sessions, other.sessions))

    @property
    def n_features(self) -> int:
        return self.x.shape[2]

    def positions(self, ids) -> np.ndarray:
        return np.fromiter((self._index[i] for i in ids), dtype=int, count=len(ids))

    def subset(self, positions) -> "Dataset":
        positions = np.asarray(positions, dtype=int)
        return Dataset(self.x[positions], self.y[positions], self.ids[positions], self.sessions[positions])

    def by_ids(self, ids) -> "Dataset":
        return self.subset(self.positions(ids))

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y[self.y >= 0], minlength=3)

    def standardizer(self):
        """Per-feature mean and std over samples and steps."""
        flat = self.x.reshape(-1, self.n_features)
        std = flat.std(axis=0)
        std[std == 0] = 1.0
        return flat.mean(axis=0), std

    def standardized(self, mean, std) -> "Dataset":
        return Dataset((self.x - mean) / std, self.y, self.ids, self.sessions)


def session_split(ds: Dataset, train_sessions=TRAIN_SESSIONS):
    """Split by recording session: ``train_sessions`` vs the rest."""
    mask = np.isin(ds.sessions, list(train_sessions))
    return ds.subset(np.flatnonzero(mask)), ds.subset(np.flatnonzero(~mask))


# ---------------------------------------------------------------------------
# feature CSV
# ---------------------------------------------------------------------------

def save_features(path, ds: Dataset) -> None:
    labels = [None if v < 0 else int(v) for v in ds.y]
    write_feature_csv(path, ds.ids.tolist(), ds.x, labels, ds.sessions.tolist())


def load_features(path, steps: int = 8) -> Dataset:
    """Read the per-window feature CSV back into segments.

    Columns are ``segment_id, step, f0..f{n-1}, label`` with an optional
    trailing ``session``. Every segment must provide steps ``0..steps-1``
    exactly once.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        has_session = header[-1] == "session"
        feat_cols = header[2:-2] if has_session else header[2:-1]
        if header[:2] != ["segment_id", "step"] or header[len(header) - (2 if has_session else 1)] != "label":
            raise SchemaError(f"{path}:1: header must be segment_id, step, f0.., label[, session]")
        n_feat = len(feat_cols)
        if feat_cols != [f"f{i}" for i in range(n_feat)]:
            raise SchemaError(f"{path}:1: feature columns must be f0..f{n_feat - 1}")
        segments: dict = {}
        first_line: dict = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise SchemaError(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
            sid = row[0]
            try:
                step = int(row[1])
                values = np.array(row[2:2 + n_feat], dtype=float)
            except ValueError:
                raise SchemaError(f"{path}:{lineno}: malformed step or feature value") from None
            if not np.all(np.isfinite(values)):
                raise SchemaError(f"{path}:{lineno}: non-finite feature value")
            label_text = row[2 + n_feat].strip()
            if label_text not in ("", "0", "1", "2"):
                raise SchemaError(f"{path}:{lineno}: label {label_text!r} not in {{0, 1, 2, blank}}")
            label = int(label_text) if label_text else UNLABELED
            session = int(row[-1]) if has_session and row[-1].strip() else 0
            if not 0 <= step < steps:
                raise SchemaError(f"{path}:{lineno}: step {step} outside 0..{steps - 1}")
            entry = segments.setdefault(sid, {"steps": {}, "label": label, "session": session})
            first_line.setdefault(sid, lineno)
            if step in entry["steps"]:
                raise SchemaError(f"{path}:{lineno}: segment {sid!r} repeats step {step}")
            if entry["label"] != label:
                raise SchemaError(f"{path}:{lineno}: segment {sid!r} has inconsistent labels")
            entry["steps"][step] = values
    xs, ys, ids, sess = [], [], [], []
    for sid, entry in segments.items():
        if len(entry["steps"]) != steps:
            raise SchemaError(f"{path}:{first_line[sid]}: segment {sid!r} has "
                              f"{len(entry['steps'])} of {steps} steps")
        xs.append(np.stack([entry["steps"][t] for t in range(steps)]))
        ys.append(entry["label"])
        ids.append(sid)
        sess.append(entry["session"])
    x = np.stack(xs) if xs else np.zeros((0, steps, n_feat))
    return Dataset(x, ys, ids, sess)


# ---------------------------------------------------------------------------
# labeled / unlabeled split
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitPlan:
    seed: int
    label_fraction: float
    labeled_ids: tuple
    unlabeled_ids: tuple

    def to_json(self) -> str:
        return json.dumps({
            "seed": self.seed, "label_fraction": self.label_fraction,
            "labeled_ids": list(self.labeled_ids), "unlabeled_ids": list(self.unlabeled_ids),
        }, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "SplitPlan":
        d = json.loads(text)
        return cls(int(d["seed"]), float(d["label_fraction"]),
                   tuple(d["labeled_ids"]), tuple(d["unlabeled_ids"]))

    def save(self, path):
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "SplitPlan":
        return cls.from_json(Path(path).read_text())


def _even_quotas(total: int, sizes) -> list:
    """Split ``total`` over classes as evenly as their sizes allow.

    Classes too small for an equal share give all their members and the
    remainder is spread over the others.
    """
    quotas = [0] * len(sizes)
    open_ = sorted(range(len(sizes)), key=lambda k: (sizes[k], k))
    left = total
    while open_:
        share, extra = divmod(left, len(open_))
        k = open_[0]
        if sizes[k] < share + (1 if extra else 0):
            quotas[k] = int(sizes[k])
            left -= quotas[k]
            open_.pop(0)
            continue
        for j, k in enumerate(sorted(open_)):
            quotas[k] = share + (1 if j < extra else 0)
        break
    return quotas


def make_split(ds: Dataset, fraction: float, seed: int) -> SplitPlan:
    """Stratified random choice of the labeled subset.

    ``round(fraction * n)`` samples are labeled, spread over the classes as
    evenly as possible (per-class counts differ by at most one unless a
    class runs out of members). The rest of the set is unlabeled.
    """
    if not 0.0 < fraction <= 1.0:
        raise SplitError(f"label fraction must lie in (0, 1], got {fraction}")
    if np.any(ds.y < 0):
        raise SplitError("every training sample needs a label to build a split")
    order = np.argsort(ds.ids, kind="stable")
    if fraction == 1.0:
        return SplitPlan(int(seed), 1.0, tuple(ds.ids[order].tolist()), ())
    classes, sizes = np.unique(ds.y, return_counts=True)
    total = int(round(fraction * len(ds)))
    quotas = _even_quotas(total, sizes)
    if min(quotas) == 0:
        raise SplitError(f"fraction {fraction} labels no sample of some class; "
                         f"use at least {len(classes) / len(ds):.4f}")
    rng = np.random.default_rng(seed)
    labeled = []
    for c, quota in zip(classes, quotas):
        members = order[ds.y[order] == c]
        labeled.extend(rng.permutation(members)[:quota].tolist())
    mask = np.zeros(len(ds), dtype=bool)
    mask[labeled] = True
    labeled_ids = tuple(sorted(ds.ids[mask].tolist()))
    unlabeled_ids = tuple(sorted(ds.ids[~mask].tolist()))
    return SplitPlan(int(seed), float(fraction), labeled_ids, unlabeled_ids)


# ---------------------------------------------------------------------------
# mini-batches
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Batch:
    labeled: np.ndarray
    unlabeled: np.ndarray
    reused: bool = False


def batch_count(n_labeled: int, n_unlabeled: int, target: int = 64) -> int:
    pool = n_unlabeled if n_unlabeled else n_labeled
    return max(1, math.ceil(pool / target))


def make_batches(plan: SplitPlan, epoch: int = 0, target_unlabeled_batch: int = 64) -> list:
    """Partition both pools into the same number of batches.

    The batch count is ``ceil(n_unlabeled / target)`` (or
    ``ceil(n_labeled / target)`` when nothing is unlabeled). Unlabeled ids
    are cut into that many near-equal chunks and
    labeled ids are dealt round-robin, both after a shuffle seeded by
    ``(plan.seed, epoch)``, so every batch keeps the global labeled to
    unlabeled ratio up to integer rounding. When there are fewer labeled
    samples than batches, labeled samples are reused cyclically and the
    batches are flagged ``reused``.
    """
    lab = np.asarray(plan.labeled_ids, dtype=str)
    unl = np.asarray(plan.unlabeled_ids, dtype=str)
    if len(lab) == 0:
        raise SplitError("split has no labeled samples")
    n_batches = batch_count(len(lab), len(unl), target_unlabeled_batch)
    rng = np.random.default_rng([plan.seed, epoch])
    lab = lab[rng.permutation(len(lab))]
    unl = unl[rng.permutation(len(unl))]
    reused = len(lab) < n_batches
    if reused:
        lab = np.resize(lab, n_batches)
    if len(unl):
        unl_chunks = np.array_split(unl, n_batches)
        lab_chunks = [lab[k::n_batches] for k in range(n_batches)]
    else:
        # labeled-only: contiguous equal chunks of the shuffled pool
        lab_chunks = np.array_split(lab, n_batches)
        unl_chunks = [unl[:0]] * n_batches
    return [Batch(l, u, reused) for l, u in zip(lab_chunks, unl_chunks)]


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

BAND_NAMES = ("delta", "theta", "alpha", "beta", "gamma")


@dataclass
class SynthSpec:
    """Recipe for a synthetic SEED-like corpus.

    Class ``c`` raises log band power of ``signatures[c]`` on
    ``signature_channels`` electrodes by ``signature_gain`` (jittered by
    ``strength_jitter`` per segment). ``snr`` scales every unstructured
    variation (per-window noise, per-segment noise, per-session offsets) by
    ``1 / snr``; ``snr=inf`` leaves only the class signature and low-rank
    nuisance factors orthogonal to it.
    """

    segments_per_session: int = 200
    n_sessions: int = 15
    n_channels: int = 62
    steps: int = 8
    signatures: dict = field(default_factory=lambda: {0: "beta", 1: "alpha", 2: "theta"})
    signature_channels: int = 60
    signature_gain: float = 1.0
    snr: float = 0.1
    n_nuisance: int = 6
    nuisance_scale: float = 0.1
    session_offset_scale: float = 0.0
    segment_noise: float = 0.3
    window_noise: float = 0.1
    strength_jitter: float = 0.2
    session_labels: tuple = SEED_SESSION_LABELS
    mode: str = "features"
    raw_rate_hz: float = 1000.0

    @property
    def n_features(self) -> int:
        return self.n_channels * len(BAND_NAMES)

    def to_dict(self) -> dict:
        d = dict(vars(self))
        d["signatures"] = {str(k): v for k, v in self.signatures.items()}
        d["session_labels"] = list(self.session_labels)
        d["snr"] = "inf" if math.isinf(self.snr) else self.snr
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        if "signatures" in d:
            d["signatures"] = {int(k): v for k, v in d["signatures"].items()}
            bad = [v for v in d["signatures"].values() if v not in BAND_NAMES]
            if bad:
                raise SchemaError(f"unknown signature bands {bad}")
        if "session_labels" in d:
            d["session_labels"] = tuple(int(v) for v in d["session_labels"])
        if "snr" in d:
            d["snr"] = float(d["snr"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise SchemaError(f"unknown synth spec keys {sorted(unknown)}")
        return cls(**d)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "SynthSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _log_power_model(spec: SynthSpec, rng: np.random.Generator):
    """Per-segment log band power, shape (segments, steps, channels * bands),
    plus labels and sessions."""
    if len(spec.session_labels) < spec.n_sessions:
        raise SchemaError("session_labels shorter than n_sessions")
    n_bands = len(BAND_NAMES)
    n_feat = spec.n_features
    widths = np.array([3.5, 4.0, 6.0, 17.0, 39.0])
    base = np.tile(np.log(widths / 10.0), spec.n_channels) + rng.normal(0, 0.2, n_feat)
    signatures = np.zeros((3, n_feat))
    for c, band in spec.signatures.items():
        chans = rng.choice(spec.n_channels, size=spec.signature_channels, replace=False)
        signatures[c, chans * n_bands + BAND_NAMES.index(band)] = 1.0
    loadings = rng.normal(0, 1, (n_feat, spec.n_nuisance))
    q, _ = np.linalg.qr(signatures.T)
    loadings -= q @ (q.T @ loadings)
    loadings *= spec.nuisance_scale / np.sqrt(np.mean(loadings ** 2))
    nu = 0.0 if math.isinf(spec.snr) else 1.0 / spec.snr

    lp, ys, sess = [], [], []
    for s in range(1, spec.n_sessions + 1):
        c = spec.session_labels[s - 1]
        offset = nu * spec.session_offset_scale * rng.normal(0, 1, n_feat)
        n = spec.segments_per_session
        strength = 1.0 + spec.strength_jitter * rng.normal(0, 1, (n, 1, 1))
        z = rng.normal(0, 1, (n, 1, spec.n_nuisance)) + 0.5 * rng.normal(0, 1, (n, spec.steps, spec.n_nuisance))
        noise = nu * (spec.segment_noise * rng.normal(0, 1, (n, 1, n_feat))
                      + spec.window_noise * rng.normal(0, 1, (n, spec.steps, n_feat)))
        seg = (base + offset + spec.signature_gain * strength * signatures[c]
               + z @ loadings.T + noise)
        lp.append(seg)
        ys += [c] * n
        sess += [s] * n
    return np.concatenate(lp), np.array(ys), np.array(sess)


def synth_features(spec: SynthSpec, seed: int = 0) -> Dataset:
    """Feature-space corpus: DE = 0.5 * (ln(2 pi e) + log band power)."""
    rng = np.random.default_rng(seed)
    lp, y, sess = _log_power_model(spec, rng)
    de = 0.5 * (np.log(2 * np.pi * np.e) + lp)
    ids = [f"s{s:02d}-{k:05d}" for k, s in enumerate(sess)]
    return Dataset(de, y, ids, sess)


def synth_raw(spec: SynthSpec, seed: int = 0, line_noise: float = 0.2, drift: float = 0.5) -> list:
    """Raw multichannel signals, one :class:`RawRecording` per segment.

    Each channel is a sum of band-limited Gaussian processes whose per-second
    variance follows the same log-power model as :func:`synth_features`,
    plus 50 Hz line noise and a slow drift for the preprocessing chain to
    remove. Returns ``[(recording, label, session, segment_id), ...]``.
    """
    from scipy import signal as sps

    from .sigproc import BANDS, CHANNELS_62, RawRecording

    rng = np.random.default_rng(seed)
    lp, y, sess = _log_power_model(spec, rng)
    fs = spec.raw_rate_hz
    win = int(fs)
    n = spec.steps * win
    t = np.arange(n) / fs
    n_bands = len(BAND_NAMES)
    channels = CHANNELS_62 if spec.n_channels == 62 else tuple(f"ch{i}" for i in range(spec.n_channels))
    filters = [sps.butter(4, [lo, hi], btype="bandpass", fs=fs, output="sos") for lo, hi in BANDS.values()]
    out = []
    for k in range(len(lp)):
        power = np.exp(lp[k]).reshape(spec.steps, spec.n_channels, n_bands)
        x = np.zeros((spec.n_channels, n))
        for b, sos in enumerate(filters):
            carrier = sps.sosfiltfilt(sos, rng.normal(0, 1, (spec.n_channels, n)), axis=1)
            carrier /= carrier.std(axis=1, keepdims=True)
            gain = np.repeat(np.sqrt(power[:, :, b]).T, win, axis=1)
            x += carrier * gain
        x += line_noise * np.sin(2 * np.pi * 50.0 * t + rng.uniform(0, 2 * np.pi, (spec.n_channels, 1)))
        x += drift * np.sin(2 * np.pi * 0.05 * t + rng.uniform(0, 2 * np.pi, (spec.n_channels, 1)))
        out.append((RawRecording(x, fs, channels), int(y[k]), int(sess[k]), f"s{sess[k]:02d}-{k:05d}"))
    return out


def synth_generate(spec: SynthSpec, seed: int = 0):
    """Dispatch on ``spec.mode``: ``"features"`` or ``"raw"``."""
    if spec.mode == "features":
        return synth_features(spec, seed)
    if spec.mode == "raw":
        return synth_raw(spec, seed)
    raise SchemaError(f"unknown synth mode {spec.mode!r}")
