"""EEG preprocessing and differential-entropy (DE) feature extraction.

The chain is resample (1 kHz -> 200 Hz) -> band-pass 0.5-70 Hz -> 50 Hz
notch -> min-max normalization to [-1, 1], followed by splitting into 8 s
segments and computing DE per channel and frequency band on each
non-overlapping 1 s window.

Feature layout
--------------
Each window yields ``n_channels * n_bands`` values in channel-major order:
feature ``k`` is channel ``k // 5`` and band ``k % 5`` with bands ordered
delta, theta, alpha, beta, gamma. For 62 channels that is 310 features.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import signal

from .errors import DegenerateError, FeatureError, SchemaError, UnsupportedError

BANDS = {
    "delta": (0.5, 4.0),
    "theta": (4.0, 8.0),
    "alpha": (8.0, 14.0),
    "beta": (14.0, 31.0),
    "gamma": (31.0, 70.0),
}

TARGET_RATE_HZ = 200.0
SEGMENT_SECONDS = 8
WINDOW_SECONDS = 1
FILTER_ORDER = 4

# 62-electrode 10-20 montage in the order used by the SEED recordings.
CHANNELS_62 = (
    "FP1", "FPZ", "FP2", "AF3", "AF4", "F7", "F5", "F3", "F1", "FZ", "F2", "F4", "F6", "F8",
    "FT7", "FC5", "FC3", "FC1", "FCZ", "FC2", "FC4", "FC6", "FT8", "T7", "C5", "C3", "C1",
    "CZ", "C2", "C4", "C6", "T8", "TP7", "CP5", "CP3", "CP1", "CPZ", "CP2", "CP4", "CP6",
    "TP8", "P7", "P5", "P3", "P1", "PZ", "P2", "P4", "P6", "P8", "PO7", "PO5", "PO3", "POZ",
    "PO4", "PO6", "PO8", "CB1", "O1", "OZ", "O2", "CB2",
)


@dataclass(frozen=True)
class RawRecording:
    """Multichannel signal, one row per channel."""

    data: np.ndarray
    sample_rate_hz: float
    channels: tuple = field(default=())

    def __post_init__(self):
        data = np.atleast_2d(np.asarray(self.data, dtype=float))
        object.__setattr__(self, "data", data)
        if not self.channels:
            object.__setattr__(self, "channels", tuple(f"ch{i}" for i in range(data.shape[0])))
        if len(self.channels) != data.shape[0]:
            raise SchemaError(f"{len(self.channels)} channel names for {data.shape[0]} channels")
        if self.sample_rate_hz <= 0:
            raise SchemaError("sample rate must be positive")

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sample_rate_hz


@dataclass(frozen=True)
class EegSegment:
    data: np.ndarray
    sample_rate_hz: float = TARGET_RATE_HZ
    normalized: bool = True


def resample(rec: RawRecording, target_hz: float = TARGET_RATE_HZ) -> RawRecording:
    """Polyphase resampling with the built-in anti-alias FIR."""
    if target_hz >= rec.sample_rate_hz:
        raise UnsupportedError(f"cannot resample {rec.sample_rate_hz} Hz up to {target_hz} Hz")
    ratio = Fraction(target_hz / rec.sample_rate_hz).limit_denominator(10_000)
    out = signal.resample_poly(rec.data, ratio.numerator, ratio.denominator, axis=1)
    return replace(rec, data=out, sample_rate_hz=float(target_hz))


def _band_sos(lo: float, hi: float, fs: float, order: int = FILTER_ORDER) -> np.ndarray:
    nyq = fs / 2.0
    if not 0 < lo < hi:
        raise ValueError(f"invalid band [{lo}, {hi}]")
    if hi >= nyq:
        raise ValueError(f"upper edge {hi} Hz must lie below Nyquist ({nyq} Hz)")
    return signal.butter(order, [lo, hi], btype="bandpass", fs=fs, output="sos")


def bandpass(rec: RawRecording, lo: float = 0.5, hi: float = 70.0, order: int = FILTER_ORDER) -> RawRecording:
    """Zero-phase Butterworth band-pass (applied forward and backward)."""
    sos = _band_sos(lo, hi, rec.sample_rate_hz, order)
    return replace(rec, data=signal.sosfiltfilt(sos, rec.data, axis=1))


def notch(rec: RawRecording, freq: float = 50.0, q: float = 30.0) -> RawRecording:
    if not 0 < freq < rec.sample_rate_hz / 2:
        raise ValueError(f"notch frequency {freq} Hz must lie in (0, Nyquist)")
    b, a = signal.iirnotch(freq, q, fs=rec.sample_rate_hz)
    return replace(rec, data=signal.filtfilt(b, a, rec.data, axis=1))


def normalize(rec: RawRecording) -> RawRecording:
    """Min-max scale the whole recording (all channels jointly) to [-1, 1]."""
    lo, hi = rec.data.min(), rec.data.max()
    if hi == lo:
        raise DegenerateError("cannot normalize a constant recording")
    out = 2.0 * (rec.data - lo) / (hi - lo) - 1.0
    # pin the extremes exactly despite rounding
    out[rec.data == hi] = 1.0
    out[rec.data == lo] = -1.0
    return replace(rec, data=out)


def preprocess(rec: RawRecording, target_hz: float = TARGET_RATE_HZ) -> RawRecording:
    if rec.sample_rate_hz != target_hz:
        rec = resample(rec, target_hz)
    return normalize(notch(bandpass(rec)))


def segment(rec: RawRecording, seconds: int = SEGMENT_SECONDS) -> list:
    """Consecutive non-overlapping segments; a trailing remainder is dropped."""
    length = int(round(seconds * rec.sample_rate_hz))
    n = rec.n_samples // length
    return [EegSegment(rec.data[:, k * length:(k + 1) * length].copy(), rec.sample_rate_hz)
            for k in range(n)]


def differential_entropy(window, ddof: int = 1) -> float:
    """``0.5 * ln(2 pi e var)`` of a window under a Gaussian assumption."""
    window = np.asarray(window, dtype=float)
    if window.size < 2:
        raise DegenerateError("need at least two samples")
    var = window.var(ddof=ddof)
    # a constant window can leave a rounding residue in the variance
    if var <= 0 or np.ptp(window) == 0:
        raise DegenerateError("window has zero variance")
    return 0.5 * math.log(2.0 * math.pi * math.e * var)


def band_signals(data: np.ndarray, fs: float, bands=BANDS, order: int = FILTER_ORDER) -> np.ndarray:
    """Band-filtered copies, shape (n_bands, channels, samples).

    Edges are padded with a full-length even reflection; the default short
    odd extension inflates slow-band variance in the first and last second.
    """
    pad = data.shape[-1] - 1
    return np.stack([signal.sosfiltfilt(_band_sos(lo, hi, fs, order), data, axis=-1,
                                        padtype="even", padlen=pad)
                     for lo, hi in bands.values()])


def extract_features(seg: EegSegment, bands=BANDS, window_seconds: float = WINDOW_SECONDS) -> np.ndarray:
    """DE features of one segment, shape (windows, channels * bands).

    The whole segment is band-filtered first and then cut into windows so
    that the slow delta filter is not dominated by per-window edge effects.
    """
    fs = seg.sample_rate_hz
    filtered = band_signals(seg.data, fs, bands)  # (band, channel, sample)
    win = int(round(window_seconds * fs))
    n_windows = seg.data.shape[1] // win
    n_bands, n_ch = filtered.shape[0], filtered.shape[1]
    blocks = filtered[:, :, :n_windows * win].reshape(n_bands, n_ch, n_windows, win)
    var = blocks.var(axis=-1, ddof=1)  # (band, channel, window)
    bad = np.argwhere(var <= 0)
    if bad.size:
        flags = [(int(w), int(c), list(bands)[b]) for b, c, w in bad]
        raise FeatureError(f"{len(flags)} degenerate (window, channel, band) cells", flags)
    de = 0.5 * np.log(2.0 * np.pi * np.e * var)
    # (window, channel, band) flattened channel-major
    return de.transpose(2, 1, 0).reshape(n_windows, n_ch * n_bands)


def feature_index(channel: int, band: int, n_bands: int = len(BANDS)) -> int:
    return channel * n_bands + band


def recording_features(rec: RawRecording, preprocessed: bool = False) -> np.ndarray:
    """Run the full chain on a recording: (segments, 8, channels * 5)."""
    if not preprocessed:
        rec = preprocess(rec)
    segs = segment(rec)
    if not segs:
        return np.zeros((0, SEGMENT_SECONDS, rec.data.shape[0] * len(BANDS)))
    return np.stack([extract_features(s) for s in segs])


# ---------------------------------------------------------------------------
# CSV interfaces
# ---------------------------------------------------------------------------

def read_raw_csv(path) -> RawRecording:
    """Read ``# sample_rate_hz=...`` + header of channel names + samples."""
    path = Path(path)
    with path.open() as fh:
        first = fh.readline().strip()
        if not first.startswith("#") or "sample_rate_hz=" not in first:
            raise SchemaError(f"{path}:1: expected '# sample_rate_hz=<rate>' metadata line")
        rate = float(first.split("sample_rate_hz=", 1)[1])
        header = next(csv.reader([fh.readline()]))
        rows = []
        for lineno, row in enumerate(csv.reader(fh), start=3):
            if not row:
                continue
            if len(row) != len(header):
                raise SchemaError(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise SchemaError(f"{path}:{lineno}: non-numeric sample") from None
    data = np.asarray(rows, dtype=float).T if rows else np.zeros((len(header), 0))
    return RawRecording(data, rate, tuple(h.strip() for h in header))


def write_raw_csv(path, rec: RawRecording) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"# sample_rate_hz={rec.sample_rate_hz:g}\n")
        w = csv.writer(fh)
        w.writerow(rec.channels)
        for row in rec.data.T:
            w.writerow([repr(float(v)) for v in row])


def feature_columns(n_features: int) -> list:
    return ["segment_id", "step"] + [f"f{i}" for i in range(n_features)] + ["label"]


def write_feature_csv(path, segment_ids: Sequence[str], features: np.ndarray,
                      labels: Optional[Sequence] = None, sessions: Optional[Sequence] = None) -> None:
    """One row per window: ``segment_id, step, f0..f{n-1}, label``.

    An optional trailing ``session`` column carries the recording session
    (used for the train/test session split).
    """
    features = np.asarray(features, dtype=float)
    n_seg, n_steps, n_feat = features.shape
    cols = feature_columns(n_feat) + (["session"] if sessions is not None else [])
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for k in range(n_seg):
            label = "" if labels is None or labels[k] is None else str(int(labels[k]))
            tail = [] if sessions is None else [str(sessions[k])]
            for step in range(n_steps):
                w.writerow([segment_ids[k], step] + [repr(float(v)) for v in features[k, step]]
                           + [label] + tail)
