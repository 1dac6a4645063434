"""Flat binary model checkpoints.

Layout (all integers little-endian)::

    8 bytes   magic  b"EEGSSLCK"
    4 bytes   format version (uint32, currently 1)
    8 bytes   header length H (uint64)
    H bytes   UTF-8 JSON header
    ...       float64 little-endian payload

The header holds ``{"model": {...}, "entries": [{"name", "shape",
"offset", "count"}, ...]}``. ``offset`` and ``count`` are in float64
elements relative to the start of the payload; each entry's values are
stored row-major.
"""
from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .errors import SchemaError

MAGIC = b"EEGSSLCK"
VERSION = 1


def save_checkpoint(path, state, model_info: dict = None) -> None:
    """Write a name -> array mapping (e.g. ``Module.state_dict()``)."""
    entries, chunks, offset = [], [], 0
    for name, value in state.items():
        arr = np.asarray(value, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        chunks.append(arr.tobytes(order="C"))
        offset += arr.size
    header = json.dumps({"model": model_info or {}, "entries": entries}, sort_keys=True).encode()
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        for chunk in chunks:
            fh.write(chunk)


def load_checkpoint(path):
    """Return ``(state, model_info)``."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise SchemaError(f"{path}: not a checkpoint (bad magic)")
    start = 8 + struct.calcsize("<IQ")
    if len(raw) < start:
        raise SchemaError(f"{path}: truncated header")
    version, hlen = struct.unpack_from("<IQ", raw, 8)
    if version != VERSION:
        raise SchemaError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(raw[start:start + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise SchemaError(f"{path}: unreadable header") from None
    body = raw[start + hlen:]
    payload = np.frombuffer(body[:len(body) - len(body) % 8], dtype="<f8")
    state = OrderedDict()
    for e in header["entries"]:
        if e["offset"] + e["count"] > payload.size:
            raise SchemaError(f"{path}: truncated payload for {e['name']!r}")
        state[e["name"]] = payload[e["offset"]:e["offset"] + e["count"]].reshape(e["shape"]).astype(float)
    return state, header["model"]


def save_model(path, model, kind: str, **build_kwargs) -> None:
    """Checkpoint a model built by :func:`eegssl.models.build_model`."""
    save_checkpoint(path, model.state_dict(), {"kind": kind, "build": build_kwargs})


def load_model(path):
    """Rebuild the model recorded in a checkpoint and load its weights."""
    from .models import build_model

    state, info = load_checkpoint(path)
    if "kind" not in info:
        raise SchemaError(f"{path}: checkpoint carries no model description")
    model = build_model(info["kind"], **info.get("build", {}))
    model.load_state_dict(state)
    model.eval()
    return model
