"""Trace, electrogram and PLT file formats.

Voltage traces::

    b"VTRC" | int32 version | dims | nx | ny | sample rate | n_samples | reserved
    | float32 LE samples, time-major row-major: (n_samples, nx[, ny])

with a ``<file>.json`` sidecar holding protocol, cell parameters and seeds.
Electrograms and PLT signals are ``t_ms,value`` CSV files, again with a
``.json`` sidecar.
"""
from __future__ import annotations

import csv
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .egm import Electrogram, ElectrodeSpec
from .errors import ParseError
from .pltcore import PLTSignal
from .tissue import VoltageTrace

TRACE_MAGIC = b"VTRC"
TRACE_VERSION = 1
_HEADER = struct.Struct("<4s7i")


def sidecar(path):
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _clean_meta(meta):
    return {k: v for k, v in meta.items() if not k.startswith("_")}


def save_trace(trace, path, extra=None):
    if trace.dims not in (1, 2):
        raise ValueError("only 1-D and 2-D traces can be stored")
    rate = int(round(trace.sample_rate))
    if rate != trace.sample_rate:
        raise ValueError("sample rate must be an integer number of Hz")
    nodes = tuple(trace.nodes) + (1,) * (2 - trace.dims)
    header = _HEADER.pack(TRACE_MAGIC, TRACE_VERSION, trace.dims, nodes[0], nodes[1],
                          rate, trace.n_samples, 0)
    data = np.ascontiguousarray(trace.samples, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes())
    meta = _clean_meta(trace.meta)
    meta["sha256_float32"] = hashlib.sha256(data.tobytes()).hexdigest()
    meta.update(extra or {})
    write_json(sidecar(path), meta)


def load_trace(path):
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ParseError(len(raw), "file shorter than the trace header")
    magic, version, dims, nx, ny, rate, n, _ = _HEADER.unpack_from(raw)
    if magic != TRACE_MAGIC:
        raise ParseError(0, "bad magic (expected VTRC)")
    if version != TRACE_VERSION:
        raise ParseError(4, f"unsupported trace version {version}")
    if dims not in (1, 2) or nx < 1 or ny < 1 or n < 0 or rate < 1:
        raise ParseError(8, "invalid trace header fields")
    shape = (n, nx) if dims == 1 else (n, nx, ny)
    expected = _HEADER.size + 4 * int(np.prod(shape))
    if len(raw) != expected:
        raise ParseError(min(len(raw), expected),
                         f"payload is {len(raw) - _HEADER.size} bytes, header implies "
                         f"{expected - _HEADER.size}")
    samples = np.frombuffer(raw, "<f4", offset=_HEADER.size).reshape(shape).astype(np.float32)
    meta = {}
    side = sidecar(path)
    if side.exists():
        meta = json.loads(side.read_text())
    return VoltageTrace(samples, float(rate), meta)


def write_series(path, values, sample_rate, meta):
    """One ``t_ms,value`` row per sample plus a JSON sidecar."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1:
        raise ValueError("series must be 1-D")
    step = 1000.0 / sample_rate
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_ms", "value"])
        for i, v in enumerate(values):
            w.writerow([repr(i * step), repr(float(v))])
    write_json(sidecar(path), meta)


def read_series(path):
    """Returns (values, sample_rate, meta); the rate comes from the time column."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["t_ms", "value"]:
        raise ParseError(0, f"{path}: expected header 't_ms,value'")
    try:
        t = np.array([float(r[0]) for r in rows[1:]])
        v = np.array([float(r[1]) for r in rows[1:]])
    except (IndexError, ValueError) as exc:
        raise ParseError(0, f"{path}: malformed row ({exc})") from exc
    side = sidecar(path)
    meta = json.loads(side.read_text()) if side.exists() else {}
    if "sample_rate" in meta:
        rate = float(meta["sample_rate"])
    elif len(t) > 1:
        rate = 1000.0 / float(t[1] - t[0])
    else:
        rate = 1000.0
    return v, rate, meta


def save_egm(egm, path, extra=None):
    meta = {
        "kind": "electrogram",
        "sample_rate": egm.sample_rate,
        "electrode": {"position": egm.electrode.position, "height": egm.electrode.height},
        "normalized": bool(egm.normalized),
        "source_trace_sha256": egm.meta.get("source_trace_sha256"),
    }
    meta.update(extra or {})
    write_series(path, egm.samples, egm.sample_rate, meta)


def load_egm(path):
    values, rate, meta = read_series(path)
    el = meta.get("electrode")
    electrode = ElectrodeSpec(el["position"], el["height"]) if el else None
    return Electrogram(values, rate, electrode, bool(meta.get("normalized", False)), meta)


def save_plt(signal, path, extra=None):
    meta = {
        "kind": "plt",
        "sample_rate": signal.sample_rate,
        "break_indices": [int(b) for b in signal.break_indices],
    }
    meta.update(extra or {})
    write_series(path, signal.samples, signal.sample_rate, meta)


def load_plt(path):
    values, rate, meta = read_series(path)
    return PLTSignal(values, rate, list(meta.get("break_indices", [])))
