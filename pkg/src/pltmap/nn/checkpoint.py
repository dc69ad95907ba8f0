"""Checkpoint files and windowed inference.

Layout::

    b"PLTN" | uint32 version | uint32 json length | architecture json
    | float32 LE parameter arrays in param_specs order | sha256(payload)

where ``payload`` is every byte before the 32-byte digest footer.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from ..errors import CheckpointError, ShapeError
from ..pltcore import PLTSignal
from .unet import Architecture, UNetModel, param_specs, predict

MAGIC = b"PLTN"
VERSION = 1


def dump_checkpoint(model, extra=None):
    specs = param_specs(model.arch)
    header = {
        "architecture": model.arch.to_json(),
        "parameters": [[name, list(shape)] for name, shape in specs],
        "extra": extra or {},
    }
    block = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(block)), block]
    for name, shape in specs:
        arr = model.params[name]
        if arr.shape != tuple(shape):
            raise CheckpointError(f"{name}: shape {arr.shape} != {shape}")
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    payload = b"".join(parts)
    return payload + hashlib.sha256(payload).digest()


def save_checkpoint(model, path, extra=None):
    Path(path).write_bytes(dump_checkpoint(model, extra))


def parse_checkpoint(data):
    if len(data) < 12 + 32 or data[:4] != MAGIC:
        raise CheckpointError("not a PLTN checkpoint")
    version, n_json = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version}, this build reads {VERSION}")
    payload, footer = data[:-32], data[-32:]
    if hashlib.sha256(payload).digest() != footer:
        raise CheckpointError("checkpoint digest mismatch")
    header = json.loads(payload[12:12 + n_json].decode("utf-8"))
    arch = Architecture.from_json(header["architecture"])
    specs = param_specs(arch)
    if [[n, list(s)] for n, s in specs] != header["parameters"]:
        raise CheckpointError("parameter table does not match architecture")
    off = 12 + n_json
    params = {}
    for name, shape in specs:
        count = int(np.prod(shape))
        if off + 4 * count > len(payload):
            raise CheckpointError(f"truncated at parameter {name}")
        params[name] = np.frombuffer(payload, "<f4", count, off).reshape(shape).astype(np.float32)
        off += 4 * count
    if off != len(payload):
        raise CheckpointError("trailing bytes after parameters")
    return UNetModel(arch, params), header.get("extra", {})


def load_checkpoint(path):
    model, _ = parse_checkpoint(Path(path).read_bytes())
    return model


def infer_array(model, x, batch_size=16):
    """PLT prediction for signals of shape (n_signals, length).

    ``length`` must be a multiple of the model window; windows are run
    independently and concatenated.
    """
    x = np.asarray(x, dtype=np.float32)
    if x.ndim == 1:
        return infer_array(model, x[None], batch_size)[0]
    window = model.arch.input_length
    n, length = x.shape
    if length % window:
        raise ShapeError(
            f"signal length {length} is not a multiple of {window}; pad before inference"
        )
    k = length // window
    out = predict(model, x.reshape(n * k, window), batch_size)
    return out.reshape(n, length)


def infer(model, egm):
    """Run the network on a normalized electrogram."""
    samples = np.asarray(getattr(egm, "samples", egm))
    rate = getattr(egm, "sample_rate", 1000.0)
    return PLTSignal(infer_array(model, samples), rate, [])
