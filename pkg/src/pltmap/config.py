"""Declarative JSON run configuration.

Every section and key is optional; missing values take the defaults below.
Unknown keys and bad values are collected and reported together.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

from . import dataset as ds
from . import mapping
from .errors import ConfigError
from .nn.train import TrainConfig
from .nn.unet import Architecture
from .tissue import CellParams


def _num(lo=None, hi=None, lo_open=False, integer=False):
    def check(v):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            return "must be a number"
        if integer and int(v) != v:
            return "must be an integer"
        if lo is not None and (v <= lo if lo_open else v < lo):
            return f"must be {'>' if lo_open else '>='} {lo}"
        if hi is not None and v > hi:
            return f"must be <= {hi}"
        return None
    return check


def _num_list(lo_open=0.0):
    def check(v):
        if not isinstance(v, list) or not v:
            return "must be a non-empty list of numbers"
        if any(isinstance(x, bool) or not isinstance(x, (int, float)) or x <= lo_open for x in v):
            return f"entries must be numbers > {lo_open}"
        if len(set(v)) != len(v):
            return "entries must be distinct"
        return None
    return check


def _choice(*options):
    def check(v):
        return None if v in options else f"must be one of {', '.join(map(repr, options))}"
    return check


def _int_list():
    def check(v):
        if not isinstance(v, list) or not v or any(
                isinstance(c, bool) or not isinstance(c, int) or c < 1 for c in v):
            return "must be a non-empty list of positive integers"
        return None
    return check


_ARCH = Architecture()
_TRAIN = TrainConfig()
_CELL = CellParams()

# section -> key -> (default, validator)
SCHEMA = {
    "seed": (0, _num(0, integer=True)),
    "cell": {
        "k": (_CELL.k, _num(0, lo_open=True)),
        "a": (_CELL.a, _num(0, 1, lo_open=True)),
        "eps0": (_CELL.eps0, _num(0, lo_open=True)),
        "mu1": (_CELL.mu1, _num(0)),
        "mu2": (_CELL.mu2, _num(0, lo_open=True)),
    },
    "simulate": {
        "dims": (1, _choice(1, 2)),
        "cv": (40.0, _num(0, lo_open=True)),
        "diffusion": (None, _num(0, lo_open=True)),
        "nodes": (None, _num(2, integer=True)),
        "protocol": ("pacing", _choice("pacing", "single", "s1s2", "planar")),
        "period": (500.0, _num(0, lo_open=True)),
        "s2_delay": (mapping.DEFAULT_S2_DELAY, _num(0, lo_open=True)),
        "duration": (4096.0, _num(0, lo_open=True)),
        "sample_rate": (1000.0, _num(0, lo_open=True)),
    },
    "dataset": {
        "fr": (list(ds.FR_GRID), _num_list()),
        "cv": (list(ds.CV_GRID), _num_list()),
        "h": (list(ds.H_GRID), _num_list()),
        "x": (list(ds.X_GRID), _num_list(-1.0)),
        "split_seed": (0, _num(0, integer=True)),
        "workers": (1, _num(1, integer=True)),
    },
    "train": {
        "epochs": (_TRAIN.epochs, _num(0, integer=True)),
        "batch_size": (_TRAIN.batch_size, _num(1, integer=True)),
        "lr": (_TRAIN.lr, _num(0, lo_open=True)),
        "lr_factor": (_TRAIN.lr_factor, _num(0, 1, lo_open=True)),
        "lr_patience": (_TRAIN.lr_patience, _num(1, integer=True)),
        "lr_floor": (_TRAIN.lr_floor, _num(0, lo_open=True)),
        "w_mae": (_TRAIN.w_mae, _num(0, lo_open=True)),
        "w_mse": (_TRAIN.w_mse, _num(0, lo_open=True)),
        "init_seed": (0, _num(0, integer=True)),
        "channels": (list(_ARCH.channels), _int_list()),
        "bottleneck": (_ARCH.bottleneck, _num(1, integer=True)),
        "dropout": (_ARCH.dropout, _num(0, 0.999)),
        "noise_std": (_ARCH.noise_std, _num(0)),
    },
    "map": {
        "rows": (mapping.ARRAY_SIZE, _num(2, integer=True)),
        "cols": (mapping.ARRAY_SIZE, _num(2, integer=True)),
        "height": (mapping.ARRAY_HEIGHT, _num(0, lo_open=True)),
        "stride_ms": (512.0, _num(0, lo_open=True)),
        "window": (mapping.SMOOTH_WINDOW, _num(1, integer=True)),
        "border": (mapping.BORDER, _num(0, integer=True)),
    },
    "eval": {
        "tolerance_ms": (20.0, _num(0, lo_open=True)),
    },
}


def defaults():
    out = {}
    for key, spec in SCHEMA.items():
        if isinstance(spec, dict):
            out[key] = {k: copy.deepcopy(v[0]) for k, v in spec.items()}
        else:
            out[key] = spec[0]
    return out


def _validate(doc):
    problems = []
    if not isinstance(doc, dict):
        return ["config must be a JSON object"]
    for key, value in doc.items():
        spec = SCHEMA.get(key)
        if spec is None:
            problems.append(f"{key}: unknown key")
        elif isinstance(spec, dict):
            if not isinstance(value, dict):
                problems.append(f"{key}: must be an object")
                continue
            for sub, v in value.items():
                if sub not in spec:
                    problems.append(f"{key}.{sub}: unknown key")
                    continue
                if v is None and spec[sub][0] is None:
                    continue
                msg = spec[sub][1](v)
                if msg:
                    problems.append(f"{key}.{sub}: {msg} (got {v!r})")
        else:
            msg = spec[1](value)
            if msg:
                problems.append(f"{key}: {msg} (got {value!r})")
    return problems


@dataclass
class RunConfig:
    values: dict = field(default_factory=defaults)
    overrides: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc, overrides=None):
        problems = _validate(doc)
        over_doc = {}
        for dotted, v in (overrides or {}).items():
            section, _, key = dotted.partition(".")
            if key:
                over_doc.setdefault(section, {})[key] = v
            else:
                over_doc[section] = v
        problems += [f"override {p}" for p in _validate(over_doc)]
        if problems:
            raise ConfigError("invalid config: " + "; ".join(problems))
        values = defaults()
        for src in (doc, over_doc):
            for key, value in src.items():
                if isinstance(value, dict):
                    values[key].update(value)
                else:
                    values[key] = value
        return cls(values, dict(overrides or {}))

    @classmethod
    def load(cls, path=None, overrides=None):
        doc = {}
        if path is not None:
            try:
                doc = json.loads(Path(path).read_text())
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_dict(doc, overrides)

    def __getitem__(self, key):
        return self.values[key]

    def to_json(self):
        return {"config": copy.deepcopy(self.values), "overrides": dict(self.overrides)}

    # typed views ----------------------------------------------------------

    def cell_params(self):
        return CellParams(**self.values["cell"])

    def train_config(self):
        t = self.values["train"]
        return TrainConfig(
            epochs=int(t["epochs"]), batch_size=int(t["batch_size"]), lr=float(t["lr"]),
            lr_factor=float(t["lr_factor"]), lr_patience=int(t["lr_patience"]),
            lr_floor=float(t["lr_floor"]), w_mae=float(t["w_mae"]), w_mse=float(t["w_mse"]),
            seed=int(self.values["seed"]),
        )

    def architecture(self, input_length=4096):
        t = self.values["train"]
        return Architecture(channels=tuple(t["channels"]), bottleneck=int(t["bottleneck"]),
                            dropout=float(t["dropout"]), noise_std=float(t["noise_std"]),
                            input_length=input_length)

    def grid(self):
        d = self.values["dataset"]
        return ds.default_grid(int(self.values["seed"]), *(tuple(float(v) for v in d[k])
                                                          for k in ("fr", "cv", "h", "x")))

    def electrode_array(self, sheet):
        m = self.values["map"]
        return mapping.ElectrodeArray(int(m["rows"]), int(m["cols"]), float(m["height"]), sheet)


def parse_override(text):
    """``section.key=value`` with a JSON value (bare strings allowed)."""
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {text!r}: expected section.key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value
