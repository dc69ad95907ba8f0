"""Paired (electrogram, PLT target) corpus over the strand parameter grid.

Container layout (all integers little-endian uint32)::

    b"PLTD" | version | case count
    per case: json length | json block (utf-8) | input float32[n] | target float32[n]

The JSON block carries the case spec, split membership, split seed, break
indices, electrode and sample count.  A ``<file>.sha256`` sidecar in
``sha256sum`` format guards the whole file.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import logging
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import egm as egm_mod
from .errors import CaseGenerationError, DatasetGenerationError, IntegrityError, ParseError, PLTError
from .pltcore import PLTSignal, build_plt_target, detect_upstrokes
from .tissue import (
    CellParams,
    StimulusProtocol,
    TissueGeometry,
    calibrate_diffusion,
    run_simulation,
)

log = logging.getLogger(__name__)

FR_GRID = (2000.0, 1000.0, 500.0, 300.0, 200.0)
CV_GRID = (10.0, 20.0, 40.0, 80.0)
H_GRID = (5.0, 10.0, 20.0, 50.0, 80.0)
X_GRID = (448.0, 512.0, 640.0)

# grid CVs are cm/s; with 0.25 mm nodes 1 cm/s = 0.04 nodes/ms
NODE_SPACING_MM = 0.25
CV_UNIT = 10.0 / 1000.0 / NODE_SPACING_MM

CASE_DURATION_MS = 4096.0
SAMPLE_RATE = 1000.0
MAGIC = b"PLTD"
VERSION = 1


@dataclass(frozen=True)
class CaseSpec:
    fr: float
    cv: float
    h: float
    x: float
    seed: int = 0

    def on_grid(self):
        return self.fr in FR_GRID and self.cv in CV_GRID and self.h in H_GRID and self.x in X_GRID

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, d):
        return cls(float(d["fr"]), float(d["cv"]), float(d["h"]), float(d["x"]), int(d["seed"]))


@dataclass
class DatasetCase:
    spec: CaseSpec
    input: egm_mod.Electrogram
    target: PLTSignal

    def __eq__(self, other):
        if not isinstance(other, DatasetCase):
            return NotImplemented
        return (
            self.spec == other.spec
            and self.target.break_indices == other.target.break_indices
            and np.array_equal(self.input.samples, other.input.samples)
            and np.array_equal(self.target.samples, other.target.samples)
        )


@dataclass
class DatasetSplit:
    train: list
    validation: list
    split_seed: int

    def __eq__(self, other):
        if not isinstance(other, DatasetSplit):
            return NotImplemented
        return (
            self.split_seed == other.split_seed
            and self.train == other.train
            and self.validation == other.validation
        )

    @property
    def cases(self):
        return sorted(self.train + self.validation, key=lambda c: grid_index(c.spec))


def default_grid(seed=0, fr=FR_GRID, cv=CV_GRID, h=H_GRID, x=X_GRID):
    """All CaseSpecs in grid order (fr, cv, h, x nested outermost first)."""
    return [CaseSpec(a, b, c, d, seed) for a, b, c, d in itertools.product(fr, cv, h, x)]


def grid_index(spec):
    key = (spec.fr, spec.cv, spec.h, spec.x)
    try:
        return (
            FR_GRID.index(key[0]),
            CV_GRID.index(key[1]),
            H_GRID.index(key[2]),
            X_GRID.index(key[3]),
        )
    except ValueError:
        return (len(FR_GRID),) + key


def strand_diffusion(cv, p=None):
    """Diffusion coefficient (nodes^2/ms) giving conduction velocity ``cv`` cm/s."""
    return calibrate_diffusion(cv * CV_UNIT, p or CellParams())


def _strand_trace(fr, cv, p):
    d = strand_diffusion(cv, p)
    geom = TissueGeometry.strand(d)
    return run_simulation(geom, StimulusProtocol.pacing(fr), p, CASE_DURATION_MS, SAMPLE_RATE)


def _case_from_trace(spec, trace):
    electrode = egm_mod.ElectrodeSpec(spec.x, spec.h)
    raw = egm_mod.compute_egm_1d(trace, electrode)
    signal = egm_mod.normalize(raw)
    signal.samples = signal.samples.astype(np.float32)
    node = int(round(spec.x))
    breaks = detect_upstrokes(trace.node(node), 0.5, trace.sample_rate)
    if not breaks:
        raise CaseGenerationError(spec, f"no depolarization at node {node}")
    target = build_plt_target(breaks, trace.n_samples, trace.sample_rate)
    target.samples = target.samples.astype(np.float32)
    return DatasetCase(spec, signal, target)


def generate_case(spec, p=None, off_grid=False):
    """Simulate, record and label one strand configuration."""
    p = p or CellParams()
    if not off_grid and not spec.on_grid():
        raise CaseGenerationError(spec, "spec outside the parameter grid (pass off_grid=True)")
    try:
        trace = _strand_trace(spec.fr, spec.cv, p)
        return _case_from_trace(spec, trace)
    except CaseGenerationError:
        raise
    except PLTError as exc:
        raise CaseGenerationError(spec, exc) from exc


def _generate_group(args):
    """All cases sharing one (fr, cv) simulation."""
    (fr, cv), specs, p = args
    results = []
    try:
        trace = _strand_trace(fr, cv, p)
    except PLTError as exc:
        return [CaseGenerationError(s, exc) for s in specs]
    for s in specs:
        try:
            results.append(_case_from_trace(s, trace))
        except CaseGenerationError as exc:
            results.append(exc)
    return results


def generate_cases(specs, p=None, workers=1):
    """Generate many cases, sharing one simulation per (fr, cv) pair.

    Output order always follows ``specs``.
    """
    p = p or CellParams()
    groups = {}
    for s in specs:
        groups.setdefault((s.fr, s.cv), []).append(s)
    jobs = [(key, members, p) for key, members in groups.items()]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_generate_group, jobs))
    else:
        chunks = []
        for job in jobs:
            log.info("simulating fr=%g cv=%g", *job[0])
            chunks.append(_generate_group(job))
    by_spec = {}
    for job, chunk in zip(jobs, chunks):
        for s, result in zip(job[1], chunk):
            by_spec[s] = result
    ordered = [by_spec[s] for s in specs]
    failures = [r for r in ordered if isinstance(r, CaseGenerationError)]
    if failures:
        raise DatasetGenerationError(failures)
    return ordered


def split_cases(cases, split_seed, n_train=None):
    """Uniform random split; each side keeps the input order."""
    n = len(cases)
    n_train = n // 2 if n_train is None else n_train
    perm = np.random.default_rng(split_seed).permutation(n)
    train_idx = sorted(perm[:n_train].tolist())
    val_idx = sorted(perm[n_train:].tolist())
    return DatasetSplit([cases[i] for i in train_idx], [cases[i] for i in val_idx], split_seed)


def generate_dataset(grid=None, split_seed=0, p=None, workers=1):
    grid = default_grid() if grid is None else list(grid)
    cases = generate_cases(grid, p, workers)
    return split_cases(cases, split_seed)


# -- container I/O ---------------------------------------------------------

def _checksum_path(path):
    path = Path(path)
    return path.with_name(path.name + ".sha256")


def _case_block(case, split_name, split_seed):
    meta = {
        "spec": case.spec.to_json(),
        "split": split_name,
        "split_seed": split_seed,
        "breaks": list(case.target.break_indices),
        "sample_rate": case.input.sample_rate,
        "n_samples": len(case.input.samples),
        "electrode": {"position": case.input.electrode.position,
                      "height": case.input.electrode.height},
        "source_trace_sha256": case.input.meta.get("source_trace_sha256"),
    }
    block = json.dumps(meta, sort_keys=True).encode("utf-8")
    x = np.asarray(case.input.samples, dtype="<f4").tobytes()
    y = np.asarray(case.target.samples, dtype="<f4").tobytes()
    return struct.pack("<I", len(block)) + block + x + y


def dump_dataset(split):
    ordered = [(c, "train") for c in split.train] + [(c, "validation") for c in split.validation]
    ordered.sort(key=lambda item: grid_index(item[0].spec))
    parts = [MAGIC, struct.pack("<II", VERSION, len(ordered))]
    parts += [_case_block(c, name, split.split_seed) for c, name in ordered]
    return b"".join(parts)


def save_dataset(split, path):
    path = Path(path)
    payload = dump_dataset(split)
    path.write_bytes(payload)
    digest = hashlib.sha256(payload).hexdigest()
    _checksum_path(path).write_text(f"{digest}  {path.name}\n")
    return digest


def parse_dataset(payload):
    buf = memoryview(payload)
    if len(buf) < 12:
        raise ParseError(len(buf), "file shorter than header")
    if bytes(buf[:4]) != MAGIC:
        raise ParseError(0, f"bad magic {bytes(buf[:4])!r}")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise ParseError(4, f"unsupported version {version}")
    off = 12
    train, validation = [], []
    split_seed = None
    for _ in range(count):
        if off + 4 > len(buf):
            raise ParseError(off, "truncated case header")
        (n_json,) = struct.unpack_from("<I", buf, off)
        off += 4
        if off + n_json > len(buf):
            raise ParseError(off, "truncated JSON block")
        try:
            meta = json.loads(bytes(buf[off:off + n_json]).decode("utf-8"))
            spec = CaseSpec.from_json(meta["spec"])
            n = int(meta["n_samples"])
            rate = float(meta["sample_rate"])
        except (ValueError, KeyError, TypeError) as exc:
            raise ParseError(off, f"malformed JSON block: {exc}") from exc
        off += n_json
        nbytes = 4 * n
        if off + 2 * nbytes > len(buf):
            raise ParseError(off, "truncated sample arrays")
        x = np.frombuffer(buf, dtype="<f4", count=n, offset=off).astype(np.float32)
        y = np.frombuffer(buf, dtype="<f4", count=n, offset=off + nbytes).astype(np.float32)
        off += 2 * nbytes
        el = meta["electrode"]
        electrode = egm_mod.ElectrodeSpec(el["position"], el["height"])
        emeta = {}
        if meta.get("source_trace_sha256"):
            emeta["source_trace_sha256"] = meta["source_trace_sha256"]
        case = DatasetCase(
            spec,
            egm_mod.Electrogram(x, rate, electrode, True, emeta),
            PLTSignal(y, rate, [int(b) for b in meta["breaks"]]),
        )
        if meta["split"] == "train":
            train.append(case)
        elif meta["split"] == "validation":
            validation.append(case)
        else:
            raise ParseError(off, f"unknown split {meta['split']!r}")
        split_seed = int(meta["split_seed"])
    if off != len(buf):
        raise ParseError(off, f"{len(buf) - off} trailing bytes")
    return DatasetSplit(train, validation, split_seed if split_seed is not None else 0)


def load_dataset(path, verify=True):
    path = Path(path)
    payload = path.read_bytes()
    if verify:
        sidecar = _checksum_path(path)
        if not sidecar.exists():
            raise IntegrityError(f"missing checksum file {sidecar}")
        expected = sidecar.read_text().split()[0]
        actual = hashlib.sha256(payload).hexdigest()
        if expected != actual:
            raise IntegrityError(f"checksum mismatch for {path}: {actual} != {expected}")
    return parse_dataset(payload)
