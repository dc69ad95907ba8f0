"""PLT phase maps over an electrode array and rotor-core detection."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter

from . import egm as egm_mod
from .errors import ConfigError
from .nn.checkpoint import infer_array
from .pltcore import detect_upstrokes
from .tissue import (
    CellParams,
    StimulusProtocol,
    TissueGeometry,
    run_simulation,
)
from .tissue import _Integrator

log = logging.getLogger(__name__)

SHEET_NODES = 256
SHEET_DIFFUSION = 0.5
SHEET_STRIP = 5
# first delay of the 10 ms scan (see find_s2_delay) that sustains re-entry
DEFAULT_S2_DELAY = 420.0  # first 10 ms step that sustains re-entry on the default sheet
ARRAY_SIZE = 32
ARRAY_HEIGHT = 10.0
# phasor smoothing window (electrodes) applied before core detection
SMOOTH_WINDOW = 3
# plaquettes touching the outermost electrode ring are ignored
BORDER = 1


@dataclass(frozen=True)
class ElectrodeArray:
    rows: int = ARRAY_SIZE
    cols: int = ARRAY_SIZE
    height: float = ARRAY_HEIGHT
    sheet: tuple = (SHEET_NODES, SHEET_NODES)

    def __post_init__(self):
        object.__setattr__(self, "sheet", tuple(int(s) for s in self.sheet))
        if not self.height > 0:
            raise ConfigError("array height must be > 0")
        if self.rows < 2 or self.cols < 2:
            raise ConfigError("array needs at least 2 x 2 electrodes")

    def positions(self):
        """Electrode centres, one per tile of a uniform rows x cols tiling."""
        pr = (np.arange(self.rows) + 0.5) * self.sheet[0] / self.rows - 0.5
        pc = (np.arange(self.cols) + 0.5) * self.sheet[1] / self.cols - 0.5
        return [(float(r), float(c)) for r in pr for c in pc]

    def electrodes(self):
        return [egm_mod.ElectrodeSpec(p, self.height) for p in self.positions()]

    def node_indices(self):
        """Nearest tissue node under every electrode, as (rows, cols) index arrays."""
        pos = np.array(self.positions())
        r = np.clip(np.rint(pos[:, 0]).astype(int), 0, self.sheet[0] - 1)
        c = np.clip(np.rint(pos[:, 1]).astype(int), 0, self.sheet[1] - 1)
        return r.reshape(self.rows, self.cols), c.reshape(self.rows, self.cols)


@dataclass
class PhaseMapSequence:
    frames: np.ndarray
    sample_rate: float
    singularities: list
    degenerate: np.ndarray = None
    meta: dict = field(default_factory=dict)

    @property
    def n_frames(self):
        return self.frames.shape[0]

    def singularity_counts(self):
        return np.array([len(s) for s in self.singularities])


def sheet_geometry(rows=SHEET_NODES, cols=SHEET_NODES, diffusion=SHEET_DIFFUSION):
    return TissueGeometry.sheet(diffusion, rows, cols)


def spiral_protocol(s2_delay=DEFAULT_S2_DELAY, rows=SHEET_NODES, cols=SHEET_NODES):
    """S1 on the left edge strip, S2 over the lower-left quadrant."""
    s1 = ((0, rows), (0, SHEET_STRIP))
    s2 = ((rows // 2, rows), (0, cols // 2))
    return StimulusProtocol.s1s2(s2_delay, s1, s2)


def planar_protocol(period=500.0, rows=SHEET_NODES):
    return StimulusProtocol.pacing(period, region=((0, rows), (0, SHEET_STRIP)))


def ground_truth_frame(trace, array, t_index):
    """Tissue voltage at one sample, taken at the nodes under the electrodes."""
    r, c = array.node_indices()
    return np.asarray(trace.samples[t_index])[r, c]


def center_upstrokes(geom, stim, p=None, duration=4096.0):
    """Upstroke sample indices at the sheet centre, without storing the field."""
    p = p or CellParams()
    sim = _Integrator(geom, stim, p)
    centre = tuple(n // 2 for n in geom.nodes)
    steps = int(round(1.0 / sim.dt))
    series = np.empty(int(duration))
    series[0] = sim.u[centre]
    for k in range(1, len(series)):
        for _ in range(steps):
            sim.step()
        series[k] = sim.u[centre]
    sim.check_finite()
    return detect_upstrokes(series, 0.5)


def sustains_reentry(geom, stim, p=None, duration=4096.0, window=2000.0, min_upstrokes=4):
    ups = center_upstrokes(geom, stim, p, duration)
    late = [u for u in ups if u >= duration - window]
    return len(late) >= min_upstrokes, ups


def find_s2_delay(geom=None, p=None, start=300.0, stop=800.0, step=10.0):
    """Scan S2 timing in 10 ms steps; return the first delay that sustains re-entry."""
    geom = geom or sheet_geometry()
    rows, cols = geom.nodes
    delay = start
    while delay <= stop:
        ok, ups = sustains_reentry(geom, spiral_protocol(delay, rows, cols), p)
        log.info("s2_delay %.0f ms: %s (%d upstrokes)", delay, "re-entry" if ok else "none", len(ups))
        if ok:
            return delay
        delay += step
    raise ConfigError(f"no sustained re-entry for s2_delay in [{start}, {stop}] ms")


def wrap_angle(d):
    """Wrap angles into (-pi, pi]."""
    return d - 2 * np.pi * np.ceil((d - np.pi) / (2 * np.pi))


def plaquette_charges(frame):
    """Topological charge of every 2 x 2 plaquette.

    Phases are ``2 * pi * value``; the loop runs (r, c) -> (r, c+1) ->
    (r+1, c+1) -> (r+1, c), i.e. counter-clockwise with x along columns and
    y along rows.
    """
    theta = 2 * np.pi * np.asarray(frame, dtype=np.float64)
    a = theta[:-1, :-1]
    b = theta[:-1, 1:]
    c = theta[1:, 1:]
    d = theta[1:, :-1]
    total = wrap_angle(b - a) + wrap_angle(c - b) + wrap_angle(d - c) + wrap_angle(a - d)
    return np.rint(total / (2 * np.pi)).astype(int)


def detect_singularities(frame, border=0):
    """Phase singularities as (row, col, chirality); (row, col) is the
    top-left node of the plaquette.  Plaquettes with a corner within
    ``border`` nodes of the edge are skipped."""
    q = plaquette_charges(frame)
    if border:
        keep = np.zeros_like(q, dtype=bool)
        keep[border:q.shape[0] - border, border:q.shape[1] - border] = True
        q = np.where(keep, q, 0)
    rr, cc = np.nonzero(q)
    return [(int(r), int(c), int(q[r, c])) for r, c in zip(rr, cc)]


def smooth_phase(frame, window=SMOOTH_WINDOW):
    """Average unit phasors over a ``window`` x ``window`` neighbourhood.

    Returns values in [0, 1).  Mid-upstroke electrodes produce isolated
    intermediate values that would otherwise create spurious core pairs.
    """
    if window <= 1:
        return np.asarray(frame, dtype=np.float64)
    theta = 2 * np.pi * np.asarray(frame, dtype=np.float64)
    c = uniform_filter(np.cos(theta), window, mode="nearest")
    s = uniform_filter(np.sin(theta), window, mode="nearest")
    return np.mod(np.arctan2(s, c) / (2 * np.pi), 1.0)


def boundary_winding(frame):
    """Winding number of the phase along the outer boundary loop."""
    theta = 2 * np.pi * np.asarray(frame, dtype=np.float64)
    loop = np.concatenate([
        theta[0, :],
        theta[1:, -1],
        theta[-1, -2::-1],
        theta[-2:0:-1, 0],
        theta[:1, 0],
    ])
    return int(np.rint(wrap_angle(np.diff(loop)).sum() / (2 * np.pi)))


def electrograms_for_array(trace2d, array):
    """Normalized electrograms, shape (n_samples, rows*cols), plus degenerate flags."""
    raw = egm_mod.compute_egm_2d_many(trace2d, array.electrodes())
    return egm_mod.normalize_array(raw, axis=0)


def build_phase_maps(trace2d, array, model, batch_size=32, window=SMOOTH_WINDOW, border=BORDER):
    """Electrograms -> PLT network -> frames; singularities per frame.

    Frames hold the raw network output; cores are located on the
    phasor-smoothed frame with the outer ring excluded.
    """
    if trace2d.dims != 2:
        raise ConfigError("phase maps need a 2-D trace")
    if tuple(trace2d.nodes) != tuple(array.sheet):
        raise ConfigError(f"array laid out for {array.sheet}, trace is {trace2d.nodes}")
    signals, degenerate = electrograms_for_array(trace2d, array)
    plt_values = infer_array(model, signals.T, batch_size)
    frames = plt_values.T.reshape(trace2d.n_samples, array.rows, array.cols)
    singularities = [detect_singularities(smooth_phase(f, window), border) for f in frames]
    meta = {
        "smooth_window": window,
        "border": border,
        "array": {"rows": array.rows, "cols": array.cols, "height": array.height,
                  "sheet": list(array.sheet)},
        "degenerate_electrodes": int(degenerate.sum()),
    }
    return PhaseMapSequence(frames, trace2d.sample_rate, singularities,
                            degenerate.reshape(array.rows, array.cols), meta)


def write_pgm(path, frame):
    data = np.clip(np.rint(255.0 * np.asarray(frame, dtype=np.float64)), 0, 255).astype(np.uint8)
    rows, cols = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5 {cols} {rows} 255\n".encode("ascii"))
        fh.write(data.tobytes())


def export_frames(seq, directory, stride_ms=512.0):
    """Write every ``stride_ms`` frame as PGM and CSV plus an index JSON."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stride = stride_ms * seq.sample_rate / 1000.0
    if stride <= 0 or abs(stride - round(stride)) > 1e-9 or seq.n_frames % int(round(stride)):
        raise ConfigError(f"stride {stride_ms} ms does not divide the sequence")
    stride = int(round(stride))
    index = {"sample_rate": seq.sample_rate, "stride_ms": stride_ms, "frames": []}
    for k in range(0, seq.n_frames, stride):
        frame = seq.frames[k]
        stem = f"frame_{k:05d}"
        write_pgm(directory / f"{stem}.pgm", frame)
        with open(directory / f"{stem}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            for row in frame:
                writer.writerow([repr(float(v)) for v in row])
        index["frames"].append({
            "index": k,
            "t_ms": k * 1000.0 / seq.sample_rate,
            "pgm": f"{stem}.pgm",
            "csv": f"{stem}.csv",
            "singularities": [list(s) for s in seq.singularities[k]],
        })
    (directory / "index.json").write_text(json.dumps(index, indent=1, sort_keys=True) + "\n")
    return index


def run_spiral(s2_delay=DEFAULT_S2_DELAY, geom=None, p=None, duration=4096.0):
    geom = geom or sheet_geometry()
    rows, cols = geom.nodes
    return run_simulation(geom, spiral_protocol(s2_delay, rows, cols), p, duration)


def run_planar(period=500.0, geom=None, p=None, duration=4096.0):
    geom = geom or sheet_geometry()
    return run_simulation(geom, planar_protocol(period, geom.nodes[0]), p, duration)


def persistence(seq, window_ms=2000.0):
    """Fraction of frames in the final window with at least one singularity."""
    n = int(round(window_ms * seq.sample_rate / 1000.0))
    counts = seq.singularity_counts()[-n:]
    return float(np.mean(counts > 0))
