"""Monodomain simulation of excitable tissue on 1-D strands and 2-D sheets.

The cell kinetics are the two-variable Aliev-Panfilov model with a fixed
time scaling of 12.9 ms per model time unit, which gives action potentials
of roughly 300 ms.  Diffusion is in grid-units^2/ms and node spacing is one
grid unit.

Two integrators are provided:

``explicit``
    forward Euler for reaction and diffusion; the stability bound
    ``dt <= dx^2 / (2 * dims * D)`` is enforced before stepping.
``implicit``
    forward Euler reaction followed by a backward Euler diffusion solve
    (1-D only).  Unconditionally stable, which the strand needs at the
    conduction velocities of the training grid.
"""
from __future__ import annotations

import functools
import hashlib
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .errors import CalibrationError, ConfigError, NoPropagationError, SimulationDiverged

TIME_SCALE_MS = 12.9
MAX_DT_MODEL = 0.02
UPSTROKE_THRESHOLD = 0.5
STRAND_NODES = 1024
STRAND_STIM_NODES = 128
# strong enough to excite the nearly isopotential strand at the top of the
# CV grid while keeping u below 1.2
STIM_AMPLITUDE = 1.5
STIM_DURATION = 30.0

# measure_cv probes
CV_PROBE_NEAR = 256
CV_PROBE_FAR = 768

# explicit steps stay this fraction below the stability bound; at the bound
# itself the checkerboard mode is undamped and the reaction term tips it over
STABILITY_SAFETY = 0.9

# bracket (grid-units^2/ms) searched by calibrate_diffusion, per scheme;
# achievable CVs are the values measured at the ends
CALIBRATION_D_RANGE = {"explicit": (0.25, 400.0), "implicit": (0.25, 1.0e5)}


@dataclass(frozen=True)
class CellParams:
    k: float = 8.0
    a: float = 0.15
    eps0: float = 0.002
    mu1: float = 0.2
    mu2: float = 0.3

    def __post_init__(self):
        problems = []
        if not self.k > 0:
            problems.append("k must be > 0")
        if not 0 < self.a < 1:
            problems.append("a must lie in (0, 1)")
        if not self.eps0 > 0:
            problems.append("eps0 must be > 0")
        if not self.mu1 >= 0:
            problems.append("mu1 must be >= 0")
        if not self.mu2 > 0:
            problems.append("mu2 must be > 0")
        if problems:
            raise ConfigError("; ".join(problems))


@dataclass(frozen=True)
class TissueGeometry:
    """Node lattice plus diffusion coefficient.

    ``nodes`` is one count per axis in row-major order, so a 2-D sheet is
    ``(rows, cols)`` with x running along columns.
    """

    dims: int = 1
    nodes: tuple = (STRAND_NODES,)
    diffusion: float = 1.0
    dx: float = 1.0
    scheme: str = "explicit"

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(int(n) for n in self.nodes))
        if self.dims not in (1, 2):
            raise ConfigError(f"dims must be 1 or 2, got {self.dims}")
        if len(self.nodes) != self.dims:
            raise ConfigError(f"need {self.dims} node counts, got {self.nodes}")
        if any(n < 3 for n in self.nodes):
            raise ConfigError("each axis needs at least 3 nodes")
        if not self.diffusion > 0:
            raise ConfigError("diffusion must be > 0")
        if self.dx != 1.0:
            raise ConfigError("node spacing is fixed at one grid unit")
        if self.scheme not in ("explicit", "implicit"):
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.scheme == "implicit" and self.dims != 1:
            raise ConfigError("implicit diffusion is only available in 1-D")

    @classmethod
    def strand(cls, diffusion, nodes=STRAND_NODES, scheme="explicit"):
        return cls(dims=1, nodes=(nodes,), diffusion=diffusion, scheme=scheme)

    @classmethod
    def sheet(cls, diffusion, rows=256, cols=256):
        return cls(dims=2, nodes=(rows, cols), diffusion=diffusion, scheme="explicit")

    @property
    def stability_bound(self):
        """Largest stable explicit step in ms."""
        return self.dx**2 / (2 * self.dims * self.diffusion)

    def internal_dt(self, sample_interval_ms=1.0):
        """Step in ms: an integer division of the output interval."""
        dt_max = MAX_DT_MODEL * TIME_SCALE_MS
        if self.scheme == "explicit":
            dt_max = min(dt_max, STABILITY_SAFETY * self.stability_bound)
        n = math.ceil(sample_interval_ms / dt_max - 1e-12)
        return sample_interval_ms / n

    def check_stability(self, dt):
        if self.scheme == "explicit" and dt > self.stability_bound * (1 + 1e-12):
            raise ConfigError(
                f"dt = {dt:g} ms violates explicit stability bound "
                f"{self.stability_bound:g} ms for D = {self.diffusion:g}"
            )


@dataclass(frozen=True)
class StimulusProtocol:
    """Stimulus timing and placement.

    ``regions`` holds one region per stimulus site; a region is one
    ``(start, stop)`` node range per axis.  Periodic protocols use
    ``regions[0]`` every ``period`` ms; S1S2 applies ``regions[0]`` at t = 0
    and ``regions[1]`` at ``s2_delay``.
    """

    kind: str = "periodic"
    period: float | None = 1000.0
    s2_delay: float | None = None
    regions: tuple = (((0, STRAND_STIM_NODES),),)
    amplitude: float = STIM_AMPLITUDE
    duration: float = STIM_DURATION

    def __post_init__(self):
        regions = tuple(tuple((int(a), int(b)) for a, b in r) for r in self.regions)
        object.__setattr__(self, "regions", regions)
        problems = []
        if self.kind not in ("periodic", "s1s2"):
            problems.append(f"unknown stimulus kind {self.kind!r}")
        if not self.amplitude >= 0:
            problems.append("amplitude must be >= 0")
        if not self.duration > 0:
            problems.append("duration must be > 0")
        if self.kind == "periodic":
            if self.period is None or not self.period > self.duration:
                problems.append("period must exceed duration")
            if len(regions) < 1:
                problems.append("periodic protocol needs a region")
        if self.kind == "s1s2":
            if self.s2_delay is None or not self.s2_delay >= self.duration:
                problems.append("s2_delay must be >= duration")
            if len(regions) != 2:
                problems.append("S1S2 protocol needs exactly two regions")
        if problems:
            raise ConfigError("; ".join(problems))

    @classmethod
    def pacing(cls, period, region=((0, STRAND_STIM_NODES),), amplitude=STIM_AMPLITUDE, duration=STIM_DURATION):
        return cls(kind="periodic", period=period, regions=(region,), amplitude=amplitude,
                   duration=duration)

    @classmethod
    def single(cls, region=((0, STRAND_STIM_NODES),), amplitude=STIM_AMPLITUDE, duration=STIM_DURATION):
        return cls.pacing(1.0e12, region, amplitude, duration)

    @classmethod
    def s1s2(cls, s2_delay, s1_region, s2_region, amplitude=STIM_AMPLITUDE, duration=STIM_DURATION):
        return cls(kind="s1s2", period=None, s2_delay=s2_delay,
                   regions=(s1_region, s2_region), amplitude=amplitude, duration=duration)

    def active_region(self, t):
        """Index of the region stimulated at time ``t`` (ms), or None."""
        if self.kind == "periodic":
            if (t % self.period) < self.duration:
                return 0
            return None
        if t < self.duration:
            return 0
        if self.s2_delay <= t < self.s2_delay + self.duration:
            return 1
        return None

    def masks(self, shape):
        out = []
        for region in self.regions:
            if len(region) != len(shape):
                raise ConfigError(f"region {region} does not match geometry {shape}")
            m = np.zeros(shape, dtype=bool)
            m[tuple(slice(a, b) for a, b in region)] = True
            out.append(m)
        return out


@dataclass
class VoltageTrace:
    """Sampled transmembrane potential.

    ``samples`` is time-major: shape ``(n_samples, *nodes)``.
    """

    samples: np.ndarray
    sample_rate: float = 1000.0
    meta: dict = field(default_factory=dict)

    @property
    def dims(self):
        return self.samples.ndim - 1

    @property
    def nodes(self):
        return self.samples.shape[1:]

    @property
    def n_samples(self):
        return self.samples.shape[0]

    @property
    def duration(self):
        return self.n_samples * 1000.0 / self.sample_rate

    def digest(self):
        """SHA-256 of the raw samples (cached; traces are treated as immutable)."""
        cached = self.meta.get("_sha256")
        if cached is None:
            cached = hashlib.sha256(np.ascontiguousarray(self.samples).tobytes()).hexdigest()
            self.meta["_sha256"] = cached
        return cached

    def node(self, index):
        """Time series at one node (int for 1-D, (row, col) for 2-D)."""
        if isinstance(index, tuple):
            return self.samples[(slice(None),) + index]
        return self.samples[:, index]


def cell_rhs(u, v, p):
    """Reaction right-hand sides per model time unit."""
    du = -p.k * u * (u - p.a) * (u - 1.0) - u * v
    dv = (p.eps0 + p.mu1 * v / (u + p.mu2)) * (-v - p.k * u * (u - p.a - 1.0))
    return du, dv


def step_cell(u, v, i_stim, dt, p):
    """One forward Euler step of the cell kinetics; ``dt`` in ms."""
    if not dt > 0:
        raise ConfigError("dt must be > 0")
    h = dt / TIME_SCALE_MS
    du, dv = cell_rhs(u, v, p)
    u_new = u + h * (du + i_stim)
    v_new = v + h * dv
    if not (np.all(np.isfinite(u_new)) and np.all(np.isfinite(v_new))):
        raise SimulationDiverged(float("nan"), "cell state became non-finite")
    return u_new, v_new


def laplacian(u):
    """Second difference with zero-flux (mirrored-cell) boundaries."""
    lap = np.empty_like(u)
    if u.ndim == 1:
        lap[1:-1] = u[:-2] - 2.0 * u[1:-1] + u[2:]
        lap[0] = u[1] - u[0]
        lap[-1] = u[-2] - u[-1]
        return lap
    # sum neighbours axis by axis; fixed order keeps results reproducible
    lap[:] = 0.0
    for axis in range(u.ndim):
        lo = [slice(None)] * u.ndim
        hi = [slice(None)] * u.ndim
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        lo, hi = tuple(lo), tuple(hi)
        diff = u[hi] - u[lo]
        lap[lo] += diff
        lap[hi] -= diff
    return lap


class _Integrator:
    """Shared stepping core for run_simulation and measure_cv."""

    def __init__(self, geom, stim, p, sample_interval_ms=1.0):
        self.geom = geom
        self.stim = stim
        self.p = p
        self.dt = geom.internal_dt(sample_interval_ms)
        geom.check_stability(self.dt)
        self.h = self.dt / TIME_SCALE_MS
        shape = geom.nodes
        self.u = np.zeros(shape)
        self.v = np.zeros(shape)
        self.stim_masks = stim.masks(shape)
        self.t = 0.0
        self.step_index = 0
        if geom.scheme == "implicit":
            n = shape[0]
            r = geom.diffusion * self.dt / geom.dx**2
            ab = np.zeros((3, n))
            ab[0, 1:] = -r
            ab[2, :-1] = -r
            ab[1, :] = 1.0 + 2.0 * r
            ab[1, 0] = ab[1, -1] = 1.0 + r
            self._banded = ab

    def step(self):
        t = self.step_index * self.dt
        u, v, p = self.u, self.v, self.p
        du, dv = cell_rhs(u, v, p)
        region = self.stim.active_region(t) if self.stim.amplitude > 0 else None
        if region is not None:
            du = du + self.stim.amplitude * self.stim_masks[region]
        if self.geom.scheme == "explicit":
            u_new = u + self.h * du + (self.dt * self.geom.diffusion) * laplacian(u)
        else:
            u_new = solve_banded((1, 1), self._banded, u + self.h * du,
                                 overwrite_b=True, check_finite=False)
        self.v = v + self.h * dv
        self.u = u_new
        self.step_index += 1
        self.t = self.step_index * self.dt

    def check_finite(self):
        if not (np.isfinite(self.u).all() and np.isfinite(self.v).all()):
            raise SimulationDiverged(self.t)


def run_simulation(geom, stim, p=None, duration=4096.0, sample_rate=1000.0, dtype=None):
    """Integrate the monodomain equation from rest and sample the voltage.

    Returns a :class:`VoltageTrace` with ``duration * sample_rate / 1000``
    samples; sample ``k`` is the state at ``k / sample_rate`` seconds.
    """
    p = p or CellParams()
    n_samples = duration * sample_rate / 1000.0
    if abs(n_samples - round(n_samples)) > 1e-9 or duration <= 0:
        raise ConfigError("duration must give a whole number of samples")
    n_samples = int(round(n_samples))
    if dtype is None:
        dtype = np.float64 if geom.dims == 1 else np.float32
    interval = 1000.0 / sample_rate
    sim = _Integrator(geom, stim, p, interval)
    steps_per_sample = int(round(interval / sim.dt))

    out = np.empty((n_samples,) + geom.nodes, dtype=dtype)
    out[0] = sim.u
    for k in range(1, n_samples):
        for _ in range(steps_per_sample):
            sim.step()
        sim.check_finite()
        out[k] = sim.u
    meta = {
        "geometry": asdict(geom),
        "stimulus": asdict(stim),
        "cell": asdict(p),
        "dt_ms": sim.dt,
    }
    return VoltageTrace(out, sample_rate, meta)


def measure_cv(geom, p=None, stim=None, t_max=4096.0):
    """Conduction velocity in grid-units/ms between nodes 256 and 768.

    Activation is the first upward crossing of u = 0.5, located between
    internal steps by linear interpolation.
    """
    p = p or CellParams()
    if geom.dims != 1:
        raise ConfigError("measure_cv needs a 1-D geometry")
    if geom.nodes[0] <= CV_PROBE_FAR:
        raise ConfigError(f"strand must extend beyond node {CV_PROBE_FAR}")
    stim = stim or StimulusProtocol.single()
    sim = _Integrator(geom, stim, p)
    probes = np.array([CV_PROBE_NEAR, CV_PROBE_FAR])
    times = [None, None]
    prev = sim.u[probes].copy()
    theta = UPSTROKE_THRESHOLD
    while sim.t < t_max:
        sim.step()
        cur = sim.u[probes]
        for j in range(2):
            if times[j] is None and prev[j] < theta <= cur[j]:
                frac = (theta - prev[j]) / (cur[j] - prev[j])
                times[j] = sim.t - sim.dt + frac * sim.dt
        if times[1] is not None and times[0] is not None:
            break
        prev = cur.copy()
        if sim.step_index % 256 == 0:
            sim.check_finite()
    if times[0] is None or times[1] is None:
        raise NoPropagationError(
            f"wave did not reach both probes within {t_max:g} ms (D = {geom.diffusion:g})"
        )
    delta = times[1] - times[0]
    if delta <= 0:
        raise NoPropagationError("far probe activated before near probe")
    return (CV_PROBE_FAR - CV_PROBE_NEAR) / delta


@functools.lru_cache(maxsize=64)
def _achievable_bounds(p, nodes, scheme):
    lo, hi = CALIBRATION_D_RANGE[scheme]
    cv_lo = measure_cv(TissueGeometry.strand(lo, nodes, scheme), p)
    cv_hi = measure_cv(TissueGeometry.strand(hi, nodes, scheme), p)
    return cv_lo, cv_hi


@functools.lru_cache(maxsize=256)
def calibrate_diffusion(target_cv, p=None, nodes=STRAND_NODES, scheme="explicit", rtol=0.005):
    """Bisect (in log D) for the diffusion that yields ``target_cv``.

    Results are memoised; the search is deterministic.
    """
    p = p or CellParams()
    cv_lo, cv_hi = _achievable_bounds(p, nodes, scheme)
    if not cv_lo <= target_cv <= cv_hi:
        raise CalibrationError(target_cv, (cv_lo, cv_hi))
    lo, hi = (math.log(d) for d in CALIBRATION_D_RANGE[scheme])
    best = None
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        d = math.exp(mid)
        cv = measure_cv(TissueGeometry.strand(d, nodes, scheme), p)
        err = abs(cv - target_cv) / target_cv
        if best is None or err < best[1]:
            best = (d, err)
        if err <= rtol:
            return d
        if cv < target_cv:
            lo = mid
        else:
            hi = mid
    if best[1] <= 0.02:
        return best[0]
    raise CalibrationError(target_cv, (cv_lo, cv_hi))
