"""Unipolar electrograms from simulated transmembrane potential.

The extracellular potential at an electrode a height ``h`` above the tissue
is

    phi(x') = -kappa * integral( grad V . grad (1 / sqrt(|x - x'|^2 + h^2)) dx )

Spatial derivatives of V use central differences in the interior and
one-sided differences at the boundary; the kernel gradient is analytic; the
integral is a trapezoidal sum over the whole strand or sheet.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DimensionError

# time samples per block when reducing 2-D traces (bounds peak memory)
_TIME_BLOCK = 128
_ELECTRODE_BLOCK = 256


@dataclass(frozen=True)
class ElectrodeSpec:
    """Electrode at ``position`` (node coordinates; ``(row, col)`` in 2-D)."""

    position: float | tuple
    height: float
    kappa: float = 1.0

    def __post_init__(self):
        if not self.height > 0:
            raise ConfigError("electrode height must be > 0")
        if self.kappa != 1.0:
            raise ConfigError("kappa is fixed at 1")
        if isinstance(self.position, (list, tuple)):
            object.__setattr__(self, "position", tuple(float(c) for c in self.position))
        else:
            object.__setattr__(self, "position", float(self.position))

    @property
    def dims(self):
        return len(self.position) if isinstance(self.position, tuple) else 1


@dataclass
class Electrogram:
    samples: np.ndarray
    sample_rate: float
    electrode: ElectrodeSpec
    normalized: bool = False
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.samples)


def trapezoid_weights(n):
    w = np.ones(n)
    w[0] = w[-1] = 0.5
    return w


def kernel_gradient_1d(n, position, height):
    """d/dx of 1/sqrt((x - x')^2 + h^2) at nodes 0..n-1."""
    s = np.arange(n, dtype=np.float64) - position
    return -s / (s * s + height * height) ** 1.5


def kernel_gradient_2d(shape, position, height):
    """(d/drow, d/dcol) of 1/sqrt(|x - x'|^2 + h^2) on a (rows, cols) grid."""
    rows, cols = shape
    r0, c0 = position
    dr = (np.arange(rows, dtype=np.float64) - r0)[:, None]
    dc = (np.arange(cols, dtype=np.float64) - c0)[None, :]
    denom = (dr * dr + dc * dc + height * height) ** 1.5
    return -dr / denom, -dc / denom


def _source_meta(trace):
    meta = {}
    digest = getattr(trace, "digest", None)
    if callable(digest):
        meta["source_trace_sha256"] = digest()
    return meta


def compute_egm_1d(trace, e):
    """Unnormalized electrogram of a 1-D trace seen by electrode ``e``."""
    if trace.dims != 1:
        raise DimensionError(f"expected a 1-D trace, got {trace.dims}-D")
    if e.dims != 1:
        raise DimensionError("1-D trace needs a scalar electrode position")
    n = trace.nodes[0]
    v = np.asarray(trace.samples, dtype=np.float64)
    grad_v = np.gradient(v, axis=1)
    weights = trapezoid_weights(n) * kernel_gradient_1d(n, e.position, e.height)
    phi = -e.kappa * (grad_v @ weights)
    return Electrogram(phi, trace.sample_rate, e, False, _source_meta(trace))


def _weighted_kernels_2d(shape, electrodes):
    """(N, E) matrices of area-weighted kernel gradients, one per axis."""
    w = np.outer(trapezoid_weights(shape[0]), trapezoid_weights(shape[1])).ravel()
    kr = np.empty((w.size, len(electrodes)))
    kc = np.empty((w.size, len(electrodes)))
    for j, e in enumerate(electrodes):
        gr, gc = kernel_gradient_2d(shape, e.position, e.height)
        kr[:, j] = w * gr.ravel()
        kc[:, j] = w * gc.ravel()
    return kr, kc


def compute_egm_2d_many(trace, electrodes):
    """Unnormalized electrograms for many electrodes over one 2-D trace.

    Returns an array of shape ``(n_samples, len(electrodes))``.  Work is
    blocked over time and electrodes so a 256 x 256 x 4096 trace fits in a
    few hundred MB of scratch space; block order is fixed so results are
    reproducible.
    """
    if trace.dims != 2:
        raise DimensionError(f"expected a 2-D trace, got {trace.dims}-D")
    for e in electrodes:
        if e.dims != 2:
            raise DimensionError("2-D trace needs (row, col) electrode positions")
    shape = trace.nodes
    n_t = trace.n_samples
    out = np.empty((n_t, len(electrodes)))
    for e0 in range(0, len(electrodes), _ELECTRODE_BLOCK):
        block = electrodes[e0:e0 + _ELECTRODE_BLOCK]
        kr, kc = _weighted_kernels_2d(shape, block)
        kappa = np.array([e.kappa for e in block])
        for t0 in range(0, n_t, _TIME_BLOCK):
            v = np.asarray(trace.samples[t0:t0 + _TIME_BLOCK], dtype=np.float64)
            gr, gc = np.gradient(v, axis=(1, 2))
            m = v.shape[0]
            acc = gr.reshape(m, -1) @ kr
            acc += gc.reshape(m, -1) @ kc
            out[t0:t0 + m, e0:e0 + len(block)] = -kappa * acc
    return out


def compute_egm_2d(trace, e):
    """Unnormalized electrogram of a 2-D trace seen by electrode ``e``."""
    phi = compute_egm_2d_many(trace, [e])[:, 0]
    return Electrogram(phi, trace.sample_rate, e, False, _source_meta(trace))


def compute_egm(trace, e):
    if trace.dims == 1:
        return compute_egm_1d(trace, e)
    return compute_egm_2d(trace, e)


def normalize(egm):
    """Scale to unit peak amplitude; an all-zero signal is returned as is."""
    peak = np.max(np.abs(egm.samples)) if len(egm.samples) else 0.0
    if peak == 0:
        return replace(egm, samples=egm.samples.copy(), normalized=True)
    return replace(egm, samples=egm.samples / peak, normalized=True)


def normalize_array(x, axis=0):
    """Peak-normalize columns (or rows) of a stacked electrogram array."""
    peak = np.max(np.abs(x), axis=axis, keepdims=True)
    safe = np.where(peak == 0, 1.0, peak)
    return x / safe, np.squeeze(peak == 0, axis=axis)
