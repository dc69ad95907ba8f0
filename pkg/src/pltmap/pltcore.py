"""Phase-like transformation targets, the Hilbert-phase baseline and metrics.

A PLT signal is a sawtooth in [0, 1]: it jumps to 1 at every depolarization
and decays linearly, reaching 0 exactly at the next one.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

UPSTROKE_THRESHOLD = 0.5
LOCKOUT_MS = 50.0
DEFAULT_TAIL_MS = 1000.0
MATCH_TOLERANCE_MS = 20.0
RISE_WINDOW = 5
RISE_LEVEL = 0.5


@dataclass
class PLTSignal:
    samples: np.ndarray
    sample_rate: float = 1000.0
    break_indices: list = field(default_factory=list)

    def __len__(self):
        return len(self.samples)


@dataclass
class UpstrokeMatchReport:
    true_count: int
    detected_count: int
    matched_count: int
    tolerance_ms: float

    @property
    def error_rate(self):
        if self.true_count == 0:
            return 0.0 if self.detected_count == 0 else float("inf")
        wrong = self.true_count + self.detected_count - 2 * self.matched_count
        return wrong / self.true_count

    def __add__(self, other):
        if self.tolerance_ms != other.tolerance_ms:
            raise ValueError("cannot pool reports with different tolerances")
        return UpstrokeMatchReport(
            self.true_count + other.true_count,
            self.detected_count + other.detected_count,
            self.matched_count + other.matched_count,
            self.tolerance_ms,
        )


def _lockout_samples(sample_rate, lockout_ms):
    return int(round(lockout_ms * sample_rate / 1000.0))


def detect_upstrokes(v, threshold=UPSTROKE_THRESHOLD, sample_rate=1000.0, lockout_ms=LOCKOUT_MS):
    """Indices ``i`` with ``v[i-1] < threshold <= v[i]``.

    A detection suppresses further detections for ``lockout_ms``.
    """
    v = np.asarray(v)
    if v.size < 2:
        return []
    candidates = np.flatnonzero((v[:-1] < threshold) & (v[1:] >= threshold)) + 1
    lockout = _lockout_samples(sample_rate, lockout_ms)
    out = []
    last = None
    for i in candidates:
        if last is None or i - last > lockout:
            out.append(int(i))
            last = i
    return out


def build_plt_target(breaks, length, sample_rate=1000.0, tail_ms=DEFAULT_TAIL_MS):
    """Sawtooth target for the given depolarization indices.

    Zero before the first break; 1 at each break, decaying linearly to reach
    0 at the next.  After the last break the decay continues with the last
    inter-break interval (``tail_ms`` if there is only one break) and is
    clamped at 0.
    """
    breaks = [int(b) for b in breaks]
    if any(b2 <= b1 for b1, b2 in zip(breaks, breaks[1:])):
        raise ValueError("breaks must be sorted and unique")
    if breaks and (breaks[0] < 0 or breaks[-1] >= length):
        raise ValueError("break index outside signal")
    out = np.zeros(length)
    if not breaks:
        return PLTSignal(out, sample_rate, [])
    for b1, b2 in zip(breaks, breaks[1:]):
        span = b2 - b1
        out[b1:b2] = 1.0 - np.arange(span) / span
    last = breaks[-1]
    span = breaks[-1] - breaks[-2] if len(breaks) > 1 else tail_ms * sample_rate / 1000.0
    out[last:] = np.maximum(1.0 - np.arange(length - last) / span, 0.0)
    return PLTSignal(out, sample_rate, breaks)


def hilbert_phase(x):
    """Instantaneous phase in [0, 1) from the FFT analytic signal.

    The mean is removed first.  DC and (for even lengths) Nyquist bins keep
    unit weight, positive frequencies are doubled and negative ones zeroed.
    Returns ``(phase, degenerate)``; a constant input has no defined phase
    and yields zeros with ``degenerate=True``.
    """
    x = np.asarray(getattr(x, "samples", x), dtype=np.float64)
    n = x.size
    if n < 4:
        raise ShapeError("hilbert_phase needs at least 4 samples")
    x = x - x.mean()
    if not np.any(x):
        return np.zeros(n), True
    spectrum = np.fft.fft(x)
    h = np.zeros(n)
    h[0] = 1.0
    if n % 2 == 0:
        h[n // 2] = 1.0
        h[1:n // 2] = 2.0
    else:
        h[1:(n + 1) // 2] = 2.0
    analytic = np.fft.ifft(spectrum * h)
    phase = np.arctan2(analytic.imag, analytic.real) / (2 * np.pi)
    return np.mod(phase, 1.0), False


def _pair(a, b):
    a = np.asarray(getattr(a, "samples", a), dtype=np.float64)
    b = np.asarray(getattr(b, "samples", b), dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch: {a.shape} vs {b.shape}")
    return a, b


def mae(a, b):
    a, b = _pair(a, b)
    return float(np.mean(np.abs(a - b)))


def mse(a, b):
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def detect_plt_breaks(samples, sample_rate=1000.0, lockout_ms=LOCKOUT_MS):
    """Reset points of a (predicted) sawtooth: a rise of more than 0.5
    within 5 samples, reported at the first sample completing the rise."""
    y = np.asarray(samples, dtype=np.float64)
    n = y.size
    if n < 2:
        return []
    lows = np.full(n, np.inf)
    for lag in range(1, RISE_WINDOW + 1):
        lows[lag:] = np.minimum(lows[lag:], y[:-lag])
    candidates = np.flatnonzero(y - lows > RISE_LEVEL)
    lockout = _lockout_samples(sample_rate, lockout_ms)
    out = []
    last = None
    for i in candidates:
        if last is None or i - last > lockout:
            out.append(int(i))
            last = i
    return out


def match_upstrokes(predicted, true_breaks, tolerance_ms=MATCH_TOLERANCE_MS, sample_rate=None):
    """Compare detected resets of ``predicted`` with the true breaks.

    Matching is greedy by distance: the closest unmatched (true, detected)
    pair within tolerance is paired first.
    """
    if sample_rate is None:
        sample_rate = getattr(predicted, "sample_rate", 1000.0)
    samples = getattr(predicted, "samples", predicted)
    detected = detect_plt_breaks(samples, sample_rate)
    true_breaks = [int(b) for b in true_breaks]
    tol = tolerance_ms * sample_rate / 1000.0
    pairs = sorted(
        (abs(t - d), i, j)
        for i, t in enumerate(true_breaks)
        for j, d in enumerate(detected)
        if abs(t - d) <= tol
    )
    used_t, used_d = set(), set()
    for _, i, j in pairs:
        if i not in used_t and j not in used_d:
            used_t.add(i)
            used_d.add(j)
    return UpstrokeMatchReport(len(true_breaks), len(detected), len(used_t), tolerance_ms)
