import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pltmap.errors import ShapeError
from pltmap.pltcore import (
    PLTSignal,
    UpstrokeMatchReport,
    build_plt_target,
    detect_plt_breaks,
    detect_upstrokes,
    hilbert_phase,
    mae,
    match_upstrokes,
    mse,
)


def test_decreasing_series_has_no_upstrokes():
    assert detect_upstrokes(np.linspace(1, 0, 100)) == []


def test_lockout_example():
    assert detect_upstrokes([0, 0.6, 0.4, 0.7], 0.5, 1000.0) == [1]


def test_crossing_is_strict_below_then_at_or_above():
    assert detect_upstrokes([0.2, 0.5, 0.1]) == [1]
    assert detect_upstrokes([0.5, 0.9]) == []


def test_lockout_scales_with_rate():
    v = np.zeros(200)
    v[10:12] = 1
    v[40:42] = 1
    assert detect_upstrokes(v, sample_rate=1000.0) == [10]
    assert detect_upstrokes(v, sample_rate=250.0) == [10, 40]


def test_empty_breaks_give_zeros():
    sig = build_plt_target([], 100)
    assert np.all(sig.samples == 0) and len(sig) == 100


def test_two_break_example():
    sig = build_plt_target([0, 4], 8)
    np.testing.assert_array_equal(sig.samples, [1, 0.75, 0.5, 0.25, 1, 0.75, 0.5, 0.25])


def test_single_break_tail():
    sig = build_plt_target([2], 10)
    assert sig.samples[2] == 1.0
    assert sig.samples[9] == pytest.approx(1 - 7 / 1000, abs=1e-15)
    assert np.all(sig.samples[:2] == 0)


def test_tail_clamps_at_zero():
    sig = build_plt_target([10, 20], 100)
    assert sig.samples[30:].max() == 0.0 and sig.samples.min() == 0.0


def test_bad_breaks_rejected():
    with pytest.raises(ValueError):
        build_plt_target([5, 3], 10)
    with pytest.raises(ValueError):
        build_plt_target([10], 10)


def check_plt_invariants(sig):
    y = sig.samples
    assert y.min() >= 0 and y.max() <= 1
    for b in sig.break_indices:
        assert y[b] == 1.0
    for i, j in zip(sig.break_indices, sig.break_indices[1:]):
        slope = np.diff(y[i:j])
        np.testing.assert_allclose(slope, -1.0 / (j - i), atol=1e-12)


breaks_strategy = st.lists(st.integers(1, 3999), min_size=0, max_size=20, unique=True).map(sorted)


@settings(max_examples=60, deadline=None)
@given(breaks_strategy)
def test_target_invariants(breaks):
    check_plt_invariants(build_plt_target(breaks, 4096))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(1, 80), min_size=1, max_size=30))
def test_build_detect_closure(gaps):
    # breaks at least 51 samples apart, so the 50 ms lockout never interferes
    breaks = list(np.cumsum([50 + g for g in gaps]))
    breaks = [b for b in breaks if b < 4096]
    sig = build_plt_target(breaks, 4096)
    assert detect_upstrokes(sig.samples, 0.5) == breaks
    assert detect_plt_breaks(sig.samples) == breaks


def test_hilbert_sinusoid_phase_advance():
    n, f, fs = 4096, 8.0, 1000.0
    t = np.arange(n) / fs
    phase, degenerate = hilbert_phase(np.sin(2 * np.pi * f * t))
    assert not degenerate
    step = np.mod(np.diff(phase), 1.0)
    inner = slice(256, n - 256)
    assert np.max(np.abs(step[inner] - f / fs)) < 1e-3
    # phase of sin is the cosine phase minus a quarter turn
    ref = np.mod(f * t - 0.25, 1.0)
    d = np.mod(phase - ref + 0.5, 1.0) - 0.5
    assert np.max(np.abs(d[inner])) < 1e-2


def test_hilbert_constant_is_degenerate():
    phase, degenerate = hilbert_phase(np.full(64, 3.0))
    assert degenerate and np.all(phase == 0)


def test_hilbert_odd_length_and_short_input(rng):
    phase, _ = hilbert_phase(rng.standard_normal(101))
    assert phase.min() >= 0 and phase.max() < 1
    with pytest.raises(ShapeError):
        hilbert_phase([1.0, 2.0, 3.0])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_hilbert_scale_invariant(seed, scale):
    x = np.random.default_rng(seed).standard_normal(256)
    a, _ = hilbert_phase(x)
    b, _ = hilbert_phase(scale * x)
    d = np.mod(a - b + 0.5, 1.0) - 0.5
    assert np.max(np.abs(d)) < 1e-12


def test_metrics_examples():
    assert mae([0, 1], [1, 0]) == 1.0 and mse([0, 1], [1, 0]) == 1.0
    assert mae([0.3, 0.2], [0.3, 0.2]) == 0.0
    with pytest.raises(ShapeError):
        mae([1, 2], [1, 2, 3])
    with pytest.raises(ShapeError):
        mse([1], [1, 2])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=30), st.integers(0, 1000))
def test_metrics_nonnegative_zero_iff_equal(a, seed):
    a = np.array(a)
    b = a + np.random.default_rng(seed).normal(size=a.size)
    assert mae(a, b) >= 0 and mse(a, b) >= 0
    assert (mae(a, b) == 0) == np.array_equal(a, b)
    assert mae(a, a) == 0 and mse(a, a) == 0


def test_match_perfect_and_empty():
    target = build_plt_target([100, 600, 1100, 1600, 2100], 3000)
    assert match_upstrokes(target, target.break_indices).error_rate == 0.0
    zero = PLTSignal(np.zeros(3000))
    r = match_upstrokes(zero, target.break_indices)
    assert r.error_rate == 1.0 and r.detected_count == 0


def test_match_counts_extra_and_shifted():
    target = build_plt_target([100, 600, 1100], 2000)
    pred = build_plt_target([130, 600, 1100, 1500], 2000)
    r = match_upstrokes(pred, target.break_indices, tolerance_ms=20)
    assert (r.true_count, r.detected_count, r.matched_count) == (3, 4, 2)
    assert r.error_rate == pytest.approx((3 + 4 - 4) / 3)
    assert match_upstrokes(pred, target.break_indices, tolerance_ms=40).matched_count == 3


def test_report_invariants_and_pooling():
    a = UpstrokeMatchReport(10, 9, 9, 20.0)
    b = UpstrokeMatchReport(5, 6, 5, 20.0)
    c = a + b
    assert (c.true_count, c.detected_count, c.matched_count) == (15, 15, 14)
    assert c.error_rate == pytest.approx(2 / 15)
    with pytest.raises(ValueError):
        a + UpstrokeMatchReport(1, 1, 1, 10.0)


def test_detect_plt_breaks_on_smooth_prediction():
    # a realistic network output: sawtooth that never quite reaches 0 or 1
    y = 0.05 + 0.9 * build_plt_target([200, 700, 1200], 2000).samples
    y = np.convolve(y, np.ones(3) / 3, mode="same")
    got = detect_plt_breaks(y)
    assert [abs(g - t) <= 2 for g, t in zip(got, [200, 700, 1200])] == [True] * 3
