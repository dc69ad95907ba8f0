import numpy as np
import pytest

from pltmap.egm import (
    ElectrodeSpec,
    Electrogram,
    compute_egm,
    compute_egm_1d,
    compute_egm_2d,
    compute_egm_2d_many,
    normalize,
    normalize_array,
)
from pltmap.errors import ConfigError, DimensionError
from pltmap.pltcore import detect_upstrokes
from pltmap.tissue import VoltageTrace


def brute_egm_1d(v, x0, h):
    """Double loop over time and nodes: central/one-sided gradient, trapezoid weights."""
    n_t, n = v.shape
    out = np.zeros(n_t)
    for t in range(n_t):
        acc = 0.0
        for x in range(n):
            if x == 0:
                g = v[t, 1] - v[t, 0]
            elif x == n - 1:
                g = v[t, n - 1] - v[t, n - 2]
            else:
                g = 0.5 * (v[t, x + 1] - v[t, x - 1])
            s = x - x0
            k = -s / (s * s + h * h) ** 1.5
            w = 0.5 if x in (0, n - 1) else 1.0
            acc += w * g * k
        out[t] = -acc
    return out


def brute_egm_2d(v, r0, c0, h):
    n_t, rows, cols = v.shape
    out = np.zeros(n_t)
    for t in range(n_t):
        gr, gc = np.gradient(v[t])
        acc = 0.0
        for r in range(rows):
            for c in range(cols):
                dr, dc = r - r0, c - c0
                d3 = (dr * dr + dc * dc + h * h) ** 1.5
                w = (0.5 if r in (0, rows - 1) else 1.0) * (0.5 if c in (0, cols - 1) else 1.0)
                acc += w * (gr[r, c] * (-dr / d3) + gc[r, c] * (-dc / d3))
        out[t] = -acc
    return out


def test_electrode_invariants():
    with pytest.raises(ConfigError):
        ElectrodeSpec(10.0, 0.0)
    with pytest.raises(ConfigError):
        ElectrodeSpec(10.0, 5.0, kappa=2.0)
    assert ElectrodeSpec((1, 2), 3.0).dims == 2


def test_matches_double_loop_oracle(rng):
    v = rng.standard_normal((5, 16))
    tr = VoltageTrace(v, 1000.0)
    for x0, h in [(7.5, 2.0), (3.0, 0.5), (12.25, 7.0)]:
        got = compute_egm_1d(tr, ElectrodeSpec(x0, h)).samples
        np.testing.assert_allclose(got, brute_egm_1d(v, x0, h), rtol=0, atol=1e-12)


def test_2d_matches_double_loop_oracle(rng):
    v = rng.standard_normal((3, 9, 11))
    tr = VoltageTrace(v, 1000.0)
    electrodes = [ElectrodeSpec((4.0, 5.0), 2.0), ElectrodeSpec((0.5, 9.25), 1.0)]
    got = compute_egm_2d_many(tr, electrodes)
    for j, e in enumerate(electrodes):
        np.testing.assert_allclose(got[:, j], brute_egm_2d(v, *e.position, e.height),
                                   rtol=0, atol=1e-12)


def test_uniform_field_is_exactly_zero():
    tr = VoltageTrace(np.full((4, 64), 0.7), 1000.0)
    assert np.all(compute_egm_1d(tr, ElectrodeSpec(20.0, 5.0)).samples == 0.0)
    tr2 = VoltageTrace(np.full((3, 12, 12), -0.1), 1000.0)
    assert np.all(compute_egm_2d(tr2, ElectrodeSpec((5.0, 6.0), 5.0)).samples == 0.0)


def test_ramp_with_centred_electrode_is_zero():
    n = 101
    tr = VoltageTrace(np.tile(np.linspace(0, 1, n), (3, 1)), 1000.0)
    phi = compute_egm_1d(tr, ElectrodeSpec((n - 1) / 2, 10.0)).samples
    assert np.max(np.abs(phi)) < 1e-12


def test_point_odd_field_is_zero():
    # V(-r) = -V(r) about the electrode: the gradient is even, the kernel
    # gradient odd, so the integrand cancels pairwise
    r = np.arange(21) - 10.0
    rr, cc = np.meshgrid(r, r, indexing="ij")
    odd = (rr + 2 * cc) * np.exp(-(rr**2 + cc**2) / 20.0)
    tr = VoltageTrace(np.stack([odd, 0.3 * odd]), 1000.0)
    phi = compute_egm_2d(tr, ElectrodeSpec((10.0, 10.0), 3.0)).samples
    assert np.max(np.abs(phi)) < 1e-12


def test_radial_bump_is_not_zero():
    # both gradients point radially, so their product does not cancel
    r = np.arange(21) - 10.0
    rr, cc = np.meshgrid(r, r, indexing="ij")
    bump = np.exp(-(rr**2 + cc**2) / 20.0)
    phi = compute_egm_2d(VoltageTrace(bump[None], 1000.0), ElectrodeSpec((10.0, 10.0), 3.0))
    assert abs(phi.samples[0]) > 0.1


def test_linearity(single_wave):
    e = ElectrodeSpec(512.0, 10.0)
    base = compute_egm_1d(single_wave, e).samples
    for alpha in (-2.5, 0.3, 7.0):
        scaled = VoltageTrace(alpha * single_wave.samples, 1000.0)
        got = compute_egm_1d(scaled, e).samples
        assert np.max(np.abs(got - alpha * base)) <= 1e-12 * max(1.0, np.max(np.abs(alpha * base)))


def test_peak_decays_with_height(single_wave):
    peaks = [np.max(np.abs(compute_egm_1d(single_wave, ElectrodeSpec(512.0, h)).samples)) for h in
             (5, 10, 20, 50, 80)]
    assert all(b < a for a, b in zip(peaks, peaks[1:]))


def biphasic_zero_crossing(phi, near):
    """Zero crossing between the positive and negative lobes around sample ``near``."""
    lo, hi = max(near - 100, 0), min(near + 100, len(phi))
    seg = phi[lo:hi]
    i_max, i_min = np.argmax(seg), np.argmin(seg)
    a, b = sorted((i_max, i_min))
    sign = np.sign(seg[a:b + 1])
    k = np.nonzero(sign[:-1] * sign[1:] <= 0)[0][0]
    frac = seg[a + k] / (seg[a + k] - seg[a + k + 1])
    return lo + a + k + frac


@pytest.mark.parametrize("x", [448.0, 512.0, 640.0])
def test_zero_crossing_near_local_upstroke(single_wave, x):
    phi = compute_egm_1d(single_wave, ElectrodeSpec(x, 10.0)).samples
    t_up = detect_upstrokes(single_wave.node(int(x)))[0]
    assert abs(biphasic_zero_crossing(phi, t_up) - t_up) <= 10.0


def test_mirrored_strand_gives_identical_signal(single_wave):
    # reversing the propagation direction by mirroring the strand about the
    # electrode leaves the signal unchanged (the kernel and the gradient both flip)
    n = single_wave.nodes[0]
    mid = (n - 1) / 2
    fwd = compute_egm_1d(single_wave, ElectrodeSpec(mid, 10.0)).samples
    rev = compute_egm_1d(VoltageTrace(single_wave.samples[:, ::-1], 1000.0),
                         ElectrodeSpec(mid, 10.0)).samples
    assert np.max(np.abs(fwd - rev)) < 1e-12 * np.max(np.abs(fwd))


def test_planar_wave_matches_row_integrated_kernel(single_wave):
    # a wave uniform along rows seen from the centre row: integrating the 2-D
    # kernel over rows analytically gives -s/(s^2+h^2) * [y/sqrt(s^2+h^2+y^2)]
    rows, h = 129, 10.0
    profile = single_wave.samples[::40]
    v2 = np.repeat(profile[:, None, :], rows, axis=1)
    r0, c0 = 64.0, 512.0
    phi2 = compute_egm_2d(VoltageTrace(v2, 25.0), ElectrodeSpec((r0, c0), h)).samples

    s = np.arange(profile.shape[1]) - c0
    q = s * s + h * h
    y_hi, y_lo = rows - 1 - r0, -r0
    span = y_hi / np.sqrt(q + y_hi**2) - y_lo / np.sqrt(q + y_lo**2)
    kernel = -s / q * span
    w = np.ones_like(s)
    w[0] = w[-1] = 0.5
    phi1 = -(np.gradient(profile, axis=1) @ (w * kernel))
    rms = np.sqrt(np.mean((phi2 - phi1) ** 2))
    assert rms < 0.01 * np.max(np.abs(phi1))


def test_dimension_errors(single_wave):
    with pytest.raises(DimensionError):
        compute_egm_1d(VoltageTrace(np.zeros((2, 4, 4))), ElectrodeSpec(1.0, 1.0))
    with pytest.raises(DimensionError):
        compute_egm_2d(single_wave, ElectrodeSpec((1.0, 1.0), 1.0))
    with pytest.raises(DimensionError):
        compute_egm(VoltageTrace(np.zeros((2, 4, 4))), ElectrodeSpec(1.0, 1.0))


def test_egm_carries_source_hash(single_wave):
    egm = compute_egm(single_wave, ElectrodeSpec(512.0, 10.0))
    assert egm.meta["source_trace_sha256"] == single_wave.digest()
    assert len(egm) == single_wave.n_samples and not egm.normalized


def make(samples):
    return Electrogram(np.asarray(samples, dtype=float), 1000.0, ElectrodeSpec(0.0, 1.0))


def test_normalize_examples():
    np.testing.assert_array_equal(normalize(make([0, 2, -4])).samples, [0, 0.5, -1])
    z = normalize(make([0, 0, 0]))
    assert z.normalized and np.all(z.samples == 0)


def test_normalize_idempotent(rng):
    once = normalize(make(rng.standard_normal(50)))
    twice = normalize(once)
    np.testing.assert_array_equal(once.samples, twice.samples)
    assert np.max(np.abs(once.samples)) == 1.0


def test_normalize_array_flags_degenerate(rng):
    x = rng.standard_normal((10, 3))
    x[:, 1] = 0
    y, flags = normalize_array(x, axis=0)
    assert flags.tolist() == [False, True, False]
    np.testing.assert_array_equal(np.max(np.abs(y), axis=0), [1.0, 0.0, 1.0])
