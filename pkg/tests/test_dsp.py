import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import signal

from freqjump import dsp, dynamics, phys
from freqjump.dsp import NoTone, PipelineConfig, WindowTooShort

from conftest import ratio_setup

W_X = phys.REPORTED_OMEGA_X
W_Y = phys.REPORTED_OMEGA_Y
DT = 0.5e-6


def _tone(A, B, omega, t_ref=0.0, n=2400, t0=0.0, dt=DT):
    t = t0 + dt * np.arange(n)
    return A * np.cos(omega * (t - t_ref)) + B * np.sin(omega * (t - t_ref))


# --- calibration and noise ---------------------------------------------------

def test_calibration_recovers_gain(rng):
    mass, omega, T = 5.4e-18, W_X, 0.155
    sigma = math.sqrt(phys.K_B * T / (mass * omega**2))
    g = 3.7e-8
    volts = sigma * rng.standard_normal(200_000) / g
    assert dsp.calibrate_gain(volts, mass, omega, T) == pytest.approx(g, rel=0.02)


def test_calibration_is_linear_in_temperature(rng):
    volts = rng.standard_normal(1000)
    g1 = dsp.calibrate_gain(volts, 1e-18, W_X, 0.1)
    g2 = dsp.calibrate_gain(volts, 1e-18, W_X, 0.2)
    assert np.var(volts * g2) / np.var(volts * g1) == pytest.approx(2.0, rel=1e-12)


def test_calibration_rejects_flat_record():
    with pytest.raises(ValueError):
        dsp.calibrate_gain(np.full(100, 0.3), 1e-18, W_X, 0.1)


def test_zero_noise_is_identity(rng):
    x = rng.standard_normal(50)
    out = dsp.add_detector_noise(x, 0.0, rng)
    assert np.array_equal(out, x) and out is not x


def test_added_noise_variance(rng):
    target = 2.5e-18
    n = 1_000_000
    v = np.var(dsp.add_detector_noise(np.zeros(n), target, rng), ddof=1)
    assert abs(v - target) < 3 * target * math.sqrt(2 / (n - 1))


def test_added_noise_is_white(rng):
    noise = dsp.add_detector_noise(np.zeros(2**16), 1.0, rng)
    f, p = signal.welch(noise, fs=1 / DT, nperseg=1024)
    assert p[1:-1].max() / np.median(p[1:-1]) < 2.0
    with pytest.raises(NoTone):
        dsp.estimate_tone_frequency(noise, DT)


def test_negative_noise_rejected(rng):
    with pytest.raises(ValueError):
        dsp.add_detector_noise(np.zeros(3), -1.0, rng)


# --- frequency estimation ----------------------------------------------------

def test_tone_frequency_hundred_cycles():
    w = 2 * math.pi * 44e3
    n = int(round(100 / 44e3 / DT))
    est = dsp.estimate_tone_frequency(_tone(1.0, 0.3, w, n=n), DT)
    assert est == pytest.approx(w, rel=5e-4)


def test_tone_frequency_picks_larger_of_two():
    n = int(round(100 / 44e3 / DT))
    a = _tone(2.0, 0, 2 * math.pi * 44e3, n=n) + _tone(1.0, 0, 2 * math.pi * 58e3, n=n)
    b = _tone(1.0, 0, 2 * math.pi * 44e3, n=n) + _tone(2.0, 0, 2 * math.pi * 58e3, n=n)
    assert dsp.estimate_tone_frequency(a, DT) == pytest.approx(2 * math.pi * 44e3, rel=5e-4)
    assert dsp.estimate_tone_frequency(b, DT) == pytest.approx(2 * math.pi * 58e3, rel=5e-4)


def test_tracking_falls_back_to_nominal(rng):
    traces = np.vstack([_tone(1.0, 0.0, W_X * 1.001), rng.standard_normal(2400)])
    w, ok = dsp.track_frequencies(traces, DT, W_X, PipelineConfig())
    assert ok.tolist() == [True, False]
    assert w[0] == pytest.approx(W_X * 1.001, rel=1e-4) and w[1] == W_X


# --- demodulation --------------------------------------------------------------

@pytest.mark.parametrize("A,B", [(3e-9, 0.0), (0.0, 3e-9)])
def test_demodulation_in_phase_and_quadrature(A, B):
    t_ref = 10e-6
    I, Q = dsp.demodulate_retrodict(_tone(A, B, W_X, t_ref=t_ref), DT, W_X, t_ref, order=3)
    assert I == pytest.approx(A, abs=0.01 * 3e-9)
    assert Q == pytest.approx(B, abs=0.01 * 3e-9)
    assert W_X * Q == pytest.approx(W_X * B, abs=0.01 * 3e-9 * W_X)


@pytest.mark.parametrize("order,ok", [(1, False), (2, True), (3, True)])
def test_carrier_ripple_by_filter_order(order, ok):
    # the single pole leaves a 2 omega ripple above the 1% demodulation tolerance
    worst = 0.0
    for t_ref in np.linspace(0, 2 * math.pi / W_X, 9, endpoint=False):
        I, _ = dsp.demodulate_retrodict(_tone(1.0, 0.0, W_X, t_ref=t_ref), DT, W_X, t_ref, order=order)
        worst = max(worst, abs(I - 1.0))
    assert (worst < 0.01) == ok


def test_short_window_raises():
    with pytest.raises(WindowTooShort):
        dsp.demodulate_retrodict(_tone(1.0, 0.0, W_X, n=300), DT, W_X, 0.0)


@settings(max_examples=20, deadline=None)
@given(a=st.floats(-1e3, 1e3).filter(lambda v: abs(v) > 1e-3))
def test_demodulation_is_linear(a):
    x = _tone(2e-9, -1e-9, W_X) + 1e-10 * np.sin(np.arange(2400))
    I1, Q1 = dsp.demodulate_retrodict(x, DT, W_X, 0.0, order=3)
    I2, Q2 = dsp.demodulate_retrodict(a * x, DT, W_X, 0.0, order=3)
    assert I2 == pytest.approx(a * I1, rel=1e-12, abs=1e-24)
    assert Q2 == pytest.approx(a * Q1, rel=1e-12, abs=1e-24)


def test_backward_filter_ignores_discarded_samples(rng):
    x = _tone(2e-9, 1e-9, W_X)
    y = x.copy()
    k = int(math.ceil(120e-6 / DT - 1e-9))
    y[:k] = rng.standard_normal(k)
    assert dsp.demodulate_retrodict(x, DT, W_X, 0.0) == dsp.demodulate_retrodict(y, DT, W_X, 0.0)


def test_batch_rows_match_single_records():
    t0 = np.array([1e-6, 2.7e-6, 0.3e-6])
    x = np.vstack([_tone(1e-9 * (i + 1), 0.5e-9, W_X, t0=t) for i, t in enumerate(t0)])
    I, Q = dsp.demodulate_retrodict(x, DT, np.full(3, W_X), 0.0, t0)
    for i in range(3):
        Ii, Qi = dsp.demodulate_retrodict(x[i], DT, W_X, 0.0, t0[i])
        assert (I[i], Q[i]) == (Ii, Qi)


# --- delays ----------------------------------------------------------------------

def test_zero_delay_is_identity():
    p, v = dsp.delay_correct(1e-9, 3e-4, W_X, 0.0, 0.0)
    assert (p, v) == (1e-9, 3e-4)


def test_full_period_delay_is_identity():
    p, v = dsp.delay_correct(1e-9, 3e-4, W_X, 2 * math.pi / W_X, 0.0)
    assert p == pytest.approx(1e-9, rel=1e-12) and v == pytest.approx(3e-4, rel=1e-12)


@given(p=st.floats(-1e-7, 1e-7), v=st.floats(-1e-1, 1e-1), d=st.floats(0, 1e-4), f=st.floats(0, 1e-5))
def test_delay_correction_preserves_norm(p, v, d, f):
    q, w = dsp.delay_correct(p, v, W_X, d, f)
    assert math.hypot(q, w / W_X) == pytest.approx(math.hypot(p, v / W_X), rel=1e-12, abs=1e-30)


def test_delay_correction_removes_tilt(rng):
    n = 400
    A = 6e-9 * rng.standard_normal(n)  # elongated along position
    B = 1e-9 * rng.standard_normal(n)
    trig = rng.uniform(0, 2e-6, n)
    fixed = 1.5e-6
    t0 = trig + fixed  # DAQ label of the sample taken at physical time 0
    x = np.vstack([_tone(a, b, W_X) for a, b in zip(A, B)])
    I, Q = dsp.demodulate_retrodict(x, DT, np.full(n, W_X), 0.0, t0, order=3)
    raw = dsp.principal_angle(I, Q)
    p, v = dsp.delay_correct(I, W_X * Q, W_X, trig, fixed)
    fixed_angle = dsp.principal_angle(p, v / W_X)
    assert abs(raw) > 0.3
    assert abs(fixed_angle) < 0.02


# --- noise floor ----------------------------------------------------------------

def test_noise_floor_zero():
    assert dsp.noise_floor(np.zeros((10, 2400)), DT, W_X + 2 * math.pi * 25e3) == pytest.approx(0.0, abs=0)


@pytest.mark.parametrize("order", [1, 2, 3])
def test_noise_floor_matches_filter_gain(rng, order):
    sigma2 = 1e-16
    rec = np.sqrt(sigma2) * rng.standard_normal((4000, 2400))
    est = dsp.noise_floor(rec, DT, W_X, order=order)
    alpha = dsp.lowpass_alpha(2e3, DT, order)
    assert est == pytest.approx(2 * sigma2 * dsp.noise_gain(alpha, order), rel=0.10)


@pytest.mark.parametrize("order", [1, 2])
def test_noise_gain_closed_forms(order):
    alpha = dsp.lowpass_alpha(2e3, DT, order)
    h = np.zeros(int(80 * order / alpha))
    h[0] = 1.0
    for _ in range(order):
        h = signal.lfilter([alpha], [1.0, alpha - 1.0], h)
    assert dsp.noise_gain(alpha, order) == pytest.approx(np.sum(h**2), rel=1e-10)


def test_single_record_noise_floor(rng):
    sigma2 = dsp.per_sample_noise_var(2.5e-18, DT, 2e3, 3)
    est = dsp.noise_floor(np.sqrt(sigma2) * rng.standard_normal(400_000), DT, W_X, order=3)
    assert est == pytest.approx(2.5e-18, rel=0.10)


def test_reported_noise_level_reproduced():
    cfg = PipelineConfig()
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(3).spawn(2000)]
    floor = dsp.ensemble_noise_floor(rngs, 2400, DT, W_X, W_Y, cfg)
    assert floor == pytest.approx(2.5e-18, rel=0.10)


# --- statistics -------------------------------------------------------------------

def test_state_size_reported_scale(rng):
    u = 26.4e-9 * rng.standard_normal(500)
    s = dsp.state_size(u, 0.0, 1000, rng)
    assert abs(s.du - 26.4e-9) < 3 * s.err
    assert s.err == pytest.approx(26.4e-9 / math.sqrt(2 * 499), rel=0.20)


def test_state_size_clamps():
    s = dsp.state_size(np.array([1e-9, -1e-9, 0.0]), 1e-16)
    assert s.du == 0.0 and s.clamped and s.raw_var == pytest.approx(1e-18)


def test_bootstrap_error_standard_normal(rng):
    n = 10_000
    s = dsp.state_size(rng.standard_normal(n), 0.0, 1000, rng)
    assert s.err == pytest.approx(1 / math.sqrt(2 * n), rel=0.20)


def test_state_size_needs_two_points():
    with pytest.raises(ValueError):
        dsp.state_size(np.array([1.0]))


def test_histogram_single_point():
    c, eu, ew = dsp.histogram2d(0.3e-9, 2.0 * W_X * 1e-9, W_X)
    assert c.sum() == 1 and np.count_nonzero(c) == 1
    i, j = np.argwhere(c)[0]
    assert eu[i] <= 0.3e-9 < eu[i + 1] and ew[j] <= 2e-9 < ew[j + 1]
    assert np.any(np.isclose(0.5 * (eu[:-1] + eu[1:]), 0.0, atol=1e-21))


def test_histogram_preserves_count_and_aspect(rng):
    n = 500
    u = 5e-9 * rng.standard_normal(n)
    ud = W_X * 5e-9 * rng.standard_normal(n)
    c, eu, ew = dsp.histogram2d(u, ud, W_X)
    assert c.sum() == n
    cu, cw = 0.5 * (eu[:-1] + eu[1:]), 0.5 * (ew[:-1] + ew[1:])
    pu, pw = c.sum(axis=1), c.sum(axis=0)
    su = math.sqrt(np.sum(pu * cu**2) / n - (np.sum(pu * cu) / n) ** 2)
    sw = math.sqrt(np.sum(pw * cw**2) / n - (np.sum(pw * cw) / n) ** 2)
    assert su / sw == pytest.approx(1.0, abs=0.10)


def test_histogram_rejects_bad_bin():
    with pytest.raises(ValueError):
        dsp.histogram2d([0.0], [0.0], W_X, bin=0.0)


# --- whole pipeline -------------------------------------------------------------

def test_record_round_trip_through_pipeline():
    t_ref = 5e-6
    x = _tone(2e-9, 1e-9, W_X, t_ref=t_ref, t0=t_ref) / 4e-8
    y = _tone(-1e-9, 0.5e-9, W_Y, t_ref=t_ref, t0=t_ref) / 2e-8
    rec = dsp.DetectorRecord(DT, x, y, t0=t_ref, gain_x=4e-8, gain_y=2e-8)
    pt = dsp.retrodict_record(rec, t_ref, W_X, W_Y)
    s = math.sqrt(0.5)
    assert pt.u == pytest.approx(s * (2e-9 - 1e-9), abs=2e-11)
    assert pt.u_dot == pytest.approx(s * (W_X * 1e-9 + W_Y * 0.5e-9), rel=0.01)


def test_record_rejects_unequal_channels():
    with pytest.raises(ValueError):
        dsp.DetectorRecord(DT, np.zeros(3), np.zeros(4))


def test_noise_subtraction_unbiased():
    n = 2000
    rng = np.random.default_rng(41)
    cfg = PipelineConfig()
    A = 5e-9 * rng.standard_normal((n, 2))
    B = 5e-9 * rng.standard_normal((n, 2))
    trig = rng.uniform(0, 2e-6, n)
    t0 = trig + 1.5e-6
    m = int(1.15e-3 / DT)
    tt = t0[:, None] + DT * np.arange(m) - t0[:, None]  # physical time since t_ref
    x = A[:, :1] * np.cos(W_X * tt) + B[:, :1] * np.sin(W_X * tt)
    y = A[:, 1:] * np.cos(W_Y * tt) + B[:, 1:] * np.sin(W_Y * tt)
    sigma2 = dsp.per_sample_noise_var(cfg.noise_var, DT, cfg.bandwidth, cfg.filter_order)
    x = dsp.add_detector_noise(x, sigma2, rng)
    y = dsp.add_detector_noise(y, sigma2, rng)
    out = dsp.retrodict_batch(x, y, DT, t0, 0.0, W_X, W_Y, trig, 1.5e-6, cfg)
    floor = dsp.ensemble_noise_floor([np.random.default_rng(s) for s in np.random.SeedSequence(2).spawn(n)],
                                     m, DT, W_X, W_Y, cfg)
    true_u = math.sqrt(0.5) * (A[:, 0] + A[:, 1])
    corrected = np.var(out["u"], ddof=1) - floor
    assert corrected / np.var(true_u, ddof=1) == pytest.approx(1.0, abs=0.02)


def test_pipeline_identity_at_zero_dark_time():
    particle, optical, paul, init = ratio_setup(14.5)
    st, = dynamics.run_ensemble([0.0], 500, particle, optical, paul, init, base_seed=31)
    assert abs(st.du - init.du0) < 3 * st.bootstrap_err
    assert st.du == pytest.approx(np.std(st.true_u, ddof=1), rel=0.03)
