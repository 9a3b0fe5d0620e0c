"""
Measurement pipeline for detector records after optical recapture.

Each channel is demodulated at its own trap frequency, low-pass filtered
backwards in time so the filter output at the first retained sample refers
to the recapture instant, phase-corrected for timing delays, and combined
into the u coordinate. Noise is characterised by demodulating away from the
tone and subtracted from the ensemble variance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import signal

from .phys import K_B


class NoTone(ValueError):
    """No spectral peak stands out of the noise."""


class WindowTooShort(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    bandwidth: float = 2e3  # Hz, -3 dB point of the complete low-pass
    discard: float = 120e-6
    window: float = 1e-3  # analysed record length after the discard window
    noise_var: float = 2.5e-18  # injected detector noise, as retrodicted position variance
    bootstrap_n: int = 1000
    filter_order: int = 3
    track_frequency: bool = True
    search_halfwidth: float = 2 * math.pi * 5e3
    snr_threshold: float = 30.0
    offtone_shift: float = 2 * math.pi * 25e3
    correct_delays: bool = True


@dataclass
class DetectorRecord:
    """Two position channels on a uniform grid starting at DAQ time ``t0``."""

    dt: float
    x: np.ndarray
    y: np.ndarray
    t0: float = 0.0
    gain_x: float = 1.0
    gain_y: float = 1.0
    noise_var: float = 0.0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.x.shape != self.y.shape:
            raise ValueError("channels must have equal length")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def t(self):
        return self.t0 + self.dt * np.arange(self.x.shape[-1])

    def metres(self):
        return self.x * self.gain_x, self.y * self.gain_y


@dataclass(frozen=True)
class RetrodictedPoint:
    u: float
    u_dot: float
    t_d: float
    shot_delays: tuple[float, float] = (0.0, 0.0)


# --- calibration and noise ---------------------------------------------------

def calibrate_gain(volts, mass, omega, T_gas):
    """Volt-to-metre gain from a record in thermal equilibrium (equipartition)."""
    var = np.var(np.asarray(volts, dtype=float))
    if not var > 0:
        raise ValueError("record has zero variance; cannot calibrate")
    return math.sqrt(K_B * T_gas / (mass * omega**2) / var)


def add_detector_noise(trace, noise_var, rng):
    """White Gaussian noise of per-sample variance ``noise_var`` added to ``trace``."""
    if noise_var < 0:
        raise ValueError("noise_var must be >= 0")
    trace = np.asarray(trace, dtype=float)
    if noise_var == 0:
        return trace.copy()
    return trace + math.sqrt(noise_var) * rng.standard_normal(trace.shape)


# --- filter -----------------------------------------------------------------

def lowpass_alpha(bandwidth, dt, order=2):
    """Per-stage smoothing constant of a cascade of identical single-pole filters.

    Each stage's cutoff is raised so the whole cascade is -3 dB at ``bandwidth``.
    """
    fc = bandwidth / math.sqrt(2.0 ** (1.0 / order) - 1.0)
    return 1.0 - math.exp(-2.0 * math.pi * fc * dt)


def backward_lowpass(x, alpha, order=2):
    """Cascade filter run from the end of the record towards its start."""
    y = np.flip(np.asarray(x, dtype=float), axis=-1)
    b, a = [alpha], [1.0, alpha - 1.0]
    for _ in range(order):
        y = signal.lfilter(b, a, y, axis=-1)
    return np.flip(y, axis=-1)


def noise_gain(alpha, order=2):
    """Sum of squared impulse-response taps of the cascade."""
    if order == 1:
        return alpha / (2.0 - alpha)
    if order == 2:
        p = (1.0 - alpha) ** 2
        return alpha**4 * (1.0 + p) / (1.0 - p) ** 3
    n = int(60 * order / alpha)
    h = np.zeros(n)
    h[0] = 1.0
    for _ in range(order):
        h = signal.lfilter([alpha], [1.0, alpha - 1.0], h)
    return float(np.sum(h**2))


def per_sample_noise_var(retrodicted_var, dt, bandwidth, order=2):
    """Per-sample white-noise variance giving ``retrodicted_var`` after demodulation.

    Mixing with 2 cos() doubles the power of white noise; the filter keeps a
    fraction ``noise_gain`` of it.
    """
    return retrodicted_var / (2.0 * noise_gain(lowpass_alpha(bandwidth, dt, order), order))


def _time_constant(bandwidth, order):
    return 1.0 / (2.0 * math.pi * bandwidth / math.sqrt(2.0 ** (1.0 / order) - 1.0))


# --- frequency estimation ------------------------------------------------------

def _tone_peaks(traces, dt, band=None, pad=8):
    """Interpolated peak frequency and peak/median power ratio per row."""
    x = np.atleast_2d(np.asarray(traces, dtype=float))
    x = x - x.mean(axis=-1, keepdims=True)
    n = x.shape[-1]
    nfft = 1 << int(math.ceil(math.log2(n * pad)))
    spec = np.abs(np.fft.rfft(x * np.hanning(n), nfft, axis=-1)) ** 2
    freqs = 2.0 * math.pi * np.fft.rfftfreq(nfft, dt)
    lo, hi = (freqs[1], freqs[-2]) if band is None else band
    idx = np.nonzero((freqs >= lo) & (freqs <= hi))[0]
    idx = idx[(idx > 0) & (idx < freqs.size - 1)]
    if idx.size < 3:
        raise NoTone("search band holds fewer than three bins")
    rows = np.arange(x.shape[0])
    k = idx[np.argmax(spec[:, idx], axis=-1)]
    floor = np.median(spec[:, idx], axis=-1)
    peak = spec[rows, k]
    with np.errstate(divide="ignore", invalid="ignore"):
        snr = np.where(floor > 0, peak / floor, np.where(peak > 0, np.inf, 0.0))
        lm, l0, lp = (np.log(spec[rows, k + j]) for j in (-1, 0, 1))
        denom = lm - 2.0 * l0 + lp
        shift = np.where(np.isfinite(denom) & (denom != 0), 0.5 * (lm - lp) / denom, 0.0)
    return freqs[k] + np.clip(shift, -0.5, 0.5) * (freqs[1] - freqs[0]), snr


def estimate_tone_frequency(trace, dt, band=None, snr_threshold=30.0, pad=8):
    """Angular frequency of the dominant tone: FFT peak plus 3-point interpolation.

    The spectrum is Hann-windowed and zero-padded; the parabola is fitted to
    the log-power around the peak bin. ``band`` restricts the search to
    (omega_lo, omega_hi). Raises :class:`NoTone` when the peak power is below
    ``snr_threshold`` times the median power in the searched band.
    """
    trace = np.asarray(trace, dtype=float)
    if trace.ndim != 1:
        raise ValueError("expected a single trace")
    omega, snr = _tone_peaks(trace, dt, band, pad)
    if not snr[0] > snr_threshold:
        raise NoTone(f"peak/median = {snr[0]:.3g} below {snr_threshold}")
    return float(omega[0])


def track_frequencies(traces, dt, nominal, cfg: PipelineConfig, chunk=256):
    """Per-trace frequency estimate; falls back to ``nominal`` where no tone is found.

    Returns (omegas, tracked_mask).
    """
    traces = np.atleast_2d(traces)
    out = np.full(traces.shape[0], float(nominal))
    ok = np.zeros(traces.shape[0], dtype=bool)
    if not cfg.track_frequency:
        return out, ok
    band = (nominal - cfg.search_halfwidth, nominal + cfg.search_halfwidth)
    for i in range(0, traces.shape[0], chunk):
        w, snr = _tone_peaks(traces[i : i + chunk], dt, band, pad=4)
        good = snr > cfg.snr_threshold
        out[i : i + chunk] = np.where(good, w, nominal)
        ok[i : i + chunk] = good
    return out, ok


# --- demodulation -----------------------------------------------------------------

def _analysis_start(dt, t0, t_ref, discard):
    """Per-record index of the first sample at or after ``t_ref + discard``."""
    k0 = np.ceil((t_ref + discard - np.asarray(t0, dtype=float)) / dt - 1e-9)
    return np.maximum(k0, 0).astype(int)


def _left_align(trace, k0, length=None):
    """Rows ``trace[i, k0[i]:k0[i] + length]`` packed from column 0, zero-filled past the record end.

    A backward filter run over the zero tail stays exactly zero, so each row's
    result matches processing that record alone, whatever else is in the batch.
    """
    n = trace.shape[-1]
    length = n - int(k0.min()) if length is None else int(length)
    idx = k0[:, None] + np.arange(length)
    valid = idx < n
    out = np.take_along_axis(trace, np.minimum(idx, n - 1), axis=-1)
    return np.where(valid, out, 0.0), valid


def demodulate_retrodict(trace, dt, omega, t_ref, t0=0.0, bandwidth=2e3, discard=120e-6, order=2,
                         min_time_constants=8.0, length=None):
    """In-phase and quadrature amplitudes referred to ``t_ref``.

    The trace is mixed with 2 cos(omega (t - t_ref)) and 2 sin(omega (t - t_ref))
    and the products are low-pass filtered backwards in time; the filter
    output at the first sample after ``t_ref + discard`` is returned. For
    x(t) = A cos(omega (t - t_ref)) + B sin(omega (t - t_ref)) this gives (A, B),
    so position = A and velocity = omega B at ``t_ref``.

    ``trace`` may be 2-D (shots x samples) with per-shot ``omega`` and ``t0``.
    ``length`` caps the samples used per record after its analysis start.
    """
    trace = np.asarray(trace, dtype=float)
    omega = np.asarray(omega, dtype=float)
    t0 = np.asarray(t0, dtype=float)
    batch = trace.ndim > 1
    tr2 = np.atleast_2d(trace)
    k0 = _analysis_start(dt, np.broadcast_to(t0, tr2.shape[:1]), t_ref, discard)
    seg, valid = _left_align(tr2, k0, length)
    avail = valid.sum(axis=-1).min() if seg.shape[-1] else 0
    if avail * dt < min_time_constants * _time_constant(bandwidth, order):
        raise WindowTooShort(
            f"{avail * dt * 1e6:.1f} us after discard; filter needs "
            f"{min_time_constants * _time_constant(bandwidth, order) * 1e6:.1f} us"
        )
    tt = (np.broadcast_to(t0, tr2.shape[:1])[:, None] + dt * (k0[:, None] + np.arange(seg.shape[-1]))) - t_ref
    ph = np.atleast_1d(omega)[:, None] * tt
    alpha = lowpass_alpha(bandwidth, dt, order)
    I = backward_lowpass(2.0 * seg * np.cos(ph), alpha, order)[..., 0]
    Q = backward_lowpass(2.0 * seg * np.sin(ph), alpha, order)[..., 0]
    if not batch:
        I, Q = I[0], Q[0]
    return I, Q


def delay_correct(position, velocity, omega, trigger_delay, fixed_delay):
    """Advance a retrodicted phase-space point by the total timing delay.

    A pure rotation of (position, velocity / omega) by omega (trigger + fixed).
    """
    ang = np.asarray(omega) * (np.asarray(trigger_delay) + fixed_delay)
    c, s = np.cos(ang), np.sin(ang)
    w = np.asarray(velocity) / omega
    p = np.asarray(position)
    return p * c + w * s, (w * c - p * s) * omega


def noise_floor(trace, dt, omega_off, bandwidth=2e3, t_ref=0.0, t0=0.0, discard=120e-6, order=2):
    """Position variance of the pipeline output when demodulating off the tone.

    For a 2-D batch of records the variance is taken across records at the
    retrodiction sample (I and Q pooled). For a single record, the filtered
    I/Q time series is used instead, skipping the filter transients.
    """
    trace = np.asarray(trace, dtype=float)
    if trace.ndim >= 2:
        I, Q = demodulate_retrodict(trace, dt, np.full(trace.shape[0], omega_off), t_ref,
                                    np.broadcast_to(t0, trace.shape[:1]), bandwidth, discard, order)
        return 0.5 * (np.var(I, ddof=1) + np.var(Q, ddof=1))
    alpha = lowpass_alpha(bandwidth, dt, order)
    tt = t0 + dt * np.arange(trace.size) - t_ref
    I = backward_lowpass(2.0 * trace * np.cos(omega_off * tt), alpha, order)
    Q = backward_lowpass(2.0 * trace * np.sin(omega_off * tt), alpha, order)
    skip = int(math.ceil(8 * _time_constant(bandwidth, order) / dt))
    if trace.size <= 2 * skip:
        raise WindowTooShort("record too short for a single-trace noise estimate")
    sl = slice(0, trace.size - skip)
    return 0.5 * (np.mean(I[sl] ** 2) + np.mean(Q[sl] ** 2))


# --- combining channels ----------------------------------------------------------

_SQ2 = math.sqrt(0.5)


def retrodict_batch(x, y, dt, t0, t_ref, omega_x, omega_y, trigger_delay, fixed_delay, cfg: PipelineConfig):
    """(u, u_dot) at ``t_ref`` for a batch of records (shots x samples).

    Returns a dict with u, u_dot, the per-channel states and the demodulation
    frequencies actually used.
    """
    x, y = np.atleast_2d(x), np.atleast_2d(y)
    n = x.shape[0]
    t0 = np.broadcast_to(np.asarray(t0, dtype=float), (n,))
    k0 = _analysis_start(dt, t0, t_ref, cfg.discard)
    # the tracking window is shortened only when some record ends before it does
    length = max(min(int(round(cfg.window / dt)), x.shape[-1] - int(k0.max())), 0)
    wx, okx = track_frequencies(_left_align(x, k0, length)[0], dt, omega_x, cfg)
    wy, oky = track_frequencies(_left_align(y, k0, length)[0], dt, omega_y, cfg)
    out = {"omega_x": wx, "omega_y": wy, "tracked_x": okx, "tracked_y": oky}
    chans = {}
    for name, tr, w in (("x", x, wx), ("y", y, wy)):
        I, Q = demodulate_retrodict(tr, dt, w, t_ref, t0, cfg.bandwidth, cfg.discard,
                                    cfg.filter_order, length=length)
        pos, vel = I, w * Q
        if cfg.correct_delays:
            pos, vel = delay_correct(pos, vel, w, trigger_delay, fixed_delay)
        chans[name] = (pos, vel)
    (px, vx), (py, vy) = chans["x"], chans["y"]
    out.update(x=px, x_dot=vx, y=py, y_dot=vy, u=_SQ2 * (px + py), u_dot=_SQ2 * (vx + vy))
    return out


def retrodict_record(record: DetectorRecord, t_ref, omega_x, omega_y, trigger_delay=0.0,
                     fixed_delay=0.0, cfg: PipelineConfig | None = None) -> RetrodictedPoint:
    cfg = cfg or PipelineConfig()
    xm, ym = record.metres()
    res = retrodict_batch(xm[None], ym[None], record.dt, record.t0, t_ref, omega_x, omega_y,
                          trigger_delay, fixed_delay, cfg)
    return RetrodictedPoint(float(res["u"][0]), float(res["u_dot"][0]), t_ref,
                            (float(trigger_delay), float(fixed_delay)))


def ensemble_noise_floor(rngs, n_samples, dt, omega_x, omega_y, cfg: PipelineConfig):
    """Noise variance of u from detector-only records processed off-tone.

    One record pair (x, y) is drawn from each generator in ``rngs``.
    """
    if cfg.noise_var == 0:
        return 0.0
    sigma2 = per_sample_noise_var(cfg.noise_var, dt, cfg.bandwidth, cfg.filter_order)
    pairs = [add_detector_noise(np.zeros((2, n_samples)), sigma2, g) for g in rngs]
    rec = np.stack(pairs)
    n = rec.shape[0]
    parts = []
    for ch, w in ((0, omega_x), (1, omega_y)):
        parts.append(demodulate_retrodict(rec[:, ch], dt, np.full(n, w + cfg.offtone_shift), 0.0,
                                          np.zeros(n), cfg.bandwidth, cfg.discard, cfg.filter_order,
                                          length=int(round(cfg.window / dt))))
    Iu = _SQ2 * (parts[0][0] + parts[1][0])
    Qu = _SQ2 * (parts[0][1] + parts[1][1])
    return 0.5 * (np.var(Iu, ddof=1) + np.var(Qu, ddof=1))


# --- statistics --------------------------------------------------------------------

@dataclass(frozen=True)
class StateSize:
    du: float
    err: float
    raw_var: float
    clamped: bool


def state_size(u, noise_var=0.0, n_boot=1000, rng=None) -> StateSize:
    """Noise-subtracted standard deviation with a bootstrap error.

    The error is half the 16-84 percentile spread of the bootstrap
    distribution of the subtracted standard deviation.
    """
    u = np.asarray(u, dtype=float)
    if u.size < 2:
        raise ValueError("need at least two points")
    rng = np.random.default_rng(0) if rng is None else rng
    raw = float(np.var(u, ddof=1))
    corrected = raw - noise_var
    idx = rng.integers(0, u.size, size=(n_boot, u.size))
    boot = np.sqrt(np.maximum(np.var(u[idx], axis=1, ddof=1) - noise_var, 0.0))
    lo, hi = np.percentile(boot, [15.865525393145708, 84.1344746068543])
    return StateSize(math.sqrt(max(corrected, 0.0)), 0.5 * float(hi - lo), raw, corrected < 0)


def histogram2d(u, u_dot, omega, bin=1e-9):
    """Counts on a grid centred on the origin over (u, u_dot / omega).

    Returns (counts, u_edges, w_edges); both axes are lengths.
    """
    if not bin > 0:
        raise ValueError("bin must be positive")
    u = np.atleast_1d(np.asarray(u, dtype=float))
    w = np.atleast_1d(np.asarray(u_dot, dtype=float)) / omega

    def edges(a):
        m = int(math.ceil((np.max(np.abs(a)) / bin) - 0.5)) + 1
        return bin * (np.arange(-m, m + 2) - 0.5)

    counts, eu, ew = np.histogram2d(u, w, bins=[edges(u), edges(w)])
    return counts.astype(int), eu, ew


def principal_angle(p, w):
    """Orientation (rad) of the major axis of a 2-D point cloud."""
    c = np.cov(np.vstack([p, w]))
    return 0.5 * math.atan2(2.0 * c[0, 1], c[0, 0] - c[1, 1])
