"""
Stochastic simulation of the frequency-jump protocol.

A shot starts from a thermal state in the optical trap (x, y axes), is
released into the Paul trap (u, v axes) for the dark time ``t_d``, and is
recaptured optically while the detector records x and y. Time is measured
from the release instant.

Shots are vectorised over a leading batch axis. Each shot owns its random
streams, derived from ``(base_seed, t_d index, shot index)``. Results do not
depend on batch size or thread count.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import dsp
from .analytic import ThermalInit
from .floquet import characteristic_exponent
from .phys import K_B, OpticalTrap, PaulTrap, ParticleParams

_SQ2 = math.sqrt(0.5)
_CHUNK = 1024  # kicks drawn per refill; fixed so streams do not depend on run length


class RecaptureFailure(RuntimeError):
    """The particle left the optical capture region during the dark phase."""


@dataclass(frozen=True)
class ProtocolSchedule:
    """Timing of one shot. All durations in seconds.

    ``rf_phase0`` overrides the Paul trap's phase at release when given;
    ``randomize_rf_phase`` draws it uniformly per shot instead.
    """

    t_d: float
    t_pre: float = 0.0
    t_post: float = 1.15e-3
    trigger_jitter: float = 2e-6
    fixed_delay: float = 1.5e-6
    rf_phase0: float | None = None
    randomize_rf_phase: bool = False
    escape_radius: float = 300e-9
    record_every: int = 4
    steps_per_period: int = 200

    def __post_init__(self):
        for name in ("t_d", "t_pre", "t_post", "trigger_jitter", "fixed_delay"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {v!r}")
        if not self.escape_radius > 0:
            raise ValueError("escape_radius must be positive")
        if self.record_every < 1 or self.steps_per_period < 1:
            raise ValueError("record_every and steps_per_period must be >= 1")

    def time_step(self, optical: OpticalTrap, paul: PaulTrap) -> float:
        """Largest step dividing ``t_d`` evenly and below min(period) / steps_per_period."""
        periods = (2 * math.pi / optical.omega_x, 2 * math.pi / optical.omega_y,
                   2 * math.pi / paul.Omega_rf, 2 * math.pi / paul.omega_p)
        dt_max = min(periods) / self.steps_per_period
        if self.t_d == 0:
            return dt_max
        return self.t_d / math.ceil(self.t_d / dt_max - 1e-12)


@dataclass
class Trajectory:
    """Full-resolution record of one shot in the xy basis.

    ``samples`` has one row (x, y, x_dot, y_dot) per grid point, so there are
    n_steps + 1 rows. ``phase_marks`` are the row indices of release and
    recapture.
    """

    dt: float
    t_start: float
    samples: np.ndarray
    phase_marks: tuple[int, int]
    seed: object = None
    trigger_delay: float = 0.0
    rf_phase0: float = 0.0

    @property
    def t(self):
        return self.t_start + self.dt * np.arange(self.samples.shape[0])

    @property
    def uv(self):
        """Samples rotated into the Paul-trap basis (u, v, u_dot, v_dot)."""
        s = self.samples
        return np.column_stack([_SQ2 * (s[:, 0] + s[:, 1]), _SQ2 * (s[:, 0] - s[:, 1]),
                                _SQ2 * (s[:, 2] + s[:, 3]), _SQ2 * (s[:, 2] - s[:, 3])])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(f"# dt={self.dt!r} t_start={self.t_start!r} release={self.phase_marks[0]} "
                     f"recapture={self.phase_marks[1]} seed={self.seed} "
                     f"trigger_delay={self.trigger_delay!r} rf_phase0={self.rf_phase0!r}\n")
            w = csv.writer(fh)
            w.writerow(["t_s", "x_m", "y_m", "vx_m_s", "vy_m_s"])
            for t, row in zip(self.t, self.samples):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path):
        meta = {}
        with open(path) as fh:
            first = fh.readline()
            for item in first.lstrip("# ").split():
                k, v = item.split("=", 1)
                meta[k] = v
            data = np.loadtxt(fh, delimiter=",", skiprows=1, ndmin=2)
        return cls(
            dt=float(meta["dt"]),
            t_start=float(meta["t_start"]),
            samples=data[:, 1:5],
            phase_marks=(int(meta["release"]), int(meta["recapture"])),
            seed=meta.get("seed"),
            trigger_delay=float(meta.get("trigger_delay", 0.0)),
            rf_phase0=float(meta.get("rf_phase0", 0.0)),
        )


@dataclass
class EnsembleStats:
    """Retrodicted phase-space points and state size at one dark time."""

    t_d: float
    u: np.ndarray
    u_dot: np.ndarray
    raw_var_u: float
    noise_var: float
    corrected_var_u: float
    clamped: bool
    bootstrap_err: float
    n_shots: int
    excluded: int
    omega_o: float
    true_u: np.ndarray = field(repr=False, default=None)
    true_u_dot: np.ndarray = field(repr=False, default=None)

    @property
    def du(self):
        return math.sqrt(self.corrected_var_u)

    @property
    def samples(self):
        return np.column_stack([self.u, self.u_dot])


# --- initial state and integrator ------------------------------------------

def sample_initial_state(init: ThermalInit, rng, size=None):
    """Thermal draw of (x, y, x_dot, y_dot) in the optical trap.

    Returns shape (4,) or (size, 4). Zero temperatures give exact zeros.
    """
    std = np.sqrt(np.diag(init.xy_cov))
    shape = (4,) if size is None else (size, 4)
    return rng.standard_normal(shape) * std


def _kdk(x, v, k_now, k_next, gamma, dt, kick=None):
    # kick-drift-kick; the friction and the thermal kick enter with the velocity updates
    h = 0.5 * dt
    vh = v + h * (-k_now * x - gamma * v)
    x = x + dt * vh
    v = vh + h * (-k_next * x - gamma * vh)
    if kick is not None:
        v = v + kick
    return x, v


def step_langevin(state, t, dt, stiffness, gamma, T_bath, mass, rng=None):
    """Advance (x, v) by one step of x_ddot = -k(t) x - gamma x_dot + noise.

    Parameters
    ----------
    state : tuple of arrays
        Positions and velocities, broadcast-compatible with ``stiffness(t)``.
    stiffness : callable
        k(t) in s^-2.
    rng : numpy.random.Generator, optional
        Needed only when ``gamma > 0``. The thermal kick has variance
        2 gamma k_B T / m dt.
    """
    x, v = (np.asarray(a, dtype=float) for a in state)
    kick = None
    if gamma > 0:
        if rng is None:
            raise ValueError("rng required when gamma > 0")
        kick = math.sqrt(2.0 * gamma * K_B * T_bath / mass * dt) * rng.standard_normal(np.shape(v))
    return _kdk(x, v, stiffness(t), stiffness(t + dt), gamma, dt, kick)


class _KickStream:
    """Per-shot Gaussian kicks drawn in fixed-size chunks from each shot's generator."""

    def __init__(self, rngs, std, dim=2):
        self.rngs, self.std, self.dim = rngs, std, dim
        self.buf, self.i = None, _CHUNK

    def __call__(self):
        if self.std == 0:
            return None
        if self.i == _CHUNK:
            self.buf = self.std * np.stack([g.standard_normal((_CHUNK, self.dim)) for g in self.rngs], axis=1)
            self.i = 0
        out = self.buf[self.i]
        self.i += 1
        return out


def _paul_stiffness(paul: PaulTrap, phase):
    """k(t) for (u, v); ``phase`` is a scalar or an (n, 1) array."""
    if paul.pseudo_potential:
        bu = paul.beta
        bv = bu if (paul.a_v, abs(paul.q_v)) == (paul.a_u, abs(paul.q_u)) else characteristic_exponent(paul.a_v, paul.q_v)
        k = (paul.Omega_rf / 2) ** 2 * np.array([bu**2, bv**2])
        return lambda t: k
    W = paul.Omega_rf
    k0 = W**2 / 4 * np.array([paul.a_u, paul.a_v])
    k1 = W**2 / 2 * np.array([paul.q_u, paul.q_v])
    if np.ndim(phase) == 0:
        return lambda t: k0 - k1 * math.cos(W * t + phase)
    return lambda t: k0 - k1 * np.cos(W * t + phase)


def _rotate(x, v):
    # xy <-> uv; the 45-degree matrix is its own inverse
    return (np.stack([_SQ2 * (x[:, 0] + x[:, 1]), _SQ2 * (x[:, 0] - x[:, 1])], axis=1),
            np.stack([_SQ2 * (v[:, 0] + v[:, 1]), _SQ2 * (v[:, 0] - v[:, 1])], axis=1))


def _run_phase(x, v, kfun, t0, dt, nsteps, gamma, kicks, each=None):
    k_now = kfun(t0)
    for i in range(nsteps):
        k_next = kfun(t0 + (i + 1) * dt)
        x, v = _kdk(x, v, k_now, k_next, gamma, dt, kicks())
        k_now = k_next
        if each is not None:
            each(i + 1, x, v)
    return x, v


def _simulate(seqs, particle: ParticleParams, optical: OpticalTrap, paul: PaulTrap,
              init: ThermalInit, sched: ProtocolSchedule, full=False):
    """Run a batch of shots; one SeedSequence per shot."""
    rngs = [np.random.default_rng(s) for s in seqs]
    n = len(rngs)
    s0 = np.stack([sample_initial_state(init, g) for g in rngs])
    extra = np.array([g.random(2) for g in rngs])  # trigger delay, rf phase; always drawn
    trig = extra[:, 0] * sched.trigger_jitter
    if sched.randomize_rf_phase:
        phase = (2 * math.pi * extra[:, 1])[:, None]
    else:
        phase = paul.rf_phase0 if sched.rf_phase0 is None else sched.rf_phase0

    dt = sched.time_step(optical, paul)
    n_pre = int(round(sched.t_pre / dt))
    n_dark = int(round(sched.t_d / dt))
    n_post = int(math.ceil(sched.t_post / dt - 1e-9))
    gamma = particle.gamma
    kicks = _KickStream(rngs, math.sqrt(particle.kick_variance_rate * dt))
    k_opt = np.array([optical.omega_x**2, optical.omega_y**2])
    k_opt_fn = lambda t: k_opt

    x, v = s0[:, :2].copy(), s0[:, 2:].copy()
    out = {"dt": dt, "trigger_delay": trig, "phase": phase, "n_pre": n_pre, "n_dark": n_dark}
    hist = None
    if full:
        hist = np.empty((n_pre + n_dark + n_post + 1, n, 4))
        hist[0] = s0

        def store(offset, uv=False):
            def each(i, x, v):
                if uv:
                    x, v = _rotate(x, v)
                hist[offset + i, :, :2], hist[offset + i, :, 2:] = x, v
            return each
    else:
        store = lambda offset, uv=False: None

    x, v = _run_phase(x, v, k_opt_fn, -n_pre * dt, dt, n_pre, gamma, kicks, store(0))
    x, v = _rotate(x, v)
    escaped = np.abs(x[:, 0]) > sched.escape_radius

    def watch(i, x, v):
        escaped[:] |= np.abs(x[:, 0]) > sched.escape_radius
        if hist is not None:
            store(n_pre, uv=True)(i, x, v)

    x, v = _run_phase(x, v, _paul_stiffness(paul, phase), 0.0, dt, n_dark, gamma, kicks, watch)
    out["recapture_uv"] = np.concatenate([x, v], axis=1)
    out["escaped"] = escaped
    x, v = _rotate(x, v)

    rec_every = sched.record_every
    rec = np.empty((n, n_post // rec_every + 1, 2))
    rec[:, 0] = x

    def record(i, x, v):
        if i % rec_every == 0:
            rec[:, i // rec_every] = x
        if hist is not None:
            hist[n_pre + n_dark + i, :, :2], hist[n_pre + n_dark + i, :, 2:] = x, v

    _run_phase(x, v, k_opt_fn, sched.t_d, dt, n_post, gamma, kicks, record)
    out["record"] = rec
    out["record_dt"] = dt * rec_every
    out["record_t0"] = sched.t_d + trig + sched.fixed_delay
    if hist is not None:
        out["history"] = hist
    return out


def run_protocol(schedule: ProtocolSchedule, particle: ParticleParams, optical: OpticalTrap,
                 paul: PaulTrap, init: ThermalInit, seed=0) -> Trajectory:
    """One shot at full time resolution.

    ``seed`` is an int or a SeedSequence; a shot of :func:`run_ensemble` is
    reproduced by passing :func:`shot_seed_sequence` of the same indices.
    Raises :class:`RecaptureFailure` if |u| exceeds the escape radius.
    """
    seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    res = _simulate([seq.spawn(3)[0]], particle, optical, paul, init, schedule, full=True)
    if res["escaped"][0]:
        raise RecaptureFailure(f"|u| exceeded {schedule.escape_radius:.3g} m during the dark phase")
    phase = res["phase"]
    return Trajectory(
        dt=res["dt"],
        t_start=-res["n_pre"] * res["dt"],
        samples=res["history"][:, 0, :],
        phase_marks=(res["n_pre"], res["n_pre"] + res["n_dark"]),
        seed=seed if not isinstance(seed, np.random.SeedSequence) else seq.entropy,
        trigger_delay=float(res["trigger_delay"][0]),
        rf_phase0=float(np.ravel(phase)[0]),
    )


# --- ensembles ---------------------------------------------------------------

def shot_seed_sequence(base_seed, td_index, shot):
    return np.random.SeedSequence([int(base_seed), int(td_index), int(shot)])


def _ensemble_point(td_index, t_d, n_shots, particle, optical, paul, init, template, cfg,
                    base_seed, batch_size, shot_seeds):
    sched = replace(template, t_d=float(t_d))
    if shot_seeds is None:
        seqs = [shot_seed_sequence(base_seed, td_index, i) for i in range(n_shots)]
    else:
        seqs = [np.random.SeedSequence(int(s)) for s in shot_seeds]
    children = [s.spawn(3) for s in seqs]  # dynamics, detector, noise-only records
    omega_x, omega_y = optical.omega_x, optical.omega_y
    cols = {k: [] for k in ("u", "u_dot", "true_u", "true_u_dot")}
    excluded = 0
    rec_dt = rec_len = None
    for b in range(0, n_shots, batch_size):
        ch = children[b : b + batch_size]
        res = _simulate([c[0] for c in ch], particle, optical, paul, init, sched)
        rec_dt, rec_len = res["record_dt"], res["record"].shape[1]
        ok = ~res["escaped"]
        excluded += int(np.sum(~ok))
        if not np.any(ok):
            continue
        rec = res["record"][ok]
        if cfg.noise_var > 0:
            sigma2 = dsp.per_sample_noise_var(cfg.noise_var, rec_dt, cfg.bandwidth, cfg.filter_order)
            rec = np.stack([
                dsp.add_detector_noise(r.T, sigma2, np.random.default_rng(c[1])).T
                for r, c in zip(rec, (c for c, good in zip(ch, ok) if good))
            ])
        pts = dsp.retrodict_batch(rec[..., 0], rec[..., 1], rec_dt, res["record_t0"][ok], sched.t_d,
                                  omega_x, omega_y, res["trigger_delay"][ok], sched.fixed_delay, cfg)
        cols["u"].append(pts["u"])
        cols["u_dot"].append(pts["u_dot"])
        cols["true_u"].append(res["recapture_uv"][ok, 0])
        cols["true_u_dot"].append(res["recapture_uv"][ok, 2])
    arr = {k: (np.concatenate(v) if v else np.empty(0)) for k, v in cols.items()}
    n_ok = arr["u"].size
    noise = 0.0
    if cfg.noise_var > 0 and rec_len is not None:
        noise = dsp.ensemble_noise_floor([np.random.default_rng(c[2]) for c in children], rec_len,
                                         rec_dt, omega_x, omega_y, cfg)
    if n_ok >= 2:
        boot_rng = np.random.default_rng(np.random.SeedSequence([int(base_seed), int(td_index)]))
        ss = dsp.state_size(arr["u"], noise, cfg.bootstrap_n, boot_rng)
        raw, corr, err, clamped = ss.raw_var, ss.du**2, ss.err, ss.clamped
    else:
        raw = corr = err = math.nan
        clamped = False
    return EnsembleStats(float(t_d), arr["u"], arr["u_dot"], raw, noise, corr, clamped, err, n_ok,
                         excluded, optical.omega_u_eff, arr["true_u"], arr["true_u_dot"])


def run_ensemble(t_ds, n_shots, particle: ParticleParams, optical: OpticalTrap, paul: PaulTrap,
                 init: ThermalInit, schedule: ProtocolSchedule | None = None,
                 pipeline: dsp.PipelineConfig | None = None, base_seed=0, threads=1,
                 batch_size=500, shot_seeds=None) -> list[EnsembleStats]:
    """Simulate ``n_shots`` per dark time and pass them through the measurement pipeline.

    Escaped shots are excluded and counted, never fatal. ``shot_seeds``
    forces explicit per-shot seeds (same seeds for every dark time).
    """
    if n_shots < 2:
        raise ValueError("n_shots must be >= 2")
    if shot_seeds is not None and len(shot_seeds) != n_shots:
        raise ValueError("shot_seeds must have n_shots entries")
    template = schedule or ProtocolSchedule(t_d=0.0)
    cfg = pipeline or dsp.PipelineConfig()
    job = lambda it: _ensemble_point(it[0], it[1], n_shots, particle, optical, paul, init, template, cfg,
                                     base_seed, batch_size, shot_seeds)
    items = list(enumerate(t_ds))
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(job, items))
    return [job(it) for it in items]


def dark_phase_moments(t_stop, n_shots, particle: ParticleParams, paul: PaulTrap, cov0_uv=None,
                       seed=0, dt=None, record_every=1, phase=None):
    """Ensemble variance of u along the dark phase, without recapture or detection.

    ``cov0_uv`` is the 4x4 initial covariance over (u, v, u_dot, v_dot);
    None starts every shot at rest at the origin. ``phase`` overrides the RF
    phase at release; ``"random"`` draws it uniformly per shot. Returns
    (t, var_u).
    """
    if dt is None:
        dt_max = min(2 * math.pi / paul.Omega_rf, 2 * math.pi / paul.omega_p) / 200
        dt = t_stop / math.ceil(t_stop / dt_max)
    nsteps = int(round(t_stop / dt))
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_shots)]
    if isinstance(phase, str):
        if phase != "random":
            raise ValueError(f"unknown phase option {phase!r}")
        phase = np.array([[2 * math.pi * g.random()] for g in rngs])
    elif phase is None:
        phase = paul.rf_phase0
    if cov0_uv is None:
        x, v = np.zeros((n_shots, 2)), np.zeros((n_shots, 2))
    else:
        L = np.linalg.cholesky(np.asarray(cov0_uv) + 1e-300 * np.eye(4))
        s0 = np.stack([g.standard_normal(4) for g in rngs]) @ L.T
        x, v = s0[:, :2].copy(), s0[:, 2:].copy()
    kicks = _KickStream(rngs, math.sqrt(particle.kick_variance_rate * dt))
    n_rec = nsteps // record_every + 1
    var = np.empty(n_rec)
    var[0] = np.var(x[:, 0], ddof=1)

    def each(i, x, v):
        if i % record_every == 0:
            var[i // record_every] = np.var(x[:, 0], ddof=1)

    _run_phase(x, v, _paul_stiffness(paul, phase), 0.0, dt, nsteps, particle.gamma, kicks, each)
    return dt * record_every * np.arange(n_rec), var
