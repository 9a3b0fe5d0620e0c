"""
Experiment configuration: JSON in, validated dataclasses out, SI units only.

Unknown keys and wrong types are rejected with the line of the offending key.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import re
from dataclasses import dataclass, field

from . import phys
from .analytic import ThermalInit
from .dsp import PipelineConfig
from .dynamics import ProtocolSchedule


class ConfigError(ValueError):
    def __init__(self, msg, line=None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line else msg)


@dataclass
class ParticleBlock:
    diameter: float = phys.REPORTED_DIAMETER
    density: float = phys.SILICA_DENSITY
    n_e: int = 500
    T_bath: float = 293.0
    # exactly one of gamma (1/s) and Gamma_heat (1/s, phonons of the optical trap) is set
    gamma: float | None = None
    Gamma_heat: float | None = phys.REPORTED_GAMMA_HEAT


@dataclass
class OpticalBlock:
    omega_x: float = phys.REPORTED_OMEGA_X
    omega_y: float = phys.REPORTED_OMEGA_Y


@dataclass
class PaulBlock:
    Omega_rf: float = phys.REPORTED_OMEGA_RF
    a_u: float = 0.0
    # exactly one of q_u, r, omega_p fixes the RF strength
    q_u: float | None = None
    r: float | None = 14.5
    omega_p: float | None = None
    rf_phase0: float = phys.REPORTED_RF_PHASE0
    a_v: float | None = None
    q_v: float | None = None
    pseudo_potential: bool = False


@dataclass
class InitialBlock:
    T_x: float = phys.REPORTED_T_COM
    T_y: float = 0.0


@dataclass
class SweepBlock:
    t_d_start: float = 0.0
    t_d_stop: float = 300e-6
    t_d_step: float = 10e-6

    def values(self):
        if not self.t_d_step > 0 or self.t_d_stop < self.t_d_start:
            raise ConfigError("sweep needs t_d_step > 0 and t_d_stop >= t_d_start")
        n = int(math.floor((self.t_d_stop - self.t_d_start) / self.t_d_step + 1e-9)) + 1
        return [self.t_d_start + i * self.t_d_step for i in range(n)]


@dataclass
class ProtocolBlock:
    t_pre: float = 0.0
    t_post: float = 1.15e-3
    trigger_jitter: float = 2e-6
    fixed_delay: float = 1.5e-6
    randomize_rf_phase: bool = False
    escape_radius: float = 300e-9
    record_every: int = 4
    steps_per_period: int = 200


@dataclass
class PipelineBlock:
    bandwidth: float = 2e3
    discard: float = 120e-6
    window: float = 1e-3
    noise_var: float = 2.5e-18
    bootstrap_n: int = 1000
    filter_order: int = 3
    track_frequency: bool = True
    correct_delays: bool = True


@dataclass
class ModelsBlock:
    simple: bool = True
    full: bool = True
    montecarlo: bool = True


@dataclass
class ExperimentConfig:
    particle: ParticleBlock = field(default_factory=ParticleBlock)
    optical: OpticalBlock = field(default_factory=OpticalBlock)
    paul: PaulBlock = field(default_factory=PaulBlock)
    initial: InitialBlock = field(default_factory=InitialBlock)
    sweep: SweepBlock = field(default_factory=SweepBlock)
    protocol: ProtocolBlock = field(default_factory=ProtocolBlock)
    pipeline: PipelineBlock = field(default_factory=PipelineBlock)
    models: ModelsBlock = field(default_factory=ModelsBlock)
    n_shots: int = 500
    base_seed: int = 0
    n_max: int = 5

    # --- serialisation ---

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def hash(self):
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    @classmethod
    def from_json(cls, text):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(exc.msg, exc.lineno) from None
        cfg = _build(cls, data, text, ())
        cfg.validate(text)
        return cfg

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(fh.read())

    # --- physics objects ---

    def validate(self, text=""):
        p = self.particle
        if (p.gamma is None) == (p.Gamma_heat is None):
            raise ConfigError("particle: set exactly one of gamma and Gamma_heat",
                              _line_of(text, ("particle",)))
        k = self.paul
        if sum(v is not None for v in (k.q_u, k.r, k.omega_p)) != 1:
            raise ConfigError("paul: set exactly one of q_u, r, omega_p", _line_of(text, ("paul",)))
        if self.n_shots < 2:
            raise ConfigError("n_shots must be >= 2", _line_of(text, ("n_shots",)))
        if self.base_seed < 0:
            raise ConfigError("base_seed must be >= 0", _line_of(text, ("base_seed",)))
        try:
            self.build()
            self.sweep.values()
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def build(self):
        """(particle, optical, paul, init, schedule template, pipeline)."""
        optical = phys.OpticalTrap(self.optical.omega_x, self.optical.omega_y)
        p = self.particle
        kw = dict(diameter=p.diameter, density=p.density, n_e=p.n_e, T_bath=p.T_bath)
        if p.gamma is not None:
            particle = phys.ParticleParams(gamma=p.gamma, **kw)
        else:
            particle = phys.ParticleParams.from_heating_rate(p.Gamma_heat, optical.omega_u_eff, **kw)
        k = self.paul
        kw = dict(rf_phase0=k.rf_phase0, a_v=k.a_v, q_v=k.q_v, pseudo_potential=k.pseudo_potential)
        if k.q_u is not None:
            paul = phys.PaulTrap(k.Omega_rf, a_u=k.a_u, q_u=k.q_u, **kw)
        elif k.r is not None:
            paul = phys.PaulTrap.from_ratio(k.r, optical, k.Omega_rf, a_u=k.a_u, **kw)
        else:
            paul = phys.PaulTrap.from_secular(k.omega_p, k.Omega_rf, a_u=k.a_u, **kw)
        init = ThermalInit(particle.mass, optical, self.initial.T_x, self.initial.T_y)
        sched = ProtocolSchedule(t_d=0.0, **dataclasses.asdict(self.protocol))
        pipe = PipelineConfig(**dataclasses.asdict(self.pipeline))
        return particle, optical, paul, init, sched, pipe


def _line_of(text, path):
    """Line of the last key in ``path``, searched in nesting order; None if absent."""
    pos = 0
    for key in path:
        m = re.compile(r'"%s"\s*:' % re.escape(str(key))).search(text, pos)
        if m is None:
            return None
        pos = m.start()
    return text.count("\n", 0, pos) + 1 if path else None


def _check_type(value, tp, text, path):
    name = ".".join(path)
    tp = str(tp)
    optional = "None" in tp
    if value is None:
        if optional:
            return None
        raise ConfigError(f"{name} must not be null", _line_of(text, path))
    if "bool" in tp:
        if not isinstance(value, bool):
            raise ConfigError(f"{name} must be true or false", _line_of(text, path))
        return value
    if "int" in tp:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name} must be an integer", _line_of(text, path))
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name} must be a number", _line_of(text, path))
    return float(value)


def _build(cls, data, text, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{'.'.join(path) or 'config'} must be an object", _line_of(text, path))
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = [k for k in data if k not in fields]
    if unknown:
        raise ConfigError(f"unknown key '{'.'.join(path + (unknown[0],))}'", _line_of(text, path + (unknown[0],)))
    kwargs = {}
    for name, value in data.items():
        f = fields[name]
        sub = f.default_factory if f.default_factory is not dataclasses.MISSING else None
        if sub is not None and dataclasses.is_dataclass(sub):
            kwargs[name] = _build(sub, value, text, path + (name,))
        else:
            kwargs[name] = _check_type(value, f.type, text, path + (name,))
    return cls(**kwargs)
