"""
Physical constants, parameter containers and unit helpers.

Everything inside the package is SI. Nanometres and microseconds appear only
at reporting boundaries, through the converters at the bottom of this module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import constants as _sc

# CODATA values shipped with scipy
K_B = _sc.k
HBAR = _sc.hbar
E_CHARGE = _sc.e


@dataclass(frozen=True)
class PhysicalConstants:
    k_B: float = K_B
    hbar: float = HBAR


CONSTANTS = PhysicalConstants()

SILICA_DENSITY = 1850.0  # kg/m^3, typical for Stober silica nanospheres


@dataclass(frozen=True)
class ParticleParams:
    """Levitated sphere and its gas bath.

    ``gamma`` is the primary damping parameter. The heating rate in phonons of
    the optical potential, Gamma = gamma k_B T / (hbar omega_o), is derived from
    it on demand unless ``Gamma_heat`` is given explicitly.
    """

    diameter: float
    density: float = SILICA_DENSITY
    n_e: int = 500
    gamma: float = 0.0
    T_bath: float = 293.0
    Gamma_heat: float | None = None
    mass: float = field(init=False)

    def __post_init__(self):
        if not (self.diameter > 0 and self.density > 0):
            raise ValueError("diameter and density must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if not self.T_bath > 0:
            raise ValueError("T_bath must be > 0")
        if int(self.n_e) != self.n_e or self.n_e < 1:
            raise ValueError("n_e must be a positive integer")
        object.__setattr__(self, "mass", self.density * math.pi / 6.0 * self.diameter**3)

    @classmethod
    def from_heating_rate(cls, Gamma, omega_o, diameter, T_bath=293.0, **kw):
        """Build a particle whose gas damping reproduces heating rate ``Gamma``."""
        gamma = HBAR * omega_o * Gamma / (K_B * T_bath)
        return cls(diameter=diameter, gamma=gamma, T_bath=T_bath, **kw)

    def heating_rate(self, omega_o: float) -> float:
        if self.Gamma_heat is not None:
            return self.Gamma_heat
        return self.gamma * K_B * self.T_bath / (HBAR * omega_o)

    @property
    def kick_variance_rate(self) -> float:
        """Velocity diffusion 2 gamma k_B T / m (m^2/s^3)."""
        return 2.0 * self.gamma * K_B * self.T_bath / self.mass


@dataclass(frozen=True)
class OpticalTrap:
    omega_x: float
    omega_y: float
    omega_u_eff: float = field(init=False)

    def __post_init__(self):
        if not (self.omega_x > 0 and self.omega_y > 0):
            raise ValueError("optical frequencies must be positive")
        object.__setattr__(
            self, "omega_u_eff", math.sqrt((self.omega_x**2 + self.omega_y**2) / 2.0)
        )


@dataclass(frozen=True)
class PaulTrap:
    """Linear Paul trap described by its Mathieu parameters along u.

    The v axis defaults to (a_u, -q_u): the two RF electrode pairs are driven
    in antiphase. With ``pseudo_potential`` set, simulators replace the RF
    drive by a static harmonic potential at the same secular frequency.
    """

    Omega_rf: float
    a_u: float = 0.0
    q_u: float = 0.0
    rf_phase0: float = 0.0
    a_v: float | None = None
    q_v: float | None = None
    pseudo_potential: bool = False
    beta: float = field(init=False)
    omega_p: float = field(init=False)

    def __post_init__(self):
        if not self.Omega_rf > 0:
            raise ValueError("Omega_rf must be positive")
        if self.a_v is None:
            object.__setattr__(self, "a_v", self.a_u)
        if self.q_v is None:
            object.__setattr__(self, "q_v", -self.q_u)
        from .floquet import characteristic_exponent

        beta = characteristic_exponent(self.a_u, self.q_u)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "omega_p", beta * self.Omega_rf / 2.0)

    @classmethod
    def from_secular(cls, omega_p, Omega_rf, a_u=0.0, **kw):
        """Solve for q_u >= 0 such that the secular frequency is ``omega_p``."""
        from .floquet import q_for_beta

        q = q_for_beta(2.0 * omega_p / Omega_rf, a_u)
        return cls(Omega_rf=Omega_rf, a_u=a_u, q_u=q, **kw)

    @classmethod
    def from_ratio(cls, r, optical: OpticalTrap, Omega_rf, a_u=0.0, **kw):
        return cls.from_secular(optical.omega_u_eff / r, Omega_rf, a_u=a_u, **kw)

    def with_phase(self, rf_phase0):
        return replace(self, rf_phase0=rf_phase0)


def frequency_ratio(optical: OpticalTrap, paul: PaulTrap) -> float:
    """r = omega_u_eff / omega_p; always from the effective optical frequency."""
    return optical.omega_u_eff / paul.omega_p


def derive_mathieu_params(n_e, mass, Omega_rf, d2phi_dc, d2phi_rf):
    """Mathieu (a_u, q_u) from the DC and RF potential curvatures along u.

    Parameters
    ----------
    n_e : int
        Number of elementary charges on the particle.
    mass : float
        Particle mass (kg).
    Omega_rf : float
        RF drive angular frequency (rad/s).
    d2phi_dc, d2phi_rf : float
        Second derivatives of the DC and RF potentials (V/m^2).
    """
    if not (mass > 0 and Omega_rf > 0):
        raise ValueError("mass and Omega_rf must be positive")
    if not (math.isfinite(d2phi_dc) and math.isfinite(d2phi_rf)):
        raise ValueError("potential curvatures must be finite")
    scale = n_e * E_CHARGE / (mass * Omega_rf**2)
    return 4.0 * scale * d2phi_dc, 2.0 * scale * d2phi_rf


# Operating point of the experiment
REPORTED_DIAMETER = 177e-9
REPORTED_OMEGA_X = 2 * math.pi * 44e3
REPORTED_OMEGA_Y = 2 * math.pi * 58e3
REPORTED_OMEGA_RF = 2 * math.pi * 33e3
REPORTED_OMEGA_P = 2 * math.pi * 6e3
REPORTED_GAMMA_HEAT = 2 * math.pi * 926e3
REPORTED_T_COM = 0.155
REPORTED_RATIOS = (8.8, 14.5, 24.3)
# Release at the confining extreme of the u-axis RF cycle; see README.
REPORTED_RF_PHASE0 = math.pi


def reported_params(density=SILICA_DENSITY, T_bath=293.0, n_e=500):
    """Particle, optical trap and Paul trap at the reported operating point.

    The Paul trap is set to the 2 pi x 6 kHz secular frequency quoted for the
    setup; use :meth:`PaulTrap.from_ratio` for the individual r datasets.
    """
    optical = OpticalTrap(REPORTED_OMEGA_X, REPORTED_OMEGA_Y)
    particle = ParticleParams.from_heating_rate(
        REPORTED_GAMMA_HEAT,
        optical.omega_u_eff,
        diameter=REPORTED_DIAMETER,
        T_bath=T_bath,
        density=density,
        n_e=n_e,
    )
    paul = PaulTrap.from_secular(REPORTED_OMEGA_P, REPORTED_OMEGA_RF, rf_phase0=REPORTED_RF_PHASE0)
    return particle, optical, paul


# --- unit conversion -------------------------------------------------------

def _scale_up(x, scale):
    """x * scale, nudged by a few ulps so that result / scale == x where possible.

    With this choice to_nm(from_nm(y)) == y for ordinary doubles y.
    """
    x = np.asarray(x, dtype=float)
    y0 = x * scale
    best = y0.copy()
    found = y0 / scale == x
    for k in range(1, 4):
        for direction in (np.inf, -np.inf):
            cand = y0
            for _ in range(k):
                cand = np.nextafter(cand, direction)
            hit = ~found & (cand / scale == x)
            best = np.where(hit, cand, best)
            found |= hit
    return best if best.ndim else float(best)


def to_nm(x):
    return _scale_up(x, 1e9)


def from_nm(x):
    y = np.asarray(x, dtype=float) / 1e9
    return y if y.ndim else float(y)


def to_us(t):
    return _scale_up(t, 1e6)


def from_us(t):
    y = np.asarray(t, dtype=float) / 1e6
    return y if y.ndim else float(y)
