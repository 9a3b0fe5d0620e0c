"""
Closed-form state-size predictions for the frequency-jump protocol.

Variances are the currency throughout; take square roots only when reporting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .phys import HBAR, K_B, OpticalTrap, PaulTrap, ParticleParams, frequency_ratio

_SQ2 = math.sqrt(0.5)
# (x, y) = R (u, v) for positions and, separately, for velocities
XY_FROM_UV = np.array([[_SQ2, _SQ2], [_SQ2, -_SQ2]])
UV_FROM_XY = XY_FROM_UV.T  # symmetric orthogonal, its own inverse


@dataclass(frozen=True)
class GaussianState4:
    """Mean and covariance over (u, v, u_dot, v_dot) or (x, y, x_dot, y_dot)."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape != (4, 4) or not np.allclose(cov, cov.T, rtol=1e-12, atol=0):
            raise ValueError("cov must be a symmetric 4x4 matrix")
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float).reshape(4))

    @property
    def position_cov(self):
        return self.cov[:2, :2]

    @property
    def velocity_cov(self):
        return self.cov[2:, 2:]


@dataclass(frozen=True)
class ThermalInit:
    """Product thermal state of the x and y optical modes.

    Pass ``T_x`` alone for a single centre-of-mass temperature on both axes.
    """

    mass: float
    optical: OpticalTrap
    T_x: float
    T_y: float | None = None
    du0: float = field(init=False)
    dv0: float = field(init=False)

    def __post_init__(self):
        if self.T_y is None:
            object.__setattr__(self, "T_y", self.T_x)
        if self.T_x < 0 or self.T_y < 0:
            raise ValueError("temperatures must be >= 0")
        wx, wy = self.optical.omega_x, self.optical.omega_y
        pref = K_B / (2.0 * self.mass)
        object.__setattr__(self, "du0", math.sqrt(pref * (self.T_x / wx**2 + self.T_y / wy**2)))
        object.__setattr__(self, "dv0", math.sqrt(pref * (self.T_x + self.T_y)))

    @property
    def xy_cov(self):
        """Diagonal 4x4 covariance in the optical-mode basis."""
        wx, wy = self.optical.omega_x, self.optical.omega_y
        kx, ky = K_B * self.T_x / self.mass, K_B * self.T_y / self.mass
        return np.diag([kx / wx**2, ky / wy**2, kx, ky])

    def uv_state(self) -> GaussianState4:
        return rotate_covariance_45(self.T_x, self.T_y, self.optical.omega_x, self.optical.omega_y, self.mass)

    @property
    def velocity_ratio(self):
        """du_dot0 / (omega_u_eff du0); 1 for an isotropic oscillator."""
        return self.dv0 / (self.optical.omega_u_eff * self.du0)


def rotate_covariance_45(T_x, T_y, omega_x, omega_y, mass) -> GaussianState4:
    """Thermal xy product state expressed in the 45-degree uv basis."""
    if min(omega_x, omega_y, mass) <= 0 or min(T_x, T_y) < 0:
        raise ValueError("frequencies and mass must be positive, temperatures >= 0")
    pref = K_B / (2.0 * mass)
    qs, qd = T_x / omega_x**2 + T_y / omega_y**2, T_x / omega_x**2 - T_y / omega_y**2
    ps, pd = T_x + T_y, T_x - T_y
    cov = np.zeros((4, 4))
    cov[:2, :2] = pref * np.array([[qs, qd], [qd, qs]])
    cov[2:, 2:] = pref * np.array([[ps, pd], [pd, ps]])
    return GaussianState4(np.zeros(4), cov)


def coherent_variance(t, du0, dv0, omega_o, omega_p):
    """du0^2 cos^2(omega_p t) + r^2 (dv0 / omega_o)^2 sin^2(omega_p t)."""
    if not omega_p > 0:
        raise ValueError("omega_p must be positive")
    r = omega_o / omega_p
    ph = omega_p * np.asarray(t, dtype=float)
    return du0**2 * np.cos(ph) ** 2 + r**2 * (dv0 / omega_o) ** 2 * np.sin(ph) ** 2


def heating_variance(t, r, Gamma, mass, omega_o, omega_p):
    """r^2 (hbar Gamma / m omega_o) (t - sin(2 omega_p t) / 2 omega_p)."""
    t = np.asarray(t, dtype=float)
    x = 2.0 * omega_p * t
    # t - sin(x)/(2 omega_p) = t (1 - sin(x)/x), series below x ~ 1e-3 to avoid cancellation
    small = np.abs(x) < 1e-3
    xs = np.where(small, 1.0, x)
    shape = np.where(small, x**2 / 6.0 - x**4 / 120.0, 1.0 - np.sin(xs) / xs)
    return r**2 * HBAR * Gamma / (mass * omega_o) * t * shape


def total_variance_simple(t, init: ThermalInit, particle: ParticleParams, paul: PaulTrap):
    """Simplified (pseudo-potential) model: coherent plus heating variance."""
    omega_o = init.optical.omega_u_eff
    r = frequency_ratio(init.optical, paul)
    Gamma = particle.heating_rate(omega_o)
    return coherent_variance(t, init.du0, init.dv0, omega_o, paul.omega_p) + heating_variance(
        t, r, Gamma, particle.mass, omega_o, paul.omega_p
    )


def compression_variance(init: ThermalInit, particle: ParticleParams, paul: PaulTrap):
    """du0^2 + r^2 (hbar Gamma / m omega_o) T_p / 2, the size at half a secular period."""
    omega_o = init.optical.omega_u_eff
    r = frequency_ratio(init.optical, paul)
    T_p = 2.0 * math.pi / paul.omega_p
    return init.du0**2 + r**2 * HBAR * particle.heating_rate(omega_o) / (particle.mass * omega_o) * T_p / 2.0
