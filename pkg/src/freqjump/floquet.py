"""
Mathieu/Floquet machinery for the micromotion-resolved state-size model.

The homogeneous equation is

    d^2 u / d tau^2 + (a - 2 q cos 2 tau) u = 0,    tau = Omega t / 2 + phi0 / 2,

with phi0 the RF phase at release. Floquet solutions are written as

    lambda1(tau) = sum_n C_2n cos((2n + beta) tau)
    lambda2(tau) = sum_n C_2n sin((2n + beta) tau)

and the coefficients are normalised to sum_n C_2n = 1, so lambda1(0) = 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .phys import K_B


class Unstable(ValueError):
    """(a, q) lies outside the first Mathieu stability region."""


class NoConvergence(RuntimeError):
    pass


class QuadratureError(RuntimeError):
    pass


# --- characteristic exponent ----------------------------------------------

def monodromy_matrix(a, q, rtol=1e-13, atol=1e-15):
    """One-drive-period (tau in [0, pi]) transfer matrix of (u, du/dtau)."""

    def rhs(tau, y):
        return [y[1], -(a - 2.0 * q * math.cos(2.0 * tau)) * y[0]]

    M = np.empty((2, 2))
    for j, y0 in enumerate(([1.0, 0.0], [0.0, 1.0])):
        sol = solve_ivp(rhs, (0.0, math.pi), y0, method="DOP853", rtol=rtol, atol=atol)
        M[:, j] = sol.y[:, -1]
    return M


def monodromy_beta(a, q):
    """Characteristic exponent from the eigenvalue phase of the monodromy matrix."""
    half_trace = 0.5 * np.trace(monodromy_matrix(a, q))
    if abs(half_trace) >= 1.0:
        raise Unstable(f"|trace|/2 = {abs(half_trace):.6g} >= 1 for a={a}, q={q}")
    return math.acos(half_trace) / math.pi


def _tail_ratios(a, q, beta, depth, sign):
    """C_{2n}/C_{2n-2} (sign=+1) or C_{-2n}/C_{-2n+2} (sign=-1) for n = 1..depth."""
    ratios = np.zeros(depth + 2)
    for n in range(depth, 0, -1):
        D = a - (2 * sign * n + beta) ** 2
        ratios[n] = q / (D - q * ratios[n + 1])
    return ratios[1 : depth + 1]


def characteristic_function(beta, a, q, depth=40):
    """Central row of the recurrence; zero at the characteristic exponent."""
    if q == 0:
        return a - beta**2
    up = _tail_ratios(a, q, beta, depth, +1)[0]
    down = _tail_ratios(a, q, beta, depth, -1)[0]
    return a - beta**2 - q * (up + down)


def _beta_from_recurrence(a, q, tol, depth):
    f = lambda b: characteristic_function(b, a, q, depth)
    grid = np.linspace(1e-9, 1.0 - 1e-9, 801)
    vals = np.array([f(b) for b in grid])
    guess = math.sqrt(max(a + 0.5 * q * q, 0.0))
    roots = []
    for i in range(len(grid) - 1):
        lo, hi = vals[i], vals[i + 1]
        if not (np.isfinite(lo) and np.isfinite(hi)) or lo * hi > 0:
            continue
        mid = f(0.5 * (grid[i] + grid[i + 1]))
        if abs(mid) > max(abs(lo), abs(hi)):
            continue  # sign change across a pole
        roots.append(brentq(f, grid[i], grid[i + 1], xtol=tol, rtol=4 * np.finfo(float).eps))
    if not roots:
        raise NoConvergence(f"no root of the characteristic function for a={a}, q={q}")
    return min(roots, key=lambda b: abs(b - guess))


def characteristic_exponent(a, q, tol=1e-14, depth=40):
    """Characteristic exponent beta in (0, 1) of the Mathieu equation.

    The value comes from a root of the continued-fraction form of the
    three-term recurrence. Stability is decided on the monodromy trace.

    Raises
    ------
    Unstable
        If (a, q) is outside the first stability region.
    NoConvergence
        If the recurrence has no admissible root.
    """
    if q == 0:
        if not 0.0 < a < 1.0:
            raise Unstable(f"a={a} outside (0, 1) at q=0")
        return math.sqrt(a)
    half_trace = 0.5 * np.trace(monodromy_matrix(a, q, rtol=1e-10, atol=1e-12))
    if abs(half_trace) >= 1.0:
        raise Unstable(f"|trace|/2 = {abs(half_trace):.6g} >= 1 for a={a}, q={q}")
    beta = _beta_from_recurrence(a, q, tol, depth)
    if not 0.0 < beta < 1.0:
        raise Unstable(f"beta={beta} outside the first stability region")
    return beta


def q_for_beta(beta, a=0.0, depth=40):
    """Smallest q >= 0 giving characteristic exponent ``beta`` at fixed ``a``."""
    if not 0.0 < beta < 1.0:
        raise Unstable("beta must lie in (0, 1)")
    if beta * beta <= a:
        raise ValueError("beta^2 must exceed a for a real q")
    f = lambda q: characteristic_function(beta, a, q, depth)
    hi = 0.05
    while f(hi) < 0:
        hi *= 1.5
        if hi > 2.0:
            raise NoConvergence(f"no q found for beta={beta}, a={a}")
    return brentq(f, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)


# --- Floquet solutions ----------------------------------------------------

@dataclass(frozen=True, eq=False)
class FloquetSolution:
    """Truncated Floquet solution with coefficients C_2n for |n| <= n_max."""

    beta: float
    coeffs: np.ndarray
    n_max: int
    a: float = 0.0
    q: float = 0.0
    Omega_rf: float | None = None
    phase0: float = 0.0

    @property
    def orders(self):
        return 2.0 * np.arange(-self.n_max, self.n_max + 1) + self.beta

    @property
    def wronskian(self):
        return float(np.sum(self.orders * self.coeffs**2))

    def coeff(self, n):
        return float(self.coeffs[n + self.n_max]) if abs(n) <= self.n_max else 0.0

    # the only place where physical time becomes tau
    def tau(self, t):
        if self.Omega_rf is None:
            raise ValueError("FloquetSolution has no drive frequency attached")
        return 0.5 * self.Omega_rf * np.asarray(t, dtype=float) + 0.5 * self.phase0

    @property
    def tau0(self):
        return 0.5 * self.phase0

    @property
    def omega_p(self):
        return 0.5 * self.beta * self.Omega_rf

    def _series(self, tau, fn, power):
        tau = np.asarray(tau, dtype=float)
        k = self.orders
        return np.tensordot(fn(np.multiply.outer(tau, k)), self.coeffs * k**power, axes=1)

    def lambda1(self, tau):
        return self._series(tau, np.cos, 0)

    def lambda2(self, tau):
        return self._series(tau, np.sin, 0)

    def dlambda1(self, tau):
        return -self._series(tau, np.sin, 1)

    def dlambda2(self, tau):
        return self._series(tau, np.cos, 1)

    def ddlambda1(self, tau):
        return -self._series(tau, np.cos, 2)

    def ddlambda2(self, tau):
        return -self._series(tau, np.sin, 2)

    def green(self, tau, tau_prime):
        """g(tau, tau') = [lambda1(tau') lambda2(tau) - lambda1(tau) lambda2(tau')] / W."""
        return (
            self.lambda1(tau_prime) * self.lambda2(tau) - self.lambda1(tau) * self.lambda2(tau_prime)
        ) / self.wronskian

    def green_double_sum(self, tau, tau_prime):
        k, C = self.orders, self.coeffs
        arg = np.multiply.outer(np.asarray(tau, float), k)[..., :, None] - np.multiply.outer(
            np.asarray(tau_prime, float), k
        )[..., None, :]
        return np.einsum("...ij,i,j->...", np.sin(arg), C, C) / self.wronskian

    def residual(self, tau):
        """Mathieu residual lambda'' + (a - 2q cos 2tau) lambda for both solutions."""
        tau = np.asarray(tau, dtype=float)
        pot = self.a - 2.0 * self.q * np.cos(2.0 * tau)
        return (
            self.ddlambda1(tau) + pot * self.lambda1(tau),
            self.ddlambda2(tau) + pot * self.lambda2(tau),
        )

    def fundamental(self, tau):
        """[[l1, l2], [l1', l2']] at tau (tau-derivatives)."""
        return np.array(
            [[self.lambda1(tau), self.lambda2(tau)], [self.dlambda1(tau), self.dlambda2(tau)]]
        )

    def propagator(self, t):
        """Transfer matrix of physical (u, du/dt) from release to time(s) t.

        Returns an array of shape (..., 2, 2).
        """
        half = 0.5 * self.Omega_rf
        F0 = self.fundamental(self.tau0)
        F = self.fundamental(self.tau(t))
        F = np.moveaxis(F, (0, 1), (-2, -1))
        M_tau = F @ np.linalg.inv(F0)
        S = np.diag([1.0, half])
        return S @ M_tau @ np.diag([1.0, 1.0 / half])


def floquet_coefficients(a, q, beta, n_max, Omega_rf=None, phase0=0.0):
    """Coefficients C_2n of the truncated Floquet solution, normalised to sum 1.

    ``n_max = 1`` uses the closed form C_{+-2} = -q / (4 +- 4 beta) relative to
    C_0; larger truncations solve the recurrence by continued fractions with
    the tail set to zero beyond ``n_max``.
    """
    if n_max < 0:
        raise ValueError("n_max must be >= 0")
    C = np.zeros(2 * n_max + 1)
    C[n_max] = 1.0
    if n_max == 1:
        C[2] = -q / (4.0 + 4.0 * beta)
        C[0] = -q / (4.0 - 4.0 * beta)
    elif n_max >= 2 and q != 0:
        up = _tail_ratios(a, q, beta, n_max, +1)
        down = _tail_ratios(a, q, beta, n_max, -1)
        C[n_max + 1 :] = np.cumprod(up)
        C[: n_max][::-1] = np.cumprod(down)
        for tail in (C[-2:], C[:2][::-1]):
            if abs(tail[1]) >= abs(tail[0]) and tail[0] != 0:
                raise NoConvergence(f"recurrence tail not decaying at n_max={n_max}")
    total = C.sum()
    if total == 0:
        raise NoConvergence("coefficients sum to zero; normalisation impossible")
    return FloquetSolution(
        beta=float(beta), coeffs=C / total, n_max=int(n_max), a=float(a), q=float(q),
        Omega_rf=Omega_rf, phase0=float(phase0),
    )


def solution_for_trap(paul, n_max=5):
    """Floquet solution along u for a :class:`~freqjump.phys.PaulTrap`."""
    if paul.pseudo_potential:
        return floquet_coefficients(paul.beta**2, 0.0, paul.beta, 0, paul.Omega_rf, paul.rf_phase0)
    return floquet_coefficients(paul.a_u, paul.q_u, paul.beta, n_max, paul.Omega_rf, paul.rf_phase0)


# --- initial conditions ---------------------------------------------------

@dataclass(frozen=True)
class TildeState:
    """Amplitudes (u0~, v0~) with u(t) = u0~ lambda1 + (v0~ / omega_p) lambda2."""

    u0_tilde: float
    v0_tilde: float


def _tilde_map(sol):
    """Linear map from physical (u0, du/dt(0)) to (u0~, v0~)."""
    half = 0.5 * sol.Omega_rf
    A = np.linalg.inv(sol.fundamental(sol.tau0)) @ np.diag([1.0, 1.0 / half])
    return np.diag([1.0, sol.omega_p]) @ A


def to_tilde(u0, v0, sol):
    """Physical release state -> Floquet amplitudes, for any release phase.

    At zero release phase this is u0 = u0~ sum C_2n and
    v0 = v0~ sum (2n + beta) C_2n / beta.
    """
    T = _tilde_map(sol)
    return TildeState(T[0, 0] * u0 + T[0, 1] * v0, T[1, 0] * u0 + T[1, 1] * v0)


def tilde_covariance(cov0, sol):
    """Covariance of (u0~, v0~) given the 2x2 covariance of (u0, du/dt(0))."""
    T = _tilde_map(sol)
    return T @ np.asarray(cov0, dtype=float) @ T.T


# --- state-size model -----------------------------------------------------

def full_coherent_variance(t, du0_tilde, dv0_tilde, omega_o, sol, cov_tilde=0.0):
    """Coherent position variance with micromotion.

    du0_tilde^2 lambda1^2 + r^2 (dv0_tilde^2 / omega_o^2) lambda2^2, plus a
    cross term that only appears for release phases where the initial
    amplitudes are correlated.
    """
    tau = sol.tau(t)
    l1, l2 = sol.lambda1(tau), sol.lambda2(tau)
    r = omega_o / sol.omega_p
    return (
        du0_tilde**2 * l1**2
        + r**2 * dv0_tilde**2 / omega_o**2 * l2**2
        + 2.0 * cov_tilde / sol.omega_p * l1 * l2
    )


def coherent_variance_from_cov(t, cov0, sol):
    """Same quantity through the physical propagator: (M cov0 M^T)[0, 0]."""
    M = sol.propagator(t)
    P = M @ np.asarray(cov0, dtype=float) @ np.swapaxes(M, -1, -2)
    return P[..., 0, 0]


def _int_cos(w, lo, hi):
    """Integral of cos(w s) over [lo, hi] (w may be zero)."""
    d = hi - lo
    return d * np.cos(0.5 * w * (hi + lo)) * np.sinc(0.5 * w * d / np.pi)


def _int_sin(w, lo, hi):
    d = hi - lo
    return d * np.sin(0.5 * w * (hi + lo)) * np.sinc(0.5 * w * d / np.pi)


def _lambda_products(sol, tau):
    """Closed-form integrals J_ij = int_{tau0}^{tau} l_i l_j ds for an array of tau."""
    k, C = sol.orders, sol.coeffs
    CC = np.outer(C, C)
    wm = k[:, None] - k[None, :]
    wp = k[:, None] + k[None, :]
    lo = sol.tau0
    hi = np.asarray(tau, dtype=float)[..., None, None]
    cm, cp = _int_cos(wm, lo, hi), _int_cos(wp, lo, hi)
    sm, sp = _int_sin(wm, lo, hi), _int_sin(wp, lo, hi)
    J11 = 0.5 * np.sum(CC * (cm + cp), axis=(-2, -1))
    J22 = 0.5 * np.sum(CC * (cm - cp), axis=(-2, -1))
    # l1_n l2_m = cos(k_n s) sin(k_m s) = [sin((k_n+k_m)s) - sin((k_n-k_m)s)] / 2
    J12 = 0.5 * np.sum(CC * (sp - sm), axis=(-2, -1))
    return J11, J12, J22


def full_heating_variance(t, gamma, T_bath, mass, omega_o, sol, method="closed", tol=1e-4):
    """Heating contribution with micromotion.

    r^2 (2 gamma k_B T / m omega_o^2) int_0^t G(t, t')^2 dt', where G is the
    Green's function scaled to unit secular frequency, beta * g(tau, tau').

    ``method="closed"`` integrates the products of Floquet series exactly;
    ``method="quadrature"`` uses Richardson-extrapolated trapezoid sums with
    step <= T_rf / 50.
    """
    t = np.asarray(t, dtype=float)
    r = omega_o / sol.omega_p
    pref = r**2 * 2.0 * gamma * K_B * T_bath / (mass * omega_o**2)
    if pref == 0:
        return np.zeros_like(t)
    if method == "closed":
        integral = _green_sq_integral_closed(t, sol)
    elif method == "quadrature":
        integral = np.array([_green_sq_integral_quad(ti, sol, tol) for ti in t.ravel()])
        integral = integral.reshape(t.shape)
    else:
        raise ValueError(f"unknown method {method!r}")
    return pref * sol.beta**2 * integral


def _green_sq_integral_closed(t, sol):
    """int_0^t g(tau(t), tau(t'))^2 dt'."""
    tau = sol.tau(t)
    J11, J12, J22 = _lambda_products(sol, tau)
    l1, l2 = sol.lambda1(tau), sol.lambda2(tau)
    val = (l2**2 * J11 - 2.0 * l1 * l2 * J12 + l1**2 * J22) / sol.wronskian**2
    return np.maximum(val, 0.0) * 2.0 / sol.Omega_rf


def _green_sq_integral_quad(t, sol, tol, max_refine=6):
    if t <= 0:
        return 0.0
    T_rf = 2.0 * math.pi / sol.Omega_rf
    n = 2 * math.ceil(t / (T_rf / 50.0) / 2.0)
    tau_t = sol.tau(t)
    scale = t * (1.0 / sol.beta**2)  # integrand ~ sin^2 / beta^2, mean 1/(2 beta^2)
    for _ in range(max_refine):
        tp = np.linspace(0.0, t, n + 1)
        f = sol.green(tau_t, sol.tau(tp)) ** 2
        h = t / n
        fine = h * (f.sum() - 0.5 * (f[0] + f[-1]))
        coarse = 2 * h * (f[::2].sum() - 0.5 * (f[0] + f[-1]))
        err = abs(fine - coarse) / 3.0
        if err <= tol * scale:
            return fine + (fine - coarse) / 3.0
        n *= 2
    raise QuadratureError(f"trapezoid refinement did not reach tol={tol} at t={t}")
