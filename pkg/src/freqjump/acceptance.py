"""
Acceptance checks with fixed tolerances and runtime budgets.

Each check returns a :class:`CheckResult`; :func:`run_all` prints one line per
check. Used by ``freqjump verify`` and by the test suite.
"""

from __future__ import annotations

import dataclasses
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from . import analytic, dsp, dynamics, floquet, phys
from .analytic import ThermalInit

R_LOW, R_MID, R_HIGH = phys.REPORTED_RATIOS


@dataclass
class CheckResult:
    key: str
    name: str
    value: float
    tolerance: str
    passed: bool
    runtime: float
    budget: float | None
    detail: str = ""

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        budget = f"/{self.budget:.0f}s" if self.budget else ""
        return (f"{status}  [{self.key}] {self.name}: value={self.value:.6g} ({self.tolerance}) "
                f"t={self.runtime:.1f}s{budget}" + (f"  {self.detail}" if self.detail else ""))


def _timed(key, name, budget):
    def wrap(fn):
        def run(*args, **kw):
            t0 = time.perf_counter()
            value, tol, ok, detail = fn(*args, **kw)
            dt = time.perf_counter() - t0
            within = budget is None or dt < budget
            if not within:
                detail = (detail + "; " if detail else "") + "over runtime budget"
            return CheckResult(key, name, value, tol, bool(ok and within), dt, budget, detail)

        run.__name__ = fn.__name__
        run.__doc__ = fn.__doc__
        return run

    return wrap


def operating_point(r, rf_phase0=phys.REPORTED_RF_PHASE0, gamma=None, pseudo_potential=False):
    """Particle, optical trap, Paul trap and initial state for one ratio r."""
    particle, optical, _ = phys.reported_params()
    if gamma is not None:
        particle = dataclasses.replace(particle, gamma=gamma)
    paul = phys.PaulTrap.from_ratio(r, optical, phys.REPORTED_OMEGA_RF, rf_phase0=rf_phase0,
                                    pseudo_potential=pseudo_potential)
    init = ThermalInit(particle.mass, optical, phys.REPORTED_T_COM, 0.0)
    return particle, optical, paul, init


def _uv_cov2(init):
    return init.uv_state().cov[np.ix_([0, 2], [0, 2])]


def _full_variance(t, particle, optical, paul, init, n_max=5):
    sol = floquet.solution_for_trap(paul, n_max)
    coh = floquet.coherent_variance_from_cov(t, _uv_cov2(init), sol)
    heat = floquet.full_heating_variance(t, particle.gamma, particle.T_bath, particle.mass,
                                         optical.omega_u_eff, sol)
    return coh + heat


# --- 1 ------------------------------------------------------------------------

@_timed("1", "pseudo-potential limit of the full model", 1.0)
def check_pseudo_potential_limit():
    """q_u = 0: Floquet model equals the simplified model over two secular periods."""
    particle, optical, paul6, _ = operating_point(R_MID)
    init = ThermalInit(particle.mass, optical, phys.REPORTED_T_COM)
    beta = paul6.beta
    paul = phys.PaulTrap(phys.REPORTED_OMEGA_RF, a_u=beta**2, q_u=0.0)
    sol = floquet.solution_for_trap(paul)
    omega_o = optical.omega_u_eff
    t = np.linspace(0.0, 2 * 2 * math.pi / paul.omega_p, 801)
    tl = floquet.to_tilde(1.0, 0.0, sol), floquet.to_tilde(0.0, 1.0, sol)
    du_t = init.du0 * tl[0].u0_tilde
    dv_t = init.dv0 * tl[1].v0_tilde
    full_c = floquet.full_coherent_variance(t, du_t, dv_t, omega_o, sol)
    full_h = floquet.full_heating_variance(t, particle.gamma, particle.T_bath, particle.mass, omega_o, sol)
    simp_c = analytic.coherent_variance(t, init.du0, init.dv0, omega_o, paul.omega_p)
    r = omega_o / paul.omega_p
    simp_h = analytic.heating_variance(t, r, particle.heating_rate(omega_o), particle.mass, omega_o, paul.omega_p)
    mask = t > 0
    err_c = np.max(np.abs(full_c - simp_c) / simp_c)
    err_h = np.max(np.abs(full_h[mask] - simp_h[mask]) / simp_h[mask])
    err = max(err_c, err_h)
    return err, "< 1e-10 relative", err < 1e-10, f"coherent {err_c:.2e}, heating {err_h:.2e}"


# --- 2 ------------------------------------------------------------------------

@_timed("2", "Mathieu residual, Wronskian and beta", 5.0)
def check_mathieu(transform=None):
    """Residual and Wronskian of the truncated series, beta against the monodromy matrix.

    ``transform`` maps each FloquetSolution before checking (used to show
    that a corrupted coefficient is caught).
    """
    worst = {"residual": 0.0, "wronskian": 0.0, "beta": 0.0}
    for r in phys.REPORTED_RATIOS:
        _, _, paul, _ = operating_point(r)
        sol = floquet.solution_for_trap(paul)
        if transform is not None:
            sol = transform(sol)
        tau = np.linspace(0.0, 4 * math.pi, 4001)
        l1, l2 = sol.lambda1(tau), sol.lambda2(tau)
        scale = max(np.max(np.abs(l1)), np.max(np.abs(l2)))
        r1, r2 = sol.residual(tau)
        worst["residual"] = max(worst["residual"], max(np.max(np.abs(r1)), np.max(np.abs(r2))) / scale)
        W = l1 * sol.dlambda2(tau) - l2 * sol.dlambda1(tau)
        worst["wronskian"] = max(worst["wronskian"], np.max(np.abs(W - W[0])) / abs(W[0]))
        worst["beta"] = max(worst["beta"], abs(sol.beta - floquet.monodromy_beta(paul.a_u, paul.q_u)))
    value = max(worst.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    return value, "each < 1e-8", value < 1e-8, detail


# --- 3 ------------------------------------------------------------------------

@_timed("3", "Monte Carlo vs coherent Floquet model", 120.0)
def check_montecarlo_coherent(n_shots=2000, n_points=16, base_seed=3, threads=4):
    particle, optical, paul, init = operating_point(R_LOW, gamma=0.0)
    T_p = 2 * math.pi / paul.omega_p
    t_d = np.linspace(0.0, T_p, n_points)
    stats = dynamics.run_ensemble(t_d, n_shots, particle, optical, paul, init,
                                  pipeline=dsp.PipelineConfig(noise_var=0.0),
                                  base_seed=base_seed, threads=threads)
    pred = np.sqrt(_full_variance(t_d, particle, optical, paul, init))
    du = np.array([s.du for s in stats])
    rel = np.abs(du / pred - 1.0)
    tol = 4.0 / math.sqrt(2 * n_shots)
    worst = int(np.argmax(rel))
    return (float(rel.max()), f"< {tol:.4f} = 4/sqrt(2n)", rel.max() < tol,
            f"worst at t_d={t_d[worst] * 1e6:.1f} us")


# --- 4 ------------------------------------------------------------------------

def _eq4(particle, optical, paul, init):
    omega_o = optical.omega_u_eff
    r = omega_o / paul.omega_p
    T_p = 2 * math.pi / paul.omega_p
    Gamma = particle.heating_rate(omega_o)
    return math.sqrt(init.du0**2 + r**2 * phys.HBAR * Gamma / (particle.mass * omega_o) * T_p / 2)


def heating_slope(r, n_shots=10000, seed=11, pseudo_potential=True):
    """Secular growth rate of var(u) in the dark, from rest, by Monte Carlo.

    Means over the first and second secular periods are differenced, which
    cancels the oscillating terms of whole periods.
    """
    particle, _, paul, _ = operating_point(r, pseudo_potential=pseudo_potential)
    T_p = 2 * math.pi / paul.omega_p
    t, var = dynamics.dark_phase_moments(2 * T_p, n_shots, particle, paul, seed=seed)
    half = (len(t) - 1) // 2
    return (var[half:-1].mean() - var[:half].mean()) / (t[half] - t[0])


def driven_slope_ratio(r_low=8.8, r_high=24.3, periods=30):
    """Closed-form secular heating slope ratio in the driven Paul trap, over (r_high/r_low)^2."""
    out = []
    for r in (r_low, r_high):
        particle, optical, paul, _ = operating_point(r)
        sol = floquet.solution_for_trap(paul)
        T_p = 2 * math.pi / paul.omega_p
        t = np.linspace(0.0, periods * T_p, 400 * periods, endpoint=False)
        h = floquet.full_heating_variance(t, particle.gamma, particle.T_bath, particle.mass,
                                          optical.omega_u_eff, sol).reshape(periods, 400).mean(axis=1)
        out.append((h[-1] - h[1]) / ((periods - 2) * T_p))
    return out[1] / out[0] / (r_high / r_low) ** 2


@_timed("4", "heating law at half a secular period", 180.0)
def check_heating_law(n_shots=2000, base_seed=4, Gamma_scale=1.0):
    """Monte Carlo in the pseudo-potential trap against the compression formula.

    ``Gamma_scale`` perturbs the heating rate in the prediction only.
    """
    particle, optical, paul, init = operating_point(R_MID, pseudo_potential=True)
    model = dataclasses.replace(particle, gamma=particle.gamma * Gamma_scale)
    pred = _eq4(model, optical, paul, init)
    closed = math.sqrt(analytic.compression_variance(init, model, paul))
    T_p = 2 * math.pi / paul.omega_p
    st, = dynamics.run_ensemble([T_p / 2], n_shots, particle, optical, paul, init, base_seed=base_seed)
    z = abs(st.du - pred) / st.bootstrap_err
    ratio = heating_slope(R_HIGH) / heating_slope(R_LOW)
    expected = (R_HIGH / R_LOW) ** 2
    slope_err = abs(ratio / expected - 1.0)
    ok = z <= 3.0 and slope_err < 0.10 and abs(closed / pred - 1.0) < 1e-12
    return (z, "MC within 3 sigma; slope ratio within 10%", ok,
            f"du_mc={st.du * 1e9:.3f}+-{st.bootstrap_err * 1e9:.3f} nm, eq4={pred * 1e9:.3f} nm, "
            f"slope ratio {ratio:.3f} vs {expected:.3f} ({slope_err:.1%}); "
            f"driven trap ratio/r^2 = {driven_slope_ratio():.3f}")


# --- 5 ------------------------------------------------------------------------

@_timed("5", "expansion factor at r = 24.3", 120.0)
def check_expansion_factor(n_shots=500, base_seed=5, threads=4):
    particle, optical, paul, init = operating_point(R_HIGH)
    T_p = 2 * math.pi / paul.omega_p
    t_d = np.concatenate([[0.0], np.linspace(0.15, 0.35, 9) * T_p])
    stats = dynamics.run_ensemble(t_d, n_shots, particle, optical, paul, init, base_seed=base_seed,
                                  threads=threads)
    du = np.array([s.du for s in stats])
    factor = du[1:].max() / du[0]
    return factor, ">= 20", factor >= 20.0, f"du0={du[0] * 1e9:.3f} nm, peak={du[1:].max() * 1e9:.2f} nm"


# --- 6 ------------------------------------------------------------------------

@_timed("6", "micromotion enhancement of the peak size at r = 8.8", 1.0)
def check_micromotion_band():
    particle, optical, paul, init = operating_point(R_LOW)
    T_p = 2 * math.pi / paul.omega_p
    t = np.linspace(0.0, T_p, 4001)
    full = np.sqrt(_full_variance(t, particle, optical, paul, init)).max()
    simple = np.sqrt(analytic.total_variance_simple(t, init, particle, paul)).max()
    ratio = full / simple
    return ratio, "in [1.3, 2.2]", 1.3 <= ratio <= 2.2, f"full {full * 1e9:.2f} nm, simple {simple * 1e9:.2f} nm"


# --- 7 ------------------------------------------------------------------------

def _t_d_for_size(target, particle, optical, paul, init):
    T_p = 2 * math.pi / paul.omega_p
    f = lambda t: math.sqrt(analytic.total_variance_simple(t, init, particle, paul)) - target
    return optimize.brentq(f, 0.0, T_p / 4)


@_timed("7", "pipeline against simulator ground truth", 60.0)
def check_pipeline(n_shots=2000, base_seed=7):
    particle, optical, paul, init = operating_point(R_MID)
    t_d = _t_d_for_size(5e-9, particle, optical, paul, init)
    # noiseless: no detector noise and no thermal force, so the recorded
    # oscillation is exactly the free evolution of the recapture state
    quiet = dataclasses.replace(particle, gamma=0.0)
    clean = dynamics.run_ensemble([t_d], n_shots, quiet, optical, paul, init,
                                  pipeline=dsp.PipelineConfig(noise_var=0.0), base_seed=base_seed)[0]
    noisy = dynamics.run_ensemble([t_d], n_shots, particle, optical, paul, init, base_seed=base_seed)[0]
    su = np.std(clean.true_u, ddof=1)
    sv = np.std(clean.true_u_dot, ddof=1)
    point_err = max(np.max(np.abs(clean.u - clean.true_u)) / su, np.max(np.abs(clean.u_dot - clean.true_u_dot)) / sv)
    floor_err = abs(noisy.noise_var / 2.5e-18 - 1.0)
    bias = abs(noisy.du / np.std(noisy.true_u, ddof=1) - 1.0)
    ok = point_err < 0.02 and floor_err < 0.15 and bias < 0.02
    return (max(point_err, bias), "points < 2%, floor < 15%, du bias < 2%", ok,
            f"points {point_err:.2%}, floor {noisy.noise_var * 1e18:.3f} nm^2 ({floor_err:.1%}), "
            f"du bias {bias:.2%}")


# --- 8 ------------------------------------------------------------------------

@_timed("8", "initial state size at t_d = 0", None)
def check_initial_state(n_shots=500, base_seed=8):
    """Noise-subtracted t_d = 0 ensemble against the reported 1.5 +- 0.1 nm.

    Tolerance: twice the combined standard error of simulation and report.
    """
    particle, optical, paul, init = operating_point(R_MID)
    st, = dynamics.run_ensemble([0.0], n_shots, particle, optical, paul, init, base_seed=base_seed)
    target, target_err = 1.5e-9, 0.1e-9
    tol = 2.0 * math.hypot(st.bootstrap_err, target_err)
    diff = abs(st.du - target)
    # du0 scales as m^-1/2; the density of the particle is not reported
    alt = {rho: init.du0 * math.sqrt(phys.SILICA_DENSITY / rho) for rho in (1850.0, 2000.0, 2200.0)}
    note = ", ".join(f"rho={k:.0f}: {v * 1e9:.3f} nm" for k, v in alt.items())
    return (st.du * 1e9, f"|du - 1.5 nm| <= {tol * 1e9:.3f} nm", diff <= tol,
            f"du={st.du * 1e9:.3f}+-{st.bootstrap_err * 1e9:.3f} nm; model du0 by density: {note}")


# --- 9 ------------------------------------------------------------------------

@_timed("9", "byte-identical ensemble reruns", 60.0)
def check_determinism(seed=9):
    from .cli import cmd_ensemble
    from .config import ExperimentConfig

    cfg = ExperimentConfig()
    cfg.n_shots = 100
    cfg.sweep.t_d_stop = 20e-6
    cfg.base_seed = seed
    outs = []
    with tempfile.TemporaryDirectory() as tmp:
        for i, threads in enumerate((1, 2)):
            d = os.path.join(tmp, str(i))
            cmd_ensemble(cfg, d, threads=threads)
            outs.append({f: open(os.path.join(d, f), "rb").read() for f in sorted(os.listdir(d))})
    same = outs[0] == outs[1]
    return float(same), "all files identical", same, f"{len(outs[0])} files compared"


CHECKS = (
    check_pseudo_potential_limit,
    check_mathieu,
    check_montecarlo_coherent,
    check_heating_law,
    check_expansion_factor,
    check_micromotion_band,
    check_pipeline,
    check_initial_state,
    check_determinism,
)


def run_all(stream=sys.stdout):
    results = []
    for check in CHECKS:
        res = check()
        print(res.line(), file=stream, flush=True)
        results.append(res)
    n_ok = sum(r.passed for r in results)
    print(f"{n_ok}/{len(results)} checks passed", file=stream)
    return results
