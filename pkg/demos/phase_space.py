"""
Phase-space distributions before and after expansion
====================================================

Retrodicted (u, u_dot / omega_o) points are binned on a 1 nm grid. At the
quarter period the cloud is stretched along position: the initial velocity
spread has turned into position spread.
"""

# %%
import math

import numpy as np

from freqjump import dsp, dynamics, phys
from freqjump.analytic import ThermalInit

particle, optical, _ = phys.reported_params()
paul = phys.PaulTrap.from_ratio(14.5, optical, phys.REPORTED_OMEGA_RF, rf_phase0=phys.REPORTED_RF_PHASE0)
init = ThermalInit(particle.mass, optical, phys.REPORTED_T_COM, 0.0)
T_p = 2 * math.pi / paul.omega_p
omega_o = optical.omega_u_eff

stats = dynamics.run_ensemble([0.0, T_p / 4], 500, particle, optical, paul, init, base_seed=2)


# %%
# Coarse text rendering of each histogram, with the principal-axis angle and
# the spreads along both axes.
def show(st, bin=1e-9, width=41):
    counts, eu, ew = dsp.histogram2d(st.u, st.u_dot, omega_o, bin)
    w = st.u_dot / omega_o
    print(f"t_d = {st.t_d * 1e6:.1f} us: du = {st.du * 1e9:.2f} nm, "
          f"std(u_dot/omega) = {np.std(w) * 1e9:.2f} nm, "
          f"axis angle = {math.degrees(dsp.principal_angle(st.u, w)):.1f} deg")
    # fold by one factor on both axes so the aspect ratio survives
    fu = fw = max(1, math.ceil(max(counts.shape) / width))
    pad = (-counts.shape[0] % fu, -counts.shape[1] % fw)
    c = np.pad(counts, ((0, pad[0]), (0, pad[1])))
    c = c.reshape(c.shape[0] // fu, fu, c.shape[1] // fw, fw).sum(axis=(1, 3))
    shades = " .:-=+*#%@"
    top = c.max()
    for row in c.T[::-1]:
        print("".join(shades[min(9, int(9 * v / top + 0.999))] for v in row))
    print()


for st in stats:
    show(st)
