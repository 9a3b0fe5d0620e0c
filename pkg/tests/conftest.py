import math

import numpy as np
import pytest

from freqjump import phys
from freqjump.analytic import ThermalInit


@pytest.fixture(scope="session")
def reported():
    particle, optical, paul = phys.reported_params()
    return particle, optical, paul


def ratio_setup(r, rf_phase0=phys.REPORTED_RF_PHASE0, gamma=None, T_y=0.0, **kw):
    particle, optical, _ = phys.reported_params()
    if gamma is not None:
        import dataclasses

        particle = dataclasses.replace(particle, gamma=gamma)
    paul = phys.PaulTrap.from_ratio(r, optical, phys.REPORTED_OMEGA_RF, rf_phase0=rf_phase0, **kw)
    init = ThermalInit(particle.mass, optical, phys.REPORTED_T_COM, T_y)
    return particle, optical, paul, init


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def secular_period(paul):
    return 2 * math.pi / paul.omega_p


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for res in RESULTS:
            terminalreporter.write_line(res.line())
