import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from freqjump import phys
from freqjump.floquet import characteristic_exponent, q_for_beta

finite = st.floats(-1e6, 1e6, allow_nan=False)


def test_constants_are_codata():
    assert phys.K_B == 1.380649e-23
    assert phys.HBAR == pytest.approx(1.054571817e-34, rel=1e-12)
    assert phys.E_CHARGE == 1.602176634e-19


def test_reported_mass_by_hand(reported):
    particle, _, _ = reported
    # (pi/6) d^3 rho, d = 177 nm, rho = 1850 kg/m^3
    hand = 3.141592653589793 / 6 * (177e-9) ** 3 * 1850.0
    assert particle.mass == pytest.approx(hand, rel=1e-14)
    assert particle.mass == pytest.approx(5.4e-18, rel=0.02)


def test_reported_effective_frequency(reported):
    _, optical, _ = reported
    assert optical.omega_u_eff == math.sqrt((optical.omega_x**2 + optical.omega_y**2) / 2)
    assert optical.omega_u_eff / (2 * math.pi) == pytest.approx(51.47e3, abs=10)


def test_reported_heating_rate(reported):
    particle, optical, _ = reported
    assert particle.heating_rate(optical.omega_u_eff) / (2 * math.pi) == pytest.approx(926e3, rel=1e-12)


def test_reported_paul_trap_beta(reported):
    _, _, paul = reported
    assert paul.beta == pytest.approx(12 / 33, abs=1e-12)
    assert paul.omega_p == pytest.approx(2 * math.pi * 6e3, rel=1e-12)


def test_heating_rate_consistency_and_override():
    p = phys.ParticleParams(diameter=100e-9, gamma=0.3, T_bath=300.0)
    w = 2 * math.pi * 50e3
    assert p.heating_rate(w) == pytest.approx(0.3 * phys.K_B * 300.0 / (phys.HBAR * w), rel=1e-15)
    q = phys.ParticleParams(diameter=100e-9, gamma=0.3, Gamma_heat=42.0)
    assert q.heating_rate(w) == 42.0


@pytest.mark.parametrize("kw", [
    dict(diameter=0.0), dict(diameter=1e-7, density=-1.0), dict(diameter=1e-7, gamma=-0.1),
    dict(diameter=1e-7, T_bath=0.0), dict(diameter=1e-7, n_e=0),
])
def test_particle_validation(kw):
    with pytest.raises(ValueError):
        phys.ParticleParams(**kw)


def test_paul_v_axis_defaults_to_antiphase():
    paul = phys.PaulTrap(2 * math.pi * 33e3, a_u=0.01, q_u=0.3)
    assert (paul.a_v, paul.q_v) == (0.01, -0.3)


def test_derive_mathieu_zero_potential():
    assert phys.derive_mathieu_params(500, 5e-18, 2e5, 0.0, 0.0) == (0.0, 0.0)


def test_derive_mathieu_linear_in_charge():
    a1, q1 = phys.derive_mathieu_params(100, 5e-18, 2e5, 3e4, 7e6)
    a2, q2 = phys.derive_mathieu_params(200, 5e-18, 2e5, 3e4, 7e6)
    assert a2 == pytest.approx(2 * a1, rel=1e-15) and q2 == pytest.approx(2 * q1, rel=1e-15)


def test_curvature_for_six_kilohertz(reported):
    particle, _, _ = reported
    Omega = phys.REPORTED_OMEGA_RF
    q = q_for_beta(2 * phys.REPORTED_OMEGA_P / Omega)
    d2rf = q * particle.mass * Omega**2 / (2 * particle.n_e * phys.E_CHARGE)
    a, q_back = phys.derive_mathieu_params(particle.n_e, particle.mass, Omega, 0.0, d2rf)
    assert characteristic_exponent(a, q_back) == pytest.approx(12 / 33, abs=1e-10)


@given(m=st.floats(1e-20, 1e-15), W=st.floats(1e4, 1e6), s=st.floats(0.1, 10.0),
       dc=finite, rf=finite)
def test_derive_mathieu_homogeneity(m, W, s, dc, rf):
    a, q = phys.derive_mathieu_params(500, m, W, dc, rf)
    am, qm = phys.derive_mathieu_params(500, s * m, W, dc, rf)
    aw, qw = phys.derive_mathieu_params(500, m, s * W, dc, rf)
    assert am == pytest.approx(a / s, rel=1e-12, abs=1e-300)
    assert qm == pytest.approx(q / s, rel=1e-12, abs=1e-300)
    assert aw == pytest.approx(a / s**2, rel=1e-12, abs=1e-300)
    assert qw == pytest.approx(q / s**2, rel=1e-12, abs=1e-300)


@pytest.mark.parametrize("bad", [(0.0, 1e5), (1e-18, 0.0), (-1e-18, 1e5)])
def test_derive_mathieu_rejects_bad_inputs(bad):
    with pytest.raises(ValueError):
        phys.derive_mathieu_params(500, bad[0], bad[1], 1.0, 1.0)
    with pytest.raises(ValueError):
        phys.derive_mathieu_params(500, 1e-18, 1e5, float("nan"), 1.0)


def _unique_image(y, to_si):
    # y is recoverable only if no neighbouring double shares its SI value
    x = to_si(y)
    return to_si(np.nextafter(y, np.inf)) != x and to_si(np.nextafter(y, -np.inf)) != x


@given(st.floats(-1e6, 1e6, allow_nan=False))
def test_nm_round_trip_exact_when_image_unique(y):
    assume(_unique_image(y, phys.from_nm))
    assert phys.to_nm(phys.from_nm(y)) == y


@given(st.one_of(st.integers(-10**6, 10**6).map(float), st.floats(-1e4, 1e4, allow_nan=False)))
def test_us_round_trip_exact_when_image_unique(y):
    assume(_unique_image(y, phys.from_us))
    assert phys.to_us(phys.from_us(y)) == y


def test_unit_helpers_accept_arrays():
    x = np.array([1.0, 2.5, 26.4])
    np.testing.assert_array_equal(phys.to_nm(phys.from_nm(x)), x)
    assert isinstance(phys.to_nm(1.0), float) and isinstance(phys.from_us(1.0), float)


def test_frequency_ratio_uses_effective_frequency(reported):
    _, optical, paul = reported
    assert phys.frequency_ratio(optical, paul) == optical.omega_u_eff / paul.omega_p
    for r in phys.REPORTED_RATIOS:
        p = phys.PaulTrap.from_ratio(r, optical, phys.REPORTED_OMEGA_RF)
        assert phys.frequency_ratio(optical, p) == pytest.approx(r, rel=1e-10)
