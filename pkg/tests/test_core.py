import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thornsim.core import (
    ALPHA,
    HBARC_MEV_NM,
    BeamConfig,
    ConfigurationError,
    DomainError,
    ParticleState,
    critical_parameters,
    mass_shell_error,
    momentum_to_wavenumber,
    preset,
    silicon,
    transverse_energy,
    transverse_momentum_energy,
    wavenumber_to_momentum,
)
from thornsim.potentials import build_continuum, harmonic_continuum


def test_constants():
    assert ALPHA == pytest.approx(1 / 137.036, rel=1e-5)
    assert HBARC_MEV_NM == pytest.approx(197.327e-6, rel=1e-5)
    assert wavenumber_to_momentum(momentum_to_wavenumber(3.7)) == pytest.approx(3.7)


def test_preset_hierarchy():
    c = silicon()
    assert c.r_N < c.u1 < c.a_TF < c.interplanar_spacing
    assert c.interplanar_spacing == pytest.approx(0.192, abs=1e-3)
    assert c.volume_density == pytest.approx(8 / 0.5431**3, rel=1e-12)
    ax = silicon("axial")
    assert ax.volume_density == pytest.approx(8 / 0.5431**3, rel=1e-12)


@pytest.mark.parametrize("change", [dict(u1=0.0), dict(u1=-1e-3), dict(a_TF=0.5), dict(Z=0), dict(U0=-1.0),
                                    dict(geometry="helical"), dict(r_N=0.01)])
def test_invalid_crystal(change):
    with pytest.raises(ConfigurationError):
        silicon().replace(**change)


def test_unknown_preset():
    with pytest.raises(ConfigurationError):
        preset("Ge")


def test_beam_validation():
    with pytest.raises(ConfigurationError):
        BeamConfig("muon", 1000.0)
    with pytest.raises(ConfigurationError):
        BeamConfig("electron", 0.1)
    with pytest.raises(ConfigurationError):
        BeamConfig("electron", 1000.0, transverse_entry_distribution="gaussian")
    b = BeamConfig("positron", 1000.0)
    assert b.charge_sign == 1 and BeamConfig("electron", 1000.0).charge_sign == -1


def test_critical_zero_depth():
    psi, q = critical_parameters(silicon(U0=0.0), 1000.0)
    assert psi == 0.0 and q == 0.0


def test_critical_one_mev():
    # q_c = 1 MeV at 1 GeV needs U0 = q_c^2 / 2E = 500 eV
    psi, q = critical_parameters(silicon(U0=500.0), 1000.0)
    assert q == pytest.approx(1.0, rel=1e-12)
    assert psi == pytest.approx(1.0, rel=1e-12)


def test_critical_needs_depth():
    with pytest.raises(DomainError):
        critical_parameters(silicon(), 1000.0)
    with pytest.raises(DomainError):
        critical_parameters(silicon(U0=20.0), -1.0)


@given(E=st.floats(10.0, 1e5), U0=st.floats(0.1, 100.0))
def test_critical_scaling(E, U0):
    c = silicon(U0=U0)
    psi1, q1 = critical_parameters(c, E)
    psi4, q4 = critical_parameters(c, 4 * E)
    assert q4 == pytest.approx(2 * q1, rel=1e-12)
    assert psi4 == pytest.approx(psi1 / 2, rel=1e-12)


def test_mass_shell():
    s = ParticleState.from_transverse(1000.0, [0.3, -0.2], [0, 0, 0], -1, 0.511)
    assert mass_shell_error(s) < 1e-15
    with pytest.raises(DomainError):
        ParticleState(1000.0, [0.0, 0.0, 10.0], [0, 0, 0], -1, 0.511)
    with pytest.raises(DomainError):
        ParticleState.from_transverse(1000.0, [0.0], [0, 0, 0], 2, 0.511)


def test_eperp_at_minimum_is_zero():
    v = build_continuum(silicon())
    for sign in (-1, 1):
        x0 = v.minimum_position(sign)
        s = ParticleState.from_transverse(1000.0, [0.0], [x0, 0, 0], sign, 0.511)
        assert abs(transverse_energy(s, v)) < 1e-6


@given(p=st.floats(1e-4, 1.0), x=st.floats(-0.09, 0.09))
@settings(max_examples=50)
def test_eperp_kinetic_quadratic(p, x):
    v = harmonic_continuum(1e3, 0.1)
    s1 = ParticleState.from_transverse(1000.0, [p], [x, 0, 0], 1, 0.511)
    s2 = ParticleState.from_transverse(1000.0, [2 * p], [x, 0, 0], 1, 0.511)
    pot = float(v.energy(x, 1))
    k1 = transverse_energy(s1, v) - pot
    k2 = transverse_energy(s2, v) - pot
    assert k2 == pytest.approx(4 * k1, rel=1e-9)
    assert k1 == pytest.approx(transverse_momentum_energy([p], 1000.0), rel=1e-9)
