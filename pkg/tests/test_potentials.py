import math

import numpy as np
import pytest
from scipy import integrate

from thornsim.core import DomainError, ConfigurationError, silicon
from thornsim.potentials import (
    COULOMB_EV_NM,
    PhenomenologicalThorn,
    RadialOrbital,
    ScreeningModel,
    ThornElectron,
    ThornVib,
    YukawaSum,
    atomic_potential,
    build_continuum,
    projected_profile,
    radial_fourier_transform,
    smeared_atomic_potential,
    thorn_electron_density,
    thorn_electron_potential,
    thorn_vib_potential,
    with_continuum_depth,
)


def test_coulomb_limit_point_nucleus(si):
    s = ScreeningModel.moliere(si.a_TF)
    r = np.array([1e-8, 1e-7])
    assert np.allclose(r * atomic_potential(r, s, 14), 14 * COULOMB_EV_NM, rtol=1e-5)


def test_coulomb_limit_regulated(si, screening):
    # just outside the regulator scale the product approaches Z alpha
    r = np.array([100, 30]) * si.r_N
    rv = r * atomic_potential(r, screening, 14)
    assert rv[1] == pytest.approx(14 * COULOMB_EV_NM, rel=0.02)
    assert abs(rv[1] - 14 * COULOMB_EV_NM) < abs(rv[0] - 14 * COULOMB_EV_NM)
    # and the regulator keeps it finite at the origin
    assert np.isfinite(atomic_potential(0.0, screening, 14))


def test_yukawa_decay(si, screening):
    mu_min = screening.inverse_ranges.min()
    a = si.a_TF
    ratio = atomic_potential(10 * a, screening, 14) / atomic_potential(a, screening, 14)
    assert ratio < math.exp(-9 * mu_min * a) * 0.1


def test_yukawa_fourier_transform():
    term = YukawaSum((2.0,), (5.0,))
    k = np.array([0.1, 3.0, 40.0])
    num = radial_fourier_transform(term.value, k, 0.2, 0.2, r_min=1e-12)
    assert np.allclose(num, 4 * math.pi * 2.0 / (k**2 + 25.0), rtol=1e-6)


def test_smeared_small_width_limit(si, screening):
    r = np.array([0.002, 0.01, 0.05])
    v = atomic_potential(r, screening, 14)
    vs = smeared_atomic_potential(r, screening, 1e-6, 14)
    assert np.allclose(vs, v, rtol=1e-6)


def test_smeared_coulomb_at_origin():
    u1 = 0.0075
    coul = YukawaSum((COULOMB_EV_NM,), (0.0,))
    expect = COULOMB_EV_NM * math.sqrt(2 / math.pi) / u1
    assert float(coul.smeared(u1).value(0.0)) == pytest.approx(expect, rel=1e-10)


def test_smearing_is_debye_waller_in_fourier_space(si, screening):
    atom = screening.atom_term(14)
    sm = atom.smeared(si.u1)
    k = np.array([10.0, 100.0, 300.0])
    num_plain = radial_fourier_transform(atom.value, k, si.r_N, si.a_TF)
    num_smeared = radial_fourier_transform(sm.value, k, si.u1 / 10, si.a_TF)
    assert np.allclose(num_smeared / num_plain, np.exp(-0.5 * (k * si.u1) ** 2), rtol=1e-6)
    assert np.allclose(sm.fourier(k) / atom.fourier(k), np.exp(-0.5 * (k * si.u1) ** 2), rtol=1e-12)


def test_smeared_rejects_bad_width(screening):
    with pytest.raises(DomainError):
        smeared_atomic_potential(0.01, screening, 0.0)
    with pytest.raises(DomainError):
        atomic_potential(-1.0, screening, 14)


def test_moliere_weights_validated():
    with pytest.raises(ConfigurationError):
        ScreeningModel(((0.5, 1.0), (0.4, 2.0)))


# continuum


def test_continuum_planar(si):
    v = build_continuum(si)
    d = si.interplanar_spacing
    x = np.linspace(0.001, d - 0.001, 97)
    assert np.max(np.abs(v.value(x) - v.value(d - x))) < 1e-10
    assert abs(float(v.derivative(d / 2))) < 1e-8
    assert 15.0 < v.U0 < 30.0
    assert with_continuum_depth(si).U0 == pytest.approx(v.U0)


def test_continuum_force_is_gradient(si):
    v = build_continuum(si)
    x = np.linspace(0.01, 0.18, 11)
    h = 1e-6
    fd = (v.value(x + h) - v.value(x - h)) / (2 * h)
    assert np.allclose(v.derivative(x), fd, rtol=1e-6, atol=1e-6)


def test_continuum_axial():
    c = silicon("axial")
    v = build_continuum(c)
    assert v.U0 > 0
    r = np.array([[0.03, 0.01], [-0.01, 0.05]])
    mirrored = r * np.array([-1, 1])
    assert np.allclose(v.value(r), v.value(mirrored), rtol=1e-9)
    # periodic in the string spacing
    assert np.allclose(v.value(r), v.value(r + c.interplanar_spacing), rtol=1e-9)


def test_continuum_grid_too_coarse(si):
    with pytest.raises(ConfigurationError):
        build_continuum(si, n_points=16)


# vibrational thorn


def test_vib_thorn_integrates_to_zero(si):
    t = ThornVib(si, np.array([si.u1, 0.0, 0.0]))
    f = lambda x: float(projected_profile(t, np.array([x]), axis=[1, 0, 0])[0])
    pts = [-si.u1, 0.0, si.u1, 2 * si.u1]
    L = 20 * si.a_TF
    total, _ = integrate.quad(f, -L, L, points=pts, limit=400)
    absval, _ = integrate.quad(lambda x: abs(f(x)), -L, L, points=pts, limit=400)
    assert abs(total) < 0.01 * absval


def test_vib_thorn_short_range(si):
    t = ThornVib(si, np.array([si.u1, 0.0, 0.0]))
    peak = abs(thorn_vib_potential(np.array([si.u1, 0, 0]), t)[0])
    far = np.abs(thorn_vib_potential(np.array([[10 * si.a_TF, 0, 0], [0, 0, 10 * si.a_TF]]), t))
    assert np.all(far < 1e-3 * peak)


def test_vib_thorn_vanishes_with_width(si):
    r = np.array([[0.01, 0.0, 0.0], [0.0, 0.02, 0.01]])

    def rel(u1):
        c = si.replace(u1=u1)
        t = ThornVib(c)
        va = atomic_potential(np.linalg.norm(r, axis=1), ScreeningModel.for_crystal(c), 14)
        return np.abs(t.potential(r) / va)

    small, smaller = rel(1e-4), rel(5e-5)
    assert np.all(small < 1e-4)
    assert np.allclose(small / smaller, 4.0, rtol=0.05)


def test_vib_profile_linearity(si, screening):
    u = si.u1
    t = ThornVib(si, np.array([u, 0.0, 0.0]))
    atom = screening.atom_term(14)
    x = np.linspace(-4 * u, 4 * u, 41)
    direct = projected_profile(t, x, axis=[1, 0, 0])
    parts = atom._profile_terms(x - u) - atom.smeared(u).profile(x)
    assert np.allclose(direct, parts, rtol=1e-8, atol=1e-8 * np.max(np.abs(parts)))


def test_vib_profile_changes_sign(si):
    t = ThornVib(si, np.array([si.u1, 0.0, 0.0]))
    x = np.linspace(-6 * si.u1, 6 * si.u1, 601)
    p = projected_profile(t, x)
    assert np.any(p > 0) and np.any(p < 0)


# electronic thorn


def test_electron_density_neutral():
    orb = RadialOrbital(1, 60.0)
    t = ThornElectron(orb, s=np.array([0.002, 0.0, 0.0]))
    cloud, _ = integrate.quad(lambda r: 4 * math.pi * r * r * float(orb.density(r)), 0, np.inf, epsrel=1e-12)
    assert cloud == pytest.approx(1.0, abs=1e-8)
    ch = thorn_electron_density(np.zeros((1, 3)), t)
    assert ch.point_charge + cloud == pytest.approx(0.0, abs=1e-8)


def test_electron_density_annulus():
    # shell orbital: the point charge sits inside a ring of opposite-sign density
    orb = RadialOrbital(1, 60.0)
    t = ThornElectron(orb, s=np.array([0.002, 0.0, 0.0]))
    x = np.linspace(0, 0.1, 501)
    pts = np.stack([x, np.zeros_like(x), np.zeros_like(x)], -1)
    ch = thorn_electron_density(pts, t)
    peak = x[np.argmax(ch.cloud)]
    assert ch.cloud[0] == 0.0 and peak == pytest.approx(1 / 60.0, abs=5e-4)
    assert np.linalg.norm(ch.point_position) < peak
    assert ch.point_charge < 0 < ch.cloud.max()


def test_electron_far_field_monopole_free():
    orb = RadialOrbital(0, 50.0)
    t = ThornElectron(orb, s=np.array([0.004, 0.0, 0.0]))
    r = np.array([[1.0, 0.5, 0.2], [3.0, -1.0, 2.0]])
    rv = np.linalg.norm(r, axis=1) * thorn_electron_potential(r, t)
    assert np.all(np.abs(rv) < 1e-2 * COULOMB_EV_NM)
    assert abs(rv[1]) < abs(rv[0])


def test_electron_far_field_dipole():
    orb = RadialOrbital(0, 50.0)
    s = np.array([0.004, 0.001, 0.0])
    t = ThornElectron(orb, s=s)
    R = 20 * orb.mean_radius
    dirs = np.array([[1, 0, 0], [0.6, 0.8, 0], [0.3, -0.2, 0.93]])
    dirs = dirs / np.linalg.norm(dirs, axis=1)[:, None]
    v = thorn_electron_potential(R * dirs, t)
    dipole = -COULOMB_EV_NM * (dirs @ s) / R**2
    assert np.allclose(v, dipole, rtol=0.02)


def test_electron_symmetric_without_offset():
    orb = RadialOrbital(-1, 80.0)
    t = ThornElectron(orb, screening_length=0.25)
    assert np.all(t.dipole_moment() == 0)
    d = np.array([[0.01, 0, 0], [0, 0.01, 0], [0, 0, 0.01], [0.00577350269, 0.00577350269, 0.00577350269]])
    v = thorn_electron_potential(d, t)
    assert np.allclose(v, v[0], rtol=1e-8)


def test_phenomenological_thorn():
    t = PhenomenologicalThorn(14, 0.0075, 7.5e-6)
    assert t.term.neutral
    with pytest.raises(DomainError):
        PhenomenologicalThorn(14, 1e-3, 1e-2)
