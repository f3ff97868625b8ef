import dataclasses
import math

import numpy as np
import pytest
from scipy import integrate

from thornsim.core import BeamConfig, DomainError, ParticleState, silicon
from thornsim.potentials import ScreeningModel, ThornVib, harmonic_continuum
from thornsim.sampler import RandomStream
from thornsim.transport import (
    PhononCorrelationModel,
    Snapshot,
    TrajectoryRecord,
    build_setup,
    correlated_displacement_field,
    detect_dechanneling,
    estimate_dechanneling_length,
    make_snapshot,
    oscillation_period,
    run_cm_trajectory,
    run_continuum_trajectory,
    run_ensemble,
    run_scm_trajectory,
    step_cm,
    step_continuum,
    survival_curve,
)
from thornsim.transport import engine
from thornsim.transport.trajectory import eperp_of
from thornsim.xsection import (
    FormFactorModel,
    born_dsigma_atom_averaged,
    born_dsigma_electron_averaged,
    classical_kick,
)

E_BEAM = 1000.0


@pytest.fixture(scope="module")
def electron_setup(si):
    return build_setup(si, BeamConfig("electron", E_BEAM), ("scm", "cm"))


@pytest.fixture(scope="module")
def positron_setup(si):
    return build_setup(si, BeamConfig("positron", E_BEAM), ("cm",))


def _state(E, p_T, r_T, sign=1):
    return ParticleState.from_transverse(E, np.asarray(p_T, float), np.array([r_T[0], r_T[1], 0.0]), sign, 0.511)


def _cycle_means(z, e):
    """Mean E_perp over each oscillation cycle, cycles cut at interpolated minima."""
    i = np.nonzero((e[1:-1] < e[:-2]) & (e[1:-1] <= e[2:]))[0] + 1
    a, b, c = e[i - 1], e[i], e[i + 1]
    den = a - 2 * b + c
    off = np.where(den > 0, 0.5 * (a - c) / np.where(den > 0, den, 1.0), 0.0)
    zm = z[i] + off * (z[1] - z[0])
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (e[1:] + e[:-1]) * np.diff(z))])
    area = np.interp(zm, z, cum)
    return np.diff(area) / np.diff(zm)


def _log_moment2(f, lo, hi, n_panels=24):
    """2 pi int q^3 f(q) dq over [lo, hi] in log q."""
    g = lambda t: 2 * math.pi * math.exp(4 * t) * f(math.exp(t))
    pts = np.linspace(math.log(lo), math.log(hi), n_panels + 1)
    return sum(integrate.quad(g, a, b, epsrel=1e-7, limit=200)[0] for a, b in zip(pts[:-1], pts[1:]))


# ---------------------------------------------------------------------------
# continuum stepping


def test_harmonic_period():
    curvature, E = 1e3, E_BEAM
    v = harmonic_continuum(curvature, 0.2)
    period = 2 * math.pi * math.sqrt(E / (1e-6 * curvature))
    assert oscillation_period(v, E) == pytest.approx(period, rel=1e-8)
    dz = oscillation_period(v, E) / 50
    s = _state(E, [0.0], [0.05, 0.0])
    xs, zs = [s.r[0]], [0.0]
    for _ in range(50 * 4):
        s = step_continuum(s, v, dz)
        xs.append(s.r[0])
        zs.append(s.r[2])
    xs, zs = np.array(xs), np.array(zs)
    i = np.nonzero((xs[:-1] < 0) & (xs[1:] >= 0))[0]
    zc = zs[i] - xs[i] * (zs[i + 1] - zs[i]) / (xs[i + 1] - xs[i])
    assert np.all(np.abs(np.diff(zc) / period - 1) < 1e-3)


def test_step_keeps_energy_and_mass_shell(electron_setup):
    s = _state(E_BEAM, [2e-4], [0.03, 0.0], -1)
    s1 = step_continuum(s, electron_setup.continuum, electron_setup.dz)
    assert s1.E == s.E
    assert np.linalg.norm(s1.p) == pytest.approx(math.sqrt(E_BEAM**2 - 0.511**2), rel=1e-14)
    assert s1.r[2] == pytest.approx(electron_setup.dz)


def test_step_too_large(electron_setup):
    s = _state(E_BEAM, [0.0], [0.03, 0.0], -1)
    with pytest.raises(DomainError):
        step_continuum(s, electron_setup.continuum, electron_setup.dz * 1.01)
    with pytest.raises(DomainError):
        step_continuum(s, electron_setup.continuum, -1.0)


def test_mirror_symmetry(electron_setup):
    v, dz = electron_setup.continuum, electron_setup.dz
    a = _state(E_BEAM, [3e-4], [0.04, 0.0], -1)
    b = _state(E_BEAM, [-3e-4], [-0.04, 0.0], -1)
    for _ in range(300):
        a = step_continuum(a, v, dz)
        b = step_continuum(b, v, dz)
        assert b.r[0] == pytest.approx(-a.r[0], abs=1e-9)
        assert b.p[0] == pytest.approx(-a.p[0], abs=1e-12)


@pytest.mark.parametrize("entry", [(0.03, 0.0, 0.0, 0.0), (0.09, 0.0, 0.0, 0.0), (0.0, 0.0, 5e-4, 0.0)])
def test_no_secular_drift_over_100_periods(electron_setup, entry):
    period = oscillation_period(electron_setup.continuum, E_BEAM)
    opts = engine.default_options(collisions=0.0)
    rec, log = run_scm_trajectory(electron_setup, RandomStream(1, 0), 100 * period * 1e-3, opts, entry=entry)
    assert len(log) == 0 and rec.dechannel_depth_nm is None
    m = _cycle_means(rec.depth_nm, rec.eperp)
    assert m.size > 30
    slope = np.polyfit(np.arange(m.size), m, 1)[0]
    assert abs(slope * m.size / m.mean()) < 1e-6


# ---------------------------------------------------------------------------
# snapshots and the full-potential step


def test_snapshot_deterministic(si):
    region = ((-0.3, 0.3), (-0.4, 0.4), (0.0, 2.0))
    a = make_snapshot(si, region, 7)
    b = make_snapshot(si, region, 7)
    for f in ("mean_sites", "displacements", "parent", "shell", "offsets"):
        assert np.array_equal(getattr(a, f), getattr(b, f))
    assert a.mean_sites.shape[0] > 0
    assert np.allclose(np.mod(a.mean_sites[:, 0] / si.interplanar_spacing + 0.5, 1.0), 0.5)
    assert a.parent.size == si.Z * a.mean_sites.shape[0]


def test_snapshot_bad_region(si):
    with pytest.raises(DomainError):
        make_snapshot(si, ((0.3, -0.3), (0, 1), (0, 1)), 1)
    with pytest.raises(DomainError):
        make_snapshot(si, ((0, np.inf), (0, 1), (0, 1)), 1)


def _neighbour_diffs(snap, r_max):
    s = snap.mean_sites
    d = np.linalg.norm(s[:, None, :] - s[None, :, :], axis=-1)
    i, j = np.nonzero(np.triu(d < r_max, k=1))
    return snap.displacements[i] - snap.displacements[j]


def test_neighbour_pairs_uncorrelated(si):
    rng = np.random.default_rng(11)
    diffs = np.concatenate([_neighbour_diffs(make_snapshot(si, ((-0.1, 0.1), (-0.5, 0.5), (0, 6.0)), rng,
                                                           electrons=False), 0.3) for _ in range(100)])
    assert diffs.shape[0] > 5000
    var = np.mean(diffs**2, axis=0)
    assert np.allclose(var / (2 * si.u1**2), 1.0, atol=0.05)


def test_neighbour_pairs_correlated(si):
    model = PhononCorrelationModel.for_crystal(si, 10 * si.lattice_constant)
    rng = np.random.default_rng(12)
    diffs = np.concatenate([_neighbour_diffs(make_snapshot(si, ((-0.1, 0.1), (-0.5, 0.5), (0, 3.0)), rng, model,
                                                           electrons=False), 0.3) for _ in range(40)])
    rms = np.sqrt(np.mean(diffs**2, axis=0))
    assert np.all(rms < math.sqrt(2) * si.u1)
    assert np.all(rms >= math.sqrt(2) * model.u_short * 0.97)


def test_empty_snapshot_matches_continuum(electron_setup, si):
    empty = Snapshot(si, np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0, int), np.zeros(0, int), np.zeros((0, 3)))
    s = _state(E_BEAM, [2e-4], [0.03, 0.0], -1)
    a, b = s, s
    for _ in range(20):
        a = step_continuum(a, electron_setup.continuum, electron_setup.dz)
        b = step_cm(b, empty, electron_setup.continuum, electron_setup.dz)
    assert np.allclose(a.r, b.r, rtol=0, atol=1e-10)
    assert np.allclose(a.p_T, b.p_T, rtol=0, atol=1e-10)


def _single_thorn(si, u):
    snap = Snapshot(si, np.array([[0.0, 0.0, 5.0]]), np.asarray(u, float)[None, :], np.zeros(0, int),
                    np.zeros(0, int), np.zeros((0, 3)), None, None)
    return snap, ThornVib(si, np.asarray(u, float), ScreeningModel.for_crystal(si))


@pytest.mark.parametrize("b", [3e-5, 1e-3, 0.0225])
def test_isolated_thorn_gives_eikonal_kick(si, b):
    u = np.array([0.002, -0.001, 0.0])
    snap, thorn = _single_thorn(si, u)
    flat = harmonic_continuum(0.0, 10.0)
    s1 = step_cm(_state(1e6, [0.0, 0.0], [b, 0.0]), snap, flat, 10.0)
    expect = classical_kick(np.array([[b, 0.0]]), thorn, 1)[0]
    assert np.linalg.norm(s1.p_T - expect) < 0.01 * np.linalg.norm(expect)


def test_time_reversal(si):
    snap, _ = _single_thorn(si, [0.002, -0.001, 0.0])
    v = harmonic_continuum(1e3, 10.0)
    s0 = _state(1e6, [3e-3, -1e-3], [1e-3, 2e-4])
    s1 = step_cm(s0, snap, v, 10.0)
    assert np.linalg.norm(s1.p_T - s0.p_T) > 1e-3
    back = step_cm(s1.with_transverse(s1.r_T, -s1.p_T, z=0.0), snap, v, 10.0)
    assert np.allclose(back.r_T, s0.r_T, rtol=0, atol=1e-6 * np.abs(s0.r_T).max())
    assert np.allclose(-back.p_T, s0.p_T, rtol=0, atol=1e-6 * np.abs(s0.p_T).max())


# ---------------------------------------------------------------------------
# SCM trajectories


def test_scm_kink_jumps_follow_kick_formula(electron_setup):
    rec, log = run_scm_trajectory(electron_setup, RandomStream(2, 0), 10.0, engine.default_options(stop=False),
                                  entry=(0.03, 0.0, 0.0, 0.0))
    assert len(log) > 5
    px = log.p_before[:, 0]
    predicted = ((px + log.q[:, 0]) ** 2 - px**2) * 1e6 / (2 * E_BEAM)
    assert np.max(np.abs(log.eperp_after - log.eperp_before - predicted)) < 1e-9
    assert np.all(np.diff(log.z_um) >= 0)
    assert set(np.unique(log.kind_names)) <= {"vib", "e"}


def test_scm_zero_cross_sections_keeps_channeled(electron_setup):
    opts = engine.default_options(collisions=0.0)
    entry = (0.03, 0.0, 0.0, 0.0)
    rec, log = run_scm_trajectory(electron_setup, RandomStream(3, 0), 20.0, opts, entry=entry)
    ref = run_continuum_trajectory(electron_setup, RandomStream(3, 0), 20.0, entry=entry)
    assert len(log) == 0 and rec.dechannel_depth_nm is None
    assert np.array_equal(rec.eperp, ref.eperp)


def test_kink_rate_plane_vs_midchannel(electron_setup, si):
    opts = engine.default_options(continuum=0.0, apply_kicks=False, stop=False)
    on, _ = run_scm_trajectory(electron_setup, RandomStream(4, 0), 20.0, opts, entry=(0.0, 0.0, 0.0, 0.0))
    mid, _ = run_scm_trajectory(electron_setup, RandomStream(4, 1), 20.0, opts,
                                entry=(si.interplanar_spacing / 2, 0.0, 0.0, 0.0))
    assert on.stats["vib"] > 30 and mid.stats["vib"] == 0
    assert on.stats["vib"] + on.stats["e"] > 2 * (mid.stats["vib"] + mid.stats["e"])


def test_scm_random_walk_rate(electron_setup, si):
    """Accumulated q^2 (soft part, |q| below the channel critical momentum) grows at the rate
    predicted from the cross-section moments, on a straight path through a plane."""
    setup, k = electron_setup, electron_setup.kernel
    ff = FormFactorModel.for_crystal(si)
    u1, density = si.u1, si.atom_density
    scale = 50.0  # every kink probability multiplied; keeps the test fast

    def edge(lnq, q):
        return math.exp(lnq[np.argmin(np.abs(lnq - math.log(q)))])

    cut_v, cut_e = edge(k.vib_lnq, 0.2), edge(k.e_lnq, 0.2)
    # vibrational thorns: sites on the plane x = 0, y integrated
    un = np.linspace(0, 6 * u1, 25)
    m2v = [_log_moment2(lambda q: float(born_dsigma_atom_averaged(q, u, ff, u1)), math.exp(k.vib_lnq[0]), cut_v)
           for u in un]
    yy = np.linspace(0, 6 * u1, 2001)
    gauss = np.exp(-0.5 * yy**2 / u1**2) / (2 * math.pi * u1**2)
    rate_vib = density * 2 * integrate.simpson(gauss * np.interp(yy, un, m2v), x=yy)
    # electronic thorns: average over the nuclear displacement with Gauss-Hermite nodes
    gx, gw = np.polynomial.hermite_e.hermegauss(24)
    gw = gw / gw.sum()
    ux, uy, w2 = gx[:, None] * u1, gx[None, :] * u1, gw[:, None] * gw[None, :]
    rate_e = 0.0
    for kk, (orb, n_k) in enumerate(ff.orbitals):
        s_max = k.s_range[kk]
        bn = np.concatenate([[0.0], np.geomspace(1e-4 * s_max, s_max, 40)])
        m2e = [_log_moment2(lambda q: float(born_dsigma_electron_averaged(q, b, ff, kk, setup.screening_length)),
                            math.exp(k.e_lnq[0]), cut_e) for b in bn]

        def per_b(b):
            return np.where(b < s_max, n_k * orb.projected_density(np.maximum(b, 1e-12)) * np.interp(b, bn, m2e),
                            0.0)

        for j in range(-2, 3):
            dx = j * si.interplanar_spacing
            y_max = math.sqrt(setup.neighbourhood**2 - dx**2)
            ys = np.concatenate([np.linspace(0, 0.05, 801), np.linspace(0.05, y_max, 400)[1:]])
            vals = [float((w2 * per_b(np.hypot(dx - ux, y - uy))).sum()) for y in ys]
            rate_e += density * 2 * integrate.simpson(vals, x=ys)

    opts = engine.default_options(continuum=0.0, collisions=scale, apply_kicks=False, stop=False)
    depth_nm = 100e3
    rec, log = run_scm_trajectory(setup, RandomStream(3, 0), depth_nm * 1e-3, opts, entry=(0.0, 0.0, 0.0, 0.0))
    q = np.hypot(log.q[:, 0], log.q[:, 1])
    cut = np.where(log.kind == 0, cut_v, cut_e)
    q2 = np.where(q < cut, q * q, 0.0)
    expected = scale * (rate_vib + rate_e)
    assert q2.sum() / depth_nm == pytest.approx(expected, rel=0.05)
    # linear growth: both halves of the path carry the same rate
    first = q2[log.z_um * 1e3 < depth_nm / 2].sum()
    second = q2.sum() - first
    se = math.sqrt(q2.size) * q2.std()
    assert abs(first - second) < 4 * se


# ---------------------------------------------------------------------------
# CM trajectories


def test_cm_without_thorns_is_continuum(electron_setup):
    entry = (0.05, 0.0, 1e-4, 0.0)
    a = run_cm_trajectory(electron_setup, RandomStream(5, 0), 5.0, engine.default_options(thorns=0.0), entry=entry)
    b = run_continuum_trajectory(electron_setup, RandomStream(5, 0), 5.0, entry=entry)
    assert np.array_equal(a.eperp, b.eperp)
    assert np.array_equal(a.final, b.final)


def _nuclei_only(setup):
    return dataclasses.replace(setup, cm=dataclasses.replace(setup.cm, n_electrons=0))


def test_cm_far_from_atoms():
    # widely spaced planes so the channel centre sits several screening lengths from every atom
    crystal = silicon("planar", interplanar_spacing=0.6)
    setup = build_setup(crystal, BeamConfig("positron", E_BEAM), ("cm",))
    period = oscillation_period(setup.continuum, E_BEAM)
    entry = (0.3, 0.0, 0.0, 0.0)
    for seed in range(3):
        rec = run_cm_trajectory(setup, RandomStream(seed, 0), period * 1e-3, entry=entry)
        ref = run_continuum_trajectory(setup, RandomStream(seed, 0), period * 1e-3, entry=entry)
        assert np.max(np.abs(rec.eperp - ref.eperp)) < 1e-4 * setup.U0


def test_cm_kick_variance_rate(electron_setup, si):
    """Soft part of the summed nuclear kicks per unit length matches the Gaussian-averaged
    eikonal kick moment times the site density."""
    setup = _nuclei_only(electron_setup)
    u1, cut = si.u1, 0.2
    atom = ScreeningModel.for_crystal(si).atom_term(si.Z)
    bg = np.geomspace(1e-10, 1.0, 4000)
    bare, smeared = atom.kick(bg) * 1e-6, atom.smeared(u1).kick(bg) * 1e-6
    r = np.geomspace(1e-9, 12 * u1, 1500)
    th = np.linspace(0, 2 * np.pi, 256, endpoint=False)
    R, TH = np.meshgrid(r, th, indexing="ij")
    bx, by = R * np.cos(TH), R * np.sin(TH)
    kb = np.interp(np.log(R), np.log(bg), bare)
    area = (np.gradient(r) * r)[:, None] * (2 * np.pi / th.size)

    def per_site(y):
        g = np.exp(-(bx**2 + (y - by) ** 2) / (2 * u1 * u1)) / (2 * np.pi * u1 * u1)
        mean = np.interp(math.log(max(abs(y), 1e-10)), np.log(bg), smeared)
        q2 = (kb * bx / R) ** 2 + (kb * by / R - mean * np.sign(y)) ** 2
        return float((g * np.where(q2 < cut**2, q2, 0.0) * area).sum())

    ys = np.linspace(0, 8 * u1, 121)
    expected = si.atom_density * 2 * integrate.simpson([per_site(y) for y in ys], x=ys)

    opts = engine.default_options(continuum=0.0, apply_kicks=False, stop=False, log_cm=True)
    total, length = 0.0, 0.0
    for i in range(20):
        rec, log = run_cm_trajectory(setup, RandomStream(6, i), 20.0, opts, entry=(0.0, 0.0, 0.0, 0.0),
                                     with_log=True)
        assert set(np.unique(log.kind_names)) == {"cm"}
        q2 = (log.q**2).sum(axis=1)
        total += q2[q2 < cut**2].sum()
        length += 20e3
    assert total / length == pytest.approx(expected, rel=0.10)


# ---------------------------------------------------------------------------
# dechanneling detection and fits


def _record(eperp, U0):
    eperp = np.asarray(eperp, float)
    return TrajectoryRecord(index=0, depth_nm=np.arange(eperp.size) * 10.0, eperp=eperp, U0=U0,
                            dechannel_depth_nm=None, final=np.zeros(4), stats={}, entry=(0.0, 0.0, 0.0, 0.0))


def test_detect_threshold_is_strict():
    U0 = 20.0
    assert detect_dechanneling(_record([1.0, 5.0, U0, 3.0], U0)) is None
    assert detect_dechanneling(_record([1.0, 5.0, U0 * (1 + 1e-12), 3.0], U0)) == 20.0
    assert detect_dechanneling(_record([1.0, 5.0, U0 * (1 - 1e-12), 3.0], U0)) is None


def test_large_kink_at_potential_minimum_dechannels(positron_setup, si):
    q_c = math.sqrt(2 * E_BEAM * positron_setup.U0 * 1e-6)
    x_min = si.interplanar_spacing / 2
    assert eperp_of(positron_setup, x_min, 0.0, 1.001 * q_c, 0.0) > positron_setup.U0
    assert eperp_of(positron_setup, x_min, 0.0, 0.999 * q_c, 0.0) < positron_setup.U0
    hist = [0.0, 0.0, (1.001 * q_c) ** 2 * 1e6 / (2 * E_BEAM)]
    assert detect_dechanneling(_record(hist, positron_setup.U0)) == 20.0


def test_synthetic_exponential_fit():
    rng = np.random.default_rng(21)
    L = 5.0
    z, frac, err = survival_curve(rng.exponential(L, 3000), 10.0)
    fit = estimate_dechanneling_length(z, frac, 3000, stderr=err)
    assert fit.ok
    assert abs(fit.length_um - L) < 2 * fit.length_err_um
    assert fit.covariance.shape == (2, 2)


def test_fit_flags():
    z, frac, err = survival_curve([None] * 50, 10.0)
    assert estimate_dechanneling_length(z, frac, 50).flag == "no decay"
    z, frac, err = survival_curve([None] * 49 + [9.0], 10.0)
    assert estimate_dechanneling_length(z, frac, 50).flag == "too few events"


def test_zero_collisions_no_decay(electron_setup):
    res = run_ensemble(electron_setup, "scm", 8, 2.0, seed=1, options=engine.default_options(collisions=0.0))
    channeled = [r.dechannel_depth_nm is None for r in res.records]
    assert res.fit.flag == "no decay" or all(channeled)
    assert res.fit.flag == "no decay"


def test_doubling_rates_halves_length(electron_setup):
    n = 200
    fits = []
    for scale, depth in ((2.0, 5.0), (4.0, 2.5)):
        res = run_ensemble(electron_setup, "scm", n, depth, seed=5, options=engine.default_options(collisions=scale))
        assert res.fit.ok
        fits.append(res.fit)
    ratio = fits[1].length_um / fits[0].length_um
    err = ratio * math.hypot(fits[0].length_err_um / fits[0].length_um, fits[1].length_err_um / fits[1].length_um)
    assert abs(ratio - 0.5) < 3 * err


def test_ensemble_independent_of_threads(electron_setup):
    a = run_ensemble(electron_setup, "scm", 6, 1.0, seed=9, threads=1)
    b = run_ensemble(electron_setup, "scm", 6, 1.0, seed=9, threads=2)
    assert np.array_equal(a.fraction, b.fraction)
    for ra, rb in zip(a.records, b.records):
        assert np.array_equal(ra.eperp, rb.eperp)
        assert np.array_equal(ra.final, rb.final)


def test_ensemble_rejects_bad_input(electron_setup):
    from thornsim.core import ConfigurationError

    with pytest.raises(ConfigurationError):
        run_ensemble(electron_setup, "xyz", 2, 1.0, seed=1)
    with pytest.raises(ConfigurationError):
        run_ensemble(electron_setup, "scm", 0, 1.0, seed=1)


# ---------------------------------------------------------------------------
# correlated vibrations


def test_correlation_split(si):
    m = PhononCorrelationModel.for_crystal(si, 10 * si.lattice_constant)
    assert m.u_long**2 + m.u_short**2 == pytest.approx(si.u1**2, rel=1e-12)
    assert m.u_long**2 == pytest.approx(0.2 * si.u1**2, rel=1e-12)
    inf = PhononCorrelationModel.for_crystal(si, math.inf)
    assert inf.u_long == 0.0 and inf.u_short == si.u1
    field_ = correlated_displacement_field(si, math.inf, np.random.default_rng(1))
    assert np.all(field_.displacement(np.random.default_rng(2).random((10, 3))) == 0.0)
    with pytest.raises(DomainError):
        PhononCorrelationModel.for_crystal(si, 0.5 * si.lattice_constant)
    with pytest.raises(DomainError):
        correlated_displacement_field(si, 0.1, np.random.default_rng(1))


@pytest.mark.parametrize("factor", [3.0, 10.0, 100.0])
def test_per_site_variance_is_u1_squared(si, factor):
    model = PhononCorrelationModel.for_crystal(si, factor * si.lattice_constant)
    rng = np.random.default_rng(int(factor))
    acc, count = 0.0, 0
    for _ in range(4000):
        f = correlated_displacement_field(si, model.lambda_c, rng, model=model)
        pts = rng.random((50, 3)) * 1e6
        u = f.displacement(pts) + rng.normal(0.0, model.u_short, (50, 3))
        acc += np.sum(u**2)
        count += u.size
    assert acc / count == pytest.approx(si.u1**2, rel=0.01)


def test_centreline_is_smooth(si):
    rng = np.random.default_rng(5)
    radii = [correlated_displacement_field(si, 10 * si.lattice_constant, rng).curvature_radius(10e3)
             for _ in range(20)]
    assert min(radii) > 100 * si.interplanar_spacing


def test_correlated_trajectories_follow_centreline(si):
    model = PhononCorrelationModel.for_crystal(si, 10 * si.lattice_constant)
    setup = build_setup(si, BeamConfig("electron", E_BEAM), ("scm",), correlations=model)
    assert setup.effective_crystal.u1 == pytest.approx(model.u_short)
    a, _ = run_scm_trajectory(setup, RandomStream(1, 0), 1.0)
    b, _ = run_scm_trajectory(setup, RandomStream(1, 0), 1.0)
    assert np.array_equal(a.eperp, b.eperp)
