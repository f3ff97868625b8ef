import math

import numpy as np
import pytest
from scipy import special, stats

from thornsim.core import HBARC_MEV_NM, DomainError
from thornsim.potentials import RadialOrbital
from thornsim.sampler import (
    RandomStream,
    build_kernel,
    p_e,
    p_vib,
    sample_displacement,
    sample_electron_offset,
    sample_q,
)
from thornsim.xsection import (
    DifferentialXS,
    atom_xs_table,
    born_dsigma_atom,
    born_dsigma_atom_averaged,
    sigma_atom_total,
    sigma_electron_total,
)

N = 10**6


@pytest.fixture(scope="module")
def kernel(si):
    return build_kernel(si, 1000.0)


@pytest.fixture(scope="module")
def vib_table(si, ff):
    return atom_xs_table([si.u1, 0.0], ff, si.u1, per_decade=32)


def _radial_chi2(counts, expected):
    # merge sparse tail bins so every expected count is >= 5
    obs, exp = [], []
    acc_o = acc_e = 0.0
    for o, e in zip(counts, expected):
        acc_o += o
        acc_e += e
        if acc_e >= 5:
            obs.append(acc_o)
            exp.append(acc_e)
            acc_o = acc_e = 0.0
    obs[-1] += acc_o
    exp[-1] += acc_e
    exp = np.array(exp) * (np.sum(obs) / np.sum(exp))
    return stats.chisquare(obs, exp).pvalue


def test_stream_reproducible():
    a = RandomStream(7, 3).generator(1).random(5)
    b = RandomStream(7, 3).generator(1).random(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, RandomStream(7, 4).generator(1).random(5))
    assert not np.array_equal(a, RandomStream(7, 3).generator(0).random(5))


def test_streams_uncorrelated():
    x = RandomStream(1, 0).generator().random(N)
    y = RandomStream(1, 1).generator().random(N)
    assert abs(np.corrcoef(x, y)[0, 1]) < 3 / math.sqrt(N)


def test_sample_q_marginal(vib_table):
    q = sample_q(vib_table, RandomStream(11, 0).generator(), N)
    counts, _ = np.histogram(np.linalg.norm(q, axis=1), vib_table.q_edges)
    expected = vib_table.mass.sum(axis=1) / vib_table.total * N
    assert _radial_chi2(counts, expected) > 0.01


def test_sample_q_joint(vib_table):
    q = sample_q(vib_table, RandomStream(12, 0).generator(), N)
    mag = np.linalg.norm(q, axis=1)
    phi = np.mod(np.arctan2(q[:, 1], q[:, 0]), 2 * math.pi)
    # coarse joint bins: 8 |q| groups x 8 azimuth sectors
    qg = np.array_split(np.arange(vib_table.mass.shape[0]), 8)
    pg = np.array_split(np.arange(vib_table.mass.shape[1]), 8)
    exp = np.array([[vib_table.mass[np.ix_(a, b)].sum() for b in pg] for a in qg]) / vib_table.total * N
    iq = np.searchsorted(vib_table.q_edges, mag, side="right") - 1
    ip = np.minimum((phi / (2 * math.pi) * vib_table.mass.shape[1]).astype(int), vib_table.mass.shape[1] - 1)
    gq = np.concatenate([np.full(a.size, i) for i, a in enumerate(qg)])[iq]
    gp = np.concatenate([np.full(b.size, i) for i, b in enumerate(pg)])[ip]
    obs = np.zeros((8, 8))
    np.add.at(obs, (gq, gp), 1)
    keep = exp > 5
    assert stats.chisquare(obs[keep], exp[keep] * obs[keep].sum() / exp[keep].sum()).pvalue > 0.01


def test_sample_q_zero_mean(vib_table):
    q = sample_q(vib_table, RandomStream(13, 0).generator(), N)
    se = q.std(axis=0) / math.sqrt(N)
    assert np.all(np.abs(q.mean(axis=0)) < 3 * se)


def test_sample_q_azimuthal_asymmetry(si, ff):
    # the table is built along u = (0.6, 0.8) u1; the sampled cos 2(phi - phi_u) must match quadrature
    u = si.u1 * np.array([0.6, 0.8])
    xs = atom_xs_table(u, ff, si.u1, per_decade=32)
    q = sample_q(xs, RandomStream(14, 0).generator(), N)
    uhat = u / np.linalg.norm(u)
    cosang = (q @ uhat) / np.linalg.norm(q, axis=1)
    c2 = 2 * cosang**2 - 1
    # direct quadrature over (ln q, phi) of the closed-form cross section
    lq = np.linspace(math.log(xs.q_edges[0]), math.log(xs.q_edges[-1]), 4001)
    qq = np.exp(lq)
    phi = (np.arange(256) + 0.5) * 2 * math.pi / 256
    qv = np.stack([qq[:, None] * np.cos(phi)[None, :], qq[:, None] * np.sin(phi)[None, :]], -1)
    ds = born_dsigma_atom(qv, np.array([np.linalg.norm(u), 0.0]), ff, si.u1) * qq[:, None] ** 2
    w = np.trapezoid(ds, lq, axis=0)
    expect = np.sum(w * np.cos(2 * phi)) / np.sum(w)
    se = c2.std() / math.sqrt(N)
    assert abs(c2.mean() - expect) < 3 * se
    assert abs(expect) > 10 * se  # the asymmetry is resolved, not just noise
    # signed projection along u vanishes (cross section even under q -> -q)
    proj = q @ uhat
    assert abs(proj.mean()) < 3 * proj.std() / math.sqrt(N)


def test_sample_q_moments(si, ff, vib_table):
    q = sample_q(vib_table, RandomStream(15, 0).generator(), N)
    mag = np.linalg.norm(q, axis=1)
    from scipy import integrate

    def moment(p):
        f = lambda t: 2 * math.pi * math.exp(t) ** (2 + p) * float(
            born_dsigma_atom_averaged(math.exp(t), si.u1, ff, si.u1))
        edges = np.linspace(math.log(vib_table.q_edges[0]), math.log(vib_table.q_edges[-1]), 61)
        return sum(integrate.quad(f, a, b, epsrel=1e-10)[0] for a, b in zip(edges[:-1], edges[1:]))

    sig = moment(0)
    m1, m2 = moment(1) / sig, moment(2) / sig
    assert abs(mag.mean() - m1) < 3 * mag.std() / math.sqrt(N)
    assert abs((mag**2).mean() - m2) < 3 * (mag**2).std() / math.sqrt(N)


def test_sample_q_degenerate():
    xs = DifferentialXS(np.array([1.0, 2.0]), np.array([0.0, 2 * math.pi]), np.zeros((1, 1)), np.zeros((1, 1, 2)))
    with pytest.raises(DomainError):
        sample_q(xs, np.random.default_rng(0))


# displacements and offsets


def test_displacement_statistics():
    u1 = 0.0075
    u = sample_displacement(u1, RandomStream(21, 0).generator(), N)
    assert np.allclose(u.var(axis=0), u1**2, rtol=0.01)
    assert (u**2).sum(axis=1).mean() == pytest.approx(3 * u1**2, rel=0.01)
    c = np.corrcoef(u.T)
    assert np.all(np.abs(c[np.triu_indices(3, 1)]) < 3 / math.sqrt(N))
    with pytest.raises(DomainError):
        sample_displacement(0.0, np.random.default_rng(0))


@pytest.mark.parametrize("k", [-1, 0, 1])
def test_offset_radial_distribution(k):
    orb = RadialOrbital(k, 40.0)
    s = sample_electron_offset(orb, RandomStream(22, k + 1).generator(), N)
    r = np.linalg.norm(s, axis=1)
    edges = np.concatenate([np.linspace(0, 4 * orb.mean_radius, 81), [np.inf]])
    counts, _ = np.histogram(r, edges)
    expected = np.diff(orb.enclosed(edges)) * N
    assert _radial_chi2(counts, expected) > 0.01
    se = s.std(axis=0) / math.sqrt(N)
    assert np.all(np.abs(s.mean(axis=0)) < 3 * se)


def test_offset_tail():
    orb = RadialOrbital(-1, 40.0)
    r = np.linalg.norm(sample_electron_offset(orb, RandomStream(23, 0).generator(), N), axis=1)
    tail = 1.0 - float(orb.enclosed(10 * orb.mean_radius))
    assert tail < 1e-6
    assert np.count_nonzero(r > 10 * orb.mean_radius) / N < 1e-5


# per-site probabilities


def test_p_vib_on_site(kernel, si):
    on = p_vib([0.0, 0.0], [0.0, 0.0], kernel)
    assert on > 0
    far = p_vib([5 * si.u1, 0.0], [0.0, 0.0], kernel)
    assert far < 1e-4 * on


def test_sigma_tables_accurate(kernel, si, ff):
    for u in (0.0, 0.5 * si.u1, 2.3 * si.u1):
        assert float(kernel.sigma_A(u)) == pytest.approx(sigma_atom_total(u, ff, si.u1), rel=1e-3)
    for k in range(3):
        s = 0.3 * kernel.s_range[k]
        ref = sigma_electron_total(s, ff, k, q_max=kernel.q_cap)
        assert float(kernel.sigma_k(k, s)) == pytest.approx(ref, rel=1e-3)


def test_p_vib_plane_integral(kernel, si, ff):
    x, w = np.polynomial.legendre.leggauss(48)
    r = 3 * si.u1 * (x + 1)
    wr = 3 * si.u1 * w
    integral = sum(wi * 2 * math.pi * ri * p_vib([ri, 0.0], [0.0, 0.0], kernel) for ri, wi in zip(r, wr))
    g = np.exp(-0.5 * (r / si.u1) ** 2) / (2 * math.pi * si.u1**2)
    averaged = sum(wi * 2 * math.pi * ri * gi * sigma_atom_total(ri, ff, si.u1) for ri, wi, gi in zip(r, wr, g))
    assert integral == pytest.approx(averaged, rel=0.01)


def test_p_e_far_field(kernel):
    assert p_e([1.0, 0.0], kernel) == 0.0
    b = [0.005, 0.05, 0.2, 0.45]
    vals = [p_e([v, 0.0], kernel) for v in b]
    assert np.all(np.diff(vals) < 0)
    assert vals[-1] < 5e-3 * vals[0]


def test_p_e_convolved_rotation(kernel):
    r = 0.012
    vals = [p_e([r * math.cos(a), r * math.sin(a)], kernel, convolved=True) for a in np.linspace(0, math.pi / 2, 7)]
    assert np.ptp(vals) < 1e-6 * np.mean(vals)
    # and it is a proper average: close to the direct value away from the nucleus
    assert vals[0] == pytest.approx(p_e([r, 0.0], kernel), rel=0.1)


def test_p_e_plane_integral(kernel, ff):
    # int d^2b p_e = sum_k n_k int d^2s rho_k(s) sigma_k(s), the oracle using direct quadratures
    cuts = sorted({1e-7, 1e-4, 1e-3, 0.01, *map(float, kernel.s_range)})
    x, w = np.polynomial.legendre.leggauss(24)
    total = ref = 0.0
    for a, b in zip(np.log(cuts[:-1]), np.log(cuts[1:])):
        t = 0.5 * (b - a) * (x + 1) + a
        wt = 0.5 * (b - a) * w
        for bi, wi in zip(np.exp(t), wt):
            area = wi * 2 * math.pi * bi * bi
            total += area * p_e([bi, 0.0], kernel)
            for k, (orb, occ) in enumerate(ff.orbitals):
                if bi < kernel.s_range[k]:
                    sig = sigma_electron_total(bi, ff, k, q_max=kernel.q_cap, q_min=math.exp(kernel.e_lnq[0]))
                    ref += area * occ * float(orb.projected_density(bi)[0]) * sig
    assert total == pytest.approx(ref, rel=0.01)
