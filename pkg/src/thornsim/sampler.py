"""Collision probabilities and random draws for the semi-classical model.

The :class:`CollisionKernel` packs every table the transport engines need
into plain arrays: total cross sections against |u_T| and |s_T|, projected
orbital densities, and stacks of (|q|, azimuth) CDFs at a ladder of |u_T|
and |s_T| nodes.  Draws between nodes use a two-node mixture.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Tuple

import numba as nb
import numpy as np
from scipy import special
from scipy.interpolate import CubicSpline

from .core import HBARC_MEV_NM, CrystalModel, DomainError
from .potentials import RadialOrbital, ScreeningModel
from .xsection import (
    DEFAULT_ELECTRON_SCREENING,
    DifferentialXS,
    FormFactorModel,
    born_atom_stack,
    born_electron_stack,
    electron_kinematic_cap,
    log_q_edges,
)


@dataclass(frozen=True)
class RandomStream:
    """Counter-based stream: (master seed, trajectory index) -> independent generator.

    Extra ``tags`` select named sub-streams of the same trajectory, so that
    e.g. the entry condition can be shared between models.
    """

    seed: int
    index: int

    def generator(self, *tags: int) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.index), *map(int, tags)))
        return np.random.Generator(np.random.PCG64(ss))


ENTRY_STREAM = 0
EVENT_STREAM = 1


# ---------------------------------------------------------------------------
# elementary draws


def sample_displacement(u1: float, rng: np.random.Generator, size=None) -> np.ndarray:
    """Isotropic Gaussian thermal displacement, per-axis width u1 (nm)."""
    if not u1 > 0:
        raise DomainError("u1 must be positive")
    shape = (3,) if size is None else (size, 3)
    return rng.normal(0.0, u1, shape)


def _isotropic(rng, n):
    cos_t = rng.uniform(-1.0, 1.0, n)
    phi = rng.uniform(0.0, 2.0 * math.pi, n)
    sin_t = np.sqrt(1.0 - cos_t**2)
    return np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t], axis=-1)


def sample_electron_offset(orbital: RadialOrbital, rng: np.random.Generator, size=None) -> np.ndarray:
    """Electron position relative to its nucleus drawn from |psi|^2 (nm)."""
    n = 1 if size is None else size
    r = orbital.sample_radius(rng, n)
    out = r[:, None] * _isotropic(rng, n)
    return out[0] if size is None else out


def sample_q(xs: DifferentialXS, rng: np.random.Generator, size=None) -> np.ndarray:
    """Momentum transfer (MeV, lab 2-vector) drawn from a binned cross section.

    |q| by inverse CDF over the bins (log-uniform within a bin), then the
    azimuth from the conditional CDF of that |q| bin (uniform within a bin).
    """
    if not xs.total > 0:
        raise DomainError("cannot sample from a cross section with zero total")
    n = 1 if size is None else size
    radial = xs.mass.sum(axis=1)
    cdf = np.concatenate([[0.0], np.cumsum(radial)]) / radial.sum()
    u = rng.random(n)
    iq = np.clip(np.searchsorted(cdf, u, side="right") - 1, 0, radial.size - 1)
    lq = np.log(xs.q_edges)
    q = np.exp(lq[iq] + rng.random(n) * (lq[iq + 1] - lq[iq]))
    rows = xs.mass[iq]
    rc = np.cumsum(rows, axis=1)
    rc = rc / rc[:, -1:]
    v = rng.random(n)
    ip = np.minimum((rc < v[:, None]).sum(axis=1), xs.mass.shape[1] - 1)
    ph = xs.phi_edges[ip] + rng.random(n) * (xs.phi_edges[ip + 1] - xs.phi_edges[ip])
    a = xs.axis
    base = np.arctan2(a[1], a[0])
    out = np.stack([q * np.cos(ph + base), q * np.sin(ph + base)], axis=-1)
    return out[0] if size is None else out


# ---------------------------------------------------------------------------
# numba table helpers


@nb.njit(cache=True, nogil=True)
def uniform_spline_eval(x, x0, h, coef):
    """Evaluate a CubicSpline (coefficients ``coef`` (4, n)) on a uniform grid; clamps to the ends."""
    n = coef.shape[1]
    t = (x - x0) / h
    i = int(math.floor(t))
    if i < 0:
        i = 0
    elif i > n - 1:
        i = n - 1
    dx = x - (x0 + i * h)
    if dx > h:
        dx = h
    return ((coef[0, i] * dx + coef[1, i]) * dx + coef[2, i]) * dx + coef[3, i]


@nb.njit(cache=True, nogil=True)
def log_table_eval(b, lb0, dlb, vals):
    """Linear interpolation in ln b; zero beyond the last node, clamped below the first."""
    if b <= 0.0:
        return vals[0]
    t = (math.log(b) - lb0) / dlb
    if t <= 0.0:
        return vals[0]
    n = vals.size
    if t >= n - 1:
        return 0.0
    i = int(t)
    f = t - i
    return vals[i] * (1.0 - f) + vals[i + 1] * f


@nb.njit(cache=True, nogil=True)
def sample_stack(node_lo, node_hi, w_hi, cdf_q, cdf_phi, lnq_edges, phi_edges, rng):
    """Draw (|q|, phi) from a two-node mixture of stacked binned tables; phi in [-pi, pi]."""
    node = node_hi if rng.random() < w_hi else node_lo
    u = rng.random()
    row = cdf_q[node]
    # binary search for the |q| bin
    lo = 0
    hi = row.size - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if row[mid] <= u:
            lo = mid
        else:
            hi = mid
    iq = lo
    q = math.exp(lnq_edges[iq] + rng.random() * (lnq_edges[iq + 1] - lnq_edges[iq]))
    prow = cdf_phi[node, iq]
    v = rng.random()
    lo = 0
    hi = prow.size - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if prow[mid] <= v:
            lo = mid
        else:
            hi = mid
    ph = phi_edges[lo] + rng.random() * (phi_edges[lo + 1] - phi_edges[lo])
    if rng.random() < 0.5:
        ph = -ph
    return q, ph


def _spline_coef(x, y):
    cs = CubicSpline(x, y)
    return np.ascontiguousarray(cs.c)


def _log_table(func, b_lo, b_hi, n=2048):
    b = np.geomspace(b_lo, b_hi, n)
    return math.log(b_lo), math.log(b[1] / b[0]), np.ascontiguousarray(func(b), dtype=float)


def _stack(tables):
    """Fold (node, nq, nphi) mass tables onto [0, pi] and build CDF stacks."""
    mass = np.asarray(tables)  # (node, nq, nphi)
    n_phi = mass.shape[2]
    half = n_phi // 2
    folded = mass[:, :, :half] + mass[:, :, half:][:, :, ::-1]
    radial = folded.sum(axis=2)
    totals = radial.sum(axis=1)
    cdf_q = np.concatenate([np.zeros((mass.shape[0], 1)), np.cumsum(radial, axis=1)], axis=1)
    cdf_q /= np.where(totals > 0, totals, 1.0)[:, None]
    cdf_q[:, -1] = 1.0
    pc = np.concatenate([np.zeros(folded.shape[:2] + (1,)), np.cumsum(folded, axis=2)], axis=2)
    rs = pc[:, :, -1:]
    pc = np.where(rs > 0, pc / np.where(rs > 0, rs, 1.0), np.linspace(0, 1, half + 1)[None, None, :])
    phi_edges = np.linspace(0.0, math.pi, half + 1)
    return np.ascontiguousarray(cdf_q), np.ascontiguousarray(pc), phi_edges, totals


# ---------------------------------------------------------------------------
# collision kernel


@dataclass(frozen=True)
class CollisionKernel:
    """Pre-tabulated per-site collision data (see module docstring).

    Vibration tables live on a uniform |u_T| grid over [0, vib_range];
    orbital k tables on a uniform |s_T| grid over [0, s_range[k]].
    """

    u1: float
    vib_range: float
    sigma_A_coef: np.ndarray  # (4, n-1) spline coefficients, nm^2
    vib_nodes: np.ndarray
    vib_cdf_q: np.ndarray
    vib_cdf_phi: np.ndarray
    vib_lnq: np.ndarray
    phi_edges: np.ndarray
    occupancy: np.ndarray  # (n_orb,)
    betas: np.ndarray
    s_range: np.ndarray  # (n_orb,)
    sigma_e_coef: np.ndarray  # (n_orb, 4, n-1)
    proj_lb0: np.ndarray  # (n_orb,)
    proj_dlb: np.ndarray
    proj_vals: np.ndarray  # (n_orb, m)
    e_cdf_q: np.ndarray  # (n_orb, node, nq+1)
    e_cdf_phi: np.ndarray  # (n_orb, node, nq, nphi+1)
    e_lnq: np.ndarray
    q_cap: float
    screening_length: float
    params: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return self.vib_nodes.size

    def sigma_A(self, abs_u):
        """Interpolated atomic-thorn total cross section, nm^2."""
        abs_u = np.asarray(abs_u, dtype=float)
        h = self.vib_range / (self.n_nodes - 1)
        f = np.vectorize(lambda x: uniform_spline_eval(min(x, self.vib_range), 0.0, h, self.sigma_A_coef))
        return f(abs_u)

    def sigma_k(self, k: int, abs_s):
        abs_s = np.asarray(abs_s, dtype=float)
        h = self.s_range[k] / (self.n_nodes - 1)
        coef = self.sigma_e_coef[k]
        f = np.vectorize(lambda x: uniform_spline_eval(min(x, self.s_range[k]), 0.0, h, coef))
        return f(abs_s)

    def projected_density(self, k: int, b):
        f = np.vectorize(lambda x: log_table_eval(x, self.proj_lb0[k], self.proj_dlb[k], self.proj_vals[k]))
        return f(np.asarray(b, dtype=float))


def build_kernel(crystal: CrystalModel, E: float, screening_length: float = DEFAULT_ELECTRON_SCREENING,
                 neighbourhood: float = 0.5, n_nodes: int = 64, per_decade: int = 64, n_phi: int = 64,
                 ff: Optional[FormFactorModel] = None, n_gauss: int = 3) -> CollisionKernel:
    """Tabulate the SCM collision kernel for a crystal and beam energy (MeV)."""
    return _build_kernel_cached(crystal, float(E), float(screening_length), float(neighbourhood), int(n_nodes),
                                int(per_decade), int(n_phi), ff, int(n_gauss))


@lru_cache(maxsize=8)
def _build_kernel_cached(crystal, E, screening_length, neighbourhood, n_nodes, per_decade, n_phi, ff, n_gauss):
    if ff is None:
        ff = FormFactorModel.for_crystal(crystal)
    u1 = crystal.u1
    q_cap = electron_kinematic_cap(E)
    # vibration stack
    vib_range = 6.0 * u1
    vib_nodes = np.linspace(0.0, vib_range, n_nodes)
    mu_N = ff.nuclear_regulator or 1e3 / u1
    vib_edges = log_q_edges(1e-5, min(5.0 * mu_N * HBARC_MEV_NM, 1e4), per_decade)
    vib_cdf_q, vib_cdf_phi, phi_edges, sig_A = _stack(born_atom_stack(vib_nodes, ff, u1, vib_edges, n_phi,
                                                                      n_gauss=n_gauss))
    # electron stacks
    q_s = HBARC_MEV_NM / screening_length
    betas = np.array([o.beta for o, _ in ff.orbitals])
    occ = np.array([n for _, n in ff.orbitals], dtype=float)
    e_edges = log_q_edges(1e-3 * q_s, q_cap, per_decade)
    s_range = np.minimum(neighbourhood, 12.0 / betas)
    e_cq, e_cp, sig_e, proj = [], [], [], []
    for k, (orb, _) in enumerate(ff.orbitals):
        cq, cp, _, tot = _stack(born_electron_stack(np.linspace(0.0, s_range[k], n_nodes), ff, k, screening_length,
                                                    e_edges, n_phi, n_gauss=n_gauss))
        e_cq.append(cq)
        e_cp.append(cp)
        sig_e.append(_spline_coef(np.linspace(0.0, s_range[k], n_nodes), tot))
        proj.append(_log_table(orb.projected_density, 1e-6 / orb.beta, s_range[k]))
    return CollisionKernel(
        u1=u1,
        vib_range=vib_range,
        sigma_A_coef=_spline_coef(vib_nodes, sig_A),
        vib_nodes=vib_nodes,
        vib_cdf_q=vib_cdf_q,
        vib_cdf_phi=vib_cdf_phi,
        vib_lnq=np.log(vib_edges),
        phi_edges=phi_edges,
        occupancy=occ,
        betas=betas,
        s_range=s_range,
        sigma_e_coef=np.ascontiguousarray(np.stack(sig_e)),
        proj_lb0=np.array([p[0] for p in proj]),
        proj_dlb=np.array([p[1] for p in proj]),
        proj_vals=np.ascontiguousarray(np.stack([p[2] for p in proj])),
        e_cdf_q=np.ascontiguousarray(np.stack(e_cq)),
        e_cdf_phi=np.ascontiguousarray(np.stack(e_cp)),
        e_lnq=np.log(e_edges),
        q_cap=q_cap,
        screening_length=screening_length,
        params={"E": E, "Z": crystal.Z, "neighbourhood": neighbourhood},
    )


# ---------------------------------------------------------------------------
# per-site probabilities


@nb.njit(cache=True, nogil=True)
def _p_vib(dx, dy, u1, vib_range, coef):
    d = math.sqrt(dx * dx + dy * dy)
    if d >= vib_range:
        return 0.0
    h = vib_range / (coef.shape[1])
    g = math.exp(-0.5 * d * d / (u1 * u1)) / (2.0 * math.pi * u1 * u1)
    return g * uniform_spline_eval(d, 0.0, h, coef)


@nb.njit(cache=True, nogil=True)
def _p_e_orbital(b, k, occupancy, s_range, sigma_e_coef, proj_lb0, proj_dlb, proj_vals):
    if b >= s_range[k]:
        return 0.0
    h = s_range[k] / sigma_e_coef.shape[2]
    sig = uniform_spline_eval(b, 0.0, h, sigma_e_coef[k])
    return occupancy[k] * sig * log_table_eval(b, proj_lb0[k], proj_dlb[k], proj_vals[k])


def p_vib(r_T, mean_site_T, kernel: CollisionKernel) -> float:
    """Per-crossing probability of an atomic-thorn collision (approximation: u_T = r_T - mean site)."""
    d = np.asarray(r_T, dtype=float)[:2] - np.asarray(mean_site_T, dtype=float)[:2]
    return float(_p_vib(d[0], d[1], kernel.u1, kernel.vib_range, kernel.sigma_A_coef))


def p_e(b_A, kernel: CollisionKernel, convolved: bool = False, n_quad: int = 24) -> float:
    """Per-crossing probability of an electronic-thorn collision, summed over orbitals.

    ``b_A`` is the impact parameter to the instantaneous nucleus.  With
    ``convolved`` it is the offset to the mean site instead, and the result
    is averaged over the Gaussian nuclear displacement.  The average is the
    radial convolution int b db p(b) exp(-(b - d)^2 / 2u1^2) I0(b d / u1^2) / u1^2,
    done with ``n_quad`` Gauss-Legendre nodes per log-spaced panel.
    """
    b_A = np.asarray(b_A, dtype=float)[:2]

    def direct(b):
        return sum(
            _p_e_orbital(b, k, kernel.occupancy, kernel.s_range, kernel.sigma_e_coef, kernel.proj_lb0,
                         kernel.proj_dlb, kernel.proj_vals)
            for k in range(kernel.occupancy.size)
        )

    d = math.hypot(b_A[0], b_A[1])
    if not convolved:
        return float(direct(d))
    u1 = kernel.u1
    hi = min(d + 12.0 * u1, float(kernel.s_range.max()))
    lo = 1e-6 * u1
    if hi <= lo:
        return 0.0
    # panels in ln b, split at the orbital table edges and around the offset
    cuts = {math.log(lo), math.log(hi)}
    for c in list(kernel.s_range) + [d - 3 * u1, d, d + 3 * u1, u1]:
        if lo < c < hi:
            cuts.add(math.log(c))
    edges = sorted(cuts)
    fine = []
    for a, b in zip(edges[:-1], edges[1:]):
        n = max(1, int(math.ceil((b - a) / 0.5)))
        fine.extend(np.linspace(a, b, n + 1)[:-1])
    fine.append(edges[-1])
    x, w = np.polynomial.legendre.leggauss(n_quad)
    total = 0.0
    for a, b in zip(fine[:-1], fine[1:]):
        t = 0.5 * (b - a) * (x + 1.0) + a
        r = np.exp(t)
        kern = np.exp(-((r - d) ** 2) / (2.0 * u1 * u1)) * special.i0e(r * d / (u1 * u1)) / (u1 * u1)
        vals = np.array([direct(ri) for ri in r])
        total += 0.5 * (b - a) * float(np.sum(w * r * r * vals * kern))
    return float(total)
