"""Born and eikonal cross sections on thorns, sum rules and dechanneling estimates.

Momenta are in MeV, lengths in nm, cross sections in nm^2 and differential
cross sections dsigma/d^2q in nm^2/MeV^2.  Internally most integrals run
over the wavenumber k = q / hbar c (nm^-1).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, optimize, special

from .core import (
    ALPHA,
    ELECTRON_MASS,
    HBARC_EV_NM,
    HBARC_MEV_NM,
    CrystalModel,
    DomainError,
    ConfigurationError,
    critical_parameters,
)
from .potentials import (
    PhenomenologicalThorn,
    RadialOrbital,
    ScreeningModel,
    SphericalTerm,
    _Thorn,
)

# Born prefactor: dsigma/d^2q [nm^2/MeV^2] = BORN * |U~ / hbar c_eV|^2 with U~ in eV nm^3
_BORN = 1.0 / (4.0 * math.pi**2 * HBARC_MEV_NM**2)


class QuadratureError(RuntimeError):
    """An adaptive quadrature failed to converge."""


def _quad(f, a, b, *, rel=1e-9, limit=400, what="integral", **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(f, a, b, epsabs=0.0, epsrel=rel, limit=limit, **kw)
        except integrate.IntegrationWarning as exc:
            if "roundoff" in str(exc):
                # precision floor reached; the estimate is as good as double allows
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", integrate.IntegrationWarning)
                    return integrate.quad(f, a, b, epsabs=0.0, epsrel=rel, limit=limit, **kw)
            raise QuadratureError(f"{what} did not converge on [{a:.4g}, {b:.4g}]: {exc}") from None
    return val, err


def _log_quad(f, k_lo, k_hi, breaks=(), rel=1e-9, what="integral", span=1.5):
    """int_{k_lo}^{k_hi} f(k) dk, integrated in ln k with optional breakpoints."""
    pts = sorted({math.log(k_lo), math.log(k_hi), *[math.log(b) for b in breaks if k_lo < b < k_hi]})
    total = err = 0.0
    g = lambda t: f(math.exp(t)) * math.exp(t)
    for a, b in zip(pts[:-1], pts[1:]):
        # further split long stretches so oscillatory factors stay resolved
        n = max(1, int(math.ceil((b - a) / span)))
        edges = np.linspace(a, b, n + 1)
        for lo, hi in zip(edges[:-1], edges[1:]):
            v, e = _quad(g, lo, hi, rel=rel, what=what)
            total += v
            err += e
    return total, err


# ---------------------------------------------------------------------------
# form factors


@dataclass(frozen=True)
class FormFactorModel:
    """Atomic and orbital form factors.

    ``orbitals`` holds (RadialOrbital, occupancy) pairs whose occupancies sum
    to Z.  With a finite nucleus (``nuclear_regulator`` = 1/r_N) the nuclear
    form factor F_N(q) = mu_N^2 / (k^2 + mu_N^2) replaces 1, so that
    f_A = F_N - sum_k n_k f_k / Z.  All arguments are |q| in MeV.
    """

    Z: int
    orbitals: Tuple[Tuple[RadialOrbital, float], ...]
    nuclear_regulator: Optional[float] = None

    def __post_init__(self):
        occ = sum(n for _, n in self.orbitals)
        if abs(occ - self.Z) > 1e-9 * self.Z:
            raise ConfigurationError(f"orbital occupancies sum to {occ}, expected Z={self.Z}")

    @classmethod
    def from_screening(cls, screening: ScreeningModel, Z: int) -> "FormFactorModel":
        return cls(Z, screening.orbitals(Z), screening.nuclear_regulator)

    @classmethod
    def for_crystal(cls, crystal: CrystalModel) -> "FormFactorModel":
        return cls.from_screening(ScreeningModel.for_crystal(crystal), crystal.Z)

    def nuclear(self, q):
        k = np.asarray(q, dtype=float) / HBARC_MEV_NM
        if self.nuclear_regulator is None:
            return np.ones_like(k)
        return self.nuclear_regulator**2 / (k**2 + self.nuclear_regulator**2)

    def f_k(self, index: int, q):
        k = np.asarray(q, dtype=float) / HBARC_MEV_NM
        return self.orbitals[index][0].form_factor(k)

    def one_minus_f_k(self, index: int, q):
        k = np.asarray(q, dtype=float) / HBARC_MEV_NM
        return self.orbitals[index][0].one_minus_form_factor(k)

    def f_A(self, q):
        # written as sum n (1 - f_k) / Z - (1 - F_N) to keep the q -> 0 limit accurate
        q = np.asarray(q, dtype=float)
        k = q / HBARC_MEV_NM
        deficit = sum(n * self.one_minus_f_k(i, q) for i, (_, n) in enumerate(self.orbitals)) / self.Z
        if self.nuclear_regulator is None:
            return deficit
        return deficit - k**2 / (k**2 + self.nuclear_regulator**2)

    @property
    def n_orbitals(self) -> int:
        return len(self.orbitals)


# ---------------------------------------------------------------------------
# Born cross sections


def born_dsigma_generic(thorn, q, form: str = "potential"):
    """dsigma/d^2q of a thorn in the Born approximation (nm^2/MeV^2).

    ``q`` is a 2- or 3-vector (or an array of them) in MeV.  ``form`` picks
    the potential transform or the charge transform divided by k^2.
    """
    q = np.atleast_2d(np.asarray(q, dtype=float))
    if q.shape[-1] == 2:
        q = np.concatenate([q, np.zeros(q.shape[:-1] + (1,))], axis=-1)
    k = q / HBARC_MEV_NM
    kk = np.linalg.norm(k, axis=-1)
    if np.any(kk == 0):
        if abs(thorn.coulomb_charge) > 1e-12:
            raise DomainError("Born cross section diverges at q = 0 for a charged thorn")
        raise DomainError("q = 0 is not evaluated; the neutral-thorn limit is reached as q -> 0")
    if form == "potential":
        amp = thorn.fourier(k)
    elif form == "charge":
        amp = 4.0 * math.pi * thorn.charge_fourier(k) / kk**2
    else:
        raise ValueError("form must be 'potential' or 'charge'")
    return _BORN * np.abs(amp / HBARC_EV_NM) ** 2


def _one_minus_j0(z):
    z = np.asarray(z, dtype=float)
    zs = np.where(z < 1e-2, z, 0.0)
    return np.where(z < 1e-2, zs**2 / 4.0 - zs**4 / 64.0, 1.0 - special.j0(z))


def _bracket_cos(x, phase):
    """|exp(i phase) - exp(-x)|^2 without cancellation."""
    return np.expm1(-x) ** 2 + 4.0 * np.exp(-x) * np.sin(0.5 * phase) ** 2


def _rutherford_prefactor(Z) -> float:
    """4 (Z alpha hbar c)^2 in MeV^2 nm^2."""
    return 4.0 * (Z * ALPHA * HBARC_MEV_NM) ** 2


def rutherford_dsigma(q, Z: float = 1.0):
    """Unscreened Rutherford dsigma/d^2q = 4 (Z alpha)^2 / q^4, nm^2/MeV^2."""
    q = np.asarray(q, dtype=float)
    return _rutherford_prefactor(Z) / q**4


def born_dsigma_atom(q_T, u_T, ff: FormFactorModel, u1: float):
    """Atomic-thorn cross section 4 [Z alpha f_A / q^2]^2 |exp(i q.u) - exp(-q^2 u1^2 / 2)|^2."""
    q_T = np.asarray(q_T, dtype=float)
    u_T = np.asarray(u_T, dtype=float)
    q = np.linalg.norm(q_T, axis=-1)
    if np.any(q <= 0):
        raise DomainError("|q_T| must be positive")
    phase = (q_T @ u_T if u_T.ndim == 1 else np.sum(q_T * u_T, axis=-1)) / HBARC_MEV_NM
    return _atom_radial(q, ff) * _bracket_cos(0.5 * (q * u1 / HBARC_MEV_NM) ** 2, phase)


def _atom_radial(q, ff: FormFactorModel):
    return _rutherford_prefactor(ff.Z) * (ff.f_A(q) / q**2) ** 2


def _electron_bracket(g, phase):
    return g**2 + 4.0 * (1.0 - g) * np.sin(0.5 * phase) ** 2


def born_dsigma_atom_averaged(q, abs_u_T: float, ff: FormFactorModel, u1: float):
    """Azimuthal average of :func:`born_dsigma_atom` over the direction of q."""
    q = np.asarray(q, dtype=float)
    k = q / HBARC_MEV_NM
    x = 0.5 * (k * u1) ** 2
    dw = np.exp(-x)
    bracket = np.expm1(-x) ** 2 + 2.0 * dw * _one_minus_j0(k * abs_u_T)
    return _rutherford_prefactor(ff.Z) * (ff.f_A(q) / q**2) ** 2 * bracket


DEFAULT_ELECTRON_SCREENING = 0.25  # nm; Yukawa screening length of electronic thorns


def _screened_denominator(q, screening_length):
    qs2 = 0.0 if screening_length is None else (HBARC_MEV_NM / screening_length) ** 2
    return (q**2 + qs2) ** 2


def born_dsigma_electron(q_T, s_T, ff: FormFactorModel, k: int = 0, screening_length: Optional[float] = None):
    """Electronic-thorn cross section 4 alpha^2 |exp(-i q.s) - f_k(q)|^2 / (q^2 + q_s^2)^2.

    q_s = hbar c / screening_length; ``None`` gives the bare 1/q^4 kernel.
    """
    q_T = np.asarray(q_T, dtype=float)
    s_T = np.asarray(s_T, dtype=float)
    q = np.linalg.norm(q_T, axis=-1)
    if np.any(q <= 0):
        raise DomainError("|q_T| must be positive")
    phase = (q_T @ s_T if s_T.ndim == 1 else np.sum(q_T * s_T, axis=-1)) / HBARC_MEV_NM
    g = ff.one_minus_f_k(k, q)
    return _rutherford_prefactor(1) * _electron_bracket(g, phase) / _screened_denominator(q, screening_length)


def born_dsigma_electron_averaged(q, abs_s_T: float, ff: FormFactorModel, k: int = 0,
                                  screening_length: Optional[float] = None):
    q = np.asarray(q, dtype=float)
    g = ff.one_minus_f_k(k, q)
    bracket = g**2 + 2.0 * (1.0 - g) * _one_minus_j0(q / HBARC_MEV_NM * abs_s_T)
    return _rutherford_prefactor(1) * bracket / _screened_denominator(q, screening_length)


def _atom_scales(ff: FormFactorModel, u1: float):
    betas = [o.beta for o, _ in ff.orbitals]
    scales = [min(betas), max(betas), 1.0 / u1]
    if ff.nuclear_regulator is not None:
        scales.append(ff.nuclear_regulator)
    return scales


def sigma_atom_total(abs_u_T: float, ff: FormFactorModel, u1: float, rel: float = 1e-6) -> float:
    """Total atomic-thorn cross section (nm^2) as a function of |u_T|."""
    if abs_u_T < 0:
        raise DomainError("|u_T| must be non-negative")
    scales = _atom_scales(ff, u1)
    k_lo = 1e-4 * min(scales)
    k_hi = 1e3 * (ff.nuclear_regulator or 1e3 / u1)
    f = lambda k: 2.0 * math.pi * k * float(born_dsigma_atom_averaged(k * HBARC_MEV_NM, abs_u_T, ff, u1)) * HBARC_MEV_NM**2
    breaks = scales + ([1.0 / abs_u_T] if abs_u_T > 0 else [])
    val, _ = _log_quad(f, k_lo, k_hi, breaks, rel=rel, what="sigma_atom_total")
    return val


def electron_kinematic_cap(E: float) -> float:
    """Maximum transverse momentum transfer to a free electron at rest (MeV).

    The transfer at 90 degrees in the centre-of-mass frame, sqrt(m_e (E - m_e)).
    """
    return math.sqrt(ELECTRON_MASS * max(E - ELECTRON_MASS, 0.0))


def _electron_q_range(ff, k, screening_length, q_min, q_max):
    beta_q = ff.orbitals[k][0].beta * HBARC_MEV_NM
    if q_min is None:
        if screening_length is None:
            raise DomainError("bare electronic thorns need a lower cutoff q_min (dipole divergence)")
        q_min = 1e-4 * min(HBARC_MEV_NM / screening_length, beta_q)
    if q_max is None:
        q_max = 1e4 * beta_q
    return q_min, q_max


def sigma_electron_total(abs_s_T: float, ff: FormFactorModel, k: int = 0,
                         screening_length: Optional[float] = DEFAULT_ELECTRON_SCREENING,
                         q_max: Optional[float] = None, q_min: Optional[float] = None, rel: float = 1e-6) -> float:
    """Total electronic-thorn cross section (nm^2), up to the kinematic cap ``q_max``."""
    if abs_s_T < 0:
        raise DomainError("|s_T| must be non-negative")
    q_lo, q_hi = _electron_q_range(ff, k, screening_length, q_min, q_max)
    f = lambda q: 2.0 * math.pi * q * float(born_dsigma_electron_averaged(q, abs_s_T, ff, k, screening_length))
    breaks = [ff.orbitals[k][0].beta * HBARC_MEV_NM]
    if screening_length is not None:
        breaks.append(HBARC_MEV_NM / screening_length)
    if abs_s_T > 0:
        breaks.append(HBARC_MEV_NM / abs_s_T)
    val, _ = _log_quad(f, q_lo, q_hi, breaks, rel=rel, what="sigma_electron_total")
    return val


# ---------------------------------------------------------------------------
# tabulated differential cross sections


@dataclass(frozen=True)
class DifferentialXS:
    """Binned dsigma/d^2q on a log |q| by azimuth grid.

    ``mass[i, j]`` is the cross section (nm^2) falling in bin (i, j);
    ``centroid[i, j]`` is the mean q vector (MeV) within the bin.  Azimuths
    are measured from ``axis`` (a unit 2-vector in the lab frame).
    """

    q_edges: np.ndarray
    phi_edges: np.ndarray
    mass: np.ndarray
    centroid: np.ndarray
    axis: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0]))
    params: dict = field(default_factory=dict)
    truncated: float = 0.0  # cross section removed by the kinematic cap, nm^2

    def __post_init__(self):
        if np.any(self.mass < 0):
            raise ValueError("negative bin mass")

    @property
    def total(self) -> float:
        return float(self.mass.sum())

    @property
    def q_centers(self) -> np.ndarray:
        return np.sqrt(self.q_edges[:-1] * self.q_edges[1:])

    @property
    def bin_area(self) -> np.ndarray:
        ring = 0.5 * (self.q_edges[1:] ** 2 - self.q_edges[:-1] ** 2)
        return ring[:, None] * np.diff(self.phi_edges)[None, :]

    @property
    def density(self) -> np.ndarray:
        """Bin-averaged dsigma/d^2q, nm^2/MeV^2."""
        return self.mass / self.bin_area

    def radial_density(self) -> np.ndarray:
        """Azimuthally averaged dsigma/d^2q per |q| bin."""
        return self.mass.sum(axis=1) / (math.pi * (self.q_edges[1:] ** 2 - self.q_edges[:-1] ** 2))

    def lab_centroids(self) -> np.ndarray:
        a = self.axis
        rot = np.array([[a[0], -a[1]], [a[1], a[0]]])
        return self.centroid @ rot.T

    def first_moment(self) -> np.ndarray:
        """int q dsigma, MeV nm^2 (lab frame)."""
        return np.einsum("ij,ijk->k", self.mass, self.lab_centroids())

    def abs_first_moment(self) -> float:
        return float(np.sum(self.mass * np.linalg.norm(self.centroid, axis=-1)))

    def second_moment(self) -> float:
        """int q^2 dsigma, MeV^2 nm^2 (bin-centroid radius squared)."""
        r2 = self._mean_q2()
        return float(np.sum(self.mass * r2))

    def second_moment_tensor(self) -> np.ndarray:
        c = self.lab_centroids()
        m2 = self._mean_q2()
        cc = np.einsum("ijk,ijl->ijkl", c, c)
        # inflate the centroid outer product so its trace matches the bin <q^2>
        n2 = np.sum(c * c, axis=-1)
        scale = np.where(n2 > 0, m2 / np.where(n2 > 0, n2, 1.0), 0.0)
        return np.einsum("ij,ijkl->kl", self.mass * scale, cc)

    def _mean_q2(self):
        lo, hi = self.q_edges[:-1], self.q_edges[1:]
        # <q^2> for a 1/q^2-weighted radial distribution in the bin is a good,
        # scale-free estimate at 256 bins per decade
        mean = (hi**2 - lo**2) / (2.0 * np.log(hi / lo))
        return np.broadcast_to(mean[:, None], self.mass.shape)

    def marginal_cdf(self) -> np.ndarray:
        c = np.concatenate([[0.0], np.cumsum(self.mass.sum(axis=1))])
        return c / c[-1]


def log_q_edges(q_lo: float, q_hi: float, per_decade: int = 256) -> np.ndarray:
    n = max(1, int(math.ceil(per_decade * math.log10(q_hi / q_lo))))
    return np.geomspace(q_lo, q_hi, n + 1)


def tabulate_born(dsigma: Callable, q_edges, n_phi: int = 64, axis=(1.0, 0.0), n_gauss: int = 4,
                  params: Optional[dict] = None, chunk: int = 128) -> DifferentialXS:
    """Integrate dsigma(q_vec) (q_vec (..., 2) in MeV, frame of ``axis``) over each bin."""
    q_edges = np.asarray(q_edges, dtype=float)
    phi_edges = np.linspace(0.0, 2.0 * math.pi, n_phi + 1)
    x, w = np.polynomial.legendre.leggauss(n_gauss)
    lnq_lo, lnq_hi = np.log(q_edges[:-1]), np.log(q_edges[1:])
    nq = q_edges.size - 1
    mass = np.zeros((nq, n_phi))
    cent = np.zeros((nq, n_phi, 2))
    dphi = phi_edges[1] - phi_edges[0]
    phis = phi_edges[:-1, None] + 0.5 * dphi * (x[None, :] + 1.0)  # (n_phi, g)
    for start in range(0, nq, chunk):
        sl = slice(start, min(start + chunk, nq))
        lq = 0.5 * (lnq_lo[sl, None] + lnq_hi[sl, None]) + 0.5 * (lnq_hi[sl, None] - lnq_lo[sl, None]) * x[None, :]
        q = np.exp(lq)  # (c, g)
        wq = 0.5 * (lnq_hi[sl, None] - lnq_lo[sl, None]) * w[None, :] * q**2  # d^2q = q^2 dlnq dphi
        qv = np.stack(
            [q[:, None, :, None] * np.cos(phis)[None, :, None, :], q[:, None, :, None] * np.sin(phis)[None, :, None, :]],
            axis=-1,
        )  # (c, n_phi, gq, gphi, 2)
        ds = dsigma(qv)
        wt = wq[:, None, :, None] * (0.5 * dphi * w)[None, None, None, :] * ds
        mass[sl] = wt.sum(axis=(2, 3))
        num = np.einsum("cpab,cpabk->cpk", wt, qv)
        cent[sl] = num / np.where(mass[sl] > 0, mass[sl], 1.0)[..., None]
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a) if np.linalg.norm(a) > 0 else np.array([1.0, 0.0])
    return DifferentialXS(q_edges, phi_edges, mass, cent, axis=a, params=params or {})


def _polar_grid(q_edges, n_phi, n_gauss):
    """Gauss-Legendre nodes of every (ln q, phi) bin: |q| (nq, g), q_x (nq, n_phi, g, g), weights."""
    q_edges = np.asarray(q_edges, dtype=float)
    x, w = np.polynomial.legendre.leggauss(n_gauss)
    lo, hi = np.log(q_edges[:-1]), np.log(q_edges[1:])
    q = np.exp(0.5 * (lo + hi)[:, None] + 0.5 * (hi - lo)[:, None] * x[None, :])
    wq = 0.5 * (hi - lo)[:, None] * w[None, :] * q**2
    dphi = 2.0 * math.pi / n_phi
    phis = np.arange(n_phi)[:, None] * dphi + 0.5 * dphi * (x[None, :] + 1.0)
    qx = q[:, None, :, None] * np.cos(phis)[None, :, None, :]
    wt = wq[:, None, :, None] * (0.5 * dphi * w)[None, None, None, :]
    return q, qx, wt


def _phase_stack(lengths, q_edges, n_phi, n_gauss, radial, const, amp):
    """Bin masses of radial(q) * (const(q) + amp(q) sin^2(q_x L / 2 hbar c)) for each length L."""
    q, qx, wt = _polar_grid(q_edges, n_phi, n_gauss)
    w = wt * radial(q)[:, None, :, None]
    fixed = (w * const(q)[:, None, :, None]).sum(axis=(2, 3))
    wa = w * amp(q)[:, None, :, None]
    half_qx = 0.5 * qx / HBARC_MEV_NM
    out = np.empty((len(lengths), q.shape[0], n_phi))
    for i, length in enumerate(lengths):
        out[i] = fixed + (wa * np.sin(half_qx * length) ** 2).sum(axis=(2, 3))
    return out


def born_atom_stack(abs_u_nodes, ff: FormFactorModel, u1: float, q_edges, n_phi: int = 64,
                    n_gauss: int = 4) -> np.ndarray:
    """Bin masses (node, nq, n_phi) of the atomic-thorn cross section for u_T = |u| x_hat at each node.

    Same quadrature as :func:`tabulate_born`; the |q|-only factors are
    evaluated once for the whole stack.
    """
    def dw(q):
        return 0.5 * (q * u1 / HBARC_MEV_NM) ** 2

    return _phase_stack(abs_u_nodes, q_edges, n_phi, n_gauss, lambda q: _atom_radial(q, ff),
                        lambda q: np.expm1(-dw(q)) ** 2, lambda q: 4.0 * np.exp(-dw(q)))


def born_electron_stack(abs_s_nodes, ff: FormFactorModel, k: int, screening_length: Optional[float], q_edges,
                        n_phi: int = 64, n_gauss: int = 4) -> np.ndarray:
    """Bin masses (node, nq, n_phi) of the orbital-k electronic thorn for s_T = |s| x_hat at each node."""
    return _phase_stack(abs_s_nodes, q_edges, n_phi, n_gauss,
                        lambda q: _rutherford_prefactor(1) / _screened_denominator(q, screening_length),
                        lambda q: ff.one_minus_f_k(k, q) ** 2, lambda q: 4.0 * (1.0 - ff.one_minus_f_k(k, q)))


def _frame(vec):
    v = np.asarray(vec, dtype=float)[:2]
    n = np.linalg.norm(v)
    if n == 0:
        return np.array([1.0, 0.0]), 0.0
    return v / n, n


def atom_xs_table(u_T, ff: FormFactorModel, u1: float, q_lo: Optional[float] = None, q_hi: Optional[float] = None,
                  per_decade: int = 256, n_phi: int = 64) -> DifferentialXS:
    """Quantum table for the atomic thorn at transverse displacement u_T."""
    axis, absu = _frame(u_T)
    scales = _atom_scales(ff, u1)
    q_lo = q_lo or 1e-4 * min(scales) * HBARC_MEV_NM
    q_hi = q_hi or 1e3 * (ff.nuclear_regulator or 1e3 / u1) * HBARC_MEV_NM
    uu = np.array([absu, 0.0])
    ds = lambda qv: born_dsigma_atom(qv, uu, ff, u1)
    return tabulate_born(ds, log_q_edges(q_lo, q_hi, per_decade), n_phi, axis,
                         params={"kind": "vib", "abs_u_T": absu, "u1": u1, "model": "quantum"})


def electron_xs_table(s_T, ff: FormFactorModel, k: int = 0,
                      screening_length: Optional[float] = DEFAULT_ELECTRON_SCREENING,
                      q_max: Optional[float] = None, q_min: Optional[float] = None,
                      per_decade: int = 256, n_phi: int = 64) -> DifferentialXS:
    """Quantum table for the electronic thorn at offset s_T."""
    axis, abss = _frame(s_T)
    q_lo, q_hi = _electron_q_range(ff, k, screening_length, q_min, q_max)
    ss = np.array([abss, 0.0])
    ds = lambda qv: born_dsigma_electron(qv, ss, ff, k, screening_length)
    return tabulate_born(ds, log_q_edges(q_lo, q_hi, per_decade), n_phi, axis,
                         params={"kind": "e", "abs_s_T": abss, "orbital": k, "model": "quantum",
                                 "screening_length": screening_length})


def thorn_xs_table(thorn, q_lo: float, q_hi: float, per_decade: int = 256, n_phi: int = 64,
                   axis=(1.0, 0.0)) -> DifferentialXS:
    """Quantum table for any thorn via its Fourier transform."""
    a, _ = _frame(axis)
    rot = np.array([[a[0], -a[1]], [a[1], a[0]]])

    def ds(qv):
        lab = qv @ rot.T
        shape = lab.shape[:-1]
        return born_dsigma_generic(thorn, lab.reshape(-1, 2)).reshape(shape)

    return tabulate_born(ds, log_q_edges(q_lo, q_hi, per_decade), n_phi, a, params={"model": "quantum"})


# ---------------------------------------------------------------------------
# classical (eikonal) cross sections


def classical_kick(b, thorn, charge_sign: int = 1, rel: float = 1e-10):
    """Eikonal momentum transfer q_cl(b) (MeV, 2-vector) by line quadrature of the thorn gradient.

    The particle moves along +z at transverse position ``b`` (nm).
    """
    b = np.asarray(b, dtype=float)
    single = b.ndim == 1
    bs = np.atleast_2d(b)
    if isinstance(thorn, SphericalTerm):
        terms = ((np.zeros(3), thorn),)
    else:
        terms = thorn.terms
    out = np.zeros(bs.shape)
    for i, bi in enumerate(bs):
        for c, term in terms:
            d = bi - c[:2]
            rho = math.hypot(d[0], d[1])
            if rho == 0.0:
                continue
            t_max = math.asinh(60.0 * max(term.outer_range, rho) / rho)

            # z = rho sinh t turns the line integral into a smooth one
            def integrand(t):
                return -float(term.derivative(rho * math.cosh(t))) * rho

            mag = 0.0
            for lo, hi in ((0.0, min(2.0, t_max)), (min(2.0, t_max), t_max)):
                if hi > lo:
                    v, _ = _quad(integrand, lo, hi, rel=rel, what="eikonal kick")
                    mag += v
            if not np.isfinite(mag):
                raise QuadratureError("eikonal tail integral diverged")
            out[i] += 2.0 * mag * d / rho
    out *= charge_sign * 1e-6
    return out[0] if single else out


def classical_kick_magnitude_spherical(b, term: SphericalTerm):
    """|q_cl| (MeV) of a spherical term from its closed-form kick."""
    return np.abs(term.kick(np.asarray(b, dtype=float))) * 1e-6


def classical_dsigma(thorn, q_edges, n_phi: int = 64, axis=(1.0, 0.0), b_min: Optional[float] = None,
                     b_max: Optional[float] = None, b_per_decade: int = 400, n_angle: int = 512,
                     charge_sign: int = 1, q_cap: Optional[float] = None,
                     center: Optional[np.ndarray] = None) -> DifferentialXS:
    """Classical dsigma/d^2q by transporting the area measure d^2b through b -> q_cl(b).

    A fine log-polar b grid is centred on the thorn's singular centre (its
    first term).  Each cell's area goes to the (|q|, phi) bin of its kick.
    Kicks above ``q_cap`` are dropped and reported as ``truncated``.
    """
    q_edges = np.asarray(q_edges, dtype=float)
    terms = ((np.zeros(3), thorn),) if isinstance(thorn, SphericalTerm) else tuple(thorn.terms)
    if len(terms) == 1 and q_cap is None:
        return _classical_dsigma_radial(terms[0][1], q_edges, n_phi, axis, b_min, b_max, charge_sign)
    if center is None:
        center = np.asarray(terms[0][0], dtype=float)[:2]
    outer = max(t.outer_range for _, t in terms)
    b_max = b_max or 30.0 * outer
    if b_min is None:
        b_min = 1e-6 * outer
    a, _ = _frame(axis)
    rot = np.array([[a[0], a[1]], [-a[1], a[0]]])  # lab -> table frame
    phi_edges = np.linspace(0.0, 2.0 * math.pi, n_phi + 1)
    nq = q_edges.size - 1
    mass = np.zeros((nq, n_phi))
    first = np.zeros((nq, n_phi, 2))
    r_edges = np.geomspace(b_min, b_max, int(math.ceil(b_per_decade * math.log10(b_max / b_min))) + 1)
    # inner disc below b_min is folded into one ring evaluated at its centroid radius
    r_edges = np.concatenate([[0.0], r_edges])
    th_edges = np.linspace(0.0, 2.0 * math.pi, n_angle + 1)
    th = 0.5 * (th_edges[1:] + th_edges[:-1])
    dth = th_edges[1] - th_edges[0]
    area_ring = 0.5 * (r_edges[1:] ** 2 - r_edges[:-1] ** 2) * dth
    r_mid = np.where(r_edges[:-1] > 0, np.sqrt(r_edges[1:] * np.maximum(r_edges[:-1], 1e-300)), 2.0 / 3.0 * r_edges[1:])
    q_max_seen = 0.0
    truncated = 0.0
    outside = 0.0
    chunk = max(1, 200000 // n_angle)
    for start in range(0, r_mid.size, chunk):
        rr = r_mid[start:start + chunk]
        bx = center[0] + rr[:, None] * np.cos(th)[None, :]
        by = center[1] + rr[:, None] * np.sin(th)[None, :]
        bb = np.stack([bx.ravel(), by.ravel()], axis=-1)
        kick = charge_sign * 1e-6 * _kick_vectors(terms, bb)
        area = np.repeat(area_ring[start:start + chunk], n_angle)
        qt = kick @ rot.T
        qm = np.linalg.norm(qt, axis=-1)
        q_max_seen = max(q_max_seen, float(qm.max()))
        keep = np.ones(qm.shape, bool)
        if q_cap is not None:
            cut = qm > q_cap
            truncated += float(area[cut].sum())
            keep &= ~cut
        iq = np.searchsorted(q_edges, qm, side="right") - 1
        inside = (iq >= 0) & (iq < nq) & keep
        outside += float(area[keep & ~inside & (qm >= q_edges[-1])].sum())
        ph = np.mod(np.arctan2(qt[:, 1], qt[:, 0]), 2.0 * math.pi)
        ip = np.minimum((ph / (2.0 * math.pi) * n_phi).astype(int), n_phi - 1)
        np.add.at(mass, (iq[inside], ip[inside]), area[inside])
        np.add.at(first, (iq[inside], ip[inside]), area[inside, None] * qt[inside])
    cap = q_cap if q_cap is not None else math.inf
    if outside > 0 and q_edges[-1] < min(q_max_seen, cap):
        raise ConfigurationError(
            f"q grid ends at {q_edges[-1]:.4g} MeV but the maximum kick is {q_max_seen:.4g} MeV"
        )
    cent = first / np.where(mass > 0, mass, 1.0)[..., None]
    return DifferentialXS(q_edges, phi_edges, mass, cent, axis=a,
                          params={"model": "classical", "q_max": min(q_max_seen, cap), "b_max": b_max},
                          truncated=truncated)


def _classical_dsigma_radial(term: SphericalTerm, q_edges, n_phi, axis, b_min, b_max, charge_sign,
                             b_per_decade: int = 4000):
    """Exact-measure transport for a spherical thorn.

    |q_cl| is taken piecewise linear between fine log-b nodes; each
    segment's ring area is shared among the |q| bins it crosses.
    """
    outer = term.outer_range
    b_max = b_max or 30.0 * outer
    b_min = b_min or 1e-6 * outer
    nodes = np.geomspace(b_min, b_max, int(math.ceil(b_per_decade * math.log10(b_max / b_min))) + 1)
    nodes = np.concatenate([[0.0], nodes])
    qn = np.abs(term.kick(nodes)) * 1e-6
    q_max_seen = float(qn.max())
    if q_edges[-1] < q_max_seen:
        raise ConfigurationError(f"q grid ends at {q_edges[-1]:.4g} MeV but the maximum kick is {q_max_seen:.4g} MeV")
    nq = q_edges.size - 1
    mass_r = np.zeros(nq)
    first_r = np.zeros(nq)
    for start in range(0, nodes.size - 1, 2000):
        sl = slice(start, min(start + 2000, nodes.size - 1))
        q0, q1 = qn[sl], qn[sl.start + 1:sl.stop + 1]
        area = math.pi * (nodes[sl.start + 1:sl.stop + 1] ** 2 - nodes[sl] ** 2)
        lo = np.minimum(q0, q1)[:, None]
        hi = np.maximum(q0, q1)[:, None]
        a = np.clip(q_edges[None, :-1], lo, hi)
        b = np.clip(q_edges[None, 1:], lo, hi)
        width = np.where(hi > lo, hi - lo, 1.0)
        frac = np.where(hi > lo, (b - a) / width, ((lo >= q_edges[None, :-1]) & (lo < q_edges[None, 1:])).astype(float))
        mean = np.where(hi > lo, 0.5 * (a + b), lo)
        w = area[:, None] * frac
        mass_r += w.sum(axis=0)
        first_r += (w * mean).sum(axis=0)
    qbar = first_r / np.where(mass_r > 0, mass_r, 1.0)
    phi_edges = np.linspace(0.0, 2.0 * math.pi, n_phi + 1)
    dphi = phi_edges[1] - phi_edges[0]
    phc = 0.5 * (phi_edges[1:] + phi_edges[:-1])
    shrink = math.sin(dphi / 2) / (dphi / 2) if n_phi > 1 else 0.0
    mass = np.repeat(mass_r[:, None] / n_phi, n_phi, axis=1)
    cent = (qbar * shrink)[:, None, None] * np.stack([np.cos(phc), np.sin(phc)], -1)[None, :, :]
    a, _ = _frame(axis)
    return DifferentialXS(q_edges, phi_edges, mass, cent, axis=a,
                          params={"model": "classical", "q_max": q_max_seen, "b_max": b_max})


def _kick_vectors(terms, b):
    out = np.zeros(b.shape)
    for c, term in terms:
        d = b - np.asarray(c, dtype=float)[:2]
        rr = np.linalg.norm(d, axis=-1)
        safe = np.where(rr > 0, rr, 1.0)
        out += (term.kick(rr) / safe)[:, None] * d
    return out


# ---------------------------------------------------------------------------
# sum rules


def sum_rule_first_moment(xs: DifferentialXS) -> np.ndarray:
    """int q dsigma (MeV nm^2); should vanish for any thorn."""
    return xs.first_moment()


@dataclass(frozen=True)
class SumRuleReport:
    first_moment: np.ndarray
    second_moment_quantum: float
    second_moment_classical: float
    error_quantum: float
    error_classical: float
    converged_quantum: bool
    converged_classical: bool

    @property
    def ratio(self) -> float:
        return self.second_moment_classical / self.second_moment_quantum


def _second_moment_quantum(thorn: PhenomenologicalThorn, rel):
    term = thorn.term
    lo = min(term.ranges)
    hi = max(term.ranges)

    def f(k):
        amp = float(term.fourier(k)) / HBARC_EV_NM
        return 2.0 * math.pi * k**3 * amp**2 / (4.0 * math.pi**2)

    val, err = _log_quad(f, 1e-6 * lo, 1e6 * hi, breaks=[lo, hi], rel=rel, what="quantum second moment")
    return val * HBARC_MEV_NM**2, err * HBARC_MEV_NM**2


def _second_moment_classical(thorn: PhenomenologicalThorn, rel):
    term = thorn.term
    lo = min(term.ranges)
    hi = max(term.ranges)

    def f(b):
        q = float(np.linalg.norm(classical_kick(np.array([b, 0.0]), term, rel=1e-9)))
        return 2.0 * math.pi * b * q * q

    return _log_quad(f, 1e-5 / hi, 40.0 / lo, breaks=[1.0 / hi, 1.0 / lo], rel=rel, what="classical second moment",
                     span=6.0)


def sum_rule_second_moment(thorn: PhenomenologicalThorn, rel: float = 1e-6) -> SumRuleReport:
    """Second moments int q^2 dsigma (MeV^2 nm^2) from the Fourier transform and from eikonal kicks."""
    if not thorn.r_min > 0:
        raise DomainError("second moment diverges for an unregulated Coulomb singularity (r_min = 0)")
    mq, eq = _second_moment_quantum(thorn, rel)
    mc, ec = _second_moment_classical(thorn, rel)
    return SumRuleReport(
        first_moment=np.zeros(2),
        second_moment_quantum=mq,
        second_moment_classical=mc,
        error_quantum=eq,
        error_classical=ec,
        converged_quantum=eq < 1e-4 * mq,
        converged_classical=ec < 1e-4 * mc,
    )


# ---------------------------------------------------------------------------
# single-collision dechanneling estimate


@dataclass(frozen=True)
class DechannelingEstimate:
    q_c: float
    q_min: float
    q_max: float
    sigma_numeric: float
    sigma_closed_form: float
    model: str = "quantum"


def dechanneling_closed_form(q_c: float, q_min: float, Z_eff: float) -> float:
    """4 pi (Z alpha / q_c)^2 [2 ln(q_c / q_min) + 1], nm^2."""
    return 4.0 * math.pi * (Z_eff * ALPHA * HBARC_MEV_NM / q_c) ** 2 * (2.0 * math.log(q_c / q_min) + 1.0)


def dechanneling_xs(q_c: float, q_min: float, q_max: float = math.inf, Z_eff: int = 1,
                    model: str = "quantum") -> DechannelingEstimate:
    """Rutherford-with-cutoffs dechanneling cross section: numeric integrals and closed form."""
    if not (0 < q_min <= q_c <= q_max):
        raise DomainError(f"need 0 < q_min <= q_c <= q_max, got q_min={q_min}, q_c={q_c}, q_max={q_max}")
    pref = 4.0 * math.pi * (Z_eff * ALPHA * HBARC_MEV_NM) ** 2
    dsig = lambda q2: pref / q2**2  # dsigma/dq^2
    # integrate in ln q^2 for a flat integrand
    low, _ = _quad(lambda t: math.exp(t) * math.exp(t) * dsig(math.exp(t)), 2 * math.log(q_min), 2 * math.log(q_c),
                   rel=1e-12, what="small-q integral") if q_c > q_min else (0.0, 0.0)
    upper = 2 * math.log(q_max) if math.isfinite(q_max) else 2 * math.log(q_c) + 80.0
    high, _ = _quad(lambda t: math.exp(t) * dsig(math.exp(t)), 2 * math.log(q_c), upper, rel=1e-12, what="large-q integral")
    numeric = low / q_c**2 + high
    return DechannelingEstimate(q_c, q_min, q_max, numeric, dechanneling_closed_form(q_c, q_min, Z_eff), model)


def dech_cutoffs(case: str, crystal: CrystalModel):
    """(Z_eff, r_max, q_min_quantum, q_min_classical) for the atom or electron case."""
    if case == "atom":
        Z_eff, r_max = crystal.Z, crystal.u1
    elif case == "electron":
        Z_eff, r_max = 1, crystal.a_TF
    else:
        raise DomainError(f"case must be 'atom' or 'electron', got {case!r}")
    q_quant = HBARC_MEV_NM / r_max
    q_class = Z_eff * ALPHA * HBARC_MEV_NM / r_max
    return Z_eff, r_max, q_quant, q_class


def dech_ratio(case: str, crystal: CrystalModel, E: Optional[float] = None, q_c: Optional[float] = None) -> float:
    """sigma_dech classical / sigma_dech quantum from the closed forms.

    ``q_c`` defaults to the critical transfer of the crystal at energy ``E``.
    """
    if q_c is None:
        if E is None:
            raise DomainError("give q_c or the beam energy E")
        q_c = critical_parameters(crystal, E)[1]
    Z_eff, _, q_quant, q_class = dech_cutoffs(case, crystal)
    if not q_c >= q_quant:
        raise DomainError(f"q_c={q_c:.4g} MeV is below the quantum cutoff {q_quant:.4g} MeV")
    cl = dechanneling_closed_form(q_c, q_class, Z_eff)
    qu = dechanneling_closed_form(q_c, q_quant, Z_eff)
    return cl / qu


def invert_dech_ratio(target: float, case: str, crystal: CrystalModel, bracket=(None, 1e4)) -> float:
    """q_c (MeV) at which :func:`dech_ratio` equals ``target``."""
    Z_eff, _, q_quant, q_class = dech_cutoffs(case, crystal)
    lo = bracket[0] or q_quant * (1 + 1e-12)
    f = lambda qc: dech_ratio(case, crystal, q_c=qc) - target
    if f(lo) * f(bracket[1]) > 0:
        raise DomainError(f"ratio {target} not reached for q_c in [{lo:.4g}, {bracket[1]:.4g}] MeV")
    return optimize.brentq(f, lo, bracket[1], xtol=1e-12, rtol=1e-12)


# ---------------------------------------------------------------------------
# azimuthally averaged comparison data


def fig2_curves(thorn: PhenomenologicalThorn, q=None, per_decade: int = 256):
    """q^4 dsigma / [4 (Z alpha)^2] for the quantum and classical models.

    Returns (q, quantum, classical, baseline) arrays; the classical curve is
    bin-averaged over log-q bins centred on ``q``.
    """
    term = thorn.term
    lo, hi = min(term.ranges), max(term.ranges)
    if q is None:
        edges = log_q_edges(1e-2 * lo * HBARC_MEV_NM, 1e2 * hi * HBARC_MEV_NM, per_decade)
    else:
        q = np.asarray(q, dtype=float)
        r = math.sqrt(q[1] / q[0]) if q.size > 1 else 1.01
        edges = np.concatenate([q / r, [q[-1] * r]])
    qc = np.sqrt(edges[:-1] * edges[1:])
    norm = _rutherford_prefactor(thorn.Z_eff)
    quant = born_dsigma_generic(thorn, np.stack([qc, np.zeros_like(qc)], -1)) * qc**4 / norm
    cl = classical_dsigma(thorn, edges, n_phi=1, b_min=1e-4 / hi, b_max=40.0 / lo, n_angle=1)
    ring = math.pi * (edges[1:] ** 2 - edges[:-1] ** 2)
    classical = cl.mass[:, 0] / ring * qc**4 / norm
    return qc, quant, classical, np.ones_like(qc)
