"""Atomic potentials, thermal smearing, continuum potentials and thorns.

Every potential here is a potential *energy for a unit positive charge*, in
eV, as a function of position in nm.  Spherical building blocks share one
small protocol (:class:`SphericalTerm`): value, radial derivative, 3-D
Fourier transform (eV nm^3, argument in nm^-1), charge form, eikonal kick
and plane projection.  A thorn is a list of such terms placed at centres.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, special
from scipy.interpolate import CubicHermiteSpline

from .core import (
    ALPHA,
    HBARC_EV_NM,
    ConfigurationError,
    CrystalModel,
    DomainError,
)

COULOMB_EV_NM = ALPHA * HBARC_EV_NM  # e^2 / 4 pi eps0 = 1.44 eV nm
_SQRT2 = math.sqrt(2.0)
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


def _as_array(r):
    return np.asarray(r, dtype=float)


def _g(x):
    """exp(-x) (1 + x) - 1, accurate for small x."""
    x = np.asarray(x, dtype=float)
    small = x < 1e-3
    xs = np.where(small, x, 0.0)
    series = -0.5 * xs**2 + xs**3 / 3.0 - xs**4 / 8.0
    direct = np.exp(-x) * (1.0 + x) - 1.0
    return np.where(small, series, direct)


# ---------------------------------------------------------------------------
# spherical terms


class SphericalTerm:
    """Spherically symmetric potential energy U(r) in eV."""

    #: outer radius beyond which the term is negligible (nm); used by quadratures
    outer_range: float = 1.0

    def value(self, r):
        raise NotImplementedError

    def derivative(self, r):
        raise NotImplementedError

    def fourier(self, k):
        """3-D Fourier transform, eV nm^3."""
        raise NotImplementedError

    def charge_fourier(self, k):
        """Fourier transform of the source density rho with -lap U = 4 pi rho (eV nm)."""
        k = _as_array(k)
        return k**2 * self.fourier(k) / (4.0 * math.pi)

    @property
    def coulomb_charge(self) -> float:
        """Coefficient of the 1/r tail (eV nm); zero for neutral terms."""
        return 0.0

    def kick(self, b):
        """Eikonal kick magnitude -int dz dU/db along +b-hat, eV."""
        b = np.atleast_1d(_as_array(b))
        out = np.array([_line_kick(self.derivative, bi, self.outer_range) for bi in b.ravel()])
        return out.reshape(b.shape)

    def profile(self, x):
        """Projection onto a line: int d^2 rho U(sqrt(x^2 + rho^2)), eV nm^2."""
        if abs(self.coulomb_charge) > 0:
            raise DomainError("projection of an unscreened Coulomb tail diverges; regulate the potential")
        x = np.atleast_1d(_as_array(x))
        out = np.empty(x.shape)
        for i, xi in enumerate(x.ravel()):
            f = lambda rho: 2.0 * math.pi * rho * float(self.value(math.hypot(xi, rho)))
            out.flat[i] = _quad_semi_infinite(f, max(abs(xi), 1e-6), self.outer_range)
        return out


def _quad_semi_infinite(f, scale, outer):
    """int_0^inf f, split on a geometric ladder starting at ``scale``."""
    edges = [0.0, scale]
    while edges[-1] < 40.0 * outer:
        edges.append(edges[-1] * 4.0)
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        val, _ = integrate.quad(f, a, b, limit=200, epsabs=0.0, epsrel=1e-10)
        total += val
    return total


def _line_kick(derivative, b, outer):
    if b <= 0:
        return 0.0
    # z = b sinh t gives a smooth integrand
    f = lambda t: -float(derivative(b * math.cosh(t))) * b
    t_max = math.asinh(60.0 * max(outer, b) / b)
    total = 0.0
    for lo, hi in ((0.0, min(2.0, t_max)), (min(2.0, t_max), t_max)):
        if hi > lo:
            total += integrate.quad(f, lo, hi, limit=200, epsabs=0.0, epsrel=1e-11)[0]
    return 2.0 * total


@dataclass(frozen=True)
class YukawaSum(SphericalTerm):
    """U(r) = sum_j A_j exp(-m_j r) / r.  A_j in eV nm, m_j in nm^-1 (0 = Coulomb)."""

    amplitudes: Tuple[float, ...]
    ranges: Tuple[float, ...]

    def __post_init__(self):
        A = tuple(float(a) for a in self.amplitudes)
        m = tuple(float(v) for v in self.ranges)
        if len(A) != len(m):
            raise ValueError("amplitudes and ranges differ in length")
        if any(v < 0 for v in m):
            raise ValueError("inverse ranges must be non-negative")
        object.__setattr__(self, "amplitudes", A)
        object.__setattr__(self, "ranges", m)

    @property
    def _A(self):
        return np.array(self.amplitudes)

    @property
    def _m(self):
        return np.array(self.ranges)

    @property
    def total(self) -> float:
        return float(np.sum(self._A))

    @property
    def neutral(self) -> bool:
        return abs(self.total) <= 1e-12 * np.max(np.abs(self._A))

    @property
    def coulomb_charge(self) -> float:
        return float(np.sum(self._A[self._m == 0.0]))

    @property
    def outer_range(self) -> float:
        m = self._m[self._m > 0]
        return float(1.0 / m.min()) if m.size else 1.0

    def scaled(self, factor: float) -> "YukawaSum":
        return YukawaSum(tuple(a * factor for a in self.amplitudes), self.ranges)

    def value(self, r):
        r = _as_array(r)
        A, m = self._A, self._m
        rr = r[..., None]
        safe = np.where(rr > 0, rr, 1.0)
        direct = np.sum(A * np.exp(-m * rr), axis=-1) / np.where(r > 0, r, np.nan)
        if self.neutral:
            # inside the shortest range the terms cancel; use the expm1 form there
            body = np.sum(A * np.expm1(-m * rr), axis=-1) / safe[..., 0]
            near = np.where(r > 0, body, -np.sum(A * m))
            return np.where(r * m.max() < 1.0, near, direct)
        return direct

    def derivative(self, r):
        r = _as_array(r)
        A, m = self._A, self._m
        rr = r[..., None]
        safe = np.where(r > 0, r, 1.0)
        direct = -np.sum(A * np.exp(-m * rr) * (1.0 + m * rr), axis=-1) / np.where(r > 0, r, np.nan) ** 2
        if self.neutral:
            body = -np.sum(A * _g(m * rr), axis=-1) / safe**2
            near = np.where(r > 0, body, 0.5 * np.sum(A * m**2))
            return np.where(r * m.max() < 1.0, near, direct)
        return direct

    def fourier(self, k):
        k = _as_array(k)
        return 4.0 * math.pi * np.sum(self._A / (k[..., None] ** 2 + self._m**2), axis=-1)

    def charge_fourier(self, k):
        k = _as_array(k)
        kk = k[..., None] ** 2
        ratio = np.where(self._m == 0.0, 1.0, kk / (kk + self._m**2))
        return np.sum(self._A * ratio, axis=-1)

    def kick(self, b):
        """2 sum_j A_j m_j K1(m_j b); the Coulomb limit is 2 A / b."""
        b = _as_array(b)
        A, m = self._A, self._m
        bb = b[..., None]
        safe = np.where(bb > 0, bb, 1.0)
        x = m * safe
        with np.errstate(over="ignore"):
            mk1 = np.where(m > 0, m * special.k1e(np.where(x > 0, x, 1.0)) * np.exp(-x), 1.0 / safe)
        out = 2.0 * np.sum(A * mk1, axis=-1)
        return np.where(b > 0, out, 0.0)

    def line_integral(self, b):
        """int dz U along a line at distance b (neutral sums only), eV nm."""
        if abs(self.coulomb_charge) > 0:
            raise DomainError("line integral of a Coulomb tail diverges")
        b = _as_array(b)
        return 2.0 * np.sum(self._A * special.k0(self._m * b[..., None]), axis=-1)

    def profile(self, x):
        if abs(self.coulomb_charge) > 1e-12 * np.max(np.abs(self._A)):
            raise DomainError("projection of an unscreened Coulomb tail diverges; regulate the potential")
        return self._profile_terms(x)

    def _profile_terms(self, x):
        """Projection with Coulomb terms taken as -2 pi A |x| (finite only in neutral combinations)."""
        x = np.abs(_as_array(x))[..., None]
        A, m = self._A, self._m
        yuk = np.where(m > 0, 2.0 * math.pi * A / np.where(m > 0, m, 1.0) * np.exp(-m * x), 0.0)
        coul = np.where(m == 0, -2.0 * math.pi * A * x, 0.0)
        return np.sum(yuk + coul, axis=-1)

    def smeared(self, sigma: float) -> "SmearedYukawaSum":
        return SmearedYukawaSum(self.amplitudes, self.ranges, sigma)


def _smeared_yukawa_parts(r, m, sigma):
    """Return (A, B) with 2 r Ybar(r) = A - B for exp(-m r)/r smeared by N(0, sigma^2 I)."""
    x1 = (m * sigma**2 - r) / (_SQRT2 * sigma)
    x2 = (m * sigma**2 + r) / (_SQRT2 * sigma)
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    B = special.erfcx(x2) * g
    with np.errstate(over="ignore", invalid="ignore"):
        A_neg = np.exp(0.5 * m**2 * sigma**2 - m * r) * special.erfc(x1)
    A = np.where(x1 >= 0, special.erfcx(np.maximum(x1, 0.0)) * g, A_neg)
    return A, B, g


def smeared_yukawa(r, m, sigma):
    """exp(-m r)/r convolved with an isotropic Gaussian of per-axis width sigma."""
    r = _as_array(r)
    small = r < 1e-4 * sigma
    rs = np.where(small, sigma, r)
    A, B, _ = _smeared_yukawa_parts(rs, m, sigma)
    body = (A - B) / (2.0 * rs)
    v0 = _SQRT_2_OVER_PI / sigma - m * special.erfcx(m * sigma / _SQRT2)
    lap0 = -4.0 * math.pi * (2.0 * math.pi * sigma**2) ** -1.5 + m**2 * v0
    return np.where(small, v0 + lap0 / 6.0 * r**2, body)


def smeared_yukawa_derivative(r, m, sigma):
    r = _as_array(r)
    small = r < 1e-4 * sigma
    rs = np.where(small, sigma, r)
    A, B, g = _smeared_yukawa_parts(rs, m, sigma)
    body = -(A - B) / (2.0 * rs**2) + (-m * (A + B) + 2.0 * _SQRT_2_OVER_PI / sigma * g) / (2.0 * rs)
    v0 = _SQRT_2_OVER_PI / sigma - m * special.erfcx(m * sigma / _SQRT2)
    lap0 = -4.0 * math.pi * (2.0 * math.pi * sigma**2) ** -1.5 + m**2 * v0
    return np.where(small, lap0 / 3.0 * r, body)


def smeared_exponential_profile(x, m, sigma):
    """exp(-m |x|) convolved with a 1-D Gaussian of width sigma."""
    x = np.abs(_as_array(x))
    x1 = (m * sigma**2 - x) / (_SQRT2 * sigma)
    x2 = (m * sigma**2 + x) / (_SQRT2 * sigma)
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    t2 = special.erfcx(x2) * g
    with np.errstate(over="ignore", invalid="ignore"):
        t1_neg = np.exp(0.5 * m**2 * sigma**2 - m * x) * special.erfc(x1)
    t1 = np.where(x1 >= 0, special.erfcx(np.maximum(x1, 0.0)) * g, t1_neg)
    return 0.5 * (t1 + t2)


def smeared_radial_kick(kick, b, sigma, n_nodes: int = 128):
    """Radial kick field ``kick(rho)`` convolved with a 2-D Gaussian of width sigma.

    K(b) = int rho drho K(rho) exp(-(b - rho)^2 / 2 sigma^2) i1e(b rho / sigma^2) / sigma^2,
    on a Gauss-Legendre rule over [max(0, b - 12 sigma), b + 12 sigma].
    """
    b = np.atleast_1d(_as_array(b))
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    lo = np.maximum(0.0, b - 12.0 * sigma)[:, None]
    hi = (b + 12.0 * sigma)[:, None]
    rho = 0.5 * (hi + lo) + 0.5 * (hi - lo) * x[None, :]
    wt = 0.5 * (hi - lo) * w[None, :]
    bb = b[:, None]
    kern = np.exp(-((bb - rho) ** 2) / (2 * sigma**2)) * special.i1e(bb * rho / sigma**2) / sigma**2
    vals = kick(rho.ravel()).reshape(rho.shape)
    return np.sum(wt * rho * vals * kern, axis=1)


@dataclass(frozen=True)
class SmearedYukawaSum(SphericalTerm):
    """A :class:`YukawaSum` convolved with an isotropic Gaussian (per-axis sigma)."""

    amplitudes: Tuple[float, ...]
    ranges: Tuple[float, ...]
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise DomainError("smearing width must be positive")
        object.__setattr__(self, "amplitudes", tuple(float(a) for a in self.amplitudes))
        object.__setattr__(self, "ranges", tuple(float(v) for v in self.ranges))

    @property
    def coulomb_charge(self) -> float:
        return float(sum(a for a, m in zip(self.amplitudes, self.ranges) if m == 0.0))

    @property
    def outer_range(self) -> float:
        m = [v for v in self.ranges if v > 0]
        return max(1.0 / min(m) if m else 1.0, 10.0 * self.sigma)

    def value(self, r):
        r = _as_array(r)
        return sum(a * smeared_yukawa(r, m, self.sigma) for a, m in zip(self.amplitudes, self.ranges))

    def derivative(self, r):
        r = _as_array(r)
        return sum(a * smeared_yukawa_derivative(r, m, self.sigma) for a, m in zip(self.amplitudes, self.ranges))

    @cached_property
    def _kick_spline(self):
        from scipy.interpolate import CubicSpline

        lo, hi = 1e-4 * self.sigma, 60.0 * self.outer_range
        b = np.geomspace(lo, hi, int(100 * math.log10(hi / lo)) + 1)
        kick = smeared_radial_kick(YukawaSum(self.amplitudes, self.ranges).kick, b, self.sigma)
        # K(b) b / (b^2 + sigma^2) is smooth and bounded on the whole range
        return CubicSpline(np.log(b), kick * b / (b**2 + self.sigma**2)), lo, hi

    def kick(self, b):
        """Eikonal kick (eV) from a log-b spline of line quadratures, built on first use."""
        b = _as_array(b)
        spline, lo, hi = self._kick_spline
        bc = np.clip(b, lo, hi)
        y = spline(np.log(bc)) * (bc**2 + self.sigma**2) / bc
        y = np.where(b < lo, y * b / lo, y)
        return np.where((b > 0) & (b <= hi), y, 0.0)

    def fourier(self, k):
        k = _as_array(k)
        base = YukawaSum(self.amplitudes, self.ranges).fourier(k)
        return base * np.exp(-0.5 * k**2 * self.sigma**2)

    def charge_fourier(self, k):
        k = _as_array(k)
        base = YukawaSum(self.amplitudes, self.ranges).charge_fourier(k)
        return base * np.exp(-0.5 * k**2 * self.sigma**2)

    def profile(self, x):
        if abs(self.coulomb_charge) > 1e-12 * max(abs(a) for a in self.amplitudes):
            raise DomainError("projection of an unscreened Coulomb tail diverges; regulate the potential")
        x = _as_array(x)
        s = self.sigma
        out = np.zeros(x.shape)
        for a, m in zip(self.amplitudes, self.ranges):
            if m > 0:
                out = out + 2.0 * math.pi * a / m * smeared_exponential_profile(x, m, s)
            else:
                mean_abs = s * _SQRT_2_OVER_PI * np.exp(-(x**2) / (2 * s * s)) + x * special.erf(x / (_SQRT2 * s))
                out = out - 2.0 * math.pi * a * mean_abs
        return out


# ---------------------------------------------------------------------------
# orbitals


@dataclass(frozen=True)
class RadialOrbital:
    """Spherically averaged orbital density |psi|^2 = N r^k exp(-beta r), normalised to 1.

    k = -1 is a Yukawa-shaped shell (form factor beta^2 / (q^2 + beta^2));
    k = 0 is a hydrogen 1s shape; k >= 1 gives annular shells.
    """

    k: int
    beta: float  # nm^-1

    def __post_init__(self):
        if self.k < -1:
            raise ValueError("k must be >= -1")
        if not self.beta > 0:
            raise ValueError("beta must be positive")

    @property
    def norm(self) -> float:
        n = self.k + 3
        return self.beta**n / (4.0 * math.pi * math.gamma(n))

    @property
    def mean_radius(self) -> float:
        return (self.k + 3) / self.beta

    def density(self, r):
        r = _as_array(r)
        if self.k == -1:
            safe = np.where(r > 0, r, np.nan)
            return self.norm * np.exp(-self.beta * r) / safe
        return self.norm * r**self.k * np.exp(-self.beta * r)

    def form_factor(self, k):
        """int d^3r exp(-i k.r) |psi|^2, k in nm^-1."""
        k = np.abs(_as_array(k))
        n = self.k + 2
        b = self.beta
        theta = np.arctan2(k, b)
        safe = np.where(k > 0, k, 1.0)
        val = b ** (n + 1) * np.sin(n * theta) / (n * safe * (b * b + k * k) ** (n / 2.0))
        return np.where(k > 0, val, 1.0)

    def one_minus_form_factor(self, k):
        """1 - f(k), accurate as k -> 0."""
        k = np.abs(_as_array(k))
        if self.k == -1:
            return k**2 / (k**2 + self.beta**2)
        x = k / self.beta
        r2 = (self.k + 3) * (self.k + 4) / self.beta**2
        return np.where(x < 1e-4, r2 * k**2 / 6.0, 1.0 - self.form_factor(k))

    def enclosed(self, r):
        return special.gammainc(self.k + 3, self.beta * _as_array(r))

    def potential(self, r):
        """Electrostatic potential of the unit cloud, int |psi(r')|^2 / |r - r'| (nm^-1)."""
        r = _as_array(r)
        x = self.beta * r
        n = self.k + 2
        safe = np.where(r > 0, r, 1.0)
        inner = special.gammainc(n + 1, x) / safe
        outer = self.beta * special.gammaincc(n, x) / n
        at0 = self.beta / n
        return np.where(r > 0, inner + outer, at0)

    def potential_derivative(self, r):
        r = _as_array(r)
        safe = np.where(r > 0, r, 1.0)
        return np.where(r > 0, -self.enclosed(r) / safe**2, 0.0)

    def projected_density(self, b):
        """int dz |psi(b, z)|^2, nm^-2."""
        b = np.atleast_1d(_as_array(b))
        if self.k == -1:
            safe = np.where(b > 0, b, np.nan)
            return self.beta**2 * special.k0(self.beta * safe) / (2.0 * math.pi)
        out = np.empty(b.shape)
        for i, bi in enumerate(b.ravel()):
            f = lambda z: float(self.density(math.hypot(bi, z)))
            out.flat[i] = 2.0 * _quad_semi_infinite(f, max(bi, 1e-3 / self.beta), 1.0 / self.beta)
        return out

    def sample_radius(self, rng, size=None):
        return rng.gamma(self.k + 3, 1.0 / self.beta, size=size)


@dataclass(frozen=True)
class OrbitalPotential(SphericalTerm):
    """amplitude * (potential of a unit orbital cloud), eV."""

    orbital: RadialOrbital
    amplitude: float  # eV nm

    @property
    def coulomb_charge(self) -> float:
        return self.amplitude

    @property
    def outer_range(self) -> float:
        return 10.0 * self.orbital.mean_radius

    def value(self, r):
        return self.amplitude * self.orbital.potential(r)

    def derivative(self, r):
        return self.amplitude * self.orbital.potential_derivative(r)

    def fourier(self, k):
        k = _as_array(k)
        return 4.0 * math.pi * self.amplitude * self.orbital.form_factor(k) / np.where(k > 0, k, np.nan) ** 2

    def charge_fourier(self, k):
        return self.amplitude * self.orbital.form_factor(k)


def orbital_potential_term(orbital: RadialOrbital, amplitude: float) -> SphericalTerm:
    """Potential term of a unit orbital cloud; closed Yukawa form for k = -1 shells."""
    if orbital.k == -1:
        return YukawaSum((amplitude, -amplitude), (0.0, orbital.beta))
    return OrbitalPotential(orbital, amplitude)


# ---------------------------------------------------------------------------
# screening and atomic potential


MOLIERE_WEIGHTS = (0.10, 0.55, 0.35)
MOLIERE_RANGES = (6.0, 1.2, 0.3)


@dataclass(frozen=True)
class ScreeningModel:
    """Multi-Yukawa screening with a Yukawa nuclear regulator.

    V_A(r) = Z alpha [sum_i w_i exp(-mu_i r) - exp(-mu_N r)] / r.
    ``nuclear_regulator`` = 1/r_N; ``None`` gives a point nucleus.
    """

    yukawa_terms: Tuple[Tuple[float, float], ...]
    nuclear_regulator: Optional[float] = None

    def __post_init__(self):
        terms = tuple((float(w), float(mu)) for w, mu in self.yukawa_terms)
        object.__setattr__(self, "yukawa_terms", terms)
        if abs(sum(w for w, _ in terms) - 1.0) > 1e-12:
            raise ConfigurationError("screening weights must sum to 1")
        if any(mu <= 0 for _, mu in terms):
            raise ConfigurationError("screening inverse ranges must be positive")
        if self.nuclear_regulator is not None and not self.nuclear_regulator > max(mu for _, mu in terms):
            raise ConfigurationError("nuclear regulator must be shorter-ranged than the screening")

    @classmethod
    def moliere(cls, a_TF: float, r_N: Optional[float] = None) -> "ScreeningModel":
        terms = tuple((w, b / a_TF) for w, b in zip(MOLIERE_WEIGHTS, MOLIERE_RANGES))
        return cls(terms, None if not r_N else 1.0 / r_N)

    @classmethod
    def for_crystal(cls, crystal: CrystalModel) -> "ScreeningModel":
        return cls.moliere(crystal.a_TF, crystal.r_N)

    @property
    def weights(self):
        return np.array([w for w, _ in self.yukawa_terms])

    @property
    def inverse_ranges(self):
        return np.array([mu for _, mu in self.yukawa_terms])

    def orbitals(self, Z: int):
        """Electron shells consistent with the screening: Yukawa-shaped clouds, occupancy w_i Z."""
        return tuple((RadialOrbital(-1, mu), w * Z) for w, mu in self.yukawa_terms)

    def atom_term(self, Z: int) -> YukawaSum:
        amp = Z * COULOMB_EV_NM
        A = [amp * w for w, _ in self.yukawa_terms]
        m = [mu for _, mu in self.yukawa_terms]
        if self.nuclear_regulator is not None:
            A.append(-amp)
            m.append(self.nuclear_regulator)
        return YukawaSum(tuple(A), tuple(m))


def atomic_potential(r, s: ScreeningModel, Z: int):
    """Screened, nucleus-regulated atomic potential V_A(r), eV."""
    r = _as_array(r)
    if np.any(r < 0):
        raise DomainError("r must be non-negative")
    return s.atom_term(Z).value(r)


def smeared_atomic_potential(r, s: ScreeningModel, u1: float, Z: int = 1):
    """V_A convolved with the thermal displacement distribution (per-axis width u1)."""
    r = _as_array(r)
    if np.any(r < 0):
        raise DomainError("r must be non-negative")
    if not u1 > 0:
        raise DomainError("u1 must be positive")
    return s.atom_term(Z).smeared(u1).value(r)


# ---------------------------------------------------------------------------
# thorns


class _Thorn:
    """Sum of spherical terms placed at centres (3-vectors, nm)."""

    @property
    def terms(self) -> Sequence[Tuple[np.ndarray, SphericalTerm]]:
        raise NotImplementedError

    def potential(self, r):
        r = np.atleast_2d(_as_array(r))
        out = np.zeros(r.shape[0])
        for c, term in self.terms:
            out = out + term.value(np.linalg.norm(r - c, axis=-1))
        return out

    def gradient(self, r):
        r = np.atleast_2d(_as_array(r))
        out = np.zeros(r.shape)
        for c, term in self.terms:
            d = r - c
            rr = np.linalg.norm(d, axis=-1)
            safe = np.where(rr > 0, rr, 1.0)
            out = out + (term.derivative(rr) / safe)[:, None] * d * (rr > 0)[:, None]
        return out

    def fourier(self, k):
        """int d^3 r exp(-i k.r) U(r) for k (..., 3) in nm^-1."""
        k = np.atleast_2d(_as_array(k))
        kk = np.linalg.norm(k, axis=-1)
        out = np.zeros(k.shape[0], dtype=complex)
        for c, term in self.terms:
            out = out + np.exp(-1j * k @ c) * term.fourier(kk)
        return out

    def charge_fourier(self, k):
        k = np.atleast_2d(_as_array(k))
        kk = np.linalg.norm(k, axis=-1)
        out = np.zeros(k.shape[0], dtype=complex)
        for c, term in self.terms:
            out = out + np.exp(-1j * k @ c) * term.charge_fourier(kk)
        return out

    def kick_analytic(self, b):
        """Eikonal kick vector (eV) at transverse positions b (..., 2), from per-term kicks."""
        b = np.atleast_2d(_as_array(b))
        out = np.zeros(b.shape)
        for c, term in self.terms:
            d = b - c[:2]
            rr = np.linalg.norm(d, axis=-1)
            safe = np.where(rr > 0, rr, 1.0)
            out = out + (term.kick(rr) / safe)[:, None] * d
        return out

    @property
    def outer_range(self) -> float:
        return max(term.outer_range for _, term in self.terms)

    @property
    def coulomb_charge(self) -> float:
        return sum(term.coulomb_charge for _, term in self.terms)


@dataclass(frozen=True)
class ThornVib(_Thorn):
    """Atomic thorn: V_A at the instantaneous nucleus minus the smeared V_A at the mean site."""

    crystal: CrystalModel
    u: np.ndarray = field(default_factory=lambda: np.zeros(3))
    screening: Optional[ScreeningModel] = None

    def __post_init__(self):
        u = np.zeros(3)
        uu = np.atleast_1d(np.asarray(self.u, dtype=float))
        u[: uu.size] = uu
        if not np.all(np.isfinite(u)):
            raise DomainError("displacement must be finite")
        object.__setattr__(self, "u", u)
        if self.screening is None:
            object.__setattr__(self, "screening", ScreeningModel.for_crystal(self.crystal))

    @cached_property
    def terms(self):
        atom = self.screening.atom_term(self.crystal.Z)
        return ((self.u, atom), (np.zeros(3), atom.scaled(-1.0).smeared(self.crystal.u1)))


@dataclass(frozen=True)
class ThornElectron(_Thorn):
    """Electronic thorn: a point electron at R + s minus its orbital cloud centred on R = u.

    The point-charge singularity is capped at ``r_cap`` (nm): the potential
    is evaluated at max(|r - r_e|, r_cap).  With ``screening_length`` set,
    the Coulomb interaction of both parts is Yukawa-screened at that range,
    which removes the long dipole tail (see :func:`screened_orbital_term`).
    """

    orbital: RadialOrbital
    s: np.ndarray = field(default_factory=lambda: np.zeros(3))
    u: np.ndarray = field(default_factory=lambda: np.zeros(3))
    r_cap: float = 1e-7
    screening_length: Optional[float] = None

    def __post_init__(self):
        for name in ("s", "u"):
            v = np.zeros(3)
            vv = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            v[: vv.size] = vv
            object.__setattr__(self, name, v)

    @property
    def screening(self) -> float:
        return 0.0 if self.screening_length is None else 1.0 / self.screening_length

    @cached_property
    def terms(self):
        point = _CappedCoulomb(-COULOMB_EV_NM, self.r_cap, self.screening)
        cloud = screened_orbital_term(self.orbital, COULOMB_EV_NM, self.screening)
        return ((self.u + self.s, point), (self.u, cloud))

    def dipole_moment(self):
        """Dipole of the thorn source (electron charge units times nm)."""
        return -self.s


def screened_orbital_term(orbital: RadialOrbital, amplitude: float, screening: float = 0.0) -> SphericalTerm:
    """Potential of a unit orbital cloud through a Yukawa(screening) interaction.

    Its Fourier transform is 4 pi amplitude f(k) / (k^2 + screening^2).
    Only Yukawa-shaped shells (k = -1) support screening in real space.
    """
    if screening == 0.0:
        return orbital_potential_term(orbital, amplitude)
    if orbital.k != -1:
        raise NotImplementedError("screened clouds are implemented for k = -1 shells")
    b2, m2 = orbital.beta**2, screening**2
    if not b2 > m2:
        raise DomainError("screening length must exceed the orbital range")
    c = amplitude * b2 / (b2 - m2)
    return YukawaSum((c, -c), (screening, orbital.beta))


@dataclass(frozen=True)
class _CappedCoulomb(SphericalTerm):
    """A exp(-m r) / r with the value held constant inside r_cap."""

    amplitude: float
    r_cap: float
    screening: float = 0.0

    @property
    def coulomb_charge(self) -> float:
        return self.amplitude if self.screening == 0.0 else 0.0

    @property
    def outer_range(self) -> float:
        return 1.0 / self.screening if self.screening > 0 else 1.0

    def value(self, r):
        rc = np.maximum(_as_array(r), self.r_cap)
        return self.amplitude * np.exp(-self.screening * rc) / rc

    def derivative(self, r):
        r = _as_array(r)
        rc = np.maximum(r, self.r_cap)
        m = self.screening
        return np.where(r > self.r_cap, -self.amplitude * np.exp(-m * rc) * (1.0 + m * rc) / rc**2, 0.0)

    def fourier(self, k):
        k = _as_array(k)
        k2 = k**2 + self.screening**2
        return 4.0 * math.pi * self.amplitude / np.where(k2 > 0, k2, np.nan)

    def charge_fourier(self, k):
        k = _as_array(k)
        if self.screening == 0.0:
            return self.amplitude * np.ones_like(k)
        return self.amplitude * k**2 / (k**2 + self.screening**2)

    def kick(self, b):
        b = _as_array(b)
        safe = np.where(b > 0, b, 1.0)
        m = self.screening
        if m == 0.0:
            k = 2.0 * self.amplitude / safe
        else:
            x = m * safe
            k = 2.0 * self.amplitude * m * special.k1e(x) * np.exp(-x)
        return np.where(b > 0, k, 0.0)


@dataclass(frozen=True)
class PhenomenologicalThorn(_Thorn):
    """Spherical thorn (Z alpha / r) [exp(-r/r_max) - exp(-r/r_min)]."""

    Z_eff: int
    r_max: float
    r_min: float

    def __post_init__(self):
        if not (0 < self.r_min < self.r_max):
            raise DomainError("need 0 < r_min < r_max")

    @cached_property
    def term(self) -> YukawaSum:
        a = self.Z_eff * COULOMB_EV_NM
        return YukawaSum((a, -a), (1.0 / self.r_max, 1.0 / self.r_min))

    @cached_property
    def terms(self):
        return ((np.zeros(3), self.term),)


def thorn_vib_potential(r, t: ThornVib):
    return t.potential(r)


def thorn_electron_potential(r, t: ThornElectron):
    return t.potential(r)


@dataclass(frozen=True)
class ThornCharge:
    """Charge of an electronic thorn (units of e): point -1 at ``point_position`` plus a cloud."""

    point_position: np.ndarray
    point_charge: float
    cloud: np.ndarray  # +|psi|^2 at the requested points, e nm^-3


def thorn_electron_density(r, t: ThornElectron) -> ThornCharge:
    """Point electron at R + s and the positive deficit cloud |psi(r - R)|^2; total charge zero."""
    r = np.atleast_2d(_as_array(r))
    cloud = t.orbital.density(np.linalg.norm(r - t.u, axis=-1))
    return ThornCharge(point_position=t.u + t.s, point_charge=-1.0, cloud=cloud)


def projected_profile(thorn, x, axis=None):
    """Potential integrated over the plane perpendicular to ``axis`` (default: along u or s).

    Returns eV nm^2 at positions ``x`` (nm) along the axis.
    """
    if axis is None:
        vec = getattr(thorn, "u", None)
        if isinstance(thorn, ThornElectron):
            vec = thorn.s
        if vec is None or not np.any(vec):
            vec = np.array([1.0, 0.0, 0.0])
        axis = vec
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    x = _as_array(x)
    if isinstance(thorn, SphericalTerm):
        return thorn.profile(x)
    coulomb = [(c, t) for c, t in thorn.terms if abs(t.coulomb_charge) > 0]
    if coulomb and abs(sum(t.coulomb_charge for _, t in coulomb)) > 1e-12:
        raise DomainError("projection diverges: the thorn carries a net Coulomb tail")
    out = np.zeros(x.shape)
    for c, term in thorn.terms:
        xc = x - c @ axis
        if isinstance(term, _CappedCoulomb):
            if term.screening > 0:
                out = out + 2.0 * math.pi * term.amplitude * np.exp(-term.screening * np.abs(xc)) / term.screening
            else:
                out = out - 2.0 * math.pi * term.amplitude * np.abs(xc)
        elif isinstance(term, YukawaSum):
            out = out + term._profile_terms(xc)
        elif isinstance(term, OrbitalPotential):
            # Coulomb part -2 pi A |x| plus the neutral remainder, integrated numerically
            out = out - 2.0 * math.pi * term.amplitude * np.abs(xc) + _orbital_profile_remainder(term, xc)
        else:
            out = out + term.profile(xc)
    return out


def _orbital_profile_remainder(term: OrbitalPotential, x):
    rem = lambda r: term.value(r) - term.amplitude / max(r, 1e-300)
    out = np.empty(np.shape(x))
    for i, xi in enumerate(np.ravel(x)):
        f = lambda rho: 2 * math.pi * rho * rem(math.hypot(xi, rho))
        out.flat[i] = _quad_semi_infinite(f, max(abs(xi), 1e-6), term.outer_range)
    return out


def radial_fourier_transform(func, k, r_scale, r_outer, r_min=0.0):
    """Numerical 3-D Fourier transform of a spherical function: 4 pi / k int r f(r) sin(k r) dr."""
    k = np.atleast_1d(_as_array(k))
    out = np.empty(k.shape)
    for i, kk in enumerate(k.ravel()):
        edges = [r_min, max(r_scale, r_min * 2 if r_min else r_scale)]
        while edges[-1] < 60.0 * r_outer:
            edges.append(edges[-1] * 3.0)
        total = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            n_osc = kk * (b - a) / (2 * math.pi)
            val, _ = integrate.quad(
                lambda r: r * float(func(r)),
                a,
                b,
                weight="sin",
                wvar=kk,
                limit=max(200, int(4 * n_osc) + 50),
                epsabs=0.0,
                epsrel=1e-11,
            )
            total += val
        out.flat[i] = 4.0 * math.pi * total / kk
    return out


# ---------------------------------------------------------------------------
# continuum potentials


@dataclass(frozen=True)
class ContinuumPotential:
    """Lindhard potential of a plane array, tabulated over one period.

    ``table`` is the unit-positive-charge energy V(x) on ``x`` in [0, period);
    ``gradient`` is dV/dx.  Planes sit at x = 0 mod period.  Evaluation uses
    the periodic cubic Hermite interpolant of (table, gradient), so the force
    is the exact derivative of the interpolated potential.
    """

    x: np.ndarray
    table: np.ndarray
    gradient: np.ndarray
    period: float
    geometry: str = "planar"
    periodic: bool = True

    def __post_init__(self):
        for name in ("x", "table", "gradient"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @cached_property
    def _spline(self):
        xs = np.append(self.x, self.x[0] + self.period) if self.periodic else self.x
        vs = np.append(self.table, self.table[0]) if self.periodic else self.table
        ds = np.append(self.gradient, self.gradient[0]) if self.periodic else self.gradient
        return CubicHermiteSpline(xs, vs, ds)

    def _wrap(self, x):
        x = _as_array(x)
        if not np.all(np.isfinite(x)):
            raise DomainError("position is not finite")
        if self.periodic:
            return self.x[0] + np.mod(x - self.x[0], self.period)
        if np.any(x < self.x[0]) or np.any(x > self.x[-1]):
            raise DomainError("position outside the tabulated potential")
        return x

    def value(self, x):
        return self._spline(self._wrap(x))

    def derivative(self, x):
        return self._spline(self._wrap(x), 1)

    def second_derivative(self, x):
        return self._spline(self._wrap(x), 2)

    @cached_property
    def _extrema(self):
        xs = np.linspace(self.x[0], self.x[0] + (self.period if self.periodic else self.x[-1] - self.x[0]), 20001)
        v = self._spline(xs)
        return float(v.min()), float(v.max())

    @property
    def U0(self) -> float:
        lo, hi = self._extrema
        return hi - lo

    def minimum_energy(self, charge_sign: int) -> float:
        lo, hi = self._extrema
        return lo if charge_sign > 0 else -hi

    def energy(self, x, charge_sign: int):
        """Particle energy charge_sign * V(x), gauged to zero at its minimum, eV."""
        return charge_sign * self.value(x) - self.minimum_energy(charge_sign)

    def force(self, x, charge_sign: int):
        """-d(energy)/dx, eV/nm."""
        return -charge_sign * self.derivative(x)

    def minimum_position(self, charge_sign: int) -> float:
        xs = np.linspace(self.x[0], self.x[-1], 20001)
        return float(xs[np.argmin(charge_sign * self._spline(xs))])

    def max_curvature(self) -> float:
        xs = np.linspace(self.x[0], self.x[-1], 20001)
        return float(np.max(np.abs(self._spline(xs, 2))))


@dataclass(frozen=True)
class AxialContinuumPotential:
    """Continuum potential of a square lattice of atomic strings.

    Evaluated as a sum over strings of one radial string profile (cubic
    Hermite in rho), so forces are exact gradients.  ``table`` holds the
    potential sampled on the (x, y) grid of one cell.
    """

    rho: np.ndarray
    profile: np.ndarray
    profile_derivative: np.ndarray
    spacing: float
    x: np.ndarray
    table: np.ndarray
    geometry: str = "axial"

    @cached_property
    def _spline(self):
        return CubicHermiteSpline(self.rho, self.profile, self.profile_derivative)

    @property
    def cutoff(self) -> float:
        return float(self.rho[-1])

    def _neighbours(self):
        n = int(math.ceil(self.cutoff / self.spacing)) + 1
        idx = np.arange(-n, n + 1)
        gx, gy = np.meshgrid(idx, idx, indexing="ij")
        return np.stack([gx.ravel(), gy.ravel()], axis=-1) * self.spacing

    def value(self, r):
        r = np.atleast_2d(_as_array(r))
        if not np.all(np.isfinite(r)):
            raise DomainError("position is not finite")
        cell = np.floor(r / self.spacing + 0.5) * self.spacing
        rel = r - cell
        out = np.zeros(r.shape[0])
        for c in self._neighbours():
            d = np.linalg.norm(rel - c, axis=-1)
            inside = d < self.cutoff
            out += np.where(inside, self._spline(np.minimum(d, self.cutoff)), 0.0)
        return out

    def gradient_vector(self, r):
        r = np.atleast_2d(_as_array(r))
        cell = np.floor(r / self.spacing + 0.5) * self.spacing
        rel = r - cell
        out = np.zeros(r.shape)
        for c in self._neighbours():
            dv = rel - c
            d = np.linalg.norm(dv, axis=-1)
            inside = (d < self.cutoff) & (d > 0)
            safe = np.where(d > 0, d, 1.0)
            out += np.where(inside, self._spline(np.minimum(d, self.cutoff), 1) / safe, 0.0)[:, None] * dv
        return out

    @cached_property
    def _extrema(self):
        return float(self.table.min()), float(self.table.max())

    @property
    def U0(self) -> float:
        lo, hi = self._extrema
        return hi - lo

    def minimum_energy(self, charge_sign: int) -> float:
        lo, hi = self._extrema
        return lo if charge_sign > 0 else -hi

    def energy(self, r, charge_sign: int):
        return charge_sign * self.value(r) - self.minimum_energy(charge_sign)

    def force(self, r, charge_sign: int):
        return -charge_sign * self.gradient_vector(r)


def build_continuum(crystal: CrystalModel, s: Optional[ScreeningModel] = None, n_points: Optional[int] = None,
                    n_images: Optional[int] = None):
    """Continuum (Lindhard) potential of the crystal's planes or strings.

    The planar grid defaults to 256 points per period, refined as needed to
    keep the spacing below u1/4; an explicit coarser ``n_points`` is an error.
    """
    if s is None:
        s = ScreeningModel.for_crystal(crystal)
    period = crystal.interplanar_spacing
    atom = s.atom_term(crystal.Z)
    if crystal.geometry == "planar":
        if n_points is None:
            n_points = max(256, int(math.ceil(4.0 * period / crystal.u1)))
        dx = period / n_points
        if dx > crystal.u1 / 4.0:
            raise ConfigurationError(
                f"continuum grid spacing {dx:.3g} nm is coarser than u1/4 = {crystal.u1 / 4:.3g} nm"
            )
        x = np.arange(n_points) * dx
        if n_images is None:
            reach = 40.0 / min(atom.ranges)
            n_images = int(math.ceil(reach / period)) + 1
        value = np.zeros(n_points)
        grad = np.zeros(n_points)
        sig = crystal.u1
        for j in range(-n_images, n_images + 1):
            xj = x - j * period
            for a, m in zip(atom.amplitudes, atom.ranges):
                pref = crystal.atom_density * 2.0 * math.pi * a / m
                value += pref * smeared_exponential_profile(xj, m, sig)
                grad += pref * _smeared_exponential_profile_derivative(xj, m, sig)
        return ContinuumPotential(x=x, table=value, gradient=grad, period=period)
    return _build_axial(crystal, atom, 256 if n_points is None else n_points)


def _smeared_exponential_profile_derivative(x, m, sigma):
    """d/dx of :func:`smeared_exponential_profile`."""
    x = _as_array(x)
    sign = np.sign(x)
    x = np.abs(x)
    x1 = (m * sigma**2 - x) / (_SQRT2 * sigma)
    x2 = (m * sigma**2 + x) / (_SQRT2 * sigma)
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    t2 = special.erfcx(x2) * g
    with np.errstate(over="ignore", invalid="ignore"):
        t1_neg = np.exp(0.5 * m**2 * sigma**2 - m * x) * special.erfc(x1)
    t1 = np.where(x1 >= 0, special.erfcx(np.maximum(x1, 0.0)) * g, t1_neg)
    # d t1/dx = -m t1 + c g ; d t2/dx = m t2 - c g with c = sqrt(2/pi)/sigma
    return sign * 0.5 * m * (t2 - t1)


def _string_profile(atom: YukawaSum, sigma: float, rho):
    """int dz Vbar_A along a string at transverse distance rho, per atom per unit length."""
    out = np.zeros(np.shape(rho))
    for a, m in zip(atom.amplitudes, atom.ranges):
        for i, r in enumerate(np.ravel(rho)):
            f = lambda rp: rp * 2.0 * special.k0(m * rp) / sigma**2 * math.exp(-((r - rp) ** 2) / (2 * sigma**2)) * special.i0e(r * rp / sigma**2)
            lo = max(0.0, r - 12 * sigma)
            hi = r + 12 * sigma
            pts = [p for p in (r,) if lo < p < hi]
            val, _ = integrate.quad(f, lo, hi, points=pts or None, limit=200, epsrel=1e-10, epsabs=0.0)
            out.flat[i] += a * val
    return out


def _build_axial(crystal: CrystalModel, atom: YukawaSum, n_points: int):
    spacing = crystal.interplanar_spacing
    cutoff = min(2.5 * spacing, 30.0 / min(atom.ranges))
    rho = np.concatenate([np.linspace(0.0, 6 * crystal.u1, 120, endpoint=False),
                          np.linspace(6 * crystal.u1, cutoff, 280)])
    prof = crystal.atom_density * _string_profile(atom, crystal.u1, rho)
    prof = prof - prof[-1]
    deriv = np.gradient(prof, rho, edge_order=2)
    deriv[0] = 0.0
    n = max(32, n_points // 4)
    xs = (np.arange(n) / n - 0.5) * spacing
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    pot = AxialContinuumPotential(rho=rho, profile=prof, profile_derivative=deriv, spacing=spacing,
                                  x=xs, table=np.zeros((n, n)))
    table = pot.value(np.stack([gx.ravel(), gy.ravel()], axis=-1)).reshape(n, n)
    return AxialContinuumPotential(rho=rho, profile=prof, profile_derivative=deriv, spacing=spacing,
                                   x=xs, table=table)


def harmonic_continuum(curvature: float, half_width: float, n_points: int = 2001) -> ContinuumPotential:
    """Non-periodic test table V = curvature x^2 / 2 on [-half_width, half_width]."""
    x = np.linspace(-half_width, half_width, n_points)
    return ContinuumPotential(x=x, table=0.5 * curvature * x**2, gradient=curvature * x,
                              period=2 * half_width, periodic=False)


def with_continuum_depth(crystal: CrystalModel, continuum=None) -> CrystalModel:
    """Return the crystal with U0 filled in from its continuum potential."""
    if crystal.U0 is not None:
        return crystal
    if continuum is None:
        continuum = build_continuum(crystal)
    return crystal.replace(U0=float(continuum.U0))
