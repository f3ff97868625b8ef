"""Units, physical constants, crystal and beam configuration, kinematics.

Internal units: energies and momenta in MeV (c = 1), lengths in nm,
potentials in eV.  Conversions between inverse length and momentum go
through ``HBARC_MEV_NM``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np


@dataclass(frozen=True)
class PhysicalConstants:
    fine_structure_alpha: float = 1.0 / 137.035999084
    electron_mass: float = 0.51099895000  # MeV
    hbar_c: float = 197.3269804  # MeV fm

    @property
    def hbar_c_mev_nm(self) -> float:
        return self.hbar_c * 1e-6

    @property
    def hbar_c_ev_nm(self) -> float:
        return self.hbar_c


CONSTANTS = PhysicalConstants()
ALPHA = CONSTANTS.fine_structure_alpha
ELECTRON_MASS = CONSTANTS.electron_mass
HBARC_MEV_NM = CONSTANTS.hbar_c_mev_nm
HBARC_EV_NM = CONSTANTS.hbar_c_ev_nm


class DomainError(ValueError):
    """Argument outside the domain of a physical operation."""


class ConfigurationError(ValueError):
    """Inconsistent or unphysical configuration."""


def momentum_to_wavenumber(q_mev):
    """MeV -> nm^-1."""
    return np.asarray(q_mev) / HBARC_MEV_NM


def wavenumber_to_momentum(k_inv_nm):
    """nm^-1 -> MeV."""
    return np.asarray(k_inv_nm) * HBARC_MEV_NM


@dataclass(frozen=True)
class CrystalModel:
    """Material, geometry and vibration parameters.

    ``interplanar_spacing`` is the plane spacing for planar channeling and
    the (square) string-lattice spacing for axial channeling.
    ``atom_density`` is the areal density of a plane (nm^-2) or the linear
    density of a string (nm^-1).  ``U0`` may be left unset and filled in
    from the continuum potential (see :func:`with_continuum_depth`).
    """

    Z: int
    lattice_constant: float
    geometry: str
    orientation: Tuple[int, ...]
    interplanar_spacing: float
    u1: float
    a_TF: float
    r_N: float
    atom_density: float
    U0: Optional[float] = None
    name: str = "custom"

    def __post_init__(self):
        if int(self.Z) != self.Z or self.Z < 1:
            raise ConfigurationError(f"Z must be a positive integer, got {self.Z}")
        if self.geometry not in ("planar", "axial"):
            raise ConfigurationError(f"geometry must be 'planar' or 'axial', got {self.geometry!r}")
        for key in ("lattice_constant", "interplanar_spacing", "u1", "a_TF", "r_N", "atom_density"):
            value = getattr(self, key)
            if not (np.isfinite(value) and value > 0):
                raise ConfigurationError(f"{key} must be strictly positive, got {value}")
        if not (self.r_N < self.u1 < self.a_TF < self.interplanar_spacing):
            raise ConfigurationError(
                "scale hierarchy r_N < u1 < a_TF < interplanar_spacing violated: "
                f"r_N={self.r_N}, u1={self.u1}, a_TF={self.a_TF}, "
                f"spacing={self.interplanar_spacing}"
            )
        if self.U0 is not None and not (np.isfinite(self.U0) and self.U0 >= 0):
            raise ConfigurationError(f"U0 must be non-negative, got {self.U0}")

    @property
    def volume_density(self) -> float:
        """Atoms per nm^3."""
        if self.geometry == "planar":
            return self.atom_density / self.interplanar_spacing
        return self.atom_density / self.interplanar_spacing**2

    def replace(self, **changes) -> "CrystalModel":
        return replace(self, **changes)


def silicon(geometry: str = "planar", U0: Optional[float] = None, **overrides) -> CrystalModel:
    """Silicon preset: (110) planes or <110> axis.

    u1 = 0.075 A and a_TF = 0.194 A; r_N = 3 fm.  The <110> axial preset
    uses a square string lattice with the true string density.
    """
    a = 0.5431
    if geometry == "planar":
        params = dict(
            orientation=(1, 1, 0),
            interplanar_spacing=a / (2.0 * math.sqrt(2.0)),
            atom_density=2.0 * math.sqrt(2.0) / a**2,
        )
    elif geometry == "axial":
        n_line = math.sqrt(2.0) / a  # atoms per nm along a <110> row
        strings_per_area = (8.0 / a**3) / n_line
        params = dict(
            orientation=(1, 1, 0),
            interplanar_spacing=1.0 / math.sqrt(strings_per_area),
            atom_density=n_line,
        )
    else:
        raise ConfigurationError(f"unknown geometry {geometry!r}")
    base = dict(
        Z=14,
        lattice_constant=a,
        geometry=geometry,
        u1=0.0075,
        a_TF=0.0194,
        r_N=3e-6,
        U0=U0,
        name="Si",
    )
    base.update(params)
    base.update(overrides)
    return CrystalModel(**base)


PRESETS = {"Si": silicon}


def preset(name: str, **kwargs) -> CrystalModel:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise ConfigurationError(f"unknown crystal preset {name!r}; known: {sorted(PRESETS)}") from None
    return factory(**kwargs)


PARTICLE_PROPERTIES = {
    "electron": (-1, ELECTRON_MASS),
    "positron": (+1, ELECTRON_MASS),
}


@dataclass(frozen=True)
class BeamConfig:
    particle: str
    E: float  # MeV, total energy
    entry_angle_to_channel: float = 0.0  # mrad
    transverse_entry_distribution: str = "uniform"
    entry_sigma: float = 0.0  # nm, for the gaussian entry
    entry_position: Optional[float] = None  # nm, for delta entry; None = potential minimum

    def __post_init__(self):
        if self.particle not in PARTICLE_PROPERTIES:
            raise ConfigurationError(f"particle must be one of {sorted(PARTICLE_PROPERTIES)}")
        if not (np.isfinite(self.E) and self.E > self.mass):
            raise ConfigurationError(f"beam energy must exceed the rest mass, got E={self.E} MeV")
        if not np.isfinite(self.entry_angle_to_channel):
            raise ConfigurationError("entry angle must be finite")
        if self.transverse_entry_distribution not in ("delta", "uniform", "gaussian"):
            raise ConfigurationError(
                "transverse_entry_distribution must be 'delta', 'uniform' or 'gaussian'"
            )
        if self.transverse_entry_distribution == "gaussian" and not self.entry_sigma > 0:
            raise ConfigurationError("gaussian entry needs entry_sigma > 0")

    @property
    def charge_sign(self) -> int:
        return PARTICLE_PROPERTIES[self.particle][0]

    @property
    def mass(self) -> float:
        return PARTICLE_PROPERTIES[self.particle][1]


@dataclass(frozen=True)
class ParticleState:
    """Relativistic particle state; the channel direction is +z."""

    E: float
    p: np.ndarray = field(repr=False)
    r: np.ndarray = field(repr=False)
    charge_sign: int
    mass: float

    def __post_init__(self):
        p = np.array(self.p, dtype=float).reshape(3)
        r = np.array(self.r, dtype=float).reshape(3)
        p.flags.writeable = False
        r.flags.writeable = False
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "r", r)
        if self.charge_sign not in (-1, 1):
            raise DomainError("charge_sign must be +1 or -1")
        if not self.E > self.mass:
            raise DomainError(f"E={self.E} must exceed the mass {self.mass}")
        if mass_shell_error(self) > 1e-9:
            raise DomainError("state is off the mass shell")

    @classmethod
    def from_transverse(cls, E, p_transverse, r, charge_sign, mass):
        """Build a state from transverse momentum, fixing p_z on the mass shell."""
        pt = np.zeros(2)
        pt[: len(np.atleast_1d(p_transverse))] = np.atleast_1d(p_transverse)
        pz = math.sqrt(E * E - mass * mass - pt @ pt)
        return cls(E=E, p=np.array([pt[0], pt[1], pz]), r=r, charge_sign=charge_sign, mass=mass)

    @property
    def p_T(self) -> np.ndarray:
        return self.p[:2]

    @property
    def r_T(self) -> np.ndarray:
        return self.r[:2]

    def with_transverse(self, r_T, p_T, z=None) -> "ParticleState":
        r = np.array(self.r)
        r[:2] = r_T
        if z is not None:
            r[2] = z
        return ParticleState.from_transverse(self.E, p_T, r, self.charge_sign, self.mass)


def mass_shell_error(state: ParticleState) -> float:
    """|E^2 - p^2 - m^2| / E^2."""
    p = np.asarray(state.p)
    return abs(state.E**2 - p @ p - state.mass**2) / state.E**2


def critical_parameters(crystal: CrystalModel, E: float):
    """Lindhard critical angle (mrad) and critical transverse momentum (MeV).

    q_c = sqrt(2 E U0), psi_c = q_c / E.
    """
    if not E > 0:
        raise DomainError(f"E must be positive, got {E}")
    if crystal.U0 is None:
        raise DomainError("crystal U0 is not set; build the continuum potential first")
    U0 = crystal.U0
    if U0 < 0:
        raise DomainError(f"U0 must be non-negative, got {U0}")
    q_c = math.sqrt(2.0 * E * U0 * 1e-6)
    return q_c / E * 1e3, q_c


def transverse_momentum_energy(p_T, E) -> float:
    """Kinetic part of the transverse energy p_T^2 / 2E in eV."""
    p_T = np.asarray(p_T, dtype=float)
    return float(p_T @ p_T) / (2.0 * E) * 1e6


def transverse_energy(state: ParticleState, v_lin) -> float:
    """E_perp in eV, measured from the minimum of the particle's continuum energy."""
    if v_lin.geometry == "planar":
        pt = state.p[:1]
        pos = state.r[0]
    else:
        pt = state.p[:2]
        pos = state.r[:2]
    return transverse_momentum_energy(pt, state.E) + float(v_lin.energy(pos, state.charge_sign))
