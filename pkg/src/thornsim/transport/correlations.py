"""Correlated thermal vibrations: smooth long-wavelength field plus independent residue."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..core import CrystalModel, DomainError


@dataclass(frozen=True)
class PhononCorrelationModel:
    """Split of the per-axis vibration amplitude at the cutoff wavelength ``lambda_c`` (nm).

    With mode variance falling as 1/omega^2 on a Debye spectrum, the share
    of the displacement variance carried by wavelengths above lambda_c is
    k_c / k_max = 2 a / lambda_c.
    """

    lambda_c: float
    u_long: float
    u_short: float

    def __post_init__(self):
        if not (self.u_long >= 0 and self.u_short > 0):
            raise DomainError("amplitudes must be non-negative (u_short positive)")

    @classmethod
    def for_crystal(cls, crystal: CrystalModel, lambda_c: float) -> "PhononCorrelationModel":
        a = crystal.lattice_constant
        if not lambda_c > a:
            raise DomainError(f"lambda_c = {lambda_c} nm must exceed the lattice constant {a} nm")
        share = 0.0 if math.isinf(lambda_c) else min(2.0 * a / lambda_c, 1.0)
        return cls(lambda_c, crystal.u1 * math.sqrt(share), crystal.u1 * math.sqrt(1.0 - share))

    @property
    def u1(self) -> float:
        return math.hypot(self.u_long, self.u_short)


@dataclass(frozen=True)
class CorrelatedField:
    """Random superposition of plane-wave modes with wavelengths above lambda_c."""

    wavevectors: np.ndarray  # (n, 3) nm^-1
    amplitudes: np.ndarray  # (n, 3) nm
    phases: np.ndarray  # (n,)
    u_long: float
    u_short: float

    def displacement(self, r) -> np.ndarray:
        """Smooth displacement (nm) at positions r (..., 3)."""
        r = np.asarray(r, dtype=float)
        arg = r @ self.wavevectors.T + self.phases
        return np.cos(arg) @ self.amplitudes

    def centreline(self, z, x=0.0, y=0.0) -> np.ndarray:
        """Transverse shift of the channel centre along depth z at (x, y)."""
        z = np.atleast_1d(np.asarray(z, dtype=float))
        r = np.stack([np.full_like(z, x), np.full_like(z, y), z], axis=-1)
        return self.displacement(r)[:, :2]

    def curvature_radius(self, depth: float, n: int = 4001) -> float:
        """Smallest bending radius (nm) of the x centreline over [0, depth]."""
        z = np.linspace(0.0, depth, n)
        arg = np.outer(z, self.wavevectors[:, 2]) + self.phases
        curv = -(np.cos(arg) * self.wavevectors[:, 2] ** 2) @ self.amplitudes[:, 0]
        peak = np.max(np.abs(curv))
        return math.inf if peak == 0 else 1.0 / peak


def correlated_displacement_field(crystal: CrystalModel, lambda_c: float, rng: np.random.Generator,
                                  n_modes: int = 64, model: Optional[PhononCorrelationModel] = None) -> CorrelatedField:
    """Draw a long-wavelength displacement field with per-axis variance u_long^2.

    Mode wavevectors are isotropic with |k| uniform up to 2 pi / lambda_c;
    all modes carry equal variance.
    """
    if model is None:
        model = PhononCorrelationModel.for_crystal(crystal, lambda_c)
    elif not lambda_c > crystal.lattice_constant:
        raise DomainError(f"lambda_c = {lambda_c} nm must exceed the lattice constant")
    k_max = 0.0 if math.isinf(lambda_c) else 2.0 * math.pi / lambda_c
    kmag = rng.random(n_modes) * k_max
    cos_t = rng.uniform(-1.0, 1.0, n_modes)
    phi = rng.uniform(0.0, 2.0 * math.pi, n_modes)
    sin_t = np.sqrt(1.0 - cos_t**2)
    kv = kmag[:, None] * np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t], axis=-1)
    amps = rng.normal(0.0, model.u_long * math.sqrt(2.0 / n_modes), (n_modes, 3))
    phases = rng.uniform(0.0, 2.0 * math.pi, n_modes)
    return CorrelatedField(kv, amps, phases, model.u_long, model.u_short)
