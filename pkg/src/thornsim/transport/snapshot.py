"""Frozen constituent snapshots and the adaptive full-potential integrator."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp

from ..core import CrystalModel, DomainError, ParticleState
from ..potentials import ScreeningModel, ThornElectron, ThornVib
from ..xsection import DEFAULT_ELECTRON_SCREENING, FormFactorModel
from .correlations import PhononCorrelationModel, correlated_displacement_field
from .trajectory import _check_step, _force


@dataclass(frozen=True)
class Snapshot:
    """Instantaneous nuclei and electrons near a trajectory segment.

    ``mean_sites`` (N, 3) lattice positions, ``displacements`` (N, 3)
    thermal offsets; electron ``parent`` indices, ``shell`` indices and
    ``offsets`` (M, 3) relative to their nucleus.
    """

    crystal: CrystalModel
    mean_sites: np.ndarray
    displacements: np.ndarray
    parent: np.ndarray
    shell: np.ndarray
    offsets: np.ndarray
    seed: Optional[int] = None
    screening_length: Optional[float] = DEFAULT_ELECTRON_SCREENING

    @property
    def nuclei(self) -> np.ndarray:
        return self.mean_sites + self.displacements

    @property
    def electrons(self) -> np.ndarray:
        return self.nuclei[self.parent] + self.offsets

    def thorns(self, charge_scale: float = 1.0) -> List[Tuple[np.ndarray, object]]:
        """(mean site, thorn) pairs; thorn coordinates are relative to the mean site."""
        if charge_scale == 0.0 or self.mean_sites.shape[0] == 0:
            return []
        s = ScreeningModel.for_crystal(self.crystal)
        ff = FormFactorModel.from_screening(s, self.crystal.Z)
        out = []
        for i, (site, u) in enumerate(zip(self.mean_sites, self.displacements)):
            out.append((site, ThornVib(self.crystal, u, s)))
        for j in range(self.parent.size):
            i = self.parent[j]
            orb = ff.orbitals[self.shell[j]][0]
            out.append((self.mean_sites[i], ThornElectron(orb, self.offsets[j], self.displacements[i],
                                                          screening_length=self.screening_length)))
        return out


def make_snapshot(crystal: CrystalModel, region, rng, correlations: Optional[PhononCorrelationModel] = None,
                  electrons: bool = True, screening_length: Optional[float] = DEFAULT_ELECTRON_SCREENING) -> Snapshot:
    """Sample constituents in ``region`` = ((x0, x1), (y0, y1), (z0, z1)) nm.

    ``rng`` is a Generator or an integer seed.  Planar crystals place
    Poisson sites on the planes x = j * spacing; axial crystals place
    Poisson atoms along the strings of the square lattice.
    """
    seed = None
    if not isinstance(rng, np.random.Generator):
        seed = int(rng)
        rng = np.random.default_rng(seed)
    (x0, x1), (y0, y1), (z0, z1) = [tuple(map(float, b)) for b in region]
    if not all(np.isfinite([x0, x1, y0, y1, z0, z1])) or x1 < x0 or y1 < y0 or z1 < z0:
        raise DomainError("region bounds must be finite and ordered")
    d = crystal.interplanar_spacing
    lz = z1 - z0
    sites = []
    if crystal.geometry == "planar":
        for j in range(int(math.ceil(x0 / d)), int(math.floor(x1 / d)) + 1):
            n = rng.poisson(crystal.atom_density * (y1 - y0) * lz)
            ys = rng.uniform(y0, y1, n)
            zs = rng.uniform(z0, z1, n)
            sites.append(np.stack([np.full(n, j * d), ys, zs], axis=-1))
    else:
        for i in range(int(math.ceil(x0 / d)), int(math.floor(x1 / d)) + 1):
            for k in range(int(math.ceil(y0 / d)), int(math.floor(y1 / d)) + 1):
                n = rng.poisson(crystal.atom_density * lz)
                zs = rng.uniform(z0, z1, n)
                sites.append(np.stack([np.full(n, i * d), np.full(n, k * d), zs], axis=-1))
    mean = np.concatenate(sites) if sites else np.zeros((0, 3))
    n_sites = mean.shape[0]
    if correlations is None:
        u = rng.normal(0.0, crystal.u1, (n_sites, 3))
    else:
        field_ = correlated_displacement_field(crystal, correlations.lambda_c, rng, model=correlations)
        u = field_.displacement(mean) + rng.normal(0.0, correlations.u_short, (n_sites, 3))
    if electrons and n_sites:
        ff = FormFactorModel.for_crystal(crystal)
        occ = np.array([n for _, n in ff.orbitals]) / crystal.Z
        parent = np.repeat(np.arange(n_sites), crystal.Z)
        shell = rng.choice(occ.size, size=parent.size, p=occ)
        offsets = np.zeros((parent.size, 3))
        for k, (orb, _) in enumerate(ff.orbitals):
            sel = shell == k
            r = orb.sample_radius(rng, int(sel.sum()))
            cos_t = rng.uniform(-1.0, 1.0, r.size)
            phi = rng.uniform(0.0, 2.0 * math.pi, r.size)
            sin_t = np.sqrt(1.0 - cos_t**2)
            offsets[sel] = r[:, None] * np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t], axis=-1)
    else:
        parent = np.zeros(0, dtype=int)
        shell = np.zeros(0, dtype=int)
        offsets = np.zeros((0, 3))
    return Snapshot(crystal, mean, u, parent, shell, offsets, seed, screening_length)


def _thorn_force(thorns, r3, charge_sign):
    """Force (eV/nm, transverse) on the particle from the listed thorns."""
    f = np.zeros(2)
    for site, thorn in thorns:
        f -= charge_sign * thorn.gradient(r3 - site)[0, :2]
    return f


def step_cm(state: ParticleState, snapshot: Snapshot, v_lin, dz: float, rtol: float = 1e-8,
            charge_scale: float = 1.0) -> ParticleState:
    """Advance dz (nm) in the continuum plus the snapshot's thorn potentials.

    Strang splitting: half continuum kicks around an adaptive (DOP853)
    integration of the drift with thorn forces, broken at every
    constituent depth so that no Coulomb peak is stepped over.
    """
    _check_step(v_lin, state.E, dz)
    E = state.E
    sign = state.charge_sign
    r = state.r_T.copy()
    p = state.p_T.copy()
    z0 = state.r[2]
    p = p + 0.5 * dz * 1e-6 * _force(v_lin, r, sign)
    thorns = snapshot.thorns(charge_scale)
    if thorns:
        zs = [c[2] + t.u[2] if isinstance(t, ThornVib) else c[2] + t.u[2] + t.s[2] for c, t in thorns]
        breaks = np.unique(np.clip(zs, z0, z0 + dz))
        edges = np.concatenate([[z0], breaks[(breaks > z0) & (breaks < z0 + dz)], [z0 + dz]])

        def rhs(z, y):
            f = _thorn_force(thorns, np.array([y[0], y[1], z]), sign)
            return [y[2] / E, y[3] / E, 1e-6 * f[0], 1e-6 * f[1]]

        y = np.array([r[0], r[1], p[0], p[1]])
        for a, b in zip(edges[:-1], edges[1:]):
            if b <= a:
                continue
            sol = solve_ivp(rhs, (a, b), y, method="DOP853", rtol=rtol,
                            atol=[1e-15, 1e-15, 1e-16, 1e-16])
            if not sol.success:
                raise DomainError(f"thorn integration failed: {sol.message}")
            y = sol.y[:, -1]
        r = y[:2]
        p = y[2:]
    else:
        r = r + dz * p / E
    p = p + 0.5 * dz * 1e-6 * _force(v_lin, r, sign)
    return ParticleState.from_transverse(E, p, np.array([r[0], r[1], z0 + dz]), sign, state.mass)
