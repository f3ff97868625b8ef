"""Single-trajectory drivers around the compiled engine."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np

from ..core import (
    BeamConfig,
    ConfigurationError,
    CrystalModel,
    DomainError,
    ParticleState,
    transverse_momentum_energy,
)
from ..potentials import (
    COULOMB_EV_NM,
    AxialContinuumPotential,
    ContinuumPotential,
    ScreeningModel,
    _CappedCoulomb,
    build_continuum,
    screened_orbital_term,
)
from ..sampler import ENTRY_STREAM, EVENT_STREAM, CollisionKernel, RandomStream, build_kernel
from ..xsection import DEFAULT_ELECTRON_SCREENING, FormFactorModel, electron_kinematic_cap
from . import engine
from .correlations import PhononCorrelationModel, correlated_displacement_field

DEFAULT_NEIGHBOURHOOD = 0.5  # nm
STEPS_PER_PERIOD = 50
CORRELATION_STREAM = 2


# ---------------------------------------------------------------------------
# continuum stepping


def _curvature(v_lin) -> float:
    if isinstance(v_lin, AxialContinuumPotential):
        d1 = v_lin._spline(v_lin.rho, 1)
        return float(np.max(np.abs(np.gradient(d1, v_lin.rho))))
    return v_lin.max_curvature()


def oscillation_period(v_lin, E: float) -> float:
    """Shortest small-amplitude channel oscillation period (nm) at energy E (MeV)."""
    k = _curvature(v_lin)
    if not k > 0:
        return math.inf
    return 2.0 * math.pi * math.sqrt(E / (1e-6 * k))


def stability_step(v_lin, E: float) -> float:
    """Largest admissible depth step: a fiftieth of the oscillation period."""
    return oscillation_period(v_lin, E) / STEPS_PER_PERIOD


def _check_step(v_lin, E, dz):
    if not (np.isfinite(dz) and dz > 0):
        raise DomainError(f"step must be positive, got {dz}")
    limit = stability_step(v_lin, E)
    if dz > limit * (1 + 1e-12):
        raise DomainError(f"step {dz:.4g} nm exceeds the stability bound {limit:.4g} nm (period/{STEPS_PER_PERIOD})")


def _force(v_lin, r_T, charge_sign):
    if isinstance(v_lin, AxialContinuumPotential):
        return v_lin.force(r_T, charge_sign)[0]
    return np.array([float(v_lin.force(r_T[0], charge_sign)), 0.0])


def step_continuum(state: ParticleState, v_lin, dz: float) -> ParticleState:
    """One kick-drift-kick step of length dz (nm) in the continuum potential.

    The drift uses dx/dz = p_T / E (ultra-relativistic); E is unchanged and
    p_z is re-solved on the mass shell.
    """
    _check_step(v_lin, state.E, dz)
    E = state.E
    r = state.r_T.copy()
    p = state.p_T.copy()
    p = p + 0.5 * dz * 1e-6 * _force(v_lin, r, state.charge_sign)
    r = r + dz * p / E
    p = p + 0.5 * dz * 1e-6 * _force(v_lin, r, state.charge_sign)
    return ParticleState.from_transverse(E, p, np.array([r[0], r[1], state.r[2] + dz]), state.charge_sign,
                                         state.mass)


# ---------------------------------------------------------------------------
# tables


@lru_cache(maxsize=8)
def continuum_for(crystal: CrystalModel):
    return build_continuum(crystal)


def _continuum_arrays(v_lin):
    if isinstance(v_lin, AxialContinuumPotential):
        rho = np.linspace(0.0, v_lin.cutoff, 4001)
        vals = v_lin._spline(rho)
        ders = v_lin._spline(rho, 1)
        ders[0] = 0.0
        return 1, 0.0, rho[1] - rho[0], vals, ders, False, v_lin.spacing, v_lin._neighbours().astype(float)
    x = np.asarray(v_lin.x)
    return (0, float(x[0]), float(x[1] - x[0]), np.asarray(v_lin.table, dtype=float),
            np.asarray(v_lin.gradient, dtype=float), bool(v_lin.periodic), float(v_lin.period), np.zeros((1, 2)))


def minimum_position(v_lin, charge_sign: int):
    if isinstance(v_lin, AxialContinuumPotential):
        i = np.unravel_index(np.argmin(charge_sign * v_lin.table), v_lin.table.shape)
        return np.array([v_lin.x[i[0]], v_lin.x[i[1]]])
    return np.array([v_lin.minimum_position(charge_sign), 0.0])


@dataclass(frozen=True)
class CMTables:
    """Eikonal kick profiles b*K(b) (eV nm) on a log grid in b."""

    lb0: float
    dlb: float
    g: np.ndarray
    power: np.ndarray
    shell_cum: np.ndarray
    shell_shape: np.ndarray
    shell_beta: np.ndarray
    n_electrons: int


def build_cm_tables(crystal: CrystalModel, screening_length: Optional[float] = DEFAULT_ELECTRON_SCREENING,
                    n: int = 4096, b_lo: float = 1e-9, b_hi: float = 3.0) -> CMTables:
    s = ScreeningModel.for_crystal(crystal)
    atom = s.atom_term(crystal.Z)
    ff = FormFactorModel.from_screening(s, crystal.Z)
    m_s = 0.0 if screening_length is None else 1.0 / screening_length
    b = np.geomspace(b_lo, b_hi, n)
    rows = [atom.kick(b), atom.smeared(crystal.u1).kick(b), _CappedCoulomb(-COULOMB_EV_NM, 1e-7, m_s).kick(b)]
    power = [2.0, 2.0, 0.0]
    occ = []
    for orb, n_k in ff.orbitals:
        rows.append(screened_orbital_term(orb, COULOMB_EV_NM, m_s).kick(b))
        power.append(2.0)
        occ.append(n_k)
    g = np.ascontiguousarray(np.stack(rows) * b[None, :])
    occ = np.asarray(occ) / np.sum(occ)
    return CMTables(
        lb0=math.log(b_lo),
        dlb=math.log(b[1] / b[0]),
        g=g,
        power=np.asarray(power),
        shell_cum=np.cumsum(occ),
        shell_shape=np.array([o.k + 3.0 for o, _ in ff.orbitals]),
        shell_beta=np.array([o.beta for o, _ in ff.orbitals]),
        n_electrons=int(crystal.Z),
    )


@lru_cache(maxsize=8)
def _cm_tables_cached(crystal, screening_length):
    return build_cm_tables(crystal, screening_length)


_EMPTY1 = np.zeros(1)
_EMPTY2 = np.zeros((1, 1))
_EMPTY3 = np.zeros((1, 1, 1))
_EMPTY4 = np.zeros((1, 1, 1, 1))


@dataclass(frozen=True)
class TransportSetup:
    """Everything a trajectory needs: crystal, beam, continuum, collision tables.

    With correlations enabled the continuum and the tables are built for the
    residual short-wavelength amplitude, and each trajectory draws its own
    smooth centreline displacement.
    """

    crystal: CrystalModel
    beam: BeamConfig
    continuum: object
    dz: float
    U0: float
    neighbourhood: float = DEFAULT_NEIGHBOURHOOD
    screening_length: float = DEFAULT_ELECTRON_SCREENING
    kernel: Optional[CollisionKernel] = None
    cm: Optional[CMTables] = None
    correlations: Optional[PhononCorrelationModel] = None
    effective_crystal: Optional[CrystalModel] = None

    @property
    def E(self) -> float:
        return self.beam.E

    @property
    def charge_sign(self) -> int:
        return self.beam.charge_sign


def build_setup(crystal: CrystalModel, beam: BeamConfig, models=("scm", "cm"), dz: Optional[float] = None,
                neighbourhood: float = DEFAULT_NEIGHBOURHOOD,
                screening_length: float = DEFAULT_ELECTRON_SCREENING,
                correlations: Optional[PhononCorrelationModel] = None, continuum=None) -> TransportSetup:
    if not neighbourhood > 6 * crystal.u1:
        raise ConfigurationError("interaction neighbourhood must exceed 6 u1")
    eff = crystal
    if correlations is not None:
        eff = crystal.replace(u1=correlations.u_short)
    if continuum is None:
        continuum = continuum_for(eff)
    U0 = float(crystal.U0) if crystal.U0 is not None else float(continuum.U0)
    limit = stability_step(continuum, beam.E)
    if dz is None:
        dz = limit
    else:
        _check_step(continuum, beam.E, dz)
    kernel = build_kernel(eff, beam.E, screening_length, neighbourhood) if "scm" in models else None
    cm = _cm_tables_cached(eff, screening_length) if "cm" in models else None
    return TransportSetup(crystal=crystal, beam=beam, continuum=continuum, dz=float(dz), U0=U0,
                          neighbourhood=neighbourhood, screening_length=screening_length, kernel=kernel, cm=cm,
                          correlations=correlations, effective_crystal=eff)


# ---------------------------------------------------------------------------
# records


@dataclass(frozen=True)
class KinkLog:
    """Logged kicks in depth order.

    Depth (um), kind (0 vib, 1 e, 2 CM site), q (MeV), E_perp before/after
    (eV) and the transverse momentum just before the kick (MeV).
    """

    z_um: np.ndarray
    kind: np.ndarray
    q: np.ndarray
    eperp_before: np.ndarray
    eperp_after: np.ndarray
    p_before: np.ndarray

    @classmethod
    def from_events(cls, events: np.ndarray) -> "KinkLog":
        return cls(events[:, 0] * 1e-3, events[:, 1].astype(np.int8), events[:, 2:4].copy(), events[:, 4].copy(),
                   events[:, 5].copy(), events[:, 6:8].copy())

    def __len__(self):
        return self.z_um.size

    @property
    def kind_names(self):
        return np.array(["vib", "e", "cm"])[self.kind]


@dataclass(frozen=True)
class TrajectoryRecord:
    """E_perp history at step ends plus summary of one trajectory."""

    index: int
    depth_nm: np.ndarray
    eperp: np.ndarray
    U0: float
    dechannel_depth_nm: Optional[float]
    final: np.ndarray  # x, y, px, py
    stats: dict = field(default_factory=dict)
    entry: Tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)


def detect_dechanneling(record: TrajectoryRecord, U0: Optional[float] = None) -> Optional[float]:
    """First recorded depth (nm) where E_perp exceeds U0 (strictly), or None."""
    U0 = record.U0 if U0 is None else U0
    above = np.nonzero(np.asarray(record.eperp) > U0)[0]
    if above.size == 0:
        return None
    return float(record.depth_nm[above[0]])


# ---------------------------------------------------------------------------
# drivers


def sample_entry(setup: TransportSetup, rng: np.random.Generator):
    """Entry (x, y, px, py): position per the beam's distribution, tilt along x."""
    beam = setup.beam
    v = setup.continuum
    axial = isinstance(v, AxialContinuumPotential)
    centre = minimum_position(v, beam.charge_sign)
    if beam.transverse_entry_distribution == "delta":
        pos = centre.copy()
        if beam.entry_position is not None:
            pos[0] = beam.entry_position
    elif beam.transverse_entry_distribution == "uniform":
        if axial:
            pos = (rng.random(2) - 0.5) * v.spacing
        else:
            pos = np.array([rng.random() * v.period + v.x[0], 0.0])
    else:
        pos = centre + rng.normal(0.0, beam.entry_sigma, 2) * (np.array([1.0, 1.0]) if axial else np.array([1.0, 0.0]))
    px = beam.E * math.sin(beam.entry_angle_to_channel * 1e-3)
    return float(pos[0]), float(pos[1]), px, 0.0


def _centreline_modes(setup: TransportSetup, stream: RandomStream, x0, y0):
    if setup.correlations is None:
        return np.zeros(0), np.zeros(0), np.zeros((0, 2))
    field_ = correlated_displacement_field(setup.crystal, setup.correlations.lambda_c,
                                          stream.generator(CORRELATION_STREAM), model=setup.correlations)
    axial = setup.crystal.geometry == "axial"
    kz = field_.wavevectors[:, 2].copy()
    phase = field_.wavevectors[:, 0] * x0 + field_.wavevectors[:, 1] * y0 + field_.phases
    amp = field_.amplitudes[:, :2].copy()
    if not axial:
        amp[:, 1] = 0.0
    return kz, phase, amp


def engine_call(setup: TransportSetup, mode: int, x, y, px, py, depth_nm: float, rng, options=None,
                centreline=None):
    """Run the compiled engine with the setup's tables."""
    if options is None:
        options = engine.default_options()
    geom, cx0, ch, cvals, cders, cper, spacing, nbrs = _continuum_arrays(setup.continuum)
    eff = setup.effective_crystal or setup.crystal
    sign = setup.charge_sign
    e_min = float(setup.continuum.minimum_energy(sign))
    if centreline is None:
        centreline = (np.zeros(0), np.zeros(0), np.zeros((0, 2)))
    kz, ph, amp = centreline
    k = setup.kernel
    if mode == engine.MODE_SCM and k is None:
        raise ConfigurationError("setup has no SCM kernel")
    if mode == engine.MODE_CM and setup.cm is None:
        raise ConfigurationError("setup has no CM tables")
    if k is not None:
        kargs = (k.vib_range, k.sigma_A_coef, k.vib_cdf_q, k.vib_cdf_phi, k.vib_lnq, k.phi_edges, k.occupancy,
                 k.s_range, k.sigma_e_coef, k.proj_lb0, k.proj_dlb, k.proj_vals, k.e_cdf_q, k.e_cdf_phi, k.e_lnq)
    else:
        kargs = (1.0, _EMPTY2, _EMPTY2, _EMPTY3, _EMPTY1, _EMPTY1, _EMPTY1, _EMPTY1, _EMPTY3, _EMPTY1, _EMPTY1,
                 _EMPTY2, _EMPTY3, _EMPTY4, _EMPTY1)
    c = setup.cm
    if c is not None:
        cargs = (c.lb0, c.dlb, c.g, c.power, c.shell_cum, c.shell_shape, c.shell_beta, c.n_electrons)
    else:
        cargs = (0.0, 1.0, _EMPTY2, _EMPTY1, _EMPTY1, _EMPTY1, _EMPTY1, 0)
    density = eff.atom_density
    return engine.run_engine(
        mode, geom, setup.E, sign, setup.U0, e_min, cx0, ch, cvals, cders, cper, spacing, nbrs,
        density, setup.neighbourhood, eff.u1, kz, ph, amp, *kargs, *cargs, electron_kinematic_cap(setup.E),
        float(x), float(y), float(px), float(py), float(depth_nm), setup.dz, options, rng,
    )


def _stats_dict(stats):
    names = ("sites", "vib", "e", "strained", "truncated", "clamped", "steps")
    return {n: int(v) for n, v in zip(names, stats)}


def _run(setup, mode, stream, depth_um, options, entry=None):
    if entry is None:
        entry = sample_entry(setup, stream.generator(ENTRY_STREAM))
    x0, y0, px0, py0 = entry
    cl = _centreline_modes(setup, stream, x0, y0)
    hist, events, stats, dech, final = engine_call(setup, mode, x0, y0, px0, py0, depth_um * 1e3,
                                                   stream.generator(EVENT_STREAM), options, cl)
    rec = TrajectoryRecord(index=stream.index, depth_nm=hist[:, 0].copy(), eperp=hist[:, 1].copy(), U0=setup.U0,
                           dechannel_depth_nm=None if dech < 0 else float(dech), final=final,
                           stats=_stats_dict(stats), entry=(x0, y0, px0, py0))
    return rec, events


def run_scm_trajectory(setup: TransportSetup, stream: RandomStream, depth_um: float, options=None, entry=None):
    """Continuum motion with quantum-sampled kinks at site crossings; returns (record, KinkLog)."""
    rec, events = _run(setup, engine.MODE_SCM, stream, depth_um, options, entry)
    return rec, KinkLog.from_events(events)


def run_cm_trajectory(setup: TransportSetup, stream: RandomStream, depth_um: float, options=None, entry=None,
                      with_log=False):
    """Continuum motion plus eikonal kicks of every snapshot atom and electron.

    Returns the record, or (record, KinkLog) when ``with_log`` is set; the
    log holds every site kick only if the options were built with ``log_cm``.
    """
    rec, events = _run(setup, engine.MODE_CM, stream, depth_um, options, entry)
    if with_log:
        return rec, KinkLog.from_events(events)
    return rec


def run_continuum_trajectory(setup: TransportSetup, stream: RandomStream, depth_um: float, entry=None):
    rec, _ = _run(setup, engine.MODE_CONTINUUM, stream, depth_um, None, entry)
    return rec


def eperp_of(setup: TransportSetup, x, y, px, py) -> float:
    """E_perp (eV) of a transverse state, planar counting only the plane-normal momentum."""
    v = setup.continuum
    sign = setup.charge_sign
    if isinstance(v, AxialContinuumPotential):
        return transverse_momentum_energy([px, py], setup.E) + float(v.energy(np.array([x, y]), sign)[0])
    return transverse_momentum_energy([px], setup.E) + float(v.energy(x, sign))
