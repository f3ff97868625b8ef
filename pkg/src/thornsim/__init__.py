"""Channeling Monte Carlo with thorn scattering: classical and semi-classical models."""

__version__ = "0.1.0"

from .core import (  # noqa: F401
    ALPHA,
    HBARC_EV_NM,
    HBARC_MEV_NM,
    BeamConfig,
    ConfigurationError,
    CrystalModel,
    DomainError,
    ParticleState,
    critical_parameters,
    preset,
    silicon,
    transverse_energy,
)
