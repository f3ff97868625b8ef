"""Trajectory transport: continuum stepping, SCM kinks, CM snapshots, ensembles."""

from .correlations import CorrelatedField, PhononCorrelationModel, correlated_displacement_field
from .snapshot import Snapshot, make_snapshot, step_cm
from .trajectory import (
    DEFAULT_NEIGHBOURHOOD,
    KinkLog,
    TrajectoryRecord,
    TransportSetup,
    build_setup,
    detect_dechanneling,
    oscillation_period,
    run_cm_trajectory,
    run_continuum_trajectory,
    run_scm_trajectory,
    stability_step,
    step_continuum,
)
from .ensemble import (
    ComparisonResult,
    DechannelingFit,
    SimulationResult,
    compare_models,
    estimate_dechanneling_length,
    paired_test,
    run_ensemble,
    survival_curve,
)
