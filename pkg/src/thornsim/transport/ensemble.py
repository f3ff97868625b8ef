"""Ensembles of trajectories, survival curves and dechanneling-length fits."""

from __future__ import annotations

import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.optimize import OptimizeWarning, curve_fit

from ..core import ConfigurationError
from ..sampler import RandomStream
from .trajectory import KinkLog, TrajectoryRecord, TransportSetup, run_cm_trajectory, run_scm_trajectory


@dataclass(frozen=True)
class DechannelingFit:
    """Exponential fit N(z) = A exp(-z / L) of the channeled fraction; L in um."""

    length_um: float
    length_err_um: float
    amplitude: float
    covariance: Optional[np.ndarray]
    window_um: tuple
    flag: str = "ok"  # ok | no decay | too few events

    @property
    def ok(self) -> bool:
        return self.flag == "ok"


def survival_curve(dechannel_depths_um: Sequence[Optional[float]], depth_um: float, n_bins: int = 100):
    """Channeled fraction at n_bins depths in (0, depth_um] with binomial standard errors."""
    d = np.array([np.inf if v is None else v for v in dechannel_depths_um], dtype=float)
    n = d.size
    if n == 0:
        raise ConfigurationError("survival curve needs at least one trajectory")
    z = np.linspace(0.0, depth_um, n_bins + 1)[1:]
    frac = (d[None, :] > z[:, None]).sum(axis=1) / n
    err = np.sqrt(frac * (1.0 - frac) / n)
    return z, frac, err


def estimate_dechanneling_length(depth_um, fraction, n_trajectories: int, window=(0.5, 1.0),
                                 stderr=None) -> DechannelingFit:
    """Fit the channeled fraction over the window (fractions of the depth range)."""
    z = np.asarray(depth_um, dtype=float)
    f = np.asarray(fraction, dtype=float)
    lo, hi = window[0] * z[-1], window[1] * z[-1]
    sel = (z >= lo - 1e-12) & (z <= hi + 1e-12)
    zw, fw = z[sel], f[sel]
    win = (float(lo), float(hi))
    drops = np.count_nonzero(np.diff(fw) < 0)
    if fw.size < 2 or fw[0] == fw[-1]:
        return DechannelingFit(math.inf, math.nan, float(fw[0]) if fw.size else math.nan, None, win, "no decay")
    if drops < 2 or fw[-1] <= 0:
        return DechannelingFit(math.nan, math.nan, math.nan, None, win, "too few events")
    if stderr is None:
        sw = np.sqrt(fw * (1.0 - fw) / n_trajectories)
    else:
        sw = np.asarray(stderr, dtype=float)[sel]
    sw = np.maximum(sw, 1.0 / n_trajectories)
    slope, icpt = np.polyfit(zw, np.log(fw), 1)
    L0 = -1.0 / slope if slope < 0 else 10.0 * (zw[-1] - zw[0])
    model = lambda zz, a, L: a * np.exp(-zz / L)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OptimizeWarning)
        try:
            popt, pcov = curve_fit(model, zw, fw, p0=(math.exp(icpt), L0), sigma=sw, absolute_sigma=True,
                                   maxfev=20000)
        except RuntimeError:
            return DechannelingFit(math.nan, math.nan, math.nan, None, win, "too few events")
    err = math.sqrt(pcov[1, 1]) if np.isfinite(pcov[1, 1]) else math.nan
    return DechannelingFit(float(popt[1]), err, float(popt[0]), pcov, win, "ok")


@dataclass
class SimulationResult:
    """Survival curve, L_d fit, event statistics and run metadata of one ensemble."""

    model: str
    depth_um: np.ndarray
    fraction: np.ndarray
    stderr: np.ndarray
    n_trajectories: int
    fit: DechannelingFit
    event_stats: dict
    records: List[TrajectoryRecord] = field(repr=False)
    kink_logs: Optional[List[KinkLog]] = field(default=None, repr=False)
    config: dict = field(default_factory=dict)
    wall_time_s: float = 0.0

    @property
    def dechanneled(self) -> np.ndarray:
        return np.array([r.dechannel_depth_nm is not None for r in self.records])


def _resolve_threads(threads: Optional[int]) -> int:
    if threads is None:
        import os

        threads = int(os.environ.get("THORNSIM_THREADS", "1"))
    if threads < 1:
        raise ConfigurationError("threads must be >= 1")
    return threads


def run_ensemble(setup: TransportSetup, model: str, n: int, depth_um: float, seed: int, threads: Optional[int] = None,
                 options=None, keep_events: bool = False, n_bins: int = 100, window=(0.5, 1.0),
                 config: Optional[dict] = None) -> SimulationResult:
    """Run n trajectories of ``model`` ('scm' or 'cm').

    Trajectory i uses RandomStream(seed, i); results are reduced in index
    order, so the output does not depend on the thread count.
    """
    if model not in ("scm", "cm"):
        raise ConfigurationError(f"model must be 'scm' or 'cm', got {model!r}")
    if not (isinstance(n, (int, np.integer)) and n >= 1):
        raise ConfigurationError(f"n_trajectories must be a positive integer, got {n}")
    if not depth_um > 0:
        raise ConfigurationError("depth_um must be positive")
    threads = _resolve_threads(threads)

    def one(i):
        stream = RandomStream(seed, i)
        if model == "scm":
            rec, log = run_scm_trajectory(setup, stream, depth_um, options)
            return rec, (log if keep_events else None)
        return run_cm_trajectory(setup, stream, depth_um, options), None

    t0 = time.perf_counter()
    if threads == 1:
        out = [one(i) for i in range(n)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(one, range(n)))
    wall = time.perf_counter() - t0
    records = [o[0] for o in out]
    logs = [o[1] for o in out] if keep_events and model == "scm" else None
    z, frac, err = survival_curve(
        [None if r.dechannel_depth_nm is None else r.dechannel_depth_nm * 1e-3 for r in records], depth_um, n_bins)
    fit = estimate_dechanneling_length(z, frac, n, window, err)
    stats = {}
    for r in records:
        for k, v in r.stats.items():
            stats[k] = stats.get(k, 0) + v
    stats["dechanneled"] = int(sum(r.dechannel_depth_nm is not None for r in records))
    return SimulationResult(model, z, frac, err, n, fit, stats, records, logs, dict(config or {}), wall)


@dataclass
class ComparisonResult:
    """Paired CM/SCM ensembles on shared seeds."""

    scm: SimulationResult
    cm: SimulationResult
    mean_difference: float  # CM minus SCM dechanneled fraction at the final depth
    z_score: float
    cm_exceeds_scm: bool  # one-sided test at 95 %
    length_ratio: float  # L_d(CM) / L_d(SCM)
    cm_shorter: bool


def paired_test(cm_flags, scm_flags):
    """One-sided paired z-test of P(CM dechanneled) > P(SCM dechanneled)."""
    d = np.asarray(cm_flags, dtype=float) - np.asarray(scm_flags, dtype=float)
    mean = float(d.mean())
    sd = float(d.std(ddof=1)) if d.size > 1 else 0.0
    se = sd / math.sqrt(d.size)
    if se == 0:
        z = math.inf if mean > 0 else (0.0 if mean == 0 else -math.inf)
    else:
        z = mean / se
    return mean, z


def compare_models(setup: TransportSetup, n: int, depth_um: float, seed: int, threads: Optional[int] = None,
                   **kwargs) -> ComparisonResult:
    """Run SCM and CM with the same seeds (identical entry conditions per trajectory)."""
    scm = run_ensemble(setup, "scm", n, depth_um, seed, threads, **kwargs)
    cm = run_ensemble(setup, "cm", n, depth_um, seed, threads, **kwargs)
    mean, z = paired_test(cm.dechanneled, scm.dechanneled)
    L_cm, L_scm = cm.fit.length_um, scm.fit.length_um
    ratio = L_cm / L_scm if (np.isfinite(L_scm) and L_scm > 0) else (0.0 if np.isfinite(L_cm) else math.nan)
    shorter = bool(cm.fit.flag != "no decay" and (scm.fit.flag == "no decay" or L_cm < L_scm))
    return ComparisonResult(scm, cm, mean, z, bool(z >= 1.645), ratio, shorter)
