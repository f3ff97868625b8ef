"""Command-line entry point: ``thornsim <command> [--config FILE] [--seed N] [--threads N] [flags]``.

Precedence for every setting: command-line flag, then (threads only) the
THORNSIM_THREADS environment variable, then the config file, then the
built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from pathlib import Path

from .core import ConfigurationError, DomainError

COMMANDS = ("xsection", "sumrules", "dech-ratio", "simulate", "compare", "profile", "fig2")


def _load_config(args):
    from .config import parse_config, with_overrides

    cfg = parse_config(args.config) if args.config else parse_config({"preset": "Si"})
    threads = args.threads
    if threads is None and os.environ.get("THORNSIM_THREADS"):
        try:
            threads = int(os.environ["THORNSIM_THREADS"])
        except ValueError as exc:
            raise ConfigurationError("THORNSIM_THREADS must be an integer") from exc
    over = {
        "run.seed": args.seed,
        "run.threads": threads,
        "beam.E_MeV": args.E,
        "beam.particle": args.particle,
        "output.directory": args.out,
    }
    for name in ("model", "n", "depth_um"):
        if hasattr(args, name):
            key = {"model": "run.model", "n": "run.n_trajectories", "depth_um": "run.depth_um"}[name]
            over[key] = getattr(args, name)
    return with_overrides(cfg, **over)


def _out_dir(cfg) -> Path:
    d = Path(cfg.output["directory"])
    d.mkdir(parents=True, exist_ok=True)
    return d


def _crystal_with_depth(cfg):
    from .potentials import with_continuum_depth

    return with_continuum_depth(cfg.crystal)


# ---------------------------------------------------------------------------
# commands


def cmd_dech_ratio(args):
    from .xsection import dech_cutoffs, dechanneling_xs, invert_dech_ratio
    from .core import critical_parameters

    cfg = _load_config(args)
    crystal = cfg.crystal
    if args.qc is None:
        crystal = _crystal_with_depth(cfg)
        q_c = critical_parameters(crystal, cfg.beam.E)[1]
    else:
        q_c = args.qc
    Z_eff, r_max, q_quant, q_class = dech_cutoffs(args.case, crystal)
    cl = dechanneling_xs(q_c, q_class, Z_eff=Z_eff, model="classical")
    qu = dechanneling_xs(q_c, q_quant, Z_eff=Z_eff, model="quantum")
    ratio = cl.sigma_closed_form / qu.sigma_closed_form
    out = {
        "case": args.case,
        "Z_eff": Z_eff,
        "r_max_nm": r_max,
        "q_c_MeV": q_c,
        "q_min_classical_MeV": q_class,
        "q_min_quantum_MeV": q_quant,
        "sigma_classical_numeric_nm2": cl.sigma_numeric,
        "sigma_classical_closed_nm2": cl.sigma_closed_form,
        "sigma_quantum_numeric_nm2": qu.sigma_numeric,
        "sigma_quantum_closed_nm2": qu.sigma_closed_form,
        "ratio": ratio,
        "ratio_numeric": cl.sigma_numeric / qu.sigma_numeric,
    }
    if args.target is not None:
        out["target_ratio"] = args.target
        out["q_c_for_target_MeV"] = invert_dech_ratio(args.target, args.case, crystal)
    scan = {}
    if args.case == "atom":
        from .xsection import dech_ratio

        for qc in (0.5, 1.0, 2.0, 3.2, 5.0, 10.0):
            if qc >= q_quant:
                scan[qc] = dech_ratio("atom", crystal, q_c=qc)
        out["ratio_vs_q_c"] = scan
    if args.json:
        print(json.dumps(out, sort_keys=True))
        return 0
    print(f"case {args.case}: Z_eff = {Z_eff}, r_max = {r_max:.6g} nm, q_c = {q_c:.6g} MeV")
    print(f"classical: numeric {cl.sigma_numeric:.6e} nm^2, closed form {cl.sigma_closed_form:.6e} nm^2 "
          f"(q_min = {q_class:.6g} MeV)")
    print(f"quantum:   numeric {qu.sigma_numeric:.6e} nm^2, closed form {qu.sigma_closed_form:.6e} nm^2 "
          f"(q_min = {q_quant:.6g} MeV)")
    print(f"ratio sigma_cl / sigma_quant = {ratio:.2f} ({ratio:.4f}; numeric {out['ratio_numeric']:.4f})")
    for qc, r in scan.items():
        print(f"  q_c = {qc:5.2f} MeV: ratio {r:.4f}")
    if args.target is not None:
        print(f"q_c giving ratio {args.target}: {out['q_c_for_target_MeV']:.4f} MeV")
    return 0


def _xs_pair(cfg, thorn_kind, offset, orbital, per_decade):
    import numpy as np

    from .potentials import ThornElectron, ThornVib
    from .xsection import (
        FormFactorModel,
        atom_xs_table,
        classical_dsigma,
        electron_kinematic_cap,
        electron_xs_table,
        log_q_edges,
    )

    c = cfg.crystal
    ff = FormFactorModel.for_crystal(c)
    sign = cfg.beam.charge_sign
    R_s = cfg.run["screening_length_nm"]
    if thorn_kind == "vib":
        off = c.u1 if offset is None else offset
        q_lo, q_hi = 1e-6, 100.0
        quant = atom_xs_table([off, 0.0], ff, c.u1, q_lo, q_hi, per_decade)
        clas = classical_dsigma(ThornVib(c, np.array([off, 0.0, 0.0])), log_q_edges(q_lo, q_hi, per_decade),
                                charge_sign=sign)
    else:
        off = 0.01 if offset is None else offset
        cap = electron_kinematic_cap(cfg.beam.E)
        q_lo = 1e-6
        quant = electron_xs_table([off, 0.0], ff, orbital, R_s, q_max=cap, q_min=q_lo, per_decade=per_decade)
        orb = ff.orbitals[orbital][0]
        thorn = ThornElectron(orb, s=np.array([off, 0.0, 0.0]), screening_length=R_s)
        clas = classical_dsigma(thorn, quant.q_edges, q_cap=cap, charge_sign=sign)
    return quant, clas


def cmd_xsection(args):
    from .io import write_csv

    cfg = _load_config(args)
    quant, clas = _xs_pair(cfg, args.thorn, args.offset_nm, args.orbital, args.per_decade)
    path = write_csv(_out_dir(cfg) / "xsection.csv",
                     ["q_MeV", "dsigma_quant_nm2_per_MeV2", "dsigma_class_nm2_per_MeV2"],
                     [quant.q_centers, quant.radial_density(), clas.radial_density()], cfg.sha256,
                     comments=[f"thorn {args.thorn}", "azimuthally averaged dsigma/d^2q"])
    print(f"sigma_quant = {quant.total:.6e} nm^2, sigma_class = {clas.total:.6e} nm^2 -> {path}")
    return 0


def cmd_sumrules(args):
    import numpy as np

    from .io import write_json
    from .potentials import PhenomenologicalThorn, ThornElectron, ThornVib
    from .xsection import (
        FormFactorModel,
        atom_xs_table,
        classical_dsigma,
        electron_kinematic_cap,
        electron_xs_table,
        log_q_edges,
        sum_rule_second_moment,
    )

    cfg = _load_config(args)
    c = cfg.crystal
    ff = FormFactorModel.for_crystal(c)
    R_s = cfg.run["screening_length_nm"]
    cap = electron_kinematic_cap(cfg.beam.E)
    first = {}
    edges = log_q_edges(1e-12, 100.0, 64)
    tables = {
        "vib_quantum": atom_xs_table([c.u1, 0.0], ff, c.u1),
        "vib_classical": classical_dsigma(ThornVib(c, np.array([c.u1, 0.0, 0.0])), edges),
        "electron_quantum": electron_xs_table([0.01, 0.0], ff, 1, R_s, q_max=cap),
        "electron_classical": classical_dsigma(
            ThornElectron(ff.orbitals[1][0], s=np.array([0.01, 0.0, 0.0]), screening_length=R_s),
            log_q_edges(1e-12, cap, 64), q_cap=cap),
    }
    for name, xs in tables.items():
        fm = xs.first_moment()
        first[name] = {"first_moment_MeV_nm2": fm, "abs_first_moment_MeV_nm2": xs.abs_first_moment(),
                       "relative": float(np.linalg.norm(fm) / xs.abs_first_moment())}
    second = {}
    for rr in (1e-3, 1e-2):
        rep = sum_rule_second_moment(PhenomenologicalThorn(c.Z, c.u1, c.u1 * rr))
        second[str(rr)] = {"quantum_MeV2_nm2": rep.second_moment_quantum,
                           "classical_MeV2_nm2": rep.second_moment_classical, "ratio": rep.ratio}
    path = write_json(_out_dir(cfg) / "sumrules.json", {"first_moment": first, "second_moment": second}, cfg.sha256)
    for name, v in first.items():
        print(f"first moment {name}: |int q dsigma| / int |q| dsigma = {v['relative']:.3e}")
    for rr, v in second.items():
        print(f"second moment r_min/r_max = {rr}: classical / quantum = {v['ratio']:.6f}")
    print(f"-> {path}")
    return 0


def _setup(cfg, models):
    from .transport import PhononCorrelationModel, build_setup

    run = cfg.run
    corr = None
    if run["correlations"]["enabled"]:
        corr = PhononCorrelationModel.for_crystal(cfg.crystal, run["correlations"]["lambda_c_nm"])
    return build_setup(cfg.crystal, cfg.beam, models, dz=run["dz_nm"], neighbourhood=run["neighbourhood_nm"],
                       screening_length=run["screening_length_nm"], correlations=corr)


def _event_rows(logs):
    for i, log in enumerate(logs):
        names = log.kind_names
        for j in range(len(log)):
            yield {"traj": i, "z_um": float(log.z_um[j]), "kind": str(names[j]), "qx_MeV": float(log.q[j, 0]),
                   "qy_MeV": float(log.q[j, 1]), "eperp_before_eV": float(log.eperp_before[j]),
                   "eperp_after_eV": float(log.eperp_after[j])}


def _fit_dict(fit):
    return {"L_d_um": fit.length_um, "L_d_err_um": fit.length_err_um, "amplitude": fit.amplitude,
            "window_um": list(fit.window_um), "flag": fit.flag}


def _write_result(cfg, res, out):
    from .io import write_csv, write_jsonl

    fmts = cfg.output["formats"]
    paths = []
    if "csv" in fmts:
        paths.append(write_csv(out / f"survival_{res.model}.csv", ["depth_um", "fraction", "stderr"],
                               [res.depth_um, res.fraction, res.stderr], cfg.sha256,
                               comments=[f"model {res.model}", f"n_trajectories {res.n_trajectories}"]))
    if "jsonl" in fmts and res.kink_logs is not None:
        paths.append(write_jsonl(out / f"events_{res.model}.jsonl", _event_rows(res.kink_logs), cfg.sha256))
    return paths


def _summary(res):
    return {"model": res.model, "n_trajectories": res.n_trajectories, "final_fraction": float(res.fraction[-1]),
            "final_stderr": float(res.stderr[-1]), "fit": _fit_dict(res.fit), "event_stats": res.event_stats}


def cmd_simulate(args):
    from .config import write_resolved
    from .io import write_json
    from .transport import run_ensemble

    cfg = _load_config(args)
    run = cfg.run
    models = ("scm", "cm") if run["model"] == "both" else (run["model"],)
    setup = _setup(cfg, models)
    out = _out_dir(cfg)
    write_resolved(cfg, out / "config.resolved.json")
    summary = {}
    for m in models:
        res = run_ensemble(setup, m, run["n_trajectories"], run["depth_um"], run["seed"], run["threads"],
                           keep_events="jsonl" in cfg.output["formats"], n_bins=run["depth_bins"],
                           window=tuple(run["fit_window"]), config=cfg.resolved)
        _write_result(cfg, res, out)
        summary[m] = _summary(res)
        print(f"{m}: channeled fraction at {run['depth_um']} um = {res.fraction[-1]:.4f} +- {res.stderr[-1]:.4f}, "
              f"L_d = {res.fit.length_um:.4g} +- {res.fit.length_err_um:.3g} um ({res.fit.flag})")
        print(f"{m}: wall time {res.wall_time_s:.2f} s", file=sys.stderr)
    write_json(out / "summary.json", summary, cfg.sha256)
    print(f"-> {out}")
    return 0


def cmd_compare(args):
    from .config import write_resolved
    from .io import write_json
    from .transport import compare_models

    cfg = _load_config(args)
    run = cfg.run
    setup = _setup(cfg, ("scm", "cm"))
    out = _out_dir(cfg)
    write_resolved(cfg, out / "config.resolved.json")
    res = compare_models(setup, run["n_trajectories"], run["depth_um"], run["seed"], run["threads"],
                         keep_events="jsonl" in cfg.output["formats"], n_bins=run["depth_bins"],
                         window=tuple(run["fit_window"]), config=cfg.resolved)
    for r in (res.scm, res.cm):
        _write_result(cfg, r, out)
    summary = {
        "scm": _summary(res.scm),
        "cm": _summary(res.cm),
        "dechanneled_fraction_difference": res.mean_difference,
        "paired_z": res.z_score,
        "cm_exceeds_scm_95": res.cm_exceeds_scm,
        "L_d_ratio_cm_over_scm": res.length_ratio,
        "L_d_cm_shorter": res.cm_shorter,
    }
    write_json(out / "compare.json", summary, cfg.sha256)
    print(f"dechanneled at {run['depth_um']} um: SCM {1 - res.scm.fraction[-1]:.4f}, CM {1 - res.cm.fraction[-1]:.4f}")
    print(f"paired z = {res.z_score:.3f}; CM > SCM at 95%: {res.cm_exceeds_scm}")
    print(f"L_d(CM) / L_d(SCM) = {res.length_ratio:.4g}; CM shorter: {res.cm_shorter}")
    print(f"-> {out}")
    return 0


def cmd_profile(args):
    import numpy as np

    from .io import write_csv
    from .potentials import ScreeningModel, ThornElectron, ThornVib
    from .xsection import FormFactorModel

    cfg = _load_config(args)
    c = cfg.crystal
    s = ScreeningModel.for_crystal(c)
    atom = s.atom_term(c.Z)
    x = np.linspace(-4 * c.u1, 4 * c.u1, 801)
    pts = np.stack([x, np.zeros_like(x), np.zeros_like(x)], axis=-1)
    u = np.array([c.u1, 0.0, 0.0])
    va = atom.value(np.abs(x - c.u1))
    vbar = atom.smeared(c.u1).value(np.abs(x))
    vib = ThornVib(c, u, s).potential(pts)
    orb = FormFactorModel.from_screening(s, c.Z).orbitals[1][0]
    el = ThornElectron(orb, s=np.array([0.5 * c.u1, 0.0, 0.0]), u=u,
                       screening_length=cfg.run["screening_length_nm"]).potential(pts)
    out = _out_dir(cfg)
    p1 = write_csv(out / "profile.csv", ["x_nm", "V_A_eV", "V_A_smeared_eV", "thorn_vib_eV", "thorn_e_eV"],
                   [x, va, vbar, vib, el], cfg.sha256,
                   comments=[f"nucleus displaced by u1 = {c.u1} nm along x", "electron at u + u1/2 along x"])
    crystal = _crystal_with_depth(cfg)
    from .transport.trajectory import continuum_for

    v = continuum_for(cfg.crystal)
    if c.geometry == "planar":
        xs = np.linspace(-c.interplanar_spacing / 2, c.interplanar_spacing / 2, 401)
        p2 = write_csv(out / "continuum.csv", ["x_nm", "V_eV"], [xs, v.value(xs)], cfg.sha256,
                       comments=[f"U0 {crystal.U0}"])
    else:
        xs = np.linspace(0.0, c.interplanar_spacing / 2, 401)
        p2 = write_csv(out / "continuum.csv", ["x_nm", "V_eV"],
                       [xs, v.value(np.stack([xs, np.zeros_like(xs)], -1))], cfg.sha256,
                       comments=[f"U0 {crystal.U0}", "cut along x through a string"])
    print(f"-> {p1}, {p2}")
    return 0


def cmd_fig2(args):
    from .io import write_csv
    from .potentials import PhenomenologicalThorn
    from .xsection import fig2_curves

    cfg = _load_config(args)
    c = cfg.crystal
    Z = args.z_eff if args.z_eff is not None else c.Z
    r_max = args.r_max_nm if args.r_max_nm is not None else c.u1
    r_min = args.r_min_nm if args.r_min_nm is not None else c.r_N
    q, quant, clas, base = fig2_curves(PhenomenologicalThorn(Z, r_max, r_min))
    path = write_csv(_out_dir(cfg) / "fig2.csv",
                     ["q_MeV", "q4_dsigma_quant", "q4_dsigma_class", "q4_dsigma_rutherford"],
                     [q, quant, clas, base], cfg.sha256,
                     comments=[f"Z_eff {Z} r_max_nm {r_max} r_min_nm {r_min}", "q^4 dsigma/d^2q / [4 (Z alpha)^2]"])
    print(f"-> {path}")
    return 0


HANDLERS = {
    "xsection": cmd_xsection,
    "sumrules": cmd_sumrules,
    "dech-ratio": cmd_dech_ratio,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "profile": cmd_profile,
    "fig2": cmd_fig2,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--E", type=float, help="beam energy, MeV")
    common.add_argument("--particle", choices=("electron", "positron"))
    p = argparse.ArgumentParser(prog="thornsim", description="Thorn-scattering channeling simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("dech-ratio", parents=[common], help="classical/quantum dechanneling cross-section ratio")
    s.add_argument("--case", choices=("electron", "atom"), default="electron")
    s.add_argument("--qc", type=float, help="critical transfer q_c, MeV (default: from E and U0)")
    s.add_argument("--target", type=float, help="also solve for the q_c giving this ratio")
    s.add_argument("--json", action="store_true")

    s = sub.add_parser("xsection", parents=[common], help="quantum and classical thorn cross sections")
    s.add_argument("--thorn", choices=("vib", "electron"), default="vib")
    s.add_argument("--offset-nm", type=float, help="|u_T| or |s_T|, nm")
    s.add_argument("--orbital", type=int, default=1)
    s.add_argument("--per-decade", type=int, default=64)

    sub.add_parser("sumrules", parents=[common], help="first and second moment sum rules")

    for name in ("simulate", "compare"):
        s = sub.add_parser(name, parents=[common], help=f"{name} trajectory ensembles")
        if name == "simulate":
            s.add_argument("--model", choices=("cm", "scm", "both"))
        s.add_argument("--n", type=int, help="number of trajectories")
        s.add_argument("--depth-um", type=float)

    sub.add_parser("profile", parents=[common], help="potential and thorn profiles")
    s = sub.add_parser("fig2", parents=[common], help="q^4 dsigma comparison data")
    s.add_argument("--z-eff", type=int)
    s.add_argument("--r-max-nm", type=float)
    s.add_argument("--r-min-nm", type=float)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return HANDLERS[args.command](args)
    except (ConfigurationError, DomainError, ValueError, OSError, ArithmeticError, RuntimeError) as exc:
        from .io import error_record

        print(json.dumps(error_record(exc, args.command), sort_keys=True), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
