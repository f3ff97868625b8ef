"""Run configuration: JSON schema, defaults from presets, resolution and hashing.

A config file is a JSON object with ``crystal``, ``beam``, ``run`` and
``output`` blocks.  The shorthands ``preset`` and ``E_MeV`` may be given at
top level.  Everything not given is filled in from the preset and the
defaults below.  The resolved config, minus the execution-only keys
(thread count, output directory), is what gets hashed and echoed.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional

import jsonschema

from .core import BeamConfig, ConfigurationError, CrystalModel, PRESETS

_POS = {"type": "number", "exclusiveMinimum": 0}

CRYSTAL_FIELDS = ("Z", "lattice_constant", "geometry", "orientation", "interplanar_spacing", "u1", "a_TF", "r_N",
                  "atom_density", "U0")

SCHEMA: Dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "preset": {"type": "string"},
        "E_MeV": _POS,
        "crystal": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "preset": {"type": "string"},
                "Z": {"type": "integer", "minimum": 1},
                "lattice_constant": _POS,
                "geometry": {"enum": ["planar", "axial"]},
                "orientation": {"type": "array", "items": {"type": "integer"}, "minItems": 3, "maxItems": 3},
                "interplanar_spacing": _POS,
                "u1": _POS,
                "a_TF": _POS,
                "r_N": _POS,
                "atom_density": _POS,
                "U0": {"type": ["number", "null"], "minimum": 0},
            },
        },
        "beam": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "particle": {"enum": ["electron", "positron"]},
                "E_MeV": _POS,
                "entry_angle_mrad": {"type": "number"},
                "entry_distribution": {"enum": ["delta", "uniform", "gaussian"]},
                "entry_sigma_nm": {"type": "number", "minimum": 0},
                "entry_position_nm": {"type": ["number", "null"]},
            },
        },
        "run": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "model": {"enum": ["cm", "scm", "both"]},
                "n_trajectories": {"type": "integer", "minimum": 1},
                "depth_um": _POS,
                "seed": {"type": "integer", "minimum": 0},
                "threads": {"type": "integer", "minimum": 1},
                "dz_nm": {"type": ["number", "null"], "exclusiveMinimum": 0},
                "neighbourhood_nm": _POS,
                "screening_length_nm": _POS,
                "fit_window": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1},
                               "minItems": 2, "maxItems": 2},
                "depth_bins": {"type": "integer", "minimum": 2},
                "correlations": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "enabled": {"type": "boolean"},
                        "lambda_c_nm": {"type": ["number", "null"], "exclusiveMinimum": 0},
                    },
                },
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "directory": {"type": "string"},
                "formats": {"type": "array", "items": {"enum": ["csv", "jsonl"]}, "uniqueItems": True},
            },
        },
    },
}

DEFAULTS: Dict[str, Any] = {
    "beam": {
        "particle": "electron",
        "E_MeV": 1000.0,
        "entry_angle_mrad": 0.0,
        "entry_distribution": "uniform",
        "entry_sigma_nm": 0.0,
        "entry_position_nm": None,
    },
    "run": {
        "model": "both",
        "n_trajectories": 500,
        "depth_um": 10.0,
        "seed": 1,
        "threads": 1,
        "dz_nm": None,
        "neighbourhood_nm": 0.5,
        "screening_length_nm": 0.25,
        "fit_window": [0.5, 1.0],
        "depth_bins": 100,
        "correlations": {"enabled": False, "lambda_c_nm": None},
    },
    "output": {"directory": "thornsim_out", "formats": ["csv", "jsonl"]},
}


@dataclass(frozen=True)
class RunConfig:
    crystal: CrystalModel
    beam: BeamConfig
    run: dict
    output: dict
    resolved: dict
    sha256: str

    @property
    def correlations_enabled(self) -> bool:
        return bool(self.run["correlations"]["enabled"])


def _key_path(err: jsonschema.ValidationError) -> str:
    path = ".".join(str(p) for p in err.absolute_path)
    if err.validator == "additionalProperties":
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        key = ".".join(filter(None, [path, extra[0] if extra else ""]))
        return key
    return path or "<root>"


def validate(raw: dict) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ConfigurationError(f"config key '{_key_path(err)}': {err.message}")


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _crystal_defaults(preset_name: str, geometry: str) -> dict:
    if preset_name not in PRESETS:
        raise ConfigurationError(f"config key 'crystal.preset': unknown preset {preset_name!r}")
    c = PRESETS[preset_name](geometry)
    out = {k: getattr(c, k) for k in CRYSTAL_FIELDS}
    out["orientation"] = list(out["orientation"])
    out["preset"] = preset_name
    return out


def resolve(raw: dict) -> dict:
    """Validate and fill defaults; the result is a complete, canonical config dict."""
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be a JSON object")
    validate(raw)
    raw = copy.deepcopy(raw)
    crystal_in = raw.pop("crystal", {})
    top_preset = raw.pop("preset", None)
    top_E = raw.pop("E_MeV", None)
    preset_name = crystal_in.get("preset", top_preset or "Si")
    if top_preset is not None and crystal_in.get("preset", top_preset) != top_preset:
        raise ConfigurationError("config key 'preset': conflicts with crystal.preset")
    geometry = crystal_in.get("geometry", "planar")
    crystal = _merge(_crystal_defaults(preset_name, geometry), crystal_in)
    resolved = _merge(DEFAULTS, raw)
    if top_E is not None:
        if "E_MeV" in raw.get("beam", {}) and raw["beam"]["E_MeV"] != top_E:
            raise ConfigurationError("config key 'E_MeV': conflicts with beam.E_MeV")
        resolved["beam"]["E_MeV"] = float(top_E)
    resolved["crystal"] = crystal
    for block in ("beam", "run"):
        for k, v in resolved[block].items():
            if isinstance(v, int) and not isinstance(v, bool) and isinstance(DEFAULTS[block].get(k), float):
                resolved[block][k] = float(v)
    for k in ("lattice_constant", "interplanar_spacing", "u1", "a_TF", "r_N", "atom_density"):
        crystal[k] = float(crystal[k])
    if crystal["U0"] is not None:
        crystal["U0"] = float(crystal["U0"])
    corr = resolved["run"]["correlations"]
    if corr["enabled"] and corr["lambda_c_nm"] is None:
        corr["lambda_c_nm"] = 10.0 * crystal["lattice_constant"]
    validate(resolved)
    return {k: resolved[k] for k in ("crystal", "beam", "run", "output")}


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


EXECUTION_KEYS = (("run", "threads"), ("output", "directory"))


def physics_view(resolved: dict) -> dict:
    """The resolved config without settings that cannot change results (threads, output directory)."""
    out = copy.deepcopy(resolved)
    for block, key in EXECUTION_KEYS:
        out.get(block, {}).pop(key, None)
    return out


def config_hash(resolved: dict) -> str:
    """sha256 of the canonical JSON of :func:`physics_view`."""
    return hashlib.sha256(canonical_json(physics_view(resolved)).encode()).hexdigest()


def build(resolved: dict) -> RunConfig:
    c = resolved["crystal"]
    kw = {k: c[k] for k in CRYSTAL_FIELDS}
    kw["orientation"] = tuple(kw["orientation"])
    crystal = CrystalModel(name=c["preset"], **kw)
    b = resolved["beam"]
    beam = BeamConfig(
        particle=b["particle"],
        E=b["E_MeV"],
        entry_angle_to_channel=b["entry_angle_mrad"],
        transverse_entry_distribution=b["entry_distribution"],
        entry_sigma=b["entry_sigma_nm"],
        entry_position=b["entry_position_nm"],
    )
    run = resolved["run"]
    lam = run["correlations"]["lambda_c_nm"]
    if run["correlations"]["enabled"] and not lam > crystal.lattice_constant:
        raise ConfigurationError("config key 'run.correlations.lambda_c_nm': must exceed the lattice constant")
    if not run["fit_window"][0] < run["fit_window"][1]:
        raise ConfigurationError("config key 'run.fit_window': lower edge must be below the upper edge")
    return RunConfig(crystal, beam, run, resolved["output"], resolved, config_hash(resolved))


def parse_config(source) -> RunConfig:
    """Parse a config from a path, a JSON string or a dict."""
    if isinstance(source, dict):
        raw = source
    else:
        text = None
        p = Path(source)
        try:
            if p.exists():
                text = p.read_text()
        except OSError:
            text = None
        if text is None:
            if isinstance(source, str) and source.lstrip().startswith("{"):
                text = source
            else:
                raise ConfigurationError(f"cannot read config file {source}")
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config is not valid JSON: {exc}") from exc
    return build(resolve(raw))


def with_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    """Apply CLI overrides (dotted keys such as 'run.seed') and re-resolve."""
    raw = copy.deepcopy(cfg.resolved)
    for key, value in overrides.items():
        if value is None:
            continue
        block, name = key.split(".", 1)
        raw[block][name] = value
    return build(resolve(raw))


def write_resolved(cfg: RunConfig, path) -> None:
    """Echo the resolved config (execution-only keys left out, so reruns match byte for byte)."""
    Path(path).write_text(json.dumps(physics_view(cfg.resolved), sort_keys=True, indent=2) + "\n")
