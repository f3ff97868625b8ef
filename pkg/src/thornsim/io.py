"""Deterministic writers for CSV, JSONL and JSON outputs.

Every file starts with the tool version and the resolved-config hash.
Floats are written with 17 significant digits so reruns are byte-identical.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from . import __version__


def _fmt(v) -> str:
    if isinstance(v, (int,)) and not isinstance(v, bool):
        return str(v)
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return format(v, ".17g")


def _clean(obj):
    """Make an object JSON-safe with stable float formatting."""
    if isinstance(obj, Mapping):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "tolist"):
        return _clean(obj.tolist())
    if isinstance(obj, bool) or obj is None or isinstance(obj, str):
        return obj
    if isinstance(obj, int):
        return obj
    if isinstance(obj, float):
        if math.isfinite(obj):
            return float(format(obj, ".17g"))
        return str(obj)
    return str(obj)


def header(config_sha256: str) -> dict:
    return {"thornsim_version": __version__, "config_sha256": config_sha256}


def write_csv(path, columns: Sequence[str], data: Iterable[Sequence], config_sha256: str, comments=()) -> Path:
    """CSV with '#' header lines (version, config hash, extra comments) and a column row."""
    path = Path(path)
    lines = [f"# thornsim {__version__}", f"# config_sha256 {config_sha256}"]
    lines += [f"# {c}" for c in comments]
    lines.append(",".join(columns))
    for row in zip(*data):
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def write_jsonl(path, records: Iterable[Mapping], config_sha256: str) -> Path:
    """JSONL whose first line is the header record."""
    path = Path(path)
    with path.open("w") as fh:
        fh.write(json.dumps(header(config_sha256), sort_keys=True) + "\n")
        for rec in records:
            fh.write(json.dumps(_clean(rec), sort_keys=True) + "\n")
    return path


def write_json(path, obj: Mapping, config_sha256: str) -> Path:
    path = Path(path)
    payload = dict(header(config_sha256))
    payload.update(_clean(obj))
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    return path


def read_csv(path):
    """Read a CSV written by :func:`write_csv`: (comments, columns, rows as float lists)."""
    comments, columns, rows = [], None, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            comments.append(line[1:].strip())
        elif columns is None:
            columns = line.split(",")
        elif line:
            rows.append([float(v) for v in line.split(",")])
    return comments, columns, rows


def error_record(exc: BaseException, command: str) -> dict:
    return {"status": "error", "command": command, "error": type(exc).__name__, "message": str(exc),
            "thornsim_version": __version__}
