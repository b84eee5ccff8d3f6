"""CSV and JSON output with stable formatting."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .errors import ConfigurationError

SCHEMA = "qvi-extremal/1"


def _plain(obj):
    """Convert numpy scalars/arrays and non-finite floats to JSON-safe values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def dumps(summary: dict) -> str:
    return json.dumps(_plain(summary), indent=2, sort_keys=True) + "\n"


def write_json(path, summary: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(summary))
    return path


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def write_field_csv(path, x, values) -> Path:
    """Nodal field as two columns ``x,value``."""
    return write_csv(path, ["x", "value"], zip(np.asarray(x, float), np.asarray(values, float)))


def read_field_csv(path):
    """Inverse of :func:`write_field_csv`; returns ``(x, values)``."""
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"no such file: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["x", "value"]:
        raise ConfigurationError(f"{path}: expected header 'x,value'")
    try:
        data = np.array([[float(a), float(b)] for a, b in rows[1:]], dtype=float).reshape(-1, 2)
    except ValueError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None
    if not np.all(np.isfinite(data)):
        raise ConfigurationError(f"{path}: non-finite entries")
    return data[:, 0], data[:, 1]
