"""Deterministic persistence: sorted JSON, CSV with full-precision floats, raw fields."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from .errors import ValidationError

__all__ = ["write_json", "read_json", "write_csv", "read_csv", "write_field", "read_field"]


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def write_json(path, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_plain(payload), sort_keys=True, indent=2) + "\n")
    return path


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def write_csv(path, rows: list[dict], config_hash: str, columns=None) -> Path:
    """CSV with a ``# config_hash=...`` comment line; floats use 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = list(columns or (rows[0].keys() if rows else []))
    buf = io.StringIO()
    buf.write(f"# config_hash={config_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in columns])
    path.write_text(buf.getvalue())
    return path


def read_csv(path) -> tuple[str, list[dict]]:
    """Return ``(config_hash, rows)`` with numeric cells converted to float."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# config_hash="):
        raise ValidationError(f"{path} lacks a config hash header")
    chash = lines[0].split("=", 1)[1]
    rows = []
    for rec in csv.DictReader(lines[1:]):
        out = {}
        for k, v in rec.items():
            try:
                out[k] = float(v)
            except ValueError:
                out[k] = v
        rows.append(out)
    return chash, rows


def write_field(stem, values, header: dict) -> tuple[Path, Path]:
    """Little-endian float64 payload ``stem.bin`` plus ``stem.json`` header."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    arr = np.ascontiguousarray(values, dtype="<f8")
    binp = stem.with_suffix(".bin")
    binp.write_bytes(arr.tobytes())
    head = dict(header)
    head.update({"shape": list(arr.shape), "dtype": "<f8", "payload": binp.name})
    return binp, write_json(stem.with_suffix(".json"), head)


def read_field(stem) -> tuple[np.ndarray, dict]:
    stem = Path(stem)
    head = read_json(stem.with_suffix(".json"))
    arr = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype=head["dtype"])
    return arr.reshape(head["shape"]).copy(), head
