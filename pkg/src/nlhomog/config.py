"""INI configuration with a flat key namespace per section and a schema version."""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigurationError

SCHEMA_VERSION = 1

# section -> key -> (type, default)
SCHEMA: dict[str, dict[str, tuple[str, Any]]] = {
    "run": {
        "schema_version": ("int", SCHEMA_VERSION),
        "environment": ("str", "default_symmetric"),
        "mode": ("str", "auto"),
        "n_torus": ("int", 16),
        "seed": ("int", 0),
        "workers": ("int", 1),
        "strict": ("bool", False),
    },
    "correctors": {
        "pilot_horizon": ("float", 400.0),
        "snapshot_span": ("float", 40.0),
    },
    "effective": {
        "s_prod": ("float", 1000000.0),
        "n_batches": ("int", 16),
        "h6_tol": ("float", 1e-8),
    },
    "simulate": {
        "eps": ("floats", [0.2, 0.1, 0.05]),
        "T": ("float", 0.5),
        "replicates": ("int", 16),
        "law_replicates": ("int", 200),
        "snapshots": ("int", 10),
        "test_functions": ("pairs", [(0.0, 0.5), (0.7, 0.8), (-1.0, 1.2)]),
        "with_r1": ("bool", False),
        "tail_tol": ("float", 1e-6),
    },
    "clt": {
        "eps": ("floats", [0.02]),
        "T": ("float", 1.0),
        "replicates": ("int", 400),
    },
    "spde": {
        "samples": ("int", 1000),
        "n_steps": ("int", 200),
    },
    "verify": {
        "slope_threshold": ("float", 0.8),
        "slope_hard_floor": ("float", 0.5),
        "variance_band": ("floats", [0.75, 1.33]),
        "z_max": ("float", 3.0),
        "alpha": ("float", 0.01),
        "decay_noise": ("float", 0.2),
        "residual": ("bool", True),
        "decay": ("bool", True),
    },
}


def _parse(kind: str, raw: str, where: str):
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "str":
            return raw.strip()
        if kind == "bool":
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "floats":
            return [float(v) for v in raw.replace(";", ",").split(",") if v.strip()]
        if kind == "pairs":
            out = []
            for item in raw.split(","):
                if item.strip():
                    c, w = item.split(":")
                    out.append((float(c), float(w)))
            return out
    except ValueError as exc:
        raise ConfigurationError(f"{where}: cannot parse {raw!r} as {kind}") from exc
    raise ConfigurationError(f"{where}: unknown type {kind}")


def _format(kind: str, value) -> str:
    if kind == "floats":
        return ", ".join(repr(float(v)) for v in value)
    if kind == "pairs":
        return ", ".join(f"{c!r}:{w!r}" for c, w in value)
    if kind == "bool":
        return "true" if value else "false"
    return str(value)


@dataclass
class Config:
    """Parsed configuration; ``values[section][key]``."""

    values: dict = field(default_factory=dict)
    source: str = "<defaults>"

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    def get(self, section: str, key: str):
        return self.values[section][key]

    def set(self, section: str, key: str, value):
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigurationError(f"unknown key [{section}] {key}")
        self.values[section][key] = value

    def canonical(self) -> str:
        return json.dumps(self.values, sort_keys=True, default=list)

    def hash(self, sections=None) -> str:
        """SHA-256 of the canonical form (optionally restricted to ``sections``).

        The worker count does not affect any payload and is left out.
        """
        sections = list(self.values) if sections is None else sections
        payload = {s: dict(self.values[s]) for s in sections}
        if "run" in payload:
            payload["run"].pop("workers", None)
        text = json.dumps(payload, sort_keys=True, default=list)
        return hashlib.sha256(text.encode()).hexdigest()

    def to_ini(self) -> str:
        lines = []
        for sec, keys in SCHEMA.items():
            lines.append(f"[{sec}]")
            for key, (kind, _) in keys.items():
                lines.append(f"{key} = {_format(kind, self.values[sec][key])}")
            lines.append("")
        return "\n".join(lines)


def default_config() -> Config:
    return Config({sec: {k: (list(v) if isinstance(v, list) else v) for k, (_, v) in keys.items()}
                   for sec, keys in SCHEMA.items()})


def load_config(path=None, text: str | None = None) -> Config:
    """Read an INI file (or string) and validate it against :data:`SCHEMA`.

    Raises
    ------
    ConfigurationError
        Unknown section or key, unparsable value or unsupported schema version;
        the message names the offending line and key.
    """
    cfg = default_config()
    if path is None and text is None:
        return cfg
    parser = configparser.ConfigParser(interpolation=None, strict=True)
    parser.optionxform = str
    try:
        if text is not None:
            parser.read_string(text, source="<string>")
            cfg.source = "<string>"
            lines = text.splitlines()
        else:
            p = Path(path)
            if not p.exists():
                raise ConfigurationError(f"config file {p} does not exist")
            content = p.read_text()
            parser.read_string(content, source=str(p))
            cfg.source = str(p)
            lines = content.splitlines()
    except configparser.Error as exc:
        raise ConfigurationError(f"config syntax error: {exc}") from exc

    def line_of(sec, key):
        current = None
        for n, ln in enumerate(lines, 1):
            s = ln.strip()
            if s.startswith("[") and s.endswith("]"):
                current = s[1:-1].strip()
                if key is None and current == sec:
                    return n
            elif current == sec and s.split("=")[0].strip() == key:
                return n
        return "?"

    for sec in parser.sections():
        if sec not in SCHEMA:
            raise ConfigurationError(f"unknown section [{sec}] (line {line_of(sec, None)})")
        for key, raw in parser[sec].items():
            if key not in SCHEMA[sec]:
                raise ConfigurationError(f"line {line_of(sec, key)}: unknown key [{sec}] {key}")
            kind = SCHEMA[sec][key][0]
            cfg.values[sec][key] = _parse(kind, raw, f"line {line_of(sec, key)} [{sec}] {key}")
    if cfg.values["run"]["schema_version"] != SCHEMA_VERSION:
        raise ConfigurationError(
            f"schema_version {cfg.values['run']['schema_version']} is not supported "
            f"(expected {SCHEMA_VERSION})")
    validate_config(cfg)
    return cfg


def validate_config(cfg: Config) -> None:
    run = cfg["run"]
    if run["mode"] not in ("auto", "symmetric", "nonsymmetric"):
        raise ConfigurationError("[run] mode must be auto, symmetric or nonsymmetric")
    if run["workers"] < 1:
        raise ConfigurationError("[run] workers must be at least 1")
    for sec in ("simulate", "clt"):
        if not cfg[sec]["eps"] or min(cfg[sec]["eps"]) <= 0:
            raise ConfigurationError(f"[{sec}] eps values must be positive")
        if cfg[sec]["T"] <= 0:
            raise ConfigurationError(f"[{sec}] T must be positive")
        if cfg[sec]["replicates"] < 1:
            raise ConfigurationError(f"[{sec}] replicates must be at least 1")
    if len(cfg["verify"]["variance_band"]) != 2:
        raise ConfigurationError("[verify] variance_band needs two values")
