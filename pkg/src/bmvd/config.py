"""Typed experiment configuration read from TOML.

Every key is declared in :data:`SCHEMA` with a type and a default.  Unknown
sections or keys and values of the wrong type raise :class:`ConfigError`
carrying the dotted key and the line it appears on.
"""
from __future__ import annotations

import inspect
import math
import re
import sys
from dataclasses import dataclass

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import drift as drift_mod


class ConfigError(ValueError):
    def __init__(self, key, message, line=None):
        super().__init__(f"{key}: {message}" + (f" (line {line})" if line else ""))
        self.key = key
        self.message = message
        self.line = line

    def to_dict(self):
        return {"error": "ConfigError", "key": self.key, "line": self.line, "message": self.message}


@dataclass(frozen=True)
class Field:
    kind: str
    default: object
    choices: tuple = ()
    positive: bool = False


F = Field
DYADIC = [2.0 ** -k for k in range(7, -1, -1)]

SCHEMA = {
    "run": {
        "seed": F("int", 0),
        "workers": F("int", 1, positive=True),
        "out": F("str", "out"),
    },
    "model": {
        "eps": F("float", 0.25, positive=True),
        "p": F("float", 1.0, positive=True),
    },
    "drift": {
        "preset": F("str", "zero", choices=tuple(drift_mod.PRESETS) + ("table",)),
        "params": F("table", {}),
        "nodes": F("floats", []),
        "values": F("floats", []),
    },
    "grid": {
        "h": F("float", 2e-3, positive=True),
        "L_leg": F("float", 6.0, positive=True),
        "L_plane": F("float", 6.0, positive=True),
        "growth": F("float", 1.0, positive=True),
    },
    "simulate": {
        "task": F("str", "density", choices=("density", "skew_check", "pde_check", "girsanov_check")),
        "x0": F("float", 0.0),
        "theta0": F("float", 0.0),
        "t": F("float", 0.25, positive=True),
        "dt": F("float", 1e-3, positive=True),
        "n_paths": F("int", 100_000, positive=True),
        "full": F("bool", False),
        "mode": F("str", "none", choices=("none", "euler_maruyama", "girsanov")),
        "curvature": F("bool", True),
        "n_bins": F("int", 100, positive=True),
        "span": F("float", 2.5, positive=True),
        "max_frac_outside": F("float", 0.05),
        "max_l1": F("float", 0.02),
        "weight_z": F("float", 3.0),
        "write_paths": F("bool", False),
    },
    "pde": {
        "x0": F("float", 0.0),
        "T": F("float", 1.0, positive=True),
        "n_out": F("int", 20, positive=True),
        "mass_tol": F("float", 1e-6),
        "flux_tol": F("float", 1e-4),
        "flux_t_min": F("float", 0.05),
        "ck": F("bool", False),
        "ck_t": F("float", 0.5, positive=True),
        "ck_tol": F("float", 5e-4),
        "ck_factor": F("float", 3.0),
    },
    "duhamel": {
        "source": F("float", -0.5),
        "T1": F("float", 0.0),
        "n_steps": F("int", 64, positive=True),
        "tol": F("float", 1e-8, positive=True),
        "n_max": F("int", 40, positive=True),
        "r_max": F("float", 0.5),
        "extend_factor": F("float", 4.0, positive=True),
        "l1_tol": F("float", 0.02),
        "extend_tol": F("float", 0.04),
        "reference_h": F("float", 2e-3, positive=True),
        "resolvent": F("bool", False),
        "alpha": F("float", 50.0, positive=True),
        "resolvent_n_max": F("int", 4, positive=True),
        "resolvent_steps": F("int", 128, positive=True),
    },
    "bounds": {
        "sandwich": F("bool", True),
        "convolution": F("bool", True),
        "t_min": F("float", 0.05, positive=True),
        "t_max": F("float", 1.0, positive=True),
        "n_times": F("int", 20, positive=True),
        "variant": F("int", 0, choices=(0, 1, 2, 3, 4, 5)),
        "sources": F("floats", [0.0, -0.5]),
        "rtol": F("float", 0.05, positive=True),
        "regimes": F("ints", [1, 2, 3, 4, 5, 6, 7]),
        "alpha": F("float", 0.25, positive=True),
        "beta": F("float", 0.5, positive=True),
        "n_pairs": F("int", 8, positive=True),
        "times": F("floats", DYADIC),
        "mode": F("str", "envelope", choices=("envelope", "kernel")),
        "min_decrease": F("float", 0.4),
    },
    "green": {
        "leg_length": F("float", 1.0, positive=True),
        "plane_radius": F("float", 2.0, positive=True),
        "n_pairs": F("int", 200, positive=True),
        "h": F("float", 5e-3, positive=True),
        "max_spread": F("float", 50.0, positive=True),
        "mc_paths": F("int", 20000, positive=True),
        "mc_dt": F("float", 1e-3, positive=True),
        "mc_T": F("float", 12.0, positive=True),
        "exit_z": F("float", 2.0, positive=True),
        "leg_interval": F("floats", [0.5, 0.6]),
        "leg_paths": F("int", 40000, positive=True),
        "leg_dt": F("float", 1e-6, positive=True),
        "leg_T": F("float", 0.02, positive=True),
        "leg_bins": F("int", 20, positive=True),
        "leg_tol": F("float", 0.02, positive=True),
    },
    "report": {
        "inputs": F("strs", []),
    },
}


def locate_lines(text):
    """Map dotted keys (and section names) to 1-based line numbers."""
    where, section = {}, ""
    head = re.compile(r"^\s*\[\s*([A-Za-z0-9_.\-]+)\s*\]")
    kv = re.compile(r"^\s*([A-Za-z0-9_\-]+)\s*=")
    for i, line in enumerate(text.splitlines(), 1):
        m = head.match(line)
        if m:
            section = m.group(1)
            where.setdefault(section, i)
            continue
        m = kv.match(line)
        if m:
            key = f"{section}.{m.group(1)}" if section else m.group(1)
            where.setdefault(key, i)
    return where


def _coerce(key, field, value, line):
    def bad(msg):
        raise ConfigError(key, msg, line)

    k = field.kind
    if k == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            bad(f"expected a number, got {type(value).__name__}")
        value = float(value)
        if not math.isfinite(value):
            bad("must be finite")
    elif k == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            bad(f"expected an integer, got {type(value).__name__}")
    elif k == "bool":
        if not isinstance(value, bool):
            bad(f"expected true/false, got {type(value).__name__}")
    elif k == "str":
        if not isinstance(value, str):
            bad(f"expected a string, got {type(value).__name__}")
    elif k in ("floats", "ints", "strs"):
        if not isinstance(value, list):
            bad(f"expected a list, got {type(value).__name__}")
        sub = {"floats": "float", "ints": "int", "strs": "str"}[k]
        value = [_coerce(f"{key}[{i}]", Field(sub, None), v, line) for i, v in enumerate(value)]
    elif k == "table":
        if not isinstance(value, dict):
            bad(f"expected a table, got {type(value).__name__}")
    if field.choices and value not in field.choices:
        bad(f"must be one of {list(field.choices)}, got {value!r}")
    if field.positive and not value > 0:
        bad("must be positive")
    return value


def _check_drift(cfg, lines):
    d = cfg["drift"]
    name = d["preset"]
    if name == "table":
        if len(d["nodes"]) < 2 or len(d["nodes"]) != len(d["values"]):
            raise ConfigError("drift.nodes", "table drift needs matching nodes and values", lines.get("drift.nodes"))
        return
    sig = inspect.signature(drift_mod.PRESETS[name])
    for k, v in d["params"].items():
        key = f"drift.params.{k}"
        if k not in sig.parameters:
            raise ConfigError(key, f"unknown parameter for preset {name!r}", lines.get(key, lines.get("drift.params")))
        ok = isinstance(v, (int, float)) and not isinstance(v, bool)
        ok = ok or (isinstance(v, list) and all(isinstance(u, (int, float)) for u in v))
        if not ok:
            raise ConfigError(key, "expected a number or a list of numbers", lines.get(key, lines.get("drift.params")))


def parse_config(text: str) -> dict:
    """Validate TOML text against :data:`SCHEMA` and fill in defaults."""
    lines = locate_lines(text)
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError("<syntax>", str(exc), int(m.group(1)) if m else None) from None
    cfg = {}
    for sec, val in raw.items():
        if not isinstance(val, dict):
            raise ConfigError(sec, "keys must live in a section", lines.get(sec))
        if sec not in SCHEMA:
            raise ConfigError(sec, "unknown section", lines.get(sec))
    for sec, fields in SCHEMA.items():
        given = raw.get(sec, {})
        for key in given:
            if key not in fields:
                raise ConfigError(f"{sec}.{key}", "unknown key", lines.get(f"{sec}.{key}", lines.get(sec)))
        out = {}
        for key, field in fields.items():
            dotted = f"{sec}.{key}"
            if key in given:
                out[key] = _coerce(dotted, field, given[key], lines.get(dotted))
            else:
                default = field.default
                out[key] = list(default) if isinstance(default, list) else (dict(default) if isinstance(default, dict) else default)
        cfg[sec] = out
    _check_drift(cfg, lines)
    if cfg["model"]["eps"] > 0.25:
        raise ConfigError("model.eps", "must not exceed 1/4", lines.get("model.eps"))
    if cfg["bounds"]["beta"] < cfg["bounds"]["alpha"]:
        raise ConfigError("bounds.beta", "must be at least bounds.alpha", lines.get("bounds.beta"))
    if any(r not in range(1, 8) for r in cfg["bounds"]["regimes"]):
        raise ConfigError("bounds.regimes", "regimes are 1..7", lines.get("bounds.regimes"))
    li = cfg["green"]["leg_interval"]
    if len(li) != 2 or not 0 < li[0] < li[1]:
        raise ConfigError("green.leg_interval", "expected [a, b] with 0 < a < b", lines.get("green.leg_interval"))
    return cfg


def load_config(path) -> dict:
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError("<file>", f"not UTF-8: {exc}") from None
    return parse_config(text)


def default_config() -> dict:
    return parse_config("")


def build_drift(cfg):
    d = cfg["drift"]
    if d["preset"] == "table":
        return drift_mod.radial_table(d["nodes"], d["values"], name="table")
    if d["preset"] == "zero":
        return None
    kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d["params"].items()}
    return drift_mod.preset(d["preset"], **kw)
