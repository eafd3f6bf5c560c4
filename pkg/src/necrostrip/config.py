"""Run configuration: a TOML file with a fixed schema.

Unknown sections or keys are errors, as are missing model constants.
``--override section.key=value`` edits are applied before validation; the
value is parsed as a TOML value when possible and kept as a string otherwise.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .errors import ConfigError

__all__ = ["RunConfig", "load_config", "parse_config", "apply_override", "DEFAULTS"]

PARAM_KEYS = ("sigma_hat", "sigma_tilde", "sigma_bar", "mu", "nu", "gamma")

DEFAULTS = {
    "params": {},
    "grid": {"nx": 128, "ny": 256},
    "spectral": {"k_max": 64, "nu_sweep": []},
    "evolution": {
        "T": 3.0, "dt0": 0.01, "dt_max": None, "max_rel_change": 0.1,
        "scheme": "imex", "window_fraction": 0.5, "gamma_over_gamma_star": None,
        "rho0": [], "fit_k_max": 8, "growth_factor": 10.0,
    },
    "jacobian": {"k": list(range(9)), "epsilon": 1e-4, "grids": []},
    "sweep": {"values": {}, "k_max": 64},
    "output": {"directory": "out", "profile_points": 201, "snapshot": False},
}

_TYPES = {
    "grid": {"nx": int, "ny": int},
    "spectral": {"k_max": int, "nu_sweep": list},
    "evolution": {"T": float, "dt0": float, "dt_max": (float, type(None)),
                  "max_rel_change": float, "scheme": str, "window_fraction": float,
                  "gamma_over_gamma_star": (float, type(None)), "rho0": list,
                  "fit_k_max": int, "growth_factor": float},
    "jacobian": {"k": list, "epsilon": float, "grids": list},
    "sweep": {"values": dict, "k_max": int},
    "output": {"directory": str, "profile_points": int, "snapshot": bool},
}


@dataclass
class RunConfig:
    params: dict
    grid: dict = field(default_factory=dict)
    spectral: dict = field(default_factory=dict)
    evolution: dict = field(default_factory=dict)
    jacobian: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"params": dict(self.params), "grid": dict(self.grid),
                "spectral": copy.deepcopy(self.spectral),
                "evolution": copy.deepcopy(self.evolution),
                "jacobian": copy.deepcopy(self.jacobian),
                "sweep": copy.deepcopy(self.sweep), "output": dict(self.output)}


def _coerce(section, key, value):
    want = _TYPES[section][key]
    if want is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if isinstance(want, tuple):
        if value is None:
            return None
        if isinstance(value, int) and not isinstance(value, bool):
            return float(value)
        if isinstance(value, float):
            return value
        raise ConfigError(f"{section}.{key}: expected a number, got {value!r}")
    if want is int and isinstance(value, float) and value.is_integer():
        return int(value)
    if not isinstance(value, want) or (want is int and isinstance(value, bool)):
        raise ConfigError(f"{section}.{key}: expected {want.__name__}, got {value!r}")
    return value


def _parse_value(text):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_override(raw: dict, spec: str) -> None:
    if "=" not in spec:
        raise ConfigError(f"override {spec!r} is not of the form section.key=value")
    key, text = spec.split("=", 1)
    parts = key.strip().split(".")
    if len(parts) < 2:
        raise ConfigError(f"override key {key!r} must name a section, e.g. params.nu")
    node = raw
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override path {key!r} runs through a non-table value")
    node[parts[-1]] = _parse_value(text.strip())


def parse_config(raw: dict, overrides=()) -> RunConfig:
    raw = copy.deepcopy(raw)
    for spec in overrides:
        apply_override(raw, spec)
    unknown = set(raw) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")

    params = raw.get("params")
    if not isinstance(params, dict):
        raise ConfigError("missing [params] section")
    missing = [k for k in PARAM_KEYS if k not in params]
    if missing:
        raise ConfigError(f"[params] is missing: {', '.join(missing)}")
    extra = set(params) - set(PARAM_KEYS)
    if extra:
        raise ConfigError(f"unknown key(s) in [params]: {', '.join(sorted(extra))}")
    resolved = {"params": {}}
    for k in PARAM_KEYS:
        v = params[k]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"params.{k}: expected a number, got {v!r}")
        resolved["params"][k] = float(v)

    for section, defaults in DEFAULTS.items():
        if section == "params":
            continue
        given = raw.get(section, {})
        if not isinstance(given, dict):
            raise ConfigError(f"[{section}] must be a table")
        extra = set(given) - set(defaults)
        if extra:
            raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(extra))}")
        sec = copy.deepcopy(defaults)
        for k, v in given.items():
            sec[k] = _coerce(section, k, v)
        resolved[section] = sec

    _check_lists(resolved)
    return RunConfig(**resolved)


def _check_lists(cfg):
    ev = cfg["evolution"]
    rho0 = []
    for item in ev["rho0"]:
        if not (isinstance(item, list) and len(item) == 3):
            raise ConfigError("evolution.rho0 entries must be [k, amplitude, phase]")
        k, a, ph = item
        if isinstance(k, bool) or not isinstance(k, int) or k < 0:
            raise ConfigError(f"evolution.rho0: mode {k!r} must be a non-negative integer")
        rho0.append([k, float(a), float(ph)])
    ev["rho0"] = rho0
    if ev["scheme"] not in ("imex", "explicit"):
        raise ConfigError(f"evolution.scheme must be 'imex' or 'explicit', got {ev['scheme']!r}")
    jac = cfg["jacobian"]
    if not all(isinstance(k, int) and not isinstance(k, bool) and k >= 0 for k in jac["k"]):
        raise ConfigError("jacobian.k must be a list of non-negative integers")
    grids = []
    for g in jac["grids"]:
        if not (isinstance(g, list) and len(g) == 2 and all(isinstance(v, int) for v in g)):
            raise ConfigError("jacobian.grids entries must be [nx, ny]")
        grids.append(list(g))
    jac["grids"] = grids
    cfg["spectral"]["nu_sweep"] = [float(v) for v in cfg["spectral"]["nu_sweep"]]
    values = {}
    for key, vals in cfg["sweep"]["values"].items():
        if key not in PARAM_KEYS:
            raise ConfigError(f"sweep.values.{key} is not a model constant")
        if not isinstance(vals, list) or not vals:
            raise ConfigError(f"sweep.values.{key} must be a non-empty list")
        values[key] = [float(v) for v in vals]
    cfg["sweep"]["values"] = values


def load_config(path, overrides=()) -> RunConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return parse_config(raw, overrides)
