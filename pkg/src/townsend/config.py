"""Run configuration: a TOML file with one section per concern.

Every section is optional except [parameters].  Unknown keys are rejected
so that typos surface as validation errors instead of silent defaults.

    [parameters]   a, b, gamma, k_i = 1, k_e = 1, L = 1
    [spark]        V_max (default: scan window from the landscape of g), step = 1e-3,
                   curve_points = 2000
    [grid]         n_cells = 400
    [solver]       newton_tol = 1e-10, max_iters = 40, domain_margin, damping = 0.5,
                   min_step = 1e-8, mode = "reduced"
    [continuation] max_steps = 2000, norm_ceiling = 1e6, lambda_floor = 1e-6,
                   field_floor = 1e-8, trivial_tol, ds_initial = 1e-2, ds_min = 1e-6,
                   ds_max = 0.5, s0 = 1e-3, direction = 1, snapshot_stride = 0
    [solve]        amplitude = 1e-2
    [sweep]        x = {name, min, max, count, scale}, y = {...}, V_max, step = 1e-3
    [output]       directory = "out", formats = ["csv", "json", "svg"]
"""
from __future__ import annotations

import hashlib
import json
import math
import sys
from dataclasses import asdict, dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import InvalidParameters, TownsendError
from .model import Parameters

__all__ = ["ConfigError", "RunConfig", "SweepAxis", "load_config", "parse_config"]

FORMATS = ("csv", "json", "svg")


class ConfigError(TownsendError, ValueError):
    """The configuration file is unreadable or fails validation."""


_DEFAULTS = {
    "spark": {"V_max": None, "step": 1e-3, "curve_points": 2000},
    "grid": {"n_cells": 400},
    "solver": {"newton_tol": 1e-10, "max_iters": 40, "domain_margin": None, "damping": 0.5,
               "min_step": 1e-8, "mode": "reduced"},
    "continuation": {"max_steps": 2000, "norm_ceiling": 1e6, "lambda_floor": 1e-6,
                     "field_floor": 1e-8, "trivial_tol": None, "ds_initial": 1e-2,
                     "ds_min": 1e-6, "ds_max": 0.5, "s0": 1e-3, "direction": 1,
                     "snapshot_stride": 0},
    "solve": {"amplitude": 1e-2},
    "sweep": {"x": None, "y": None, "V_max": None, "step": 1e-3},
    "output": {"directory": "out", "formats": list(FORMATS)},
}
_PARAM_KEYS = {"a", "b", "gamma", "k_i", "k_e", "L"}
_AXIS_KEYS = {"name", "min", "max", "count", "scale"}
_SWEEPABLE = ("a", "b", "gamma")


@dataclass(frozen=True)
class SweepAxis:
    name: str
    min: float
    max: float
    count: int
    scale: str = "linear"

    def values(self) -> list[float]:
        if self.count == 1:
            return [self.min]
        if self.scale == "log":
            lo, hi = math.log(self.min), math.log(self.max)
            return [math.exp(lo + (hi - lo) * k / (self.count - 1)) for k in range(self.count)]
        return [self.min + (self.max - self.min) * k / (self.count - 1) for k in range(self.count)]


@dataclass(frozen=True)
class RunConfig:
    parameters: Parameters
    spark: dict
    grid: dict
    solver: dict
    continuation: dict
    solve: dict
    sweep: dict
    output: dict
    sweep_axes: tuple = field(default=())

    def echo(self) -> dict:
        """Normalized configuration with defaults filled in (output section excluded)."""
        return {
            "parameters": self.parameters.as_dict(),
            "spark": dict(self.spark),
            "grid": dict(self.grid),
            "solver": dict(self.solver),
            "continuation": dict(self.continuation),
            "solve": dict(self.solve),
            "sweep": {**{k: v for k, v in self.sweep.items() if k not in ("x", "y")},
                      "axes": [asdict(a) for a in self.sweep_axes]},
        }

    @property
    def hash(self) -> str:
        text = json.dumps(self.echo(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def _number(section: str, key: str, value, *, positive=False, nonneg=False, integer=False,
            allow_none=False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"[{section}] {key} must be a number, got {value!r}")
    if integer:
        if int(value) != value:
            raise ConfigError(f"[{section}] {key} must be an integer, got {value!r}")
        value = int(value)
    else:
        value = float(value)
        if not math.isfinite(value):
            raise ConfigError(f"[{section}] {key} must be finite")
    if positive and not value > 0:
        raise ConfigError(f"[{section}] {key} must be positive, got {value}")
    if nonneg and value < 0:
        raise ConfigError(f"[{section}] {key} must be nonnegative, got {value}")
    return value


def _merge(section: str, raw: dict) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError(f"[{section}] must be a table")
    defaults = _DEFAULTS[section]
    unknown = set(raw) - set(defaults)
    if unknown:
        raise ConfigError(f"[{section}] unknown keys: {', '.join(sorted(unknown))}")
    out = dict(defaults)
    out.update(raw)
    return out


def _axis(raw, label: str) -> SweepAxis:
    if not isinstance(raw, dict):
        raise ConfigError(f"[sweep] {label} must be a table with name, min, max, count")
    unknown = set(raw) - _AXIS_KEYS
    if unknown:
        raise ConfigError(f"[sweep] {label} has unknown keys: {', '.join(sorted(unknown))}")
    missing = {"name", "min", "max", "count"} - set(raw)
    if missing:
        raise ConfigError(f"[sweep] {label} is missing {', '.join(sorted(missing))}")
    name = raw["name"]
    if name not in _SWEEPABLE:
        raise ConfigError(f"[sweep] {label}.name must be one of {_SWEEPABLE}, got {name!r}")
    lo = _number("sweep", f"{label}.min", raw["min"])
    hi = _number("sweep", f"{label}.max", raw["max"])
    count = _number("sweep", f"{label}.count", raw["count"], integer=True)
    scale = raw.get("scale", "linear")
    if scale not in ("linear", "log"):
        raise ConfigError(f"[sweep] {label}.scale must be 'linear' or 'log'")
    if count < 1 or hi < lo or (count > 1 and hi == lo):
        raise ConfigError(f"[sweep] {label} describes an empty range")
    if scale == "log" and lo <= 0:
        raise ConfigError(f"[sweep] {label}: log scale needs a positive minimum")
    return SweepAxis(name=name, min=lo, max=hi, count=count, scale=scale)


def parse_config(data: dict, *, require_sweep: bool = False) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a table")
    unknown = set(data) - ({"parameters"} | set(_DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown sections: {', '.join(sorted(unknown))}")
    raw_p = data.get("parameters")
    if not isinstance(raw_p, dict):
        raise ConfigError("[parameters] section is required")
    extra = set(raw_p) - _PARAM_KEYS
    if extra:
        raise ConfigError(f"[parameters] unknown keys: {', '.join(sorted(extra))}")
    for key in ("a", "b", "gamma"):
        if key not in raw_p:
            raise ConfigError(f"[parameters] {key} is required")
    values = {k: _number("parameters", k, v) for k, v in raw_p.items()}
    try:
        params = Parameters(**values)
    except InvalidParameters as exc:
        raise ConfigError(f"[parameters] {exc}") from exc

    spark = _merge("spark", data.get("spark", {}))
    spark["V_max"] = _number("spark", "V_max", spark["V_max"], positive=True, allow_none=True)
    spark["step"] = _number("spark", "step", spark["step"], positive=True)
    spark["curve_points"] = _number("spark", "curve_points", spark["curve_points"], integer=True)
    if spark["curve_points"] < 2:
        raise ConfigError("[spark] curve_points must be at least 2")
    if spark["V_max"] is not None and spark["step"] > spark["V_max"] / 100.0:
        raise ConfigError("[spark] step must not exceed V_max/100")

    grid = _merge("grid", data.get("grid", {}))
    grid["n_cells"] = _number("grid", "n_cells", grid["n_cells"], integer=True)
    if grid["n_cells"] < 16:
        raise ConfigError("[grid] n_cells must be at least 16")

    solver = _merge("solver", data.get("solver", {}))
    solver["newton_tol"] = _number("solver", "newton_tol", solver["newton_tol"], positive=True)
    solver["max_iters"] = _number("solver", "max_iters", solver["max_iters"], integer=True, positive=True)
    solver["domain_margin"] = _number("solver", "domain_margin", solver["domain_margin"],
                                      positive=True, allow_none=True)
    solver["damping"] = _number("solver", "damping", solver["damping"], positive=True)
    solver["min_step"] = _number("solver", "min_step", solver["min_step"], positive=True)
    if not solver["damping"] < 1 or not solver["min_step"] < 1:
        raise ConfigError("[solver] damping and min_step must be below 1")
    if solver["mode"] not in ("reduced", "full"):
        raise ConfigError("[solver] mode must be 'reduced' or 'full'")

    cont = _merge("continuation", data.get("continuation", {}))
    cont["max_steps"] = _number("continuation", "max_steps", cont["max_steps"], integer=True, positive=True)
    for key in ("norm_ceiling", "lambda_floor", "field_floor", "ds_initial", "ds_min", "ds_max", "s0"):
        cont[key] = _number("continuation", key, cont[key], positive=True)
    cont["trivial_tol"] = _number("continuation", "trivial_tol", cont["trivial_tol"],
                                  positive=True, allow_none=True)
    cont["direction"] = _number("continuation", "direction", cont["direction"], integer=True)
    if cont["direction"] not in (1, -1):
        raise ConfigError("[continuation] direction must be 1 or -1")
    cont["snapshot_stride"] = _number("continuation", "snapshot_stride", cont["snapshot_stride"],
                                      integer=True, nonneg=True)
    if not cont["ds_min"] <= cont["ds_initial"] <= cont["ds_max"]:
        raise ConfigError("[continuation] need ds_min <= ds_initial <= ds_max")

    solve = _merge("solve", data.get("solve", {}))
    solve["amplitude"] = _number("solve", "amplitude", solve["amplitude"], positive=True)

    sweep = _merge("sweep", data.get("sweep", {}))
    sweep["V_max"] = _number("sweep", "V_max", sweep["V_max"], positive=True, allow_none=True)
    sweep["step"] = _number("sweep", "step", sweep["step"], positive=True)
    axes: tuple = ()
    if sweep["x"] is not None or sweep["y"] is not None or require_sweep:
        if sweep["x"] is None or sweep["y"] is None:
            raise ConfigError("[sweep] needs both x and y axes")
        ax, ay = _axis(sweep["x"], "x"), _axis(sweep["y"], "y")
        if ax.name == ay.name:
            raise ConfigError("[sweep] x and y must vary different parameters")
        axes = (ax, ay)
        for axis in axes:
            bad = axis.min < 0 if axis.name == "gamma" else axis.min <= 0
            if bad:
                raise ConfigError(f"[sweep] {axis.name} range violates its sign constraint")

    output = _merge("output", data.get("output", {}))
    if not isinstance(output["directory"], str) or not output["directory"]:
        raise ConfigError("[output] directory must be a nonempty string")
    formats = output["formats"]
    if isinstance(formats, str):
        formats = [f.strip() for f in formats.split(",") if f.strip()]
    if not isinstance(formats, list) or not formats or any(f not in FORMATS for f in formats):
        raise ConfigError(f"[output] formats must be a nonempty subset of {FORMATS}")
    output["formats"] = sorted(set(formats), key=FORMATS.index)

    return RunConfig(parameters=params, spark=spark, grid=grid, solver=solver,
                     continuation=cont, solve=solve, sweep=sweep, output=output,
                     sweep_axes=axes)


def load_config(path, *, require_sweep: bool = False) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path} is not valid TOML: {exc}") from exc
    return parse_config(data, require_sweep=require_sweep)
