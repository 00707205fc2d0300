"""Run configuration: TOML text in, validated :class:`Config` out, and back."""
from __future__ import annotations

import json
import math
import sys
from dataclasses import dataclass, field, fields

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..errors import OutOfRange, ParseError, ValidationError
from ..geometry import Params
from ..model import PROFILES

FORCING_PROFILES = PROFILES + ("snapshot",)
INITIAL_PROFILES = ("random", "rest", "profile", "snapshot")


@dataclass(frozen=True)
class GridSpec:
    n_theta: int = 16
    n_phi: int = 32
    n_xi: int = 8
    polar_filter_band: int = 0


@dataclass(frozen=True)
class StepSpec:
    # "auto" picks the stability bound of the initial state
    dt: object = "auto"
    diffusion_mode: str = "explicit"
    projection_tol: float = 1e-10
    max_cg_iters: int = 200
    cfl_safety: float = 0.9


@dataclass(frozen=True)
class RunSpec:
    t_end: float = 1.0
    output_every: int = 1
    snapshot_every: int = 0
    out_dir: str = "out"


@dataclass(frozen=True)
class Config:
    grid: GridSpec = field(default_factory=GridSpec)
    params: Params = field(default_factory=Params)
    step: StepSpec = field(default_factory=StepSpec)
    forcing: dict = field(default_factory=lambda: {"Q1": {"profile": "zero"}, "Q2": {"profile": "zero"}})
    initial: dict = field(default_factory=lambda: {"profile": "random", "amplitude": 1.0, "seed": 0})
    run: RunSpec = field(default_factory=RunSpec)


_PROFILE_KEYS = {
    "profile": str,
    "amplitude": float,
    "center": float,
    "width": float,
    "l": int,
    "m": int,
    "vertical_mode": int,
    "path": str,
    "field": str,
}
_INITIAL_KEYS = {"profile": str, "amplitude": float, "seed": int, "path": str, "l_max": int, "k_max": int}


def _coerce(key: str, value, kind):
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(key, f"expected a number, got {value!r}")
        value = float(value)
        if not math.isfinite(value):
            raise ValidationError(key, "must be finite")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValidationError(key, f"expected an integer, got {value!r}")
        return value
    if kind is str:
        if not isinstance(value, str):
            raise ValidationError(key, f"expected a string, got {value!r}")
        return value
    raise AssertionError(kind)


def _section(raw: dict, name: str) -> dict:
    value = raw.get(name, {})
    if not isinstance(value, dict):
        raise ValidationError(name, "must be a table")
    return value


def _dataclass_section(raw: dict, name: str, cls, special=None):
    section = _section(raw, name)
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in section.items():
        full = f"{name}.{key}"
        if key not in known:
            raise ValidationError(full, "unknown key")
        if special and key in special:
            kwargs[key] = special[key](full, value)
            continue
        default = known[key].default
        kind = float if isinstance(default, float) else type(default)
        kwargs[key] = _coerce(full, value, kind)
    return cls(**kwargs)


def _dt_value(key, value):
    if value == "auto":
        return value
    value = _coerce(key, value, float)
    if value <= 0:
        raise ValidationError(key, "must be > 0 or \"auto\"")
    return value


def _profile_table(key: str, table, allowed: tuple, keys: dict) -> dict:
    if not isinstance(table, dict):
        raise ValidationError(key, "must be a table")
    out = {}
    for k, v in table.items():
        if k not in keys:
            raise ValidationError(f"{key}.{k}", "unknown key")
        out[k] = _coerce(f"{key}.{k}", v, keys[k])
    out.setdefault("profile", allowed[0])
    if out["profile"] not in allowed:
        raise ValidationError(f"{key}.profile", f"must be one of {allowed}")
    if out["profile"] == "snapshot" and "path" not in out:
        raise ValidationError(f"{key}.path", "required for snapshot profiles")
    return out


def _validate(cfg: Config):
    g = cfg.grid
    for name in ("n_theta", "n_phi", "n_xi"):
        if getattr(g, name) < 1:
            raise ValidationError(f"grid.{name}", "must be positive")
    if g.n_theta < 4:
        raise ValidationError("grid.n_theta", "must be >= 4")
    if g.n_phi < 4 or g.n_phi % 2:
        raise ValidationError("grid.n_phi", "must be even and >= 4")
    if g.n_xi < 2:
        raise ValidationError("grid.n_xi", "must be >= 2")
    if g.polar_filter_band < 0 or 2 * g.polar_filter_band >= g.n_theta:
        raise ValidationError("grid.polar_filter_band", "must lie in [0, n_theta / 2)")
    s = cfg.step
    if s.diffusion_mode not in ("explicit", "cn"):
        raise ValidationError("step.diffusion_mode", "must be \"explicit\" or \"cn\"")
    if not s.projection_tol > 0:
        raise ValidationError("step.projection_tol", "must be > 0")
    if s.max_cg_iters < 1:
        raise ValidationError("step.max_cg_iters", "must be >= 1")
    if not 0 < s.cfl_safety <= 1:
        raise ValidationError("step.cfl_safety", "must lie in (0, 1]")
    r = cfg.run
    if r.t_end < 0:
        raise ValidationError("run.t_end", "must be >= 0")
    if r.output_every < 1:
        raise ValidationError("run.output_every", "must be >= 1")
    if r.snapshot_every < 0:
        raise ValidationError("run.snapshot_every", "must be >= 0")
    init = cfg.initial
    if init.get("amplitude", 1.0) < 0:
        raise ValidationError("initial.amplitude", "must be >= 0")


def _params(raw: dict) -> Params:
    section = _section(raw, "params")
    known = {f.name for f in fields(Params)}
    values = {}
    for key, value in section.items():
        full = f"params.{key}"
        if key not in known:
            raise ValidationError(full, "unknown key")
        value = _coerce(full, value, float)
        if not value > 0:
            raise ValidationError(full, "must be > 0")
        values[key] = value
    try:
        return Params(**values)
    except OutOfRange as exc:
        raise ValidationError("params.p0", str(exc)) from exc


def config_from_dict(raw: dict) -> Config:
    for key in raw:
        if key not in ("grid", "params", "step", "forcing", "initial", "run"):
            raise ValidationError(key, "unknown section")
    grid = _dataclass_section(raw, "grid", GridSpec)
    params = _params(raw)
    step = _dataclass_section(raw, "step", StepSpec, special={"dt": _dt_value})
    run = _dataclass_section(raw, "run", RunSpec)
    forcing_raw = _section(raw, "forcing")
    for key in forcing_raw:
        if key not in ("Q1", "Q2"):
            raise ValidationError(f"forcing.{key}", "unknown key")
    forcing = {
        q: _profile_table(f"forcing.{q}", forcing_raw.get(q, {}), FORCING_PROFILES, _PROFILE_KEYS)
        for q in ("Q1", "Q2")
    }
    initial_raw = dict(_section(raw, "initial"))
    nested = {k: initial_raw.pop(k) for k in ("T", "q") if k in initial_raw}
    initial = _profile_table("initial", initial_raw, INITIAL_PROFILES, _INITIAL_KEYS)
    initial.setdefault("amplitude", 1.0)
    initial.setdefault("seed", 0)
    for k, table in nested.items():
        initial[k] = _profile_table(f"initial.{k}", table, PROFILES, _PROFILE_KEYS)
    cfg = Config(grid=grid, params=params, step=step, forcing=forcing, initial=initial, run=run)
    _validate(cfg)
    return cfg


def parse_config(text: str) -> Config:
    """Parse and validate TOML configuration text."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(getattr(exc, "msg", str(exc)), getattr(exc, "lineno", None)) from exc
    return config_from_dict(raw)


def load_config(path) -> Config:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def _render_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    return json.dumps(value)


def _render_table(lines: list, name: str, items: dict):
    lines.append(f"[{name}]")
    nested = []
    for key, value in items.items():
        if isinstance(value, dict):
            nested.append((key, value))
        else:
            lines.append(f"{key} = {_render_value(value)}")
    lines.append("")
    for key, value in nested:
        _render_table(lines, f"{name}.{key}", value)


def render_config(cfg: Config) -> str:
    """TOML text that parses back to an equal Config."""
    lines: list[str] = []
    for name in ("grid", "params", "step", "run"):
        obj = getattr(cfg, name)
        _render_table(lines, name, {f.name: getattr(obj, f.name) for f in fields(obj)})
    _render_table(lines, "forcing.Q1", cfg.forcing["Q1"])
    _render_table(lines, "forcing.Q2", cfg.forcing["Q2"])
    _render_table(lines, "initial", cfg.initial)
    return "\n".join(lines)
