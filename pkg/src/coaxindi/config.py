"""Experiment configuration: TOML file -> validated settings objects.

Every table and key is optional except where a command needs it (``sweep``
needs ``[sweep]``); unknown tables or keys are rejected before anything
runs. Vector-valued gains accept a scalar (applied to all three axes) or a
3-list. See the README for the full schema.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .control import ControllerGains, VARIANTS
from .dynamics import Environment, VehicleParams
from .simkit import SWEEP_KINDS, Mission, RunSettings, SimOptions, SweepSpec, WindModel

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


NUM = (int, float)
VEC = "vector"  # 3-list of numbers
VEC_OR_NUM = "vector-or-number"
GRID = "grid"  # list of numbers or {start, stop, num}

SCHEMA = {
    "seed": int,
    "output_dir": str,
    "vehicle": {
        "mass": NUM, "inertia": VEC, "g": NUM, "sigma_loss": NUM, "lam1": NUM, "lam2_0": NUM,
        "zeta1": NUM, "zeta2": NUM, "k_l": NUM, "k_m": NUM, "delta_max": NUM, "omega_max": NUM,
        "swashplate_offset": "pair",
    },
    "gains": {"k0": VEC_OR_NUM, "k1": VEC_OR_NUM, "k2": VEC_OR_NUM, "k3": VEC_OR_NUM,
              "k_delta3": VEC_OR_NUM},
    "differentiator": {"points": int, "kind": str},
    "simulation": {
        "variant": str, "tau": NUM, "zeta_dev": NUM, "plant_rate": NUM, "control_rate": NUM,
        "accel_noise": NUM, "gyro_noise": NUM, "max_tilt": NUM, "measured_attitude": bool,
    },
    "environment": {"wind": VEC, "disturbance_force": VEC, "disturbance_moment": VEC, "drag_coeff": NUM},
    "wind": {"direction": VEC, "speed_range": "pair", "hold": NUM, "seed": int},
    "mission": {
        "kind": str, "waypoints": "points", "side": NUM, "altitude": NUM, "cruise_speed": NUM,
        "acceptance_radius": NUM, "duration": NUM, "yaw": NUM,
    },
    "sweep": {"kind": str, "axis1": GRID, "k_delta3": GRID, "workers": int},
}


def _is_num(x) -> bool:
    return isinstance(x, NUM) and not isinstance(x, bool)


def _check_value(where: str, kind, value) -> None:
    def bad(what):
        raise ConfigError(f"{where}: expected {what}, got {value!r}")

    if kind is NUM:
        if not _is_num(value):
            bad("a number")
    elif kind is int:
        if not isinstance(value, int) or isinstance(value, bool):
            bad("an integer")
    elif kind in (str, bool):
        if not isinstance(value, kind):
            bad(kind.__name__)
    elif kind == VEC:
        if not (isinstance(value, list) and len(value) == 3 and all(map(_is_num, value))):
            bad("a list of 3 numbers")
    elif kind == VEC_OR_NUM:
        if not (_is_num(value) or (isinstance(value, list) and len(value) == 3 and all(map(_is_num, value)))):
            bad("a number or a list of 3 numbers")
    elif kind == "pair":
        if not (isinstance(value, list) and len(value) == 2 and all(map(_is_num, value))):
            bad("a list of 2 numbers")
    elif kind == "points":
        if not (isinstance(value, list) and value
                and all(isinstance(p, list) and len(p) == 3 and all(map(_is_num, p)) for p in value)):
            bad("a non-empty list of [x, y, z] points")
    elif kind == GRID:
        if isinstance(value, dict):
            if set(value) != {"start", "stop", "num"} or not (_is_num(value["start"]) and _is_num(value["stop"])
                                                               and isinstance(value["num"], int)):
                bad("{start, stop, num}")
        elif not (isinstance(value, list) and value and all(map(_is_num, value))):
            bad("a non-empty list of numbers or {start, stop, num}")


def validate(raw: dict) -> None:
    """Raise ConfigError on unknown keys or mistyped values."""
    for key, value in raw.items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}")
        kind = SCHEMA[key]
        if isinstance(kind, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"[{key}] must be a table")
            for sub, v in value.items():
                if sub not in kind:
                    raise ConfigError(f"unknown key {key}.{sub}")
                _check_value(f"{key}.{sub}", kind[sub], v)
        else:
            _check_value(key, kind, value)


def _grid(value) -> list[float]:
    if isinstance(value, dict):
        if value["num"] < 1:
            raise ConfigError("grid num must be >= 1")
        return np.linspace(value["start"], value["stop"], value["num"]).tolist()
    return [float(x) for x in value]


@dataclass(eq=False)
class Config:
    raw: dict
    seed: int = 0
    output_dir: str | None = None
    settings: RunSettings = field(default_factory=RunSettings)
    mission: Mission | None = None
    sweep: SweepSpec | None = None
    workers: int = 1

    @property
    def digest(self) -> str:
        return config_hash(self.raw)


def config_hash(raw: dict) -> str:
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _mission(m: dict) -> Mission:
    kind = m.get("kind", "square")
    common = {k: m[k] for k in ("duration",) if k in m}
    yaw = ((0.0, float(m.get("yaw", 0.0))),)
    if kind == "hover":
        if "waypoints" in m:
            wp = np.array(m["waypoints"][:1], dtype=float)
            return Mission(wp, yaw_schedule=yaw, kind="hover", duration=m.get("duration", 30.0))
        return Mission(Mission.hover(m.get("altitude", 2.0)).waypoints, yaw_schedule=yaw, kind="hover",
                       duration=m.get("duration", 30.0))
    if kind == "square":
        base = Mission.square(m.get("side", 10.0), m.get("altitude", 2.0))
        wp = base.waypoints
    elif kind == "waypoint":
        if "waypoints" not in m:
            raise ConfigError("mission.kind = 'waypoint' needs mission.waypoints")
        wp = np.array(m["waypoints"], dtype=float)
    else:
        raise ConfigError(f"unknown mission kind {kind!r} (square, waypoint, hover)")
    return Mission(wp, cruise_speed=m.get("cruise_speed", 2.0), acceptance_radius=m.get("acceptance_radius", 0.3),
                   yaw_schedule=yaw, duration=common.get("duration", 60.0), kind="waypoint")


def build(raw: dict) -> Config:
    """Validate ``raw`` and construct the settings objects it describes."""
    validate(raw)
    try:
        veh = dict(raw.get("vehicle", {}))
        if "inertia" in veh:
            veh["inertia"] = np.diag(veh["inertia"])
        if "swashplate_offset" in veh:
            veh["swashplate_offset"] = tuple(veh["swashplate_offset"])
        params = VehicleParams(**veh)
        gains = ControllerGains(**raw.get("gains", {}))
        env = Environment(**{k: np.asarray(v, dtype=float) if isinstance(v, list) else v
                             for k, v in raw.get("environment", {}).items()})
        sim = dict(raw.get("simulation", {}))
        variant = sim.pop("variant", "indi_igm")
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {variant!r} (one of {', '.join(VARIANTS)})")
        tau = float(sim.pop("tau", 0.025))
        zeta_dev = float(sim.pop("zeta_dev", 1.0))
        diff = raw.get("differentiator", {})
        opts = SimOptions(diff_points=diff.get("points", 11), diff_kind=diff.get("kind", "holoborodko"), **sim)
        wind = None
        if "wind" in raw:
            w = dict(raw["wind"])
            w.setdefault("seed", raw.get("seed", 0))
            wind = WindModel(**{k: tuple(v) if isinstance(v, list) else v for k, v in w.items()})
        settings = RunSettings(variant, gains, params, env, tau, zeta_dev, wind, opts)
        mission = _mission(raw["mission"]) if "mission" in raw else None
        sweep = None
        workers = 1
        if "sweep" in raw:
            s = raw["sweep"]
            for key in ("kind", "axis1", "k_delta3"):
                if key not in s:
                    raise ConfigError(f"sweep.{key} is required")
            if s["kind"] not in SWEEP_KINDS:
                raise ConfigError(f"unknown sweep kind {s['kind']!r} (one of {', '.join(SWEEP_KINDS)})")
            if mission is None:
                raise ConfigError("a sweep needs a [mission] table")
            sweep = SweepSpec(s["kind"], _grid(s["axis1"]), _grid(s["k_delta3"]), mission, settings,
                              raw.get("seed", 0))
            workers = s.get("workers", 1)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return Config(raw, raw.get("seed", 0), raw.get("output_dir"), settings, mission, sweep, workers)


def load(path) -> Config:
    """Read a TOML config, or a run manifest (JSON) to rerun its config."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if path.suffix == ".json":
        try:
            raw = json.loads(text)["config"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ConfigError(f"{path} is not a run manifest: {exc}") from exc
    else:
        try:
            raw = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return build(raw)
