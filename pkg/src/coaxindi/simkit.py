"""Deterministic closed-loop simulation, tracking metrics and parameter sweeps.

The plant is integrated with RK4 at ``plant_rate`` (400 Hz by default) and
the controller runs at ``control_rate`` (200 Hz), two plant steps per
control step with the actuator command held in between. Angular
acceleration reaches the INDI law through the sampled-gyro differentiator
plus a pure delay, for a total derivative delay ``tau``.

Failures inside a run (divergence, Euler singularity) are recorded in the
log rather than raised so that sweeps always complete.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import dynamics as dyn
from .control import CascadedController, ControlSetpoint, ControllerGains, allocate
from .dynamics import Environment, VehicleParams, VehicleState
from .estimation import DelayLine, SampleBuffer, delay_steps, differentiate, make_central_diff

METRIC_INTERVAL = 0.1  # s
TRACKING_FAIL = 2.0  # m, d_ave at or above this is a tracking failure
HOVER_FAIL = 5.0  # deg, A_ave above this is a hover failure
OSCILLATION_RMS = 0.5  # rad/s, roll/pitch rate RMS over the final window
OSCILLATION_WINDOW = 5.0  # s


class DegenerateLegError(ValueError):
    pass


# -------------------------------------------------------------------- inputs

@dataclass(frozen=True, eq=False)
class Mission:
    """Waypoints in the ground frame (NED, metres).

    ``kind="waypoint"`` flies legs ``wp[i-1] -> wp[i]`` at up to
    ``cruise_speed`` and ends when the last waypoint is reached.
    ``kind="hover"`` holds altitude at ``wp[0]`` with zero roll and pitch
    reference for the full ``duration``.
    """

    waypoints: np.ndarray
    cruise_speed: float = 2.0
    acceptance_radius: float = 0.3
    yaw_schedule: tuple = ((0.0, 0.0),)  # (start time s, yaw rad) pairs
    duration: float = 60.0
    kind: str = "waypoint"

    def __post_init__(self):
        wp = np.asarray(self.waypoints, dtype=float)
        if wp.ndim != 2 or wp.shape[1] != 3 or len(wp) == 0:
            raise ValueError("waypoints must be a non-empty (N, 3) array")
        object.__setattr__(self, "waypoints", wp)
        object.__setattr__(self, "yaw_schedule", tuple((float(t), float(y)) for t, y in self.yaw_schedule))
        if self.kind not in ("waypoint", "hover"):
            raise ValueError(f"unknown mission kind {self.kind!r}")
        if self.kind == "waypoint" and len(wp) < 2:
            raise ValueError("a tracking mission needs at least two waypoints")
        if not self.acceptance_radius > 0:
            raise ValueError("acceptance radius must be positive")
        if not self.cruise_speed > 0 or not self.duration > 0:
            raise ValueError("cruise speed and duration must be positive")

    @classmethod
    def square(cls, side: float = 10.0, altitude: float = 2.0, cruise_speed: float = 2.0,
               duration: float = 60.0) -> Mission:
        h = -altitude
        wp = [(0, 0, h), (side, 0, h), (side, side, h), (0, side, h), (0, 0, h)]
        return cls(np.array(wp, dtype=float), cruise_speed=cruise_speed, duration=duration)

    @classmethod
    def hover(cls, altitude: float = 2.0, duration: float = 30.0) -> Mission:
        return cls(np.array([[0.0, 0.0, -altitude]]), duration=duration, kind="hover")

    def yaw_at(self, t: float) -> float:
        yaw = self.yaw_schedule[0][1]
        for t0, y in self.yaw_schedule:
            if t >= t0:
                yaw = y
        return yaw


@dataclass(frozen=True)
class WindModel:
    """Piecewise-constant wind along a fixed ground-frame direction.

    A speed is drawn uniformly from ``speed_range`` for every ``hold``
    interval; the whole sequence is generated up front from ``seed``.
    """

    direction: tuple = (1.0, 0.0, 0.0)
    speed_range: tuple = (0.0, 0.0)
    hold: float = 0.5
    seed: int = 0

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        n = float(np.linalg.norm(d))
        if n == 0:
            raise ValueError("wind direction must be nonzero")
        object.__setattr__(self, "direction", tuple((d / n).tolist()))
        lo, hi = (float(x) for x in self.speed_range)
        if not 0 <= lo <= hi:
            raise ValueError("wind speed range must satisfy 0 <= lo <= hi")
        object.__setattr__(self, "speed_range", (lo, hi))
        if not self.hold > 0:
            raise ValueError("hold interval must be positive")

    def speeds(self, duration: float) -> np.ndarray:
        n = int(math.ceil(duration / self.hold)) + 1
        rng = np.random.default_rng(np.random.SeedSequence([int(self.seed), 0x57]))
        lo, hi = self.speed_range
        return rng.uniform(lo, hi, size=n) if hi > lo else np.full(n, lo)

    @property
    def mean_speed(self) -> float:
        return 0.5 * sum(self.speed_range)


@dataclass(frozen=True, eq=False)
class SimOptions:
    plant_rate: float = 400.0
    control_rate: float = 200.0
    diff_points: int = 11
    diff_kind: str = "holoborodko"
    accel_noise: float = 0.05  # m/s^2, 1-sigma
    gyro_noise: float = 0.0  # rad/s, 1-sigma
    max_tilt: float = 0.6
    measured_attitude: bool = True


# ------------------------------------------------------------------- run log

LOG_COLUMNS = (
    ["t", "leg"]
    + [f"pos_{a}" for a in "xyz"] + [f"vel_{a}" for a in "uvw"]
    + ["phi", "theta", "psi", "p", "q", "r"]
    + ["ref_x", "ref_y", "ref_z"]
    + ["theta_des", "phi_des", "tz_des"]
    + ["l_des", "m_des", "n_des"]
    + ["omega1", "omega2", "delta_cx", "delta_cy"]
    + ["pdot_meas", "qdot_meas", "rdot_meas"]
    + ["ax_meas", "ay_meas", "az_meas"]
    + ["wind_x", "saturated"]
)


@dataclass(eq=False)
class RunLog:
    """Control-rate time series; ``data`` columns follow :data:`LOG_COLUMNS`."""

    data: np.ndarray
    summary: dict = field(default_factory=dict)

    def col(self, name: str) -> np.ndarray:
        return self.data[:, LOG_COLUMNS.index(name)]

    def cols(self, *names: str) -> np.ndarray:
        return self.data[:, [LOG_COLUMNS.index(n) for n in names]]

    @property
    def t(self) -> np.ndarray:
        return self.col("t")

    @property
    def diverged(self) -> bool:
        return bool(self.summary.get("diverged", False))

    @property
    def unstable(self) -> bool:
        return self.diverged or bool(self.summary.get("oscillating", False))

    @classmethod
    def from_columns(cls, summary: dict | None = None, **columns) -> RunLog:
        """Build a log from named columns; missing ones are zero."""
        n = len(next(iter(columns.values())))
        data = np.zeros((n, len(LOG_COLUMNS)))
        for k, v in columns.items():
            data[:, LOG_COLUMNS.index(k)] = v
        return cls(data, dict(summary or {}))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LOG_COLUMNS)
            for row in self.data:
                w.writerow([repr(float(x)) for x in row])

    def write_summary(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(_jsonable(self.summary), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else ("inf" if x > 0 else ("-inf" if x < 0 else "nan"))
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# ------------------------------------------------------------------- metrics

def _metric_rows(t: np.ndarray) -> np.ndarray:
    k = np.round(t / METRIC_INTERVAL)
    on_grid = np.abs(t - k * METRIC_INTERVAL) < 1e-9
    # one row per grid instant
    _, first = np.unique(k[on_grid], return_index=True)
    return np.flatnonzero(on_grid)[first]


def distance_to_line(point, a, b) -> float:
    d = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
    n = float(np.linalg.norm(d))
    if n == 0:
        raise DegenerateLegError("consecutive waypoints coincide")
    r = np.asarray(point, dtype=float) - a
    return float(np.linalg.norm(np.cross(r, d)) / n)


def d_ave(log: RunLog, mission: Mission) -> float:
    """Mean distance to the active leg's line, sampled every 0.1 s (m)."""
    wp = mission.waypoints
    if len(wp) < 2:
        raise ValueError("d_ave needs a tracking mission")
    for i in range(1, len(wp)):
        if np.allclose(wp[i], wp[i - 1]):
            raise DegenerateLegError(f"waypoints {i - 1} and {i} coincide")
    rows = _metric_rows(log.t)
    if len(rows) == 0:
        raise ValueError("log has no samples on the metric grid")
    pos = log.cols("pos_x", "pos_y", "pos_z")[rows]
    legs = log.col("leg")[rows].astype(int)
    d = [distance_to_line(p, wp[k - 1], wp[k]) for p, k in zip(pos, np.clip(legs, 1, len(wp) - 1))]
    return float(np.mean(d))


def a_ave(log: RunLog) -> float:
    """Mean of sqrt(phi**2 + theta**2), sampled every 0.1 s (degrees)."""
    rows = _metric_rows(log.t)
    if len(rows) == 0:
        raise ValueError("log has no samples on the metric grid")
    phi = log.col("phi")[rows]
    theta = log.col("theta")[rows]
    return float(np.degrees(np.mean(np.sqrt(phi**2 + theta**2))))


# -------------------------------------------------------------- closed loop

def run_closed_loop(mission: Mission, variant: str = "indi_igm", gains: ControllerGains | None = None,
                    params: VehicleParams | None = None, env: Environment | None = None,
                    tau: float = 0.025, zeta_dev: float = 1.0, seed: int = 0,
                    wind: WindModel | None = None, options: SimOptions | None = None) -> RunLog:
    """Fly ``mission`` once and return the control-rate log.

    ``tau`` is the total angular-acceleration delay (a multiple of the
    control period; 0 feeds the true derivative). ``zeta_dev`` scales the
    moment actually delivered relative to the commanded one.
    """
    gains = gains or ControllerGains()
    params = params or VehicleParams()
    env = env or Environment()
    opts = options or SimOptions()
    if not zeta_dev > 0:
        raise ValueError("zeta_dev must be positive")
    ctrl_dt = 1.0 / opts.control_rate
    sub = int(round(opts.plant_rate / opts.control_rate))
    if sub < 1 or abs(sub * opts.control_rate - opts.plant_rate) > 1e-9:
        raise ValueError("plant rate must be an integer multiple of the control rate")
    plant_dt = ctrl_dt / sub
    tau_steps = delay_steps(tau, ctrl_dt)

    # derivative path: differentiator delay + pure delay = tau
    if tau_steps > 0:
        half = min((opts.diff_points - 1) // 2, tau_steps)
        spec = make_central_diff(2 * half + 1, ctrl_dt, opts.diff_kind)
        gyro_buf = SampleBuffer(spec.n, ctrl_dt)
        extra = DelayLine(tau_steps - half)
    else:
        spec = gyro_buf = extra = None

    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xA11]))
    ctrl = CascadedController(variant, gains, params, delay_steps=tau_steps,
                              max_tilt=opts.max_tilt, measured_attitude=opts.measured_attitude)

    n_steps = int(round(mission.duration / ctrl_dt))
    wind_dir = np.asarray((wind or WindModel()).direction)
    wind_speeds = wind.speeds(mission.duration) if wind is not None else None
    base_wind = env.wind
    fd = tuple(env.disturbance_force.tolist())
    md = tuple(env.disturbance_moment.tolist())
    cd = float(env.drag_coeff)

    wp = mission.waypoints
    s = tuple(np.concatenate([wp[0], np.zeros(9)]).tolist())
    leg = 1
    hover_cmd = dyn.ActuatorCommand(params.hover_omega, params.hover_omega, 0.0, 0.0)
    tz, mt = dyn._actuation(hover_cmd, params)

    rows = []
    summary = {"variant": variant, "diverged": False, "reason": "", "completed": False,
               "tau": tau, "zeta_dev": zeta_dev, "seed": seed}
    env_t, wind_idx = None, -1
    sp, sp_key = None, None
    for k in range(n_steps + 1):
        t = k * ctrl_dt
        idx = int((t + 1e-9) // wind.hold) if wind_speeds is not None else 0
        if idx != wind_idx:
            w_speed = wind_speeds[idx] if wind_speeds is not None else 0.0
            wind_g = tuple((base_wind + w_speed * wind_dir).tolist())
            env_t, wind_idx = (wind_g, fd, md, cd), idx

        if mission.kind == "waypoint":
            while leg < len(wp) and math.dist(s[0:3], wp[leg]) < mission.acceptance_radius:
                leg += 1
            if leg >= len(wp):
                summary["completed"] = True
                break
        yaw = mission.yaw_at(t)
        if (leg, yaw) != sp_key:
            if mission.kind == "waypoint":
                sp = ControlSetpoint(wp[leg], yaw, "position", max_speed=mission.cruise_speed)
            else:
                sp = ControlSetpoint(wp[0], yaw, "attitude")
            sp_key = (leg, yaw)
        if k == n_steps:
            break

        deriv = dyn._deriv(s, tz, mt, env_t, params)
        accel = np.array(deriv[3:6])
        if opts.accel_noise:
            accel = accel + rng.normal(0.0, opts.accel_noise, 3)
        gyro = np.array(s[9:12])
        if opts.gyro_noise:
            gyro = gyro + rng.normal(0.0, opts.gyro_noise, 3)
        if spec is None:
            rate_dot = np.array(deriv[9:12])
        else:
            gyro_buf.push(t, gyro)
            est = differentiate(gyro_buf, spec)
            rate_dot = extra(est[0] if est is not None else np.zeros(3))

        state = VehicleState.from_vector(s)
        try:
            out = ctrl.step(sp, state, accel, rate_dot)
        except dyn.SingularAttitudeError as exc:
            summary.update(diverged=True, reason=f"controller: {exc}")
            break
        cmd, sat = allocate(out.u1_des[2], zeta_dev * out.moment_des, params)
        tz, mt = dyn._actuation(cmd, params)
        rows.append((t, leg, *s, *sp.position, *out.u1_des, *out.moment_des,
                     cmd.omega1, cmd.omega2, cmd.delta_cx, cmd.delta_cy,
                     *rate_dot, *accel, wind_g[0], float(sat or out.clamped)))
        try:
            for _ in range(sub):
                s = dyn._rk4_flat(s, tz, mt, env_t, params, plant_dt)
                dyn._check_flat(s)
        except (dyn.DivergenceError, dyn.SingularAttitudeError) as exc:
            summary.update(diverged=True, reason=f"plant: {exc}")
            break
        if not all(math.isfinite(x) for x in s):
            summary.update(diverged=True, reason="plant: non-finite state")
            break

    data = np.array(rows, dtype=float) if rows else np.zeros((0, len(LOG_COLUMNS)))
    log = RunLog(data, summary)
    summary["duration"] = float(data[-1, 0]) if len(data) else 0.0
    if mission.kind == "hover" and not summary["diverged"]:
        summary["completed"] = True
    summary["oscillating"] = _oscillating(log, ctrl_dt)
    summary["saturation_fraction"] = float(np.mean(data[:, -1])) if len(data) else 0.0
    if len(data):
        summary["a_ave_deg"] = a_ave(log)
        if mission.kind == "waypoint":
            summary["d_ave_m"] = d_ave(log, mission)
    return log


def _oscillating(log: RunLog, ctrl_dt: float) -> bool:
    if len(log.data) == 0:
        return False
    n = max(1, int(round(OSCILLATION_WINDOW / ctrl_dt)))
    pq = log.cols("p", "q")[-n:]
    return bool(np.sqrt(np.mean(pq**2)) > OSCILLATION_RMS)


# -------------------------------------------------------------------- sweeps

SWEEP_KINDS = {
    # kind: (axis-1 name, metric)
    "delay_kdelta": ("tau", "d_ave"),
    "zeta_kdelta": ("zeta_dev", "a_ave"),
    "k3_kdelta": ("k3", "a_ave"),
}


@dataclass(frozen=True, eq=False)
class RunSettings:
    """Everything run_closed_loop needs besides the mission."""

    variant: str = "indi_igm"
    gains: ControllerGains = field(default_factory=ControllerGains)
    params: VehicleParams = field(default_factory=VehicleParams)
    env: Environment = field(default_factory=Environment)
    tau: float = 0.025
    zeta_dev: float = 1.0
    wind: WindModel | None = None
    options: SimOptions = field(default_factory=SimOptions)

    def run(self, mission: Mission, seed: int) -> RunLog:
        return run_closed_loop(mission, self.variant, self.gains, self.params, self.env, self.tau,
                               self.zeta_dev, seed, self.wind, self.options)


@dataclass(frozen=True, eq=False)
class SweepSpec:
    kind: str
    axis1: Sequence[float]  # tau (s), zeta_dev, or k3 depending on kind
    k_delta3: Sequence[float]
    mission: Mission
    settings: RunSettings = field(default_factory=RunSettings)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SWEEP_KINDS:
            raise ValueError(f"unknown sweep kind {self.kind!r}")
        for name in ("axis1", "k_delta3"):
            g = [float(x) for x in getattr(self, name)]
            if not g or any(b <= a for a, b in zip(g, g[1:])):
                raise ValueError(f"{name} grid must be non-empty and strictly increasing")
            object.__setattr__(self, name, tuple(g))
        if self.kind != "delay_kdelta" and self.mission.kind != "hover":
            raise ValueError(f"{self.kind} sweeps take a hover mission")
        if self.kind == "delay_kdelta" and self.mission.kind != "waypoint":
            raise ValueError("delay sweeps take a waypoint mission")

    @property
    def metric(self) -> str:
        return SWEEP_KINDS[self.kind][1]

    @property
    def axis1_name(self) -> str:
        return SWEEP_KINDS[self.kind][0]

    def cell_settings(self, a1: float, kd: float) -> RunSettings:
        s = self.settings
        gains = s.gains.with_(k_delta3=kd)
        if self.kind == "delay_kdelta":
            return replace(s, gains=gains, tau=a1)
        if self.kind == "zeta_kdelta":
            return replace(s, gains=gains, zeta_dev=a1)
        return replace(s, gains=gains.with_(k3=a1))


@dataclass(eq=False)
class SweepResult:
    kind: str
    axis1_name: str
    axis1: np.ndarray
    k_delta3: np.ndarray
    metric_name: str
    metric: np.ndarray  # (len(axis1), len(k_delta3)); +inf where the run was unstable
    diverged: np.ndarray  # bool, same shape
    errors: dict = field(default_factory=dict)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([self.axis1_name, "k_delta3", self.metric_name, "diverged"])
            for i, a in enumerate(self.axis1):
                for j, kd in enumerate(self.k_delta3):
                    w.writerow([repr(float(a)), repr(float(kd)), repr(float(self.metric[i, j])),
                                int(self.diverged[i, j])])

    def failed(self) -> np.ndarray:
        """Cells classified as failing by the tracking / hover threshold."""
        if self.metric_name == "d_ave":
            return self.metric >= TRACKING_FAIL
        return self.metric > HOVER_FAIL


def cell_seed(seed: int, i: int, j: int) -> int:
    """Per-cell noise seed, independent of evaluation order."""
    return int(np.random.SeedSequence([int(seed), i, j]).generate_state(1)[0])


def run_cell(spec: SweepSpec, i: int, j: int):
    a1, kd = spec.axis1[i], spec.k_delta3[j]
    try:
        log = spec.cell_settings(a1, kd).run(spec.mission, cell_seed(spec.seed, i, j))
    except Exception as exc:  # recorded inline so the grid completes
        return i, j, math.inf, True, f"{type(exc).__name__}: {exc}"
    unstable = log.unstable
    if unstable or len(log.data) == 0:
        value = math.inf
    elif spec.metric == "d_ave":
        value = d_ave(log, spec.mission)
    else:
        value = a_ave(log)
    return i, j, value, unstable, ""


def _run_cell_args(args):
    return run_cell(*args)


def run_sweep(spec: SweepSpec, workers: int = 1, order: Sequence[tuple[int, int]] | None = None) -> SweepResult:
    """Run every grid cell with the same seed and mission.

    ``order`` permutes evaluation order (results are always stored in grid
    order); ``workers > 1`` spreads cells across processes.
    """
    n1, n2 = len(spec.axis1), len(spec.k_delta3)
    cells = list(order) if order is not None else [(i, j) for i in range(n1) for j in range(n2)]
    metric = np.full((n1, n2), np.nan)
    div = np.zeros((n1, n2), dtype=bool)
    errors = {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_cell_args, [(spec, i, j) for i, j in cells]))
    else:
        results = [run_cell(spec, i, j) for i, j in cells]
    for i, j, value, unstable, err in results:
        metric[i, j] = value
        div[i, j] = unstable
        if err:
            errors[(i, j)] = err
    return SweepResult(spec.kind, spec.axis1_name, np.array(spec.axis1), np.array(spec.k_delta3),
                       spec.metric, metric, div, errors)


# ---------------------------------------------------------------- comparison

@dataclass(eq=False)
class Comparison:
    ndi: RunLog
    indi: RunLog
    d_ave_ndi: float
    d_ave_indi: float

    @property
    def ratio(self) -> float:
        return self.d_ave_indi / self.d_ave_ndi


def compare_ndi_indi(mission: Mission, wind: WindModel | None, settings: RunSettings | None = None,
                     seed: int = 0) -> Comparison:
    """Fly NDI and INDI+IGM through the same mission and wind realisation."""
    settings = settings or RunSettings()
    ndi = replace(settings, variant="ndi", wind=wind).run(mission, seed)
    indi = replace(settings, variant="indi_igm", wind=wind).run(mission, seed)
    d_n = math.inf if ndi.diverged else d_ave(ndi, mission)
    d_i = math.inf if indi.diverged else d_ave(indi, mission)
    return Comparison(ndi, indi, d_n, d_i)


def settings_summary(settings: RunSettings) -> dict:
    g = settings.gains
    return {
        "variant": settings.variant,
        "tau": settings.tau,
        "zeta_dev": settings.zeta_dev,
        "gains": {k: getattr(g, k).tolist() for k in ("k0", "k1", "k2", "k3", "k_delta3")},
        "wind": None if settings.wind is None else asdict(settings.wind),
        "options": asdict(settings.options),
    }
