"""Four-loop cascaded flight controller, NDI and INDI variants.

Loops from outside in: position -> body velocity (NDI), body velocity ->
attitude and thrust (NDI or INDI), attitude -> body rates (NDI), body rates
-> control moment (NDI, INDI with incremental gain, or INDI with active
delay). :func:`allocate` maps thrust and moment to rotor speeds and
swashplate tilt.

The loop functions are pure: they take a :class:`ControllerMemory` and
return a new one alongside their output. :class:`CascadedController` wires
them together and owns the memory for a simulation run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .dynamics import (ActuatorCommand, SingularAttitudeError, VehicleParams, VehicleState,
                       euler_rate_matrix_inv, rotation_gb)

VARIANTS = ("ndi", "indi_igm", "indi_active_delay")
SIGMA_BALL = 1.0 - 1e-6


def _cross(a, b) -> np.ndarray:
    # np.cross carries heavy per-call overhead for 3-vectors
    a0, a1, a2 = a
    b0, b1, b2 = b
    return np.array([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0])


def _vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=float)
    if a.ndim == 0:
        a = np.full(3, float(a))
    return a.reshape(3).copy()


@dataclass(frozen=True, eq=False)
class ControllerGains:
    k0: np.ndarray = field(default_factory=lambda: np.full(3, 0.8))
    k1: np.ndarray = field(default_factory=lambda: np.full(3, 2.0))
    k2: np.ndarray = field(default_factory=lambda: np.full(3, 2.0))
    k3: np.ndarray = field(default_factory=lambda: np.full(3, 5.0))
    k_delta3: np.ndarray = field(default_factory=lambda: np.full(3, 0.05))

    def __post_init__(self):
        for name in ("k0", "k1", "k2", "k3", "k_delta3"):
            v = _vec3(getattr(self, name))
            if np.any(v <= 0):
                raise ValueError(f"gain {name} must be positive")
            object.__setattr__(self, name, v)
        if np.any(self.k_delta3 > 1):
            raise ValueError("k_delta3 components must lie in (0, 1]")

    def with_(self, **kw) -> ControllerGains:
        return replace(self, **kw)


@dataclass(frozen=True, eq=False)
class ControlSetpoint:
    """Reference input. In ``attitude`` mode only altitude is regulated and
    roll/pitch follow ``attitude`` = (phi_ref, theta_ref)."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    yaw: float = 0.0
    mode: str = "position"
    attitude: tuple[float, float] = (0.0, 0.0)
    max_speed: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "position", _vec3(self.position))
        if self.mode not in ("position", "attitude"):
            raise ValueError(f"unknown setpoint mode {self.mode!r}")
        if not np.all(np.isfinite(self.position)) or not math.isfinite(self.yaw):
            raise ValueError("setpoint must be finite")


@dataclass(frozen=True, eq=False)
class ControllerMemory:
    u1: np.ndarray  # last commanded (theta, phi, T_z)
    m_t: np.ndarray  # last commanded control moment
    history: tuple = ()  # commanded moments, oldest first; history[-1] is m_t

    @classmethod
    def hover_trim(cls, params: VehicleParams, delay_steps: int = 0) -> ControllerMemory:
        u1 = np.array([0.0, 0.0, -params.mass * params.g])
        m0 = np.zeros(3)
        return cls(u1, m0, tuple(m0.copy() for _ in range(delay_steps + 1)))

    @property
    def delay_steps(self) -> int:
        return max(len(self.history) - 1, 0)


class TranslationalCommand(NamedTuple):
    theta: float
    phi: float
    thrust_z: float
    clamped: bool


# ------------------------------------------------------------ kinematic loops

def ndi_outer_velocity(setpoint: ControlSetpoint, state: VehicleState, gains: ControllerGains) -> np.ndarray:
    """Desired body velocity from position error; optional ground-speed cap."""
    L = rotation_gb(state.attitude)
    err = setpoint.position - state.position
    if setpoint.mode == "attitude":
        err = np.array([0.0, 0.0, err[2]])
    v_ground = gains.k0 * err
    if setpoint.max_speed is not None:
        speed = float(np.linalg.norm(v_ground))
        if speed > setpoint.max_speed:
            v_ground = v_ground * (setpoint.max_speed / speed)
    return L.T @ v_ground


def wrap_angle(a: float) -> float:
    return (a + math.pi) % (2 * math.pi) - math.pi


def ndi_attitude_rate(attitude_des, state: VehicleState, gains: ControllerGains) -> np.ndarray:
    phi, theta, _ = state.attitude
    err = np.asarray(attitude_des, dtype=float) - state.attitude
    err[2] = wrap_angle(err[2])
    return euler_rate_matrix_inv(phi, theta) @ (gains.k2 * err)


# ------------------------------------------------------------ dynamic loops

def _clamp_sigma(sigma: np.ndarray, g: float) -> tuple[np.ndarray, bool]:
    s = sigma.copy()
    lim = SIGMA_BALL * g
    horiz = math.hypot(s[0], s[1])
    if horiz > lim:
        s[0] *= lim / horiz
        s[1] *= lim / horiz
        return s, True
    return s, False


def ndi_translational(vel_des, state: VehicleState, gains: ControllerGains,
                      params: VehicleParams) -> TranslationalCommand:
    """Invert the translational force model for pitch, roll and thrust."""
    x1, x3 = state.velocity, state.rates
    sigma = gains.k1 * (np.asarray(vel_des, dtype=float) - x1) + _cross(x3, x1)
    sigma, clamped = _clamp_sigma(sigma, params.g)
    g = params.g
    s1, s2, s3 = sigma
    theta = -math.asin(s1 / g)
    phi = math.asin(s2 / math.sqrt(g * g - s1 * s1))
    tz = params.mass * (s3 - math.sqrt(g * g - s1 * s1 - s2 * s2))
    return TranslationalCommand(theta, phi, tz, clamped)


def control_effectiveness(theta: float, phi: float, params: VehicleParams) -> np.ndarray:
    """Jacobian of body acceleration with respect to (theta, phi, T_z)."""
    g = params.g
    ct, st = math.cos(theta), math.sin(theta)
    cf, sf = math.cos(phi), math.sin(phi)
    return np.array([
        [-g * ct, 0.0, 0.0],
        [-g * sf * st, g * cf * ct, 0.0],
        [-g * cf * st, -g * sf * ct, 1.0 / params.mass],
    ])


def _solve_lower(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # g1 is lower triangular: forward substitution
    x0 = b[0] / a[0, 0]
    x1 = (b[1] - a[1, 0] * x0) / a[1, 1]
    x2 = (b[2] - a[2, 0] * x0 - a[2, 1] * x1) / a[2, 2]
    return np.array([x0, x1, x2])


def indi_translational(vel_des, state: VehicleState, accel_meas, memory: ControllerMemory,
                       gains: ControllerGains, params: VehicleParams,
                       measured_attitude: bool = False):
    """Incremental translational law.

    The increment is linearised about ``memory.u1``; with
    ``measured_attitude`` the pitch and roll of that base point are replaced
    by the measured attitude (thrust still comes from memory).
    Returns ``(u1_des, new_memory)``.
    """
    base = memory.u1.copy()
    if measured_attitude:
        base[0], base[1] = state.attitude[1], state.attitude[0]
    theta, phi = base[0], base[1]
    if not (abs(theta) < math.pi / 2 and abs(phi) < math.pi / 2):
        raise SingularAttitudeError("control effectiveness is singular at this attitude")
    g1 = control_effectiveness(theta, phi, params)
    resid = gains.k1 * (np.asarray(vel_des, dtype=float) - state.velocity) - np.asarray(accel_meas, dtype=float)
    du = _solve_lower(g1, resid)
    u1_des = base + du
    return u1_des, replace(memory, u1=u1_des)


def ndi_rotational(rate_des, state: VehicleState, gains: ControllerGains,
                   params: VehicleParams) -> np.ndarray:
    x3 = state.rates
    I = params.inertia
    return I @ (gains.k3 * (np.asarray(rate_des, dtype=float) - x3)) + _cross(x3, I @ x3)


def _moment_increment(rate_des, state, rate_dot, gains, params) -> np.ndarray:
    return params.inertia @ (gains.k3 * (np.asarray(rate_des, dtype=float) - state.rates)
                             - np.asarray(rate_dot, dtype=float))


def _push_history(memory: ControllerMemory, m_des: np.ndarray) -> tuple:
    if not memory.history:
        return ()
    return memory.history[1:] + (m_des,)


def indi_rotational(rate_des, state: VehicleState, rate_dot_meas, memory: ControllerMemory,
                    gains: ControllerGains, params: VehicleParams):
    """Plain incremental moment law: M_des = M_T + dM."""
    m_des = memory.m_t + _moment_increment(rate_des, state, rate_dot_meas, gains, params)
    return m_des, replace(memory, m_t=m_des, history=_push_history(memory, m_des))


def indi_rotational_igm(rate_des, state: VehicleState, rate_dot_meas, memory: ControllerMemory,
                        gains: ControllerGains, params: VehicleParams):
    """Incremental moment law with the increment scaled by ``k_delta3``."""
    m_des = memory.m_t + gains.k_delta3 * _moment_increment(rate_des, state, rate_dot_meas, gains, params)
    return m_des, replace(memory, m_t=m_des, history=_push_history(memory, m_des))


def indi_rotational_active_delay(rate_des, state: VehicleState, rate_dot_delayed,
                                 memory: ControllerMemory, gains: ControllerGains,
                                 params: VehicleParams):
    """Incremental moment law referenced to the moment commanded tau ago.

    ``memory.history`` must hold ``delay_steps + 1`` moments; it is
    pre-filled with the hover trim, so the first ``tau`` seconds use trim.
    """
    if not memory.history:
        raise ValueError("active-delay law needs a moment history (delay_steps >= 0)")
    m_old = memory.history[0]
    m_des = m_old + _moment_increment(rate_des, state, rate_dot_delayed, gains, params)
    return m_des, replace(memory, m_t=m_des, history=_push_history(memory, m_des))


# ----------------------------------------------------------------- allocation

def allocate(thrust_z_des: float, moment_des, params: VehicleParams) -> tuple[ActuatorCommand, bool]:
    """Rotor speeds and tilt realising (T_z, M_T) under the small-tilt model.

    Returns the clamped command and a flag that is True when any limit or
    the omega**2 >= 0 constraint was active.
    """
    l_t, m_t, n_t = (float(x) for x in moment_des)
    d_cx = m_t / params.k_m
    d_cy = l_t / params.k_l
    thrust = max(-float(thrust_z_des), 0.0)
    infeasible = thrust_z_des > 0
    s = params.sigma_loss
    a11, a12 = s * params.lam1, s * params.lam2_0
    a21, a22 = params.zeta1, -params.zeta2
    det = a11 * a22 - a12 * a21
    w1sq = (thrust * a22 - a12 * n_t) / det
    w2sq = (a11 * n_t - a21 * thrust) / det
    if w1sq < 0 or w2sq < 0:
        infeasible = True
    cmd = ActuatorCommand(math.sqrt(max(w1sq, 0.0)), math.sqrt(max(w2sq, 0.0)), d_cx, d_cy)
    cmd, sat = cmd.clamped(params)
    return cmd, bool(sat or infeasible)


# ------------------------------------------------------------------- cascade

class ControlOutput(NamedTuple):
    velocity_des: np.ndarray
    u1_des: np.ndarray  # (theta, phi, T_z)
    attitude_des: np.ndarray
    rate_des: np.ndarray
    moment_des: np.ndarray
    clamped: bool


class CascadedController:
    """Stateful wrapper running one control period of the four-loop cascade.

    ``delay_steps`` is the active-delay length for ``indi_active_delay``.
    ``max_tilt`` bounds commanded roll and pitch (rad). ``measured_attitude``
    selects the linearisation point of the translational INDI law.
    """

    def __init__(self, variant: str, gains: ControllerGains, params: VehicleParams,
                 delay_steps: int = 0, max_tilt: float = 0.6, measured_attitude: bool = True):
        if variant not in VARIANTS:
            raise ValueError(f"unknown controller variant {variant!r}")
        self.variant = variant
        self.gains = gains
        self.params = params
        self.max_tilt = max_tilt
        self.measured_attitude = measured_attitude
        self.memory = ControllerMemory.hover_trim(params, delay_steps if variant == "indi_active_delay" else 0)

    def step(self, setpoint: ControlSetpoint, state: VehicleState, accel_meas=None,
             rate_dot_meas=None) -> ControlOutput:
        g, p = self.gains, self.params
        vel_des = ndi_outer_velocity(setpoint, state, g)
        hold = setpoint.mode == "attitude"
        phi_ref, theta_ref = setpoint.attitude
        clamped = False
        if self.variant == "ndi":
            tc = ndi_translational(vel_des, state, g, p)
            clamped = tc.clamped
            if hold:
                sigma3 = g.k1[2] * (vel_des[2] - state.velocity[2]) + _cross(state.rates, state.velocity)[2]
                u1 = np.array([theta_ref, phi_ref, p.mass * (sigma3 - p.g)])
            else:
                u1 = np.array([tc.theta, tc.phi, tc.thrust_z])
        else:
            prev = self.memory.u1
            u1, self.memory = indi_translational(vel_des, state, accel_meas, self.memory, g, p,
                                                 measured_attitude=self.measured_attitude)
            if hold:
                if self.measured_attitude:
                    b_theta, b_phi = state.attitude[1], state.attitude[0]
                else:
                    b_theta, b_phi = prev[0], prev[1]
                g1 = control_effectiveness(b_theta, b_phi, p)
                r = g.k1 * (vel_des - state.velocity) - np.asarray(accel_meas, dtype=float)
                dtz = p.mass * (r[2] - g1[2, 0] * (theta_ref - b_theta) - g1[2, 1] * (phi_ref - b_phi))
                u1 = np.array([theta_ref, phi_ref, prev[2] + dtz])
        lim = self.max_tilt
        if abs(u1[0]) > lim or abs(u1[1]) > lim:
            u1[0] = min(max(u1[0], -lim), lim)
            u1[1] = min(max(u1[1], -lim), lim)
            clamped = True
        if u1[2] > 0:
            u1[2] = 0.0
            clamped = True
        if self.variant != "ndi":
            self.memory = replace(self.memory, u1=u1)

        att_des = np.array([u1[1], u1[0], setpoint.yaw])
        rate_des = ndi_attitude_rate(att_des, state, g)
        if self.variant == "ndi":
            m_des = ndi_rotational(rate_des, state, g, p)
        elif self.variant == "indi_igm":
            m_des, self.memory = indi_rotational_igm(rate_des, state, rate_dot_meas, self.memory, g, p)
        else:
            m_des, self.memory = indi_rotational_active_delay(rate_des, state, rate_dot_meas,
                                                              self.memory, g, p)
        return ControlOutput(vel_des, u1, att_des, rate_des, m_des, clamped)
