"""Rigid-body 6-DOF model of a coaxial-rotor UAV.

Frames: ground frame is north-east-down, body frame is x-forward, y-right,
z-down. Rotor thrust acts along -z_b, so hover thrust is negative.

The state is carried as a flat 12-vector ``[x, y, z, u, v, w, phi, theta,
psi, p, q, r]`` inside the integrator; :class:`VehicleState` is the
structured view of the same numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

GRAVITY = 9.81
SINGULARITY_MARGIN = 1e-6  # rad, distance from theta = +-pi/2
DIVERGENCE_LIMIT = 1e6


class SingularAttitudeError(ValueError):
    """Pitch angle too close to +-90 deg for the Euler-angle model."""


class DivergenceError(RuntimeError):
    """A state component left the finite, bounded region."""


def _as3(v) -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(3)
    return a


@dataclass(frozen=True, eq=False)
class VehicleParams:
    """Physical constants of the vehicle and its actuator limits.

    ``swashplate_offset`` is a plant-only installation error (delta_cx0,
    delta_cy0) in rad added to the commanded tilt; the controllers never
    read it.
    """

    mass: float = 0.50
    inertia: np.ndarray = field(default_factory=lambda: np.diag([2.5e-3, 2.5e-3, 1.5e-3]))
    g: float = GRAVITY
    sigma_loss: float = 0.85
    lam1: float = 2.0e-6
    lam2_0: float = 2.0e-6
    zeta1: float = 4.0e-8
    zeta2: float = 4.0e-8
    k_l: float = 1.2
    k_m: float = 1.2
    delta_max: float = 0.15
    omega_max: float = 2500.0
    swashplate_offset: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        inertia = np.array(self.inertia, dtype=float).reshape(3, 3)
        object.__setattr__(self, "inertia", inertia)
        object.__setattr__(self, "swashplate_offset", tuple(float(x) for x in self.swashplate_offset))
        if not self.mass > 0:
            raise ValueError("mass must be positive")
        if not np.allclose(inertia, inertia.T):
            raise ValueError("inertia must be symmetric")
        if np.any(np.linalg.eigvalsh(inertia) <= 0):
            raise ValueError("inertia must be positive definite")
        if not 0 < self.sigma_loss <= 1:
            raise ValueError("sigma_loss must lie in (0, 1]")
        for name in ("lam1", "lam2_0", "zeta1", "zeta2", "k_l", "k_m", "g", "delta_max", "omega_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        object.__setattr__(self, "_inertia_inv", np.linalg.inv(inertia))
        object.__setattr__(self, "_I", tuple(map(tuple, inertia.tolist())))
        object.__setattr__(self, "_Iinv", tuple(map(tuple, self._inertia_inv.tolist())))

    @property
    def inertia_inv(self) -> np.ndarray:
        return self._inertia_inv

    @property
    def hover_omega(self) -> float:
        """Common rotor speed giving thrust m*g at zero tilt."""
        return math.sqrt(self.mass * self.g / (self.sigma_loss * (self.lam1 + self.lam2_0)))


@dataclass(frozen=True)
class ActuatorCommand:
    omega1: float = 0.0
    omega2: float = 0.0
    delta_cx: float = 0.0
    delta_cy: float = 0.0

    def clamped(self, params: VehicleParams) -> tuple[ActuatorCommand, bool]:
        """Clip to the saturation box; the flag is True if anything moved."""
        dm, wm = params.delta_max, params.omega_max
        w1 = min(max(self.omega1, 0.0), wm)
        w2 = min(max(self.omega2, 0.0), wm)
        dx = min(max(self.delta_cx, -dm), dm)
        dy = min(max(self.delta_cy, -dm), dm)
        out = ActuatorCommand(w1, w2, dx, dy)
        return out, out != self


@dataclass(frozen=True, eq=False)
class Environment:
    wind: np.ndarray = field(default_factory=lambda: np.zeros(3))
    disturbance_force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    disturbance_moment: np.ndarray = field(default_factory=lambda: np.zeros(3))
    drag_coeff: float = 0.05

    def __post_init__(self):
        for name in ("wind", "disturbance_force", "disturbance_moment"):
            v = _as3(getattr(self, name))
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, v)


@dataclass(frozen=True, eq=False)
class VehicleState:
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    attitude: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rates: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name in ("position", "velocity", "attitude", "rates"):
            object.__setattr__(self, name, _as3(getattr(self, name)))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity, self.attitude, self.rates])

    @classmethod
    def from_vector(cls, x) -> VehicleState:
        x = np.asarray(x, dtype=float)
        return cls(x[0:3], x[3:6], x[6:9], x[9:12])


def _check_theta(theta: float) -> None:
    if not abs(theta) < math.pi / 2 - SINGULARITY_MARGIN:
        raise SingularAttitudeError(f"pitch {theta!r} rad is at the Euler singularity")


def rotation_gb(attitude) -> np.ndarray:
    """Body-to-ground rotation matrix for Euler angles (phi, theta, psi)."""
    phi, theta, psi = (float(a) for a in attitude)
    _check_theta(theta)
    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(theta), math.sin(theta)
    cp, sp = math.cos(psi), math.sin(psi)
    return np.array([
        [ct * cp, st * sf * cp - cf * sp, st * cf * cp + sf * sp],
        [ct * sp, st * sf * sp + cf * cp, st * cf * sp - sf * cp],
        [-st, sf * ct, cf * ct],
    ])


def euler_rate_matrix(phi: float, theta: float) -> np.ndarray:
    """Matrix mapping body rates (p, q, r) to Euler-angle rates."""
    _check_theta(theta)
    cf, sf = math.cos(phi), math.sin(phi)
    ct, tt = math.cos(theta), math.tan(theta)
    return np.array([
        [1.0, sf * tt, cf * tt],
        [0.0, cf, -sf],
        [0.0, sf / ct, cf / ct],
    ])


def euler_rate_matrix_inv(phi: float, theta: float) -> np.ndarray:
    """Matrix mapping Euler-angle rates to body rates."""
    _check_theta(theta)
    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(theta), math.sin(theta)
    return np.array([
        [1.0, 0.0, -st],
        [0.0, cf, sf * ct],
        [0.0, -sf, cf * ct],
    ])


def lower_lift_coeff(delta_cx: float, delta_cy: float, params: VehicleParams) -> float:
    return params.lam2_0 * math.cos(delta_cx) * math.cos(delta_cy)


def _tilt(cmd: ActuatorCommand, params: VehicleParams) -> tuple[float, float]:
    ox, oy = params.swashplate_offset
    return cmd.delta_cx + ox, cmd.delta_cy + oy


def rotor_thrust(cmd: ActuatorCommand, params: VehicleParams) -> np.ndarray:
    """Body-frame rotor thrust; only the z component is ever nonzero."""
    dx, dy = _tilt(cmd, params)
    lam2 = lower_lift_coeff(dx, dy, params)
    tz = params.sigma_loss * (params.lam1 * cmd.omega1**2 + lam2 * cmd.omega2**2)
    return np.array([0.0, 0.0, -tz])


def rotor_moment(cmd: ActuatorCommand, params: VehicleParams) -> np.ndarray:
    """Body-frame control moment (l_T, m_T, n_T)."""
    dx, dy = _tilt(cmd, params)
    return np.array([
        params.k_l * dy,
        params.k_m * dx,
        params.zeta1 * cmd.omega1**2 - params.zeta2 * cmd.omega2**2,
    ])


def _deriv(s, tz, mt, env_t, p: VehicleParams):
    """Flat-state derivative. ``tz`` is the (signed) body-z thrust, ``mt`` the
    control moment, ``env_t`` a tuple (wind_g, force_b, moment_b, c_d)."""
    x, y, z, u, v, w, phi, theta, psi, pr, qr, rr = s
    wind, fd, md, cd = env_t
    cf, sf = math.cos(phi), math.sin(phi)
    ct, st = math.cos(theta), math.sin(theta)
    cp, sp = math.cos(psi), math.sin(psi)
    l00, l01, l02 = ct * cp, st * sf * cp - cf * sp, st * cf * cp + sf * sp
    l10, l11, l12 = ct * sp, st * sf * sp + cf * cp, st * cf * sp - sf * cp
    l20, l21, l22 = -st, sf * ct, cf * ct

    m = p.mass
    g = p.g
    # wind in body frame: L^T wind
    wx, wy, wz = wind
    wbx = l00 * wx + l10 * wy + l20 * wz
    wby = l01 * wx + l11 * wy + l21 * wz
    wbz = l02 * wx + l12 * wy + l22 * wz
    fx = -cd * (u - wbx) + m * g * l20 + fd[0]
    fy = -cd * (v - wby) + m * g * l21 + fd[1]
    fz = -cd * (w - wbz) + m * g * l22 + tz + fd[2]

    du = fx / m - (qr * w - rr * v)
    dv = fy / m - (rr * u - pr * w)
    dw = fz / m - (pr * v - qr * u)

    dx = l00 * u + l01 * v + l02 * w
    dy = l10 * u + l11 * v + l12 * w
    dz = l20 * u + l21 * v + l22 * w

    tt = st / ct
    dphi = pr + sf * tt * qr + cf * tt * rr
    dtheta = cf * qr - sf * rr
    dpsi = (sf * qr + cf * rr) / ct

    (i00, i01, i02), (i10, i11, i12), (i20, i21, i22) = p._I
    hx = i00 * pr + i01 * qr + i02 * rr
    hy = i10 * pr + i11 * qr + i12 * rr
    hz = i20 * pr + i21 * qr + i22 * rr
    mx = mt[0] + md[0] - (qr * hz - rr * hy)
    my = mt[1] + md[1] - (rr * hx - pr * hz)
    mz = mt[2] + md[2] - (pr * hy - qr * hx)
    (j00, j01, j02), (j10, j11, j12), (j20, j21, j22) = p._Iinv
    dp = j00 * mx + j01 * my + j02 * mz
    dq = j10 * mx + j11 * my + j12 * mz
    dr = j20 * mx + j21 * my + j22 * mz
    return (dx, dy, dz, du, dv, dw, dphi, dtheta, dpsi, dp, dq, dr)


def _env_tuple(env: Environment):
    return (tuple(env.wind.tolist()), tuple(env.disturbance_force.tolist()),
            tuple(env.disturbance_moment.tolist()), float(env.drag_coeff))


def _actuation(cmd: ActuatorCommand, params: VehicleParams):
    tz = float(rotor_thrust(cmd, params)[2])
    mt = tuple(rotor_moment(cmd, params).tolist())
    return tz, mt


def state_derivative(state: VehicleState, cmd: ActuatorCommand, env: Environment,
                     params: VehicleParams) -> VehicleState:
    """Time derivative of every state component, packed as a VehicleState."""
    _check_theta(float(state.attitude[1]))
    tz, mt = _actuation(cmd, params)
    d = _deriv(tuple(state.as_vector().tolist()), tz, mt, _env_tuple(env), params)
    return VehicleState.from_vector(d)


def _rk4_flat(s, tz, mt, env_t, p, dt):
    k1 = _deriv(s, tz, mt, env_t, p)
    h = 0.5 * dt
    k2 = _deriv([a + h * b for a, b in zip(s, k1)], tz, mt, env_t, p)
    k3 = _deriv([a + h * b for a, b in zip(s, k2)], tz, mt, env_t, p)
    k4 = _deriv([a + dt * b for a, b in zip(s, k3)], tz, mt, env_t, p)
    c = dt / 6.0
    return tuple([a + c * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
                  for a, b1, b2, b3, b4 in zip(s, k1, k2, k3, k4)])


def _check_flat(s) -> None:
    for v in s:
        if not abs(v) <= DIVERGENCE_LIMIT:
            raise DivergenceError(f"state component {v!r} exceeds {DIVERGENCE_LIMIT:g}")
    _check_theta(s[7])


def step_rk4(state: VehicleState, cmd: ActuatorCommand, env: Environment,
             params: VehicleParams, dt: float) -> VehicleState:
    """One classic RK4 step with command and environment held over ``dt``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    s = tuple(state.as_vector().tolist())
    _check_theta(s[7])
    tz, mt = _actuation(cmd, params)
    out = _rk4_flat(s, tz, mt, _env_tuple(env), params, dt)
    _check_flat(out)
    return VehicleState.from_vector(out)
