import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coaxindi import dynamics as dyn
from coaxindi.dynamics import ActuatorCommand, Environment, VehicleParams, VehicleState

P = VehicleParams()
angle = st.floats(-1.4, 1.4)
yaw = st.floats(-math.pi, math.pi)


def hover_state(alt=2.0):
    return VehicleState(position=[0, 0, -alt])


def hover_cmd(p=P):
    return ActuatorCommand(p.hover_omega, p.hover_omega, 0.0, 0.0)


def gravity_body(phi, theta, g=dyn.GRAVITY):
    L = dyn.rotation_gb([phi, theta, 0.0])
    return L.T @ np.array([0.0, 0.0, g])


@given(angle, angle, yaw)
def test_rotation_is_orthonormal(phi, theta, psi):
    L = dyn.rotation_gb([phi, theta, psi])
    assert np.max(np.abs(L.T @ L - np.eye(3))) <= 1e-10
    assert abs(np.linalg.det(L) - 1.0) <= 1e-10


@given(angle, angle, yaw)
def test_rotation_matches_elementary_composition(phi, theta, psi):
    def rx(a):
        c, s = math.cos(a), math.sin(a)
        return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])

    def ry(a):
        c, s = math.cos(a), math.sin(a)
        return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])

    def rz(a):
        c, s = math.cos(a), math.sin(a)
        return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])

    expected = rz(psi) @ ry(theta) @ rx(phi)
    np.testing.assert_allclose(dyn.rotation_gb([phi, theta, psi]), expected, atol=1e-12)


@given(angle, angle)
def test_euler_rate_inverse(phi, theta):
    R = dyn.euler_rate_matrix(phi, theta)
    np.testing.assert_allclose(R @ dyn.euler_rate_matrix_inv(phi, theta), np.eye(3), atol=1e-9)


def test_euler_rate_matrix_level_is_identity():
    np.testing.assert_allclose(dyn.euler_rate_matrix(0.0, 0.0), np.eye(3))


@pytest.mark.parametrize("theta", [math.pi / 2, -math.pi / 2, math.pi / 2 - 1e-7])
def test_singular_pitch_raises(theta):
    with pytest.raises(dyn.SingularAttitudeError):
        dyn.euler_rate_matrix(0.0, theta)
    with pytest.raises(dyn.SingularAttitudeError):
        dyn.state_derivative(VehicleState(attitude=[0, theta, 0]), hover_cmd(), Environment(), P)


def test_hover_thrust_equals_weight():
    t = dyn.rotor_thrust(hover_cmd(), P)
    assert t[0] == 0 and t[1] == 0
    assert t[2] == pytest.approx(-P.mass * P.g, rel=1e-12)


def test_tilt_reduces_lower_rotor_thrust_only():
    w = P.hover_omega
    tilted = dyn.rotor_thrust(ActuatorCommand(w, w, 0.05, 0.0), P)[2]
    # upper rotor unchanged, lower rotor scaled by cos(0.05)
    expected = -P.sigma_loss * (P.lam1 * w**2 + P.lam2_0 * math.cos(0.05) * w**2)
    assert tilted == pytest.approx(expected, rel=1e-12)
    assert abs(tilted) < P.mass * P.g


def test_rotor_moment_balanced_and_linear():
    w = P.hover_omega
    np.testing.assert_array_equal(dyn.rotor_moment(ActuatorCommand(w, w, 0, 0), P), 0.0)
    m = dyn.rotor_moment(ActuatorCommand(w, w, 0.02, -0.01), P)
    np.testing.assert_allclose(m, [P.k_l * -0.01, P.k_m * 0.02, 0.0])
    m = dyn.rotor_moment(ActuatorCommand(1.1 * w, w, 0, 0), P)
    assert m[2] == pytest.approx(P.zeta1 * (1.1 * w) ** 2 - P.zeta2 * w**2)


def test_swashplate_offset_adds_to_command():
    p = VehicleParams(swashplate_offset=(0.01, -0.02))
    m = dyn.rotor_moment(ActuatorCommand(100, 100, 0, 0), p)
    assert m[0] == pytest.approx(p.k_l * -0.02)
    assert m[1] == pytest.approx(p.k_m * 0.01)


def test_hover_is_equilibrium():
    d = dyn.state_derivative(hover_state(), hover_cmd(), Environment(), P)
    np.testing.assert_allclose(d.as_vector(), 0.0, atol=1e-12)


def test_hover_is_rk4_fixed_point():
    s = hover_state()
    for dt in (0.0025, 0.01):
        x = s
        for _ in range(100):
            nxt = dyn.step_rk4(x, hover_cmd(), Environment(), P, dt)
            assert np.max(np.abs(nxt.as_vector() - x.as_vector())) <= 1e-10
            x = nxt


states = st.tuples(*[st.floats(-3, 3)] * 6, angle, angle, yaw, *[st.floats(-2, 2)] * 3)


@settings(max_examples=60)
@given(states, st.floats(0, 1500), st.floats(0, 1500), st.floats(-0.15, 0.15), st.floats(-0.15, 0.15),
       st.floats(-5, 5))
def test_derivative_matches_matrix_form(s, w1, w2, dx, dy, wind_x):
    # independent matrix-form evaluation of the equations of motion
    state = VehicleState.from_vector(s)
    cmd = ActuatorCommand(w1, w2, dx, dy)
    env = Environment(wind=[wind_x, 1.0, 0.0], disturbance_force=[0.1, 0, -0.2],
                      disturbance_moment=[1e-3, 0, 0], drag_coeff=0.07)
    d = dyn.state_derivative(state, cmd, env, P)
    L = dyn.rotation_gb(state.attitude)
    x1, x3 = state.velocity, state.rates
    A = -env.drag_coeff * (x1 - L.T @ env.wind)
    F = A + L.T @ np.array([0, 0, P.mass * P.g]) + dyn.rotor_thrust(cmd, P) + env.disturbance_force
    M = dyn.rotor_moment(cmd, P) + env.disturbance_moment
    I = P.inertia
    np.testing.assert_allclose(d.position, L @ x1, atol=1e-9)
    np.testing.assert_allclose(d.velocity, F / P.mass - np.cross(x3, x1), atol=1e-9)
    np.testing.assert_allclose(d.attitude, dyn.euler_rate_matrix(*state.attitude[:2]) @ x3, atol=1e-9)
    np.testing.assert_allclose(d.rates, np.linalg.solve(I, M - np.cross(x3, I @ x3)), atol=1e-7)


def test_free_fall_is_exact():
    p = VehicleParams()
    env = Environment(drag_coeff=0.0)
    x = VehicleState(position=[0, 0, -10.0], velocity=[1.0, 0, 0])
    for _ in range(400):
        x = dyn.step_rk4(x, ActuatorCommand(), env, p, 0.0025)
    assert abs(x.position[2] - (-10.0 + 0.5 * p.g)) <= 1e-6
    assert abs(x.position[0] - 1.0) <= 1e-6
    assert x.velocity[2] == pytest.approx(p.g, abs=1e-9)


def _maneuver(dt, t_end=1.0):
    cmd = ActuatorCommand(P.hover_omega * 1.02, P.hover_omega * 0.99, 0.01, -0.008)
    env = Environment(wind=[2.0, -1.0, 0.0])
    x = VehicleState(position=[0, 0, -2], velocity=[1, 0.5, 0], attitude=[0.1, -0.05, 0.3], rates=[0.4, -0.3, 0.5])
    for _ in range(int(round(t_end / dt))):
        x = dyn.step_rk4(x, cmd, env, P, dt)
    return x.as_vector()


def test_rk4_observed_order():
    ref = _maneuver(0.02 / 64)
    errs = [np.max(np.abs(_maneuver(dt) - ref)) for dt in (0.02, 0.01, 0.005)]
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert min(orders) >= 3.8, orders


def test_pure_roll_rate_integrates_linearly():
    env = Environment(drag_coeff=0.0)
    x = VehicleState(rates=[1.0, 0, 0])
    cmd = ActuatorCommand()  # free fall, no moment
    for _ in range(100):
        x = dyn.step_rk4(x, cmd, env, P, 0.01)
    assert x.attitude[0] == pytest.approx(1.0, abs=1e-12)


def test_divergence_raises():
    x = VehicleState(position=[2e6, 0, 0])
    with pytest.raises(dyn.DivergenceError):
        dyn.step_rk4(x, hover_cmd(), Environment(), P, 0.01)


def test_clamp_and_flag():
    cmd, flag = ActuatorCommand(3000, -5, 0.2, -0.3).clamped(P)
    assert flag
    assert (cmd.omega1, cmd.omega2, cmd.delta_cx, cmd.delta_cy) == (P.omega_max, 0.0, P.delta_max, -P.delta_max)
    cmd, flag = ActuatorCommand(100, 100, 0.01, 0.0).clamped(P)
    assert not flag


@pytest.mark.parametrize("bad", [dict(mass=0), dict(inertia=np.diag([1, -1, 1])), dict(sigma_loss=1.5),
                                 dict(inertia=[[1, 0.5, 0], [0, 1, 0], [0, 0, 1]])])
def test_params_validation(bad):
    with pytest.raises(ValueError):
        VehicleParams(**bad)


def test_state_vector_round_trip():
    v = np.arange(12.0)
    np.testing.assert_array_equal(VehicleState.from_vector(v).as_vector(), v)
