"""Dynamics and kinematics checks against independent numerical oracles.

The mass matrix is assembled from Jacobians while the kinetic energy is
computed by a separate velocity recursion, so the identity T = 0.5 qd' M qd
cross-validates both. Bias forces are checked against a finite-difference
Euler-Lagrange evaluation that never touches the production Coriolis code.
"""

import dataclasses
import math

import numpy as np
import pytest

from wbic import model as mdl


def random_states(robot, n, seed):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        q = rng.uniform(-1.2, 1.2, robot.n)
        qd = rng.uniform(-2.0, 2.0, robot.n)
        yield q, qd


ROBOTS = {
    "balancing": mdl.balancing_manipulator(),
    "two_link": mdl.two_link_arm(),
    "pendulum": mdl.point_mass_pendulum(),
}


@pytest.fixture(params=sorted(ROBOTS))
def robot(request):
    return ROBOTS[request.param]


# ---------------------------------------------------------------------------
# Mass matrix
# ---------------------------------------------------------------------------


def test_mass_matrix_symmetric_positive_definite(robot):
    for q, _ in random_states(robot, 50, seed=1):
        M = mdl.mass_matrix(robot, q)
        assert np.allclose(M, M.T, atol=1e-12)
        eigvals = np.linalg.eigvalsh(M)
        assert eigvals.min() > 0.0


def test_kinetic_energy_matches_mass_matrix(robot):
    # T from the per-link velocity recursion vs 0.5 qd' M qd from the
    # Jacobian-assembled mass matrix.
    for q, qd in random_states(robot, 50, seed=2):
        T_rec = mdl.kinetic_energy(robot, q, qd)
        T_mat = 0.5 * qd @ mdl.mass_matrix(robot, q) @ qd
        assert T_rec == pytest.approx(T_mat, abs=1e-11, rel=1e-11)


def test_pendulum_mass_matrix_analytic():
    robot = mdl.point_mass_pendulum(mass=1.3, length=0.7)
    for q in (-2.0, -0.5, 0.0, 1.1, 3.0):
        M = mdl.mass_matrix(robot, [q])
        assert M[0, 0] == pytest.approx(1.3 * 0.7**2, rel=1e-14)


# ---------------------------------------------------------------------------
# Bias forces via a numerical Euler-Lagrange oracle
# ---------------------------------------------------------------------------


def numerical_bias(robot, q, qd, h=1e-6):
    """Coriolis + gravity from energies only: Mdot qd - dT/dq + dV/dq."""
    n = robot.n
    Mdot = np.zeros((n, n))
    dT_dq = np.zeros(n)
    dV_dq = np.zeros(n)
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        Mdot += (mdl.mass_matrix(robot, q + e) - mdl.mass_matrix(robot, q - e)) / (
            2 * h
        ) * qd[k]
        dT_dq[k] = (
            mdl.kinetic_energy(robot, q + e, qd) - mdl.kinetic_energy(robot, q - e, qd)
        ) / (2 * h)
        dV_dq[k] = (
            mdl.potential_energy(robot, q + e) - mdl.potential_energy(robot, q - e)
        ) / (2 * h)
    return Mdot @ qd - dT_dq + dV_dq + np.asarray(robot.viscous) * qd


def test_bias_terms_match_euler_lagrange(robot):
    for q, qd in random_states(robot, 25, seed=3):
        b = mdl.bias_terms(robot, q, qd)
        b_num = numerical_bias(robot, q, qd)
        assert np.allclose(b, b_num, atol=5e-6), (b, b_num)


def test_gravity_vector_is_zero_velocity_bias(robot):
    for q, _ in random_states(robot, 10, seed=4):
        g = mdl.gravity_vector(robot, q)
        b0 = mdl.bias_terms(robot, q, np.zeros(robot.n))
        assert np.allclose(g, b0, atol=1e-13)


def test_pendulum_gravity_analytic():
    robot = mdl.point_mass_pendulum(mass=1.3, length=0.7, gravity=9.81)
    for q in (-1.2, 0.0, 0.8, 2.5):
        g = mdl.gravity_vector(robot, [q])
        assert g[0] == pytest.approx(1.3 * 9.81 * 0.7 * math.cos(q), rel=1e-12)


# ---------------------------------------------------------------------------
# Kinematics
# ---------------------------------------------------------------------------


def test_ee_jacobian_matches_central_difference(robot):
    h = 1e-7
    for q, _ in random_states(robot, 25, seed=5):
        J = mdl.ee_jacobian(robot, q)
        J_num = np.zeros_like(J)
        for k in range(robot.n):
            e = np.zeros(robot.n)
            e[k] = h
            pp = mdl.ee_kinematics(robot, q + e).position
            pm = mdl.ee_kinematics(robot, q - e).position
            J_num[:, k] = (pp - pm) / (2 * h)
        assert np.allclose(J, J_num, atol=1e-6)


def test_ee_drift_acceleration_matches_jacobian_difference(robot):
    # dJ/dt qd == ((J(q + h qd) - J(q - h qd)) / 2h) qd
    h = 1e-7
    for q, qd in random_states(robot, 25, seed=6):
        drift = mdl.ee_drift_acceleration(robot, q, qd)
        Jp = mdl.ee_jacobian(robot, q + h * qd)
        Jm = mdl.ee_jacobian(robot, q - h * qd)
        drift_num = (Jp - Jm) / (2 * h) @ qd
        assert np.allclose(drift, drift_num, atol=1e-5)


def test_kinetic_energy_gradient_matches_central_difference(robot):
    h = 1e-6
    for q, qd in random_states(robot, 15, seed=7):
        grad = mdl.kinetic_energy_gradient(robot, q, qd)
        num = np.zeros(robot.n)
        for k in range(robot.n):
            e = np.zeros(robot.n)
            e[k] = h
            num[k] = (
                mdl.kinetic_energy(robot, q + e, qd)
                - mdl.kinetic_energy(robot, q - e, qd)
            ) / (2 * h)
        assert np.allclose(grad, num, atol=1e-6)


def test_balancing_manipulator_home_pose():
    robot = mdl.balancing_manipulator()
    pose = mdl.ee_kinematics(robot, np.zeros(4))
    # Upright body, arm stretched horizontally: shoulder height, full reach.
    assert pose.position[1] == pytest.approx(0.2 + 0.85, abs=1e-12)
    assert pose.position[0] == pytest.approx(0.5 + 0.45, abs=1e-12)
    assert pose.orientation == pytest.approx(0.0, abs=1e-12)


def test_base_translation_moves_ee_in_x():
    robot = mdl.balancing_manipulator()
    q = np.array([0.7, 0.1, -0.4, 0.8])
    p0 = mdl.ee_kinematics(robot, q).position
    q2 = q.copy()
    q2[0] += 0.3
    p1 = mdl.ee_kinematics(robot, q2).position
    assert p1[0] - p0[0] == pytest.approx(0.3, abs=1e-12)
    assert p1[1] == pytest.approx(p0[1], abs=1e-12)


def test_wrap_angle():
    assert mdl.wrap_angle(0.0) == 0.0
    assert mdl.wrap_angle(math.pi) == pytest.approx(math.pi)
    assert mdl.wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert mdl.wrap_angle(3 * math.pi + 0.1) == pytest.approx(-math.pi + 0.1)
    assert mdl.wrap_angle(-5.5 * math.pi) == pytest.approx(0.5 * math.pi)


# ---------------------------------------------------------------------------
# Forward dynamics
# ---------------------------------------------------------------------------


def test_forward_dynamics_balance(robot):
    rng = np.random.default_rng(8)
    for q, qd in random_states(robot, 20, seed=9):
        tau = rng.uniform(-5.0, 5.0, robot.m_act)
        f = rng.uniform(-10.0, 10.0, 2)
        qdd = mdl.forward_dynamics(
            robot, mdl.RobotState(q, qd), mdl.ControlInput(tau), f_ext_ee=f
        )
        lhs = mdl.mass_matrix(robot, q) @ qdd + mdl.bias_terms(robot, q, qd)
        rhs = robot.S.T @ tau - mdl.ee_jacobian(robot, q).T @ f
        assert np.allclose(lhs, rhs, atol=1e-9)


def test_condition_number_guard():
    robot = dataclasses.replace(mdl.two_link_arm(), cond_bound=1.0)
    state = mdl.RobotState(np.zeros(2), np.zeros(2))
    with pytest.raises(mdl.SingularMassMatrixError):
        mdl.forward_dynamics(robot, state, mdl.ControlInput(np.zeros(2)))


def test_equilibrium_configuration_balances_pitch():
    robot = mdl.balancing_manipulator()
    for arm in ([-0.5, 1.0], [0.3, 0.4], [-1.1, 2.0]):
        q = mdl.equilibrium_configuration(robot, [0.0, 0.0, *arm])
        # Actuated coordinates untouched, unactuated gravity load zeroed.
        assert q[0] == 0.0
        assert q[2:] == pytest.approx(arm)
        assert abs(mdl.gravity_vector(robot, q)[1]) < 1e-10
        # Resting there with the static torque produces no acceleration.
        tau = np.linalg.lstsq(
            robot.S.T, mdl.gravity_vector(robot, q), rcond=None
        )[0]
        qdd = mdl.forward_dynamics(
            robot, mdl.RobotState(q, np.zeros(4)), mdl.ControlInput(tau)
        )
        assert np.abs(qdd).max() < 1e-9


def test_equilibrium_configuration_fully_actuated_noop():
    robot = mdl.two_link_arm()
    q = mdl.equilibrium_configuration(robot, [0.7, -0.2])
    assert q == pytest.approx([0.7, -0.2])


def _rk4_passive(robot, q0, qd0, dt, steps):
    def f(x):
        n = robot.n
        state = mdl.RobotState(x[:n], x[n:])
        qdd = mdl.forward_dynamics(
            robot, state, mdl.ControlInput(np.zeros(robot.m_act))
        )
        return np.concatenate([x[n:], qdd])

    x = np.concatenate([q0, qd0])
    for _ in range(steps):
        k1 = f(x)
        k2 = f(x + 0.5 * dt * k1)
        k3 = f(x + 0.5 * dt * k2)
        k4 = f(x + dt * k3)
        x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


@pytest.mark.parametrize(
    "factory,q0",
    [
        (mdl.two_link_arm, np.array([0.4, -0.3])),
        (mdl.balancing_manipulator, np.array([0.0, 0.08, -0.5, 0.9])),
    ],
)
def test_passive_energy_conservation(factory, q0):
    robot = factory(viscous=(0.0,) * len(q0))
    qd0 = np.zeros(len(q0))
    e0 = mdl.total_energy(robot, mdl.RobotState(q0, qd0))
    dt, horizon = 2.5e-4, 10.0
    x = _rk4_passive(robot, q0, qd0, dt, int(round(horizon / dt)))
    n = robot.n
    e1 = mdl.total_energy(robot, mdl.RobotState(x[:n], x[n:]))
    assert abs(e1 - e0) < 1e-5


# ---------------------------------------------------------------------------
# Model construction
# ---------------------------------------------------------------------------


def test_state_and_input_validation():
    with pytest.raises(ValueError):
        mdl.RobotState(np.zeros(2), np.zeros(3))
    with pytest.raises(ValueError):
        mdl.RobotState(np.array([np.nan, 0.0]), np.zeros(2))
    with pytest.raises(ValueError):
        mdl.ControlInput(np.array([np.inf]))
    with pytest.raises(ValueError):
        mdl.JointSpec("helical")
    with pytest.raises(ValueError):
        mdl.JointSpec("prismatic", axis=(2.0, 0.0))
    with pytest.raises(ValueError):
        mdl.LinkSpec(-1.0, (0.0, 0.0), 0.1)


def test_selection_matrix():
    robot = mdl.balancing_manipulator()
    S = robot.S
    assert S.shape == (3, 4)
    # The pitch coordinate carries no actuator.
    assert np.allclose(S[:, 1], 0.0)
    assert np.allclose(S @ S.T, np.eye(3))


def test_model_from_config_preset_roundtrip():
    cfg = {"preset": "two_link_arm", "m2": 1.25, "gravity": 9.0}
    robot = mdl.model_from_config(cfg)
    assert robot.links[1].mass == 1.25
    assert robot.gravity == 9.0


def test_model_from_config_explicit():
    cfg = {
        "joints": [{"kind": "revolute", "offset": [0.0, 0.0]}],
        "links": [{"mass": 2.0, "com": [0.5, 0.0], "inertia": 0.1}],
        "ee_offset": [1.0, 0.0],
        "actuated": [0],
        "tau_max": [10.0],
    }
    robot = mdl.model_from_config(cfg)
    assert robot.n == 1
    M = mdl.mass_matrix(robot, [0.3])
    assert M[0, 0] == pytest.approx(2.0 * 0.25 + 0.1, rel=1e-12)
