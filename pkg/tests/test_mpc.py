"""Solver checks against closed-form LQ solutions and first principles.

The double-integrator problem has an exact Riccati solution computed here
independently; the solver must reproduce gains, inputs and cost in one
iteration. Nonlinear problems are checked for monotone cost decrease and
for agreement between the adjoint gradient and finite differences.
"""

import math

import numpy as np
import pytest

from wbic import model as mdl
from wbic import mpc, traj


# ---------------------------------------------------------------------------
# Relaxed log barrier
# ---------------------------------------------------------------------------


def test_barrier_matches_log_above_delta():
    mu, delta = 1e-2, 1e-3
    for h in (2e-3, 0.1, 1.0, 50.0):
        v, d1, d2 = mpc.relaxed_log_barrier(h, mu, delta)
        assert v == pytest.approx(-mu * math.log(h), rel=1e-15)
        assert d1 == pytest.approx(-mu / h, rel=1e-15)
        assert d2 == pytest.approx(mu / h**2, rel=1e-15)


def test_barrier_c1_at_switch():
    # Both branch formulas, evaluated at the switch point, must agree to
    # machine precision in value and slope.
    for mu, delta in ((3e-2, 2e-3), (1e-2, 1e-3), (1.0, 0.05)):
        log_v = -mu * math.log(delta)
        log_d = -mu / delta
        z = (delta - 2.0 * delta) / delta
        quad_v = mu * (0.5 * (z * z - 1.0) - math.log(delta))
        quad_d = mu * (delta - 2.0 * delta) / delta**2
        assert quad_v == pytest.approx(log_v, rel=1e-15)
        assert quad_d == pytest.approx(log_d, rel=1e-15)
        # And the implementation hits the same values from both sides.
        ulp = np.nextafter(delta, np.inf) - delta
        v_hi, d_hi, _ = mpc.relaxed_log_barrier(delta + ulp, mu, delta)
        v_lo, d_lo, _ = mpc.relaxed_log_barrier(delta - ulp, mu, delta)
        assert v_hi == pytest.approx(v_lo, rel=1e-12)
        assert d_hi == pytest.approx(d_lo, rel=1e-12)


def test_barrier_quadratic_extension_below_delta():
    mu, delta = 1e-2, 1e-3
    # Finite and convex even at and past the constraint boundary.
    for h in (5e-4, 0.0, -0.01, -1.0):
        v, d1, d2 = mpc.relaxed_log_barrier(h, mu, delta)
        assert np.isfinite(v) and v > 0.0
        assert d1 < 0.0
        assert d2 == pytest.approx(mu / delta**2, rel=1e-15)


def test_barrier_derivatives_match_fd():
    mu, delta = 1e-2, 1e-3
    for h in (4e-3, 1.2e-3, 9e-4, 2e-4):
        e = 1e-9
        vp, _, _ = mpc.relaxed_log_barrier(h + e, mu, delta)
        vm, _, _ = mpc.relaxed_log_barrier(h - e, mu, delta)
        _, d1, _ = mpc.relaxed_log_barrier(h, mu, delta)
        if abs(h - delta) > e:  # away from the (C1) switch point
            assert d1 == pytest.approx((vp - vm) / (2 * e), rel=1e-5)


# ---------------------------------------------------------------------------
# LQ exactness (double integrator)
# ---------------------------------------------------------------------------


def double_integrator(dt=0.1):
    A = np.array([[1.0, dt], [0.0, 1.0]])
    B = np.array([[0.5 * dt**2], [dt]])
    f = lambda x, u: A @ x + B @ u
    jac = lambda x, u: (A, B)
    return A, B, mpc.CallableOcp(f, 2, 1, jacobian=jac)


def riccati_lqr(A, B, Q, R, Qf, N):
    P = Qf.copy()
    Ks = []
    for _ in range(N):
        H = R + B.T @ P @ B
        K = np.linalg.solve(H, B.T @ P @ A)
        P = Q + A.T @ P @ A - A.T @ P @ B @ K
        P = 0.5 * (P + P.T)
        Ks.append(K)
    return P, Ks[::-1]


def test_lq_matches_riccati():
    A, B, dyn = double_integrator()
    Q = np.diag([4.0, 0.5])
    R = np.array([[0.2]])
    Qf = np.diag([10.0, 2.0])
    N = 25
    cost = mpc.QuadraticCost(Q, R, Qf)
    solver = mpc.SlqSolver(dyn, cost)
    x0 = np.array([1.3, -0.4])
    res = solver.solve(x0, np.zeros((N, 1)))
    P0, Ks = riccati_lqr(A, B, Q, R, Qf, N)
    # Optimal cost equals the Riccati value function at x0.
    assert res.cost == pytest.approx(x0 @ P0 @ x0, rel=1e-9)
    # Feedback gains equal the LQR gains (solver convention: u += K dx).
    for k in range(N):
        assert np.allclose(res.K[k], -Ks[k], atol=1e-6)
    # Inputs equal the closed-form LQR rollout.
    x = x0.copy()
    for k in range(N):
        u = -Ks[k] @ x
        assert np.allclose(res.U[k], u, atol=1e-6)
        x = A @ x + B @ u
    # LQ problems converge in a single accepted step.
    assert len(res.cost_trace) <= 3


def test_lq_tracking_reference():
    A, B, dyn = double_integrator()
    Q = np.diag([2.0, 0.1])
    R = np.array([[0.05]])
    N = 30
    x_ref = np.zeros((N + 1, 2))
    x_ref[:, 0] = np.linspace(0.0, 1.0, N + 1)
    cost = mpc.QuadraticCost(Q, R, 5 * Q, x_ref=x_ref)
    solver = mpc.SlqSolver(dyn, cost)
    res = solver.solve(np.zeros(2), np.zeros((N, 1)))
    assert res.converged
    assert abs(res.X[N, 0] - 1.0) < 0.05


# ---------------------------------------------------------------------------
# Nonlinear problems: monotonicity and gradient consistency
# ---------------------------------------------------------------------------


def random_problem(rng):
    nx = int(rng.integers(2, 5))
    nu = int(rng.integers(1, 3))
    N = int(rng.integers(10, 25))
    dt = 0.1
    W = rng.normal(size=(nx, nx)) * 0.8
    Bm = rng.normal(size=(nx, nu))

    def f(x, u):
        return x + dt * (-0.4 * x + np.tanh(W @ x) + Bm @ u)

    def jac(x, u):
        s = 1.0 - np.tanh(W @ x) ** 2
        A = np.eye(nx) + dt * (-0.4 * np.eye(nx) + s[:, None] * W)
        return A, dt * Bm

    Q = np.diag(rng.uniform(0.1, 2.0, nx))
    R = np.diag(rng.uniform(0.05, 0.5, nu))
    x_ref = np.tile(rng.normal(size=nx), (N + 1, 1))
    cost = mpc.QuadraticCost(Q, R, 3 * Q, x_ref=x_ref)
    dyn = mpc.CallableOcp(f, nx, nu, jacobian=jac)
    x0 = rng.normal(size=nx)
    return dyn, cost, x0, N, nu


def test_cost_decreases_monotonically_on_random_problems():
    rng = np.random.default_rng(42)
    for _ in range(20):
        dyn, cost, x0, N, nu = random_problem(rng)
        solver = mpc.SlqSolver(dyn, cost)
        res = solver.solve(x0, np.zeros((N, nu)), max_iters=40)
        trace = np.array(res.cost_trace)
        assert np.all(np.diff(trace) <= 1e-10 * (1 + np.abs(trace[:-1])))
        assert trace[-1] < trace[0]


def test_adjoint_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    for _ in range(5):
        dyn, cost, x0, N, nu = random_problem(rng)
        solver = mpc.SlqSolver(dyn, cost)
        U = rng.normal(size=(N, nu)) * 0.3
        grad = solver.open_loop_gradient(x0, U)

        def total(Uflat):
            Um = Uflat.reshape(N, nu)
            return cost.total(dyn.rollout(x0, Um), Um)

        flat = U.ravel()
        g_fd = np.zeros_like(flat)
        h = 1e-6
        for i in range(flat.size):
            up = flat.copy()
            um = flat.copy()
            up[i] += h
            um[i] -= h
            g_fd[i] = (total(up) - total(um)) / (2 * h)
        denom = max(np.abs(g_fd).max(), 1e-12)
        assert np.abs(grad.ravel() - g_fd).max() / denom < 1e-4


def test_solver_rejects_divergent_start():
    def f(x, u):
        return x * 3.0 + u  # violently unstable

    dyn = mpc.CallableOcp(f, 1, 1)
    cost = mpc.QuadraticCost(np.eye(1), np.eye(1), np.eye(1))
    solver = mpc.SlqSolver(dyn, cost)
    with pytest.raises(ValueError):
        solver.solve(np.array([1e3]), np.zeros((60, 1)), max_iters=3)


# ---------------------------------------------------------------------------
# Robot horizon problems
# ---------------------------------------------------------------------------


def test_robot_mpc_holds_pose():
    robot = mdl.balancing_manipulator()
    ctl = mpc.WholeBodyMpc(robot, n_intervals=20, horizon=1.0)
    # Start balanced: the lean must cancel the extended arm's gravity
    # moment about the unactuated pitch joint, or holding is infeasible.
    q0 = mdl.equilibrium_configuration(robot, [0.0, 0.0, -0.5, 1.0])
    x0 = np.concatenate([q0, np.zeros(4)])
    pose = mdl.ee_kinematics(robot, q0)
    ref = traj.HoldReference(pose.position, pose.orientation)
    plan = ctl.reset(0.0, x0, ref)
    assert ctl.last_result.converged
    # Prediction keeps the end-effector near the hold target throughout.
    from wbic import _kernels as _k

    P, Phi, _ = _k.ee_batch(robot.params, plan.X)
    err = np.hypot(P[:, 0] - pose.position[0], P[:, 1] - pose.position[1])
    assert err.max() < 0.02
    # The body keeps leaning near the balanced pitch instead of upright.
    assert np.abs(plan.X[:, 1] - q0[1]).max() < 0.05


def test_robot_mpc_torques_respect_limits():
    # Tight elbow limit plus an aggressive far target: the barrier must cap
    # the planned torques within 5% of the bounds.
    robot = mdl.two_link_arm(tau_max=(15.0, 4.0))
    ctl = mpc.WholeBodyMpc(
        robot,
        n_intervals=20,
        horizon=1.0,
        weights=mpc.MpcWeights(
            qss=(0, 0, 0.2, 0.2), qee=(900.0, 900.0, 0.0), r=(1e-3, 1e-3)
        ),
    )
    q0 = np.array([-1.2, 2.2])
    x0 = np.concatenate([q0, np.zeros(2)])
    target = np.array([0.75, 0.35])
    ref = traj.HoldReference(target, 0.0)
    plan = ctl.reset(0.0, x0, ref)
    lim = robot.torque_limits()
    assert np.abs(plan.U).max(axis=0)[1] <= 1.05 * lim[1]
    # The constraint is actually active (otherwise the check is vacuous).
    assert np.abs(plan.U).max(axis=0)[1] > 0.85 * lim[1]


def test_robot_mpc_warm_start_converges_fast():
    robot = mdl.balancing_manipulator()
    ctl = mpc.WholeBodyMpc(robot, n_intervals=20, horizon=1.0)
    q0 = np.array([0.0, 0.0, -0.5, 1.0])
    x0 = np.concatenate([q0, np.zeros(4)])
    pose = mdl.ee_kinematics(robot, q0)
    ref = traj.HoldReference(pose.position, pose.orientation)
    first = ctl.reset(0.0, x0, ref)
    second = ctl.tick(0.005, x0, ref)
    assert second.cost <= first.cost * 1.01


def test_mpc_determinism():
    robot = mdl.two_link_arm()
    q0 = np.array([0.3, 0.8])
    x0 = np.concatenate([q0, np.zeros(2)])
    pose = mdl.ee_kinematics(robot, q0)
    ref = traj.HoldReference(pose.position + np.array([0.1, -0.05]), pose.orientation)
    plans = []
    for _ in range(2):
        ctl = mpc.WholeBodyMpc(robot, n_intervals=15, horizon=0.75)
        plans.append(ctl.reset(0.0, x0, ref))
    assert np.array_equal(plans[0].U, plans[1].U)
    assert np.array_equal(plans[0].X, plans[1].X)


def test_plan_sampling():
    X = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]])
    U = np.array([[5.0], [7.0]])
    plan = mpc.MpcPlan(t0=1.0, dt=0.5, X=X, U=U, cost=0.0, iterations=1, converged=True)
    q, qd, tau = plan.sample(1.25)
    assert q[0] == pytest.approx(0.5)
    assert tau[0] == 5.0
    q, qd, tau = plan.sample(1.75)
    assert q[0] == pytest.approx(1.5)
    assert tau[0] == 7.0
    q, qd, tau = plan.sample(0.0)  # before the horizon: clamp
    assert q[0] == 0.0
    q, qd, tau = plan.sample(99.0)  # after: hold last node
    assert q[0] == 2.0 and tau[0] == 7.0


def test_virtual_force_pd_frame_split():
    pd = mpc.VirtualForcePd(k_tangent=100.0, k_normal=10.0, d_tangent=0.0, d_normal=0.0)
    # Error purely along the motion direction uses the tangent stiffness.
    f = pd.force((1.0, 0.0), (0.1, 0.0), (0, 0), (0.0, 0.0), (0, 0))
    assert np.allclose(f, [10.0, 0.0])
    # Error across it uses the (softer) normal stiffness.
    f = pd.force((1.0, 0.0), (0.0, 0.1), (0, 0), (0.0, 0.0), (0, 0))
    assert np.allclose(f, [0.0, 1.0])


def test_static_input_holds_equilibrium():
    robot = mdl.balancing_manipulator()
    ctl = mpc.WholeBodyMpc(robot)
    q0 = mdl.equilibrium_configuration(robot, [0.0, 0.0, -0.5, 1.0])
    x0 = np.concatenate([q0, np.zeros(4)])
    u = ctl.static_input(x0)
    qdd = mdl.forward_dynamics(
        robot, mdl.RobotState(q0, np.zeros(4)), mdl.ControlInput(u)
    )
    # At a balanced configuration the least-squares torque cancels gravity
    # exactly, so nothing accelerates.
    assert np.abs(qdd).max() < 1e-9
