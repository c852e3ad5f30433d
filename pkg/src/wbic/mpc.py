"""SLQ trajectory optimization and the whole-body receding-horizon controller.

The solver is a Gauss-Newton iLQR: linearize the discrete dynamics along the
current trajectory, run a regularized LQ backward pass, then line-search the
resulting affine policy on the true rollout cost. Joint and torque limits
enter the cost through relaxed log barriers, so the subproblems stay smooth
and the backward pass stays positive definite.

Two dynamics/cost backends share the solver: compiled kernels for the robot
(fast path) and plain callables for tests and small examples.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as _k
from .environment import Environment, pack_envp
from .model import RobotModel


def relaxed_log_barrier(h: float, mu: float, delta: float):
    """Soft-constraint penalty and its first two derivatives at margin h.

    Exactly -mu*ln(h) for h > delta; below delta the penalty continues as
    the quadratic with matching value and slope, so the function is finite
    everywhere and C1 across the switch.
    """
    return (
        _k.barrier_value(h, mu, delta),
        *_k.barrier_derivs(h, mu, delta),
    )


# ---------------------------------------------------------------------------
# Solver
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SlqSettings:
    max_iters: int = 60
    grad_tol: float = 1e-7
    cost_tol: float = 1e-10
    reg_init: float = 1e-9
    reg_min: float = 1e-9
    reg_max: float = 1e8
    reg_scale: float = 10.0
    reg_decay: float = 2.0
    alpha_min: float = 1.0 / 1024.0
    armijo: float = 1e-4


@dataclass
class SlqResult:
    X: np.ndarray
    U: np.ndarray
    K: np.ndarray
    kff: np.ndarray
    cost: float
    iterations: int
    converged: bool
    grad_inf: float
    reg: float
    cost_trace: list = field(default_factory=list)


class SlqSolver:
    """Iterative LQ solver over a fixed horizon.

    ``dynamics`` provides rollout / rollout_feedback / linearize and
    ``cost`` provides total / quadratize; see KernelOcp and CallableOcp.
    """

    def __init__(self, dynamics, cost, settings: SlqSettings | None = None):
        self.dynamics = dynamics
        self.cost = cost
        self.settings = settings or SlqSettings()

    def solve(self, x0, U0, max_iters: int | None = None) -> SlqResult:
        s = self.settings
        x0 = np.asarray(x0, dtype=float)
        U = np.array(U0, dtype=float)
        N, nu = U.shape
        nx = x0.shape[0]
        X = self.dynamics.rollout(x0, U)
        J = self.cost.total(X, U)
        if not np.isfinite(J) or J >= 1e29:
            raise ValueError("initial rollout is not finite")
        K = np.zeros((N, nu, nx))
        kff = np.zeros((N, nu))
        reg = s.reg_init
        grad_inf = np.inf
        converged = False
        trace = [J]
        iters = 0
        for iters in range(1, (max_iters or s.max_iters) + 1):
            A, B = self.dynamics.linearize(X, U)
            Qxx, qx, Ruu, ru, _ = self.cost.quadratize(X, U)
            while True:
                K_new, k_new, dv1, dv2, ok, grad_inf = _k.backward_pass(
                    A, B, Qxx, qx, Ruu, ru, reg
                )
                if ok:
                    break
                reg *= s.reg_scale
                if reg > s.reg_max:
                    return SlqResult(
                        X, U, K, kff, J, iters, False, grad_inf, reg, trace
                    )
            K, kff = K_new, k_new
            if grad_inf < s.grad_tol:
                converged = True
                break
            if dv1 >= 0.0:
                # No descent direction under this regularization.
                reg = max(reg * s.reg_scale, 1e-6)
                if reg > s.reg_max:
                    break
                continue
            alpha = 1.0
            accepted = False
            while alpha >= s.alpha_min:
                X_t, U_t = self.dynamics.rollout_feedback(x0, X, U, K, kff, alpha)
                J_t = self.cost.total(X_t, U_t)
                if J_t <= J + s.armijo * alpha * dv1:
                    accepted = True
                    break
                alpha *= 0.5
            if accepted:
                drop = J - J_t
                X, U, J = X_t, U_t, J_t
                trace.append(J)
                reg = max(reg / s.reg_decay, s.reg_min)
                if drop < s.cost_tol * (1.0 + abs(J)):
                    converged = True
                    break
            else:
                reg = max(reg * s.reg_scale, 1e-6)
                if reg > s.reg_max:
                    break
        return SlqResult(X, U, K, kff, J, iters, converged, grad_inf, reg, trace)

    def open_loop_gradient(self, x0, U) -> np.ndarray:
        """Gradient of the rollout cost with respect to the input sequence.

        Plain adjoint recursion (no feedback), using the same linearization
        and cost expansion as the solver.
        """
        U = np.asarray(U, dtype=float)
        X = self.dynamics.rollout(np.asarray(x0, dtype=float), U)
        A, B = self.dynamics.linearize(X, U)
        _, qx, _, ru, _ = self.cost.quadratize(X, U)
        N = U.shape[0]
        grad = np.zeros_like(U)
        lam = qx[N].copy()
        for k in range(N - 1, -1, -1):
            grad[k] = ru[k] + B[k].T @ lam
            lam = qx[k] + A[k].T @ lam
        return grad


# ---------------------------------------------------------------------------
# Generic callable backend (tests, small examples)
# ---------------------------------------------------------------------------


class CallableOcp:
    """Discrete dynamics from a python callable x_next = f(x, u).

    ``jacobian(x, u) -> (A, B)`` may be supplied; otherwise central
    differences are used.
    """

    def __init__(self, f, n_x, n_u, jacobian=None, fd_eps=1e-6):
        self.f = f
        self.n_x = n_x
        self.n_u = n_u
        self.jacobian = jacobian
        self.fd_eps = fd_eps

    def rollout(self, x0, U):
        N = U.shape[0]
        X = np.empty((N + 1, self.n_x))
        X[0] = x0
        for k in range(N):
            X[k + 1] = self.f(X[k], U[k])
        return X

    def rollout_feedback(self, x0, X_nom, U_nom, K, kff, alpha):
        N = U_nom.shape[0]
        X = np.empty_like(X_nom)
        U = np.empty_like(U_nom)
        X[0] = x0
        for k in range(N):
            U[k] = U_nom[k] + alpha * kff[k] + K[k] @ (X[k] - X_nom[k])
            X[k + 1] = self.f(X[k], U[k])
        return X, U

    def linearize(self, X, U):
        N = U.shape[0]
        A = np.empty((N, self.n_x, self.n_x))
        B = np.empty((N, self.n_x, self.n_u))
        for k in range(N):
            if self.jacobian is not None:
                A[k], B[k] = self.jacobian(X[k], U[k])
                continue
            for c in range(self.n_x):
                e = np.zeros(self.n_x)
                e[c] = self.fd_eps * (1.0 + abs(X[k, c]))
                A[k][:, c] = (self.f(X[k] + e, U[k]) - self.f(X[k] - e, U[k])) / (
                    2 * e[c]
                )
            for c in range(self.n_u):
                e = np.zeros(self.n_u)
                e[c] = self.fd_eps * (1.0 + abs(U[k, c]))
                B[k][:, c] = (self.f(X[k], U[k] + e) - self.f(X[k], U[k] - e)) / (
                    2 * e[c]
                )
        return A, B


class QuadraticCost:
    """J = sum (x-xr)'Q(x-xr) + (u-ur)'R(u-ur) plus terminal (x-xr)'Qf(x-xr)."""

    def __init__(self, Q, R, Qf, x_ref=None, u_ref=None):
        self.Q = np.asarray(Q, dtype=float)
        self.R = np.asarray(R, dtype=float)
        self.Qf = np.asarray(Qf, dtype=float)
        self.x_ref = x_ref
        self.u_ref = u_ref

    def _refs(self, N):
        nx = self.Q.shape[0]
        nu = self.R.shape[0]
        xr = np.zeros((N + 1, nx)) if self.x_ref is None else self.x_ref
        ur = np.zeros((N, nu)) if self.u_ref is None else self.u_ref
        return xr, ur

    def total(self, X, U):
        N = U.shape[0]
        xr, ur = self._refs(N)
        J = 0.0
        for k in range(N):
            dx = X[k] - xr[k]
            du = U[k] - ur[k]
            J += dx @ self.Q @ dx + du @ self.R @ du
        dx = X[N] - xr[N]
        return J + dx @ self.Qf @ dx

    def quadratize(self, X, U):
        N = U.shape[0]
        nx, nu = X.shape[1], U.shape[1]
        xr, ur = self._refs(N)
        Qxx = np.empty((N + 1, nx, nx))
        qx = np.empty((N + 1, nx))
        Ruu = np.empty((N, nu, nu))
        ru = np.empty((N, nu))
        for k in range(N):
            Qxx[k] = 2.0 * self.Q
            qx[k] = 2.0 * self.Q @ (X[k] - xr[k])
            Ruu[k] = 2.0 * self.R
            ru[k] = 2.0 * self.R @ (U[k] - ur[k])
        Qxx[N] = 2.0 * self.Qf
        qx[N] = 2.0 * self.Qf @ (X[N] - xr[N])
        return Qxx, qx, Ruu, ru, self.total(X, U)


# ---------------------------------------------------------------------------
# Robot backend (compiled kernels)
# ---------------------------------------------------------------------------


class KernelOcp:
    """Robot dynamics over the MPC grid, backed by the compiled kernels.

    Each grid interval integrates in ``steps`` RK4 substeps so the model
    stays inside the integrator's stability region even for the stiffest
    environment beliefs the identifier can hand over.
    """

    def __init__(
        self,
        robot: RobotModel,
        dt: float,
        u_clip_scale: float = 50.0,
        steps: int = 2,
    ):
        self.robot = robot
        self.params = robot.params
        self.dt = float(dt)
        self.steps = int(steps)
        self.envp = pack_envp(None)
        # Overflow guard for diverged line-search trials only; the torque
        # limits themselves are enforced by the soft barrier in the cost.
        self.u_clip = u_clip_scale * robot.torque_limits()

    def set_environment(self, env: Environment | None, f_ee=(0.0, 0.0)):
        self.envp = pack_envp(env, f_ee)

    def rollout(self, x0, U):
        return _k.rollout_open(self.params, self.envp, x0, U, self.dt, self.steps)

    def rollout_feedback(self, x0, X_nom, U_nom, K, kff, alpha):
        return _k.rollout_feedback(
            self.params, self.envp, x0, X_nom, U_nom, K, kff, alpha, self.dt,
            self.u_clip, self.steps,
        )

    def linearize(self, X, U):
        return _k.linearize_traj(self.params, self.envp, X, U, self.dt, self.steps)

    def step(self, x, u):
        return _k.rk4_multi(self.params, self.envp, x, u, self.dt, self.steps)


@dataclass(frozen=True)
class MpcWeights:
    """Diagonal tracking weights and soft-constraint parameters.

    ``qss`` weighs the whole-body state (length 2n), ``qee`` the
    end-effector (x, y, orientation) error, ``r`` the input deviation.
    ``delta_frac`` sets each barrier's relaxation margin as a fraction of
    the constraint range.
    """

    qss: tuple[float, ...]
    qee: tuple[float, float, float]
    r: tuple[float, ...]
    mu_u: float = 1e-2
    mu_q: float = 1e-2
    delta_frac: float = 1e-3


def default_weights(robot: RobotModel) -> MpcWeights:
    qss = np.zeros(2 * robot.n)
    if robot.name == "balancing_manipulator":
        # Positions are left to the task-space term; the pitch weight is a
        # light regularizer only, since the balanced lean is nonzero
        # whenever the arm is extended.
        qss[1] = 1.0
        qss[robot.n] = 2.0  # base speed
        qss[robot.n + 1] = 4.0  # pitch rate
        qss[robot.n + 2 :] = 0.5  # arm joint speeds
    else:
        qss[robot.n :] = 0.5
    return MpcWeights(
        qss=tuple(qss),
        qee=(600.0, 600.0, 20.0),
        r=(2e-3,) * robot.m_act,
    )


class RobotTrackingCost:
    """Pose/state tracking with input effort and barrier soft constraints."""

    def __init__(self, robot: RobotModel, weights: MpcWeights, dt: float):
        self.robot = robot
        self.params = robot.params
        self.weights = weights
        self.dt = float(dt)
        n = robot.n
        self.qss = np.asarray(weights.qss, dtype=float)
        self.qee = np.asarray(weights.qee, dtype=float)
        self.rdiag = np.asarray(weights.r, dtype=float)
        tl = robot.torque_limits()
        self.u_lo = -tl
        self.u_hi = tl.copy()
        finite_u = np.isfinite(tl)
        self.delta_u = np.where(
            finite_u, weights.delta_frac * 2.0 * np.where(finite_u, tl, 1.0), -1.0
        )
        q_lo = np.asarray(robot.q_lower, dtype=float)
        q_hi = np.asarray(robot.q_upper, dtype=float)
        finite_q = np.isfinite(q_lo) & np.isfinite(q_hi)
        self.q_lo = np.where(finite_q, q_lo, -1.0)
        self.q_hi = np.where(finite_q, q_hi, 1.0)
        self.delta_q = np.where(
            finite_q, weights.delta_frac * (self.q_hi - self.q_lo), -1.0
        )
        self.mu_u = weights.mu_u
        self.mu_q = weights.mu_q
        N_any = 1
        self.xss_ref = np.zeros((N_any, 2 * n))
        self.ee_ref = np.zeros((N_any, 3))
        self.u_ref = np.zeros((N_any, robot.m_act))

    def set_references(self, xss_ref, ee_ref, u_ref):
        self.xss_ref = np.ascontiguousarray(xss_ref, dtype=float)
        self.ee_ref = np.ascontiguousarray(ee_ref, dtype=float)
        self.u_ref = np.ascontiguousarray(u_ref, dtype=float)

    def _args(self, X, U):
        return (
            self.params,
            X,
            U,
            self.xss_ref,
            self.ee_ref,
            self.u_ref,
            self.qss,
            self.qee,
            self.rdiag,
            self.dt,
            self.mu_u,
            self.u_lo,
            self.u_hi,
            self.delta_u,
            self.mu_q,
            self.q_lo,
            self.q_hi,
            self.delta_q,
        )

    def total(self, X, U):
        return _k.cost_eval(*self._args(X, U))

    def quadratize(self, X, U):
        return _k.cost_quadratize(*self._args(X, U))


# ---------------------------------------------------------------------------
# Receding-horizon controller
# ---------------------------------------------------------------------------


@dataclass
class MpcPlan:
    """One optimized horizon: zero-order-hold inputs, linear state interp."""

    t0: float
    dt: float
    X: np.ndarray
    U: np.ndarray
    cost: float
    iterations: int
    converged: bool

    def sample(self, t: float):
        """(q*, qd*, tau*) at absolute time t."""
        N = self.U.shape[0]
        n = self.X.shape[1] // 2
        rel = (t - self.t0) / self.dt
        k = int(np.floor(rel))
        if k < 0:
            k, rel = 0, 0.0
        if k >= N:
            x = self.X[N]
            return x[:n], x[n:], self.U[N - 1]
        w = rel - k
        x = (1.0 - w) * self.X[k] + w * self.X[k + 1]
        return x[:n], x[n:], self.U[k]


class WholeBodyMpc:
    """Receding-horizon tracking controller for the planar manipulator.

    Each tick installs the latest environment belief, virtual force and
    task reference, then runs a fixed number of SLQ iterations warm-started
    from the previous solution (a real-time iteration scheme).
    """

    def __init__(
        self,
        robot: RobotModel,
        weights: MpcWeights | None = None,
        horizon: float = 1.5,
        n_intervals: int = 40,
        iters_per_tick: int = 2,
        init_iters: int = 50,
        settings: SlqSettings | None = None,
    ):
        self.robot = robot
        self.weights = weights or default_weights(robot)
        self.N = int(n_intervals)
        self.dt = float(horizon) / self.N
        self.iters_per_tick = int(iters_per_tick)
        self.init_iters = int(init_iters)
        self.dynamics = KernelOcp(robot, self.dt)
        self.cost = RobotTrackingCost(robot, self.weights, self.dt)
        self.solver = SlqSolver(self.dynamics, self.cost, settings)
        self.xss_nominal = np.zeros(2 * robot.n)
        self._U = None
        self._policy = None
        self.last_result: SlqResult | None = None

    def static_input(self, x, env: Environment | None = None, f_ee=(0.0, 0.0)):
        """Least-squares torque holding the current configuration still."""
        from . import model as mdl

        n = self.robot.n
        q = np.asarray(x[:n], dtype=float)
        bias = mdl.gravity_vector(self.robot, q)
        rhs = bias.copy()
        if f_ee is not None:
            rhs = rhs + mdl.ee_jacobian(self.robot, q).T @ np.asarray(f_ee, float)
        if env is not None and env.attached:
            lam0 = env.force(env.frame.coordinate(mdl.ee_kinematics(self.robot, q).position), 0.0, 0.0)
            rhs = rhs + mdl.ee_jacobian(self.robot, q).T @ env.frame.force_world(lam0)
        sol, *_ = np.linalg.lstsq(self.robot.S.T, rhs, rcond=None)
        return np.clip(sol, -self.robot.torque_limits(), self.robot.torque_limits())

    def _build_refs(self, t, reference):
        n = self.robot.n
        xss = np.tile(self.xss_nominal, (self.N + 1, 1))
        ee = np.empty((self.N + 1, 3))
        for i in range(self.N + 1):
            r = reference.sample(t + i * self.dt)
            ee[i, 0] = r.position[0]
            ee[i, 1] = r.position[1]
            ee[i, 2] = r.orientation
        u_ref = np.zeros((self.N, self.robot.m_act))
        return xss, ee, u_ref

    def reset(self, t, x, reference, env: Environment | None = None, f_ee=(0.0, 0.0)):
        self.dynamics.set_environment(env, f_ee)
        self._U = self._initial_input(np.asarray(x, dtype=float), env, f_ee)
        self._policy = None
        return self._tick(t, x, reference, env, f_ee, self.init_iters)

    def _initial_input(self, x, env, f_ee):
        """Input sequence with a finite rollout to seed the first solve.

        A constant gravity/contact-compensating torque is usually enough;
        when the open-loop system drifts off to overflow within the horizon
        (the robot is an inverted pendulum), fall back to a gentle joint PD
        about the current configuration, evaluated on the solver grid.
        """
        u0 = self.static_input(x, env, f_ee)
        U = np.tile(u0, (self.N, 1))
        X = self.dynamics.rollout(x, U)
        if np.isfinite(X).all() and np.abs(X).max() < 1e6:
            return U
        n = self.robot.n
        S = self.robot.S
        lim = self.robot.torque_limits()
        kp, kd = 4.0, 1.5
        xk = x.copy()
        for k in range(self.N):
            U[k] = np.clip(
                u0 + kp * (S @ (x[:n] - xk[:n])) - kd * (S @ xk[n:]), -lim, lim
            )
            xk = self.dynamics.step(xk, U[k])
            if not np.isfinite(xk).all() or np.abs(xk).max() > 1e6:
                raise ValueError("no finite initial rollout about the current state")
        return U

    def tick(self, t, x, reference, env: Environment | None = None, f_ee=(0.0, 0.0)):
        if self._U is None:
            return self.reset(t, x, reference, env, f_ee)
        return self._tick(t, x, reference, env, f_ee, self.iters_per_tick)

    def _tick(self, t, x, reference, env, f_ee, iters):
        x = np.asarray(x, dtype=float)
        self.dynamics.set_environment(env, f_ee)
        self.cost.set_references(*self._build_refs(t, reference))
        if self._policy is not None:
            # Re-roll the previous solution as a feedback policy about its
            # own nominal trajectory: an open-loop replay of the old inputs
            # amplifies the state shift exponentially (the robot balances),
            # while the policy rollout stays near the old optimum.
            Xp, Up, Kp = self._policy
            _, U0 = self.dynamics.rollout_feedback(
                x, Xp, Up, Kp, np.zeros_like(Up), 0.0
            )
            if np.isfinite(U0).all():
                self._U = U0
        try:
            result = self.solver.solve(x, self._U, max_iters=iters)
        except ValueError:
            # Warm start diverged under the new model: rebuild from rest.
            self._U = self._initial_input(x, env, f_ee)
            result = self.solver.solve(x, self._U, max_iters=max(iters, 10))
        self._U = result.U.copy()
        self._policy = (result.X.copy(), result.U.copy(), result.K.copy())
        self.last_result = result
        return MpcPlan(
            t0=t,
            dt=self.dt,
            X=result.X,
            U=result.U,
            cost=result.cost,
            iterations=result.iterations,
            converged=result.converged,
        )


@dataclass(frozen=True)
class TorqueTrackingPd:
    """Inner-loop torque law tracking an MPC plan at the physics rate."""

    kp: np.ndarray
    kd: np.ndarray

    def command(self, robot: RobotModel, plan: MpcPlan, t, q, qd):
        q_star, qd_star, tau_star = plan.sample(t)
        S = robot.S
        tau = tau_star + self.kp * (S @ (q_star - q)) + self.kd * (S @ (qd_star - qd))
        lim = robot.torque_limits()
        return np.clip(tau, -lim, lim)


def default_torque_pd(robot: RobotModel) -> TorqueTrackingPd:
    if robot.name == "balancing_manipulator":
        return TorqueTrackingPd(
            kp=np.array([60.0, 80.0, 40.0]), kd=np.array([8.0, 6.0, 3.0])
        )
    m = robot.m_act
    return TorqueTrackingPd(kp=np.full(m, 50.0), kd=np.full(m, 5.0))


@dataclass(frozen=True)
class VirtualForcePd:
    """Task-space PD generating the virtual end-effector force.

    Gains are expressed in the manipulation frame: one stiffness/damping
    pair along the motion direction, a (typically softer) pair across it.
    """

    k_tangent: float = 60.0
    k_normal: float = 25.0
    d_tangent: float = 12.0
    d_normal: float = 6.0

    def force(self, direction, p_des, v_des, p, v) -> np.ndarray:
        tdir = np.asarray(direction, dtype=float)
        tdir = tdir / np.hypot(*tdir)
        ndir = np.array([-tdir[1], tdir[0]])
        e = np.asarray(p_des, float) - np.asarray(p, float)
        ed = np.asarray(v_des, float) - np.asarray(v, float)
        f_t = self.k_tangent * (tdir @ e) + self.d_tangent * (tdir @ ed)
        f_n = self.k_normal * (ndir @ e) + self.d_normal * (ndir @ ed)
        return f_t * tdir + f_n * ndir
