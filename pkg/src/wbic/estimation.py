"""Online estimation from proprioception.

Three pieces feed the controllers: a generalized-momentum observer that
recovers the external joint load from commanded torques and encoder rates,
a force extractor that maps that load to an end-effector force, and
recursive estimators for the contact model (impedance coefficients and,
for doors, the handle arc).
"""

from __future__ import annotations

import numpy as np

from . import _kernels as _k
from .environment import ImpedanceParams
from .model import RobotModel, ee_jacobian


class MomentumObserver:
    """Generalized-momentum disturbance observer.

    Integrates the known part of the momentum rate and attributes the
    residual to external loading; with gain K the estimate follows a true
    step within a time constant of 1/K. ``update`` returns the generalized
    force the robot applies to its surroundings (the negated reaction), so
    a pull on a handle shows up with the sign of J^T lambda.
    """

    def __init__(self, robot: RobotModel, gain: float = 40.0, dt: float = 0.005):
        if gain <= 0.0 or dt <= 0.0:
            raise ValueError("observer gain and period must be positive")
        self.robot = robot
        self.gain = float(gain)
        self.dt = float(dt)
        self.reset()

    def reset(self) -> None:
        self._r = np.zeros(self.robot.n)
        self._integral = np.zeros(self.robot.n)
        self._p0 = None
        self._passive_prev = None
        self._zero_tau = np.zeros(self.robot.m_act)

    @property
    def residual(self) -> np.ndarray:
        """Current reaction estimate (external load on the robot)."""
        return self._r.copy()

    def update(self, q, qd, tau) -> np.ndarray:
        """Fold in the state at a tick and the torque held since the last.

        The torque is piecewise constant between ticks, so its momentum
        contribution integrates exactly; the state-dependent part and the
        residual feedback use the trapezoid rule.
        """
        q = np.asarray(q, dtype=float)
        qd = np.asarray(qd, dtype=float)
        tau = np.asarray(tau, dtype=float)
        p, passive = _k.momentum_terms(self.robot.params, q, qd, self._zero_tau)
        if self._p0 is None:
            self._p0 = p.copy()
            self._passive_prev = passive
            return -self._r.copy()
        K, h = self.gain, self.dt
        partial = (
            self._integral
            + 0.5 * h * (self._passive_prev + passive + self._r)
            + h * (self.robot.S.T @ tau)
        )
        # r = K (p - p0 - integral), with r entering its own integral.
        r = K * (p - self._p0 - partial) / (1.0 + 0.5 * K * h)
        self._integral = partial + 0.5 * h * r
        self._passive_prev = passive
        self._r = r
        return -r.copy()


class ForceExtractionError(RuntimeError):
    """The joint load cannot be split into base and end-effector forces."""


def extract_ee_force(robot: RobotModel, q, tau_ext) -> tuple[np.ndarray, np.ndarray]:
    """Split a generalized external load into base and end-effector forces.

    The load is modeled as a horizontal force plus a moment acting at the
    base (wheel contact and lean disturbances) together with a planar force
    at the end effector; the stacked contact Jacobian is square, so the
    split is exact whenever the arm keeps its two task directions
    independent. Returns (base load (2,), ee force (2,)).
    """
    q = np.asarray(q, dtype=float)
    tau_ext = np.asarray(tau_ext, dtype=float)
    n = robot.n
    J = ee_jacobian(robot, q)
    J_aug = np.zeros((4, n))
    J_aug[0, 0] = 1.0
    J_aug[1, 1] = 1.0
    J_aug[2:] = J
    det = np.linalg.det(J_aug)
    if abs(det) < 1e-8:
        raise ForceExtractionError(
            f"contact Jacobian is singular (det {det:.2e}); cannot attribute forces"
        )
    w = np.linalg.solve(J_aug.T, tau_ext)
    return w[:2], w[2:]


def impedance_regressor(xdd: float, xd: float, x: float, x0: float) -> np.ndarray:
    """Row vector phi with lambda = phi . (m, b, k, f_s)."""
    return np.array([xdd, xd, x - x0, 1.0])


class ImpedanceKalmanFilter:
    """Random-walk Kalman filter for the contact impedance coefficients.

    The scalar contact force is modeled as lambda = phi . pi + noise with
    pi = (m, b, k, f_s). A diagonal random-walk process keeps the filter
    alert to drifting contacts; with the process noise zeroed it reduces
    exactly to regularized recursive least squares.
    """

    def __init__(
        self,
        pi0=(0.0, 0.0, 0.0, 0.0),
        P0=100.0,
        q_process=1e-6,
        r_meas=0.25,
        clamp_nonneg: bool = True,
    ):
        self.pi = np.asarray(pi0, dtype=float).copy()
        if self.pi.shape != (4,):
            raise ValueError("pi0 must have four entries (m, b, k, f_s)")
        P0 = np.asarray(P0, dtype=float)
        self.P = np.eye(4) * P0 if P0.ndim == 0 else P0.copy()
        q_process = np.asarray(q_process, dtype=float)
        self.Q = np.eye(4) * q_process if q_process.ndim == 0 else q_process.copy()
        self.r_meas = float(r_meas)
        self.clamp_nonneg = bool(clamp_nonneg)
        self.innovation = 0.0
        self.updates = 0

    def update(self, phi, lam: float) -> np.ndarray:
        phi = np.asarray(phi, dtype=float)
        P = self.P + self.Q
        s = float(phi @ P @ phi) + self.r_meas
        K = (P @ phi) / s
        self.innovation = float(lam) - float(phi @ self.pi)
        self.pi = self.pi + K * self.innovation
        # Joseph form keeps P symmetric positive definite in long runs.
        IKH = np.eye(4) - np.outer(K, phi)
        self.P = IKH @ P @ IKH.T + self.r_meas * np.outer(K, K)
        self.updates += 1
        return self.params_vector

    @property
    def params_vector(self) -> np.ndarray:
        pi = self.pi.copy()
        if self.clamp_nonneg:
            pi[:3] = np.maximum(pi[:3], 0.0)
        return pi

    @property
    def params(self) -> ImpedanceParams:
        return ImpedanceParams.from_vector(self.params_vector)

    @property
    def variances(self) -> np.ndarray:
        return np.diag(self.P).copy()


class HandleArcTracker:
    """Recursive circle fit for the path of a grasped handle.

    Refines a prior guess of hinge position and radius from end-effector
    positions. A point on the circle satisfies x^2 + y^2 = a1 x + a2 y + a3
    with a = (2 cx, 2 cy, r^2 - cx^2 - cy^2), which is linear in a, so the
    filter is a Kalman update in those coordinates: exact recursive least
    squares with no linearization to diverge from a rough start. Starting
    from the prior keeps the estimate sane while the samples still cluster
    at the grasp point, and with zero process noise the posterior is the
    prior-regularized batch algebraic circle fit on the accepted points.

    Samples are only folded in once the handle has moved ``min_spacing``
    from the previously accepted sample: dithering in place carries no
    arc information, but its noise masquerades as curvature (the algebraic
    fit of a point cluster is a circle through the cluster) and would
    slowly drag the estimate off the prior.
    """

    def __init__(
        self,
        prior_center,
        prior_radius: float,
        sigma_center: float = 0.1,
        sigma_radius: float = 0.1,
        sigma_point: float = 5e-3,
        min_spacing: float = 0.01,
        q_process=0.0,
    ):
        c = np.asarray(prior_center, dtype=float)
        r = float(prior_radius)
        if r <= 0.0:
            raise ValueError("prior radius must be positive")
        self._a = self._to_linear(c, r)
        # The prior spread is specified in (center, radius) coordinates;
        # carry it into the linear coordinates through the Jacobian.
        J = np.array(
            [
                [2.0, 0.0, 0.0],
                [0.0, 2.0, 0.0],
                [-2.0 * c[0], -2.0 * c[1], 2.0 * r],
            ]
        )
        self.P = J @ np.diag(
            [sigma_center**2, sigma_center**2, sigma_radius**2]
        ) @ J.T
        # A radial position error eps perturbs the measurement by about
        # 2 r eps, so point noise of deviation sigma_point enters with
        # variance (2 r sigma_point)^2. Frozen at the prior radius: constant
        # weights keep the recursion a plain linear Kalman filter.
        self._r_eff = (2.0 * r * float(sigma_point)) ** 2
        self.min_spacing = float(min_spacing)
        self._last: np.ndarray | None = None
        q_process = np.asarray(q_process, dtype=float)
        self.Q = np.eye(3) * q_process if q_process.ndim == 0 else q_process.copy()

    @staticmethod
    def _to_linear(c, r) -> np.ndarray:
        return np.array([2.0 * c[0], 2.0 * c[1], r * r - c[0] ** 2 - c[1] ** 2])

    @property
    def center(self) -> np.ndarray:
        return 0.5 * self._a[:2]

    @property
    def radius(self) -> float:
        c = 0.5 * self._a[:2]
        return float(np.sqrt(max(self._a[2] + c @ c, 1e-12)))

    def update(self, p) -> bool:
        """Fold in one handle position sample; False if rejected as stale."""
        p = np.asarray(p, dtype=float)
        if self._last is not None and np.hypot(*(p - self._last)) < self.min_spacing:
            return False
        self._last = p.copy()
        phi = np.array([p[0], p[1], 1.0])
        P = self.P + self.Q
        s = float(phi @ P @ phi) + self._r_eff
        K = (P @ phi) / s
        self._a = self._a + K * (float(p @ p) - float(phi @ self._a))
        IKH = np.eye(3) - np.outer(K, phi)
        self.P = IKH @ P @ IKH.T + self._r_eff * np.outer(K, K)
        return True

    def tangent_at(self, p, open_sign: float) -> np.ndarray:
        """Unit tangent of the arc through p, oriented by the opening sense."""
        radial = np.asarray(p, dtype=float) - self.center
        nrm = float(np.hypot(*radial))
        if nrm < 1e-9:
            raise RuntimeError("grasp point coincides with the arc center")
        radial /= nrm
        return float(open_sign) * np.array([-radial[1], radial[0]])
