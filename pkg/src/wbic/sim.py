"""Closed-loop episodes: coupled stepping, noise, and controller scheduling.

The physics runs a fixed-step RK4 at ``dt_physics`` with the grasped
environment eliminated into the robot dynamics (rigid tangential coupling,
see the compiled kernels); the contact force is recovered after each step.
The controller runs at ``control_rate``. Every tick performs, in order:

1. measurement: encoder positions with additive noise, velocities by finite
   difference of consecutive encoder readings, applied torque averaged over
   the last control period plus measurement noise;
2. force estimation: momentum observer on the measurements, split into base
   and end-effector components through the augmented Jacobian;
3. task geometry: handle-arc tracking (door) or the fixed lift axis, giving
   the believed manipulation direction and contact coordinate;
4. reference replanning from the previous reference's current state;
5. controller variant update (impedance filter / adaptive force / PD force)
   producing the environment belief and virtual force handed to the MPC;
6. one warm-started MPC solve from the measured state;
7. physics substeps under the torque-tracking PD, with the ground-truth
   contact frame rebased to the true end-effector position each substep.

Everything drawn from the seeded generator happens in a fixed order, so an
episode is a pure function of (scenario, controller, config).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as _k
from . import model as mdl
from . import traj
from .adaptive import AdaptiveForceLaw
from .environment import (
    Door,
    Environment,
    ProjectionFrame,
    environment_from_config,
    pack_envp,
)
from .estimation import (
    ForceExtractionError,
    HandleArcTracker,
    ImpedanceKalmanFilter,
    MomentumObserver,
    extract_ee_force,
    impedance_regressor,
)
from .model import RobotModel, model_from_config, wrap_angle
from .mpc import (
    TorqueTrackingPd,
    VirtualForcePd,
    WholeBodyMpc,
    default_torque_pd,
    default_weights,
)

__all__ = [
    "SimConfig",
    "NoiseModel",
    "SimLog",
    "EpisodeError",
    "ConstraintDriftError",
    "step",
    "apply_torque_tracking",
    "run_episode",
    "make_coupling",
    "grasp_configuration",
    "build_task",
    "VariantController",
]

DRIFT_TOL = 1e-4
_FREE_ENVP = pack_envp(None)


class EpisodeError(RuntimeError):
    """An episode aborted; the message carries scenario/controller context."""


class ConstraintDriftError(EpisodeError):
    """The frozen-frame grasp projection left the geometric contact path."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseModel:
    """Additive zero-mean Gaussian measurement noise levels."""

    torque_std: float = 0.0
    encoder_std: float = 0.0


@dataclass(frozen=True)
class SimConfig:
    """Timing, noise and seeding of one episode."""

    dt_physics: float = 1e-3
    control_rate: float = 200.0
    noise: NoiseModel = field(default_factory=NoiseModel)
    seed: int = 0

    def __post_init__(self):
        if self.dt_physics <= 0.0 or self.control_rate <= 0.0:
            raise ValueError("dt_physics and control_rate must be positive")
        sub = 1.0 / (self.control_rate * self.dt_physics)
        if abs(sub - round(sub)) > 1e-9 or round(sub) < 1:
            raise ValueError("control period must be an integer multiple of dt_physics")

    @property
    def control_period(self) -> float:
        return 1.0 / self.control_rate

    @property
    def substeps(self) -> int:
        return int(round(self.control_period / self.dt_physics))


# ---------------------------------------------------------------------------
# Ground-truth contact coupling
# ---------------------------------------------------------------------------


class DoorCoupling:
    """True door contact; the projection frame follows the handle angle.

    The contact coordinate is defined geometrically, x := radius * opening
    angle of the end-effector seen from the hinge, so the frozen-frame
    projection used inside an integration step can be checked against it.

    The impedance acts along the tangent (the door's single degree of
    freedom); the rigid grasp of a rigid door also constrains the hand
    radially, which the reduction cannot express as an impedance, so it is
    enforced as a stiff radial spring-damper penalty. Its energy terms are
    exposed for the episode's power balance.
    """

    def __init__(self, door: Door, k_pin: float = 1e4, d_pin: float = 200.0):
        self.door = door
        self.params = door.projected_params()
        self.x0 = 0.0
        self.k_pin = float(k_pin)
        self.d_pin = float(d_pin)

    def envp(self, p_ee, v_ee) -> np.ndarray:
        angle = self.door.angle_of(p_ee)
        env = self.door.environment_at(angle, self.door.arc_length(angle))
        pin = self.k_pin * self.radial_error(p_ee) + self.d_pin * self.radial_rate(
            p_ee, v_ee
        )
        return pack_envp(env, f_ee=pin * self._radial(p_ee))

    def _radial(self, p_ee) -> np.ndarray:
        d = np.asarray(p_ee, dtype=float) - np.asarray(self.door.hinge)
        return d / float(np.hypot(d[0], d[1]))

    def coordinate(self, p_ee) -> float:
        return self.door.arc_length(self.door.angle_of(p_ee))

    def frozen_coordinate(self, p_from, p_ee) -> float:
        """Projection of p_ee in the frame anchored at p_from."""
        angle = self.door.angle_of(p_from)
        v = self.door.tangent(angle)
        p_ref = self.door.handle_position(angle)
        return self.door.arc_length(angle) + float(v @ (np.asarray(p_ee) - p_ref))

    def direction(self, p_ee) -> np.ndarray:
        return self.door.tangent(self.door.angle_of(p_ee))

    def radial_error(self, p_ee) -> float:
        d = np.asarray(p_ee, dtype=float) - np.asarray(self.door.hinge)
        return float(np.hypot(d[0], d[1]) - self.door.radius)

    def radial_rate(self, p_ee, v_ee) -> float:
        return float(self._radial(p_ee) @ v_ee)

    def pin_energy(self, p_ee) -> float:
        return 0.5 * self.k_pin * self.radial_error(p_ee) ** 2


class FixedFrameCoupling:
    """True point contact with a constant manipulation direction."""

    def __init__(self, env: Environment, p_start):
        frame = ProjectionFrame(
            v=tuple(env.frame.v), p_ref=tuple(np.asarray(p_start, float)), x_ref=0.0
        )
        self.env = Environment(env.params, frame, x0=env.x0, name=env.name)
        self.params = env.params
        self.x0 = env.x0
        self.d_pin = 0.0
        self._envp = pack_envp(self.env)
        self._v = np.asarray(frame.v, dtype=float)

    def envp(self, p_ee, v_ee) -> np.ndarray:
        return self._envp

    def coordinate(self, p_ee) -> float:
        return self.env.frame.coordinate(p_ee)

    def frozen_coordinate(self, p_from, p_ee) -> float:
        return self.env.frame.coordinate(p_ee)

    def direction(self, p_ee) -> np.ndarray:
        return self._v

    def radial_error(self, p_ee) -> float:
        return 0.0

    def radial_rate(self, p_ee, v_ee) -> float:
        return 0.0

    def pin_energy(self, p_ee) -> float:
        return 0.0


def make_coupling(environment, p_start):
    """Ground-truth coupling for a Door, an attached Environment, or None."""
    if environment is None:
        return None
    if isinstance(environment, Door):
        return DoorCoupling(environment)
    if isinstance(environment, Environment):
        return FixedFrameCoupling(environment, p_start) if environment.attached else None
    raise TypeError(f"unsupported environment {type(environment).__name__}")


# ---------------------------------------------------------------------------
# Physics step and inner torque loop
# ---------------------------------------------------------------------------


def step(robot: RobotModel, coupling, x, tau, dt: float):
    """Advance the coupled system one physics step.

    Returns (x_next, lam, drift): the contact force at the pre-step state
    and the post-step residual between the frozen-frame projection and the
    geometric contact coordinate. A residual above DRIFT_TOL means the
    integration violated the rigid-grasp reduction and raises.
    """
    x = np.asarray(x, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if coupling is None:
        return _k.rk4_step(robot.params, _FREE_ENVP, x, tau, dt), 0.0, 0.0
    n = robot.n
    p_pre = mdl.ee_kinematics(robot, x[:n]).position
    v_pre = mdl.ee_velocity(robot, x[:n], x[n:])
    envp = coupling.envp(p_pre, v_pre)
    x_next, lam = _k.step_with_contact(robot.params, envp, x, tau, dt)
    p_post = mdl.ee_kinematics(robot, x_next[:n]).position
    drift = abs(
        coupling.frozen_coordinate(p_pre, p_post) - coupling.coordinate(p_post)
    )
    if drift > DRIFT_TOL:
        raise ConstraintDriftError(
            f"grasp projection drifted {drift:.3e} m from the contact path"
        )
    return x_next, float(lam), drift


def apply_torque_tracking(robot: RobotModel, gains, tau_star, q_star, qd_star, q, qd):
    """Reference torque: feedforward plus joint PD, saturated at the limits."""
    tau = (
        np.asarray(tau_star, dtype=float)
        + gains.kp * (robot.S @ (np.asarray(q_star, float) - np.asarray(q, float)))
        + gains.kd * (robot.S @ (np.asarray(qd_star, float) - np.asarray(qd, float)))
    )
    lim = robot.torque_limits()
    return np.clip(tau, -lim, lim)


# ---------------------------------------------------------------------------
# Grasp configuration
# ---------------------------------------------------------------------------


def grasp_configuration(
    robot: RobotModel, target, base_standoff: float = 0.55, elbow: float = -1.0
) -> np.ndarray:
    """Balanced rest configuration with the end effector on ``target``.

    Puts the base ``base_standoff`` behind the target, then alternates a
    gravity balance of the unactuated pitch with an exact planar two-link
    solve of the arm until both hold. ``elbow`` picks the branch; the
    default bends the elbow upward, keeping the arm above the target.
    """
    if robot.name != "balancing_manipulator":
        raise ValueError("grasp_configuration expects the balancing manipulator")
    target = np.asarray(target, dtype=float)
    l1 = float(robot.joints[3].offset[0])
    l2 = float(robot.ee_offset[0])
    pivot = float(robot.joints[1].offset[1])
    body = float(robot.joints[2].offset[1])
    q = np.zeros(robot.n)
    q[0] = target[0] - base_standoff
    for _ in range(60):
        q = mdl.equilibrium_configuration(robot, q)
        p = mdl.ee_kinematics(robot, q).position
        if float(np.hypot(*(p - target))) < 1e-10:
            break
        shoulder = np.array(
            [q[0] - body * math.sin(q[1]), pivot + body * math.cos(q[1])]
        )
        r = target - shoulder
        c3 = (float(r @ r) - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
        if abs(c3) > 1.0:
            raise ValueError(
                f"target {target} out of reach from standoff {base_standoff}"
            )
        q3 = elbow * math.acos(c3)
        q[3] = q3
        q[2] = (
            math.atan2(r[1], r[0])
            - math.atan2(l2 * math.sin(q3), l1 + l2 * math.cos(q3))
            - q[1]
        )
    else:
        raise RuntimeError("grasp pose iteration did not converge")
    lo = np.asarray(robot.q_lower)
    hi = np.asarray(robot.q_upper)
    if np.any(q <= lo) or np.any(q >= hi):
        raise ValueError(f"grasp configuration {q} violates joint limits")
    return q


# ---------------------------------------------------------------------------
# Tasks: believed geometry and reference replanning
# ---------------------------------------------------------------------------


@dataclass
class Geometry:
    """Believed manipulation frame and contact coordinate at one tick."""

    v: np.ndarray
    x: float
    xd: float
    hinge: tuple[float, float] = (math.nan, math.nan)
    radius: float = math.nan


class LiftTask:
    """Vertical point-to-point lift of a rigidly grasped payload."""

    kind = "lift"
    units = "m"

    def __init__(self, cfg: dict, environment):
        self.height = float(cfg.get("height", 0.25))
        self.hold = float(cfg.get("hold", 0.3))
        self.v_max = float(cfg.get("v_max", 0.3))
        self.a_max = float(cfg.get("a_max", 0.8))
        self.standoff = float(cfg.get("standoff", 0.55))
        self.start = np.asarray(cfg.get("start", (0.55, 0.78)), dtype=float)
        self.v = np.array([0.0, 1.0])
        self.target = self.height
        self._phi0 = 0.0

    def setup(self, robot: RobotModel):
        q0 = grasp_configuration(robot, self.start, self.standoff)
        self._phi0 = mdl.ee_kinematics(robot, q0).orientation
        profile = traj.time_optimal_profile(
            0.0, self.height, 0.0, self.v_max, self.a_max, t_start=self.hold
        )
        reference = traj.LineReference(
            origin=self.start, direction=self.v, profile=profile,
            orientation=self._phi0,
        )
        return q0, reference

    def mpc_weights(self, robot: RobotModel):
        return default_weights(robot)

    def geometry(self, p_meas, v_meas) -> Geometry:
        x = float(self.v @ (np.asarray(p_meas, float) - self.start))
        return Geometry(v=self.v, x=x, xd=float(self.v @ v_meas))

    def truth_coordinate(self, p, v):
        return (
            float(self.v @ (np.asarray(p, float) - self.start)),
            float(self.v @ v),
        )

    def replan(self, t: float, reference):
        return reference

    def base_reference(self, ref_sample) -> float | None:
        return None

    def track_pair(self, ref_sample, x_true: float, geom: Geometry):
        return ref_sample.path.s, x_true


class DoorTask:
    """Door opening to a target angle along an estimated handle arc.

    The robot grasps the true handle; everything else the controller sees
    (hinge, radius, opening angle) comes from the recursive circle fit,
    which starts at the configured hinge prior with the radius chosen so
    the arc passes through the grasp point. The arc reference is rebuilt
    every tick from the believed geometry, with the speed profile
    re-planned from the previous reference's current state.
    """

    kind = "door"
    units = "deg"

    def __init__(self, cfg: dict, door: Door):
        if not isinstance(door, Door):
            raise TypeError("door task needs a Door environment")
        self.door = door
        self.target_rad = math.radians(float(cfg.get("target_deg", 70.0)))
        self.hold = float(cfg.get("hold", 0.4))
        self.v_max = float(cfg.get("v_max", 0.35))
        self.a_max = float(cfg.get("a_max", 0.8))
        self.standoff = float(cfg.get("standoff", 0.55))
        self.base_weight = float(cfg.get("base_weight", 2.0))
        self.open_sign = float(cfg.get("open_sign", door.open_sign))
        prior = cfg.get("prior_hinge", None)
        self._prior_center = (
            np.asarray(prior, dtype=float) if prior is not None
            else np.asarray(door.hinge, dtype=float)
        )
        self.target = math.degrees(self.target_rad)
        self.p_grasp = door.handle_position(door.angle0)
        self._prior_radius = float(np.hypot(*(self.p_grasp - self._prior_center)))
        self.tracker = HandleArcTracker(
            self._prior_center, self._prior_radius, **dict(cfg.get("tracker", {}))
        )
        self._phi0 = 0.0
        self._base_offset = 0.0

    def setup(self, robot: RobotModel):
        q0 = grasp_configuration(robot, self.p_grasp, self.standoff)
        self._phi0 = mdl.ee_kinematics(robot, q0).orientation
        self._base_offset = float(self.p_grasp[0] - q0[0])
        c, r = self._believed()
        profile = traj.time_optimal_profile(
            0.0, r * self.target_rad, 0.0, self.v_max, self.a_max, t_start=self.hold
        )
        reference = traj.ArcReference(
            center=c, radius=r, angle_origin=self._closed_angle(c),
            open_sign=self.open_sign, profile=profile, orientation=self._phi0,
        )
        return q0, reference

    def mpc_weights(self, robot: RobotModel):
        w = default_weights(robot)
        qss = np.asarray(w.qss, dtype=float)
        qss[0] = self.base_weight
        return replace(w, qss=tuple(qss))

    def _believed(self):
        return self.tracker.center, self.tracker.radius

    def _closed_angle(self, center) -> float:
        d = self.p_grasp - center
        return math.atan2(d[1], d[0])

    def _opening(self, p, center) -> float:
        d = np.asarray(p, dtype=float) - center
        return self.open_sign * wrap_angle(
            math.atan2(d[1], d[0]) - self._closed_angle(center)
        )

    def geometry(self, p_meas, v_meas) -> Geometry:
        self.tracker.update(np.asarray(p_meas, dtype=float))
        c, r = self._believed()
        d = np.asarray(p_meas, dtype=float) - c
        norm = float(np.hypot(d[0], d[1]))
        v_hat = self.open_sign * np.array([-d[1], d[0]]) / norm
        x_hat = r * self._opening(p_meas, c)
        return Geometry(
            v=v_hat, x=x_hat, xd=float(v_hat @ v_meas),
            hinge=(float(c[0]), float(c[1])), radius=r,
        )

    def replan(self, t: float, reference):
        c, r = self._believed()
        rs = reference.sample(t)
        s_now = r * self._opening(rs.position, c)
        profile = traj.time_optimal_profile(
            s_now, r * self.target_rad, rs.path.sd, self.v_max, self.a_max,
            t_start=max(t, self.hold),
        )
        return traj.ArcReference(
            center=c, radius=r, angle_origin=self._closed_angle(c),
            open_sign=self.open_sign, profile=profile, orientation=self._phi0,
        )

    def truth_coordinate(self, p, v):
        angle = self.door.angle_of(np.asarray(p, dtype=float))
        return (
            self.door.arc_length(angle),
            float(self.door.tangent(angle) @ v),
        )

    def base_reference(self, ref_sample) -> float | None:
        return float(ref_sample.position[0]) - self._base_offset

    def track_pair(self, ref_sample, x_true: float, geom: Geometry):
        des = math.degrees(ref_sample.path.s / geom.radius)
        true = math.degrees(x_true / self.door.radius)
        return des, true


def build_task(cfg: dict, environment):
    """Instantiate the task named by ``cfg['kind']``."""
    cfg = dict(cfg)
    kind = cfg.pop("kind")
    if kind == "door":
        return DoorTask(cfg, environment)
    if kind == "lift":
        return LiftTask(cfg, environment)
    raise ValueError(f"unknown task kind {kind!r}")


# ---------------------------------------------------------------------------
# Controller variants
# ---------------------------------------------------------------------------

VARIANT_KINDS = ("baseline_pd", "miac", "mrac")


class VariantController:
    """Per-episode state of one interaction-controller variant.

    ``baseline_pd`` commands a task-frame PD force and gives the MPC no
    environment model; ``miac`` keeps the PD force but identifies the
    contact impedance online and hands the estimate to the MPC; ``mrac``
    replaces the PD force with the adaptive force law and (by design)
    gives the MPC no environment model.
    """

    def __init__(self, kind: str, gains: dict | None, pi_true=None):
        if kind not in VARIANT_KINDS:
            raise ValueError(f"unknown controller kind {kind!r}")
        self.kind = kind
        g = dict(gains or {})
        self.force_pd = (
            VirtualForcePd(**dict(g.get("force_pd", {})))
            if kind in ("baseline_pd", "miac")
            else None
        )
        self.law = (
            AdaptiveForceLaw(**dict(g.get("adaptive", {}))) if kind == "mrac" else None
        )
        if kind == "miac":
            fg = dict(g.get("filter", {}))
            fg.setdefault("P0", np.diag([10.0, 10.0, 100.0, 25.0]))
            self.filter = ImpedanceKalmanFilter(**fg)
        else:
            self.filter = None
        # Pole of the low-pass applied to the identification signals. The
        # acceleration regressor comes from double-differenced encoders, so
        # the raw equation error is dominated by noise; filtering regressor
        # and measurement with the same pole leaves the regression relation
        # intact for constant parameters.
        self._w_f = float(g.get("filter_cutoff", 15.0))
        self._phi_f: np.ndarray | None = None
        self._lam_f = 0.0
        # Consecutive ticks share finite-difference and observer-lag errors,
        # which a least-squares update mistakes for signal. Feeding the
        # filter every Nth filtered sample decorrelates those errors and
        # keeps the covariance honest during the first grasp transient.
        self._decim = max(1, int(g.get("update_decim", 8)))
        self._grasp_ticks = 0
        self._pi_true = None if pi_true is None else np.asarray(pi_true, dtype=float)
        self._xd_prev: float | None = None

    @property
    def pi(self) -> np.ndarray:
        if self.filter is not None:
            return self.filter.params_vector
        if self.law is not None:
            return self.law.pi.copy()
        return np.full(4, np.nan)

    def update(self, grasped, geom: Geometry, rs, p_meas, v_meas, lam_hat, dt):
        """One control-tick update; returns (env_belief, f_ee, diagnostics)."""
        diag = {"sigma": math.nan, "lyap": math.nan,
                "f_adapt": math.nan, "f_pd": math.nan}
        if self.kind == "mrac":
            lam_cmd = self.law.force(
                geom.x, geom.xd, rs.path.s, rs.path.sd, rs.path.sdd, 0.0, dt
            )
            f_pd = self.law.k_s * self.law.sigma
            diag["sigma"] = self.law.sigma
            diag["f_adapt"] = lam_cmd - f_pd
            diag["f_pd"] = f_pd
            if self._pi_true is not None:
                diag["lyap"] = self.law.lyapunov(
                    self._pi_true, rs.path.s - geom.x, self.law.sigma
                )
            return None, lam_cmd * geom.v, diag
        f_ee = self.force_pd.force(geom.v, rs.position, rs.velocity, p_meas, v_meas)
        if self.kind == "baseline_pd":
            return None, f_ee, diag
        # miac: identify, then hand the belief to the MPC.
        xdd = 0.0 if self._xd_prev is None else (geom.xd - self._xd_prev) / dt
        self._xd_prev = geom.xd
        if grasped:
            phi = impedance_regressor(xdd, geom.xd, geom.x, 0.0)
            if self._phi_f is None:
                self._phi_f = np.asarray(phi, dtype=float)
                self._lam_f = lam_hat
            else:
                a = 1.0 - math.exp(-self._w_f * dt)
                self._phi_f = self._phi_f + a * (phi - self._phi_f)
                self._lam_f += a * (lam_hat - self._lam_f)
            self._grasp_ticks += 1
            if self._grasp_ticks % self._decim == 0:
                self.filter.update(self._phi_f, self._lam_f)
        frame = ProjectionFrame(
            v=tuple(geom.v), p_ref=tuple(np.asarray(p_meas, float)), x_ref=geom.x
        )
        belief = Environment(
            params=self.filter.params, frame=frame, x0=0.0, name="belief"
        )
        return belief, f_ee, diag


# ---------------------------------------------------------------------------
# Episode log
# ---------------------------------------------------------------------------


def log_columns(robot: RobotModel) -> tuple[str, ...]:
    n, m = robot.n, robot.m_act
    cols = ["t", "grasp"]
    cols += [f"q{i}" for i in range(n)]
    cols += [f"qd{i}" for i in range(n)]
    cols += [f"tau{i}" for i in range(m)]
    cols += [f"tau_meas{i}" for i in range(m)]
    cols += ["ee_x", "ee_y", "ee_phi", "ref_x", "ref_y", "s_des", "sd_des"]
    cols += ["x_true", "xd_true", "x_hat", "xd_hat"]
    cols += ["track_des", "track_true", "lam", "lam_hat"]
    cols += ["fee_x", "fee_y", "f_adapt", "f_pd"]
    cols += ["pi_m", "pi_b", "pi_k", "pi_fs", "sigma", "lyap"]
    cols += ["hinge_x", "hinge_y", "radius_hat", "drift", "radial_err"]
    cols += ["cost", "slq_iters", "converged"]
    cols += ["work_act", "e_robot", "e_env", "w_diss", "balance_err"]
    return tuple(cols)


class SimLog:
    """Per-tick time series of one episode, with fixed named columns.

    Values that do not apply to a task or variant hold NaN. The CSV form
    round-trips float64 exactly (%.17g), so metrics recomputed from a
    persisted log match the in-memory result bit for bit; the .npz form is
    the compact replay format.
    """

    def __init__(self, columns, data, meta=None):
        self.columns = tuple(columns)
        self.data = np.asarray(data, dtype=float).reshape(-1, len(self.columns))
        self.meta = dict(meta or {})
        self._index = {c: i for i, c in enumerate(self.columns)}

    def __len__(self) -> int:
        return self.data.shape[0]

    def __getitem__(self, column: str) -> np.ndarray:
        return self.data[:, self._index[column]]

    def to_csv(self, path) -> None:
        np.savetxt(
            path, self.data, fmt="%.17g", delimiter=",",
            header=",".join(self.columns), comments="",
        )

    @classmethod
    def read_csv(cls, path, meta=None) -> "SimLog":
        with open(path) as f:
            columns = f.readline().strip().split(",")
            rows = [
                [float(v) for v in line.split(",")] for line in f if line.strip()
            ]
        data = np.asarray(rows, dtype=float) if rows else np.zeros((0, len(columns)))
        return cls(columns, data, meta)

    def save(self, path) -> None:
        np.savez_compressed(
            path, data=self.data, columns=np.asarray(self.columns),
            meta=json.dumps(self.meta, sort_keys=True),
        )

    @classmethod
    def load(cls, path) -> "SimLog":
        with np.load(path, allow_pickle=False) as z:
            return cls(
                [str(c) for c in z["columns"]], z["data"],
                json.loads(str(z["meta"])),
            )


# ---------------------------------------------------------------------------
# Episode driver
# ---------------------------------------------------------------------------


def _resolve_robot(spec) -> RobotModel:
    if spec is None:
        return mdl.balancing_manipulator()
    if isinstance(spec, RobotModel):
        return spec
    return model_from_config(dict(spec))


def _resolve_environment(spec):
    if spec is None or isinstance(spec, (Door, Environment)):
        return spec
    return environment_from_config(dict(spec))


def run_episode(scenario, controller, config: SimConfig) -> SimLog:
    """Simulate one closed-loop episode.

    ``scenario`` provides name, robot, environment, task and duration;
    ``controller`` provides kind and gains (see VariantController). The
    result is deterministic in (scenario, controller, config.seed); any
    failure is re-raised as EpisodeError with the episode identity.
    """
    try:
        return _run_episode(scenario, controller, config)
    except EpisodeError as exc:
        raise type(exc)(_context(scenario, controller, config, exc)) from exc
    except Exception as exc:  # noqa: BLE001 - annotate with episode identity
        raise EpisodeError(_context(scenario, controller, config, exc)) from exc


def _context(scenario, controller, config, exc) -> str:
    name = getattr(scenario, "name", "scenario")
    kind = getattr(controller, "kind", "controller")
    return f"{name}/{kind}/seed{config.seed}: {exc}"


def _run_episode(scenario, controller, config: SimConfig) -> SimLog:
    robot = _resolve_robot(scenario.robot)
    environment = _resolve_environment(scenario.environment)
    task = build_task(dict(scenario.task), environment)
    duration = float(scenario.duration)

    rng = np.random.default_rng(config.seed)
    dt = config.dt_physics
    t_s = config.control_period
    n_sub = config.substeps
    n_ticks = int(round(duration * config.control_rate))
    n, m = robot.n, robot.m_act
    enc_std = config.noise.encoder_std
    tau_std = config.noise.torque_std

    q0, reference = task.setup(robot)
    x = np.concatenate([q0, np.zeros(n)])
    p_true = mdl.ee_kinematics(robot, q0).position
    coupling = make_coupling(environment, p_true)
    grasped = coupling is not None

    gains = dict(getattr(controller, "gains", None) or {})
    pi_true = coupling.params.vector() if grasped else None
    variant = VariantController(controller.kind, gains, pi_true)
    mpc = WholeBodyMpc(robot, weights=task.mpc_weights(robot), **gains.get("mpc", {}))
    mpc.xss_nominal[:n] = q0
    inner = (
        TorqueTrackingPd(**gains["inner"]) if "inner" in gains
        else default_torque_pd(robot)
    )
    observer = MomentumObserver(
        robot, gain=float(gains.get("observer_gain", 40.0)), dt=t_s
    )
    viscous = np.asarray(robot.viscous, dtype=float)

    # Phantom encoder reading one period before the start (robot at rest).
    enc_prev = q0 + rng.normal(0.0, enc_std, n)
    tau_window = np.zeros(m)
    lam_hat = 0.0
    e_robot0 = mdl.kinetic_energy(robot, x[:n], x[n:]) + mdl.potential_energy(
        robot, x[:n]
    )
    e_env0 = _env_energy(coupling, p_true, np.zeros(2))
    work_act = 0.0
    w_diss = 0.0

    columns = log_columns(robot)
    rows = np.zeros((n_ticks, len(columns)))

    for k in range(n_ticks):
        t = k * t_s
        # 1. measurements
        enc = x[:n] + rng.normal(0.0, enc_std, n)
        qd_meas = (enc - enc_prev) / t_s
        tau_meas = tau_window + rng.normal(0.0, tau_std, m)
        enc_prev = enc
        p_meas = mdl.ee_kinematics(robot, enc).position
        v_meas = mdl.ee_velocity(robot, enc, qd_meas)
        # 2. external force estimate
        tau_ext = observer.update(enc, qd_meas, tau_meas)
        # 3. believed task geometry
        geom = task.geometry(p_meas, v_meas)
        try:
            _, fee_vec = extract_ee_force(robot, enc, tau_ext)
            lam_hat = float(geom.v @ fee_vec)
        except ForceExtractionError:
            pass  # hold the previous estimate through the singularity
        # 4. reference replanning
        reference = task.replan(t, reference)
        rs = reference.sample(t)
        # 5. controller variant
        env_belief, f_ee, diag = variant.update(
            grasped, geom, rs, p_meas, v_meas, lam_hat, t_s
        )
        base_ref = task.base_reference(rs)
        if base_ref is not None:
            mpc.xss_nominal[0] = base_ref
        # 6. MPC solve from the measured state
        plan = mpc.tick(t, np.concatenate([enc, qd_meas]), reference,
                        env_belief, tuple(f_ee))
        # truth bookkeeping at the tick time, before advancing
        p_true = mdl.ee_kinematics(robot, x[:n]).position
        v_true = mdl.ee_velocity(robot, x[:n], x[n:])
        if grasped:
            x_true = coupling.coordinate(p_true)
            xd_true = float(coupling.direction(p_true) @ v_true)
            radial = coupling.radial_error(p_true)
        else:
            x_true, xd_true = task.truth_coordinate(p_true, v_true)
            radial = 0.0
        e_robot = mdl.kinetic_energy(robot, x[:n], x[n:]) + mdl.potential_energy(
            robot, x[:n]
        )
        e_env = _env_energy(coupling, p_true, v_true)
        balance = work_act - (e_robot - e_robot0) - (e_env - e_env0) - w_diss
        track_des, track_true = task.track_pair(rs, x_true, geom)
        ee_meas_pose = mdl.ee_kinematics(robot, enc)
        # 7. physics substeps under the torque-tracking PD
        lam_tick = 0.0
        drift_max = 0.0
        tau_sum = np.zeros(m)
        tau_first = np.zeros(m)
        xd_pre, rd_pre = _contact_rates(robot, coupling, x)
        for j in range(n_sub):
            q_star, qd_star, tau_star = plan.sample(t + j * dt)
            tau_cmd = apply_torque_tracking(
                robot, inner, tau_star, q_star, qd_star, x[:n], x[n:]
            )
            qd_pre = x[n:].copy()
            x_new, lam, drift = step(robot, coupling, x, tau_cmd, dt)
            qd_post = x_new[n:]
            xd_post, rd_post = _contact_rates(robot, coupling, x_new)
            work_act += 0.5 * dt * float(tau_cmd @ (robot.S @ (qd_pre + qd_post)))
            w_diss += 0.5 * dt * float(
                viscous @ (qd_pre * qd_pre + qd_post * qd_post)
            )
            if grasped:
                b, fs = coupling.params.b, coupling.params.f_s
                w_diss += 0.5 * dt * (
                    (b * xd_pre + fs) * xd_pre + (b * xd_post + fs) * xd_post
                )
                w_diss += 0.5 * dt * coupling.d_pin * (
                    rd_pre * rd_pre + rd_post * rd_post
                )
            x = x_new
            xd_pre, rd_pre = xd_post, rd_post
            tau_sum += tau_cmd
            if j == 0:
                lam_tick = lam
                tau_first = tau_cmd
            drift_max = max(drift_max, drift)
            if not np.isfinite(x).all() or float(np.abs(x[n:]).max()) > 1e3:
                raise EpisodeError(f"state diverged at t={t + j * dt:.3f}s")
        tau_window = tau_sum / n_sub
        # 8. the log row describes the tick time t
        rows[k] = np.concatenate([
            [t, float(grasped)], enc, qd_meas, tau_first, tau_meas,
            [ee_meas_pose.position[0], ee_meas_pose.position[1],
             ee_meas_pose.orientation, rs.position[0], rs.position[1],
             rs.path.s, rs.path.sd,
             x_true, xd_true, geom.x, geom.xd,
             track_des, track_true, lam_tick, lam_hat,
             f_ee[0], f_ee[1], diag["f_adapt"], diag["f_pd"]],
            variant.pi,
            [diag["sigma"], diag["lyap"],
             geom.hinge[0], geom.hinge[1], geom.radius, drift_max, radial,
             plan.cost, plan.iterations, float(plan.converged),
             work_act, e_robot, e_env, w_diss, balance],
        ])

    meta = {
        "scenario": getattr(scenario, "name", "scenario"),
        "controller": controller.kind,
        "seed": int(config.seed),
        "task": task.kind,
        "units": task.units,
        "target": float(task.target),
        "hold": float(task.hold),
        "duration": duration,
        "control_rate": config.control_rate,
        "dt_physics": dt,
        "torque_std": tau_std,
        "encoder_std": enc_std,
    }
    return SimLog(columns, rows, meta)


def _contact_rates(robot, coupling, x) -> tuple[float, float]:
    """Tangential and radial end-effector rates in the true contact frame."""
    if coupling is None:
        return 0.0, 0.0
    n = robot.n
    p = mdl.ee_kinematics(robot, x[:n]).position
    v = mdl.ee_velocity(robot, x[:n], x[n:])
    return float(coupling.direction(p) @ v), coupling.radial_rate(p, v)


def _env_energy(coupling, p_ee, v_ee) -> float:
    if coupling is None:
        return 0.0
    pars = coupling.params
    x = coupling.coordinate(p_ee)
    xd = float(coupling.direction(p_ee) @ np.asarray(v_ee, dtype=float))
    return (
        0.5 * pars.m * xd * xd
        + 0.5 * pars.k * (x - coupling.x0) ** 2
        + coupling.pin_energy(p_ee)
    )
