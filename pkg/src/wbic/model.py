"""Planar rigid-body model of a mobile manipulator.

The robot is a serial chain of prismatic and revolute joints moving in a
vertical plane. Everything needed by the controller and simulator is exposed
in closed form: mass matrix, bias forces (Coriolis/centrifugal + gravity +
viscous friction), end-effector kinematics and Jacobians, and forward
dynamics under an end-effector interaction force.

Two stock robots are provided: a balancing mobile manipulator (actuated base
translation, unactuated body pitch, two arm joints) and a fully actuated
fixed-base two-link arm used in unit tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class SingularMassMatrixError(RuntimeError):
    """Mass matrix condition number exceeded the configured bound."""


PRISMATIC = 0
REVOLUTE = 1

_JOINT_KINDS = {"prismatic": PRISMATIC, "revolute": REVOLUTE}


@dataclass(frozen=True)
class JointSpec:
    """One joint of the planar chain.

    ``offset`` locates the joint origin in the parent link frame; prismatic
    joints translate along ``axis`` (unit vector in the parent frame).
    """

    kind: str
    offset: tuple[float, float] = (0.0, 0.0)
    axis: tuple[float, float] = (1.0, 0.0)

    def __post_init__(self):
        if self.kind not in _JOINT_KINDS:
            raise ValueError(f"unknown joint kind {self.kind!r}")
        if self.kind == "prismatic":
            norm = math.hypot(*self.axis)
            if abs(norm - 1.0) > 1e-9:
                raise ValueError("prismatic axis must be a unit vector")


@dataclass(frozen=True)
class LinkSpec:
    """Inertial properties of one link, expressed in its own frame."""

    mass: float
    com: tuple[float, float]
    inertia: float

    def __post_init__(self):
        if self.mass < 0.0 or self.inertia < 0.0:
            raise ValueError("mass and inertia must be non-negative")


@dataclass(frozen=True)
class RobotState:
    """Generalized positions and velocities."""

    q: np.ndarray
    qd: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        object.__setattr__(self, "qd", np.asarray(self.qd, dtype=float))
        if self.q.shape != self.qd.shape or self.q.ndim != 1:
            raise ValueError("q and qd must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.qd))):
            raise ValueError("state entries must be finite")

    @property
    def x(self) -> np.ndarray:
        """Stacked state vector (q, qd)."""
        return np.concatenate([self.q, self.qd])


@dataclass(frozen=True)
class ControlInput:
    """Actuator torques/forces (length m_act)."""

    tau: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "tau", np.asarray(self.tau, dtype=float))
        if not np.all(np.isfinite(self.tau)):
            raise ValueError("torques must be finite")


@dataclass(frozen=True)
class EePose:
    """Planar end-effector pose: position and orientation in (-pi, pi]."""

    position: np.ndarray
    orientation: float


@dataclass(frozen=True)
class RobotModel:
    """Planar serial-chain robot.

    ``actuated`` lists the generalized coordinates driven by an actuator;
    the selection matrix S (m_act x n) is derived from it. ``n_base`` counts
    the leading base coordinates (used by the augmented-Jacobian force
    decomposition).
    """

    joints: tuple[JointSpec, ...]
    links: tuple[LinkSpec, ...]
    ee_offset: tuple[float, float]
    actuated: tuple[int, ...]
    n_base: int
    gravity: float = 9.81
    viscous: tuple[float, ...] = ()
    tau_max: tuple[float, ...] = ()
    q_lower: tuple[float, ...] = ()
    q_upper: tuple[float, ...] = ()
    cond_bound: float = 1e12
    name: str = "robot"
    _params: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.joints)
        if len(self.links) != n:
            raise ValueError("need exactly one link per joint")
        if not self.viscous:
            object.__setattr__(self, "viscous", (0.01,) * n)
        if len(self.viscous) != n:
            raise ValueError("viscous friction needs one coefficient per joint")
        if any(i < 0 or i >= n for i in self.actuated):
            raise ValueError("actuated indices out of range")
        if len(set(self.actuated)) != len(self.actuated):
            raise ValueError("duplicate actuated index")
        if not self.tau_max:
            object.__setattr__(self, "tau_max", (float("inf"),) * len(self.actuated))
        if len(self.tau_max) != len(self.actuated):
            raise ValueError("tau_max needs one entry per actuator")
        if not self.q_lower:
            object.__setattr__(self, "q_lower", (-float("inf"),) * n)
            object.__setattr__(self, "q_upper", (float("inf"),) * n)
        object.__setattr__(self, "_params", _pack_params(self))

    @property
    def n(self) -> int:
        return len(self.joints)

    @property
    def m_act(self) -> int:
        return len(self.actuated)

    @property
    def S(self) -> np.ndarray:
        """Actuation selection matrix, m_act x n."""
        S = np.zeros((self.m_act, self.n))
        for row, idx in enumerate(self.actuated):
            S[row, idx] = 1.0
        return S

    @property
    def params(self) -> np.ndarray:
        """Flat parameter vector consumed by the compiled kernels."""
        return self._params

    def torque_limits(self) -> np.ndarray:
        return np.asarray(self.tau_max, dtype=float)


def _pack_params(model: RobotModel) -> np.ndarray:
    """Pack the chain description into a flat float array for the kernels.

    Layout: [n, m_act, gravity, ee_off(2)] then per joint
    [kind, off(2), axis(2)], per link [mass, com(2), inertia, viscous],
    then the actuated index list.
    """
    n, m = model.n, model.m_act
    out = [float(n), float(m), model.gravity, *model.ee_offset]
    for j in model.joints:
        out.extend([float(_JOINT_KINDS[j.kind]), *j.offset, *j.axis])
    for i, link in enumerate(model.links):
        out.extend([link.mass, *link.com, link.inertia, model.viscous[i]])
    out.extend(float(i) for i in model.actuated)
    return np.asarray(out, dtype=float)


def _rot(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def _perp(v):
    """90-degree counter-clockwise rotation (z cross v in the plane)."""
    return np.array([-v[1], v[0]])


def _forward_pass(model: RobotModel, q, qd=None):
    """Position (and optionally velocity) sweep along the chain.

    Returns joint origins, link angles, COM positions, link angular rates
    and COM velocities (zeros when qd is None), all in world coordinates.
    """
    n = model.n
    if qd is None:
        qd = np.zeros(n)
    p = np.zeros(2)
    v = np.zeros(2)
    phi = 0.0
    omega = 0.0
    joint_pos = np.zeros((n, 2))
    joint_vel = np.zeros((n, 2))
    link_phi = np.zeros(n)
    link_omega = np.zeros(n)
    com_pos = np.zeros((n, 2))
    com_vel = np.zeros((n, 2))
    for i, joint in enumerate(model.joints):
        R = _rot(phi)
        if joint.kind == "prismatic":
            axis_w = R @ np.asarray(joint.axis)
            r = R @ np.asarray(joint.offset) + axis_w * q[i]
            p = p + r
            v = v + omega * _perp(r) + axis_w * qd[i]
        else:
            r = R @ np.asarray(joint.offset)
            p = p + r
            v = v + omega * _perp(r)
            phi = phi + q[i]
            omega = omega + qd[i]
        joint_pos[i] = p
        joint_vel[i] = v
        link_phi[i] = phi
        link_omega[i] = omega
        rc = _rot(phi) @ np.asarray(model.links[i].com)
        com_pos[i] = p + rc
        com_vel[i] = v + omega * _perp(rc)
    return joint_pos, joint_vel, link_phi, link_omega, com_pos, com_vel


def _point_jacobian(model: RobotModel, q, point, link_index, joint_pos, link_phi):
    """Jacobian of a world-frame point rigidly attached to ``link_index``."""
    J = np.zeros((2, model.n))
    for j in range(link_index + 1):
        joint = model.joints[j]
        if joint.kind == "revolute":
            J[:, j] = _perp(point - joint_pos[j])
        else:
            phi_parent = link_phi[j - 1] if j > 0 else 0.0
            J[:, j] = _rot(phi_parent) @ np.asarray(joint.axis)
    return J


def _angular_jacobian(model: RobotModel, link_index) -> np.ndarray:
    jw = np.zeros(model.n)
    for j in range(link_index + 1):
        if model.joints[j].kind == "revolute":
            jw[j] = 1.0
    return jw


def _velocity_product_accels(model: RobotModel, q, qd):
    """COM accelerations for qdd = 0 (centrifugal and Coriolis terms only)."""
    joint_pos, joint_vel, link_phi, link_omega, com_pos, com_vel = _forward_pass(
        model, q, qd
    )
    n = model.n
    acc = np.zeros((n, 2))
    a = np.zeros(2)
    omega = 0.0
    phi = 0.0
    for i, joint in enumerate(model.joints):
        R = _rot(phi)
        if joint.kind == "prismatic":
            axis_w = R @ np.asarray(joint.axis)
            r = R @ np.asarray(joint.offset) + axis_w * q[i]
            a = a - omega * omega * r + 2.0 * omega * qd[i] * _perp(axis_w)
        else:
            r = R @ np.asarray(joint.offset)
            a = a - omega * omega * r
            phi = phi + q[i]
            omega = omega + qd[i]
        rc = _rot(phi) @ np.asarray(model.links[i].com)
        acc[i] = a - omega * omega * rc
    return acc, com_pos, joint_pos, link_phi


def mass_matrix(model: RobotModel, q) -> np.ndarray:
    """Joint-space mass matrix M(q), symmetric positive definite."""
    q = np.asarray(q, dtype=float)
    joint_pos, _, link_phi, _, com_pos, _ = _forward_pass(model, q)
    n = model.n
    M = np.zeros((n, n))
    for i, link in enumerate(model.links):
        Jv = _point_jacobian(model, q, com_pos[i], i, joint_pos, link_phi)
        jw = _angular_jacobian(model, i)
        M += link.mass * Jv.T @ Jv + link.inertia * np.outer(jw, jw)
    return 0.5 * (M + M.T)


def bias_terms(model: RobotModel, q, qd) -> np.ndarray:
    """Coriolis/centrifugal + gravity + viscous friction generalized forces.

    Returned with the sign convention M(q) qdd + bias = generalized force.
    """
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    acc_vp, com_pos, joint_pos, link_phi = _velocity_product_accels(model, q, qd)
    g_vec = np.array([0.0, model.gravity])
    bias = np.zeros(model.n)
    for i, link in enumerate(model.links):
        Jv = _point_jacobian(model, q, com_pos[i], i, joint_pos, link_phi)
        bias += link.mass * Jv.T @ (acc_vp[i] + g_vec)
    bias += np.asarray(model.viscous) * qd
    return bias


def gravity_vector(model: RobotModel, q) -> np.ndarray:
    """Generalized gravity force (bias at zero velocity, friction excluded)."""
    return bias_terms(model, q, np.zeros(model.n))


def ee_kinematics(model: RobotModel, q) -> EePose:
    """End-effector pose; the orientation is the last link angle, wrapped."""
    q = np.asarray(q, dtype=float)
    joint_pos, _, link_phi, _, _, _ = _forward_pass(model, q)
    pos = joint_pos[-1] + _rot(link_phi[-1]) @ np.asarray(model.ee_offset)
    return EePose(position=pos, orientation=wrap_angle(link_phi[-1]))


def ee_jacobian(model: RobotModel, q) -> np.ndarray:
    """2 x n position Jacobian of the end-effector point."""
    q = np.asarray(q, dtype=float)
    joint_pos, _, link_phi, _, _, _ = _forward_pass(model, q)
    pos = joint_pos[-1] + _rot(link_phi[-1]) @ np.asarray(model.ee_offset)
    return _point_jacobian(model, q, pos, model.n - 1, joint_pos, link_phi)


def ee_velocity(model: RobotModel, q, qd) -> np.ndarray:
    return ee_jacobian(model, q) @ np.asarray(qd, dtype=float)


def ee_drift_acceleration(model: RobotModel, q, qd) -> np.ndarray:
    """End-effector acceleration at qdd = 0, i.e. dJ/dt * qd."""
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    a = np.zeros(2)
    omega = 0.0
    phi = 0.0
    for i, joint in enumerate(model.joints):
        R = _rot(phi)
        if joint.kind == "prismatic":
            axis_w = R @ np.asarray(joint.axis)
            r = R @ np.asarray(joint.offset) + axis_w * q[i]
            a = a - omega * omega * r + 2.0 * omega * qd[i] * _perp(axis_w)
        else:
            r = R @ np.asarray(joint.offset)
            a = a - omega * omega * r
            phi = phi + q[i]
            omega = omega + qd[i]
    r_ee = _rot(phi) @ np.asarray(model.ee_offset)
    return a - omega * omega * r_ee


def base_jacobian(model: RobotModel, q=None) -> np.ndarray:
    """Jacobian selecting the base coordinates: [I_nb, 0]."""
    J = np.zeros((model.n_base, model.n))
    J[:, : model.n_base] = np.eye(model.n_base)
    return J


def kinetic_energy(model: RobotModel, q, qd) -> float:
    _, _, _, link_omega, _, com_vel = _forward_pass(
        model, np.asarray(q, float), np.asarray(qd, float)
    )
    T = 0.0
    for i, link in enumerate(model.links):
        T += 0.5 * link.mass * float(com_vel[i] @ com_vel[i])
        T += 0.5 * link.inertia * float(link_omega[i] ** 2)
    return T


def potential_energy(model: RobotModel, q) -> float:
    _, _, _, _, com_pos, _ = _forward_pass(model, np.asarray(q, float))
    return model.gravity * sum(
        link.mass * com_pos[i, 1] for i, link in enumerate(model.links)
    )


def total_energy(model: RobotModel, state: RobotState) -> float:
    return kinetic_energy(model, state.q, state.qd) + potential_energy(model, state.q)


def kinetic_energy_gradient(model: RobotModel, q, qd) -> np.ndarray:
    """dT/dq at fixed qd, exact to machine precision via complex step.

    The chain kinematics are analytic in q, so a complex-step derivative
    avoids the truncation error of finite differences. Needed by the
    momentum observer, where a biased gradient would bias the force
    estimate.
    """
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    h = 1e-200
    grad = np.zeros(model.n)
    for k in range(model.n):
        qc = q.astype(complex)
        qc[k] += 1j * h
        grad[k] = _kinetic_energy_complex(model, qc, qd).imag / h
    return grad


def _kinetic_energy_complex(model: RobotModel, q, qd):
    p = np.zeros(2, dtype=complex)
    v = np.zeros(2, dtype=complex)
    phi = 0.0 + 0.0j
    omega = 0.0
    T = 0.0 + 0.0j
    for i, joint in enumerate(model.joints):
        c, s = np.cos(phi), np.sin(phi)
        R = np.array([[c, -s], [s, c]])
        if joint.kind == "prismatic":
            axis_w = R @ np.asarray(joint.axis)
            r = R @ np.asarray(joint.offset) + axis_w * q[i]
            p = p + r
            v = v + omega * np.array([-r[1], r[0]]) + axis_w * qd[i]
        else:
            r = R @ np.asarray(joint.offset)
            p = p + r
            v = v + omega * np.array([-r[1], r[0]])
            phi = phi + q[i]
            omega = omega + qd[i]
        c, s = np.cos(phi), np.sin(phi)
        rc = np.array([[c, -s], [s, c]]) @ np.asarray(model.links[i].com)
        vc = v + omega * np.array([-rc[1], rc[0]])
        T = T + 0.5 * model.links[i].mass * (vc[0] ** 2 + vc[1] ** 2)
        T = T + 0.5 * model.links[i].inertia * omega**2
    return T


def forward_dynamics(
    model: RobotModel, state: RobotState, u: ControlInput, f_ext_ee=None
) -> np.ndarray:
    """Joint accelerations under actuation and an end-effector force.

    ``f_ext_ee`` is the operational-space force the robot applies to its
    surroundings; its reaction loads the robot, so the balance is
    M qdd = S^T tau - bias - J_ee^T f_ext_ee.
    """
    M = mass_matrix(model, state.q)
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > model.cond_bound:
        raise SingularMassMatrixError(
            f"mass matrix condition number {cond:.3e} exceeds {model.cond_bound:.1e}"
        )
    rhs = model.S.T @ u.tau - bias_terms(model, state.q, state.qd)
    if f_ext_ee is not None:
        rhs = rhs - ee_jacobian(model, state.q).T @ np.asarray(f_ext_ee, dtype=float)
    return np.linalg.solve(M, rhs)


def wrap_angle(theta: float) -> float:
    """Wrap to (-pi, pi]."""
    wrapped = math.remainder(float(theta), 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


def equilibrium_configuration(
    model: RobotModel, q, tol: float = 1e-12, max_iter: int = 60
) -> np.ndarray:
    """Rest configuration with zero gravity load on the unactuated joints.

    Holds the actuated coordinates of ``q`` fixed and adjusts the
    unactuated ones (Newton on the gravity vector) until the system can
    rest without accelerating them. Raises RuntimeError if the iteration
    does not converge, e.g. when the requested arm pose cannot be balanced.
    """
    q = np.asarray(q, dtype=float).copy()
    free = [i for i in range(model.n) if i not in model.actuated]
    if not free:
        return q
    eps = 1e-7
    for _ in range(max_iter):
        g = gravity_vector(model, q)[free]
        if np.max(np.abs(g)) < tol:
            return q
        Jg = np.empty((len(free), len(free)))
        for c, j in enumerate(free):
            qp = q.copy()
            qm = q.copy()
            qp[j] += eps
            qm[j] -= eps
            Jg[:, c] = (
                gravity_vector(model, qp)[free] - gravity_vector(model, qm)[free]
            ) / (2.0 * eps)
        try:
            step = np.linalg.solve(Jg, g)
        except np.linalg.LinAlgError as exc:
            raise RuntimeError("gravity balance Newton step is singular") from exc
        step_max = np.max(np.abs(step))
        if step_max > 0.5:
            step *= 0.5 / step_max
        q[free] -= step
    raise RuntimeError("gravity balance did not converge")


# ---------------------------------------------------------------------------
# Stock models
# ---------------------------------------------------------------------------


def balancing_manipulator(
    base_mass: float = 18.0,
    base_com_height: float = 0.12,
    pivot_height: float = 0.2,
    body_mass: float = 22.0,
    body_com: float = 0.45,
    body_length: float = 0.85,
    body_inertia: float = 1.4,
    arm1_mass: float = 2.5,
    arm1_length: float = 0.5,
    arm1_inertia: float = 0.06,
    arm2_mass: float = 1.8,
    arm2_length: float = 0.45,
    arm2_inertia: float = 0.035,
    gravity: float = 9.81,
    viscous: tuple[float, float, float, float] = (0.01, 0.01, 0.01, 0.01),
    tau_max: tuple[float, float, float] = (120.0, 60.0, 35.0),
) -> RobotModel:
    """Balancing mobile manipulator: cart + unactuated pitch + 2-link arm.

    Coordinates: q = (base translation, body pitch, shoulder, elbow); the
    pitch joint carries no actuator, so balance must come from base motion.
    """
    joints = (
        JointSpec("prismatic", offset=(0.0, 0.0), axis=(1.0, 0.0)),
        JointSpec("revolute", offset=(0.0, pivot_height)),
        JointSpec("revolute", offset=(0.0, body_length)),
        JointSpec("revolute", offset=(arm1_length, 0.0)),
    )
    links = (
        LinkSpec(base_mass, (0.0, base_com_height - 0.0), 0.2),
        LinkSpec(body_mass, (0.0, body_com), body_inertia),
        LinkSpec(arm1_mass, (arm1_length / 2.0, 0.0), arm1_inertia),
        LinkSpec(arm2_mass, (arm2_length / 2.0, 0.0), arm2_inertia),
    )
    return RobotModel(
        joints=joints,
        links=links,
        ee_offset=(arm2_length, 0.0),
        actuated=(0, 2, 3),
        n_base=2,
        gravity=gravity,
        viscous=viscous,
        tau_max=tau_max,
        q_lower=(-3.0, -0.6, -2.6, -2.9),
        q_upper=(3.0, 0.6, 2.6, 2.9),
        name="balancing_manipulator",
    )


def two_link_arm(
    m1: float = 1.5,
    m2: float = 1.0,
    l1: float = 0.5,
    l2: float = 0.4,
    inertia1: float = 0.03,
    inertia2: float = 0.02,
    gravity: float = 9.81,
    viscous: tuple[float, float] = (0.01, 0.01),
    tau_max: tuple[float, float] = (30.0, 20.0),
) -> RobotModel:
    """Fully actuated fixed-base two-link arm (shoulder at the origin)."""
    joints = (
        JointSpec("revolute", offset=(0.0, 0.0)),
        JointSpec("revolute", offset=(l1, 0.0)),
    )
    links = (
        LinkSpec(m1, (l1 / 2.0, 0.0), inertia1),
        LinkSpec(m2, (l2 / 2.0, 0.0), inertia2),
    )
    return RobotModel(
        joints=joints,
        links=links,
        ee_offset=(l2, 0.0),
        actuated=(0, 1),
        n_base=0,
        gravity=gravity,
        viscous=viscous,
        tau_max=tau_max,
        q_lower=(-3.1, -3.1),
        q_upper=(3.1, 3.1),
        name="two_link_arm",
    )


def point_mass_pendulum(
    mass: float = 1.0, length: float = 1.0, gravity: float = 9.81
) -> RobotModel:
    """Single point-mass pendulum, handy for analytic checks."""
    joints = (JointSpec("revolute", offset=(0.0, 0.0)),)
    links = (LinkSpec(mass, (length, 0.0), 0.0),)
    return RobotModel(
        joints=joints,
        links=links,
        ee_offset=(length, 0.0),
        actuated=(0,),
        n_base=0,
        gravity=gravity,
        viscous=(0.0,),
        tau_max=(50.0,),
        name="point_mass_pendulum",
    )


def model_from_config(cfg: dict) -> RobotModel:
    """Build a RobotModel from a parsed config mapping.

    Either ``preset: balancing_manipulator | two_link_arm`` with optional
    keyword overrides, or an explicit chain under ``joints``/``links``.
    """
    cfg = dict(cfg)
    preset = cfg.pop("preset", None)
    if preset is not None:
        factory = {
            "balancing_manipulator": balancing_manipulator,
            "two_link_arm": two_link_arm,
            "point_mass_pendulum": point_mass_pendulum,
        }.get(preset)
        if factory is None:
            raise ValueError(f"unknown robot preset {preset!r}")
        kwargs = {k: _as_number_or_tuple(v) for k, v in cfg.items()}
        return factory(**kwargs)
    joints = tuple(
        JointSpec(
            j["kind"],
            tuple(j.get("offset", (0.0, 0.0))),
            tuple(j.get("axis", (1.0, 0.0))),
        )
        for j in cfg["joints"]
    )
    links = tuple(
        LinkSpec(l["mass"], tuple(l["com"]), l["inertia"]) for l in cfg["links"]
    )
    return RobotModel(
        joints=joints,
        links=links,
        ee_offset=tuple(cfg["ee_offset"]),
        actuated=tuple(cfg["actuated"]),
        n_base=int(cfg.get("n_base", 0)),
        gravity=float(cfg.get("gravity", 9.81)),
        viscous=tuple(cfg.get("viscous", ())),
        tau_max=tuple(cfg.get("tau_max", ())),
        q_lower=tuple(cfg.get("q_lower", ())),
        q_upper=tuple(cfg.get("q_upper", ())),
        name=cfg.get("name", "robot"),
    )


def _as_number_or_tuple(v):
    if isinstance(v, (list, tuple)):
        return tuple(float(x) for x in v)
    return float(v)
