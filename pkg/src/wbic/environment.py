"""Linear-impedance environment models and the 1-D interaction projection.

An environment is a mass-damper-spring with a static force offset acting
along a single direction: the force the robot must apply to move it is

    lam = m xdd + b xd + k (x - x0) + f_s

where x is the scalar interaction coordinate. A ProjectionFrame maps the
planar end-effector position onto x and the scalar force back onto a world
force. Articulated environments (a door swinging about a hinge) are handled
by rebasing the frame along the motion: the impedance parameters projected
to the handle are constant, only the direction rotates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

GRAVITY = 9.81


@dataclass(frozen=True)
class ImpedanceParams:
    """(m, b, k, f_s): inertia, damping, stiffness, static force offset."""

    m: float = 0.0
    b: float = 0.0
    k: float = 0.0
    f_s: float = 0.0

    def vector(self) -> np.ndarray:
        return np.array([self.m, self.b, self.k, self.f_s])

    @staticmethod
    def from_vector(pi) -> "ImpedanceParams":
        m, b, k, f_s = (float(v) for v in pi)
        return ImpedanceParams(m, b, k, f_s)

    def force(self, x: float, xd: float, xdd: float, x0: float = 0.0) -> float:
        """Force the robot applies along the projection to realize (x, xd, xdd)."""
        return self.m * xdd + self.b * xd + self.k * (x - x0) + self.f_s


@dataclass(frozen=True)
class ProjectionFrame:
    """Maps planar end-effector motion onto the scalar interaction coordinate.

    x = x_ref + v . (p - p_ref); forces act along the unit direction v.
    """

    v: tuple[float, float]
    p_ref: tuple[float, float]
    x_ref: float = 0.0

    def __post_init__(self):
        norm = math.hypot(*self.v)
        if abs(norm - 1.0) > 1e-9:
            raise ValueError("projection direction must be a unit vector")

    def coordinate(self, p) -> float:
        p = np.asarray(p, dtype=float)
        return self.x_ref + float(np.asarray(self.v) @ (p - np.asarray(self.p_ref)))

    def rate(self, p_dot) -> float:
        return float(np.asarray(self.v) @ np.asarray(p_dot, dtype=float))

    def force_world(self, lam: float) -> np.ndarray:
        return lam * np.asarray(self.v)

    def rebased(self, v_new, p_new, x_now: float) -> "ProjectionFrame":
        """New frame whose coordinate equals x_now at p_new (direction update)."""
        return ProjectionFrame(
            v=(float(v_new[0]), float(v_new[1])),
            p_ref=(float(p_new[0]), float(p_new[1])),
            x_ref=float(x_now),
        )


@dataclass(frozen=True)
class Environment:
    """A linear impedance attached to the end-effector through a frame.

    ``x0`` is the rest position of the spring term in interaction
    coordinates. ``attached`` distinguishes free motion from grasp.
    """

    params: ImpedanceParams
    frame: ProjectionFrame
    x0: float = 0.0
    attached: bool = True
    name: str = "environment"

    def force(self, x: float, xd: float, xdd: float) -> float:
        if not self.attached:
            return 0.0
        return self.params.force(x, xd, xdd, self.x0)

    def with_params(self, params: ImpedanceParams) -> "Environment":
        return replace(self, params=params)


def free_space() -> Environment:
    """No interaction: zero impedance, inert frame."""
    return Environment(
        params=ImpedanceParams(),
        frame=ProjectionFrame(v=(1.0, 0.0), p_ref=(0.0, 0.0)),
        attached=False,
        name="free_space",
    )


def payload(mass: float = 2.0, damping: float = 0.0) -> Environment:
    """Rigidly grasped payload lifted vertically: inertia plus weight."""
    return Environment(
        params=ImpedanceParams(m=mass, b=damping, k=0.0, f_s=mass * GRAVITY),
        frame=ProjectionFrame(v=(0.0, 1.0), p_ref=(0.0, 0.0)),
        name=f"payload_{mass:g}kg",
    )


@dataclass(frozen=True)
class Door:
    """Hinged door in the plane, described at the handle.

    The handle sweeps a circle of radius ``radius`` around ``hinge``. The
    door has rotary inertia, viscous damping and a constant resisting torque
    (hinge friction; there is no spring return). ``open_sign`` is +1 when
    opening corresponds to a counter-clockwise sweep.
    """

    hinge: tuple[float, float]
    radius: float
    inertia: float
    damping: float
    resist_torque: float
    angle0: float
    open_sign: float = 1.0
    name: str = "door"

    def handle_position(self, angle: float) -> np.ndarray:
        c = np.asarray(self.hinge)
        return c + self.radius * np.array([math.cos(angle), math.sin(angle)])

    def angle_of(self, p) -> float:
        d = np.asarray(p, dtype=float) - np.asarray(self.hinge)
        return math.atan2(d[1], d[0])

    def tangent(self, angle: float) -> np.ndarray:
        """Unit direction of increasing opening at a given handle angle."""
        t = np.array([-math.sin(angle), math.cos(angle)])
        return self.open_sign * t

    def opening(self, angle: float) -> float:
        """Opening angle (rad, >= 0 while opening) from the closed pose."""
        return self.open_sign * (angle - self.angle0)

    def arc_length(self, angle: float) -> float:
        return self.radius * self.opening(angle)

    def projected_params(self) -> ImpedanceParams:
        """Equivalent point impedance seen at the handle along the tangent."""
        r = self.radius
        return ImpedanceParams(
            m=self.inertia / r**2,
            b=self.damping / r**2,
            k=0.0,
            f_s=self.resist_torque / r,
        )

    def environment_at(self, angle: float, x_now: float | None = None) -> Environment:
        """Projected impedance with the frame rebased to the given angle."""
        if x_now is None:
            x_now = self.arc_length(angle)
        frame = ProjectionFrame(
            v=tuple(self.tangent(angle)),
            p_ref=tuple(self.handle_position(angle)),
            x_ref=float(x_now),
        )
        return Environment(
            params=self.projected_params(), frame=frame, x0=0.0, name=self.name
        )


_DOOR_HINGE = (1.25, 0.25)
_DOOR_RADIUS = 0.6
_DOOR_CLOSED_ANGLE = math.radians(95.0)


def light_door(hinge=_DOOR_HINGE, radius=_DOOR_RADIUS, angle0=_DOOR_CLOSED_ANGLE) -> Door:
    """Lightweight mock-up door (hollow panel)."""
    return Door(
        hinge=hinge,
        radius=radius,
        inertia=2.16,
        damping=7.2,
        resist_torque=4.8,
        angle0=angle0,
        open_sign=-1.0,
        name="door_light",
    )


def heavy_door(hinge=_DOOR_HINGE, radius=_DOOR_RADIUS, angle0=_DOOR_CLOSED_ANGLE) -> Door:
    """Loaded door (ballast added to the panel): higher inertia and friction."""
    return Door(
        hinge=hinge,
        radius=radius,
        inertia=4.5,
        damping=18.0,
        resist_torque=7.2,
        angle0=angle0,
        open_sign=-1.0,
        name="door_heavy",
    )


def environment_from_config(cfg: dict):
    """Build a Door or Environment from a parsed config mapping."""
    cfg = dict(cfg)
    kind = cfg.pop("kind")
    if kind == "door":
        preset = cfg.pop("preset", None)
        if preset == "light":
            base = light_door()
        elif preset == "heavy":
            base = heavy_door()
        elif preset is None:
            base = Door(**cfg)
            cfg = {}
        else:
            raise ValueError(f"unknown door preset {preset!r}")
        if cfg:
            base = replace(
                base,
                **{
                    k: (tuple(v) if isinstance(v, (list, tuple)) else float(v))
                    for k, v in cfg.items()
                },
            )
        return base
    if kind == "payload":
        return payload(
            mass=float(cfg.get("mass", 2.0)), damping=float(cfg.get("damping", 0.0))
        )
    if kind == "free":
        return free_space()
    raise ValueError(f"unknown environment kind {kind!r}")


# ---------------------------------------------------------------------------
# Flat environment vector consumed by the compiled kernels
# ---------------------------------------------------------------------------

ENVP_SIZE = 13
(
    ENVP_ACTIVE,
    ENVP_VX,
    ENVP_VY,
    ENVP_PREFX,
    ENVP_PREFY,
    ENVP_XREF,
    ENVP_X0,
    ENVP_M,
    ENVP_B,
    ENVP_K,
    ENVP_FS,
    ENVP_FEEX,
    ENVP_FEEY,
) = range(ENVP_SIZE)


def pack_envp(env: Environment | None, f_ee=(0.0, 0.0)) -> np.ndarray:
    """Flatten an environment belief plus a feedforward end-effector force.

    The kernels simulate M(q) qdd + bias = S' tau - J' f_ee - J' v lam with
    lam given by the packed impedance; ``active`` gates the coupling.
    """
    out = np.zeros(ENVP_SIZE)
    out[ENVP_FEEX] = f_ee[0]
    out[ENVP_FEEY] = f_ee[1]
    if env is None or not env.attached:
        out[ENVP_VX] = 1.0
        return out
    out[ENVP_ACTIVE] = 1.0
    out[ENVP_VX], out[ENVP_VY] = env.frame.v
    out[ENVP_PREFX], out[ENVP_PREFY] = env.frame.p_ref
    out[ENVP_XREF] = env.frame.x_ref
    out[ENVP_X0] = env.x0
    out[ENVP_M] = env.params.m
    out[ENVP_B] = env.params.b
    out[ENVP_K] = env.params.k
    out[ENVP_FS] = env.params.f_s
    return out
