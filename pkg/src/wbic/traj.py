"""Time-optimal scalar motion profiles and task-space references.

A profile drives a scalar path coordinate s from its current state
(position, speed) to a target under symmetric velocity/acceleration bounds,
in minimum time: bang cruise bang. Profiles are cheap to construct, so
controllers replan them every tick from the measured path state.

References wrap a profile with geometry: a straight line (lifting) or a
circular arc (door handle), sampled as end-effector position/velocity plus
the scalar interaction coordinate and its derivatives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ProfileSegment:
    duration: float
    accel: float


@dataclass(frozen=True)
class PathSample:
    s: float
    sd: float
    sdd: float


@dataclass(frozen=True)
class TrapezoidalProfile:
    """Piecewise-constant-acceleration profile starting at (s0, v0).

    ``overshoot`` flags plans whose initial speed cannot be stopped before
    the target: the profile brakes, then returns. Sampling before
    ``t_start`` holds the initial state; sampling past the end holds the
    target at rest.
    """

    s0: float
    v0: float
    t_start: float
    segments: tuple[ProfileSegment, ...]
    overshoot: bool = False

    @property
    def duration(self) -> float:
        return sum(seg.duration for seg in self.segments)

    @property
    def t_end(self) -> float:
        return self.t_start + self.duration

    @property
    def s_end(self) -> float:
        s, v = self.s0, self.v0
        for seg in self.segments:
            s += v * seg.duration + 0.5 * seg.accel * seg.duration**2
            v += seg.accel * seg.duration
        return s

    def sample(self, t: float) -> PathSample:
        rel = t - self.t_start
        if rel <= 0.0:
            return PathSample(self.s0, self.v0 if rel == 0.0 else 0.0, 0.0)
        s, v = self.s0, self.v0
        for seg in self.segments:
            if rel <= seg.duration:
                return PathSample(
                    s + v * rel + 0.5 * seg.accel * rel**2,
                    v + seg.accel * rel,
                    seg.accel,
                )
            s += v * seg.duration + 0.5 * seg.accel * seg.duration**2
            v += seg.accel * seg.duration
            rel -= seg.duration
        return PathSample(s, 0.0, 0.0)


def _rest_to_rest(d: float, v_max: float, a_max: float):
    """Segments for a rest-to-rest move of signed displacement d."""
    if d == 0.0:
        return ()
    sgn = 1.0 if d > 0.0 else -1.0
    d = abs(d)
    v_peak = math.sqrt(a_max * d)
    if v_peak <= v_max:
        t1 = v_peak / a_max
        return (
            ProfileSegment(t1, sgn * a_max),
            ProfileSegment(t1, -sgn * a_max),
        )
    t1 = v_max / a_max
    d_ramp = v_max**2 / a_max
    t_cruise = (d - d_ramp) / v_max
    return (
        ProfileSegment(t1, sgn * a_max),
        ProfileSegment(t_cruise, 0.0),
        ProfileSegment(t1, -sgn * a_max),
    )


def time_optimal_profile(
    s0: float,
    s_target: float,
    v0: float,
    v_max: float,
    a_max: float,
    t_start: float = 0.0,
) -> TrapezoidalProfile:
    """Minimum-time profile from (s0, v0) to (s_target, 0) under bounds.

    Raises ValueError on non-positive bounds. An initial speed that cannot
    be stopped before the target produces a brake-and-return plan flagged
    ``overshoot``.
    """
    if v_max <= 0.0 or a_max <= 0.0:
        raise ValueError("velocity and acceleration bounds must be positive")
    d = s_target - s0
    if d == 0.0 and v0 == 0.0:
        return TrapezoidalProfile(s0, v0, t_start, ())
    # Work in coordinates where the target lies in +s.
    sgn = 1.0 if d > 0.0 else (-1.0 if d < 0.0 else (1.0 if v0 > 0.0 else -1.0))
    dn = sgn * d
    vn = sgn * v0

    segments: list[ProfileSegment] = []
    overshoot = False
    if vn < 0.0:
        # Moving away: full braking is also the time-optimal start.
        t_brake = -vn / a_max
        dn += vn**2 / (2.0 * a_max)
        segments.append(ProfileSegment(t_brake, sgn * a_max))
        vn = 0.0
    elif vn > v_max:
        t_slow = (vn - v_max) / a_max
        d_slow = (vn**2 - v_max**2) / (2.0 * a_max)
        if d_slow >= dn or v_max**2 / (2.0 * a_max) >= dn - d_slow:
            # Cannot even stop in time: brake to rest and come back.
            t_stop = vn / a_max
            segments.append(ProfileSegment(t_stop, -sgn * a_max))
            dn -= vn**2 / (2.0 * a_max)
            segments.extend(
                ProfileSegment(seg.duration, sgn * seg.accel)
                for seg in _rest_to_rest(dn, v_max, a_max)
            )
            overshoot = dn < 0.0
            return TrapezoidalProfile(s0, v0, t_start, tuple(segments), overshoot)
        segments.append(ProfileSegment(t_slow, -sgn * a_max))
        dn -= d_slow
        vn = v_max
    if vn > 0.0:
        d_brake = vn**2 / (2.0 * a_max)
        if d_brake > dn:
            # Too fast to stop on the target: brake past it, then return.
            t_stop = vn / a_max
            segments.append(ProfileSegment(t_stop, -sgn * a_max))
            segments.extend(
                ProfileSegment(seg.duration, sgn * seg.accel)
                for seg in _rest_to_rest(dn - d_brake, v_max, a_max)
            )
            return TrapezoidalProfile(s0, v0, t_start, tuple(segments), True)
        # Peak speed of the triangular profile continuing from vn.
        v_peak = math.sqrt(a_max * dn + vn**2 / 2.0)
        if v_peak <= v_max:
            t1 = (v_peak - vn) / a_max
            t2 = v_peak / a_max
            segments.append(ProfileSegment(t1, sgn * a_max))
            segments.append(ProfileSegment(t2, -sgn * a_max))
        else:
            t1 = (v_max - vn) / a_max
            d1 = (v_max**2 - vn**2) / (2.0 * a_max)
            d3 = v_max**2 / (2.0 * a_max)
            t_cruise = (dn - d1 - d3) / v_max
            segments.append(ProfileSegment(t1, sgn * a_max))
            segments.append(ProfileSegment(t_cruise, 0.0))
            segments.append(ProfileSegment(v_max / a_max, -sgn * a_max))
    else:
        segments.extend(
            ProfileSegment(seg.duration, sgn * seg.accel)
            for seg in _rest_to_rest(dn, v_max, a_max)
        )
    segments = [seg for seg in segments if seg.duration > 0.0]
    return TrapezoidalProfile(s0, v0, t_start, tuple(segments), overshoot)


@dataclass(frozen=True)
class ReferenceSample:
    """Task-space reference at one instant."""

    position: np.ndarray
    velocity: np.ndarray
    orientation: float
    path: PathSample


class LineReference:
    """Straight-line motion along a fixed unit direction.

    The path coordinate s is global (continues across replans through
    ``s`` of the profile itself), with geometry anchored so that position
    = origin + (s - s_origin) * direction.
    """

    def __init__(self, origin, direction, profile, orientation, s_origin=0.0):
        self.origin = np.asarray(origin, dtype=float)
        d = np.asarray(direction, dtype=float)
        norm = float(np.hypot(*d))
        if abs(norm - 1.0) > 1e-9:
            raise ValueError("direction must be a unit vector")
        self.direction = d
        self.profile = profile
        self.orientation = float(orientation)
        self.s_origin = float(s_origin)

    def sample(self, t: float) -> ReferenceSample:
        ps = self.profile.sample(t)
        pos = self.origin + (ps.s - self.s_origin) * self.direction
        vel = ps.sd * self.direction
        return ReferenceSample(pos, vel, self.orientation, ps)

    def with_profile(self, profile) -> "LineReference":
        return LineReference(
            self.origin, self.direction, profile, self.orientation, self.s_origin
        )


class ArcReference:
    """Motion along a circular arc, parameterized by arc length.

    ``angle_origin`` is the handle angle at path coordinate ``s_origin``;
    increasing s sweeps the angle by ``open_sign`` * (s - s_origin) / radius.
    """

    def __init__(
        self, center, radius, angle_origin, open_sign, profile, orientation, s_origin=0.0
    ):
        if radius <= 0.0:
            raise ValueError("radius must be positive")
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        self.angle_origin = float(angle_origin)
        self.open_sign = float(open_sign)
        self.profile = profile
        self.orientation = float(orientation)
        self.s_origin = float(s_origin)

    def angle_at(self, s: float) -> float:
        return self.angle_origin + self.open_sign * (s - self.s_origin) / self.radius

    def sample(self, t: float) -> ReferenceSample:
        ps = self.profile.sample(t)
        a = self.angle_at(ps.s)
        u = np.array([math.cos(a), math.sin(a)])
        tangent = self.open_sign * np.array([-math.sin(a), math.cos(a)])
        pos = self.center + self.radius * u
        vel = ps.sd * tangent
        return ReferenceSample(pos, vel, self.orientation, ps)

    def with_profile(self, profile) -> "ArcReference":
        return ArcReference(
            self.center,
            self.radius,
            self.angle_origin,
            self.open_sign,
            profile,
            self.orientation,
            self.s_origin,
        )


class HoldReference:
    """Constant pose (used before a task is armed)."""

    def __init__(self, position, orientation):
        self.position = np.asarray(position, dtype=float)
        self.orientation = float(orientation)

    def sample(self, t: float) -> ReferenceSample:
        return ReferenceSample(
            self.position.copy(),
            np.zeros(2),
            self.orientation,
            PathSample(0.0, 0.0, 0.0),
        )
