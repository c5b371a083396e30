"""Macro and micro kinematics of a four-wheel independent steering/driving base.

Conventions: body x forward, y left, yaw counter-clockwise positive. Wheels
are ordered (fl, fr, rl, rr). Steering angles are measured from the body
x-axis and folded into (-pi/2, pi/2]; the sign of the wheel speed carries the
rolling direction.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .exceptions import InfeasibleTwist

HALF_PI = 0.5 * math.pi

# |wz| below this is treated as straight rolling in steering mode.
STRAIGHT_WZ_EPS = 1e-6
# Absolute tolerance for "this component is zero" checks in mode constraints.
ZERO_TOL = 1e-9


class MotionMode(enum.Enum):
    SM = "SM"  # steering: ICR on the transverse axis
    OM = "OM"  # oblique: common steering angle, no yaw
    LM = "LM"  # lateral: wheels at 90 degrees
    RM = "RM"  # rotation about the geometric centre

    @property
    def index(self) -> int:
        return _MODE_ORDER.index(self)


_MODE_ORDER = (MotionMode.SM, MotionMode.OM, MotionMode.LM, MotionMode.RM)
MODES = _MODE_ORDER


class Pose2D(NamedTuple):
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0


class BodyTwist(NamedTuple):
    vx: float = 0.0
    vy: float = 0.0
    wz: float = 0.0


@dataclass(frozen=True)
class RobotGeometry:
    """Chassis dimensions and velocity limits.

    Defaults follow the prototype platform: 2.03 m wheelbase, 1.02 m
    steering track and body-velocity limits of 0.75 m/s, 0.35 m/s and
    0.32 rad/s.
    """

    L: float = 2.03
    W: float = 1.02
    delta_lim: float = math.pi / 4
    mass: float = 150.0
    vx_max: float = 0.75
    vy_max: float = 0.35
    wz_max: float = 0.32
    wheel_speed_max: float = 1.0

    def __post_init__(self):
        if not (self.L > 0 and self.W > 0):
            raise ValueError("wheelbase L and track W must be positive")
        if not (0 < self.delta_lim <= HALF_PI):
            raise ValueError("delta_lim must lie in (0, pi/2]")
        if min(self.vx_max, self.vy_max, self.wz_max, self.wheel_speed_max) <= 0:
            raise ValueError("velocity limits must be positive")

    @property
    def inertia(self) -> float:
        return self.mass * (self.L**2 + self.W**2) / 12.0

    @property
    def r_min(self) -> float:
        """Smallest steering-mode turning radius reachable at ``delta_lim``."""
        return (self.W * math.tan(HALF_PI - self.delta_lim) + self.L) / 2.0

    @property
    def r_spin(self) -> float:
        return math.hypot(self.L / 2.0, self.W / 2.0)

    @functools.cached_property
    def wheel_positions(self) -> np.ndarray:
        hl, hw = self.L / 2.0, self.W / 2.0
        p = np.array([[hl, hw], [hl, -hw], [-hl, hw], [-hl, -hw]])
        p.flags.writeable = False
        return p

    def clamp(self, twist: BodyTwist) -> BodyTwist:
        return BodyTwist(
            float(np.clip(twist[0], -self.vx_max, self.vx_max)),
            float(np.clip(twist[1], -self.vy_max, self.vy_max)),
            float(np.clip(twist[2], -self.wz_max, self.wz_max)),
        )


@dataclass
class WheelCommand:
    delta: np.ndarray
    v: np.ndarray
    mode: MotionMode | None = None

    def __post_init__(self):
        self.delta = np.asarray(self.delta, dtype=float).reshape(4)
        self.v = np.asarray(self.v, dtype=float).reshape(4)

    @classmethod
    def zeros(cls, mode: MotionMode | None = None) -> "WheelCommand":
        return cls(np.zeros(4), np.zeros(4), mode)

    def as_array(self) -> np.ndarray:
        """Eight actuator values: four steering angles then four speeds."""
        return np.concatenate([self.delta, self.v])

    def copy(self) -> "WheelCommand":
        return WheelCommand(self.delta.copy(), self.v.copy(), self.mode)


def wrap_angle(a: float) -> float:
    """Normalize an angle into (-pi, pi]."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


def body_to_global(pose: Pose2D, twist: BodyTwist) -> tuple[float, float, float]:
    c, s = math.cos(pose[2]), math.sin(pose[2])
    vx, vy, wz = twist
    return (c * vx - s * vy, s * vx + c * vy, wz)


def integrate_pose(pose: Pose2D, twist: BodyTwist, dt: float) -> Pose2D:
    """Explicit Euler step of the global-frame pose."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    dx, dy, dth = body_to_global(pose, twist)
    return Pose2D(pose[0] + dt * dx, pose[1] + dt * dy, wrap_angle(pose[2] + dt * dth))


def _fold(angle: np.ndarray, speed: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # atan2 output lives in (-pi, pi]; flip into (-pi/2, pi/2] with the speed sign.
    angle = np.array(angle, dtype=float)
    speed = np.array(speed, dtype=float)
    hi = angle > HALF_PI
    lo = angle <= -HALF_PI
    angle[hi] -= math.pi
    angle[lo] += math.pi
    speed[hi | lo] *= -1.0
    return angle, speed


def wheel_velocities(twist: BodyTwist, geo: RobotGeometry) -> np.ndarray:
    """Contact-point velocity of every wheel, shape (4, 2), body frame."""
    vx, vy, wz = twist
    p = geo.wheel_positions
    return np.column_stack([vx - wz * p[:, 1], vy + wz * p[:, 0]])


def rigid_command(
    twist: BodyTwist,
    geo: RobotGeometry,
    hold: np.ndarray | None = None,
    mode: MotionMode | None = None,
) -> WheelCommand:
    """Slip-free wheel command for an arbitrary rigid-body twist.

    Wheels whose contact point is (numerically) at rest keep the steering
    angle from ``hold`` (zero if not given).
    """
    wv = wheel_velocities(twist, geo)
    speed = np.hypot(wv[:, 0], wv[:, 1])
    delta, v = _fold(np.arctan2(wv[:, 1], wv[:, 0]), speed)
    still = speed < 1e-12
    if still.any():
        delta[still] = 0.0 if hold is None else np.asarray(hold, dtype=float)[still]
        v[still] = 0.0
    return WheelCommand(delta, v, mode)


def inverse_kinematics(twist: BodyTwist, mode: MotionMode, geo: RobotGeometry) -> WheelCommand:
    """Wheel command realizing ``twist`` under the constraints of ``mode``.

    Steering mode drops ``vy`` (the ICR sits on the transverse axis). Every
    other violated constraint raises :class:`InfeasibleTwist`; projecting into
    the feasible set is the caller's job.
    """
    vx, vy, wz = (float(c) for c in twist)
    mode = MotionMode(mode)

    if mode is MotionMode.SM:
        if abs(wz) < STRAIGHT_WZ_EPS:
            return WheelCommand(np.zeros(4), np.full(4, vx), mode)
        radius = vx / wz
        if abs(radius) < geo.r_min * (1.0 - 1e-9):
            raise InfeasibleTwist(
                f"SM turning radius {abs(radius):.4g} m below R_min {geo.r_min:.4g} m"
            )
        p = geo.wheel_positions
        # Wheel i moves perpendicular to the ray from the ICR (0, R) to (x_i, y_i).
        delta, v = _fold(
            np.arctan2(wz * p[:, 0], wz * (radius - p[:, 1])),
            np.abs(wz) * np.hypot(p[:, 0], radius - p[:, 1]),
        )
        return WheelCommand(delta, v, mode)

    if mode is MotionMode.OM:
        if abs(wz) > ZERO_TOL:
            raise InfeasibleTwist("OM requires wz = 0")
        speed = math.hypot(vx, vy)
        if speed < 1e-12:
            return WheelCommand(np.zeros(4), np.zeros(4), mode)
        if abs(vx) <= ZERO_TOL:
            alpha, signed = HALF_PI, math.copysign(speed, vy)
        else:
            alpha, signed = math.atan(vy / vx), math.copysign(speed, vx)
        if abs(alpha) > geo.delta_lim * (1.0 + 1e-12):
            raise InfeasibleTwist(f"OM offset angle {alpha:.4g} exceeds delta_lim")
        return WheelCommand(np.full(4, alpha), np.full(4, signed), mode)

    if mode is MotionMode.LM:
        if abs(vx) > ZERO_TOL or abs(wz) > ZERO_TOL:
            raise InfeasibleTwist("LM requires vx = 0 and wz = 0")
        return WheelCommand(np.full(4, HALF_PI), np.full(4, vy), mode)

    # RM: wheels tangent to the circle through all four contact points.
    if abs(vx) > ZERO_TOL or abs(vy) > ZERO_TOL:
        raise InfeasibleTwist("RM requires vx = vy = 0")
    p = geo.wheel_positions
    delta, v = _fold(np.arctan2(p[:, 0], -p[:, 1]), np.full(4, wz * geo.r_spin))
    return WheelCommand(delta, v, mode)


def forward_kinematics(cmd: WheelCommand, geo: RobotGeometry) -> BodyTwist:
    """Least-squares body twist for the eight rolling constraints.

    With the wheels placed symmetrically about the centre the normal
    equations are diagonal, so the fit has a closed form.
    """
    bx = cmd.v * np.cos(cmd.delta)
    by = cmd.v * np.sin(cmd.delta)
    p = geo.wheel_positions
    vx = float(bx.mean())
    vy = float(by.mean())
    wz = float((p[:, 0] @ by - p[:, 1] @ bx) / (p**2).sum())
    return BodyTwist(vx, vy, wz)


def constraint_residuals(cmd: WheelCommand, geo: RobotGeometry) -> np.ndarray:
    """Per-wheel rolling-constraint residual vectors after the best fit, (4, 2)."""
    fit = forward_kinematics(cmd, geo)
    actual = np.column_stack([cmd.v * np.cos(cmd.delta), cmd.v * np.sin(cmd.delta)])
    return actual - wheel_velocities(fit, geo)


def slip_residual(cmd: WheelCommand, geo: RobotGeometry) -> float:
    """RMS over wheels of the contact-velocity mismatch (m/s).

    Zero iff the command is consistent with a single rigid-body twist.
    """
    r = constraint_residuals(cmd, geo)
    return float(math.sqrt((r**2).sum() / 4.0))
