"""Two-stage Mamdani mode selection and the low-level wheel controller.

The controller turns a body twist into three crisp linguistic inputs (turning
radius, velocity offset angle, energy ratio), runs max-min inference over the
two rule tables, picks a motion mode by mean-of-maximum, and hands the twist
to that mode's inverse kinematics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, NamedTuple

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import InferenceUndefined
from .kinematics import (
    HALF_PI,
    MODES,
    STRAIGHT_WZ_EPS,
    ZERO_TOL,
    BodyTwist,
    MotionMode,
    RobotGeometry,
    WheelCommand,
    forward_kinematics,
    inverse_kinematics,
    rigid_command,
)

SM, OM, LM, RM = MotionMode.SM, MotionMode.OM, MotionMode.LM, MotionMode.RM

R_SETS = ("RU", "RR", "RI")
A_SETS = ("AZ", "AR", "AU", "AL")
E_SETS = ("RL", "TL")


class LinguisticInputs(NamedTuple):
    r_turn: float
    a_offset: float
    e_ratio: float


@dataclass(frozen=True)
class MembershipFunction:
    """Piecewise-linear trapezoid ``(a, b, c, d)``; a triangle has ``b == c``.

    Breakpoints may be ``inf`` so shoulders extend to the sentinel value.
    """

    a: float
    b: float
    c: float
    d: float

    def __post_init__(self):
        if not (self.a <= self.b <= self.c <= self.d):
            raise ValueError(f"breakpoints must be nondecreasing: {self}")

    @classmethod
    def triangle(cls, a: float, b: float, c: float) -> "MembershipFunction":
        return cls(a, b, b, c)

    @classmethod
    def from_points(cls, points) -> "MembershipFunction":
        pts = [float(p) for p in points]
        if len(pts) == 3:
            return cls.triangle(*pts)
        if len(pts) == 4:
            return cls(*pts)
        raise ValueError("membership function needs 3 (triangle) or 4 (trapezoid) points")

    def __call__(self, x: float) -> float:
        a, b, c, d = self.a, self.b, self.c, self.d
        if x < a or x > d:
            return 0.0
        if b <= x <= c:
            return 1.0
        if x < b:
            return (x - a) / (b - a)
        if math.isinf(d):
            return 1.0
        return (d - x) / (d - c)


MembershipSet = Mapping[str, MembershipFunction]


def default_memberships(geo: RobotGeometry) -> dict[str, dict[str, MembershipFunction]]:
    """Membership families scaled by the robot's own geometry.

    Radius and energy-ratio breakpoints are in metres and act on absolute
    values; offset-angle breakpoints are in degrees.
    """
    rmin, rspin = geo.r_min, geo.r_spin
    lim = math.degrees(geo.delta_lim)
    inf = math.inf
    mf, tri = MembershipFunction, MembershipFunction.triangle
    return {
        "r_turn": {
            "RU": mf(0.0, 0.0, 0.6 * rmin, rmin),
            "RR": tri(0.6 * rmin, 3.0 * rmin, 6.0 * rmin),
            "RI": mf(3.0 * rmin, 6.0 * rmin, inf, inf),
        },
        "a_offset": {
            "AZ": tri(0.0, 0.0, 10.0),
            "AR": mf(5.0, 15.0, lim - 5.0, lim),
            "AU": mf(lim - 5.0, lim + 5.0, 80.0, 85.0),
            "AL": mf(78.0, 86.0, 90.0, 90.0),
        },
        "e_ratio": {
            "RL": mf(0.0, 0.0, 0.5 * rspin, 1.5 * rspin),
            "TL": mf(0.5 * rspin, 1.5 * rspin, inf, inf),
        },
    }


def memberships_from_config(geo: RobotGeometry, overrides: Mapping | None):
    """Defaults with per-subset overrides, e.g. ``{"r_turn": {"RU": [0, 0, 1, 2]}}``."""
    mfs = default_memberships(geo)
    for var, subsets in (overrides or {}).items():
        if var not in mfs:
            raise KeyError(f"unknown linguistic variable {var!r}")
        for name, points in subsets.items():
            if name not in mfs[var]:
                raise KeyError(f"unknown fuzzy subset {var}.{name}")
            mfs[var][name] = (
                points if isinstance(points, MembershipFunction)
                else MembershipFunction.from_points(points)
            )
    return mfs


@dataclass(frozen=True)
class FuzzyRuleTables:
    level1: Mapping[tuple[str, str], MotionMode]
    level2: Mapping[tuple[MotionMode, str], MotionMode]

    def __post_init__(self):
        missing1 = {(r, a) for r in R_SETS for a in A_SETS} - set(self.level1)
        missing2 = {(m, e) for m in MODES for e in E_SETS} - set(self.level2)
        if missing1 or missing2:
            raise ValueError(f"rule tables are not total; missing {missing1 | missing2}")

    @classmethod
    def default(cls) -> "FuzzyRuleTables":
        rows1 = {
            "RI": (SM, OM, OM, LM),
            "RU": (RM, SM, SM, RM),
            "RR": (SM, SM, SM, SM),
        }
        rows2 = {
            "RL": (SM, OM, SM, RM),
            "TL": (OM, OM, LM, LM),
        }
        level1 = {(r, a): m for r, row in rows1.items() for a, m in zip(A_SETS, row)}
        level2 = {(m1, e): m for e, row in rows2.items() for m1, m in zip(MODES, row)}
        return cls(level1, level2)

    def with_overrides(self, overrides: Mapping | None) -> "FuzzyRuleTables":
        """Apply ``{"level1": {"RI,AZ": "OM"}, "level2": {"SM,RL": "OM"}}`` style edits."""
        if not overrides:
            return self
        level1, level2 = dict(self.level1), dict(self.level2)
        for key, mode in overrides.get("level1", {}).items():
            r, a = (k.strip() for k in key.split(","))
            level1[(r, a)] = MotionMode(mode)
        for key, mode in overrides.get("level2", {}).items():
            m1, e = (k.strip() for k in key.split(","))
            level2[(MotionMode(m1), e)] = MotionMode(mode)
        return FuzzyRuleTables(level1, level2)


def linguistic_inputs(twist: BodyTwist) -> LinguisticInputs:
    """Crisp turning radius, offset angle and energy ratio of a twist.

    ``inf`` marks the zero-yaw limit. The energy ratio of a twist with no
    lateral and no yaw component is taken as 0 (no lateral energy).
    """
    vx, vy, wz = twist
    straight = abs(wz) < STRAIGHT_WZ_EPS
    r_turn = math.inf if straight else vx / wz
    if abs(vx) <= ZERO_TOL:
        a_offset = 0.0 if abs(vy) <= ZERO_TOL else math.copysign(HALF_PI, vy)
    else:
        a_offset = math.atan(vy / vx)
    if straight:
        e_ratio = 0.0 if abs(vy) <= ZERO_TOL else math.inf
    else:
        e_ratio = vy / wz
    return LinguisticInputs(r_turn, a_offset, e_ratio)


def fuzzify(value: float, mfs: MembershipSet) -> dict[str, float]:
    """Singleton fuzzification: membership degree of ``value`` in every subset."""
    return {name: mf(value) for name, mf in mfs.items()}


def fuzzify_inputs(inputs: LinguisticInputs, mfs) -> tuple[dict, dict, dict]:
    return (
        fuzzify(abs(inputs.r_turn), mfs["r_turn"]),
        fuzzify(math.degrees(abs(inputs.a_offset)), mfs["a_offset"]),
        fuzzify(abs(inputs.e_ratio), mfs["e_ratio"]),
    )


def infer_level1(mu_r: Mapping[str, float], mu_a: Mapping[str, float], tables: FuzzyRuleTables):
    out = np.zeros(len(MODES))
    for (r, a), mode in tables.level1.items():
        w = min(mu_r[r], mu_a[a])
        if w > out[mode.index]:
            out[mode.index] = w
    return out


def infer_level2(mu_m1: np.ndarray, mu_e: Mapping[str, float], tables: FuzzyRuleTables):
    out = np.zeros(len(MODES))
    for (m1, e), mode in tables.level2.items():
        w = min(mu_m1[m1.index], mu_e[e])
        if w > out[mode.index]:
            out[mode.index] = w
    return out


def infer_mode(inputs: LinguisticInputs, tables: FuzzyRuleTables, mfs) -> np.ndarray:
    """Final mode membership vector, indexed in ``MODES`` order."""
    mu_r, mu_a, mu_e = fuzzify_inputs(inputs, mfs)
    out = infer_level2(infer_level1(mu_r, mu_a, tables), mu_e, tables)
    if not out.any():
        raise InferenceUndefined(f"no rule fired for inputs {inputs}")
    return out


def defuzzify_mom(degrees, current: MotionMode | None = None) -> MotionMode:
    """Mean-of-maximum over a discrete output: the arg-max mode.

    Ties go to ``current`` if it is among the maxima, otherwise to the first
    mode in SM, OM, LM, RM order.
    """
    degrees = np.asarray(degrees, dtype=float)
    top = degrees.max()
    if not top > 0.0:
        raise InferenceUndefined("all output memberships are zero")
    winners = np.flatnonzero(degrees >= top * (1.0 - 1e-12))
    if current is not None and current.index in winners:
        return current
    return MODES[winners[0]]


def project_twist(twist: BodyTwist, mode: MotionMode, geo: RobotGeometry) -> BodyTwist:
    """Closest member of the mode's feasible set under a simple per-mode rule."""
    vx, vy, wz = (float(c) for c in twist)
    if mode is SM:
        if abs(wz) < STRAIGHT_WZ_EPS:
            return BodyTwist(vx, 0.0, 0.0)
        if abs(vx) < geo.r_min * abs(wz):
            wz = math.copysign(abs(vx) / geo.r_min, wz)
            if abs(wz) < STRAIGHT_WZ_EPS:
                wz = 0.0
        return BodyTwist(vx, 0.0, wz)
    if mode is OM:
        if abs(vx) <= ZERO_TOL and abs(vy) <= ZERO_TOL:
            return BodyTwist(0.0, 0.0, 0.0)
        speed = math.hypot(vx, vy)
        sign = -1.0 if vx < -ZERO_TOL else 1.0
        alpha = math.atan(vy / vx) if abs(vx) > ZERO_TOL else math.copysign(HALF_PI, vy)
        alpha = float(np.clip(alpha, -geo.delta_lim, geo.delta_lim))
        return BodyTwist(sign * speed * math.cos(alpha), sign * speed * math.sin(alpha), 0.0)
    if mode is LM:
        return BodyTwist(0.0, vy, 0.0)
    return BodyTwist(0.0, 0.0, wz)


def _limit_wheel_speed(twist: BodyTwist, cmd: WheelCommand, mode, geo):
    peak = float(np.abs(cmd.v).max())
    if peak <= geo.wheel_speed_max:
        return twist, cmd
    k = geo.wheel_speed_max / peak
    twist = BodyTwist(twist[0] * k, twist[1] * k, twist[2] * k)
    return twist, inverse_kinematics(twist, mode, geo)


@dataclass
class ControllerState:
    current_mode: MotionMode | None = None
    hold_counter: int = 0
    candidate: MotionMode | None = None
    last_command: WheelCommand = field(default_factory=WheelCommand.zeros)
    last_twist: BodyTwist = BodyTwist()

    def copy(self) -> "ControllerState":
        return replace(self, last_command=self.last_command.copy())


def _gate_mode(winner: MotionMode, state: ControllerState, hold_steps: int):
    """Hysteresis: returns (active mode, candidate, counter)."""
    if state.current_mode is None or winner is state.current_mode:
        return winner, None, 0
    counter = state.hold_counter + 1 if winner is state.candidate else 1
    if counter >= hold_steps:
        return winner, None, 0
    return state.current_mode, winner, counter


def _within_slew(delta: np.ndarray, ref: np.ndarray, step: float) -> bool:
    return bool(np.all(np.abs(delta - ref) <= step + 1e-12))


def slew_limit(
    target: WheelCommand,
    target_twist: BodyTwist,
    state: ControllerState,
    geo: RobotGeometry,
    max_step: float,
    iterations: int = 30,
) -> tuple[WheelCommand, bool]:
    """Bound the per-step steering change without breaking rolling consistency.

    When the target angles are out of reach, the emitted command realizes the
    rigid-body twist furthest along the blend from the previous twist to the
    target whose angles are in reach. If no useful blend exists (e.g. the
    path would flip a wheel through 90 degrees), the wheels steer in place at
    zero speed. Returns the command and whether limiting was applied.
    """
    last = state.last_command
    if _within_slew(target.delta, last.delta, max_step):
        return target, False

    t0 = np.asarray(state.last_twist, dtype=float)
    t1 = np.asarray(target_twist, dtype=float)

    def blended(s):
        return rigid_command(BodyTwist(*(t0 + s * (t1 - t0))), geo, hold=last.delta,
                             mode=target.mode)

    best = None
    if _within_slew(blended(0.0).delta, last.delta, max_step):
        lo, hi = 0.0, 1.0
        for _ in range(iterations):
            mid = 0.5 * (lo + hi)
            if _within_slew(blended(mid).delta, last.delta, max_step):
                lo = mid
            else:
                hi = mid
        if lo >= 1e-3:
            best = blended(lo)
    if best is None:
        step = np.clip(target.delta - last.delta, -max_step, max_step)
        best = WheelCommand(last.delta + step, np.zeros(4), target.mode)
    return best, True


@dataclass
class ControlOutput:
    command: WheelCommand
    mode: MotionMode
    twist: BodyTwist
    degrees: np.ndarray
    slew_limited: bool
    pre_slew: WheelCommand


def control_step(
    twist: BodyTwist,
    state: ControllerState,
    geo: RobotGeometry,
    tables: FuzzyRuleTables,
    mfs,
    hold_steps: int = 3,
    slew_max: float | None = HALF_PI,
    dt: float = 0.1,
) -> tuple[ControlOutput, ControllerState]:
    """One pass of the low-level pipeline; returns the output and the next state."""
    twist = geo.clamp(twist)
    degrees = infer_mode(linguistic_inputs(twist), tables, mfs)
    winner = defuzzify_mom(degrees, state.current_mode)
    mode, candidate, counter = _gate_mode(winner, state, max(int(hold_steps), 1))

    projected = project_twist(twist, mode, geo)
    target = inverse_kinematics(projected, mode, geo)
    projected, target = _limit_wheel_speed(projected, target, mode, geo)

    limited = False
    cmd = target
    if slew_max is not None and math.isfinite(slew_max):
        cmd, limited = slew_limit(target, projected, state, geo, slew_max * dt)
    executed = forward_kinematics(cmd, geo) if limited else projected

    new_state = ControllerState(mode, counter, candidate, cmd, executed)
    return ControlOutput(cmd, mode, executed, degrees, limited, target), new_state


class FuzzyModeController(TransformerMixin, BaseEstimator):
    """Stateful twist-to-wheel-command controller.

    Parameters
    ----------
    geometry : RobotGeometry, default=None
        Chassis description; ``None`` uses the prototype defaults.
    hold_steps : int, default=3
        Consecutive wins a new mode needs before the controller switches.
    slew_max : float or None, default=pi/2
        Steering rate limit in rad/s. ``None`` disables limiting.
    dt : float, default=0.1
        Control period in seconds.
    memberships : dict, default=None
        Breakpoint overrides, see :func:`memberships_from_config`.
    rules : dict, default=None
        Rule-table overrides, see :meth:`FuzzyRuleTables.with_overrides`.

    ``transform`` maps an ``(n, 3)`` twist stream to an ``(n, 8)`` array of
    steering angles and wheel speeds, starting from a fresh state.
    """

    def __init__(self, geometry=None, hold_steps=3, slew_max=HALF_PI, dt=0.1,
                 memberships=None, rules=None):
        self.geometry = geometry
        self.hold_steps = hold_steps
        self.slew_max = slew_max
        self.dt = dt
        self.memberships = memberships
        self.rules = rules

    def fit(self, X=None, y=None):
        self.geometry_ = self.geometry if self.geometry is not None else RobotGeometry()
        self.memberships_ = memberships_from_config(self.geometry_, self.memberships)
        self.tables_ = FuzzyRuleTables.default().with_overrides(self.rules)
        self.reset()
        return self

    def reset(self):
        self.state_ = ControllerState()
        return self

    def step(self, twist) -> ControlOutput:
        if not hasattr(self, "state_"):
            self.fit()
        out, self.state_ = control_step(
            BodyTwist(*(float(c) for c in twist)), self.state_, self.geometry_,
            self.tables_, self.memberships_, self.hold_steps, self.slew_max, self.dt,
        )
        return out

    def _run(self, X):
        check_is_fitted(self, "tables_")
        X = check_array(X, dtype=float)
        if X.shape[1] != 3:
            raise ValueError(f"expected twists with 3 columns, got {X.shape[1]}")
        self.reset()
        return [self.step(row) for row in X]

    def transform(self, X):
        return np.array([o.command.as_array() for o in self._run(X)])

    def predict(self, X):
        return np.array([o.mode.value for o in self._run(X)])
