"""Deterministic 2D navigation world for training and evaluating the 4WISD stack.

A single virtual 360 degree scanner, a disc footprint, explicit-Euler
kinematics at 10 Hz, and the progress/safety/stability reward. No slip
dynamics are simulated: slip is reported as a residual only.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .exceptions import InvalidScenario, SteppedTerminatedEpisode
from .fuzzy import FuzzyModeController
from .kinematics import (
    HALF_PI,
    BodyTwist,
    Pose2D,
    RobotGeometry,
    WheelCommand,
    forward_kinematics,
    integrate_pose,
    slip_residual,
    wrap_angle,
)
from .neural import scale_action

N_RAYS = 36
TRAJECTORY_HEADER = (
    "t", "x", "y", "theta", "vx", "vy", "wz", "mode", "slip",
    "reward", "r_prog", "r_safe", "r_stab",
)


@dataclass(frozen=True)
class Circle:
    x: float
    y: float
    r: float

    def distance(self, px, py):
        return math.hypot(px - self.x, py - self.y) - self.r

    def mirrored(self):
        return Circle(self.x, -self.y, self.r)


@dataclass(frozen=True)
class Rect:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise InvalidScenario(f"degenerate rectangle {self}")

    def distance(self, px, py):
        dx = max(self.xmin - px, 0.0, px - self.xmax)
        dy = max(self.ymin - py, 0.0, py - self.ymax)
        if dx == 0.0 and dy == 0.0:
            return -min(px - self.xmin, self.xmax - px, py - self.ymin, self.ymax - py)
        return math.hypot(dx, dy)

    def mirrored(self):
        return Rect(self.xmin, -self.ymax, self.xmax, -self.ymin)


@dataclass(frozen=True)
class World:
    bounds: tuple[float, float, float, float]
    obstacles: tuple = ()

    def __post_init__(self):
        xmin, ymin, xmax, ymax = self.bounds
        if not (xmin < xmax and ymin < ymax):
            raise InvalidScenario(f"degenerate bounds {self.bounds}")

    def inside(self, x, y) -> bool:
        xmin, ymin, xmax, ymax = self.bounds
        return xmin <= x <= xmax and ymin <= y <= ymax

    def obstacle_distance(self, x, y) -> float:
        """Signed distance from a point to the nearest obstacle surface."""
        return min((o.distance(x, y) for o in self.obstacles), default=math.inf)

    def wall_distance(self, x, y) -> float:
        xmin, ymin, xmax, ymax = self.bounds
        return min(x - xmin, xmax - x, y - ymin, ymax - y)

    def clearance(self, x, y) -> float:
        return min(self.obstacle_distance(x, y), self.wall_distance(x, y))

    def mirrored(self) -> "World":
        xmin, ymin, xmax, ymax = self.bounds
        return World((xmin, -ymax, xmax, -ymin), tuple(o.mirrored() for o in self.obstacles))


@dataclass(frozen=True)
class Scenario:
    world: World
    start: Pose2D
    goal: tuple[float, float]
    name: str = "scenario"
    randomize: Mapping | None = None

    @classmethod
    def from_dict(cls, doc: Mapping) -> "Scenario":
        try:
            world = World(
                tuple(float(v) for v in doc["bounds"]),
                tuple(_obstacle_from_dict(o) for o in doc.get("obstacles", ())),
            )
            start = doc.get("start", [0.0, 0.0, 0.0])
            start = Pose2D(float(start[0]), float(start[1]),
                           float(start[2]) if len(start) > 2 else 0.0)
            goal = (float(doc["goal"][0]), float(doc["goal"][1]))
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise InvalidScenario(f"malformed scenario: {exc}") from exc
        return cls(world, start, goal, doc.get("name", "scenario"), doc.get("randomize"))

    def to_dict(self) -> dict:
        obstacles = []
        for o in self.world.obstacles:
            if isinstance(o, Circle):
                obstacles.append({"type": "circle", "center": [o.x, o.y], "radius": o.r})
            else:
                obstacles.append({"type": "rect", "min": [o.xmin, o.ymin], "max": [o.xmax, o.ymax]})
        doc = {
            "name": self.name,
            "bounds": list(self.world.bounds),
            "obstacles": obstacles,
            "start": list(self.start),
            "goal": list(self.goal),
        }
        if self.randomize:
            doc["randomize"] = dict(self.randomize)
        return doc


def _obstacle_from_dict(o: Mapping):
    kind = o.get("type")
    if kind == "circle":
        return Circle(float(o["center"][0]), float(o["center"][1]), float(o["radius"]))
    if kind == "rect":
        return Rect(float(o["min"][0]), float(o["min"][1]), float(o["max"][0]), float(o["max"][1]))
    raise InvalidScenario(f"unknown obstacle type {kind!r}")


def load_scenario(path) -> Scenario:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidScenario(f"cannot read scenario {path}: {exc}") from exc
    return Scenario.from_dict(doc)


BUILTIN_SCENARIOS = ("desk", "open", "corridor", "cluttered")


def resolve_scenario(name_or_path) -> Scenario:
    """A builtin scenario name or a path to a scenario JSON file."""
    if str(name_or_path) in BUILTIN_SCENARIOS:
        return builtin_scenario(str(name_or_path))
    return load_scenario(name_or_path)


def builtin_scenario(name: str) -> Scenario:
    """Scenarios shipped with the package: ``open``, ``corridor``, ``cluttered``, ``desk``."""
    path = Path(__file__).parent / "scenarios" / f"{name}.json"
    if not path.exists():
        raise InvalidScenario(f"no built-in scenario named {name!r}")
    return load_scenario(path)


def footprint_radius(geo: RobotGeometry, margin: float = 0.05) -> float:
    return geo.r_spin + margin


def check_collision(world: World, pose, radius: float) -> bool:
    """True iff the footprint disc touches an obstacle or leaves the bounds."""
    return world.clearance(pose[0], pose[1]) < radius


def _ray_distances(world: World, x, y, angles, d_max):
    dx, dy = np.cos(angles), np.sin(angles)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        xmin, ymin, xmax, ymax = world.bounds
        tx = np.where(dx > 0, (xmax - x) / dx, np.where(dx < 0, (xmin - x) / dx, np.inf))
        ty = np.where(dy > 0, (ymax - y) / dy, np.where(dy < 0, (ymin - y) / dy, np.inf))
        dist = np.maximum(np.minimum(tx, ty), 0.0)
        for o in world.obstacles:
            if isinstance(o, Circle):
                fx, fy = x - o.x, y - o.y
                c = fx * fx + fy * fy - o.r * o.r
                if c <= 0.0:
                    return np.zeros_like(angles)
                b = fx * dx + fy * dy
                disc = b * b - c
                t = np.where((disc >= 0) & (b < 0), -b - np.sqrt(np.maximum(disc, 0.0)), np.inf)
            else:
                t1x, t2x = (o.xmin - x) / dx, (o.xmax - x) / dx
                t1y, t2y = (o.ymin - y) / dy, (o.ymax - y) / dy
                # Rays parallel to a slab are inside it for all t or never.
                in_x = (o.xmin <= x) & (x <= o.xmax)
                in_y = (o.ymin <= y) & (y <= o.ymax)
                lox = np.where(dx == 0, np.where(in_x, -np.inf, np.inf), np.minimum(t1x, t2x))
                hix = np.where(dx == 0, np.where(in_x, np.inf, -np.inf), np.maximum(t1x, t2x))
                loy = np.where(dy == 0, np.where(in_y, -np.inf, np.inf), np.minimum(t1y, t2y))
                hiy = np.where(dy == 0, np.where(in_y, np.inf, -np.inf), np.maximum(t1y, t2y))
                t_near = np.maximum(lox, loy)
                t_far = np.minimum(hix, hiy)
                hit = (t_near <= t_far) & (t_far >= 0)
                t = np.where(hit, np.maximum(t_near, 0.0), np.inf)
            dist = np.minimum(dist, t)
    return np.minimum(dist, d_max)


def lidar_ranges(world: World, pose, n_rays=N_RAYS, d_max=10.0) -> np.ndarray:
    """Raw ranges of ``n_rays`` evenly spaced beams, ray 0 along the heading."""
    angles = pose[2] + np.arange(n_rays) * (2.0 * math.pi / n_rays)
    return _ray_distances(world, pose[0], pose[1], angles, d_max)


def cast_lidar(world: World, pose, n_rays=N_RAYS, d_max=10.0, d_near=2.0) -> np.ndarray:
    """Normalized scan ``exp(-d / d_near)``: 1 at contact, small when clear."""
    return np.exp(-lidar_ranges(world, pose, n_rays, d_max) / d_near)


@dataclass
class Observation:
    sensor: np.ndarray
    d_goal: float
    theta_goal: float
    inner: tuple[float, float, float]

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.sensor, [self.d_goal, self.theta_goal], self.inner])


def goal_polar(pose, goal) -> tuple[float, float]:
    dx, dy = goal[0] - pose[0], goal[1] - pose[1]
    return math.hypot(dx, dy), wrap_angle(math.atan2(dy, dx) - pose[2])


def observe(world, pose, goal, twist, prev_twist, dt, lidar=None, noise=None) -> Observation:
    """Assemble the 41-value state.

    Inner state: finite-differenced commanded body accelerations and the
    commanded yaw rate, optionally corrupted by ``noise`` (a length-3 array).
    """
    lidar = lidar or {}
    d, th = goal_polar(pose, goal)
    inner = np.array([(twist[0] - prev_twist[0]) / dt, (twist[1] - prev_twist[1]) / dt, twist[2]])
    if noise is not None:
        inner = inner + noise
    return Observation(cast_lidar(world, pose, **lidar), d, th, tuple(float(v) for v in inner))


@dataclass(frozen=True)
class RewardParams:
    lambda_progress: float = 0.5
    lambda_safety: float = 0.3
    lambda_stability: float = 0.5
    r_safe: float = 0.5

    def __post_init__(self):
        if min(self.lambda_progress, self.lambda_safety, self.lambda_stability) < 0:
            raise ValueError("reward weights must be nonnegative")


class RewardTerms(tuple):
    """``(total, progress, safety, stability)``; total is their exact sum."""

    __slots__ = ()

    def __new__(cls, progress, safety, stability):
        return super().__new__(cls, (progress + safety + stability, progress, safety, stability))

    total = property(lambda self: self[0])
    progress = property(lambda self: self[1])
    safety = property(lambda self: self[2])
    stability = property(lambda self: self[3])


def reward(d_prev: float, d_cur: float, r_obs: float, inner, params: RewardParams) -> RewardTerms:
    ax, ay, wz = inner
    progress = params.lambda_progress * (d_prev - d_cur)
    safety = -params.lambda_safety * (params.r_safe - r_obs) if r_obs < params.r_safe else 0.0
    stability = -params.lambda_stability * (ax * ax + ay * ay + abs(wz))
    return RewardTerms(progress, safety, stability)


@dataclass
class StepResult:
    observation: Observation
    reward: RewardTerms
    done: str  # "running", "goal_reached", "collision" or "timeout"
    info: dict = field(default_factory=dict)

    @property
    def terminal(self) -> bool:
        return self.done != "running"


@dataclass
class EnvConfig:
    dt: float = 0.1
    max_steps: int = 100
    goal_tol: float = 0.2
    footprint_margin: float = 0.05
    n_rays: int = N_RAYS
    d_max: float = 10.0
    d_near: float = 2.0
    inner_noise_std: float = 0.0
    # Fixed input scaling for the policy: sensor, d_goal, theta_goal, ax, ay, wz.
    obs_scale: tuple = (1.0, 0.2, 1.0 / math.pi, 0.1, 0.1, 1.0 / 0.32)


ACTION_DIMS = {"twist": 3, "wheel": 8}


class NavigationEnv:
    """Gym-style episodic environment.

    ``action_mode="twist"`` routes a normalized body twist through the fuzzy
    controller; ``action_mode="wheel"`` takes eight normalized wheel values
    (four steering angles over [-pi/2, pi/2], four speeds over the wheel
    speed limit) and moves the robot by their least-squares twist.
    """

    def __init__(self, scenario: Scenario, geometry: RobotGeometry | None = None,
                 reward_params: RewardParams | None = None, action_mode: str = "twist",
                 controller: FuzzyModeController | None = None,
                 config: EnvConfig | None = None, seed: int = 0):
        if action_mode not in ACTION_DIMS:
            raise ValueError(f"action_mode must be one of {sorted(ACTION_DIMS)}")
        self.scenario = scenario
        self.geometry = geometry or RobotGeometry()
        self.reward_params = reward_params or RewardParams()
        self.action_mode = action_mode
        self.config = config or EnvConfig()
        self.controller = controller or FuzzyModeController(self.geometry, dt=self.config.dt)
        if not hasattr(self.controller, "tables_"):
            self.controller.fit()
        self.seed = seed
        self.footprint = footprint_radius(self.geometry, self.config.footprint_margin)
        self.obs_dim = self.config.n_rays + 5
        self.action_dim = ACTION_DIMS[action_mode]
        self.done = "unset"
        self.log: list[dict] = []

    # -- lifecycle ---------------------------------------------------------

    def _validate_point(self, x, y, what):
        world = self.scenario.world
        if not world.inside(x, y) or world.clearance(x, y) < self.footprint:
            raise InvalidScenario(f"{what} ({x:.3f}, {y:.3f}) is out of bounds or in an obstacle")

    def _sample_start_goal(self, rng: np.random.Generator):
        sc = self.scenario
        spec = sc.randomize or {}
        for _ in range(1000):
            start = sc.start
            if "start_box" in spec:
                x0, y0, x1, y1 = spec["start_box"]
                start = Pose2D(float(rng.uniform(x0, x1)), float(rng.uniform(y0, y1)), start.theta)
            if "start_theta" in spec:
                lo, hi = spec["start_theta"]
                start = Pose2D(start.x, start.y, wrap_angle(float(rng.uniform(lo, hi))))
            goal = sc.goal
            if "goal_distance" in spec:
                lo, hi = spec["goal_distance"]
                r, phi = rng.uniform(lo, hi), rng.uniform(-math.pi, math.pi)
                goal = (start.x + r * math.cos(phi), start.y + r * math.sin(phi))
            elif "goal_box" in spec:
                x0, y0, x1, y1 = spec["goal_box"]
                goal = (float(rng.uniform(x0, x1)), float(rng.uniform(y0, y1)))
            try:
                self._validate_point(start.x, start.y, "start")
                self._validate_point(goal[0], goal[1], "goal")
            except InvalidScenario:
                continue
            if math.hypot(goal[0] - start.x, goal[1] - start.y) > self.config.goal_tol:
                return start, goal
        raise InvalidScenario("could not sample a valid start/goal pair")

    def reset(self, seed: int | None = None, scenario: Scenario | None = None) -> Observation:
        if scenario is not None:
            self.scenario = scenario
        if seed is not None:
            self.seed = seed
        self.rng = np.random.default_rng(self.seed)
        if self.scenario.randomize:
            self.pose, self.goal = self._sample_start_goal(self.rng)
        else:
            self._validate_point(*self.scenario.start[:2], "start")
            self._validate_point(*self.scenario.goal, "goal")
            self.pose, self.goal = self.scenario.start, self.scenario.goal
        self.target = self.goal
        self.start_pose = self.pose
        self.twist = BodyTwist()
        self.steps = 0
        self.done = "running"
        self.controller.reset()
        self.obs = self._observe(BodyTwist())
        self.log = [self._row(0.0, "", 0.0, RewardTerms(0.0, 0.0, 0.0))]
        return self.obs

    def set_target(self, xy) -> None:
        """Point the goal observation at an intermediate waypoint."""
        self.target = (float(xy[0]), float(xy[1]))
        self.obs.d_goal, self.obs.theta_goal = goal_polar(self.pose, self.target)

    # -- stepping ------------------------------------------------------------

    def _observe(self, prev: BodyTwist) -> Observation:
        cfg = self.config
        noise = None
        if cfg.inner_noise_std > 0:
            noise = self.rng.normal(0.0, cfg.inner_noise_std, size=3)
        return observe(self.scenario.world, self.pose, self.target, self.twist, prev, cfg.dt,
                       lidar={"n_rays": cfg.n_rays, "d_max": cfg.d_max, "d_near": cfg.d_near},
                       noise=noise)

    def _row(self, t, mode, slip, r: RewardTerms) -> dict:
        return {
            "t": t, "x": self.pose.x, "y": self.pose.y, "theta": self.pose.theta,
            "vx": self.twist.vx, "vy": self.twist.vy, "wz": self.twist.wz,
            "mode": mode, "slip": slip, "reward": r.total, "r_prog": r.progress,
            "r_safe": r.safety, "r_stab": r.stability, "done": self.done,
        }

    def encode(self, obs: Observation) -> np.ndarray:
        """Scaled feature vector fed to the networks."""
        s = self.config.obs_scale
        n = self.config.n_rays
        scale = np.concatenate([np.full(n, s[0]), s[1:]])
        return np.clip(obs.as_array() * scale, -10.0, 10.0)

    def _command_from_action(self, action):
        a = np.asarray(action, dtype=float).reshape(-1)
        if a.shape[0] != self.action_dim:
            raise ValueError(f"expected {self.action_dim} action values, got {a.shape[0]}")
        if self.action_mode == "twist":
            out = self.controller.step(scale_action(a, self.geometry))
            return out.command, out.mode.value
        a = np.clip(a, -1.0, 1.0)
        cmd = WheelCommand(a[:4] * HALF_PI, a[4:] * self.geometry.wheel_speed_max)
        return cmd, "WHEEL"

    def step(self, action) -> StepResult:
        if self.done != "running":
            raise SteppedTerminatedEpisode(f"episode already ended ({self.done})")
        cfg = self.config
        cmd, mode = self._command_from_action(action)
        slip = slip_residual(cmd, self.geometry)
        prev_twist = self.twist
        d_prev = math.hypot(self.target[0] - self.pose.x, self.target[1] - self.pose.y)

        self.twist = forward_kinematics(cmd, self.geometry)
        self.pose = integrate_pose(self.pose, self.twist, cfg.dt)
        self.steps += 1
        self.obs = self._observe(prev_twist)

        r_obs = self.scenario.world.clearance(self.pose.x, self.pose.y) - self.footprint
        terms = reward(d_prev, self.obs.d_goal, r_obs, self.obs.inner, self.reward_params)

        d_final = math.hypot(self.goal[0] - self.pose.x, self.goal[1] - self.pose.y)
        if check_collision(self.scenario.world, self.pose, self.footprint):
            self.done = "collision"
        elif d_final <= cfg.goal_tol:
            self.done = "goal_reached"
        elif self.steps >= cfg.max_steps:
            self.done = "timeout"
        self.log.append(self._row(round(self.steps * cfg.dt, 10), mode, slip, terms))
        info = {"mode": mode, "slip": slip, "pose": self.pose, "twist": self.twist,
                "command": cmd, "d_final": d_final}
        return StepResult(self.obs, terms, self.done, info)


def write_trajectory(rows: Iterable[Mapping], path, with_done: bool = True) -> None:
    """CSV trajectory log; the optional trailing ``done`` column carries the
    episode outcome."""
    header = list(TRAJECTORY_HEADER) + (["done"] if with_done else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(row.get(k, "")) for k in header])


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v
