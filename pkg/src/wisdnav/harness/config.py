"""JSON run configuration with full-default fallback.

Schema (every key optional)::

    {
      "seed": 0,
      "scenario": "desk",            # builtin name or path to a scenario JSON
      "out": "runs/default",
      "action_mode": "twist",        # or "wheel"
      "checkpoint": null,            # WISD file for eval / navigate / bench
      "geometry": {"L": 2.03, "W": 1.02, "delta_lim": 0.785, ...},
      "reward": {"lambda_progress": 0.5, "lambda_safety": 0.3,
                 "lambda_stability": 0.5, "r_safe": 0.5},
      "fuzzy": {"hold_steps": 3, "slew_max": 1.5708, "memberships": {}, "rules": {}},
      "env": {"dt": 0.1, "max_steps": 100, "goal_tol": 0.2, ...},
      "sac": {"gamma": 0.99, "tau": 0.005, "batch_size": 128, ...},
      "eval": {"episodes": 30, "seed": 1000000},
      "planner": {"resolution": 0.1, "inflation": null, "lookahead": 2.0, "max_steps": 2000},
      "bench": {"iterations": 1000}
    }

``fuzzy.slew_max = null`` disables steering slew limiting; ``planner.inflation
= null`` inflates by the robot footprint radius.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..exceptions import InvalidConfig
from ..fuzzy import FuzzyModeController
from ..kinematics import RobotGeometry
from ..sac import SacConfig
from ..sim import ACTION_DIMS, BUILTIN_SCENARIOS, EnvConfig, RewardParams

SECTIONS = ("geometry", "reward", "fuzzy", "env", "sac", "eval", "planner", "bench")
TOP_LEVEL = ("seed", "scenario", "out", "action_mode", "checkpoint")

FUZZY_DEFAULTS = {"hold_steps": 3, "slew_max": math.pi / 2, "memberships": None, "rules": None}
EVAL_DEFAULTS = {"episodes": 30, "seed": 1_000_000}
PLANNER_DEFAULTS = {"resolution": 0.1, "inflation": None, "lookahead": 2.0, "max_steps": 2000}
BENCH_DEFAULTS = {"iterations": 1000}


def _merge(name: str, defaults: dict, doc: dict | None) -> dict:
    doc = doc or {}
    if not isinstance(doc, dict):
        raise InvalidConfig(f"section {name!r} must be an object")
    unknown = set(doc) - set(defaults)
    if unknown:
        raise InvalidConfig(f"unknown keys in {name!r}: {sorted(unknown)}")
    return {**defaults, **doc}


def _build(cls, name: str, doc: dict | None):
    defaults = {f.name: f.default for f in dataclasses.fields(cls)}
    merged = _merge(name, defaults, doc)
    for key, val in merged.items():
        if isinstance(val, list):
            merged[key] = tuple(val)
    try:
        return cls(**merged)
    except (TypeError, ValueError) as exc:
        raise InvalidConfig(f"invalid {name!r} section: {exc}") from exc


@dataclass
class RunConfig:
    seed: int = 0
    scenario: str = "desk"
    out: str = "runs/default"
    action_mode: str = "twist"
    checkpoint: str | None = None
    geometry: RobotGeometry = field(default_factory=RobotGeometry)
    reward: RewardParams = field(default_factory=RewardParams)
    fuzzy: dict = field(default_factory=lambda: dict(FUZZY_DEFAULTS))
    env: EnvConfig = field(default_factory=EnvConfig)
    sac: SacConfig = field(default_factory=SacConfig)
    eval: dict = field(default_factory=lambda: dict(EVAL_DEFAULTS))
    planner: dict = field(default_factory=lambda: dict(PLANNER_DEFAULTS))
    bench: dict = field(default_factory=lambda: dict(BENCH_DEFAULTS))

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "RunConfig":
        if not isinstance(doc, dict):
            raise InvalidConfig("configuration must be a JSON object")
        unknown = set(doc) - set(SECTIONS) - set(TOP_LEVEL)
        if unknown:
            raise InvalidConfig(f"unknown configuration keys: {sorted(unknown)}")
        try:
            sac = SacConfig.from_dict(doc.get("sac") or {})
        except TypeError as exc:
            raise InvalidConfig(f"invalid 'sac' section: {exc}") from exc
        cfg = cls(
            seed=doc.get("seed", 0),
            scenario=doc.get("scenario", "desk"),
            out=doc.get("out", "runs/default"),
            action_mode=doc.get("action_mode", "twist"),
            checkpoint=doc.get("checkpoint"),
            geometry=_build(RobotGeometry, "geometry", doc.get("geometry")),
            reward=_build(RewardParams, "reward", doc.get("reward")),
            fuzzy=_merge("fuzzy", FUZZY_DEFAULTS, doc.get("fuzzy")),
            env=_build(EnvConfig, "env", doc.get("env")),
            sac=sac,
            eval=_merge("eval", EVAL_DEFAULTS, doc.get("eval")),
            planner=_merge("planner", PLANNER_DEFAULTS, doc.get("planner")),
            bench=_merge("bench", BENCH_DEFAULTS, doc.get("bench")),
        )
        return cfg.validate()

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except OSError as exc:
            raise InvalidConfig(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise InvalidConfig(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(doc)

    def validate(self) -> "RunConfig":
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise InvalidConfig("seed must be a nonnegative integer")
        if self.action_mode not in ACTION_DIMS:
            raise InvalidConfig(f"action_mode must be one of {sorted(ACTION_DIMS)}")
        hold = self.fuzzy["hold_steps"]
        if not isinstance(hold, int) or hold < 1:
            raise InvalidConfig("fuzzy.hold_steps must be a positive integer")
        slew = self.fuzzy["slew_max"]
        if slew is not None and slew <= 0:
            raise InvalidConfig("fuzzy.slew_max must be positive or null")
        if self.env.max_steps < 1 or self.env.dt <= 0:
            raise InvalidConfig("env.max_steps and env.dt must be positive")
        if self.eval["episodes"] < 1:
            raise InvalidConfig("eval.episodes must be >= 1")
        if self.planner["resolution"] <= 0 or self.planner["lookahead"] <= 0:
            raise InvalidConfig("planner.resolution and planner.lookahead must be positive")
        self.sac.validate()
        return self

    def check_files(self, need_checkpoint: bool = False) -> None:
        """Referenced files must exist."""
        if self.scenario not in BUILTIN_SCENARIOS and not Path(self.scenario).is_file():
            raise InvalidConfig(f"scenario {self.scenario!r} is neither builtin nor a file")
        if need_checkpoint and (self.checkpoint is None or not Path(self.checkpoint).is_file()):
            raise InvalidConfig(f"checkpoint {self.checkpoint!r} not found")

    def controller(self) -> FuzzyModeController:
        f = self.fuzzy
        return FuzzyModeController(self.geometry, hold_steps=f["hold_steps"],
                                   slew_max=f["slew_max"], dt=self.env.dt,
                                   memberships=f["memberships"], rules=f["rules"]).fit()

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in TOP_LEVEL}
        for name in SECTIONS:
            val = getattr(self, name)
            out[name] = dataclasses.asdict(val) if dataclasses.is_dataclass(val) else dict(val)
        return json.loads(json.dumps(out))
