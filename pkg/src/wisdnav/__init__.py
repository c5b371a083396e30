"""Hierarchical navigation for four-wheel independent steering/driving robots.

A Soft Actor-Critic policy issues body twists; a two-stage fuzzy controller
picks a motion mode and emits kinematically consistent wheel commands.
"""

from .fuzzy import FuzzyModeController
from .kinematics import BodyTwist, MotionMode, Pose2D, RobotGeometry, WheelCommand
from .sac import SACAgent, SacConfig
from .sim import NavigationEnv, RewardParams, Scenario, builtin_scenario

__all__ = [
    "BodyTwist",
    "FuzzyModeController",
    "MotionMode",
    "NavigationEnv",
    "Pose2D",
    "RewardParams",
    "RobotGeometry",
    "SACAgent",
    "SacConfig",
    "Scenario",
    "WheelCommand",
    "builtin_scenario",
]

__version__ = "0.1.0"
