"""Fail-safe imitation toolkit.

Certified inner approximations of the safe action set under worst-case
traffic, a piecewise-diffeomorphic safety layer with exact densities and
gradients, and an exact tabular harness for compounding imitation error.
"""

from .geometry import (
    AgentState,
    Box2,
    EgoLimits,
    EgoState,
    GridPartition,
    Interval,
    MotionBounds,
    Road,
    Scenario,
)
from .fallback import SafetyOptions, momentary_cost, total_safety_cost
from .safe_set import SafeSet, infer_safe_set
from .safety_layer import PreSafeGaussian, SafePolicy, build_distance_map, build_probability_map

__version__ = "0.1.0"

__all__ = [
    "AgentState",
    "Box2",
    "EgoLimits",
    "EgoState",
    "GridPartition",
    "Interval",
    "MotionBounds",
    "PreSafeGaussian",
    "Road",
    "SafePolicy",
    "SafeSet",
    "SafetyOptions",
    "Scenario",
    "build_distance_map",
    "build_probability_map",
    "infer_safe_set",
    "momentary_cost",
    "total_safety_cost",
]
