"""Rigid-body settling simulator and placement stability checker."""

from clutterlab.physics.shapes import BodyState, RigidBody, Shape, ShapeKind, yaw_quaternion
from clutterlab.physics.stability import (
    StabilityReport,
    StabilityThresholds,
    Trajectory,
    accelerations,
    check_stability,
)
from clutterlab.physics.world import (
    SimulationDiverged,
    SolverParams,
    World,
    check_overlap,
    settle,
    step,
)

__all__ = [
    "BodyState",
    "RigidBody",
    "Shape",
    "ShapeKind",
    "SimulationDiverged",
    "SolverParams",
    "StabilityReport",
    "StabilityThresholds",
    "Trajectory",
    "World",
    "accelerations",
    "check_overlap",
    "check_stability",
    "settle",
    "step",
    "yaw_quaternion",
]
