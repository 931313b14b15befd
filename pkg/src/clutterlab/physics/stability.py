"""Physics-based placement stability check on recorded trajectories."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np



@dataclass(frozen=True)
class StabilityThresholds:
    """Rest thresholds (SI units) and the reach/hold step windows."""

    lin_vel_max: float = 0.005
    lin_acc_max: float = 1.0
    ang_vel_max: float = math.radians(0.5)
    ang_acc_max: float = math.radians(180.0)
    reach_window: int = 40
    hold_window: int = 20

    def __post_init__(self) -> None:
        values = (self.lin_vel_max, self.lin_acc_max, self.ang_vel_max, self.ang_acc_max)
        if any(not v > 0 for v in values) or self.reach_window < 1 or self.hold_window < 1:
            raise ValueError("stability thresholds and windows must be positive")

    def as_array(self) -> np.ndarray:
        return np.array(
            [
                self.lin_vel_max,
                self.lin_acc_max,
                self.ang_vel_max,
                self.ang_acc_max,
                float(self.reach_window),
                float(self.hold_window),
            ]
        )


@dataclass
class Trajectory:
    """Per-step 13-vectors (position, quaternion, linear and angular velocity)."""

    samples: np.ndarray
    dt: float

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 2 or self.samples.shape[1] != 13:
            raise ValueError("trajectory samples must have shape (length, 13)")

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def twists(self) -> np.ndarray:
        return self.samples[:, 7:13]

    @property
    def positions(self) -> np.ndarray:
        return self.samples[:, 0:3]


@dataclass(frozen=True)
class StabilityReport:
    stable: bool
    stable_step: int
    velocity_sum: float
    acceleration_sum: float


def accelerations(traj: Trajectory, dt: float | None = None) -> np.ndarray:
    """Finite-difference twist rates; the body starts from rest before step 0."""
    dt = traj.dt if dt is None else dt
    tw = traj.twists
    prev = np.zeros_like(tw)
    prev[1:] = tw[:-1]
    return (tw - prev) / dt


def below_threshold_flags(traj: Trajectory, thresholds: StabilityThresholds) -> np.ndarray:
    """Per-step flag: every velocity and acceleration norm strictly below its limit."""
    tw = traj.twists
    acc = accelerations(traj)
    return (
        (np.linalg.norm(tw[:, :3], axis=1) < thresholds.lin_vel_max)
        & (np.linalg.norm(acc[:, :3], axis=1) < thresholds.lin_acc_max)
        & (np.linalg.norm(tw[:, 3:], axis=1) < thresholds.ang_vel_max)
        & (np.linalg.norm(acc[:, 3:], axis=1) < thresholds.ang_acc_max)
    )


def check_stability(traj: Trajectory, thresholds: StabilityThresholds | None = None) -> StabilityReport:
    """Stable iff every threshold holds over ``hold_window`` consecutive steps
    starting no later than ``reach_window``.
    """
    thresholds = thresholds or StabilityThresholds()
    if len(traj) < 1:
        raise ValueError("trajectory must contain at least one sample")
    flags = below_threshold_flags(traj, thresholds)
    vel_sum = float(np.linalg.norm(traj.twists, axis=1).sum())
    acc_sum = float(np.linalg.norm(accelerations(traj), axis=1).sum())

    hold = thresholds.hold_window
    run = 0
    for i, ok in enumerate(flags):
        run = run + 1 if ok else 0
        if run >= hold:
            start = i - run + 1
            if start <= thresholds.reach_window:
                return StabilityReport(True, start + hold, vel_sum, acc_sum)
            break
    return StabilityReport(False, len(traj), vel_sum, acc_sum)
