"""Sequential placement environment: attempts, settling, reward and bookkeeping."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from clutterlab.observation import AttemptHistoryBuffer, ObservationConfig, observe, push_attempt
from clutterlab.physics import (
    RigidBody,
    SimulationDiverged,
    StabilityThresholds,
    Trajectory,
    World,
    check_stability,
)
from clutterlab.scene import (
    ChangeKind,
    ObjectSpec,
    PlacementRecord,
    QueriedRegion,
    SceneSpec,
    WorldPose,
    action_to_world_pose,
    sample_valid_region,
)

OVERLAP_TOL = 1e-3
NUDGE_RESOLUTION = 1e-4


@dataclass(frozen=True)
class GeneratorConfig:
    max_attempts: int = 5
    settle_steps: int = 240
    penalty_scale: float = 0.005
    success_reward: float = 100.0
    drop_epsilon: float = 0.002
    drift_tolerance: float = 0.001
    thresholds: StabilityThresholds = field(default_factory=StabilityThresholds)

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if self.settle_steps < self.thresholds.reach_window + self.thresholds.hold_window:
            raise ValueError("settle_steps must cover the reach and hold windows")


def placement_reward(
    velocity_sum: float, acceleration_sum: float, n: int, stable: bool, config: GeneratorConfig
) -> float:
    """-c * sum(|v| + |a|) + n * 1[stable] * R0."""
    bonus = n * config.success_reward if stable else 0.0
    return -config.penalty_scale * (velocity_sum + acceleration_sum) + bonus


@dataclass
class PlacementOutcome:
    stable: bool
    reward: float
    trajectory: Trajectory
    overlap_rejected: bool
    stable_step: int
    velocity_sum: float
    acceleration_sum: float
    drifted: bool = False


@dataclass
class StepFlags:
    attempt_failed: bool
    object_done: bool
    episode_done: bool
    episode_success: bool
    diverged: bool = False


@dataclass
class StepResult:
    reward: float
    observation: np.ndarray
    flags: StepFlags
    outcome: PlacementOutcome | None


def max_surface_points(objects) -> int:
    return max([len(o.shape.surface_points()) for o in objects] + [1])


def lowest_clear_height(world: World, body: RigidBody, tol: float = 0.0) -> float:
    """Lowest z at or above the body's current z with penetration <= ``tol``."""
    lo = float(body.state.position[2])
    if world.penetration(body) <= tol:
        return lo
    step = 0.01
    hi = lo + step
    while True:
        body.state.position[2] = hi
        if world.penetration(body) <= tol:
            break
        step *= 2.0
        hi = lo + step
    while hi - lo > NUDGE_RESOLUTION:
        mid = 0.5 * (lo + hi)
        body.state.position[2] = mid
        if world.penetration(body) <= tol:
            hi = mid
        else:
            lo = mid
    body.state.position[2] = hi
    return hi


class GeneratorEnv:
    """One scene at a time; ``step`` takes a relative action in [-1, 1]^4."""

    def __init__(
        self,
        spec: SceneSpec | Callable[[np.random.Generator], SceneSpec],
        config: GeneratorConfig | None = None,
        obs_config: ObservationConfig | None = None,
        region_change: ChangeKind | str | None = None,
    ):
        self._spec_source = spec
        self.config = config or GeneratorConfig()
        self.obs_config = obs_config or ObservationConfig(history_slots=self.config.max_attempts)
        if self.obs_config.history_slots > self.config.max_attempts and not self.obs_config.rolling_history:
            raise ValueError("history slots cannot exceed the attempt budget")
        self.region_change = ChangeKind.parse(region_change) if isinstance(region_change, str) else region_change
        self.rng = np.random.default_rng(0)
        self.done = True

    # -- episode lifecycle ---------------------------------------------------------------
    def reset(self, seed: int | np.random.Generator | None = None) -> np.ndarray:
        if seed is not None:
            self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        spec = self._spec_source(self.rng) if callable(self._spec_source) else self._spec_source
        region = spec.region
        if self.region_change not in (None, ChangeKind.IDENTITY):
            region, _ = sample_valid_region(region, self.region_change, spec.table, self.rng)
        self.spec = spec
        self.region: QueriedRegion = region
        self.objects: list[ObjectSpec] = spec.queried_objects
        if not self.objects:
            raise ValueError("scene queries no objects")
        self.world = new_world(spec)
        self.committed: list[int] = []
        self.placements: list[PlacementRecord] = []
        self.attempt_stable_steps: list[tuple[int, int, int]] = []  # (object idx, attempt, steps)
        self.obj_index = 0
        self.attempt = 1
        self.history = self._empty_history()
        self.done = False
        self.success = False
        return self.observation()

    def _empty_history(self) -> AttemptHistoryBuffer:
        return AttemptHistoryBuffer(self.obs_config.history_slots, self.obs_config.rolling_history)

    @property
    def n_objects(self) -> int:
        return len(self.objects)

    @property
    def current_object(self) -> ObjectSpec:
        return self.objects[min(self.obj_index, self.n_objects - 1)]

    def progress(self) -> tuple[float, float]:
        return self.obj_index / self.n_objects, (self.attempt - 1) / self.config.max_attempts

    def observation(self) -> np.ndarray:
        return observe(self.world, self.region, self.current_object, self.history, self.progress(), self.obs_config)

    # -- attempts ------------------------------------------------------------------------------
    def propose(self, action: np.ndarray) -> WorldPose:
        obj = self.current_object
        pose = action_to_world_pose(self.region, action, obj)
        x, y, z = pose.position
        return WorldPose((x, y, z + self.config.drop_epsilon), pose.yaw)

    def attempt_pose(self, pose: WorldPose, action: np.ndarray) -> StepResult:
        """Run one placement attempt at an explicit world pose."""
        if self.done:
            raise RuntimeError("episode is done; call reset()")
        cfg = self.config
        obj = self.current_object
        n = self.obj_index + 1
        snap = self.world.snapshot()
        try:
            outcome, bid = simulate_placement(self.world, self.committed, obj, pose, n, cfg)
        except SimulationDiverged:
            self.world.restore(snap)
            self.done = True
            flags = StepFlags(True, True, True, False, diverged=True)
            return StepResult(0.0, self.observation(), flags, None)
        stable = outcome.stable
        reward = outcome.reward
        traj = outcome.trajectory
        self.attempt_stable_steps.append((self.obj_index, self.attempt, outcome.stable_step))

        if stable:
            st = self.world.state(bid)
            self.placements.append(
                PlacementRecord(
                    obj.id,
                    tuple(float(v) for v in st.position),
                    tuple(float(v) for v in st.orientation),
                    tuple(float(v) for v in np.asarray(action, dtype=float)),
                    self.attempt,
                    outcome.stable_step,
                )
            )
            self.committed.append(bid)
            self.obj_index += 1
            self.attempt = 1
            self.history = self._empty_history()
            self.success = self.obj_index >= self.n_objects
            self.done = self.success
            flags = StepFlags(False, True, self.done, self.success)
        else:
            self.world.restore(snap)
            if self.obs_config.history_slots > 0:
                full = self.history.count >= self.history.capacity and not self.history.rolling
                if not full:
                    self.history = push_attempt(self.history, np.asarray(action, dtype=float), traj.samples, self.region)
            self.attempt += 1
            self.done = self.attempt > cfg.max_attempts
            flags = StepFlags(True, self.done, self.done, False)
        return StepResult(reward, self.observation(), flags, outcome)

    def step(self, action) -> StepResult:
        if self.done:
            raise RuntimeError("episode is done; call reset()")
        action = np.asarray(action, dtype=float)
        return self.attempt_pose(self.propose(action), action)


def simulate_placement(
    world: World,
    committed: list[int],
    obj: ObjectSpec,
    pose: WorldPose,
    n: int,
    config: GeneratorConfig,
    orientation: np.ndarray | None = None,
) -> tuple[PlacementOutcome, int]:
    """Add ``obj`` at ``pose``, settle and judge it; the world is left in the settled state.

    An overlapping pose is lifted to the lowest clear height plus the drop, settled for the
    full ``k`` steps and always judged unstable. Committed bodies drifting more than the
    tolerance also make the attempt unstable.
    """
    body = obj.body(pose.position, pose.yaw)
    if orientation is not None:
        body.state.orientation = np.asarray(orientation, dtype=float).copy()
    overlap = world.penetration(body) > OVERLAP_TOL
    if overlap:
        lowest_clear_height(world, body)
        body.state.position[2] += config.drop_epsilon
    before = world.pos[committed].copy()
    bid = world.add_body(body)
    traj = world.settle(bid, config.settle_steps, config.thresholds, early_stop=not overlap)
    report = check_stability(traj, config.thresholds)
    drift = float(np.max(np.linalg.norm(world.pos[committed] - before, axis=1), initial=0.0))
    drifted = drift > config.drift_tolerance
    stable = report.stable and not overlap and not drifted
    outcome = PlacementOutcome(
        stable,
        placement_reward(report.velocity_sum, report.acceleration_sum, n, stable, config),
        traj,
        overlap,
        report.stable_step if stable else len(traj),
        report.velocity_sum,
        report.acceleration_sum,
        drifted,
    )
    return outcome, bid


def new_world(spec: SceneSpec) -> World:
    """A world holding only the spec's table, sized for its queried objects."""
    objects = spec.queried_objects
    world = World(
        capacity=len(objects) + 2,
        max_points=max_surface_points(objects),
        max_contacts=256 * (len(objects) + 2),
    )
    world.add_body(spec.table.body())
    return world


def build_world(spec: SceneSpec, placements: Sequence[PlacementRecord]) -> tuple[World, list[int]]:
    """Table plus bodies resting at the recorded poses (zero velocity)."""
    world = new_world(spec)
    ids = []
    for p in placements:
        body = spec.object(p.object_id).body(p.position)
        body.state.orientation = np.asarray(p.orientation, dtype=float)
        ids.append(world.add_body(body))
    return world, ids


@dataclass
class ReplayReport:
    ok: bool
    verdicts: list[bool]
    stable_steps: list[int]
    max_drift: float

    def to_dict(self) -> dict:
        return {"ok": self.ok, "verdicts": self.verdicts, "stable_steps": self.stable_steps, "max_drift": self.max_drift}


def replay_scene(
    spec: SceneSpec, placements: Sequence[PlacementRecord], config: GeneratorConfig | None = None
) -> ReplayReport:
    """Re-place every recorded object in order at its recorded pose and re-check stability."""
    config = config or GeneratorConfig()
    world = new_world(spec)
    committed: list[int] = []
    verdicts, steps = [], []
    worst = 0.0
    for i, p in enumerate(placements):
        obj = spec.object(p.object_id)
        pose = WorldPose(p.position, 0.0)
        before = world.pos[committed].copy()
        try:
            out, bid = simulate_placement(world, committed, obj, pose, i + 1, config, p.orientation)
        except SimulationDiverged:
            verdicts.append(False)
            steps.append(config.settle_steps)
            break
        worst = max(worst, float(np.max(np.linalg.norm(world.pos[committed] - before, axis=1), initial=0.0)))
        verdicts.append(out.stable)
        steps.append(out.stable_step)
        committed.append(bid)
    ok = len(verdicts) == len(placements) and all(verdicts)
    return ReplayReport(ok, verdicts, steps, worst)


@dataclass
class EpisodeRecord:
    spec: SceneSpec
    region: QueriedRegion
    placements: list[PlacementRecord]
    success: bool
    attempts: list[int]
    stable_steps: list[tuple[int, int, int]]
    rewards: list[float]
    diverged: bool = False

    @property
    def n_placed(self) -> int:
        return len(self.placements)


def rollout_episode(
    policy: Callable[[np.ndarray, GeneratorEnv], np.ndarray],
    env: GeneratorEnv,
    seed: int | np.random.Generator | None = None,
) -> EpisodeRecord:
    """Run ``policy(obs, env) -> action`` until the episode ends."""
    obs = env.reset(seed)
    rewards = []
    attempts_per_object: list[int] = []
    diverged = False
    while not env.done:
        res = env.step(policy(obs, env))
        rewards.append(res.reward)
        obs = res.observation
        if res.flags.object_done and not res.flags.diverged:
            attempts_per_object.append(
                env.placements[-1].attempts if not res.flags.attempt_failed else env.config.max_attempts
            )
        diverged = diverged or res.flags.diverged
    return EpisodeRecord(
        env.spec,
        env.region,
        list(env.placements),
        env.success,
        attempts_per_object,
        list(env.attempt_stable_steps),
        rewards,
        diverged,
    )


def episode_scene(record: EpisodeRecord) -> SceneSpec:
    """The episode's scene with its (possibly transformed) region."""
    return replace(record.spec, region=record.region)


__all__ = [
    "EpisodeRecord",
    "ReplayReport",
    "build_world",
    "new_world",
    "replay_scene",
    "simulate_placement",
    "GeneratorConfig",
    "GeneratorEnv",
    "PlacementOutcome",
    "StepFlags",
    "StepResult",
    "episode_scene",
    "lowest_clear_height",
    "placement_reward",
    "rollout_episode",
]
