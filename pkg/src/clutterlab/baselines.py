"""Random rejection sampling (RRS) placement baseline."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from clutterlab.env import EpisodeRecord, GeneratorEnv
from clutterlab.physics import World
from clutterlab.scene import ObjectSpec, QueriedRegion, WorldPose, world_pose_to_action


def support_height(world: World, obj: ObjectSpec, x: float, y: float, yaw: float, floor: float) -> float:
    """Highest scene surface under the object's upright footprint at (x, y, yaw)."""
    fp = obj.shape.footprint_points()
    c, s = math.cos(yaw), math.sin(yaw)
    xs = x + c * fp[:, 0] - s * fp[:, 1]
    ys = y + s * fp[:, 0] + c * fp[:, 1]
    return float(world.heights(xs, ys, floor).max())


def rrs_pose(env: GeneratorEnv, rng: np.random.Generator) -> WorldPose:
    region: QueriedRegion = env.region
    obj = env.current_object
    lx = rng.uniform(-region.half_extents[0], region.half_extents[0])
    ly = rng.uniform(-region.half_extents[1], region.half_extents[1])
    x, y = region.to_world_xy(np.array([lx, ly]))
    yaw = region.yaw + rng.uniform(-math.pi, math.pi)
    z = support_height(env.world, obj, x, y, yaw, region.top) + obj.shape.bottom_offset
    return WorldPose((float(x), float(y), z + env.config.drop_epsilon), yaw)


def rrs_episode(
    env: GeneratorEnv,
    seed: int | Sequence[int],
    reset_seed: int | np.random.Generator | None = None,
) -> EpisodeRecord:
    """Run one RRS episode; object ``j`` draws from its own stream ``(seed, j)``.

    Per-object streams make the first objects' outcomes independent of how many
    objects follow, so success is monotone in the object count for a fixed seed.
    """
    key = [int(seed)] if np.isscalar(seed) else [int(s) for s in seed]
    env.reset(np.random.default_rng(key) if reset_seed is None else reset_seed)
    rewards: list[float] = []
    attempts: list[int] = []
    streams: dict[int, np.random.Generator] = {}
    while not env.done:
        j = env.obj_index
        rng = streams.setdefault(j, np.random.default_rng([*key, j]))
        pose = rrs_pose(env, rng)
        action = np.clip(world_pose_to_action(env.region, pose, env.current_object), -1.0, 1.0)
        res = env.attempt_pose(pose, action)
        rewards.append(res.reward)
        if res.flags.object_done and not res.flags.diverged:
            attempts.append(env.placements[-1].attempts if not res.flags.attempt_failed else env.config.max_attempts)
    return EpisodeRecord(
        env.spec, env.region, list(env.placements), env.success, attempts, list(env.attempt_stable_steps), rewards
    )
