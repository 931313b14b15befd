from dataclasses import replace

import numpy as np
import pytest

from clutterlab.env import (
    GeneratorConfig,
    GeneratorEnv,
    build_world,
    episode_scene,
    placement_reward,
    replay_scene,
    rollout_episode,
)
from clutterlab.observation import ObservationConfig
from clutterlab.physics import Shape, ShapeKind
from clutterlab.scene import (
    ENLARGED_TABLE,
    ChangeKind,
    ObjectSpec,
    SceneSpec,
    Table,
    default_scene,
    deserialize_scene,
    serialize_scene,
)

CFG = GeneratorConfig()
SMALL_OBS = ObservationConfig(grid=8)


def _spheres(n: int, table: Table = Table()) -> SceneSpec:
    catalog = tuple(ObjectSpec(f"ball{i}", Shape(ShapeKind.SPHERE, (0.04,)), 0.2, 0.5) for i in range(n))
    return SceneSpec(table, table.full_region(), catalog, tuple(o.id for o in catalog))


def test_reward_arithmetic_examples():
    assert placement_reward(0.0, 0.0, 2, True, CFG) == 200.0
    assert placement_reward(10.0, 30.0, 3, False, CFG) == pytest.approx(-0.2, abs=1e-15)
    assert placement_reward(10.0, 30.0, 3, True, CFG) == pytest.approx(300.0 - 0.2, abs=1e-12)


def test_generator_config_validation():
    with pytest.raises(ValueError):
        GeneratorConfig(max_attempts=0)
    with pytest.raises(ValueError):
        GeneratorEnv(default_scene("group1", 2), obs_config=ObservationConfig(history_slots=9))


def test_reset_is_seed_deterministic_and_flat():
    env = GeneratorEnv(default_scene("group1", 3), obs_config=SMALL_OBS)
    a = env.reset(7)
    b = env.reset(7)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(a[:64], 0.0, atol=1e-12)  # empty table, normalized heightmap


def test_shrinkage_reset_reduces_region():
    spec = default_scene("group1", 2, table=ENLARGED_TABLE, region=Table().full_region())
    env = GeneratorEnv(spec, obs_config=SMALL_OBS, region_change=ChangeKind.SHRINKAGE)
    for seed in range(20):
        env.reset(seed)
        for k in range(2):
            shrink = spec.region.half_extents[k] - env.region.half_extents[k]
            assert 0 < shrink <= 0.10


def test_center_cuboid_is_stable_and_advances():
    spec = default_scene("group1", 3)
    env = GeneratorEnv(spec, obs_config=SMALL_OBS)
    env.reset(0)
    res = env.step(np.array([0.0, 0.0, -1.0, 0.0]))
    assert res.flags.object_done and not res.flags.attempt_failed
    assert env.obj_index == 1
    assert res.reward > 90.0  # 1 * 100 minus a small motion penalty


def _oracle(obs, env):
    xs = np.linspace(-0.6, 0.6, env.n_objects)
    return np.array([xs[env.obj_index], 0.0, -1.0, 0.0])


def test_oracle_policy_places_everything():
    env = GeneratorEnv(default_scene("group2", 3, table=ENLARGED_TABLE), obs_config=SMALL_OBS)
    rec = rollout_episode(_oracle, env, 0)
    assert rec.success
    assert rec.n_placed == 3
    assert rec.attempts == [1, 1, 1]
    assert sum(rec.rewards) > 550


def test_colliding_constant_policy_fails_after_budget():
    env = GeneratorEnv(_spheres(2), obs_config=SMALL_OBS)
    rec = rollout_episode(lambda obs, env: np.array([0.5, 0.5, -1.0, 0.0]), env, 0)
    assert not rec.success
    assert rec.n_placed == 1
    attempts_on_second = [a for obj, a, _ in rec.stable_steps if obj == 1]
    assert attempts_on_second == [1, 2, 3, 4, 5]
    assert len(rec.rewards) == 1 + CFG.max_attempts
    assert all(r < 0 for r in rec.rewards[1:])


def test_history_fills_on_failure():
    env = GeneratorEnv(_spheres(2), obs_config=ObservationConfig(grid=8))
    env.reset(0)
    act = np.array([0.0, 0.0, -1.0, 0.0])
    env.step(act)
    assert env.history.filled == 0
    res = env.step(act)
    assert res.flags.attempt_failed
    assert env.history.filled == 1
    assert res.outcome is not None and res.outcome.overlap_rejected


def test_episode_is_deterministic_and_replays():
    def policy(obs, env):
        return np.array([-0.5 + 0.5 * env.obj_index, 0.2, -0.8, 0.1])

    env = GeneratorEnv(default_scene("group3", 3, table=ENLARGED_TABLE), obs_config=SMALL_OBS)
    a = rollout_episode(policy, env, 3)
    b = rollout_episode(policy, env, 3)
    assert a.placements == b.placements
    assert a.rewards == b.rewards
    spec, placements = deserialize_scene(serialize_scene(episode_scene(a), a.placements))
    report = replay_scene(spec, placements)
    assert report.ok == a.success
    world, ids = build_world(spec, placements)
    for bid, p in zip(ids, placements):
        np.testing.assert_array_equal(world.state(bid).position, p.position)


def test_replay_detects_floating_object():
    spec = _spheres(1)
    env = GeneratorEnv(spec, obs_config=SMALL_OBS)
    rec = rollout_episode(lambda obs, env: np.array([0.0, 0.0, -1.0, 0.0]), env, 0)
    good = rec.placements[0]
    assert replay_scene(spec, rec.placements).ok
    lifted = replace(good, position=(good.position[0], good.position[1], good.position[2] + 0.2))
    assert not replay_scene(spec, [lifted]).ok
    off_table = replace(good, position=(5.0, 0.0, good.position[2]))
    assert not replay_scene(spec, [off_table]).ok


def test_step_rejects_out_of_box_action():
    env = GeneratorEnv(_spheres(2), obs_config=SMALL_OBS)
    env.reset(0)
    with pytest.raises(ValueError):
        env.step(np.array([2.0, 0, 0, 0]))
    with pytest.raises(RuntimeError):
        GeneratorEnv(_spheres(1), obs_config=SMALL_OBS).step(np.zeros(4))
