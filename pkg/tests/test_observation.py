import math

import numpy as np
import pytest

from clutterlab.env import new_world
from clutterlab.observation import (
    SAMPLE_WIDTH,
    SLOT_WIDTH,
    TRAJECTORY_SAMPLES,
    AttemptHistoryBuffer,
    ObservationConfig,
    ObservationError,
    assemble_observation,
    observe,
    push_attempt,
    render_heightmap,
    subsample_indices,
)
from clutterlab.physics import Shape, ShapeKind
from clutterlab.scene import ObjectSpec, QueriedRegion, default_scene

CUBE = ObjectSpec("cube", Shape(ShapeKind.CUBOID, (0.025, 0.025, 0.025)), 0.1, 0.5)


def _world_with_cube(region: QueriedRegion, local_xy=(0.0, 0.0), yaw: float = 0.0):
    spec = default_scene("group1", 1)
    world = new_world(spec)
    x, y = region.to_world_xy(np.array(local_xy))
    world.add_body(CUBE.body((float(x), float(y), region.top + 0.025), yaw=region.yaw + yaw))
    return world


def test_empty_table_heightmap_is_flat():
    spec = default_scene("group1", 3)
    hm = render_heightmap(new_world(spec), spec.region, 16)
    # the table body's top is center + half height, equal to 0.70 up to rounding
    np.testing.assert_allclose(hm.heights, spec.table.top, rtol=0, atol=1e-12)
    assert np.ptp(hm.heights) == 0.0


def test_cube_top_matches_box_oracle():
    region = QueriedRegion((0.0, 0.0, 0.7), (0.2, 0.2, 0.15))
    grid = 64
    hm = render_heightmap(_world_with_cube(region), region, grid)
    cell = 0.4 / grid
    c = np.arange(grid) * cell - 0.2 + cell / 2
    inside = (np.abs(c[:, None]) < 0.025 - cell) & (np.abs(c[None, :]) < 0.025 - cell)
    outside = (np.abs(c[:, None]) > 0.025 + cell) | (np.abs(c[None, :]) > 0.025 + cell)
    np.testing.assert_allclose(hm.heights[inside], 0.75, atol=1e-9)
    np.testing.assert_allclose(hm.heights[outside], 0.70, atol=1e-9)


@pytest.mark.parametrize("yaw", [0.3, 1.2, -2.5])
def test_heightmap_invariant_to_region_yaw(yaw):
    grid = 32
    base = QueriedRegion((0.0, 0.0, 0.7), (0.2, 0.15, 0.15))
    turned = QueriedRegion((0.05, -0.02, 0.7), (0.2, 0.15, 0.15), yaw)
    a = render_heightmap(_world_with_cube(base, (0.06, -0.03), 0.4), base, grid).heights
    b = render_heightmap(_world_with_cube(turned, (0.06, -0.03), 0.4), turned, grid).heights
    # quantization: cells may flip only along the cube outline
    diff = np.abs(a - b) > 1e-9
    edge = np.zeros_like(diff)
    high = a > 0.71
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            edge |= np.roll(np.roll(high, dx, 0), dy, 1) != high
    assert not np.any(diff & ~edge)


# -- attempt history ---------------------------------------------------------------------------------------


def test_push_attempt_fills_one_slot():
    region = QueriedRegion((0.0, 0.0, 0.7), (0.3, 0.35, 0.15))
    buf = AttemptHistoryBuffer(5)
    traj = np.zeros((240, 13))
    traj[:, 3] = 1.0
    out = push_attempt(buf, np.array([0.1, 0.2, 0.3, 0.4]), traj, region)
    assert buf.filled == 0  # functional update
    assert out.filled == 1
    assert np.any(out.slots[0] != 0)
    assert np.all(out.slots[1:] == 0)
    np.testing.assert_array_equal(out.slots[0, TRAJECTORY_SAMPLES * SAMPLE_WIDTH :][:4], [0.1, 0.2, 0.3, 0.4])


def test_subsample_stride():
    idx = subsample_indices(240)
    assert len(idx) == 12 and idx[0] == 0 and idx[-1] == 239
    np.testing.assert_array_equal(idx, np.round(np.arange(12) * 239 / 11).astype(int))
    assert np.diff(idx).mean() == pytest.approx(239 / 11, abs=0.1)
    np.testing.assert_array_equal(subsample_indices(5), np.arange(5))


def test_short_trajectory_zero_padded():
    region = QueriedRegion((0.0, 0.0, 0.7), (0.3, 0.35, 0.15))
    traj = np.ones((5, 13))
    out = push_attempt(AttemptHistoryBuffer(5), np.zeros(4), traj, region)
    rows = out.slots[0, : TRAJECTORY_SAMPLES * SAMPLE_WIDTH].reshape(TRAJECTORY_SAMPLES, SAMPLE_WIDTH)
    assert np.all(np.any(rows[:5] != 0, axis=1))
    assert np.all(rows[5:] == 0)


def test_buffer_capacity_and_rolling():
    region = QueriedRegion((0.0, 0.0, 0.7), (0.3, 0.35, 0.15))
    buf = AttemptHistoryBuffer(1)
    buf = push_attempt(buf, np.full(4, 0.1), np.zeros((3, 13)), region)
    with pytest.raises(ValueError):
        push_attempt(buf, np.full(4, 0.2), np.zeros((3, 13)), region)
    roll = AttemptHistoryBuffer(1, rolling=True)
    for v in (0.1, 0.2, 0.3):
        roll = push_attempt(roll, np.full(4, v), np.zeros((3, 13)), region)
    assert roll.filled == 1
    assert roll.slots[0, TRAJECTORY_SAMPLES * SAMPLE_WIDTH] == 0.3


# -- assembly ---------------------------------------------------------------------------------------------


def test_observation_dimension_and_layout():
    cfg = ObservationConfig()
    assert SLOT_WIDTH == 167
    assert cfg.dim == 64**2 + 8 + 5 * 167 + 2 == 4941
    spec = default_scene("group2", 3)
    obj = spec.queried_objects[0]
    obs = observe(new_world(spec), spec.region, obj, AttemptHistoryBuffer(5), (0.0, 0.0), cfg)
    assert obs.shape == (4941,)
    assert np.all(obs[64**2 + 8 : -2] == 0)
    again = observe(new_world(spec), spec.region, obj, AttemptHistoryBuffer(5), (0.0, 0.0), cfg)
    np.testing.assert_array_equal(obs, again)


def test_open_loop_hides_history():
    spec = default_scene("group2", 3)
    obj = spec.queried_objects[0]
    buf = push_attempt(AttemptHistoryBuffer(5), np.ones(4), np.ones((20, 13)), spec.region)
    hm = render_heightmap(new_world(spec), spec.region, 8)
    closed = assemble_observation(hm, obj, buf, (0.2, 0.4), ObservationConfig(grid=8))
    opened = assemble_observation(hm, obj, buf, (0.2, 0.4), ObservationConfig(grid=8, use_history=False))
    assert np.any(closed != opened)
    assert np.all(opened[64 + 8 : -2] == 0)
    assert closed[-2:].tolist() == [0.2, 0.4]


def test_non_finite_rejected():
    spec = default_scene("group2", 3)
    hm = render_heightmap(new_world(spec), spec.region, 8)
    hm.heights[0, 0] = math.nan
    with pytest.raises(ObservationError):
        assemble_observation(hm, spec.queried_objects[0], AttemptHistoryBuffer(5), (0, 0), ObservationConfig(grid=8))
