"""Policy observations: region heightmap, object descriptor and attempt history.

Layout of the flat vector (``ObservationConfig.dim`` entries)::

    heightmap  G*G      (height above surface top) / LENGTH_SCALE, row-major over region-frame (x, y)
    object     8        shape one-hot (3), dims / 0.1 m (3, zero-filled), mass kg, friction
    history    I*167    per slot: 12x13 trajectory samples, action (4), region (7)
    progress   2        objects placed / N, failed attempts / I
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from clutterlab.physics import World
from clutterlab.scene import DEFAULT_TABLE, ObjectSpec, QueriedRegion

LENGTH_SCALE = DEFAULT_TABLE.half_diagonal
ANGULAR_SCALE = 2.0 * math.pi
DIM_SCALE = 0.1
TRAJECTORY_SAMPLES = 12
SAMPLE_WIDTH = 13
DESCRIPTOR_WIDTH = 8
REGION_WIDTH = 7
ACTION_WIDTH = 4
SLOT_WIDTH = TRAJECTORY_SAMPLES * SAMPLE_WIDTH + ACTION_WIDTH + REGION_WIDTH


class ObservationError(ValueError):
    """An observation component is not finite."""


@dataclass(frozen=True)
class ObservationConfig:
    grid: int = 64
    history_slots: int = 5
    use_history: bool = True
    rolling_history: bool = False

    @property
    def dim(self) -> int:
        return self.grid**2 + DESCRIPTOR_WIDTH + self.history_slots * SLOT_WIDTH + 2


@dataclass
class Heightmap:
    """Absolute surface heights (m) on a ``G x G`` grid in the region frame."""

    heights: np.ndarray
    region: QueriedRegion

    @property
    def resolution(self) -> int:
        return self.heights.shape[0]

    def normalized(self) -> np.ndarray:
        return (self.heights - self.region.top) / LENGTH_SCALE


def grid_points(region: QueriedRegion, grid: int) -> np.ndarray:
    """World (x, y) of cell centers, shape ``(G, G, 2)`` indexed ``[ix, iy]``."""
    hx, hy = region.half_extents[0], region.half_extents[1]
    u = (np.arange(grid) + 0.5) / grid * 2.0 - 1.0
    lx, ly = np.meshgrid(u * hx, u * hy, indexing="ij")
    return region.to_world_xy(np.stack([lx, ly], axis=-1))


def render_heightmap(world: World, region: QueriedRegion, grid: int = 64) -> Heightmap:
    pts = grid_points(region, grid).reshape(-1, 2)
    h = world.heights(pts[:, 0], pts[:, 1], floor=region.top)
    return Heightmap(h.reshape(grid, grid), region)


def object_descriptor(obj: ObjectSpec) -> np.ndarray:
    out = np.zeros(DESCRIPTOR_WIDTH)
    out[int(obj.shape.kind)] = 1.0
    out[3 : 3 + len(obj.shape.dims)] = np.array(obj.shape.dims) / DIM_SCALE
    out[6] = obj.mass
    out[7] = obj.friction
    return out


def region_descriptor(region: QueriedRegion) -> np.ndarray:
    """Center (x, y, top offset), half-extents and yaw / pi."""
    cx, cy, _ = region.center
    hx, hy, hz = region.half_extents
    out = np.array([cx, cy, 0.0, hx, hy, hz, 0.0]) / LENGTH_SCALE
    out[6] = region.yaw / math.pi
    return out


def subsample_indices(length: int, samples: int = TRAJECTORY_SAMPLES) -> np.ndarray:
    """Evenly spaced indices keeping both endpoints; all indices if too short."""
    if length <= samples:
        return np.arange(length)
    return np.round(np.linspace(0.0, length - 1, samples)).astype(int)


def encode_trajectory(samples: np.ndarray, region: QueriedRegion) -> np.ndarray:
    """Subsample to ``TRAJECTORY_SAMPLES`` rows in the region frame, zero-padded."""
    samples = np.asarray(samples, dtype=float)
    out = np.zeros((TRAJECTORY_SAMPLES, SAMPLE_WIDTH))
    idx = subsample_indices(len(samples))
    s = samples[idx]
    out[: len(idx), 0:2] = region.to_local_xy(s[:, 0:2]) / LENGTH_SCALE
    out[: len(idx), 2] = (s[:, 2] - region.top) / LENGTH_SCALE
    out[: len(idx), 3:7] = s[:, 3:7]
    out[: len(idx), 7:10] = s[:, 7:10]
    out[: len(idx), 10:13] = s[:, 10:13] / ANGULAR_SCALE
    return out


@dataclass
class AttemptHistoryBuffer:
    """Fixed slots of failed attempts; ``rolling`` keeps only the newest ones."""

    capacity: int
    rolling: bool = False
    slots: np.ndarray = field(init=False)
    count: int = 0

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise ValueError("history capacity must be >= 1")
        self.slots = np.zeros((self.capacity, SLOT_WIDTH))

    @property
    def filled(self) -> int:
        return min(self.count, self.capacity)

    def vector(self) -> np.ndarray:
        return self.slots.ravel()

    def copy(self) -> "AttemptHistoryBuffer":
        out = AttemptHistoryBuffer(self.capacity, self.rolling)
        out.slots = self.slots.copy()
        out.count = self.count
        return out


def push_attempt(
    buffer: AttemptHistoryBuffer,
    action: np.ndarray,
    trajectory: np.ndarray,
    region: QueriedRegion,
) -> AttemptHistoryBuffer:
    """Return a new buffer with the attempt appended."""
    out = buffer.copy()
    if out.count >= out.capacity:
        if not out.rolling:
            raise ValueError(f"history buffer full ({out.capacity} slots)")
        out.slots[:-1] = out.slots[1:]
        row = out.capacity - 1
    else:
        row = out.count
    traj_width = TRAJECTORY_SAMPLES * SAMPLE_WIDTH
    out.slots[row] = 0.0
    out.slots[row, :traj_width] = encode_trajectory(trajectory, region).ravel()
    out.slots[row, traj_width : traj_width + ACTION_WIDTH] = action
    out.slots[row, traj_width + ACTION_WIDTH :] = region_descriptor(region)
    out.count += 1
    return out


def assemble_observation(
    heightmap: Heightmap,
    obj: ObjectSpec,
    buffer: AttemptHistoryBuffer,
    progress: tuple[float, float],
    config: ObservationConfig,
) -> np.ndarray:
    if heightmap.resolution != config.grid:
        raise ValueError(f"heightmap is {heightmap.resolution}x{heightmap.resolution}, config expects {config.grid}")
    if buffer.capacity != config.history_slots:
        raise ValueError("history buffer capacity does not match the config")
    history = buffer.vector() if config.use_history else np.zeros(buffer.slots.size)
    obs = np.concatenate(
        [heightmap.normalized().ravel(), object_descriptor(obj), history, np.asarray(progress, dtype=float)]
    )
    if not np.all(np.isfinite(obs)):
        raise ObservationError("observation contains non-finite values")
    return obs


def observe(
    world: World,
    region: QueriedRegion,
    obj: ObjectSpec,
    buffer: AttemptHistoryBuffer,
    progress: tuple[float, float],
    config: ObservationConfig,
) -> np.ndarray:
    return assemble_observation(render_heightmap(world, region, config.grid), obj, buffer, progress, config)


__all__ = [
    "AttemptHistoryBuffer",
    "Heightmap",
    "LENGTH_SCALE",
    "ObservationConfig",
    "ObservationError",
    "SLOT_WIDTH",
    "assemble_observation",
    "encode_trajectory",
    "grid_points",
    "object_descriptor",
    "observe",
    "push_attempt",
    "region_descriptor",
    "render_heightmap",
    "subsample_indices",
]
