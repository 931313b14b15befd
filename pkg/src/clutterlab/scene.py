"""Scene specification: support table, queried region, object catalog, placements."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Sequence

import jsonschema
import numpy as np

from clutterlab.physics import RigidBody, Shape, ShapeKind, yaw_quaternion

SCHEMA_VERSION = 1
TABLE_FRICTION = 0.6
DEFAULT_REGION_HEIGHT = 0.15

# Test-time region change ranges.
TRANSLATION_RANGE = 0.15
ROTATION_RANGE = math.pi
SCALE_RANGE = 0.10

GROUP_SEEDS = {"group1": 11, "group2": 23, "group3": 37, "group4": 41, "group5": 53}


class SceneFormatError(ValueError):
    """A scene document violates the schema; the message names the offending path."""


class InvalidRegionChange(ValueError):
    """A region change would move the region off the support surface."""


@dataclass(frozen=True)
class ObjectSpec:
    id: str
    shape: Shape
    mass: float
    friction: float
    color: str = "gray"

    def body(self, position=(0.0, 0.0, 0.0), yaw: float = 0.0) -> RigidBody:
        return RigidBody.at(self.shape, position, yaw=yaw, mass=self.mass, friction=self.friction)


@dataclass(frozen=True)
class QueriedRegion:
    """Box over the support surface; ``center[2]`` is the surface top."""

    center: tuple[float, float, float]
    half_extents: tuple[float, float, float]
    yaw: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "half_extents", tuple(float(v) for v in self.half_extents))
        object.__setattr__(self, "yaw", float(self.yaw))
        if len(self.center) != 3 or len(self.half_extents) != 3:
            raise ValueError("region center and half_extents need three components")
        if any(not h > 0 for h in self.half_extents):
            raise ValueError(f"region half-extents must be positive: {self.half_extents}")

    @property
    def top(self) -> float:
        return self.center[2]

    def to_world_xy(self, local: np.ndarray) -> np.ndarray:
        """Map region-frame (x, y) offsets to world coordinates."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        local = np.asarray(local, dtype=float)
        x = self.center[0] + c * local[..., 0] - s * local[..., 1]
        y = self.center[1] + s * local[..., 0] + c * local[..., 1]
        return np.stack([x, y], axis=-1)

    def to_local_xy(self, world: np.ndarray) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        world = np.asarray(world, dtype=float)
        dx = world[..., 0] - self.center[0]
        dy = world[..., 1] - self.center[1]
        return np.stack([c * dx + s * dy, -s * dx + c * dy], axis=-1)

    def corners(self) -> np.ndarray:
        hx, hy = self.half_extents[0], self.half_extents[1]
        return self.to_world_xy(np.array([[hx, hy], [-hx, hy], [-hx, -hy], [hx, -hy]]))

    @property
    def footprint_area(self) -> float:
        return 4.0 * self.half_extents[0] * self.half_extents[1]


@dataclass(frozen=True)
class Table:
    width: float = 0.60
    length: float = 0.70
    height: float = 0.70
    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0

    @property
    def top(self) -> float:
        return self.height

    @property
    def half_diagonal(self) -> float:
        return 0.5 * math.hypot(self.width, self.length)

    def body(self) -> RigidBody:
        shape = Shape.cuboid(self.width / 2, self.length / 2, self.height / 2)
        return RigidBody.at(
            shape, (self.x, self.y, self.height / 2), yaw=self.yaw, mass=0.0, friction=TABLE_FRICTION
        )

    def contains(self, region: QueriedRegion, tol: float = 1e-9) -> bool:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        pts = region.corners()
        dx = pts[:, 0] - self.x
        dy = pts[:, 1] - self.y
        lx = c * dx + s * dy
        ly = -s * dx + c * dy
        return bool(
            np.all(np.abs(lx) <= self.width / 2 + tol) and np.all(np.abs(ly) <= self.length / 2 + tol)
        )

    def full_region(self, height: float = DEFAULT_REGION_HEIGHT) -> QueriedRegion:
        return QueriedRegion((self.x, self.y, self.top), (self.width / 2, self.length / 2, height), self.yaw)


DEFAULT_TABLE = Table(0.60, 0.70, 0.70)
ENLARGED_TABLE = Table(1.40, 1.40, 0.70)


@dataclass(frozen=True)
class PlacementRecord:
    object_id: str
    position: tuple[float, float, float]
    orientation: tuple[float, float, float, float]
    action: tuple[float, float, float, float]
    attempts: int
    stable_step: int

    @property
    def yaw(self) -> float:
        w, x, y, z = self.orientation
        return math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))


@dataclass(frozen=True)
class SceneSpec:
    table: Table
    region: QueriedRegion
    catalog: tuple[ObjectSpec, ...]
    query_order: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "catalog", tuple(self.catalog))
        order = tuple(self.query_order) or tuple(o.id for o in self.catalog)
        object.__setattr__(self, "query_order", order)
        ids = [o.id for o in self.catalog]
        if len(set(ids)) != len(ids):
            raise ValueError("catalog ids must be unique")
        missing = set(order) - set(ids)
        if missing:
            raise ValueError(f"query order names unknown objects: {sorted(missing)}")

    def object(self, object_id: str) -> ObjectSpec:
        for o in self.catalog:
            if o.id == object_id:
                return o
        raise KeyError(object_id)

    @property
    def queried_objects(self) -> list[ObjectSpec]:
        return [self.object(i) for i in self.query_order]


# -- region changes ---------------------------------------------------------------


class ChangeKind(str, Enum):
    IDENTITY = "identity"
    TRANSLATION = "translation"
    ROTATION = "rotation"
    SHRINKAGE = "shrinkage"
    EXPANSION = "expansion"
    COMBINED = "combined"

    @classmethod
    def parse(cls, name: str) -> "ChangeKind":
        aliases = {"shrink": cls.SHRINKAGE, "expand": cls.EXPANSION, "original": cls.IDENTITY}
        return aliases.get(name) or cls(name)


@dataclass(frozen=True)
class RegionChange:
    """A concrete change; ``sample`` draws the parameters for a kind."""

    kind: ChangeKind = ChangeKind.IDENTITY
    translation: tuple[float, float] = (0.0, 0.0)
    rotation: float = 0.0
    scale: tuple[float, float] = (0.0, 0.0)

    @classmethod
    def sample(cls, kind: ChangeKind | str, rng: np.random.Generator) -> "RegionChange":
        kind = ChangeKind.parse(kind) if isinstance(kind, str) else kind
        t = (0.0, 0.0)
        r = 0.0
        s = (0.0, 0.0)
        if kind in (ChangeKind.TRANSLATION, ChangeKind.COMBINED):
            t = tuple(rng.uniform(-TRANSLATION_RANGE, TRANSLATION_RANGE, 2))
        if kind in (ChangeKind.ROTATION, ChangeKind.COMBINED):
            r = float(rng.uniform(-ROTATION_RANGE, ROTATION_RANGE))
        if kind == ChangeKind.SHRINKAGE:
            # Uniform draws lie in [0, 0.10); flipping gives [-0.10, 0).
            s = tuple(-(SCALE_RANGE - rng.uniform(0.0, SCALE_RANGE, 2)))
        elif kind == ChangeKind.EXPANSION:
            s = tuple(SCALE_RANGE - rng.uniform(0.0, SCALE_RANGE, 2))
        elif kind == ChangeKind.COMBINED:
            s = tuple(rng.uniform(-SCALE_RANGE, SCALE_RANGE, 2))
        return cls(kind, t, r, s)

    def validate(self) -> None:
        if any(abs(v) > TRANSLATION_RANGE for v in self.translation):
            raise InvalidRegionChange(f"translation outside ±{TRANSLATION_RANGE}: {self.translation}")
        if abs(self.rotation) > ROTATION_RANGE:
            raise InvalidRegionChange(f"rotation outside ±pi: {self.rotation}")
        if self.kind == ChangeKind.SHRINKAGE and any(not -SCALE_RANGE <= v < 0 for v in self.scale):
            raise InvalidRegionChange(f"shrinkage must lie in [-0.10, 0): {self.scale}")
        if self.kind == ChangeKind.EXPANSION and any(not 0 < v <= SCALE_RANGE for v in self.scale):
            raise InvalidRegionChange(f"expansion must lie in (0, 0.10]: {self.scale}")


def transform_region(
    region: QueriedRegion, change: RegionChange, table: Table | None = None
) -> QueriedRegion:
    """Apply translation, then rotation, then scaling; the result must stay on ``table``."""
    change.validate()
    cx, cy, top = region.center
    center = (cx + change.translation[0], cy + change.translation[1], top)
    yaw = region.yaw + change.rotation
    hx = region.half_extents[0] + change.scale[0]
    hy = region.half_extents[1] + change.scale[1]
    if hx <= 0 or hy <= 0:
        raise InvalidRegionChange(f"half-extents would become non-positive: ({hx}, {hy})")
    out = QueriedRegion(center, (hx, hy, region.half_extents[2]), yaw)
    if table is not None and not table.contains(out):
        raise InvalidRegionChange("changed region escapes the support surface")
    return out


def sample_valid_region(
    region: QueriedRegion,
    kind: ChangeKind | str,
    table: Table,
    rng: np.random.Generator,
    max_tries: int = 1000,
) -> tuple[QueriedRegion, RegionChange]:
    """Resample the change until the region fits on the table."""
    for _ in range(max_tries):
        change = RegionChange.sample(kind, rng)
        try:
            return transform_region(region, change, table), change
        except InvalidRegionChange:
            continue
    raise InvalidRegionChange(f"no valid {kind} change found in {max_tries} draws")


# -- action mapping -------------------------------------------------------------------


@dataclass(frozen=True)
class WorldPose:
    position: tuple[float, float, float]
    yaw: float

    @property
    def orientation(self) -> np.ndarray:
        return yaw_quaternion(self.yaw)


def _z_bounds(region: QueriedRegion, obj: ObjectSpec) -> tuple[float, float]:
    lo = region.top + obj.shape.bottom_offset
    hi = max(lo, region.top + 2.0 * region.half_extents[2])
    return lo, hi


def action_to_world_pose(region: QueriedRegion, action: Sequence[float], obj: ObjectSpec) -> WorldPose:
    a = np.asarray(action, dtype=float)
    if a.shape != (4,):
        raise ValueError("action must have four components")
    if np.any(np.abs(a) > 1.0):
        raise ValueError(f"action components must lie in [-1, 1]: {a}")
    hx, hy = region.half_extents[0], region.half_extents[1]
    x, y = region.to_world_xy(np.array([a[0] * hx, a[1] * hy]))
    lo, hi = _z_bounds(region, obj)
    z = lo + 0.5 * (a[2] + 1.0) * (hi - lo)
    return WorldPose((float(x), float(y), float(z)), region.yaw + a[3] * math.pi)


def world_pose_to_action(region: QueriedRegion, pose: WorldPose, obj: ObjectSpec) -> np.ndarray:
    """Inverse of :func:`action_to_world_pose`; yaw is wrapped into [-pi, pi)."""
    lx, ly = region.to_local_xy(np.array(pose.position[:2]))
    lo, hi = _z_bounds(region, obj)
    az = 2.0 * (pose.position[2] - lo) / (hi - lo) - 1.0 if hi > lo else -1.0
    rel = (pose.yaw - region.yaw + math.pi) % (2 * math.pi) - math.pi
    return np.array([lx / region.half_extents[0], ly / region.half_extents[1], az, rel / math.pi])


# -- catalog -----------------------------------------------------------------------------

CATALOG_DIM_RANGE = (0.02, 0.12)
_COLORS = ("red", "green", "blue", "yellow", "orange", "purple", "brown", "white")


def procedural_catalog(group_seed: int, n: int = 10) -> list[ObjectSpec]:
    """Deterministic mix of primitives; dims are Shape dims (half-extents / radii)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(group_seed)
    lo, hi = CATALOG_DIM_RANGE
    out = []
    for i in range(n):
        kind = ShapeKind(int(rng.choice(3, p=[0.35, 0.30, 0.35])))
        if kind == ShapeKind.CUBOID:
            shape = Shape.cuboid(rng.uniform(0.08, hi), rng.uniform(0.08, hi), rng.uniform(lo, 0.10))
            volume = 8.0 * np.prod(shape.dims)
        elif kind == ShapeKind.CYLINDER:
            shape = Shape.cylinder(rng.uniform(0.07, hi), rng.uniform(lo, hi))
            volume = 2.0 * math.pi * shape.dims[0] ** 2 * shape.dims[1]
        else:
            shape = Shape.sphere(rng.uniform(0.06, hi))
            volume = 4.0 / 3.0 * math.pi * shape.dims[0] ** 3
        density = rng.uniform(150.0, 700.0)
        mass = float(np.clip(density * volume, 0.05, 2.0))
        friction = float(rng.uniform(0.2, 0.6))
        color = _COLORS[int(rng.integers(len(_COLORS)))]
        out.append(ObjectSpec(f"s{group_seed}-{i:02d}-{kind.name.lower()}", shape, mass, friction, color))
    return out


def default_scene(
    group: str | int = "group1",
    n_objects: int = 10,
    table: Table = DEFAULT_TABLE,
    region: QueriedRegion | None = None,
    order_seed: int | None = None,
) -> SceneSpec:
    """A scene querying ``n_objects`` from a catalog group, optionally shuffled."""
    seed = GROUP_SEEDS[group] if isinstance(group, str) else int(group)
    catalog = procedural_catalog(seed, max(10, n_objects))
    order = [o.id for o in catalog]
    if order_seed is not None:
        order = [order[i] for i in np.random.default_rng(order_seed).permutation(len(order))]
    return SceneSpec(table, region or table.full_region(), catalog, tuple(order[:n_objects]))


@dataclass(frozen=True)
class SceneSource:
    """Picklable per-episode scene sampler: group, object count and query order drawn from ``rng``.

    ``n_objects`` is either a count or an inclusive ``(lo, hi)`` range. ``region=None`` uses the full table.
    """

    groups: tuple[str, ...] = tuple(GROUP_SEEDS)
    n_objects: int | tuple[int, int] = 1
    table: Table = DEFAULT_TABLE
    region: QueriedRegion | None = None

    def __call__(self, rng: np.random.Generator) -> SceneSpec:
        group = self.groups[int(rng.integers(len(self.groups)))]
        if isinstance(self.n_objects, int):
            n = self.n_objects
        else:
            n = int(rng.integers(self.n_objects[0], self.n_objects[1] + 1))
        return default_scene(group, n, self.table, self.region, order_seed=int(rng.integers(1 << 31)))


# -- serialization -------------------------------------------------------------------------

_VEC3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}
_VEC4 = {"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4}

SCENE_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["version", "table", "region", "catalog", "query_order", "placements"],
    "properties": {
        "version": {"type": "integer"},
        "table": {
            "type": "object",
            "required": ["w", "l", "h", "pose"],
            "properties": {
                "w": {"type": "number", "exclusiveMinimum": 0},
                "l": {"type": "number", "exclusiveMinimum": 0},
                "h": {"type": "number", "exclusiveMinimum": 0},
                "pose": {
                    "type": "object",
                    "required": ["x", "y", "yaw"],
                    "properties": {"x": {"type": "number"}, "y": {"type": "number"}, "yaw": {"type": "number"}},
                },
            },
        },
        "region": {
            "type": "object",
            "required": ["center", "half_extents", "yaw"],
            "properties": {"center": _VEC3, "half_extents": _VEC3, "yaw": {"type": "number"}},
        },
        "catalog": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "kind", "dims", "mass", "friction"],
                "properties": {
                    "id": {"type": "string"},
                    "kind": {"enum": [k.name.lower() for k in ShapeKind]},
                    "dims": {"type": "array", "items": {"type": "number"}, "minItems": 1, "maxItems": 3},
                    "mass": {"type": "number", "minimum": 0},
                    "friction": {"type": "number", "minimum": 0},
                    "color": {"type": "string"},
                },
            },
        },
        "query_order": {"type": "array", "items": {"type": "string"}},
        "placements": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["object_id", "position", "orientation", "action", "attempts", "stable_step"],
                "properties": {
                    "object_id": {"type": "string"},
                    "position": _VEC3,
                    "orientation": _VEC4,
                    "action": _VEC4,
                    "attempts": {"type": "integer", "minimum": 1},
                    "stable_step": {"type": "integer", "minimum": 0},
                },
            },
        },
    },
}


def scene_to_dict(spec: SceneSpec, placements: Sequence[PlacementRecord] = ()) -> dict[str, Any]:
    t = spec.table
    r = spec.region
    return {
        "version": SCHEMA_VERSION,
        "table": {"w": t.width, "l": t.length, "h": t.height, "pose": {"x": t.x, "y": t.y, "yaw": t.yaw}},
        "region": {"center": list(r.center), "half_extents": list(r.half_extents), "yaw": r.yaw},
        "catalog": [
            {
                "id": o.id,
                "kind": o.shape.kind.name.lower(),
                "dims": list(o.shape.dims),
                "mass": o.mass,
                "friction": o.friction,
                "color": o.color,
            }
            for o in spec.catalog
        ],
        "query_order": list(spec.query_order),
        "placements": [
            {
                "object_id": p.object_id,
                "position": [float(v) for v in p.position],
                "orientation": [float(v) for v in p.orientation],
                "action": [float(v) for v in p.action],
                "attempts": int(p.attempts),
                "stable_step": int(p.stable_step),
            }
            for p in placements
        ],
    }


def serialize_scene(spec: SceneSpec, placements: Sequence[PlacementRecord] = ()) -> str:
    return json.dumps(scene_to_dict(spec, placements), indent=1)


def _error_path(err: jsonschema.ValidationError) -> str:
    return "/".join(str(p) for p in err.absolute_path) or "<root>"


def scene_from_dict(doc: Any) -> tuple[SceneSpec, list[PlacementRecord]]:
    try:
        jsonschema.validate(doc, SCENE_SCHEMA)
    except jsonschema.ValidationError as err:
        raise SceneFormatError(f"{_error_path(err)}: {err.message}") from None
    if doc["version"] != SCHEMA_VERSION:
        raise SceneFormatError(f"version: unsupported schema version {doc['version']} (expected {SCHEMA_VERSION})")
    t = doc["table"]
    table = Table(t["w"], t["l"], t["h"], t["pose"]["x"], t["pose"]["y"], t["pose"]["yaw"])
    r = doc["region"]
    try:
        region = QueriedRegion(tuple(r["center"]), tuple(r["half_extents"]), r["yaw"])
        catalog = [
            ObjectSpec(o["id"], Shape(ShapeKind[o["kind"].upper()], tuple(o["dims"])), o["mass"], o["friction"], o.get("color", "gray"))
            for o in doc["catalog"]
        ]
        spec = SceneSpec(table, region, catalog, tuple(doc["query_order"]))
    except ValueError as err:
        raise SceneFormatError(f"<root>: {err}") from None
    placements = [
        PlacementRecord(
            p["object_id"],
            tuple(p["position"]),
            tuple(p["orientation"]),
            tuple(p["action"]),
            p["attempts"],
            p["stable_step"],
        )
        for p in doc["placements"]
    ]
    for i, p in enumerate(placements):
        if p.object_id not in spec.query_order:
            raise SceneFormatError(f"placements/{i}/object_id: unknown object {p.object_id!r}")
    return spec, placements


def deserialize_scene(text: str) -> tuple[SceneSpec, list[PlacementRecord]]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise SceneFormatError(f"<root>: malformed JSON at line {err.lineno} column {err.colno}: {err.msg}") from None
    return scene_from_dict(doc)


def with_region(spec: SceneSpec, region: QueriedRegion, table: Table | None = None) -> SceneSpec:
    return replace(spec, region=region, table=table or spec.table)
