"""Primitive shapes, rigid bodies and their mass properties."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from functools import lru_cache

import numpy as np

# Surface sample spacing used for contact generation (m).
EDGE_SPACING = 0.03
RING_SPACING = 0.04


class ShapeKind(IntEnum):
    CUBOID = 0
    CYLINDER = 1
    SPHERE = 2


@dataclass(frozen=True)
class Shape:
    """A primitive collision shape in its local frame.

    ``dims`` holds half-extents for a cuboid, ``(radius, half_height)`` for a
    cylinder (axis along local z) and ``(radius,)`` for a sphere.
    """

    kind: ShapeKind
    dims: tuple[float, ...]

    def __post_init__(self) -> None:
        kind = ShapeKind(self.kind)
        object.__setattr__(self, "kind", kind)
        dims = tuple(float(d) for d in self.dims)
        expected = {ShapeKind.CUBOID: 3, ShapeKind.CYLINDER: 2, ShapeKind.SPHERE: 1}[kind]
        if len(dims) != expected:
            raise ValueError(f"{kind.name.lower()} needs {expected} dimensions, got {len(dims)}")
        if any(not d > 0 for d in dims):
            raise ValueError(f"shape dimensions must be strictly positive: {dims}")
        object.__setattr__(self, "dims", dims)

    @classmethod
    def cuboid(cls, hx: float, hy: float, hz: float) -> "Shape":
        return cls(ShapeKind.CUBOID, (hx, hy, hz))

    @classmethod
    def cylinder(cls, radius: float, half_height: float) -> "Shape":
        return cls(ShapeKind.CYLINDER, (radius, half_height))

    @classmethod
    def sphere(cls, radius: float) -> "Shape":
        return cls(ShapeKind.SPHERE, (radius,))

    @property
    def padded_dims(self) -> np.ndarray:
        out = np.zeros(3)
        out[: len(self.dims)] = self.dims
        return out

    @property
    def bottom_offset(self) -> float:
        """Height of the center above the support when resting upright."""
        if self.kind == ShapeKind.CUBOID:
            return self.dims[2]
        if self.kind == ShapeKind.CYLINDER:
            return self.dims[1]
        return self.dims[0]

    @property
    def bounding_radius(self) -> float:
        if self.kind == ShapeKind.CUBOID:
            return math.sqrt(sum(d * d for d in self.dims))
        if self.kind == ShapeKind.CYLINDER:
            return math.hypot(self.dims[0], self.dims[1])
        return self.dims[0]

    def inertia(self, mass: float) -> np.ndarray:
        """Principal moments of inertia about the center of mass."""
        if self.kind == ShapeKind.CUBOID:
            hx, hy, hz = self.dims
            return mass / 3.0 * np.array([hy * hy + hz * hz, hx * hx + hz * hz, hx * hx + hy * hy])
        if self.kind == ShapeKind.CYLINDER:
            r, h = self.dims
            side = mass * (3.0 * r * r + 4.0 * h * h) / 12.0
            return np.array([side, side, 0.5 * mass * r * r])
        r = self.dims[0]
        return np.full(3, 0.4 * mass * r * r)

    def footprint_points(self, spacing: float = 0.01) -> np.ndarray:
        """Local xy sample points covering the upright footprint."""
        return _footprint_points(self, spacing).copy()

    def surface_points(self) -> np.ndarray:
        """Local surface samples used as contact candidates (empty for spheres)."""
        return _surface_points(self).copy()

    def _footprint(self, spacing: float) -> np.ndarray:
        if self.kind == ShapeKind.CUBOID:
            hx, hy = self.dims[0], self.dims[1]
            xs = np.linspace(-hx, hx, max(2, math.ceil(2 * hx / spacing) + 1))
            ys = np.linspace(-hy, hy, max(2, math.ceil(2 * hy / spacing) + 1))
            gx, gy = np.meshgrid(xs, ys, indexing="ij")
            return np.stack([gx.ravel(), gy.ravel()], axis=1)
        r = self.dims[0]
        pts = [np.zeros((1, 2))]
        rings = max(1, math.ceil(r / spacing))
        for k in range(1, rings + 1):
            rr = r * k / rings
            m = max(6, math.ceil(2 * math.pi * rr / spacing))
            ang = 2 * math.pi * np.arange(m) / m
            pts.append(np.stack([rr * np.cos(ang), rr * np.sin(ang)], axis=1))
        return np.concatenate(pts)

    def _surface(self) -> np.ndarray:
        if self.kind == ShapeKind.CUBOID:
            return _cuboid_points(np.array(self.dims))
        if self.kind == ShapeKind.CYLINDER:
            return _cylinder_points(*self.dims)
        return np.zeros((0, 3))


@lru_cache(maxsize=4096)
def _footprint_points(shape: Shape, spacing: float) -> np.ndarray:
    return shape._footprint(spacing)


@lru_cache(maxsize=4096)
def _surface_points(shape: Shape) -> np.ndarray:
    return shape._surface()


def _cuboid_points(h: np.ndarray) -> np.ndarray:
    pts = []
    signs = np.array([-1.0, 1.0])
    for sx in signs:
        for sy in signs:
            for sz in signs:
                pts.append(h * np.array([sx, sy, sz]))
    # Edge interiors.
    for axis in range(3):
        a, b = [i for i in range(3) if i != axis]
        m = max(2, math.ceil(2 * h[axis] / EDGE_SPACING))
        ts = np.linspace(-h[axis], h[axis], m + 1)[1:-1]
        for sa in signs:
            for sb in signs:
                for t in ts:
                    p = np.zeros(3)
                    p[axis] = t
                    p[a] = sa * h[a]
                    p[b] = sb * h[b]
                    pts.append(p)
    # Face centers catch flush face-on-face contact between equal boxes.
    for axis in range(3):
        for sgn in signs:
            p = np.zeros(3)
            p[axis] = sgn * h[axis]
            pts.append(p)
    return np.array(pts)


def _cylinder_points(r: float, h: float) -> np.ndarray:
    pts = []
    m = max(12, math.ceil(2 * math.pi * r / EDGE_SPACING))
    ang = 2 * math.pi * np.arange(m) / m
    # Rims plus intermediate side rings for a cylinder lying on its side.
    n_side = max(1, math.ceil(2 * h / RING_SPACING))
    for z in np.linspace(-h, h, n_side + 1):
        for t in ang:
            pts.append((r * math.cos(t), r * math.sin(t), z))
    pts.append((0.0, 0.0, -h))
    pts.append((0.0, 0.0, h))
    return np.array(pts, dtype=float)


@dataclass
class BodyState:
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    linear_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        self.position = np.asarray(self.position, dtype=float).reshape(3).copy()
        self.orientation = np.asarray(self.orientation, dtype=float).reshape(4).copy()
        self.linear_velocity = np.asarray(self.linear_velocity, dtype=float).reshape(3).copy()
        self.angular_velocity = np.asarray(self.angular_velocity, dtype=float).reshape(3).copy()

    @property
    def yaw(self) -> float:
        w, x, y, z = self.orientation
        return math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))

    def as_vector(self) -> np.ndarray:
        """The 13-component pose-and-twist sample."""
        return np.concatenate(
            [self.position, self.orientation, self.linear_velocity, self.angular_velocity]
        )


def yaw_quaternion(yaw: float) -> np.ndarray:
    return np.array([math.cos(0.5 * yaw), 0.0, 0.0, math.sin(0.5 * yaw)])


@dataclass
class RigidBody:
    """A rigid body; ``mass == 0`` marks a static body."""

    shape: Shape
    mass: float = 1.0
    friction: float = 0.5
    restitution: float = 0.0
    state: BodyState = field(default_factory=BodyState)

    def __post_init__(self) -> None:
        if self.mass < 0:
            raise ValueError("mass must be >= 0")
        if self.friction < 0:
            raise ValueError("friction must be >= 0")
        if not 0.0 <= self.restitution < 1.0:
            raise ValueError("restitution must lie in [0, 1)")

    @property
    def is_static(self) -> bool:
        return self.mass == 0.0

    @property
    def inertia(self) -> np.ndarray:
        return self.shape.inertia(self.mass)

    @classmethod
    def at(
        cls,
        shape: Shape,
        position,
        yaw: float = 0.0,
        mass: float = 1.0,
        friction: float = 0.5,
        restitution: float = 0.0,
    ) -> "RigidBody":
        return cls(
            shape,
            mass=mass,
            friction=friction,
            restitution=restitution,
            state=BodyState(position=position, orientation=yaw_quaternion(yaw)),
        )
