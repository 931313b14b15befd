"""Deterministic rigid-body world stepped with sequential impulses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from clutterlab.physics import kernels
from clutterlab.physics.shapes import BodyState, RigidBody
from clutterlab.physics.stability import StabilityReport, StabilityThresholds, Trajectory, check_stability

OVERLAP_TOLERANCE = 1e-3


class SimulationDiverged(RuntimeError):
    """Raised when a body state becomes non-finite or explodes."""


@dataclass(frozen=True)
class SolverParams:
    iterations: int = 10
    baumgarte: float = 0.2
    slop: float = 5e-4
    margin: float = 2e-3
    max_correction: float = 1.0
    restitution_threshold: float = 0.5


@dataclass
class WorldSnapshot:
    n: int
    bodies: list[RigidBody]
    arrays: dict[str, np.ndarray]


_STATE_ARRAYS = ("pos", "quat", "vel", "angvel", "cache", "prev_ab", "prev_key", "prev_count")


class World:
    """A fixed-capacity set of rigid bodies under gravity.

    Stepping is single threaded and bit-deterministic for identical initial
    states. Body index 0 is conventionally the static support table.
    """

    def __init__(
        self,
        gravity=(0.0, 0.0, -9.81),
        dt: float = 1.0 / 240.0,
        solver: SolverParams | None = None,
        capacity: int = 16,
        max_points: int = 320,
        max_contacts: int = 8192,
    ):
        self.gravity = np.asarray(gravity, dtype=float)
        self.dt = float(dt)
        self.solver = solver or SolverParams()
        if self.solver.iterations < 1:
            raise ValueError("solver iterations must be positive")
        self.capacity = capacity
        self.max_points = max_points
        self.bodies: list[RigidBody] = []
        self.n = 0
        c = capacity
        self.kind = np.zeros(c, dtype=np.int64)
        self.dims = np.zeros((c, 3))
        self.inv_mass = np.zeros(c)
        self.inv_inertia = np.zeros((c, 3))
        self.friction = np.zeros(c)
        self.restitution = np.zeros(c)
        self.radius = np.zeros(c)
        self.npts = np.zeros(c, dtype=np.int64)
        self.pts = np.zeros((c, max_points, 3))
        self.pos = np.zeros((c, 3))
        self.quat = np.zeros((c, 4))
        self.quat[:, 0] = 1.0
        self.vel = np.zeros((c, 3))
        self.angvel = np.zeros((c, 3))
        self.cache = np.zeros((c, c, max_points, 3))
        self.prev_ab = np.zeros((max_contacts, 2), dtype=np.int64)
        self.prev_key = np.zeros(max_contacts, dtype=np.int64)
        self.prev_count = np.zeros(1, dtype=np.int64)
        self.c_ab = np.zeros((max_contacts, 2), dtype=np.int64)
        self.c_key = np.zeros(max_contacts, dtype=np.int64)
        self.c_r = np.zeros((max_contacts, 6))
        self.c_n = np.zeros((max_contacts, 3))
        self.c_J = np.zeros((max_contacts, 3, 15))
        self.c_dist = np.zeros(max_contacts)
        self.c_mass = np.zeros((max_contacts, 3))
        self.c_target = np.zeros(max_contacts)
        self.c_P = np.zeros((max_contacts, 3))
        self.c_mu = np.zeros(max_contacts)

    # -- body management -------------------------------------------------
    def add_body(self, body: RigidBody) -> int:
        if self.n >= self.capacity:
            raise ValueError(f"world capacity {self.capacity} exceeded")
        # Static bodies never own contact points; only their SDF is queried.
        pts = np.zeros((0, 3)) if body.is_static else body.shape.surface_points()
        if len(pts) > self.max_points:
            raise ValueError(f"shape needs {len(pts)} contact points; max is {self.max_points}")
        i = self.n
        self.kind[i] = int(body.shape.kind)
        self.dims[i] = body.shape.padded_dims
        if body.is_static:
            self.inv_mass[i] = 0.0
            self.inv_inertia[i] = 0.0
        else:
            self.inv_mass[i] = 1.0 / body.mass
            self.inv_inertia[i] = 1.0 / body.inertia
        self.friction[i] = body.friction
        self.restitution[i] = body.restitution
        self.radius[i] = body.shape.bounding_radius
        self.npts[i] = len(pts)
        self.pts[i, : len(pts)] = pts
        st = body.state
        q = st.orientation / np.linalg.norm(st.orientation)
        self.pos[i] = st.position
        self.quat[i] = q
        self.vel[i] = st.linear_velocity
        self.angvel[i] = st.angular_velocity
        self.bodies.append(body)
        self.n += 1
        return i

    def remove_last(self) -> RigidBody:
        """Remove the most recently added body and its cached contacts."""
        if self.n == 0:
            raise IndexError("world is empty")
        i = self.n - 1
        self.cache[i, :] = 0.0
        self.cache[:, i] = 0.0
        keep = [k for k in range(self.prev_count[0]) if self.prev_ab[k, 0] != i and self.prev_ab[k, 1] != i]
        self.prev_ab[: len(keep)] = self.prev_ab[keep]
        self.prev_key[: len(keep)] = self.prev_key[keep]
        self.prev_count[0] = len(keep)
        self.n -= 1
        return self.bodies.pop()

    def state(self, i: int) -> BodyState:
        return BodyState(self.pos[i], self.quat[i], self.vel[i], self.angvel[i])

    def set_state(self, i: int, state: BodyState) -> None:
        self.pos[i] = state.position
        self.quat[i] = state.orientation / np.linalg.norm(state.orientation)
        self.vel[i] = state.linear_velocity
        self.angvel[i] = state.angular_velocity

    def snapshot(self) -> WorldSnapshot:
        return WorldSnapshot(
            self.n,
            list(self.bodies),
            {name: getattr(self, name).copy() for name in _STATE_ARRAYS},
        )

    def restore(self, snap: WorldSnapshot) -> None:
        while self.n > snap.n:
            self.remove_last()
        if self.n != snap.n:
            raise ValueError("snapshot has bodies that are no longer in the world")
        for name, arr in snap.arrays.items():
            getattr(self, name)[...] = arr

    def copy(self) -> "World":
        other = World(self.gravity, self.dt, self.solver, self.capacity, self.max_points, len(self.c_key))
        for body in self.bodies:
            other.add_body(body)
        for name in _STATE_ARRAYS:
            getattr(other, name)[...] = getattr(self, name)
        return other

    # -- kernels -----------------------------------------------------------
    def _physics_args(self):
        s = self.solver
        return (
            self.n, self.kind, self.dims, self.inv_mass, self.inv_inertia, self.friction,
            self.restitution, self.radius, self.npts, self.pts,
            self.pos, self.quat, self.vel, self.angvel,
            self.gravity, self.dt, s.iterations, s.baumgarte, s.slop, s.margin,
            s.max_correction, s.restitution_threshold,
            self.cache, self.prev_ab, self.prev_key, self.prev_count,
            self.c_ab, self.c_key, self.c_r, self.c_n, self.c_J, self.c_dist,
            self.c_mass, self.c_target, self.c_P, self.c_mu,
        )

    def step(self) -> "World":
        status = kernels.step_kernel(*self._physics_args())
        if status != kernels.STATUS_OK:
            raise SimulationDiverged("non-finite or exploding body state")
        return self

    def settle(
        self,
        body_id: int,
        k: int = 240,
        thresholds: StabilityThresholds | None = None,
        early_stop: bool = True,
    ) -> Trajectory:
        """Step up to ``k`` times recording ``body_id``; stop once stable."""
        if not 0 <= body_id < self.n:
            raise IndexError(f"no body {body_id}")
        if k < 1:
            raise ValueError("k must be >= 1")
        thresholds = thresholds or StabilityThresholds()
        out = np.zeros((k, 13))
        length, status, _ = kernels.settle_kernel(
            body_id, k, thresholds.as_array(), early_stop, out, *self._physics_args()
        )
        if status != kernels.STATUS_OK:
            raise SimulationDiverged(f"simulation diverged after {length} steps")
        return Trajectory(out[:length].copy(), self.dt)

    def settle_and_check(
        self, body_id: int, k: int = 240, thresholds: StabilityThresholds | None = None
    ) -> tuple[Trajectory, StabilityReport]:
        thresholds = thresholds or StabilityThresholds()
        traj = self.settle(body_id, k, thresholds)
        return traj, check_stability(traj, thresholds)

    def penetration(self, candidate: RigidBody, exclude_last: int = 0) -> float:
        """Deepest penetration of ``candidate`` into existing bodies (m)."""
        pts = candidate.shape.surface_points()
        st = candidate.state
        q = st.orientation / np.linalg.norm(st.orientation)
        return float(
            kernels.max_penetration(
                self.n - exclude_last, self.kind, self.dims, self.radius, self.npts, self.pts,
                self.pos, self.quat,
                int(candidate.shape.kind), candidate.shape.padded_dims,
                candidate.shape.bounding_radius, len(pts), pts if len(pts) else np.zeros((1, 3)),
                st.position.astype(float), q,
            )
        )

    def check_overlap(self, candidate: RigidBody, tolerance: float = OVERLAP_TOLERANCE) -> bool:
        return self.penetration(candidate) > tolerance

    def heights(self, xs: np.ndarray, ys: np.ndarray, floor: float, skip: int = -1) -> np.ndarray:
        xs = np.ascontiguousarray(xs, dtype=float).ravel()
        ys = np.ascontiguousarray(ys, dtype=float).ravel()
        return kernels.heights_at(
            self.n, self.kind, self.dims, self.radius, self.pos, self.quat, xs, ys, floor, skip
        )

    def kinetic_energy(self, i: int) -> float:
        if self.inv_mass[i] == 0.0:
            return 0.0
        m = 1.0 / self.inv_mass[i]
        R = np.empty((3, 3))
        kernels.quat_to_mat(self.quat[i], R)
        w_local = R.T @ self.angvel[i]
        inertia = 1.0 / self.inv_inertia[i]
        return 0.5 * m * float(self.vel[i] @ self.vel[i]) + 0.5 * float(w_local @ (inertia * w_local))


def step(world: World) -> World:
    return world.step()


def settle(world: World, body_id: int, k: int = 240, thresholds: StabilityThresholds | None = None) -> Trajectory:
    return world.settle(body_id, k, thresholds)


def check_overlap(world: World, candidate: RigidBody, tolerance: float = OVERLAP_TOLERANCE) -> bool:
    return world.check_overlap(candidate, tolerance)
