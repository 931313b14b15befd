"""Placement dataset export from generation runs and a supervised one-shot placement regressor."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from clutterlab.env import (
    EpisodeRecord,
    GeneratorConfig,
    build_world,
    simulate_placement,
)
from clutterlab.physics import SimulationDiverged
from clutterlab.observation import LENGTH_SCALE, object_descriptor, render_heightmap
from clutterlab.policy import Adam, Mlp
from clutterlab.scene import (
    PlacementRecord,
    QueriedRegion,
    SceneSpec,
    WorldPose,
    scene_from_dict,
    scene_to_dict,
)

DATASET_VERSION = 1
VIEWS_PER_PLACEMENT = 4
MAX_JITTER = 0.05


@dataclass(frozen=True)
class PlacementProblem:
    """Place ``object_id`` into ``spec`` already holding ``placements`` (in order)."""

    scene_id: str
    spec: SceneSpec
    placements: tuple[PlacementRecord, ...]
    object_id: str


@dataclass(frozen=True)
class RelativePose:
    """Pose in the canonical region frame: metres from the region center and top, yaw relative to the region."""

    x: float
    y: float
    z: float
    yaw: float

    def to_world(self, region: QueriedRegion) -> WorldPose:
        wx, wy = region.to_world_xy(np.array([self.x, self.y]))
        return WorldPose((float(wx), float(wy), region.top + self.z), region.yaw + self.yaw)

    @classmethod
    def from_record(cls, region: QueriedRegion, record: PlacementRecord) -> "RelativePose":
        lx, ly = region.to_local_xy(np.array(record.position[:2]))
        w, qx, qy, qz = record.orientation
        yaw = math.atan2(2.0 * (w * qz + qx * qy), 1.0 - 2.0 * (qy * qy + qz * qz)) - region.yaw
        yaw = (yaw + math.pi) % (2.0 * math.pi) - math.pi
        return cls(float(lx), float(ly), float(record.position[2] - region.top), yaw)


@dataclass
class PlacementSample:
    scene_id: str
    view_id: int
    placement_index: int
    observation: np.ndarray  # normalized heightmap rendered from the jittered view
    descriptor: np.ndarray
    pose: RelativePose
    jitter: tuple[float, float]

    def to_json(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "view_id": self.view_id,
            "placement_index": self.placement_index,
            "observation": [float(v) for v in self.observation],
            "object_descriptor": [float(v) for v in self.descriptor],
            "pose": {
                "x": self.pose.x,
                "y": self.pose.y,
                "z": self.pose.z,
                "sin_yaw": math.sin(self.pose.yaw),
                "cos_yaw": math.cos(self.pose.yaw),
            },
            "jitter": list(self.jitter),
        }

    @classmethod
    def from_json(cls, d: dict) -> "PlacementSample":
        p = d["pose"]
        return cls(
            d["scene_id"],
            int(d["view_id"]),
            int(d["placement_index"]),
            np.asarray(d["observation"], dtype=float),
            np.asarray(d["object_descriptor"], dtype=float),
            RelativePose(p["x"], p["y"], p["z"], math.atan2(p["sin_yaw"], p["cos_yaw"])),
            tuple(d["jitter"]),
        )


@dataclass
class PlacementDataset:
    samples: list[PlacementSample]
    scenes: dict[str, tuple[SceneSpec, list[PlacementRecord]]]
    grid: int
    provenance: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.samples)

    def subset(self, n: int, seed: int = 0) -> "PlacementDataset":
        if n > len(self.samples):
            raise ValueError(f"cannot take {n} samples from {len(self.samples)}")
        idx = np.sort(np.random.default_rng(seed).choice(len(self.samples), n, replace=False))
        samples = [self.samples[i] for i in idx]
        used = {s.scene_id for s in samples}
        return PlacementDataset(
            samples,
            {k: v for k, v in self.scenes.items() if k in used},
            self.grid,
            {**self.provenance, "subset": {"n": n, "seed": seed}},
        )

    def save(self, path: str | Path) -> None:
        """JSONL: a header line, one line per scene, then one line per sample."""
        path = Path(path)
        with open(path, "w") as fh:
            header = {"kind": "header", "version": DATASET_VERSION, "grid": self.grid, "provenance": self.provenance}
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for sid, (spec, placements) in self.scenes.items():
                doc = scene_to_dict(spec, placements)
                fh.write(json.dumps({"kind": "scene", "scene_id": sid, "scene": doc}, sort_keys=True) + "\n")
            for s in self.samples:
                fh.write(json.dumps({"kind": "sample", **s.to_json()}, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "PlacementDataset":
        samples, scenes = [], {}
        header = None
        with open(path) as fh:
            for i, line in enumerate(fh, 1):
                rec = json.loads(line)
                kind = rec.get("kind")
                if kind == "header":
                    if rec.get("version") != DATASET_VERSION:
                        raise ValueError(f"line {i}: unsupported dataset version {rec.get('version')}")
                    header = rec
                elif kind == "scene":
                    scenes[rec["scene_id"]] = scene_from_dict(rec["scene"])
                elif kind == "sample":
                    samples.append(PlacementSample.from_json(rec))
                else:
                    raise ValueError(f"line {i}: unknown record kind {kind!r}")
        if header is None:
            raise ValueError("dataset has no header line")
        return cls(samples, scenes, int(header["grid"]), header.get("provenance", {}))


# -- export ---------------------------------------------------------------------------------------


def jittered_region(region: QueriedRegion, rng: np.random.Generator, max_shift: float = MAX_JITTER) -> tuple[QueriedRegion, tuple[float, float]]:
    """Region translated by a uniform draw from the disc of radius ``max_shift`` (region frame)."""
    r = max_shift * math.sqrt(rng.random())
    a = 2.0 * math.pi * rng.random()
    dx, dy = r * math.cos(a), r * math.sin(a)
    c = math.cos(region.yaw)
    s = math.sin(region.yaw)
    cx, cy, top = region.center
    moved = QueriedRegion((cx + c * dx - s * dy, cy + s * dx + c * dy, top), region.half_extents, region.yaw)
    return moved, (dx, dy)


def problems_from_record(record: EpisodeRecord, scene_id: str) -> list[PlacementProblem]:
    spec = SceneSpec(record.spec.table, record.region, record.spec.catalog, record.spec.query_order)
    return [
        PlacementProblem(scene_id, spec, tuple(record.placements[:i]), p.object_id)
        for i, p in enumerate(record.placements)
    ]


def execute_pose(
    problem: PlacementProblem, pose: RelativePose, config: GeneratorConfig | None = None
) -> bool:
    """Single placement at ``pose`` (plus the drop) judged exactly as a generation attempt."""
    config = config or GeneratorConfig()
    world, committed = build_world(problem.spec, problem.placements)
    target = pose.to_world(problem.spec.region)
    x, y, z = target.position
    dropped = WorldPose((x, y, z + config.drop_epsilon), target.yaw)
    obj = problem.spec.object(problem.object_id)
    try:
        out, _ = simulate_placement(world, committed, obj, dropped, len(committed) + 1, config)
    except SimulationDiverged:
        return False
    return out.stable


def label_is_valid(problem: PlacementProblem, record: PlacementRecord, config: GeneratorConfig | None = None) -> bool:
    return execute_pose(problem, RelativePose.from_record(problem.spec.region, record), config)


def export_dataset(
    records: Iterable[tuple[str, EpisodeRecord]],
    target: int | None = None,
    grid: int = 16,
    seed: int = 0,
    config: GeneratorConfig | None = None,
    views: int = VIEWS_PER_PLACEMENT,
) -> PlacementDataset:
    """Label every committed placement, render ``views`` jittered heightmaps each, then subsample.

    Labels whose replay is not judged stable are dropped, so every exported label is valid.
    """
    config = config or GeneratorConfig()
    rng = np.random.default_rng(seed)
    samples: list[PlacementSample] = []
    scenes: dict[str, tuple[SceneSpec, list[PlacementRecord]]] = {}
    dropped = 0
    for scene_id, rec in records:
        probs = problems_from_record(rec, scene_id)
        if not probs:
            continue
        scenes[scene_id] = (probs[0].spec, list(rec.placements))
        for i, (prob, placed) in enumerate(zip(probs, rec.placements)):
            if not label_is_valid(prob, placed, config):
                dropped += 1
                continue
            world, _ = build_world(prob.spec, prob.placements)
            desc = object_descriptor(prob.spec.object(prob.object_id))
            pose = RelativePose.from_record(prob.spec.region, placed)
            for v in range(views):
                region, jit = jittered_region(prob.spec.region, rng)
                hm = render_heightmap(world, region, grid).normalized().ravel()
                samples.append(PlacementSample(scene_id, v, i, hm, desc, pose, jit))
    provenance = {"seed": seed, "candidates": len(samples), "invalid_labels_dropped": dropped, "views": views}
    ds = PlacementDataset(samples, scenes, grid, provenance)
    if target is not None:
        if len(samples) < target:
            warnings.warn(f"only {len(samples)} samples available for a target of {target}; returning all")
        else:
            ds = ds.subset(target, seed)
            ds.provenance = provenance | {"target": target}
    return ds


def check_label_validity(dataset: PlacementDataset, config: GeneratorConfig | None = None) -> float:
    """Fraction of distinct labels that replay as stable placements in their source scenes."""
    keys = sorted({(s.scene_id, s.placement_index) for s in dataset.samples})
    if not keys:
        return 1.0
    ok = 0
    for sid, idx in keys:
        spec, placements = dataset.scenes[sid]
        prob = PlacementProblem(sid, spec, tuple(placements[:idx]), placements[idx].object_id)
        ok += label_is_valid(prob, placements[idx], config)
    return ok / len(keys)


# -- supervised regressor ---------------------------------------------------------------------------


def encode_targets(poses: Sequence[RelativePose], region: QueriedRegion) -> np.ndarray:
    hx, hy = region.half_extents[:2]
    return np.array([[p.x / hx, p.y / hy, p.z / LENGTH_SCALE, math.sin(p.yaw), math.cos(p.yaw)] for p in poses])


def decode_target(out: np.ndarray, region: QueriedRegion) -> RelativePose:
    hx, hy = region.half_extents[:2]
    x = float(np.clip(out[0], -1.0, 1.0)) * hx
    y = float(np.clip(out[1], -1.0, 1.0)) * hy
    z = max(float(out[2]) * LENGTH_SCALE, 0.0)
    return RelativePose(x, y, z, math.atan2(float(out[3]), float(out[4])))


@dataclass
class PlacementModel:
    net: Mlp
    region: QueriedRegion
    grid: int
    history: list[float] = field(default_factory=list)

    def predict(self, heightmap: np.ndarray, descriptor: np.ndarray) -> RelativePose:
        x = np.concatenate([np.ravel(heightmap), descriptor])[None, :]
        return decode_target(self.net.forward(x, keep=False)[0], self.region)

    def predict_problem(self, problem: PlacementProblem) -> RelativePose:
        world, _ = build_world(problem.spec, problem.placements)
        hm = render_heightmap(world, problem.spec.region, self.grid).normalized()
        return self.predict(hm, object_descriptor(problem.spec.object(problem.object_id)))


def train_supervised(
    dataset: PlacementDataset,
    epochs: int = 1000,
    hidden: int = 256,
    lr: float = 1e-3,
    batch: int = 256,
    seed: int = 0,
) -> PlacementModel:
    """MSE regression of (x, y, z, sin yaw, cos yaw) from heightmap and descriptor."""
    if not dataset.samples:
        raise ValueError("empty dataset")
    region = next(iter(dataset.scenes.values()))[0].region
    x = np.stack([np.concatenate([s.observation, s.descriptor]) for s in dataset.samples])
    y = encode_targets([s.pose for s in dataset.samples], region)
    rng = np.random.default_rng(seed)
    net = Mlp([x.shape[1], hidden, hidden, y.shape[1]], rng, output_gain=0.1)
    adam = Adam(net.params, lr=lr)
    n = len(x)
    history = []
    for _ in range(epochs):
        perm = rng.permutation(n)
        total = 0.0
        for k in range(0, n, batch):
            idx = perm[k : k + batch]
            pred = net.forward(x[idx], keep=True)
            err = pred - y[idx]
            total += float(np.sum(err**2))
            grads, _ = net.backward(2.0 * err / err.size)
            adam.step(grads)
        history.append(total / y.size)
    return PlacementModel(net, region, dataset.grid, history)


@dataclass
class PlacementEval:
    success_rate: float
    trials: int
    successes: int


def eval_placement(
    predict: Callable[[PlacementProblem], RelativePose],
    problems: Sequence[PlacementProblem],
    config: GeneratorConfig | None = None,
) -> PlacementEval:
    if not problems:
        raise ValueError("no test problems")
    ok = sum(execute_pose(p, predict(p), config) for p in problems)
    return PlacementEval(ok / len(problems), len(problems), ok)


__all__ = [
    "PlacementDataset",
    "PlacementEval",
    "PlacementModel",
    "PlacementProblem",
    "PlacementSample",
    "RelativePose",
    "check_label_validity",
    "decode_target",
    "encode_targets",
    "eval_placement",
    "execute_pose",
    "export_dataset",
    "jittered_region",
    "label_is_valid",
    "problems_from_record",
    "train_supervised",
]
