"""Evaluation: success/stable-step reports, ablation variants, diversity maps and region-change studies."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field, replace
from multiprocessing import get_context
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from clutterlab.baselines import rrs_episode
from clutterlab.env import EpisodeRecord, GeneratorConfig, GeneratorEnv, rollout_episode
from clutterlab.observation import ObservationConfig
from clutterlab.policy import ActorCritic
from clutterlab.scene import ENLARGED_TABLE, ChangeKind, QueriedRegion, SceneSource

CHANGE_KINDS = (
    ChangeKind.IDENTITY,
    ChangeKind.TRANSLATION,
    ChangeKind.ROTATION,
    ChangeKind.SHRINKAGE,
    ChangeKind.EXPANSION,
    ChangeKind.COMBINED,
)


@dataclass
class EvalReport:
    success_rate: float
    episodes: int
    stable_steps_mean: float
    stable_steps_std: float
    attempt_histogram: list[int]  # objects committed on attempt 1..I, then exhausted budgets
    seconds_total: float
    seconds_per_episode: float
    label: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def summarize(records: Sequence[EpisodeRecord], max_attempts: int, seconds: float, label: str = "") -> EvalReport:
    """Stable-step statistics average over every attempt; failed attempts count as the recorded length."""
    if not records:
        raise ValueError("no episodes to summarize")
    steps = np.array([s for r in records for (_, _, s) in r.stable_steps], dtype=float)
    hist = [0] * (max_attempts + 1)
    for r in records:
        for p in r.placements:
            hist[p.attempts - 1] += 1
        if not r.success and not r.diverged and len(r.attempts) > len(r.placements):
            hist[max_attempts] += 1
    n = len(records)
    return EvalReport(
        success_rate=sum(r.success for r in records) / n,
        episodes=n,
        stable_steps_mean=float(steps.mean()) if steps.size else float("nan"),
        stable_steps_std=float(steps.std()) if steps.size else float("nan"),
        attempt_histogram=hist,
        seconds_total=seconds,
        seconds_per_episode=seconds / n,
        label=label,
    )


def write_reports_csv(path: str | Path, reports: Sequence[EvalReport]) -> None:
    rows = []
    for rep in reports:
        row = rep.to_dict()
        row["attempt_histogram"] = " ".join(str(v) for v in rep.attempt_histogram)
        rows.append(row)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


# -- episode runners ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EvalSetup:
    """Everything a worker needs to rebuild an environment; picklable."""

    source: SceneSource
    config: GeneratorConfig = field(default_factory=GeneratorConfig)
    obs_config: ObservationConfig | None = None
    change: ChangeKind | None = None

    def make_env(self) -> GeneratorEnv:
        return GeneratorEnv(self.source, self.config, self.obs_config, self.change)


class PolicyActor:
    """Adapts an :class:`ActorCritic` to ``rollout_episode``'s ``policy(obs, env)`` signature."""

    def __init__(self, model: ActorCritic, rng: np.random.Generator, deterministic: bool = False):
        self.model = model
        self.rng = rng
        self.deterministic = deterministic

    def __call__(self, obs: np.ndarray, env: GeneratorEnv) -> np.ndarray:
        actions, _, _ = self.model.act(obs, self.rng, self.deterministic)
        return actions[0]


def _policy_chunk(args) -> list[EpisodeRecord]:
    setup, model, seed, indices, deterministic = args
    env = setup.make_env()
    out = []
    for e in indices:
        actor = PolicyActor(model, np.random.default_rng([seed, e, 1]), deterministic)
        out.append(rollout_episode(actor, env, np.random.default_rng([seed, e, 0])))
    return out


def _rrs_chunk(args) -> list[EpisodeRecord]:
    setup, seed, indices = args
    env = setup.make_env()
    return [rrs_episode(env, (seed, e), np.random.default_rng([seed, e, 0])) for e in indices]


def _fan_out(fn: Callable, tasks: list, jobs: int) -> list[EpisodeRecord]:
    if jobs <= 1:
        parts = [fn(t) for t in tasks]
    else:
        with get_context("spawn").Pool(jobs) as pool:
            parts = pool.map(fn, tasks)
    return [r for part in parts for r in part]


def _chunks(episodes: int, jobs: int) -> list[list[int]]:
    n = max(1, min(jobs, episodes))
    return [list(range(i, episodes, n)) for i in range(n)]


def _reorder(records: list[EpisodeRecord], chunks: list[list[int]]) -> list[EpisodeRecord]:
    order = [e for c in chunks for e in c]
    out: list[EpisodeRecord | None] = [None] * len(order)
    for e, r in zip(order, records):
        out[e] = r
    return out  # type: ignore[return-value]


def run_policy_episodes(
    model: ActorCritic,
    setup: EvalSetup,
    episodes: int,
    seed: int = 0,
    deterministic: bool = False,
    jobs: int = 1,
) -> list[EpisodeRecord]:
    """Episode ``e`` uses streams derived from ``(seed, e)``, so results do not depend on ``jobs``."""
    chunks = _chunks(episodes, jobs)
    recs = _fan_out(_policy_chunk, [(setup, model, seed, c, deterministic) for c in chunks], jobs)
    return _reorder(recs, chunks)


def run_rrs_episodes(setup: EvalSetup, episodes: int, seed: int = 0, jobs: int = 1) -> list[EpisodeRecord]:
    chunks = _chunks(episodes, jobs)
    recs = _fan_out(_rrs_chunk, [(setup, seed, c) for c in chunks], jobs)
    return _reorder(recs, chunks)


def evaluate_policy(
    model: ActorCritic,
    setup: EvalSetup,
    episodes: int = 1000,
    seed: int = 0,
    deterministic: bool = False,
    jobs: int = 1,
    label: str = "policy",
) -> tuple[EvalReport, list[EpisodeRecord]]:
    t = time.perf_counter()
    recs = run_policy_episodes(model, setup, episodes, seed, deterministic, jobs)
    return summarize(recs, setup.config.max_attempts, time.perf_counter() - t, label), recs


def evaluate_rrs(
    setup: EvalSetup, episodes: int = 1000, seed: int = 0, jobs: int = 1, label: str = "rrs"
) -> tuple[EvalReport, list[EpisodeRecord]]:
    t = time.perf_counter()
    recs = run_rrs_episodes(setup, episodes, seed, jobs)
    return summarize(recs, setup.config.max_attempts, time.perf_counter() - t, label), recs


# -- ablation variants ---------------------------------------------------------------------------

VARIANTS = ("full", "open_loop", "short_memory", "trunc_normal")
VARIANT_ALIASES = {"ol": "open_loop", "sm": "short_memory", "normal": "trunc_normal"}


def variant_setup(variant: str, grid: int = 64, max_attempts: int = 5) -> tuple[ObservationConfig, str]:
    """Observation config and action head for a variant.

    OL zeroes the history block, SM keeps only the latest attempt, the normal variant swaps the head.
    """
    variant = VARIANT_ALIASES.get(variant, variant)
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if variant == "open_loop":
        return ObservationConfig(grid=grid, history_slots=max_attempts, use_history=False), "beta"
    if variant == "short_memory":
        return ObservationConfig(grid=grid, history_slots=1, rolling_history=True), "beta"
    head = "trunc_normal" if variant == "trunc_normal" else "beta"
    return ObservationConfig(grid=grid, history_slots=max_attempts), head


def run_ablation(
    variant: str,
    source: SceneSource,
    train_config,
    seed: int = 0,
    grid: int = 64,
    episodes: int = 200,
    config: GeneratorConfig | None = None,
    out_dir: str | Path | None = None,
    jobs: int = 1,
) -> tuple[ActorCritic, EvalReport]:
    """Train the variant and evaluate it with the same source, seeds and budgets."""
    from clutterlab.ppo import train

    config = config or GeneratorConfig()
    obs_config, head = variant_setup(variant, grid, config.max_attempts)
    setup = EvalSetup(source, config, obs_config)
    result = train(setup.make_env, replace(train_config, head=head), seed=seed, out_dir=out_dir)
    report, _ = evaluate_policy(result.model, setup, episodes, seed=10_000 + seed, jobs=jobs, label=variant)
    return result.model, report


# -- diversity ------------------------------------------------------------------------------------


@dataclass
class DiversityMap:
    region: QueriedRegion
    points: dict[str, np.ndarray]  # object id -> (k, 2) region-frame positions

    def coverage_box(self, object_id: str) -> tuple[float, float, float, float] | None:
        pts = self.points.get(object_id)
        if pts is None or len(pts) == 0:
            return None
        hx, hy = self.region.half_extents[:2]
        lo = np.maximum(pts.min(axis=0), [-hx, -hy])
        hi = np.minimum(pts.max(axis=0), [hx, hy])
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])

    def coverage(self, object_id: str) -> float:
        box = self.coverage_box(object_id)
        if box is None:
            return 0.0
        area = max(box[2] - box[0], 0.0) * max(box[3] - box[1], 0.0)
        return float(min(area / self.region.footprint_area, 1.0))

    @property
    def coverage_ratio(self) -> float:
        """Mean per-object coverage ratio over objects with at least one placement."""
        ids = [k for k, v in self.points.items() if len(v)]
        return float(np.mean([self.coverage(k) for k in ids])) if ids else 0.0

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["object_id", "x", "y"])
            for k in sorted(self.points):
                for x, y in self.points[k]:
                    w.writerow([k, repr(float(x)), repr(float(y))])

    def render(self, path: str | Path, size: int = 256) -> None:
        """Scatter raster (binary PGM): one gray level per object, coverage boxes outlined."""
        img = np.full((size, size), 255, dtype=np.uint8)
        hx, hy = self.region.half_extents[:2]

        def pix(x, y):
            return (
                np.clip(((y + hy) / (2 * hy) * (size - 1)).astype(int), 0, size - 1),
                np.clip(((x + hx) / (2 * hx) * (size - 1)).astype(int), 0, size - 1),
            )

        ids = sorted(self.points)
        for i, k in enumerate(ids):
            pts = self.points[k]
            if len(pts) == 0:
                continue
            shade = int(40 + 160 * i / max(len(ids) - 1, 1))
            r, c = pix(pts[:, 0], pts[:, 1])
            img[r, c] = shade
            box = self.coverage_box(k)
            if box is not None:
                (r0, r1), (c0, c1) = pix(np.array([box[0], box[2]]), np.array([box[1], box[3]]))
                img[r0 : r1 + 1, [c0, c1]] = 0
                img[[r0, r1], c0 : c1 + 1] = 0
        with open(path, "wb") as fh:
            fh.write(f"P5 {size} {size} 255\n".encode())
            fh.write(img[::-1].tobytes())


def diversity_from_records(records: Sequence[EpisodeRecord]) -> DiversityMap:
    """Region-frame positions of every committed (hence successful) placement."""
    if not records:
        raise ValueError("no records")
    pts: dict[str, list[np.ndarray]] = {}
    region = records[0].region
    for r in records:
        for p in r.placements:
            local = r.region.to_local_xy(np.array(p.position[:2]))
            pts.setdefault(p.object_id, []).append(np.asarray(local, dtype=float))
    return DiversityMap(region, {k: np.array(v) for k, v in pts.items()})


def diversity_map(
    model: ActorCritic,
    setup: EvalSetup,
    scenes: int = 500,
    seed: int = 0,
    deterministic: bool = False,
    jobs: int = 1,
) -> tuple[DiversityMap, EvalReport]:
    report, recs = evaluate_policy(model, setup, scenes, seed, deterministic, jobs, label="diversity")
    return diversity_from_records(recs), report


# -- generalization and attempt studies -------------------------------------------------------------


def generalization_eval(
    model: ActorCritic,
    setup: EvalSetup,
    changes: Sequence[ChangeKind | str] = CHANGE_KINDS,
    episodes: int = 500,
    seed: int = 0,
    jobs: int = 1,
) -> dict[str, EvalReport]:
    """One report per change kind on the setup's table (the enlarged table by default)."""
    out = {}
    for kind in changes:
        kind = ChangeKind.parse(kind) if isinstance(kind, str) else kind
        s = replace(setup, change=kind)
        out[kind.value], _ = evaluate_policy(model, s, episodes, seed, jobs=jobs, label=kind.value)
    return out


def enlarged_setup(setup: EvalSetup) -> EvalSetup:
    """Same region and objects, placed on the 1.40 m test table."""
    src = setup.source
    region = src.region or src.table.full_region()
    return replace(setup, source=replace(src, table=ENLARGED_TABLE, region=region))


def attempts_study(
    model: ActorCritic,
    setup: EvalSetup,
    budgets: Sequence[int] = (1, 2, 3, 5, 8),
    episodes: int = 200,
    seed: int = 0,
    jobs: int = 1,
) -> dict[int, EvalReport]:
    if any(b < 1 for b in budgets):
        raise ValueError("attempt budgets must be >= 1")
    out = {}
    for b in budgets:
        s = replace(setup, config=replace(setup.config, max_attempts=b))
        out[b], _ = evaluate_policy(model, s, episodes, seed, jobs=jobs, label=f"budget={b}")
    return out


def stable_steps_vs_attempt(records: Sequence[EpisodeRecord], min_attempts: int = 3) -> dict[int, float]:
    """Mean stable steps per attempt index over objects that needed at least ``min_attempts`` attempts."""
    per: dict[int, list[int]] = {}
    for r in records:
        by_obj: dict[int, list[tuple[int, int]]] = {}
        for obj, attempt, steps in r.stable_steps:
            by_obj.setdefault(obj, []).append((attempt, steps))
        for rows in by_obj.values():
            if len(rows) >= min_attempts:
                for attempt, steps in rows:
                    per.setdefault(attempt, []).append(steps)
    return {k: float(np.mean(v)) for k, v in sorted(per.items())}


__all__ = [
    "CHANGE_KINDS",
    "DiversityMap",
    "EvalReport",
    "EvalSetup",
    "PolicyActor",
    "VARIANTS",
    "attempts_study",
    "diversity_from_records",
    "diversity_map",
    "enlarged_setup",
    "evaluate_policy",
    "evaluate_rrs",
    "generalization_eval",
    "run_ablation",
    "run_policy_episodes",
    "run_rrs_episodes",
    "stable_steps_vs_attempt",
    "summarize",
    "variant_setup",
    "write_reports_csv",
]
