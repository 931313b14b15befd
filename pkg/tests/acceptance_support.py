"""Desk-scale acceptance setups and a content-addressed cache for the expensive artifacts.

Trained policies are keyed by their settings plus a hash of every source file that can change
training; evaluation summaries additionally hash the evaluation code.  Build everything ahead of
time with ``python3 tests/acceptance_support.py`` (a few hours on one core).
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path
from typing import Any, Callable

ROOT = Path(__file__).resolve().parents[1]
SRC = ROOT / "src" / "clutterlab"
CACHE = Path(os.environ.get("CLUTTERLAB_CACHE", ROOT / ".acceptance_cache"))

from clutterlab.env import GeneratorConfig  # noqa: E402
from clutterlab.evaluation import EvalSetup, variant_setup  # noqa: E402
from clutterlab.policy import load_checkpoint, save_checkpoint  # noqa: E402
from clutterlab.ppo import TrainerConfig, train  # noqa: E402
from clutterlab.scene import DEFAULT_TABLE, ENLARGED_TABLE, QueriedRegion, SceneSource  # noqa: E402

TRAIN_SOURCES = ["physics", "policy", "scene.py", "env.py", "observation.py", "ppo.py"]
EVAL_SOURCES = TRAIN_SOURCES + ["baselines.py", "evaluation.py", "distill.py"]

# Crowded desk task: 3-5 objects in a 0.30 x 0.30 m patch of the standard table.
CONFINED = QueriedRegion((0.0, 0.0, DEFAULT_TABLE.top), (0.15, 0.15, 0.15))
CROWDED = SceneSource(n_objects=(3, 5), region=CONFINED)
# Sanity task: one object, the whole enlarged table.
SANITY = SceneSource(n_objects=1, table=ENLARGED_TABLE)
GRID = 16
SEEDS = (0, 1, 2)
DESK_TRAINER = TrainerConfig(total_steps=80_000, lr=3e-4, hidden=256)
SANITY_TRAINER = TrainerConfig(total_steps=10_000, lr=3e-4, hidden=256)
EVAL_EPISODES = 500


def source_hash(parts: list[str]) -> str:
    h = hashlib.sha256()
    for part in parts:
        p = SRC / part
        files = sorted(p.rglob("*.py")) if p.is_dir() else [p]
        for f in files:
            h.update(str(f.relative_to(SRC)).encode())
            h.update(f.read_bytes())
    return h.hexdigest()[:16]


def _key(name: str, params: dict[str, Any], parts: list[str]) -> Path:
    blob = json.dumps(params, sort_keys=True, default=str).encode()
    digest = hashlib.sha256(blob + source_hash(parts).encode()).hexdigest()[:16]
    return CACHE / f"{name}-{digest}"


def setup_for(variant: str, source: SceneSource = CROWDED) -> EvalSetup:
    obs, _ = variant_setup(variant, GRID, GeneratorConfig().max_attempts)
    return EvalSetup(source, GeneratorConfig(), obs)


def trained_policy(variant: str, seed: int, source: SceneSource = CROWDED, trainer: TrainerConfig = DESK_TRAINER):
    """Train (or load) a policy; returns ``(model, meta)``."""
    _, head = variant_setup(variant, GRID)
    params = {"variant": variant, "seed": seed, "source": repr(source), "trainer": asdict(trainer), "grid": GRID}
    path = _key(f"policy-{variant}-{seed}", params, TRAIN_SOURCES) / "policy.ckpt"
    if not path.exists():
        from dataclasses import replace

        cfg = replace(trainer, head=head)
        t = time.perf_counter()
        res = train(setup_for(variant, source).make_env, cfg, seed=seed, out_dir=path.parent)
        meta = {"variant": variant, "seed": seed, "train_seconds": time.perf_counter() - t, "curve": res.curve}
        save_checkpoint(path, res.model, res.adam, meta)
    model, _, meta = load_checkpoint(path)
    return model, meta


def cached_json(name: str, params: dict[str, Any], build: Callable[[], Any]) -> Any:
    path = _key(name, params, EVAL_SOURCES).with_suffix(".json")
    if path.exists():
        return json.loads(path.read_text())
    value = build()
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(value, indent=1, sort_keys=True))
    return value


def build_all() -> None:
    jobs = [("sanity", 0, SANITY, SANITY_TRAINER)]
    jobs += [(v, s, CROWDED, DESK_TRAINER) for s in SEEDS for v in ("full", "short_memory", "open_loop")]
    jobs += [("trunc_normal", 0, CROWDED, DESK_TRAINER)]
    for variant, seed, source, trainer in jobs:
        t = time.perf_counter()
        name = "full" if variant == "sanity" else variant
        trained_policy(name, seed, source, trainer)
        print(f"{variant} seed {seed}: {time.perf_counter() - t:.0f} s", flush=True)


if __name__ == "__main__":
    sys.exit(build_all())
