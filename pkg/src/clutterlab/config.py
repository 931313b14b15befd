"""Run configuration: nested defaults, YAML overrides with strict key checking, and builders."""

from __future__ import annotations

import copy
from pathlib import Path
from typing import Any

import yaml

from clutterlab.env import GeneratorConfig
from clutterlab.observation import ObservationConfig
from clutterlab.physics import StabilityThresholds
from clutterlab.ppo import TrainerConfig
from clutterlab.scene import GROUP_SEEDS, QueriedRegion, SceneSource, Table


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending key path."""


DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "jobs": 1,
    "out": "runs/default",
    "variant": "full",
    "scene": {
        "groups": list(GROUP_SEEDS),
        "objects": 1,  # int, or [lo, hi] sampled per episode
        "table": {"width": 0.60, "length": 0.70, "height": 0.70},
        "region": None,  # {center: [x, y], half_extents: [hx, hy, hz], yaw}; null = whole table
    },
    "generator": {
        "max_attempts": 5,
        "settle_steps": 240,
        "penalty_scale": 0.005,
        "success_reward": 100.0,
        "drop_epsilon": 0.002,
        "drift_tolerance": 0.001,
    },
    "observation": {"grid": 64},
    "trainer": {
        "lr": 1e-4,
        "batch": 1000,
        "update_epochs": 5,
        "minibatches": 4,
        "gamma": 0.99,
        "gae_lambda": 0.95,
        "clip_eps": 0.2,
        "vf_coef": 0.5,
        "ent_coef": 0.01,
        "grad_clip": 0.5,
        "normalize_advantages": True,
        "reward_scale": 0.01,
        "total_steps": 50_000,
        "n_envs": 4,
        "hidden": 256,
        "hidden_layers": 4,
        "checkpoint_every": 0,
    },
    "eval": {"episodes": 1000, "deterministic": False, "change": None, "budgets": [1, 2, 3, 5, 8]},
    "export": {"scenes": 500, "samples": 5000, "views": 4},
    "distill": {"epochs": 1000, "hidden": 256, "lr": 1e-3, "batch": 256, "samples": None, "test_episodes": 100},
}


def _check_type(path: str, default: Any, value: Any) -> Any:
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            if path == "scene.objects" and isinstance(value, list):
                return value
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{path}: expected a string, got {value!r}")
    if isinstance(default, list) and not isinstance(value, list):
        raise ConfigError(f"{path}: expected a list, got {value!r}")
    return value


def merge(base: dict, override: dict, path: str = "") -> dict:
    """Deep-merge ``override`` into a copy of ``base``; unknown keys raise :class:`ConfigError`."""
    if not isinstance(override, dict):
        raise ConfigError(f"{path or '<root>'}: expected a mapping, got {type(override).__name__}")
    out = copy.deepcopy(base)
    for key, value in override.items():
        p = f"{path}.{key}" if path else str(key)
        if key not in base:
            raise ConfigError(f"{p}: unknown key")
        if isinstance(base[key], dict):
            out[key] = merge(base[key], value, p)
        elif key == "region" and value is not None:
            out[key] = _check_region(p, value)
        else:
            out[key] = _check_type(p, base[key], value)
    return out


def _check_region(path: str, value: Any) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(f"{path}: expected a mapping or null")
    allowed = {"center", "half_extents", "yaw"}
    for k in value:
        if k not in allowed:
            raise ConfigError(f"{path}.{k}: unknown key")
    for k, n in (("center", 2), ("half_extents", 3)):
        v = value.get(k)
        if not isinstance(v, list) or len(v) != n:
            raise ConfigError(f"{path}.{k}: expected a list of {n} numbers")
    return {"center": list(value["center"]), "half_extents": list(value["half_extents"]), "yaw": float(value.get("yaw", 0.0))}


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text())
        except yaml.YAMLError as err:
            raise ConfigError(f"<root>: cannot parse {path}: {err}") from None
        cfg = merge(cfg, data or {})
    if overrides:
        cfg = merge(cfg, overrides)
    return cfg


def dump_config(cfg: dict, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg, sort_keys=True))


# -- builders -----------------------------------------------------------------------------------


def table_of(cfg: dict) -> Table:
    t = cfg["scene"]["table"]
    return Table(t["width"], t["length"], t["height"])


def scene_source(cfg: dict) -> SceneSource:
    s = cfg["scene"]
    table = table_of(cfg)
    region = None
    if s["region"] is not None:
        r = s["region"]
        region = QueriedRegion((r["center"][0], r["center"][1], table.top), tuple(r["half_extents"]), r["yaw"])
    unknown = [g for g in s["groups"] if g not in GROUP_SEEDS]
    if unknown:
        raise ConfigError(f"scene.groups: unknown group(s) {unknown}")
    objects = s["objects"]
    n = int(objects) if isinstance(objects, int) else (int(objects[0]), int(objects[1]))
    if (n if isinstance(n, int) else n[0]) < 1:
        raise ConfigError("scene.objects: must be >= 1")
    return SceneSource(tuple(s["groups"]), n, table, region)


def generator_config(cfg: dict) -> GeneratorConfig:
    return GeneratorConfig(**cfg["generator"], thresholds=StabilityThresholds())


def observation_config(cfg: dict) -> ObservationConfig:
    from clutterlab.evaluation import variant_setup

    oc, _ = variant_setup(cfg["variant"], cfg["observation"]["grid"], cfg["generator"]["max_attempts"])
    return oc


def trainer_config(cfg: dict) -> TrainerConfig:
    from clutterlab.evaluation import variant_setup

    _, head = variant_setup(cfg["variant"], cfg["observation"]["grid"], cfg["generator"]["max_attempts"])
    try:
        return TrainerConfig(**cfg["trainer"], head=head)
    except ValueError as err:
        raise ConfigError(f"trainer: {err}") from None
