"""Command line for training, generation, evaluation, dataset export, distillation and replay."""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from clutterlab import config as cfgmod
from clutterlab.config import ConfigError
from clutterlab.env import GeneratorEnv, replay_scene
from clutterlab.evaluation import (
    CHANGE_KINDS,
    EvalSetup,
    PolicyActor,
    attempts_study,
    diversity_map,
    enlarged_setup,
    evaluate_policy,
    evaluate_rrs,
    generalization_eval,
    stable_steps_vs_attempt,
    write_reports_csv,
)
from clutterlab.policy import ActorCritic, load_checkpoint
from clutterlab.scene import SceneFormatError, deserialize_scene, serialize_scene

EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_SCHEMA = 4
EXIT_FAILED = 1


class CliError(Exception):
    def __init__(self, kind: str, message: str, code: int):
        super().__init__(message)
        self.kind = kind
        self.code = code


# -- config plumbing ------------------------------------------------------------------------------


def _overrides(args: argparse.Namespace) -> dict:
    o: dict = {}
    if args.seed is not None:
        o["seed"] = args.seed
    if args.jobs is not None:
        o["jobs"] = args.jobs
    if args.out is not None:
        o["out"] = args.out
    if getattr(args, "variant", None) is not None:
        o["variant"] = args.variant
    if getattr(args, "objects", None) is not None:
        o.setdefault("scene", {})["objects"] = args.objects
    if getattr(args, "steps", None) is not None:
        o.setdefault("trainer", {})["total_steps"] = args.steps
    if getattr(args, "episodes", None) is not None:
        o.setdefault("eval", {})["episodes"] = args.episodes
    if getattr(args, "change", None) is not None:
        o.setdefault("eval", {})["change"] = args.change
    return o


def _config(args: argparse.Namespace) -> dict:
    if args.config is not None and not Path(args.config).exists():
        raise CliError("missing-file", f"config file not found: {args.config}", EXIT_MISSING)
    return cfgmod.load_config(args.config, _overrides(args))


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    cfgmod.dump_config(cfg, out / "config.yaml")
    return out


def _load_policy(path: str | None) -> tuple[ActorCritic, dict]:
    if path is None:
        raise CliError("missing-argument", "--checkpoint is required (or pass --baseline rrs)", EXIT_CONFIG)
    p = Path(path)
    if not p.exists():
        raise CliError("missing-file", f"checkpoint not found: {path}", EXIT_MISSING)
    try:
        model, _, meta = load_checkpoint(p)
    except ValueError as err:
        raise CliError("bad-checkpoint", str(err), EXIT_SCHEMA) from None
    return model, meta


def _policy_cfg(cfg: dict, meta: dict) -> dict:
    """Observation settings must match the checkpoint; take them from its run config."""
    run = meta.get("run_config")
    if run is None:
        return cfg
    return cfgmod.merge(cfg, {"variant": run["variant"], "observation": run["observation"]})


def _setup(cfg: dict) -> EvalSetup:
    return EvalSetup(cfgmod.scene_source(cfg), cfgmod.generator_config(cfg), cfgmod.observation_config(cfg))


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


# -- commands ------------------------------------------------------------------------------------------


def cmd_train(args: argparse.Namespace) -> dict:
    from clutterlab.ppo import train

    cfg = _config(args)
    out = _out_dir(cfg)
    setup = _setup(cfg)
    tcfg = cfgmod.trainer_config(cfg)
    result = train(setup.make_env, tcfg, seed=cfg["seed"], out_dir=out, meta={"run_config": cfg})
    last = result.curve[-1]
    return {"checkpoint": str(out / "policy.ckpt"), "curve": str(out / "curve.csv"), "updates": len(result.curve), "final": last}


def cmd_generate(args: argparse.Namespace) -> dict:
    """Write ``n`` scene documents from successful generation episodes."""
    cfg = _config(args)
    if args.baseline is None:
        model, meta = _load_policy(args.checkpoint)
        cfg = _policy_cfg(cfg, meta)
    out = _out_dir(cfg)
    setup = _setup(cfg)
    env = setup.make_env()
    seed = cfg["seed"]
    written, episodes = [], 0
    limit = args.max_episodes or 50 * args.n
    from clutterlab.baselines import rrs_episode
    from clutterlab.env import episode_scene, rollout_episode

    while len(written) < args.n and episodes < limit:
        rng = np.random.default_rng([seed, episodes, 0])
        if args.baseline == "rrs":
            rec = rrs_episode(env, (seed, episodes), rng)
        else:
            rec = rollout_episode(PolicyActor(model, np.random.default_rng([seed, episodes, 1])), env, rng)
        episodes += 1
        if not rec.success:
            continue
        path = out / f"scene_{len(written):04d}.json"
        path.write_text(serialize_scene(episode_scene(rec), rec.placements))
        written.append(str(path))
    summary = {"requested": args.n, "written": len(written), "episodes": episodes, "scenes": written}
    _write_json(out / "generate_summary.json", summary)
    if len(written) < args.n:
        raise CliError("insufficient-scenes", f"only {len(written)} successful scenes in {episodes} episodes", EXIT_FAILED)
    return summary


def cmd_eval(args: argparse.Namespace) -> dict:
    cfg = _config(args)
    model = None
    if args.baseline is None:
        model, meta = _load_policy(args.checkpoint)
        cfg = _policy_cfg(cfg, meta)
    out = _out_dir(cfg)
    setup = _setup(cfg)
    ev = cfg["eval"]
    jobs, seed, n = cfg["jobs"], cfg["seed"], ev["episodes"]
    if ev["change"] is not None:
        setup = replace(enlarged_setup(setup), change=_change(ev["change"]))
    suite = args.suite
    result: dict = {"suite": suite}
    if args.baseline == "rrs":
        if suite != "standard":
            raise CliError("bad-argument", "the rrs baseline supports only the standard suite", EXIT_CONFIG)
        rep, _ = evaluate_rrs(setup, n, seed, jobs)
        reports = [rep]
    elif suite == "standard":
        rep, recs = evaluate_policy(model, setup, n, seed, ev["deterministic"], jobs, label=cfg["variant"])
        result["stable_steps_vs_attempt"] = stable_steps_vs_attempt(recs)
        reports = [rep]
    elif suite == "generalization":
        reps = generalization_eval(model, enlarged_setup(_setup(cfg)), CHANGE_KINDS, n, seed, jobs)
        reports = list(reps.values())
    elif suite == "attempts":
        reps = attempts_study(model, setup, ev["budgets"], n, seed, jobs)
        reports = list(reps.values())
    elif suite == "diversity":
        dmap, rep = diversity_map(model, setup, n, seed, ev["deterministic"], jobs)
        dmap.write_csv(out / "diversity.csv")
        dmap.render(out / "diversity.pgm")
        result["coverage_ratio"] = dmap.coverage_ratio
        reports = [rep]
    else:  # argparse restricts choices
        raise CliError("bad-argument", f"unknown suite {suite}", EXIT_CONFIG)
    write_reports_csv(out / "report.csv", reports)
    result["reports"] = [r.to_dict() for r in reports]
    _write_json(out / "report.json", result)
    return result


def _change(name: str):
    from clutterlab.scene import ChangeKind

    try:
        return ChangeKind.parse(name)
    except ValueError:
        raise CliError("bad-argument", f"unknown change {name!r}", EXIT_CONFIG) from None


def cmd_export(args: argparse.Namespace) -> dict:
    from clutterlab.distill import export_dataset

    cfg = _config(args)
    ex = cfg["export"]
    if args.scenes is not None:
        ex["scenes"] = args.scenes
    if args.samples is not None:
        ex["samples"] = args.samples
    if args.baseline is None:
        model, meta = _load_policy(args.checkpoint)
        cfg = _policy_cfg(cfg, meta)
    out = _out_dir(cfg)
    setup = _setup(cfg)
    t0 = time.perf_counter()
    if args.baseline == "rrs":
        _, recs = evaluate_rrs(setup, ex["scenes"], cfg["seed"], cfg["jobs"])
    else:
        _, recs = evaluate_policy(model, setup, ex["scenes"], cfg["seed"], jobs=cfg["jobs"])
    t1 = time.perf_counter()
    ds = export_dataset(
        [(f"{cfg['seed']}-{i:05d}", r) for i, r in enumerate(recs)],
        ex["samples"],
        grid=cfg["observation"]["grid"],
        seed=cfg["seed"],
        config=setup.config,
        views=ex["views"],
    )
    t2 = time.perf_counter()
    path = out / "dataset.jsonl"
    ds.save(path)
    summary = {
        "dataset": str(path),
        "samples": len(ds),
        "generation_seconds": t1 - t0,
        "export_seconds": t2 - t1,
        "provenance": ds.provenance,
    }
    _write_json(out / "export_summary.json", summary)
    return summary


def cmd_distill(args: argparse.Namespace) -> dict:
    from clutterlab.distill import (
        PlacementDataset,
        eval_placement,
        problems_from_record,
        train_supervised,
    )

    cfg = _config(args)
    if not Path(args.dataset).exists():
        raise CliError("missing-file", f"dataset not found: {args.dataset}", EXIT_MISSING)
    try:
        ds = PlacementDataset.load(args.dataset)
    except (ValueError, KeyError, SceneFormatError) as err:
        raise CliError("bad-dataset", str(err), EXIT_SCHEMA) from None
    dc = cfg["distill"]
    if args.samples is not None:
        dc["samples"] = args.samples
    if args.epochs is not None:
        dc["epochs"] = args.epochs
    if dc["samples"] is not None:
        ds = ds.subset(int(dc["samples"]), cfg["seed"])
    out = _out_dir(cfg)
    model = train_supervised(ds, dc["epochs"], dc["hidden"], dc["lr"], dc["batch"], cfg["seed"])
    # Held-out problems come from RRS runs on a disjoint seed range.
    setup = replace(_setup(cfg), obs_config=None)
    _, recs = evaluate_rrs(setup, dc["test_episodes"], seed=1_000_000 + cfg["seed"], jobs=cfg["jobs"])
    problems = [p for i, r in enumerate(recs) for p in problems_from_record(r, f"test-{i}")]
    ev = eval_placement(model.predict_problem, problems, setup.config)
    np.savez(out / "placement_model.npz", *model.net.params, sizes=np.array(model.net.sizes))
    summary = {
        "samples": len(ds),
        "epochs": dc["epochs"],
        "final_loss": model.history[-1],
        "test_problems": ev.trials,
        "success_rate": ev.success_rate,
    }
    _write_json(out / "distill_report.json", summary)
    return summary


def cmd_replay(args: argparse.Namespace) -> dict:
    results = []
    for name in args.scenes:
        p = Path(name)
        if not p.exists():
            raise CliError("missing-file", f"scene document not found: {name}", EXIT_MISSING)
        try:
            spec, placements = deserialize_scene(p.read_text())
        except SceneFormatError as err:
            raise CliError("schema", f"{name}: {err}", EXIT_SCHEMA) from None
        rep = replay_scene(spec, placements)
        results.append({"scene": name, **rep.to_dict()})
    ok = all(r["ok"] for r in results)
    out = {"ok": ok, "scenes": results}
    if not ok:
        bad = [r["scene"] for r in results if not r["ok"]]
        raise CliError("replay-failed", f"unstable placements in {bad}", EXIT_FAILED)
    return out


# -- entry point -----------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int, help="worker processes for evaluation (1 = bit-reproducible)")
    common.add_argument("--out", help="output directory")

    p = argparse.ArgumentParser(prog="clutterlab", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common], help="train a generation policy with PPO")
    t.add_argument("--steps", type=int, help="total environment decisions")
    t.add_argument("--objects", type=int)
    t.add_argument("--variant", choices=["full", "ol", "sm", "normal"])

    g = sub.add_parser("generate", parents=[common], help="write scene documents")
    g.add_argument("--checkpoint")
    g.add_argument("--baseline", choices=["rrs"])
    g.add_argument("--n", type=int, default=10)
    g.add_argument("--max-episodes", type=int)
    g.add_argument("--objects", type=int)

    e = sub.add_parser("eval", parents=[common], help="evaluate a policy or the RRS baseline")
    e.add_argument("--checkpoint")
    e.add_argument("--baseline", choices=["rrs"])
    e.add_argument("--suite", choices=["standard", "generalization", "attempts", "diversity"], default="standard")
    e.add_argument("--episodes", type=int)
    e.add_argument("--objects", type=int)
    e.add_argument("--change", choices=["translation", "rotation", "shrink", "expand", "combined"])

    x = sub.add_parser("export", parents=[common], help="export a placement dataset (JSONL)")
    x.add_argument("--checkpoint")
    x.add_argument("--baseline", choices=["rrs"])
    x.add_argument("--scenes", type=int)
    x.add_argument("--samples", type=int)
    x.add_argument("--objects", type=int)

    d = sub.add_parser("distill", parents=[common], help="train and test a supervised placement model")
    d.add_argument("--dataset", required=True)
    d.add_argument("--samples", type=int)
    d.add_argument("--epochs", type=int)

    r = sub.add_parser("replay", help="re-simulate scene documents and verify every placement")
    r.add_argument("scenes", nargs="+")
    return p


COMMANDS = {
    "train": cmd_train,
    "generate": cmd_generate,
    "eval": cmd_eval,
    "export": cmd_export,
    "distill": cmd_distill,
    "replay": cmd_replay,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        result = COMMANDS[args.command](args)
    except CliError as err:
        print(json.dumps({"error": err.kind, "message": str(err)}), file=sys.stderr)
        return err.code
    except ConfigError as err:
        print(json.dumps({"error": "config", "message": str(err)}), file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps(result, indent=2, sort_keys=True, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
