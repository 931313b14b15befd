import json

import pytest
import yaml

from clutterlab.cli import EXIT_CONFIG, EXIT_FAILED, EXIT_MISSING, EXIT_SCHEMA, main
from clutterlab.config import DEFAULTS, ConfigError, load_config

SMALL = {
    "observation": {"grid": 4},
    "scene": {"objects": 1, "table": {"width": 1.0, "length": 1.2, "height": 0.7}},
    "trainer": {"batch": 40, "n_envs": 2, "minibatches": 2, "hidden": 8, "hidden_layers": 2, "total_steps": 40},
    "eval": {"episodes": 4},
    "export": {"scenes": 4, "samples": 8},
    "distill": {"epochs": 5, "hidden": 8, "batch": 4, "test_episodes": 3},
}


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "small.yaml"
    p.write_text(yaml.safe_dump(SMALL))
    return p


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, (json.loads(out) if code == 0 else None), err


def error_of(err: str) -> dict:
    return json.loads(err.strip().splitlines()[-1])


def test_config_defaults_and_strict_keys(tmp_path):
    cfg = load_config(None, {"seed": 4})
    assert cfg["seed"] == 4 and cfg["trainer"] == DEFAULTS["trainer"]
    with pytest.raises(ConfigError, match="trainer.bogus"):
        load_config(None, {"trainer": {"bogus": 1}})
    with pytest.raises(ConfigError, match="trainer.lr"):
        load_config(None, {"trainer": {"lr": "fast"}})


def test_train_writes_curve_config_and_checkpoint(tmp_path, cfg_path, capsys):
    out = tmp_path / "run"
    code, res, _ = run(capsys, "train", "--config", cfg_path, "--out", out, "--seed", 1)
    assert code == 0 and res["updates"] == 1
    assert len((out / "curve.csv").read_text().splitlines()) == 2
    snap = yaml.safe_load((out / "config.yaml").read_text())
    assert snap["seed"] == 1 and snap["observation"]["grid"] == 4
    assert (out / "policy.ckpt").exists()


def test_generate_then_replay_and_reproducible(tmp_path, cfg_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        code, res, _ = run(capsys, "generate", "--baseline", "rrs", "--n", 3, "--config", cfg_path, "--out", out)
        assert code == 0 and res["written"] == 3
    for i in range(3):
        name = f"scene_{i:04d}.json"
        assert (a / name).read_bytes() == (b / name).read_bytes()
    code, res, _ = run(capsys, "replay", *sorted(a.glob("scene_*.json")))
    assert code == 0 and res["ok"]


def test_policy_generate_and_eval(tmp_path, cfg_path, capsys):
    ck = tmp_path / "run" / "policy.ckpt"
    run(capsys, "train", "--config", cfg_path, "--out", ck.parent)
    code, res, _ = run(capsys, "generate", "--checkpoint", ck, "--n", 2, "--config", cfg_path, "--out", tmp_path / "g")
    assert code == 0 and res["written"] == 2
    code, res, _ = run(capsys, "eval", "--checkpoint", ck, "--config", cfg_path, "--out", tmp_path / "e")
    assert code == 0 and res["reports"][0]["episodes"] == 4
    assert (tmp_path / "e" / "report.csv").exists()


def test_export_and_distill(tmp_path, cfg_path, capsys):
    code, res, _ = run(capsys, "export", "--baseline", "rrs", "--config", cfg_path, "--out", tmp_path / "x")
    assert code == 0 and res["samples"] > 0
    code, res, _ = run(capsys, "distill", "--dataset", res["dataset"], "--config", cfg_path, "--out", tmp_path / "d")
    assert code == 0 and 0.0 <= res["success_rate"] <= 1.0
    assert (tmp_path / "d" / "placement_model.npz").exists()


def test_error_codes(tmp_path, cfg_path, capsys):
    code, _, err = run(capsys, "eval", "--checkpoint", tmp_path / "nope.ckpt", "--out", tmp_path / "e")
    assert code == EXIT_MISSING and error_of(err)["error"] == "missing-file"

    junk = tmp_path / "junk.ckpt"
    junk.write_bytes(b"not a checkpoint")
    code, _, err = run(capsys, "eval", "--checkpoint", junk, "--out", tmp_path / "e")
    assert code == EXIT_SCHEMA and error_of(err)["error"] == "bad-checkpoint"

    bad = tmp_path / "bad.yaml"
    bad.write_text("trainer:\n  warp: 9\n")
    code, _, err = run(capsys, "train", "--config", bad, "--out", tmp_path / "t")
    assert code == EXIT_CONFIG and "trainer.warp" in error_of(err)["message"]

    doc = tmp_path / "scene.json"
    doc.write_text('{"version": 1}')
    code, _, err = run(capsys, "replay", doc)
    assert code == EXIT_SCHEMA and error_of(err)["error"] == "schema"


def test_replay_detects_tampered_scene(tmp_path, cfg_path, capsys):
    run(capsys, "generate", "--baseline", "rrs", "--n", 1, "--config", cfg_path, "--out", tmp_path)
    path = tmp_path / "scene_0000.json"
    doc = json.loads(path.read_text())
    doc["placements"][0]["position"][2] += 0.2
    path.write_text(json.dumps(doc))
    code, _, err = run(capsys, "replay", path)
    assert code == EXIT_FAILED and error_of(err)["error"] == "replay-failed"
