import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clutterlab.env import GeneratorEnv
from clutterlab.observation import ObservationConfig
from clutterlab.policy import ActorCritic, Adam
from clutterlab.ppo import RolloutBuffer, TrainerConfig, compute_gae, ppo_loss, ppo_update, train
from clutterlab.scene import ENLARGED_TABLE, default_scene


def gae_oracle(r, v, d, boot, gamma, lam):
    """Direct double sum of (gamma*lam)^l * delta_{t+l}, truncated at episode ends."""
    n = len(r)
    nxt = np.append(v[1:], boot)
    delta = r + gamma * nxt * (1 - d) - v
    adv = np.zeros(n)
    for t in range(n):
        coef = 1.0
        for k in range(t, n):
            adv[t] += coef * delta[k]
            if d[k]:
                break
            coef *= gamma * lam
    return adv


def test_gae_matches_oracle_on_100_rollouts():
    rng = np.random.default_rng(0)
    for _ in range(100):
        r = rng.normal(size=20)
        v = rng.normal(size=20)
        d = (rng.random(20) < 0.15).astype(float)
        boot = rng.normal()
        gamma, lam = rng.uniform(0.8, 1.0), rng.uniform(0.0, 1.0)
        adv, ret = compute_gae(r, v, d, boot, gamma, lam)
        assert np.max(np.abs(adv - gae_oracle(r, v, d, boot, gamma, lam))) < 1e-10
        np.testing.assert_allclose(ret, adv + v, rtol=0, atol=1e-12)


def test_gae_examples():
    adv, ret = compute_gae([1.0], [0.5], [1.0], 123.0)
    assert adv[0] == 0.5 and ret[0] == 1.0
    rng = np.random.default_rng(1)
    r, v = rng.normal(size=6), rng.normal(size=6)
    d = np.zeros(6)
    adv, _ = compute_gae(r, v, d, 0.3, gamma=0.9, lam=0.0)
    np.testing.assert_allclose(adv, r + 0.9 * np.append(v[1:], 0.3) - v, atol=1e-15)


def test_gae_per_env_columns_are_independent():
    rng = np.random.default_rng(2)
    r, v = rng.normal(size=(10, 3)), rng.normal(size=(10, 3))
    d = (rng.random((10, 3)) < 0.2).astype(float)
    boot = rng.normal(size=3)
    adv, _ = compute_gae(r, v, d, boot)
    for j in range(3):
        col, _ = compute_gae(r[:, j], v[:, j], d[:, j], boot[j])
        np.testing.assert_array_equal(adv[:, j], col)
    with pytest.raises(ValueError):
        compute_gae(r, v[:5], d, boot)


# -- loss ---------------------------------------------------------------------------------------------


def _batch(model, n, rng):
    obs = rng.normal(size=(n, model.obs_dim))
    actions, logp, _ = model.act(obs, rng)
    return obs, actions, logp


CFG = TrainerConfig(batch=4, minibatches=1, n_envs=1, total_steps=4)


def test_identity_case():
    rng = np.random.default_rng(3)
    model = ActorCritic(6, hidden=8, hidden_layers=2)
    obs, actions, logp = _batch(model, 64, rng)
    adv = rng.normal(size=64)
    res = ppo_loss(model, obs, actions, logp, adv, rng.normal(size=64), CFG)
    np.testing.assert_allclose(res.ratio, 1.0, rtol=0, atol=1e-12)
    assert res.clip_fraction == 0.0
    assert abs(res.approx_kl) < 1e-8
    assert res.policy_loss == pytest.approx(-adv.mean(), abs=1e-12)


@given(st.floats(-3, 3).filter(lambda a: abs(a) > 1e-3), st.floats(0.5, 2.0))
@settings(max_examples=100)
def test_clip_arithmetic(adv, ratio):
    """Single sample: the surrogate equals min(r A, clip(r) A) for any head output."""
    model = ActorCritic(3, hidden=4, hidden_layers=1)
    rng = np.random.default_rng(0)
    obs, actions, logp = _batch(model, 1, rng)
    old = logp - np.log(ratio)
    res = ppo_loss(model, obs, actions, old, np.array([adv]), np.zeros(1), CFG)
    expected = min(ratio * adv, np.clip(ratio, 0.8, 1.2) * adv)
    assert -res.policy_loss == pytest.approx(expected, rel=1e-10)
    if adv > 0 and ratio == 1.5:
        assert -res.policy_loss == pytest.approx(1.2 * adv)


def test_four_transition_scalar_oracle():
    """Recompute c1 * MSE - c2 * H - L_clip one transition at a time in plain Python."""
    rng = np.random.default_rng(4)
    model = ActorCritic(5, hidden=6, hidden_layers=2, seed=9)
    obs, actions, logp = _batch(model, 4, rng)
    old = logp + np.array([0.5, -0.4, 0.05, 0.0])
    adv = np.array([1.0, -2.0, 0.5, 3.0])
    ret = np.array([0.1, 0.2, -0.3, 0.4])
    res = ppo_loss(model, obs, actions, old, adv, ret, CFG)
    clip_sum = mse = ent = 0.0
    for i in range(4):
        raw = model.raw(obs[i : i + 1])
        lp = float(model.head.log_prob(raw, actions[i : i + 1])[0])
        ratio = float(np.exp(lp - old[i]))
        clipped = min(max(ratio, 0.8), 1.2)
        clip_sum += min(ratio * adv[i], clipped * adv[i])
        mse += (float(model.value(obs[i : i + 1])[0]) - ret[i]) ** 2
        ent += float(model.head.entropy(raw)[0])
    total = 0.5 * mse / 4 - 0.01 * ent / 4 - clip_sum / 4
    assert abs(res.total - total) < 1e-10


def test_non_finite_loss_raises():
    model = ActorCritic(3, hidden=4, hidden_layers=1)
    obs, actions, logp = _batch(model, 2, np.random.default_rng(0))
    with pytest.raises(FloatingPointError):
        ppo_loss(model, obs, actions, logp, np.array([np.nan, 1.0]), np.zeros(2), CFG)


def test_update_moves_toward_advantage():
    rng = np.random.default_rng(5)
    model = ActorCritic(4, hidden=16, hidden_layers=2, seed=1)
    obs = np.tile(rng.normal(size=(1, 4)), (64, 1))
    actions, logp, values = model.act(obs, rng)
    adv = actions[:, 0].copy()  # reward pushing the first action dimension up
    buf = RolloutBuffer(obs, actions, logp, np.zeros(64), values, np.zeros(64), adv, values + adv)
    cfg = TrainerConfig(batch=64, minibatches=2, n_envs=1, total_steps=64, lr=3e-3)
    adam = Adam(model.params, lr=cfg.lr)
    before = model.head.mode(model.raw(obs[:1]))[0, 0]
    for _ in range(5):
        rep = ppo_update(buf, model, adam, cfg, rng)
    after = model.head.mode(model.raw(obs[:1]))[0, 0]
    assert after > before
    assert rep.grad_norm >= 0


def test_config_validation():
    with pytest.raises(ValueError):
        TrainerConfig(batch=1000, n_envs=3)
    with pytest.raises(ValueError):
        TrainerConfig(batch=1000, total_steps=10)


# -- training loop -----------------------------------------------------------------------------------


def _factory():
    spec = default_scene("group1", 1, table=ENLARGED_TABLE)
    return GeneratorEnv(spec, obs_config=ObservationConfig(grid=4))


def _strip(curve):
    return [{k: v for k, v in row.items() if k != "seconds"} for row in curve]


def test_one_update_and_determinism(tmp_path):
    cfg = TrainerConfig(batch=40, total_steps=40, n_envs=2, minibatches=2, hidden=8, hidden_layers=2)
    a = train(_factory, cfg, seed=3, out_dir=tmp_path)
    b = train(_factory, cfg, seed=3)
    assert len(a.curve) == 1
    assert _strip(a.curve) == _strip(b.curve)
    for p, q in zip(a.model.params, b.model.params):
        np.testing.assert_array_equal(p, q)
    with open(tmp_path / "curve.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1 and int(rows[0]["step"]) == 40
    assert (tmp_path / "policy.ckpt").exists()
