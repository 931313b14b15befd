"""PPO with a clipped surrogate, GAE and synchronous vectorized rollouts."""

from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from clutterlab.env import GeneratorEnv
from clutterlab.policy import ActorCritic, Adam, clip_global_norm, save_checkpoint


@dataclass(frozen=True)
class TrainerConfig:
    lr: float = 1e-4
    batch: int = 1000
    update_epochs: int = 5
    minibatches: int = 4
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    vf_coef: float = 0.5
    ent_coef: float = 0.01
    grad_clip: float = 0.5
    normalize_advantages: bool = True
    reward_scale: float = 0.01
    total_steps: int = 50_000
    n_envs: int = 4
    head: str = "beta"
    hidden: int = 256
    hidden_layers: int = 4
    checkpoint_every: int = 0  # updates; 0 = final only

    def __post_init__(self) -> None:
        if self.batch % self.n_envs:
            raise ValueError("batch must be divisible by n_envs")
        if self.batch % self.minibatches:
            raise ValueError("batch must be divisible by minibatches")
        if self.total_steps < self.batch:
            raise ValueError("total_steps must be at least one batch")


def compute_gae(
    rewards: np.ndarray,
    values: np.ndarray,
    dones: np.ndarray,
    bootstrap_value: np.ndarray | float,
    gamma: float = 0.99,
    lam: float = 0.95,
) -> tuple[np.ndarray, np.ndarray]:
    """Advantages and returns along axis 0; ``dones[t]`` marks an episode ending at ``t``.

    Extra trailing axes are independent environments.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=float)
    if rewards.shape != values.shape or rewards.shape != dones.shape:
        raise ValueError(f"length mismatch: rewards {rewards.shape}, values {values.shape}, dones {dones.shape}")
    nxt = np.broadcast_to(np.asarray(bootstrap_value, dtype=float), rewards.shape[1:]).copy()
    adv = np.zeros_like(rewards)
    running = np.zeros(rewards.shape[1:])
    for t in range(len(rewards) - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * nxt * live - values[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
        nxt = values[t]
    return adv, adv + values


@dataclass
class RolloutBuffer:
    obs: np.ndarray
    actions: np.ndarray
    logp: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    advantages: np.ndarray = field(default_factory=lambda: np.zeros(0))
    returns: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __len__(self) -> int:
        return len(self.obs)


@dataclass
class LossReport:
    policy_loss: float
    value_loss: float
    entropy: float
    total_loss: float
    clip_fraction: float
    approx_kl: float
    first_clip_fraction: float
    first_approx_kl: float
    grad_norm: float


@dataclass
class MinibatchLoss:
    policy_loss: float
    value_loss: float
    entropy: float
    total: float
    ratio: np.ndarray
    clip_fraction: float
    approx_kl: float
    grads: list[np.ndarray]


def ppo_loss(
    model: ActorCritic,
    obs: np.ndarray,
    actions: np.ndarray,
    old_logp: np.ndarray,
    advantages: np.ndarray,
    returns: np.ndarray,
    config: TrainerConfig,
) -> MinibatchLoss:
    """total = c1 * MSE - c2 * H - L_clip, with gradients for ``model.params``."""
    m = len(obs)
    eps = config.clip_eps
    raw = model.actor.forward(obs, keep=True)
    logp, dlogp_draw = model.head.log_prob_grad(raw, actions)
    ent, dent_draw = model.head.entropy_grad(raw)
    v = model.critic.forward(obs, keep=True)[:, 0]

    ratio = np.exp(logp - old_logp)
    s1 = ratio * advantages
    s2 = np.clip(ratio, 1.0 - eps, 1.0 + eps) * advantages
    clip_obj = float(np.mean(np.minimum(s1, s2)))
    value_loss = float(np.mean((v - returns) ** 2))
    entropy = float(np.mean(ent))
    total = config.vf_coef * value_loss - config.ent_coef * entropy - clip_obj
    if not np.isfinite(total):
        raise FloatingPointError(
            f"non-finite PPO loss: clip={clip_obj} value={value_loss} entropy={entropy} "
            f"max|logp-old|={np.max(np.abs(logp - old_logp))}"
        )

    g_logp = -np.where(s1 <= s2, s1, 0.0) / m
    g_raw = g_logp[:, None] * dlogp_draw - (config.ent_coef / m) * dent_draw
    g_v = (config.vf_coef * 2.0 / m) * (v - returns)
    actor_grads, _ = model.actor.backward(g_raw)
    critic_grads, _ = model.critic.backward(g_v[:, None])

    log_ratio = logp - old_logp
    return MinibatchLoss(
        policy_loss=-clip_obj,
        value_loss=value_loss,
        entropy=entropy,
        total=total,
        ratio=ratio,
        clip_fraction=float(np.mean(np.abs(ratio - 1.0) > eps)),
        approx_kl=float(np.mean(np.expm1(log_ratio) - log_ratio)),
        grads=actor_grads + critic_grads,
    )


def ppo_update(
    buffer: RolloutBuffer,
    model: ActorCritic,
    adam: Adam,
    config: TrainerConfig,
    rng: np.random.Generator,
) -> LossReport:
    n = len(buffer)
    size = n // config.minibatches
    adv = buffer.advantages
    if config.normalize_advantages and n > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    sums = np.zeros(6)
    count = 0
    first: MinibatchLoss | None = None
    norm = 0.0
    for _ in range(config.update_epochs):
        perm = rng.permutation(n)
        for k in range(config.minibatches):
            idx = perm[k * size : (k + 1) * size]
            res = ppo_loss(
                model, buffer.obs[idx], buffer.actions[idx], buffer.logp[idx], adv[idx], buffer.returns[idx], config
            )
            if first is None:
                first = res
            grads, norm = clip_global_norm(res.grads, config.grad_clip)
            adam.step(grads)
            sums += [res.policy_loss, res.value_loss, res.entropy, res.total, res.clip_fraction, res.approx_kl]
            count += 1
    mean = sums / max(count, 1)
    assert first is not None
    return LossReport(*(float(x) for x in mean), first.clip_fraction, first.approx_kl, float(norm))


# -- rollouts -------------------------------------------------------------------------------


@dataclass
class RolloutStats:
    episodes: int = 0
    successes: int = 0
    reward_sum: float = 0.0
    steps: int = 0

    @property
    def success_rate(self) -> float:
        return self.successes / self.episodes if self.episodes else float("nan")


class VectorEnv:
    """``n`` environments stepped in index order; each owns a seeded stream."""

    def __init__(self, factory: Callable[[], GeneratorEnv], n: int, seed: int):
        self.envs = [factory() for _ in range(n)]
        self.rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]
        self.obs = np.stack([env.reset(rng) for env, rng in zip(self.envs, self.rngs)])

    def step(self, actions: np.ndarray, stats: RolloutStats) -> tuple[np.ndarray, np.ndarray]:
        rewards = np.zeros(len(self.envs))
        dones = np.zeros(len(self.envs))
        for i, (env, rng) in enumerate(zip(self.envs, self.rngs)):
            res = env.step(actions[i])
            rewards[i] = res.reward
            stats.reward_sum += res.reward
            stats.steps += 1
            if res.flags.episode_done:
                dones[i] = 1.0
                stats.episodes += 1
                stats.successes += int(res.flags.episode_success)
                self.obs[i] = env.reset(rng)
            else:
                self.obs[i] = res.observation
        return rewards, dones


def collect_rollout(
    venv: VectorEnv, model: ActorCritic, config: TrainerConfig, rng: np.random.Generator
) -> tuple[RolloutBuffer, RolloutStats]:
    t_len = config.batch // len(venv.envs)
    e = len(venv.envs)
    dim = venv.obs.shape[1]
    obs = np.zeros((t_len, e, dim))
    actions = np.zeros((t_len, e, 4))
    logp = np.zeros((t_len, e))
    values = np.zeros((t_len, e))
    rewards = np.zeros((t_len, e))
    dones = np.zeros((t_len, e))
    stats = RolloutStats()
    for t in range(t_len):
        obs[t] = venv.obs
        actions[t], logp[t], values[t] = model.act(venv.obs, rng)
        r, d = venv.step(actions[t], stats)
        rewards[t] = r * config.reward_scale
        dones[t] = d
    adv, ret = compute_gae(rewards, values, dones, model.value(venv.obs), config.gamma, config.gae_lambda)
    # time-major flattening keeps environment order deterministic
    buf = RolloutBuffer(
        obs.reshape(-1, dim),
        actions.reshape(-1, 4),
        logp.ravel(),
        rewards.ravel(),
        values.ravel(),
        dones.ravel(),
        adv.ravel(),
        ret.ravel(),
    )
    return buf, stats


CURVE_FIELDS = [
    "step",
    "success_rate",
    "episodes",
    "mean_reward",
    "policy_loss",
    "value_loss",
    "entropy",
    "total_loss",
    "clip_fraction",
    "kl",
    "seconds",
]


@dataclass
class TrainResult:
    model: ActorCritic
    adam: Adam
    curve: list[dict[str, float]]


def train(
    env_factory: Callable[[], GeneratorEnv],
    config: TrainerConfig,
    seed: int = 0,
    out_dir: str | Path | None = None,
    log: Callable[[dict[str, float]], None] | None = None,
    meta: dict | None = None,
) -> TrainResult:
    """Alternate rollouts and updates for ``total_steps`` attempts (env decisions)."""
    seeds = np.random.SeedSequence(seed).spawn(3)
    venv = VectorEnv(env_factory, config.n_envs, int(seeds[0].generate_state(1)[0]))
    model = ActorCritic(
        venv.obs.shape[1],
        config.head,
        hidden=config.hidden,
        hidden_layers=config.hidden_layers,
        seed=int(seeds[1].generate_state(1)[0]),
    )
    adam = Adam(model.params, lr=config.lr)
    rng = np.random.default_rng(seeds[2])
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    curve: list[dict[str, float]] = []
    n_updates = config.total_steps // config.batch
    start = time.perf_counter()
    meta = {**(meta or {}), "trainer": asdict(config), "seed": seed}
    for u in range(1, n_updates + 1):
        buf, stats = collect_rollout(venv, model, config, rng)
        rep = ppo_update(buf, model, adam, config, rng)
        row = {
            "step": u * config.batch,
            "success_rate": stats.success_rate,
            "episodes": stats.episodes,
            "mean_reward": stats.reward_sum / max(stats.steps, 1),
            "policy_loss": rep.policy_loss,
            "value_loss": rep.value_loss,
            "entropy": rep.entropy,
            "total_loss": rep.total_loss,
            "clip_fraction": rep.clip_fraction,
            "kl": rep.approx_kl,
            "seconds": time.perf_counter() - start,
        }
        curve.append(row)
        if log is not None:
            log(row)
        if out is not None and config.checkpoint_every and u % config.checkpoint_every == 0:
            save_checkpoint(out / f"policy_{u * config.batch:08d}.ckpt", model, adam, {**meta, "step": u * config.batch})
    if out is not None:
        save_checkpoint(out / "policy.ckpt", model, adam, {**meta, "step": n_updates * config.batch})
        write_curve(out / "curve.csv", curve)
    return TrainResult(model, adam, curve)


def write_curve(path: str | Path, curve: list[dict[str, float]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CURVE_FIELDS, extrasaction="ignore")
        w.writeheader()
        w.writerows(curve)


__all__ = [
    "LossReport",
    "RolloutBuffer",
    "TrainResult",
    "TrainerConfig",
    "VectorEnv",
    "collect_rollout",
    "compute_gae",
    "ppo_loss",
    "ppo_update",
    "train",
    "write_curve",
]
