"""Separate actor and critic MLPs sharing an architecture, plus checkpoint I/O."""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

from clutterlab.policy.distributions import make_head
from clutterlab.policy.mlp import Mlp
from clutterlab.policy.optim import Adam

HIDDEN = 256
HIDDEN_LAYERS = 4
CHECKPOINT_MAGIC = b"CLTRPOL\x00"
CHECKPOINT_VERSION = 1


class ActorCritic:
    def __init__(
        self,
        obs_dim: int,
        head: str = "beta",
        hidden: int = HIDDEN,
        hidden_layers: int = HIDDEN_LAYERS,
        seed: int = 0,
    ):
        self.obs_dim = obs_dim
        self.head = make_head(head)
        rng = np.random.default_rng(seed)
        trunk = [obs_dim] + [hidden] * hidden_layers
        self.actor = Mlp(trunk + [self.head.n_raw], rng, output_gain=0.01)
        self.critic = Mlp(trunk + [1], rng, output_gain=1.0)

    @property
    def params(self) -> list[np.ndarray]:
        return self.actor.params + self.critic.params

    def raw(self, obs: np.ndarray, keep: bool = False) -> np.ndarray:
        return self.actor.forward(np.atleast_2d(obs), keep=keep)

    def value(self, obs: np.ndarray, keep: bool = False) -> np.ndarray:
        return self.critic.forward(np.atleast_2d(obs), keep=keep)[:, 0]

    def act(
        self, obs: np.ndarray, rng: np.random.Generator, deterministic: bool = False
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Actions ``(B, 4)``, their log-probs and value estimates."""
        raw = self.raw(obs)
        actions = self.head.mode(raw) if deterministic else self.head.sample(raw, rng)
        return actions, self.head.log_prob(raw, actions), self.value(obs)

    def copy(self) -> "ActorCritic":
        out = ActorCritic.__new__(ActorCritic)
        out.obs_dim = self.obs_dim
        out.head = make_head(self.head.name)
        out.actor = Mlp.__new__(Mlp)
        out.critic = Mlp.__new__(Mlp)
        for src, dst in ((self.actor, out.actor), (self.critic, out.critic)):
            dst.sizes = list(src.sizes)
            dst.params = [p.copy() for p in src.params]
            dst._cache = None
        return out


def _array_table(model: ActorCritic, adam: Adam | None) -> list[tuple[str, np.ndarray]]:
    out = [(f"actor.{i}", p) for i, p in enumerate(model.actor.params)]
    out += [(f"critic.{i}", p) for i, p in enumerate(model.critic.params)]
    if adam is not None:
        out += [(f"adam.m.{i}", m) for i, m in enumerate(adam.m)]
        out += [(f"adam.v.{i}", v) for i, v in enumerate(adam.v)]
    return out


def checkpoint_bytes(model: ActorCritic, adam: Adam | None = None, meta: dict[str, Any] | None = None) -> bytes:
    arrays = _array_table(model, adam)
    header = {
        "head": model.head.name,
        "actor_sizes": model.actor.sizes,
        "critic_sizes": model.critic.sizes,
        "adam": None
        if adam is None
        else {"t": adam.t, "lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps},
        "meta": meta or {},
        "arrays": [[name, list(a.shape)] for name, a in arrays],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(blob)), blob]
    parts += [np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays]
    return b"".join(parts)


def save_checkpoint(path: str | Path, model: ActorCritic, adam: Adam | None = None, meta: dict | None = None) -> None:
    Path(path).write_bytes(checkpoint_bytes(model, adam, meta))


def checkpoint_from_bytes(data: bytes) -> tuple[ActorCritic, Adam | None, dict[str, Any]]:
    if not data.startswith(CHECKPOINT_MAGIC):
        raise ValueError("not a policy checkpoint (bad magic)")
    off = len(CHECKPOINT_MAGIC)
    version, hlen = struct.unpack_from("<II", data, off)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off += 8
    header = json.loads(data[off : off + hlen])
    off += hlen
    arrays: dict[str, np.ndarray] = {}
    for name, shape in header["arrays"]:
        n = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(shape).astype(float)
        off += 8 * n
    if off != len(data):
        raise ValueError("checkpoint has trailing or missing bytes")

    a_sizes, c_sizes = header["actor_sizes"], header["critic_sizes"]
    model = ActorCritic(a_sizes[0], header["head"], hidden=a_sizes[1], hidden_layers=len(a_sizes) - 2)
    if model.actor.sizes != a_sizes or model.critic.sizes != c_sizes:
        raise ValueError("checkpoint layer sizes are not an actor-critic layout")
    model.actor.params = [arrays[f"actor.{i}"] for i in range(len(model.actor.params))]
    model.critic.params = [arrays[f"critic.{i}"] for i in range(len(model.critic.params))]
    adam = None
    if header["adam"] is not None:
        h = header["adam"]
        adam = Adam(model.params, h["lr"], h["beta1"], h["beta2"], h["eps"])
        adam.t = h["t"]
        adam.m = [arrays[f"adam.m.{i}"] for i in range(len(adam.m))]
        adam.v = [arrays[f"adam.v.{i}"] for i in range(len(adam.v))]
    return model, adam, header["meta"]


def load_checkpoint(path: str | Path) -> tuple[ActorCritic, Adam | None, dict[str, Any]]:
    return checkpoint_from_bytes(Path(path).read_bytes())
