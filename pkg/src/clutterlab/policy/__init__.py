"""Actor-critic networks, bounded action heads and their numerics."""

from clutterlab.policy.actor_critic import (
    ActorCritic,
    checkpoint_bytes,
    checkpoint_from_bytes,
    load_checkpoint,
    save_checkpoint,
)
from clutterlab.policy.distributions import (
    BetaHead,
    TruncNormalHead,
    beta_entropy,
    beta_log_prob,
    make_head,
    sample_beta,
    trunc_normal_entropy,
    trunc_normal_log_prob,
    trunc_normal_sample,
)
from clutterlab.policy.mlp import Mlp
from clutterlab.policy.optim import Adam, adam_step, clip_global_norm, global_norm

__all__ = [
    "ActorCritic",
    "Adam",
    "BetaHead",
    "Mlp",
    "TruncNormalHead",
    "adam_step",
    "beta_entropy",
    "beta_log_prob",
    "checkpoint_bytes",
    "checkpoint_from_bytes",
    "clip_global_norm",
    "global_norm",
    "load_checkpoint",
    "make_head",
    "sample_beta",
    "save_checkpoint",
    "trunc_normal_entropy",
    "trunc_normal_log_prob",
    "trunc_normal_sample",
]
