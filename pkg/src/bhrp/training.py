"""PPO training loop and deterministic policy evaluation on a :class:`PortfolioEnv`."""
from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field

import numpy as np

from .policy import (
    PolicyParams,
    PPOConfig,
    PPOOptimizer,
    RolloutBatch,
    gae_advantages,
    ppo_update,
    sample_action,
)
from .rlenv import PortfolioEnv

logger = logging.getLogger(__name__)


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named purpose (``"init"``, ``"train"``, ``"eval"``...)."""
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


@dataclass
class TrainingLog:
    mean_reward: list[float] = field(default_factory=list)
    stats: list[dict] = field(default_factory=list)


def collect_rollout(env: PortfolioEnv, params: PolicyParams, cfg: PPOConfig,
                    rng: np.random.Generator, state: np.ndarray | None):
    """Run ``cfg.rollout_length`` steps, resetting the env whenever an episode ends.

    Returns the batch, the per-step rewards and the state to continue from.
    """
    T = cfg.rollout_length
    states = np.empty((T, env.state_dim))
    logits = np.empty((T, params.log_std.size))
    logp = np.empty(T)
    rewards = np.empty(T)
    dones = np.zeros(T)
    if state is None:
        state = env.reset()
    for t in range(T):
        act = sample_action(params, state, rng)
        res = env.step(act.weights)
        states[t], logits[t], logp[t] = state, act.logits, act.log_prob
        rewards[t] = res.reward.total
        if res.done:
            dones[t] = 1.0
            state = env.reset()
        else:
            state = res.state
    values = params.value(np.vstack([states, state[None, :]]))
    adv, targets = gae_advantages(rewards, values, cfg.discount, cfg.gae_lambda, dones)
    return RolloutBatch(states, logits, logp, adv, targets), rewards, state


def train_ppo(env: PortfolioEnv, cfg: PPOConfig, iterations: int,
              params: PolicyParams | None = None, meta: dict | None = None):
    """Train an actor-critic from scratch (or continue ``params``) for ``iterations`` PPO rounds.

    All randomness comes from ``cfg.seed`` through named substreams, so two
    runs with the same inputs give identical parameters.
    """
    if params is None:
        params = PolicyParams.init(env.state_dim, env.part, cfg.hidden, cfg.init_log_std,
                                   substream(cfg.seed, "init"), meta)
    rng = substream(cfg.seed, "train")
    opt = PPOOptimizer(cfg)
    log = TrainingLog()
    state = None
    for k in range(iterations):
        batch, rewards, state = collect_rollout(env, params, cfg, rng, state)
        params, stats = ppo_update(params, batch, cfg, opt, rng)
        log.mean_reward.append(float(rewards.mean()))
        log.stats.append(stats)
        if stats.get("aborted"):
            logger.warning("PPO update %d aborted on a non-finite loss", k)
    return params, log


def evaluate_policy(env: PortfolioEnv, params: PolicyParams, start: int | None = None):
    """Run the mean-logit policy through one episode.

    Returns ``(decision_rows, weights, rewards)`` with weights after masking.
    """
    state = env.reset(start)
    rows, weights, rewards = [], [], []
    while True:
        t = env.t
        act = sample_action(params, state, deterministic=True)
        res = env.step(act.weights)
        rows.append(t)
        weights.append(res.weights)
        rewards.append(res.reward)
        if res.done:
            break
        state = res.state
    return np.array(rows), np.vstack(weights), rewards
