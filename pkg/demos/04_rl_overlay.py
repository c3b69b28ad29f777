"""
Learning a sector tilt with PPO
===============================

Sector 0 earns 2% a month, sector 1 earns nothing. A policy that starts at
equal weight should learn to lean towards sector 0. Takes about ten seconds.
"""
import math

import numpy as np

from bhrp import SectorPartition
from bhrp.bayes import PriorHyperparams
from bhrp.core import ReturnsPanel
from bhrp.policy import PPOConfig
from bhrp.rlenv import PortfolioEnv, RewardConfig
from bhrp.training import evaluate_policy, train_ppo

rng = np.random.default_rng(0)
T = 361
R = np.array([0.02, 0.02, 0.0, 0.0]) + 0.05 * rng.standard_normal((T, 4))
panel = ReturnsPanel(np.arange(T), ("a", "b", "c", "d"), R)
part = SectorPartition(np.array([0, 0, 1, 1]), 2)
reward = RewardConfig(cost_rate=0.0005, risk_weight=0.5, split=0.5)

env = PortfolioEnv(panel, part, PriorHyperparams(), reward, stop=240)
cfg = PPOConfig(seed=0, init_log_std=math.log(0.5))
params, log = train_ppo(env, cfg, 200)

for k in (0, 49, 99, 149, 199):
    print(f"iter {k + 1:3d}  mean reward {log.mean_reward[k]: .5f}")

test = PortfolioEnv(panel, part, PriorHyperparams(), reward, start=240, stop=T)
_, w, r = evaluate_policy(test, params)
print("held-out sector-0 weight", round(w[:, :2].sum(axis=1).mean(), 3))
print("held-out mean reward    ", round(np.mean([b.total for b in r]), 5))
print("held-out mean penalty   ", f"{np.mean([b.penalty for b in r]):.2e}")
