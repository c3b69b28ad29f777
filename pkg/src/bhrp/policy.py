"""Factorized softmax actor-critic and the PPO update.

The actor emits one logit per sector followed by one logit per asset (asset
order). A diagonal Gaussian in logit space supplies exploration; the softmax
map to weights is deterministic post-processing, so log-probabilities are
those of the Gaussian.

Networks are single-hidden-layer tanh perceptrons written in numpy with
explicit backpropagation.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import DomainError, HierWeights, SectorPartition, StructuralError, decompose_weights

LOG_STD_MIN = math.log(1e-3)
LOG_STD_MAX = 0.0
CHECKPOINT_VERSION = 1
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class PPOConfig:
    clip_ratio: float = 0.2
    entropy_coef: float = 0.01
    gae_lambda: float = 0.95
    discount: float = 0.99
    epochs: int = 10
    minibatch_size: int = 32
    learning_rate: float = 3e-4
    critic_learning_rate: float = 1e-3
    rollout_length: int = 128
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    hidden: int = 64
    init_log_std: float = math.log(0.1)
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.clip_ratio < 1:
            raise ValueError("clip_ratio must lie in (0, 1)")
        if not 0 <= self.gae_lambda <= 1 or not 0 <= self.discount <= 1:
            raise ValueError("gae_lambda and discount must lie in [0, 1]")
        for name in ("epochs", "minibatch_size", "rollout_length", "hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate < 0 or self.critic_learning_rate < 0 or self.entropy_coef < 0:
            raise ValueError("learning rates and entropy_coef must be non-negative")


@dataclass
class PolicyParams:
    """Actor, exploration scale and critic parameters plus checkpoint metadata."""

    actor: dict[str, np.ndarray]
    log_std: np.ndarray
    critic: dict[str, np.ndarray]
    sector_of: np.ndarray
    n_sectors: int
    meta: dict = field(default_factory=dict)

    @classmethod
    def init(cls, state_dim: int, part: SectorPartition, hidden: int = 64,
             init_log_std: float = math.log(0.1), rng: np.random.Generator | None = None,
             meta: dict | None = None) -> "PolicyParams":
        """Random hidden layers, zero output layer (so initial logits are all zero)."""
        rng = rng or np.random.default_rng(0)
        out = part.n_sectors + part.n_assets
        scale = 1.0 / math.sqrt(state_dim)
        actor = {
            "w1": rng.normal(0.0, scale, (state_dim, hidden)),
            "b1": np.zeros(hidden),
            "w2": np.zeros((hidden, out)),
            "b2": np.zeros(out),
        }
        critic = {
            "w1": rng.normal(0.0, scale, (state_dim, hidden)),
            "b1": np.zeros(hidden),
            "w2": np.zeros((hidden, 1)),
            "b2": np.zeros(1),
        }
        log_std = np.full(out, float(np.clip(init_log_std, LOG_STD_MIN, LOG_STD_MAX)))
        return cls(actor, log_std, critic, part.sector_of.copy(), part.n_sectors, dict(meta or {}))

    @property
    def state_dim(self) -> int:
        return self.actor["w1"].shape[0]

    @property
    def partition(self) -> SectorPartition:
        return SectorPartition(self.sector_of, self.n_sectors)

    def copy(self) -> "PolicyParams":
        return PolicyParams(
            {k: v.copy() for k, v in self.actor.items()},
            self.log_std.copy(),
            {k: v.copy() for k, v in self.critic.items()},
            self.sector_of.copy(), self.n_sectors, json.loads(json.dumps(self.meta)),
        )

    def mean_logits(self, states: np.ndarray) -> np.ndarray:
        h = np.tanh(states @ self.actor["w1"] + self.actor["b1"])
        return h @ self.actor["w2"] + self.actor["b2"]

    def value(self, states: np.ndarray) -> np.ndarray:
        h = np.tanh(states @ self.critic["w1"] + self.critic["b1"])
        return (h @ self.critic["w2"] + self.critic["b2"])[..., 0]


def _softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max())
    return z / z.sum()


def _split_within(logits_within, part: SectorPartition) -> np.ndarray:
    # accept a length-N vector in asset order or one vector per sector
    if isinstance(logits_within, np.ndarray) and logits_within.ndim == 1:
        phi = np.asarray(logits_within, dtype=float)
        if phi.size != part.n_assets:
            raise StructuralError(f"expected {part.n_assets} within logits, got {phi.size}")
        return phi
    if len(logits_within) != part.n_sectors:
        raise StructuralError("need one within-logit vector per sector")
    phi = np.empty(part.n_assets)
    for g, (m, v) in enumerate(zip(part.members, logits_within)):
        v = np.asarray(v, dtype=float)
        if v.size != m.size:
            raise StructuralError(f"sector {g}: {v.size} logits for {m.size} members")
        phi[m] = v
    return phi


def policy_forward(logits_sector, logits_within, part: SectorPartition) -> HierWeights:
    """Map sector and within-sector logits to hierarchical weights."""
    psi = np.asarray(logits_sector, dtype=float)
    if psi.shape != (part.n_sectors,):
        raise StructuralError(f"expected {part.n_sectors} sector logits, got shape {psi.shape}")
    phi = _split_within(logits_within, part)
    if not (np.all(np.isfinite(psi)) and np.all(np.isfinite(phi))):
        raise DomainError("logits must be finite")
    W = _softmax(psi)
    eta = tuple(_softmax(phi[m]) for m in part.members)
    w = np.empty(part.n_assets)
    for g, m in enumerate(part.members):
        w[m] = W[g] * eta[g]
    return HierWeights(W, eta, w)


def logits_from_weights(w, part: SectorPartition) -> tuple[np.ndarray, np.ndarray]:
    """Logits that reproduce interior weights ``w`` exactly (up to shifts)."""
    W, eta = decompose_weights(w, part)
    phi = np.empty(part.n_assets)
    for m, e in zip(part.members, eta):
        phi[m] = np.log(e)
    return np.log(W), phi


def weight_logit_jacobian(weights: HierWeights, part: SectorPartition) -> np.ndarray:
    """Dense N x (G + N) Jacobian of asset weights w.r.t. (sector, within) logits.

    Columns ``0..G-1`` are sector logits, ``G + j`` the within logit of asset
    ``j``. The within block is zero across sectors.
    """
    w = weights.asset_w
    W = weights.sector_w
    N, G = part.n_assets, part.n_sectors
    g_of = part.sector_of
    J = np.zeros((N, G + N))
    J[:, :G] = w[:, None] * ((g_of[:, None] == np.arange(G)[None, :]) - W[None, :])
    eta = np.empty(N)
    for g, m in enumerate(part.members):
        eta[m] = weights.within_w[g]
    same = g_of[:, None] == g_of[None, :]
    J[:, G:] = same * (w[:, None] * (np.eye(N) - eta[None, :]))
    return J


def batch_weights(logits: np.ndarray, part: SectorPartition) -> np.ndarray:
    """Asset weights for a B x (G + N) batch of logits."""
    G = part.n_sectors
    psi = logits[:, :G]
    Wb = np.exp(psi - psi.max(axis=1, keepdims=True))
    Wb /= Wb.sum(axis=1, keepdims=True)
    out = np.empty((logits.shape[0], part.n_assets))
    for g, m in enumerate(part.members):
        phi = logits[:, G + m]
        e = np.exp(phi - phi.max(axis=1, keepdims=True))
        out[:, m] = Wb[:, [g]] * e / e.sum(axis=1, keepdims=True)
    return out


def gaussian_log_prob(x, mean, log_std) -> np.ndarray:
    z = (x - mean) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - _HALF_LOG_2PI, axis=-1)


def gaussian_entropy(log_std) -> float:
    return float(np.sum(log_std + 0.5 + _HALF_LOG_2PI))


@dataclass
class ActionSample:
    logits: np.ndarray
    weights: HierWeights
    log_prob: float
    entropy: float


def sample_action(params: PolicyParams, state, rng: np.random.Generator | None = None,
                  deterministic: bool = False) -> ActionSample:
    """Draw logits from the Gaussian policy and map them to weights.

    ``deterministic=True`` returns the mean logits (no noise, ``rng`` unused).
    """
    state = np.asarray(state, dtype=float)
    mean = params.mean_logits(state[None, :])[0]
    if deterministic:
        logits = mean
    else:
        if rng is None:
            raise ValueError("stochastic sampling needs an rng")
        logits = mean + np.exp(params.log_std) * rng.standard_normal(mean.size)
    part = params.partition
    G = part.n_sectors
    hw = policy_forward(logits[:G], logits[G:], part)
    return ActionSample(
        logits, hw,
        float(gaussian_log_prob(logits, mean, params.log_std)),
        gaussian_entropy(params.log_std),
    )


def gae_advantages(rewards, values, discount: float = 0.99, lam: float = 0.95,
                   dones=None) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimates and value targets.

    ``values`` has one more entry than ``rewards`` (the bootstrap value).
    ``dones[t]`` true means the episode ended after step ``t``.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    T = rewards.size
    if T == 0:
        raise ValueError("empty rollout")
    if values.size != T + 1:
        raise StructuralError("values must have len(rewards) + 1 entries")
    notdone = np.ones(T) if dones is None else 1.0 - np.asarray(dones, dtype=float)
    adv = np.empty(T)
    last = 0.0
    for t in range(T - 1, -1, -1):
        delta = rewards[t] + discount * values[t + 1] * notdone[t] - values[t]
        last = delta + discount * lam * notdone[t] * last
        adv[t] = last
    return adv, adv + values[:-1]


class Adam:
    """Adam over a dict of named arrays."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            m = self.m.setdefault(k, np.zeros_like(g))
            v = self.v.setdefault(k, np.zeros_like(g))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _clip_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        for g in grads.values():
            g *= max_norm / norm
    return norm


def actor_loss_and_grads(params: PolicyParams, states, logits, old_log_prob, adv,
                         clip_ratio: float, entropy_coef: float):
    """Clipped-surrogate loss (to minimize) and its gradients.

    Returns ``(loss, grads, info)`` where grads cover the actor layers and
    ``log_std``.
    """
    a = params.actor
    pre = states @ a["w1"] + a["b1"]
    h = np.tanh(pre)
    mean = h @ a["w2"] + a["b2"]
    log_std = params.log_std
    inv_var = np.exp(-2.0 * log_std)
    diff = logits - mean
    logp = gaussian_log_prob(logits, mean, log_std)
    ratio = np.exp(logp - old_log_prob)
    clipped = np.clip(ratio, 1.0 - clip_ratio, 1.0 + clip_ratio)
    s1, s2 = ratio * adv, clipped * adv
    B = states.shape[0]
    entropy = gaussian_entropy(log_std)
    loss = -np.mean(np.minimum(s1, s2)) - entropy_coef * entropy

    # d loss / d logp; zero where the clipped branch is the (constant) minimum
    dlogp = -(adv * ratio * (s1 <= s2)) / B
    dmean = dlogp[:, None] * diff * inv_var
    dlog_std = (dlogp[:, None] * (diff * diff * inv_var - 1.0)).sum(axis=0) - entropy_coef
    grads = {
        "w2": h.T @ dmean,
        "b2": dmean.sum(axis=0),
    }
    dh = dmean @ a["w2"].T * (1.0 - h * h)
    grads["w1"] = states.T @ dh
    grads["b1"] = dh.sum(axis=0)
    grads["log_std"] = dlog_std
    info = {
        "clip_frac": float(np.mean(np.abs(ratio - 1.0) > clip_ratio)),
        "kl": float(np.mean(old_log_prob - logp)),
        "entropy": entropy,
    }
    return float(loss), grads, info


def critic_loss_and_grads(params: PolicyParams, states, targets, value_coef: float = 0.5):
    c = params.critic
    h = np.tanh(states @ c["w1"] + c["b1"])
    v = (h @ c["w2"] + c["b2"])[:, 0]
    err = v - targets
    B = states.shape[0]
    loss = value_coef * 0.5 * float(np.mean(err * err))
    dv = (value_coef * err / B)[:, None]
    grads = {"w2": h.T @ dv, "b2": dv.sum(axis=0)}
    dh = dv @ c["w2"].T * (1.0 - h * h)
    grads["w1"] = states.T @ dh
    grads["b1"] = dh.sum(axis=0)
    return loss, grads


@dataclass
class RolloutBatch:
    states: np.ndarray
    logits: np.ndarray
    log_probs: np.ndarray
    advantages: np.ndarray
    value_targets: np.ndarray

    def __len__(self) -> int:
        return self.states.shape[0]


class PPOOptimizer:
    """Adam moments for actor (incl. log_std) and critic, kept across updates."""

    def __init__(self, cfg: PPOConfig):
        self.actor = Adam(cfg.learning_rate)
        self.critic = Adam(cfg.critic_learning_rate)


def ppo_update(params: PolicyParams, batch: RolloutBatch, cfg: PPOConfig,
               optimizer: PPOOptimizer | None = None,
               rng: np.random.Generator | None = None) -> tuple[PolicyParams, dict]:
    """Clipped-surrogate PPO epochs over shuffled minibatches.

    Advantages are normalized over the whole batch first. Returns new
    parameters (the input is not modified) and averaged statistics. If any
    loss turns non-finite the update is abandoned and the input parameters are
    returned with ``stats["aborted"] = True``.
    """
    optimizer = optimizer or PPOOptimizer(cfg)
    rng = rng or np.random.default_rng(cfg.seed)
    new = params.copy()
    adv = batch.advantages
    std = adv.std()
    adv = (adv - adv.mean()) / std if std > 0 else adv - adv.mean()
    n = len(batch)
    mb = min(cfg.minibatch_size, n)
    stats = {"actor_loss": [], "critic_loss": [], "clip_frac": [], "kl": [], "entropy": []}
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, mb):
            idx = order[start:start + mb]
            s = batch.states[idx]
            a_loss, a_grads, info = actor_loss_and_grads(
                new, s, batch.logits[idx], batch.log_probs[idx], adv[idx],
                cfg.clip_ratio, cfg.entropy_coef,
            )
            c_loss, c_grads = critic_loss_and_grads(new, s, batch.value_targets[idx], cfg.value_coef)
            if not (math.isfinite(a_loss) and math.isfinite(c_loss)):
                return params, {"aborted": True, "actor_loss": a_loss, "critic_loss": c_loss}
            _clip_norm(a_grads, cfg.max_grad_norm)
            _clip_norm(c_grads, cfg.max_grad_norm)
            actor_view = dict(new.actor, log_std=new.log_std)
            optimizer.actor.step(actor_view, a_grads)
            np.clip(new.log_std, LOG_STD_MIN, LOG_STD_MAX, out=new.log_std)
            optimizer.critic.step(new.critic, c_grads)
            stats["actor_loss"].append(a_loss)
            stats["critic_loss"].append(c_loss)
            for k in ("clip_frac", "kl", "entropy"):
                stats[k].append(info[k])
    out = {k: float(np.mean(v)) for k, v in stats.items()}
    out["aborted"] = False
    return new, out


def save_checkpoint(params: PolicyParams, path: str | Path, config: PPOConfig | None = None) -> Path:
    """Write parameters and metadata to a ``.npz`` archive.

    Layout: arrays ``actor/<name>``, ``critic/<name>``, ``log_std``,
    ``sector_of`` and a JSON string ``meta`` with ``format_version``,
    ``n_sectors``, ``hidden``, ``state_dim``, the PPO config and any run
    metadata (seed, training dates).
    """
    path = Path(path)
    meta = dict(params.meta)
    meta.update(
        format_version=CHECKPOINT_VERSION,
        n_sectors=params.n_sectors,
        state_dim=params.state_dim,
        hidden=int(params.actor["w1"].shape[1]),
    )
    if config is not None:
        meta["ppo_config"] = asdict(config)
    arrays = {f"actor/{k}": v for k, v in params.actor.items()}
    arrays.update({f"critic/{k}": v for k, v in params.critic.items()})
    arrays["log_std"] = params.log_std
    arrays["sector_of"] = params.sector_of
    arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path: str | Path) -> PolicyParams:
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('format_version')!r}")
        actor = {k.split("/", 1)[1]: data[k].copy() for k in data.files if k.startswith("actor/")}
        critic = {k.split("/", 1)[1]: data[k].copy() for k in data.files if k.startswith("critic/")}
        return PolicyParams(actor, data["log_std"].copy(), critic, data["sector_of"].copy(),
                            int(meta["n_sectors"]), meta)
