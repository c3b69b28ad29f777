"""Portfolio MDP: state vectors, the penalized reward and a stepping environment."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bayes import PosteriorState, PriorHyperparams, posterior_at
from .core import DomainError, HierWeights, ReturnsPanel, SectorPartition, StructuralError
from .riskparity import rp_penalties


@dataclass(frozen=True)
class RewardConfig:
    cost_rate: float = 0.0005
    risk_weight: float = 1.0
    split: float = 0.5

    def __post_init__(self) -> None:
        if self.cost_rate < 0 or self.risk_weight < 0:
            raise ValueError("cost_rate and risk_weight must be non-negative")
        if not 0 <= self.split <= 1:
            raise ValueError("split must lie in [0, 1]")


@dataclass(frozen=True)
class RewardBreakdown:
    total: float
    gross: float
    cost: float
    penalty: float
    v_within: float
    v_across: float


def reward(w, prev_w, realized, sigma, part: SectorPartition,
           cfg: RewardConfig = RewardConfig()) -> RewardBreakdown:
    """One-period reward ``w'R - c |w - w_prev|_1 - lambda * dispersion``.

    ``realized`` may hold NaN where ``w`` is zero (masked assets).
    """
    w = np.asarray(w, dtype=float)
    prev_w = np.asarray(prev_w, dtype=float)
    R = np.asarray(realized, dtype=float)
    if not (w.shape == prev_w.shape == R.shape == (part.n_assets,)):
        raise StructuralError("weights, previous weights and returns must all have length N")
    R = np.where(w == 0, 0.0, R)
    gross = float(w @ R)
    cost = cfg.cost_rate * float(np.abs(w - prev_w).sum())
    vw, va = rp_penalties(w, sigma, part)
    penalty = cfg.risk_weight * (cfg.split * vw + (1.0 - cfg.split) * va)
    return RewardBreakdown(gross - cost - penalty, gross, cost, penalty, vw, va)


@dataclass
class MarketState:
    """Lagged returns (k x N, oldest first), posterior means, posterior variances, previous weights."""

    lagged_returns: np.ndarray
    mu_hat: np.ndarray
    sigma_diag: np.ndarray
    prev_weights: np.ndarray

    def flatten(self) -> np.ndarray:
        return np.concatenate([
            self.lagged_returns.ravel(), self.mu_hat, self.sigma_diag, self.prev_weights,
        ])

    @classmethod
    def unflatten(cls, vec, k: int, n: int) -> "MarketState":
        vec = np.asarray(vec, dtype=float)
        if vec.size != state_dim(k, n):
            raise StructuralError(f"state vector of size {vec.size}, expected {state_dim(k, n)}")
        lags = vec[:k * n].reshape(k, n)
        rest = vec[k * n:]
        return cls(lags, rest[:n], rest[n:2 * n], rest[2 * n:])


def state_dim(k: int, n: int) -> int:
    return k * n + 3 * n


def build_state(panel: ReturnsPanel, t: int, posterior: PosteriorState, prev_w, k: int = 3) -> MarketState:
    """State at decision row ``t``: returns of rows ``t-k+1..t`` plus posterior summaries.

    Invalid return cells are zero-filled.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    if t < k - 1 or t >= panel.n_periods:
        raise DomainError(f"row {t} does not have {k} lags available")
    prev_w = np.asarray(prev_w, dtype=float)
    lags = panel.filled()[t - k + 1:t + 1] if k else np.zeros((0, panel.n_assets))
    return MarketState(
        lags.copy(), posterior.mu_hat.copy(), np.diag(posterior.sigma.values).copy(), prev_w.copy(),
    )


def mask_weights(w, keep) -> np.ndarray:
    """Zero out assets where ``keep`` is false and renormalize the rest."""
    w = np.where(keep, np.asarray(w, dtype=float), 0.0)
    total = w.sum()
    if total <= 0:
        raise DomainError("no weight left after masking")
    return w / total


@dataclass
class StepResult:
    state: np.ndarray | None
    reward: RewardBreakdown | None
    done: bool
    weights: np.ndarray | None = None


class PortfolioEnv:
    """Monthly rebalancing environment over rows ``start..stop-1`` of a panel.

    At decision row ``t`` the agent sees data up to ``t``, picks weights held
    over ``(t, t+1]`` and is paid :func:`reward` with the realized row ``t+1``
    and the posterior covariance at ``t``. Previous weights for the cost term
    are the previous targets. Assets that are inactive in the posterior, have
    no return at ``t+1`` or fall outside ``universe[t]`` are masked and the
    remaining weights renormalized.
    """

    def __init__(self, panel: ReturnsPanel, part: SectorPartition, prior: PriorHyperparams,
                 reward_cfg: RewardConfig = RewardConfig(), lags: int = 3,
                 start: int | None = None, stop: int | None = None,
                 universe: np.ndarray | None = None, spectral_bound: float = 10.0):
        if part.n_assets != panel.n_assets:
            raise StructuralError("partition does not match panel")
        self.panel, self.part, self.prior = panel, part, prior
        self.reward_cfg, self.lags = reward_cfg, lags
        self.spectral_bound = spectral_bound
        first = max(lags - 1, 1)
        self.start = first if start is None else start
        self.stop = panel.n_periods if stop is None else stop
        if self.start < first or self.stop > panel.n_periods or self.stop - self.start < 2:
            raise DomainError("episode range leaves no decision with a realized return")
        self.universe = universe
        self._posteriors: dict[int, PosteriorState] = {}
        self.t = self.start
        self.prev_w = np.full(panel.n_assets, 1.0 / panel.n_assets)
        self.done = False

    @property
    def state_dim(self) -> int:
        return state_dim(self.lags, self.panel.n_assets)

    def posterior(self, t: int) -> PosteriorState:
        if t not in self._posteriors:
            self._posteriors[t] = posterior_at(self.panel, t, self.part, self.prior, self.spectral_bound)
        return self._posteriors[t]

    def tradable(self, t: int) -> np.ndarray:
        keep = self.posterior(t).active & self.panel.valid[t + 1]
        if self.universe is not None:
            keep &= self.universe[t]
        return keep

    def observe(self) -> np.ndarray:
        return build_state(self.panel, self.t, self.posterior(self.t), self.prev_w, self.lags).flatten()

    def reset(self, start: int | None = None) -> np.ndarray:
        self.t = self.start if start is None else start
        if not self.start <= self.t < self.stop - 1:
            raise DomainError(f"cannot start an episode at row {self.t}")
        self.prev_w = np.full(self.panel.n_assets, 1.0 / self.panel.n_assets)
        self.done = False
        return self.observe()

    def step(self, action) -> StepResult:
        if self.done or self.t + 1 >= self.stop:
            self.done = True
            return StepResult(None, None, True)
        w = action.asset_w if isinstance(action, HierWeights) else np.asarray(action, dtype=float)
        if w.shape != (self.panel.n_assets,):
            raise StructuralError("action has the wrong number of assets")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise DomainError("action is not on the simplex")
        keep = self.tradable(self.t)
        w = mask_weights(w, keep)
        sigma = self.posterior(self.t).sigma.values
        realized = self.panel.returns[self.t + 1]
        if keep.all():
            rb = reward(w, self.prev_w, realized, sigma, self.part, self.reward_cfg)
        else:
            sub, _ = self.part.subset(keep)
            base = reward(w[keep], self.prev_w[keep], realized[keep],
                          sigma[np.ix_(keep, keep)], sub, self.reward_cfg)
            # cost also covers liquidating positions in masked assets
            cost = self.reward_cfg.cost_rate * float(np.abs(w - self.prev_w).sum())
            rb = RewardBreakdown(base.gross - cost - base.penalty, base.gross, cost,
                                 base.penalty, base.v_within, base.v_across)
        self.prev_w = w
        self.t += 1
        self.done = self.t + 1 >= self.stop
        return StepResult(None if self.done else self.observe(), rb, self.done, w)
