"""Universe screening and the monthly rebalance engines.

Every engine follows the same accounting: the weights chosen at decision row
``t`` earn row ``t+1``'s returns, and the one-way cost ``c * |w_t - w_{t-1}|_1``
is charged against that period. ``w_{-1}`` is equal weight over all assets.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import pandas as pd

from .analytics import MetricsBundle
from .bayes import PosteriorState, PriorHyperparams, posterior_at
from .core import DomainError, ReturnsPanel, SectorPartition
from .policy import PolicyParams, sample_action
from .riskparity import SolverConfig, SolverError, bhrp_fixed_point
from .rlenv import PortfolioEnv, RewardConfig, mask_weights

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class UniverseScreen:
    adv_threshold: float = 10_000_000.0
    price_threshold: float = 3.0
    adv_window: int = 20
    top_k: int | None = None

    def __post_init__(self) -> None:
        if self.adv_threshold <= 0 or self.price_threshold <= 0 or self.adv_window < 1:
            raise ValueError("screen thresholds must be positive")
        if self.top_k is not None and self.top_k < 1:
            raise ValueError("top_k must be positive")


def quarter_ends(dates) -> list[pd.Timestamp]:
    """Last date present in the data for each March, June, September and December."""
    idx = pd.DatetimeIndex(dates)
    s = pd.Series(idx, index=idx)
    last = s.groupby([idx.year, idx.month]).max()
    return [d for d in last if d.month in (3, 6, 9, 12)]


def screen_universe(close: pd.DataFrame, volume: pd.DataFrame, as_of, screen: UniverseScreen,
                    sectors: Mapping[str, str] | None = None) -> list[str]:
    """Tickers passing the liquidity and price screens using data up to ``as_of``.

    ADV is the mean of ``close * volume`` over the last ``adv_window`` trading
    days; fewer valid days than that excludes the ticker. With ``top_k`` and
    ``sectors``, each sector keeps its ``top_k`` highest-ADV names.
    """
    as_of = pd.Timestamp(as_of)
    c = close.loc[:as_of].tail(screen.adv_window)
    v = volume.loc[:as_of].tail(screen.adv_window)
    if len(c) < screen.adv_window:
        return []
    dollar = c * v
    enough = dollar.notna().sum() >= screen.adv_window
    adv = dollar.mean()
    last_close = close.loc[:as_of].iloc[-1] if as_of in close.index else pd.Series(np.nan, close.columns)
    ok = enough & (adv >= screen.adv_threshold) & (last_close >= screen.price_threshold)
    passed = [t for t in close.columns if bool(ok[t])]
    if screen.top_k is not None and sectors is not None:
        by_sector: dict[str, list[str]] = {}
        for t in passed:
            by_sector.setdefault(sectors[t], []).append(t)
        keep = set()
        for names in by_sector.values():
            ranked = sorted(names, key=lambda t: (-adv[t], t))
            keep.update(ranked[:screen.top_k])
        passed = [t for t in passed if t in keep]
    return passed


def universe_schedule(close: pd.DataFrame, volume: pd.DataFrame, decision_dates,
                      screen: UniverseScreen, sectors: Mapping[str, str] | None = None) -> pd.DataFrame:
    """Boolean membership (decision date x ticker), frozen between quarter-ends.

    A decision date uses the screen from the latest quarter-end on or before
    it; dates before the first quarter-end are screened on the date itself.
    """
    qes = quarter_ends(close.index)
    cache: dict[pd.Timestamp, list[str]] = {}
    out = pd.DataFrame(False, index=pd.DatetimeIndex(decision_dates), columns=close.columns)
    for d in out.index:
        prior_qes = [q for q in qes if q <= d]
        ref = prior_qes[-1] if prior_qes else d
        if ref not in cache:
            cache[ref] = screen_universe(close, volume, ref, screen, sectors)
        out.loc[d, cache[ref]] = True
    return out


@dataclass
class BacktestReport:
    """Immutable record of one strategy run.

    ``returns``, ``costs`` and ``wealth`` are indexed by period end;
    ``weights`` by decision date.
    """

    strategy: str
    returns: pd.Series
    weights: pd.DataFrame
    wealth: pd.Series
    costs: pd.Series
    events: list[dict] = field(default_factory=list)
    partial_final: bool = False
    metrics: MetricsBundle | None = None


def _account(strategy, panel: ReturnsPanel, rows, weights: np.ndarray, cost_rate: float,
             events, partial_final: bool) -> BacktestReport:
    rows = np.asarray(rows)
    R = panel.filled()[rows + 1]
    prev = np.vstack([np.full(panel.n_assets, 1.0 / panel.n_assets), weights[:-1]])
    costs = cost_rate * np.abs(weights - prev).sum(axis=1)
    rets = np.einsum("ij,ij->i", weights, R) - costs
    period_end = pd.DatetimeIndex(panel.dates[rows + 1])
    decision = pd.DatetimeIndex(panel.dates[rows])
    returns = pd.Series(rets, index=period_end, name=strategy)
    return BacktestReport(
        strategy,
        returns,
        pd.DataFrame(weights, index=decision, columns=list(panel.tickers)),
        pd.Series(np.cumprod(1.0 + rets), index=period_end, name=strategy),
        pd.Series(costs, index=period_end, name=strategy),
        list(events),
        partial_final,
    )


def run_benchmark(etf_returns: ReturnsPanel, rows=None, partial_final: bool = False) -> BacktestReport:
    """Equal-weight, cost-free monthly rebalance over the ETF columns.

    ETFs without a return in a period are left out of that period.
    """
    rows = np.arange(etf_returns.n_periods - 1) if rows is None else np.asarray(rows)
    events = []
    W = np.zeros((rows.size, etf_returns.n_assets))
    for k, t in enumerate(rows):
        keep = etf_returns.valid[t + 1]
        if not keep.any():
            raise DomainError(f"no ETF has a return for {etf_returns.dates[t + 1]}")
        if not keep.all():
            missing = [etf_returns.tickers[i] for i in np.flatnonzero(~keep)]
            events.append({"date": str(etf_returns.dates[t + 1]), "event": "masked", "assets": missing})
        W[k] = keep / keep.sum()
    return _account("benchmark", etf_returns, rows, W, 0.0, events, partial_final)


def tradable_mask(panel: ReturnsPanel, t: int, posterior: PosteriorState,
                  universe: np.ndarray | None) -> np.ndarray:
    keep = posterior.active & panel.valid[t + 1]
    if universe is not None:
        keep = keep & universe[t]
    return keep


def bhrp_decision(panel: ReturnsPanel, t: int, part: SectorPartition, prior: PriorHyperparams,
                  cfg: SolverConfig, eligible: np.ndarray | None = None, spectral_bound: float = 10.0):
    """Two-level risk-parity weights at row ``t`` using only rows ``<= t``.

    ``eligible`` restricts the solve to a subset of assets (others get 0).
    Returns ``(weights, solver_result)``.
    """
    post = posterior_at(panel, t, part, prior, spectral_bound)
    keep = post.active if eligible is None else post.active & eligible
    if not keep.any():
        raise DomainError(f"no eligible assets at row {t}")
    sub, _ = part.subset(keep)
    sigma = post.sigma.values[np.ix_(keep, keep)]
    res = bhrp_fixed_point(sigma, sub, cfg)
    w = np.zeros(panel.n_assets)
    w[keep] = res.weights.asset_w
    return w, res


def run_bhrp(panel: ReturnsPanel, part: SectorPartition, prior: PriorHyperparams, rows,
             cost_rate: float = 0.0005, cfg: SolverConfig | None = None,
             universe: np.ndarray | None = None, partial_final: bool = False,
             spectral_bound: float = 10.0) -> BacktestReport:
    """Static two-level risk-parity strategy over decision ``rows``.

    ``universe`` is an optional T x N membership mask. A solver failure or
    non-convergence keeps the previous weights (re-masked) and logs an event.
    """
    cfg = cfg or SolverConfig()
    rows = np.asarray(rows)
    events = []
    W = np.zeros((rows.size, panel.n_assets))
    prev = np.full(panel.n_assets, 1.0 / panel.n_assets)
    for k, t in enumerate(rows):
        post = posterior_at(panel, t, part, prior, spectral_bound)
        keep = tradable_mask(panel, t, post, universe)
        try:
            w, res = bhrp_decision(panel, t, part, prior, cfg, keep, spectral_bound)
            ok = res.converged
        except SolverError as exc:
            ok, w = False, None
            logger.warning("solver error at %s: %s", panel.dates[t], exc)
        if not ok:
            events.append({"date": str(panel.dates[t]), "event": "non_converged"})
            w = prev
        if not keep.all():
            events.append({"date": str(panel.dates[t]), "event": "masked",
                           "assets": [panel.tickers[i] for i in np.flatnonzero(~keep)]})
        W[k] = mask_weights(w, keep)
        prev = W[k]
    return _account("bhrp", panel, rows, W, cost_rate, events, partial_final)


def check_no_overlap(params: PolicyParams, first_decision) -> None:
    """Refuse to evaluate a policy whose training data reach the test window."""
    train_end = params.meta.get("train_end")
    if train_end is None:
        raise DomainError("policy has no recorded training end date")
    if pd.Timestamp(train_end) >= pd.Timestamp(first_decision):
        raise DomainError(
            f"policy trained through {train_end}, which is not before the first test decision "
            f"{pd.Timestamp(first_decision).date()}"
        )


def run_rl_bhrp(panel: ReturnsPanel, part: SectorPartition, prior: PriorHyperparams, rows,
                params: PolicyParams, reward_cfg: RewardConfig = RewardConfig(), lags: int = 3,
                universe: np.ndarray | None = None, partial_final: bool = False,
                spectral_bound: float = 10.0) -> BacktestReport:
    """Evaluate a trained policy with mean logits over consecutive decision ``rows``."""
    rows = np.asarray(rows)
    if rows.size == 0 or np.any(np.diff(rows) != 1):
        raise DomainError("decision rows must be a non-empty consecutive range")
    check_no_overlap(params, panel.dates[rows[0]])
    env = PortfolioEnv(panel, part, prior, reward_cfg, lags, start=int(rows[0]),
                       stop=int(rows[-1]) + 2, universe=universe, spectral_bound=spectral_bound)
    if params.state_dim != env.state_dim:
        raise DomainError(f"policy expects state size {params.state_dim}, env has {env.state_dim}")
    state = env.reset()
    events = []
    W = np.zeros((rows.size, panel.n_assets))
    for k, t in enumerate(rows):
        act = sample_action(params, state, deterministic=True)
        keep = env.tradable(int(t))
        if not keep.all():
            events.append({"date": str(panel.dates[t]), "event": "masked",
                           "assets": [panel.tickers[i] for i in np.flatnonzero(~keep)]})
        res = env.step(act.weights)
        W[k] = res.weights
        state = res.state
    return _account("rl_bhrp", panel, rows, W, reward_cfg.cost_rate, events, partial_final)
