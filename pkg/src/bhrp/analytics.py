"""Performance metrics on a monthly grid and weight diagnostics.

Conventions: 12 periods per year, zero risk-free rate, sample standard
deviations (ddof=1), empirical quantiles by linear interpolation.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

PERIODS_PER_YEAR = 12

TABLE_ROWS = (
    ("Periods", "periods"),
    ("Start", "start"),
    ("End", "end"),
    ("Total Cumulative Return", "total_cumulative_return"),
    ("CAGR (Geometric Ann.)", "cagr"),
    ("Annual Return (Mean×12)", "annual_return_mean12"),
    ("Annual Volatility", "annual_vol"),
    ("Sharpe", "sharpe"),
    ("Sortino", "sortino"),
    ("Max Drawdown", "max_drawdown"),
    ("Calmar", "calmar"),
    ("Tracking Error", "tracking_error"),
    ("Information Ratio", "information_ratio"),
    ("Beta", "beta"),
    ("Jensen Alpha", "jensen_alpha"),
    ("VaR 5% (period)", "var_5"),
    ("CVaR 5% (period)", "cvar_5"),
    ("Hit Rate (>0)", "hit_rate"),
)


@dataclass(frozen=True)
class MetricsBundle:
    """One column of the metrics table. ``None`` marks an undefined value."""

    periods: int
    total_cumulative_return: float
    cagr: float
    annual_return_mean12: float
    annual_vol: float
    sharpe: float | None
    sortino: float | None
    max_drawdown: float
    calmar: float | None
    tracking_error: float | None
    information_ratio: float | None
    beta: float | None
    jensen_alpha: float | None
    var_5: float
    cvar_5: float
    hit_rate: float
    start: str | None = None
    end: str | None = None

    def as_dict(self) -> dict:
        return asdict(self)


def cagr_from_total(total_return: float, periods: int) -> float:
    return (1.0 + total_return) ** (PERIODS_PER_YEAR / periods) - 1.0


def sharpe_ratio(annual_return: float, annual_vol: float) -> float | None:
    return annual_return / annual_vol if annual_vol > 0 else None


def calmar_ratio(cagr: float, max_drawdown: float) -> float | None:
    return cagr / abs(max_drawdown) if max_drawdown < 0 else None


def max_drawdown(returns) -> float:
    """Most negative peak-to-trough move of the wealth path (starting at 1)."""
    wealth = np.concatenate([[1.0], np.cumprod(1.0 + np.asarray(returns, dtype=float))])
    peak = np.maximum.accumulate(wealth)
    return float(np.min(wealth / peak - 1.0))


def _std(x: np.ndarray) -> float:
    # exact zero for constant series; np.std can leave rounding residue
    if np.ptp(x) == 0:
        return 0.0
    return float(np.std(x, ddof=1))


def performance_metrics(returns, benchmark=None, start=None, end=None) -> MetricsBundle:
    """Full-period metrics for a series of periodic simple returns.

    Relative metrics (tracking error, information ratio, beta, alpha) need
    ``benchmark`` aligned with ``returns``. Beta and alpha come from the
    least-squares fit of returns on benchmark returns; alpha is annualized by 12.
    """
    r = np.asarray(returns, dtype=float)
    n = r.size
    if n < 2:
        raise ValueError("need at least two periods")
    if not np.all(np.isfinite(r)):
        raise ValueError("returns contain non-finite values")
    tcr = float(np.prod(1.0 + r) - 1.0)
    cagr = cagr_from_total(tcr, n)
    ann_ret = float(np.mean(r)) * PERIODS_PER_YEAR
    ann_vol = _std(r) * math.sqrt(PERIODS_PER_YEAR)
    downside = math.sqrt(PERIODS_PER_YEAR) * math.sqrt(float(np.mean(np.minimum(r, 0.0) ** 2)))
    mdd = max_drawdown(r)
    var5 = float(np.percentile(r, 5))
    # mean of the tail can round a hair above the quantile it sits under
    cvar5 = min(float(np.mean(r[r <= var5])), var5)

    te = ir = beta = alpha = None
    if benchmark is not None:
        b = np.asarray(benchmark, dtype=float)
        if b.shape != r.shape:
            raise ValueError("benchmark is not aligned with returns")
        active = r - b
        te = _std(active) * math.sqrt(PERIODS_PER_YEAR)
        ir = float(np.mean(active)) * PERIODS_PER_YEAR / te if te > 0 else None
        bc = b - b.mean()
        denom = float(bc @ bc)
        if denom > 0:
            beta = float((r - r.mean()) @ bc) / denom
            alpha = (float(np.mean(r)) - beta * float(np.mean(b))) * PERIODS_PER_YEAR

    return MetricsBundle(
        periods=n,
        total_cumulative_return=tcr,
        cagr=cagr,
        annual_return_mean12=ann_ret,
        annual_vol=ann_vol,
        sharpe=sharpe_ratio(ann_ret, ann_vol),
        sortino=ann_ret / downside if downside > 0 else None,
        max_drawdown=mdd,
        calmar=calmar_ratio(cagr, mdd),
        tracking_error=te,
        information_ratio=ir,
        beta=beta,
        jensen_alpha=alpha,
        var_5=var5,
        cvar_5=cvar5,
        hit_rate=float(np.mean(r > 0)),
        start=None if start is None else str(start),
        end=None if end is None else str(end),
    )


@dataclass(frozen=True)
class WeightDiagnostics:
    turnover: np.ndarray
    persistence: np.ndarray
    topk_share: np.ndarray
    top_set: np.ndarray
    mean_turnover: float
    mean_persistence: float
    mean_topk_share: float


def weight_diagnostics(weights, k: int = 15) -> WeightDiagnostics:
    """Turnover, cosine persistence and top-k concentration of a weight path.

    ``weights`` is T x N (rows are rebalance dates, NaN treated as 0). The top
    set holds the ``k`` assets with the largest time-average weight; ties go
    to the lower column index.
    """
    w = np.nan_to_num(np.asarray(weights, dtype=float))
    if w.ndim != 2 or w.shape[0] < 1:
        raise ValueError("weights must be a non-empty T x N matrix")
    avg = w.mean(axis=0)
    order = np.argsort(-avg, kind="stable")
    top = np.sort(order[:min(k, w.shape[1])])
    share = w[:, top].sum(axis=1)
    if w.shape[0] > 1:
        diff = w[1:] - w[:-1]
        turnover = np.abs(diff).sum(axis=1)
        norms = np.linalg.norm(w, axis=1)
        dots = np.einsum("ij,ij->i", w[1:], w[:-1])
        with np.errstate(invalid="ignore", divide="ignore"):
            persistence = dots / (norms[1:] * norms[:-1])
    else:
        turnover = persistence = np.zeros(0)
    return WeightDiagnostics(
        turnover, persistence, share, top,
        float(turnover.mean()) if turnover.size else 0.0,
        float(np.nanmean(persistence)) if persistence.size else 1.0,
        float(share.mean()),
    )


def metrics_table(columns: dict[str, MetricsBundle]) -> list[list[str]]:
    """Rows ``[metric, col1, col2, ...]`` with the table's row names; undefined shows as NaN."""
    rows = [["Metric", *columns]]
    for label, key in TABLE_ROWS:
        row = [label]
        for m in columns.values():
            v = getattr(m, key)
            if v is None:
                row.append("NaN")
            elif isinstance(v, (int, np.integer)) or isinstance(v, str):
                row.append(str(v))
            else:
                row.append(f"{v:.6f}")
        rows.append(row)
    return rows
