"""Seeded synthetic markets for tests and demos."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
import pandas as pd


def sector_market(n_periods: int, sector_means, sizes, vol: float = 0.05, seed: int = 0,
                  start="2000-01-31"):
    """Monthly i.i.d. Gaussian returns, one mean per sector.

    Returns ``(dates, returns T x N, sector_of)``.
    """
    rng = np.random.default_rng(seed)
    sector_of = np.repeat(np.arange(len(sizes)), sizes)
    mu = np.asarray(sector_means, dtype=float)[sector_of]
    R = mu + vol * rng.standard_normal((n_periods, sector_of.size))
    dates = pd.date_range(start, periods=n_periods, freq="ME").to_numpy()
    return dates, R, sector_of


def daily_prices(tickers, start, end, seed: int = 0, drift: float = 0.0004, vol: float = 0.012,
                 price0: float = 50.0, volume0: float = 1e6, factor: float = 0.5) -> pd.DataFrame:
    """Long-format daily panel (date, ticker, adj_close, volume) on business days.

    Returns share one market factor with loading ``factor``.
    """
    rng = np.random.default_rng(seed)
    dates = pd.bdate_range(start, end)
    n, T = len(tickers), len(dates)
    common = rng.standard_normal((T, 1))
    eps = factor * common + np.sqrt(1 - factor**2) * rng.standard_normal((T, n))
    logp = np.log(price0) + np.cumsum(drift + vol * eps, axis=0)
    vol_sh = volume0 * np.exp(0.3 * rng.standard_normal((T, n)))
    frame = pd.DataFrame({
        "date": np.repeat(dates.strftime("%Y-%m-%d"), n),
        "ticker": np.tile(list(tickers), T),
        "adj_close": np.exp(logp).ravel(),
        "volume": np.round(vol_sh.ravel()),
    })
    return frame


def write_prices(frame: pd.DataFrame, path) -> Path:
    path = Path(path)
    frame.to_csv(path, index=False, float_format="%.6f")
    return path


def write_sector_map(rows, path) -> Path:
    """``rows`` of (ticker, sector, etf)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ticker", "sector", "etf"])
        w.writerows(rows)
    return path
