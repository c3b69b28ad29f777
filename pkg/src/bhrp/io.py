"""Readers for the prices and sector-map files, and monthly resampling."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .core import BHRPError, ReturnsPanel, SectorPartition

logger = logging.getLogger(__name__)

PRICES_HEADER = ("date", "ticker", "adj_close", "volume")
SECTOR_MAP_HEADER = ("ticker", "sector", "etf")


class DataError(BHRPError, ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class DailyPanel:
    """Wide daily frames (date x ticker) of adjusted closes and volumes."""

    close: pd.DataFrame
    volume: pd.DataFrame

    @property
    def tickers(self) -> list[str]:
        return list(self.close.columns)

    def select(self, tickers) -> "DailyPanel":
        missing = [t for t in tickers if t not in self.close.columns]
        if missing:
            raise DataError(f"tickers not in price file: {missing}")
        return DailyPanel(self.close[list(tickers)], self.volume[list(tickers)])


def _read_rows(path, header):
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None or tuple(c.strip() for c in first) != header:
            raise DataError(f"{path}: expected header {','.join(header)}, got {first}")
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            yield reader.line_num, [c.strip() for c in row]


def load_prices(path) -> DailyPanel:
    """Read a long ``date,ticker,adj_close,volume`` file into a sorted daily panel.

    Row order does not matter. A missing (date, ticker) pair becomes NaN.
    """
    records = []
    seen = set()
    for line, row in _read_rows(path, PRICES_HEADER):
        if len(row) != 4:
            raise DataError(f"{path}:{line}: expected 4 fields, got {len(row)}")
        d, tic, px, vol = row
        try:
            date = pd.Timestamp(np.datetime64(d, "D"))
        except ValueError:
            raise DataError(f"{path}:{line}: bad date {d!r}") from None
        try:
            px_f, vol_f = float(px), float(vol)
        except ValueError:
            raise DataError(f"{path}:{line}: non-numeric price or volume") from None
        if not tic:
            raise DataError(f"{path}:{line}: empty ticker")
        if not (np.isfinite(px_f) and px_f > 0) or not (np.isfinite(vol_f) and vol_f >= 0):
            raise DataError(f"{path}:{line}: price must be positive and volume non-negative")
        if (date, tic) in seen:
            raise DataError(f"{path}:{line}: duplicate row for {tic} on {d}")
        seen.add((date, tic))
        records.append((date, tic, px_f, vol_f))
    if not records:
        raise DataError(f"{path}: no data rows")
    df = pd.DataFrame(records, columns=["date", "ticker", "adj_close", "volume"])
    close = df.pivot(index="date", columns="ticker", values="adj_close").sort_index()
    volume = df.pivot(index="date", columns="ticker", values="volume").sort_index()
    cols = sorted(close.columns)
    close.columns.name = volume.columns.name = None
    return DailyPanel(close[cols], volume[cols])


@dataclass(frozen=True)
class SectorMap:
    tickers: tuple[str, ...]
    sectors: tuple[str, ...]
    etf_of_sector: dict

    @property
    def etfs(self) -> list[str]:
        return list(dict.fromkeys(self.etf_of_sector.values()))

    @property
    def sector_of(self) -> dict:
        return dict(zip(self.tickers, self.sectors))

    def partition(self, tickers=None) -> SectorPartition:
        """Partition over ``tickers`` (default: all mapped tickers, file order).

        Sectors keep file order; sectors with no listed ticker are dropped.
        """
        tickers = list(self.tickers) if tickers is None else list(tickers)
        lookup = self.sector_of
        missing = [t for t in tickers if t not in lookup]
        if missing:
            raise DataError(f"tickers without a sector: {missing}")
        labels = [lookup[t] for t in tickers]
        order = list(dict.fromkeys(self.sectors))
        dropped = [s for s in order if s not in set(labels)]
        if dropped:
            logger.warning("sectors without assets dropped: %s", dropped)
        return SectorPartition.from_labels(labels, tickers, order)


def load_sector_map(path, price_tickers=None) -> SectorMap:
    """Read a ``ticker,sector,etf`` file.

    With ``price_tickers``, every ticker that is not one of the ETFs must be mapped.
    """
    tickers, sectors, etf_of = [], [], {}
    for line, row in _read_rows(path, SECTOR_MAP_HEADER):
        if len(row) != 3 or not all(row):
            raise DataError(f"{path}:{line}: expected ticker,sector,etf")
        tic, sec, etf = row
        if tic in tickers:
            raise DataError(f"{path}:{line}: ticker {tic} mapped twice")
        if etf_of.setdefault(sec, etf) != etf:
            raise DataError(f"{path}:{line}: sector {sec!r} has two ETFs ({etf_of[sec]}, {etf})")
        tickers.append(tic)
        sectors.append(sec)
    if not tickers:
        raise DataError(f"{path}: no data rows")
    smap = SectorMap(tuple(tickers), tuple(sectors), etf_of)
    if price_tickers is not None:
        known = set(tickers) | set(smap.etfs)
        unmapped = sorted(t for t in price_tickers if t not in known)
        if unmapped:
            raise DataError(f"tickers in prices but not in sector map: {unmapped}")
    return smap


def month_end_grid(dates) -> pd.DatetimeIndex:
    """Last available date of each calendar month."""
    idx = pd.DatetimeIndex(dates)
    s = pd.Series(idx, index=idx)
    return pd.DatetimeIndex(s.groupby(idx.to_period("M")).max().values)


def monthly_returns(close: pd.DataFrame, bound: float = 1.0) -> tuple[ReturnsPanel, bool]:
    """Month-end to month-end simple returns on the data's own month-end grid.

    The first grid row has no return (invalid everywhere). If the data stop
    before the last business day of the final month, that month is a stub
    whose return runs to the last available close; the flag reports it.
    """
    grid = month_end_grid(close.index)
    px = close.loc[grid]
    rets = px.to_numpy() / px.shift(1).to_numpy() - 1.0
    last = grid[-1]
    partial = bool(last < last + pd.offsets.BMonthEnd(0))
    panel = ReturnsPanel(grid.to_numpy(), tuple(close.columns), rets, bound=bound)
    return panel, partial


def read_matrix_csv(path) -> tuple[list[str], np.ndarray]:
    """Square matrix with a header row of names and an optional leading name column."""
    df = pd.read_csv(path)
    if df.shape[1] == df.shape[0] + 1:
        df = df.set_index(df.columns[0])
    if df.shape[0] != df.shape[1]:
        raise DataError(f"{path}: matrix is {df.shape[0]} x {df.shape[1]}")
    try:
        values = df.to_numpy(dtype=float)
    except ValueError:
        raise DataError(f"{path}: non-numeric entries") from None
    return [str(c) for c in df.columns], values
