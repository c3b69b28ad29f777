"""Asset/sector hierarchy and the two-level weight map.

Weights are composed as ``w_i = W[g(i)] * eta[g(i)][i]`` where ``W`` lives on the
G-simplex and each ``eta[g]`` on the simplex of its sector's members.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

SIMPLEX_TOL = 1e-9


class BHRPError(Exception):
    """Base class for package errors."""


class StructuralError(BHRPError, ValueError):
    """Shapes or partitions that do not fit together."""


class DomainError(BHRPError, ValueError):
    """Input outside the domain where an operation is defined."""


class SolverError(BHRPError, RuntimeError):
    """A numerical routine could not produce a valid iterate."""


@dataclass(frozen=True)
class SectorPartition:
    """Surjective map from N assets onto G sectors.

    ``sector_of[i]`` is the sector index of asset ``i``. Member lists keep the
    asset order, so within-sector vectors index reproducibly.
    """

    sector_of: np.ndarray
    n_sectors: int
    asset_names: tuple[str, ...] | None = None
    sector_names: tuple[str, ...] | None = None
    members: tuple[np.ndarray, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        sector_of = np.asarray(self.sector_of)
        if sector_of.ndim != 1 or sector_of.size == 0:
            raise StructuralError("sector_of must be a non-empty 1-d array")
        if not np.issubdtype(sector_of.dtype, np.integer):
            raise StructuralError("sector_of must hold integer sector indices")
        if self.n_sectors < 1:
            raise StructuralError("need at least one sector")
        if sector_of.min() < 0 or sector_of.max() >= self.n_sectors:
            raise StructuralError("sector index out of range")
        counts = np.bincount(sector_of, minlength=self.n_sectors)
        if np.any(counts == 0):
            empty = np.flatnonzero(counts == 0).tolist()
            raise StructuralError(f"sectors without members: {empty}")
        if self.asset_names is not None and len(self.asset_names) != sector_of.size:
            raise StructuralError("asset_names length does not match sector_of")
        if self.sector_names is not None and len(self.sector_names) != self.n_sectors:
            raise StructuralError("sector_names length does not match n_sectors")
        sector_of = sector_of.astype(np.int64)
        sector_of.setflags(write=False)
        object.__setattr__(self, "sector_of", sector_of)
        members = tuple(np.flatnonzero(sector_of == g) for g in range(self.n_sectors))
        for m in members:
            m.setflags(write=False)
        object.__setattr__(self, "members", members)

    @classmethod
    def from_labels(
        cls,
        labels: Sequence[str],
        asset_names: Sequence[str] | None = None,
        sector_order: Sequence[str] | None = None,
    ) -> "SectorPartition":
        """Build from one sector label per asset.

        Sectors are numbered by ``sector_order`` if given, else by first appearance.
        """
        labels = list(labels)
        if sector_order is None:
            sector_order = list(dict.fromkeys(labels))
        else:
            sector_order = [s for s in sector_order if s in set(labels)]
        index = {s: k for k, s in enumerate(sector_order)}
        missing = sorted(set(labels) - set(index))
        if missing:
            raise StructuralError(f"labels not in sector_order: {missing}")
        return cls(
            np.array([index[s] for s in labels], dtype=np.int64),
            len(sector_order),
            tuple(asset_names) if asset_names is not None else None,
            tuple(sector_order),
        )

    @property
    def n_assets(self) -> int:
        return int(self.sector_of.size)

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.sector_of, minlength=self.n_sectors)

    def aggregation_matrix(self) -> np.ndarray:
        """0/1 matrix S (G x N) with S[g, i] = 1 iff asset i is in sector g."""
        S = np.zeros((self.n_sectors, self.n_assets))
        S[self.sector_of, np.arange(self.n_assets)] = 1.0
        return S

    def sector_sums(self, x: np.ndarray) -> np.ndarray:
        return np.bincount(self.sector_of, weights=np.asarray(x, dtype=float), minlength=self.n_sectors)

    def subset(self, keep: np.ndarray) -> tuple["SectorPartition", np.ndarray]:
        """Restrict to assets where ``keep`` is true, dropping empty sectors.

        Returns the reduced partition and the kept sector indices.
        """
        keep = np.asarray(keep, dtype=bool)
        if keep.shape != (self.n_assets,):
            raise StructuralError("mask length does not match partition")
        if not keep.any():
            raise StructuralError("cannot restrict to an empty asset set")
        old = self.sector_of[keep]
        kept_sectors = np.unique(old)
        remap = np.full(self.n_sectors, -1, dtype=np.int64)
        remap[kept_sectors] = np.arange(kept_sectors.size)
        names = None
        if self.asset_names is not None:
            names = tuple(n for n, k in zip(self.asset_names, keep) if k)
        snames = None
        if self.sector_names is not None:
            snames = tuple(self.sector_names[g] for g in kept_sectors)
        return SectorPartition(remap[old], int(kept_sectors.size), names, snames), kept_sectors


@dataclass(frozen=True)
class HierWeights:
    """Sector weights, within-sector weights and the assembled asset weights."""

    sector_w: np.ndarray
    within_w: tuple[np.ndarray, ...]
    asset_w: np.ndarray


def _on_simplex(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise StructuralError(f"{name} must be a non-empty vector")
    if not np.all(np.isfinite(x)):
        raise DomainError(f"{name} has non-finite entries")
    if np.any(x < 0):
        raise DomainError(f"{name} has negative entries")
    total = x.sum()
    if abs(total - 1.0) > SIMPLEX_TOL:
        raise DomainError(f"{name} sums to {total!r}, not 1")
    return x / total


def assemble_weights(W, eta, part: SectorPartition) -> HierWeights:
    """Compose sector and within-sector weights into asset weights.

    Inputs within 1e-9 of their simplexes are renormalized; anything further
    off raises :class:`DomainError`.
    """
    if len(eta) != part.n_sectors:
        raise StructuralError(f"expected {part.n_sectors} within-sector vectors, got {len(eta)}")
    W = _on_simplex(W, "sector weights")
    if W.size != part.n_sectors:
        raise StructuralError(f"sector weights have length {W.size}, expected {part.n_sectors}")
    within = []
    w = np.empty(part.n_assets)
    for g, (members, e) in enumerate(zip(part.members, eta)):
        e = _on_simplex(e, f"within-sector weights of sector {g}")
        if e.size != members.size:
            raise StructuralError(f"sector {g} has {members.size} members but {e.size} weights")
        within.append(e)
        w[members] = W[g] * e
    return HierWeights(W, tuple(within), w)


def decompose_weights(w, part: SectorPartition) -> tuple[np.ndarray, tuple[np.ndarray, ...]]:
    """Inverse of :func:`assemble_weights` on the interior of the simplex."""
    w = np.asarray(w, dtype=float)
    if w.shape != (part.n_assets,):
        raise StructuralError(f"weights have shape {w.shape}, expected ({part.n_assets},)")
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise DomainError("decomposition is defined only for strictly positive weights")
    if abs(w.sum() - 1.0) > SIMPLEX_TOL:
        raise DomainError(f"weights sum to {w.sum()!r}, not 1")
    W = part.sector_sums(w)
    eta = tuple(w[m] / W[g] for g, m in enumerate(part.members))
    return W, eta


@dataclass
class ReturnsPanel:
    """Per-period simple returns with a validity mask.

    ``returns`` is T x N; cells where ``valid`` is false carry NaN.
    """

    dates: np.ndarray
    tickers: tuple[str, ...]
    returns: np.ndarray
    valid: np.ndarray | None = None
    bound: float = 1.0

    def __post_init__(self) -> None:
        self.returns = np.asarray(self.returns, dtype=float)
        if self.returns.ndim != 2:
            raise StructuralError("returns must be a T x N matrix")
        T, N = self.returns.shape
        self.tickers = tuple(self.tickers)
        if len(self.tickers) != N:
            raise StructuralError(f"{len(self.tickers)} tickers for {N} columns")
        self.dates = np.asarray(self.dates)
        if self.dates.shape != (T,):
            raise StructuralError(f"{self.dates.size} dates for {T} rows")
        if T > 1 and not np.all(self.dates[1:] > self.dates[:-1]):
            raise StructuralError("dates must be strictly increasing")
        if self.valid is None:
            self.valid = np.isfinite(self.returns)
        else:
            self.valid = np.asarray(self.valid, dtype=bool) & np.isfinite(self.returns)
        if self.valid.shape != (T, N):
            raise StructuralError("valid mask shape does not match returns")
        self.returns = np.where(self.valid, self.returns, np.nan)
        too_big = np.abs(np.where(self.valid, self.returns, 0.0)) > self.bound
        if too_big.any():
            t, i = np.argwhere(too_big)[0]
            raise DomainError(
                f"|return| exceeds bound {self.bound} at {self.dates[t]} for {self.tickers[i]}"
            )

    @property
    def n_periods(self) -> int:
        return self.returns.shape[0]

    @property
    def n_assets(self) -> int:
        return self.returns.shape[1]

    def rows(self, start: int, stop: int) -> "ReturnsPanel":
        """Sub-panel of rows ``start:stop``."""
        return ReturnsPanel(
            self.dates[start:stop], self.tickers, self.returns[start:stop],
            self.valid[start:stop], self.bound,
        )

    def filled(self) -> np.ndarray:
        """Returns with invalid cells set to zero."""
        return np.where(self.valid, self.returns, 0.0)
