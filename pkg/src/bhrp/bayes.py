"""Rolling empirical-Bayes filter for means and covariance.

Asset means are shrunk toward their sector's cross-sectional mean with
precision weights; the covariance is a Ledoit-Wolf shrinkage toward a scaled
identity.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import DomainError, ReturnsPanel, SectorPartition, StructuralError
from .riskparity import CovarianceMatrix


@dataclass(frozen=True)
class PriorHyperparams:
    """Prior scales and window settings.

    ``tau_sq`` is a scalar or one value per asset (per-period return squared).
    ``market_mean`` / ``market_var`` describe the top of the generative
    hierarchy; the filter does not use them.
    """

    tau_sq: float | tuple[float, ...] = 0.05**2
    window_len: int = 36
    variance_floor: float = 1e-10
    market_mean: float = 0.0
    market_var: float | None = None

    def __post_init__(self) -> None:
        if np.any(np.asarray(self.tau_sq, dtype=float) <= 0):
            raise ValueError("tau_sq must be positive")
        if self.window_len < 2:
            raise ValueError("window_len must be at least 2")
        if not self.variance_floor > 0:
            raise ValueError("variance_floor must be positive")

    def tau_sq_for(self, n: int) -> np.ndarray:
        tau = np.asarray(self.tau_sq, dtype=float)
        if tau.ndim == 0:
            return np.full(n, float(tau))
        if tau.shape != (n,):
            raise StructuralError(f"tau_sq has {tau.size} entries for {n} assets")
        return tau


@dataclass(frozen=True)
class PosteriorState:
    mu_hat: np.ndarray
    sigma: CovarianceMatrix
    sector_prior: np.ndarray
    as_of: object
    active: np.ndarray
    shrinkage: float


def ledoit_wolf_intensity(X: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Sample covariance, identity-target scale and optimal shrinkage intensity.

    ``X`` is T x N; the covariance uses the 1/T normalization. Returns
    ``(S, nu, delta)`` with ``delta`` in [0, 1].
    """
    X = np.asarray(X, dtype=float)
    T, N = X.shape
    Xc = X - X.mean(axis=0)
    S = Xc.T @ Xc / T
    nu = np.trace(S) / N
    d2 = np.sum((S - nu * np.eye(N)) ** 2) / N
    if d2 <= 0:
        return S, nu, 0.0
    sq = np.sum(Xc**2, axis=1)
    # sum_t ||x_t x_t' - S||_F^2, expanded to avoid forming T outer products
    b_sum = np.sum(sq**2) - 2.0 * np.sum((Xc @ S) * Xc) + T * np.sum(S**2)
    b2 = min(max(b_sum, 0.0) / (T**2 * N), d2)
    return S, nu, float(b2 / d2)


def shrinkage_cov(window, variance_floor: float = 1e-10, spectral_bound: float = 10.0,
                  return_intensity: bool = False):
    """Ledoit-Wolf covariance of a T' x N window, shrunk toward ``nu * I``.

    A ridge of ``1e-10 * nu`` is added when the smallest eigenvalue falls
    below ``1e-12 * nu``. A window with no variation yields
    ``variance_floor * I`` and a warning.
    """
    X = np.asarray(window, dtype=float)
    if X.ndim != 2:
        raise StructuralError("window must be a T x N matrix")
    if X.shape[0] < 2:
        raise DomainError("need at least two observations")
    if not np.all(np.isfinite(X)):
        raise DomainError("window has non-finite entries")
    N = X.shape[1]
    S, nu, delta = ledoit_wolf_intensity(X)
    if nu <= 0:
        warnings.warn("constant window; using variance floor", RuntimeWarning, stacklevel=2)
        out = CovarianceMatrix(variance_floor * np.eye(N), spectral_bound)
        return (out, 0.0) if return_intensity else out
    sigma = (1.0 - delta) * S + delta * nu * np.eye(N)
    if N == 1:
        sigma = np.maximum(sigma, variance_floor)
    elif np.linalg.eigvalsh(sigma)[0] < 1e-12 * nu:
        sigma = sigma + 1e-10 * nu * np.eye(N)
    out = CovarianceMatrix(sigma, spectral_bound)
    return (out, delta) if return_intensity else out


def shrink_mean(rbar, s2, n, prior_mean, tau_sq):
    """Precision-weighted blend of a sample mean and its prior mean.

    ``(prior_mean / tau_sq + n * rbar / s2) / (1 / tau_sq + n / s2)``;
    ``tau_sq = inf`` returns ``rbar``.
    """
    tau_prec = 1.0 / np.asarray(tau_sq, dtype=float)
    data_prec = np.asarray(n, dtype=float) / np.asarray(s2, dtype=float)
    return (tau_prec * prior_mean + data_prec * rbar) / (tau_prec + data_prec)


def update_posterior(window: ReturnsPanel, part: SectorPartition, prior: PriorHyperparams,
                     spectral_bound: float = 10.0) -> PosteriorState:
    """Posterior means and shrunk covariance from one rolling window.

    Assets with fewer than two valid observations are inactive: their mean is
    0 and their covariance row is a decoupled diagonal entry. Invalid cells of
    active assets are filled with the asset's window mean before the
    covariance step (zero deviation).
    """
    N = window.n_assets
    if part.n_assets != N:
        raise StructuralError("partition does not match panel")
    if window.n_periods < 2:
        raise DomainError("window needs at least two periods")
    valid = window.valid
    counts = valid.sum(axis=0)
    active = counts >= 2
    R = window.filled()
    safe = np.maximum(counts, 1)
    rbar = np.where(active, R.sum(axis=0) / safe, 0.0)
    dev = np.where(valid, window.returns - rbar, 0.0)
    s2 = np.where(active, (dev**2).sum(axis=0) / np.maximum(counts - 1, 1), 1.0)
    s2 = np.maximum(s2, prior.variance_floor)

    sector_prior = np.zeros(part.n_sectors)
    for g, m in enumerate(part.members):
        am = m[active[m]]
        if am.size:
            sector_prior[g] = rbar[am].mean()

    mu_hat = np.where(
        active, shrink_mean(rbar, s2, counts, sector_prior[part.sector_of], prior.tau_sq_for(N)), 0.0
    )

    sigma = np.eye(N)
    shrink = 0.0
    if active.any():
        X = np.where(valid, window.returns, rbar)[:, active]
        cov, shrink = shrinkage_cov(X, prior.variance_floor, spectral_bound, return_intensity=True)
        sigma[np.ix_(active, active)] = cov.values
        fill = max(float(np.trace(cov.values)) / cov.n, prior.variance_floor)
    else:
        fill = prior.variance_floor
    sigma[~active, ~active] = fill
    return PosteriorState(
        mu_hat, CovarianceMatrix(sigma, spectral_bound), sector_prior,
        window.dates[-1], active, shrink,
    )


def posterior_at(panel: ReturnsPanel, t: int, part: SectorPartition, prior: PriorHyperparams,
                 spectral_bound: float = 10.0) -> PosteriorState:
    """Posterior from the ``window_len`` rows ending at row ``t`` (inclusive)."""
    if not 1 <= t < panel.n_periods:
        raise DomainError(f"row {t} leaves fewer than two periods in the window")
    start = max(0, t + 1 - prior.window_len)
    return update_posterior(panel.rows(start, t + 1), part, prior, spectral_bound)
