"""Risk contributions and the two-level risk-parity solvers.

Two solvers live here:

* :func:`sector_log_newton` solves the risk-budgeting KKT system on a G x G
  covariance in log coordinates, with an augmented Newton step and Armijo
  backtracking on ``||r||^2 + s^2``.
* :func:`bhrp_fixed_point` alternates within-sector and sector updates until
  risk contributions are equal inside every sector and across sectors.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import (
    DomainError,
    HierWeights,
    SectorPartition,
    SolverError,
    StructuralError,
    assemble_weights,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CovarianceMatrix:
    """Symmetric positive definite covariance with a spectral-norm bound."""

    values: np.ndarray
    spectral_bound: float = 10.0

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise StructuralError(f"covariance must be square, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DomainError("covariance has non-finite entries")
        scale = max(1.0, float(np.abs(v).max()))
        if np.abs(v - v.T).max() > 1e-12 * scale:
            raise DomainError("covariance is not symmetric")
        v = 0.5 * (v + v.T)
        try:
            np.linalg.cholesky(v)
        except np.linalg.LinAlgError:
            raise DomainError("covariance is not positive definite") from None
        norm = np.linalg.eigvalsh(v)[-1]
        if norm > self.spectral_bound:
            raise DomainError(f"spectral norm {norm:.4g} exceeds bound {self.spectral_bound}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def block(self, part: SectorPartition, g: int, h: int) -> np.ndarray:
        return self.values[np.ix_(part.members[g], part.members[h])]


@dataclass(frozen=True)
class RiskBudget:
    budgets: np.ndarray

    def __post_init__(self) -> None:
        b = np.array(self.budgets, dtype=float)
        if b.ndim != 1 or b.size == 0 or np.any(~np.isfinite(b)) or np.any(b <= 0):
            raise DomainError("budgets must be a vector of strictly positive numbers")
        if abs(b.sum() - 1.0) > 1e-12:
            raise DomainError(f"budgets sum to {b.sum()!r}, not 1")
        b.setflags(write=False)
        object.__setattr__(self, "budgets", b)

    @classmethod
    def equal(cls, n: int) -> "RiskBudget":
        return cls(np.full(n, 1.0 / n))


@dataclass(frozen=True)
class SolverConfig:
    """Tolerances and iteration limits shared by the solvers.

    ``step_tol`` defaults to ``tol``; it is the L1 step threshold in the
    two-level stopping test, kept separate because it is not in variance units.
    ``method`` picks the two-level scheme: ``"block"`` (exact block updates,
    convergent) or ``"reciprocal"`` (plain reciprocal updates with optional
    geometric ``damping`` in (0, 1]).
    """

    tol: float = 1e-10
    max_iters: int = 200
    safeguard: float = 1e-12
    armijo_shrink: float = 0.5
    armijo_slope: float = 1e-4
    max_halvings: int = 60
    newton_max_iters: int = 100
    step_tol: float | None = None
    method: str = "block"
    damping: float = 1.0

    def __post_init__(self) -> None:
        if not self.tol > 0 or not self.safeguard > 0:
            raise ValueError("tol and safeguard must be positive")
        if self.max_iters < 1 or self.newton_max_iters < 1:
            raise ValueError("iteration limits must be at least 1")
        if not 0 < self.armijo_shrink < 1 or not 0 < self.armijo_slope < 0.5:
            raise ValueError("invalid Armijo parameters")
        if self.method not in ("block", "reciprocal"):
            raise ValueError(f"unknown method {self.method!r}")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")

    @property
    def l1_tol(self) -> float:
        return self.tol if self.step_tol is None else self.step_tol


def risk_contributions(w, sigma) -> np.ndarray:
    """RC_i = w_i (Sigma w)_i; they sum to the portfolio variance."""
    w = np.asarray(w, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != (w.size, w.size):
        raise StructuralError(f"weights of length {w.size} vs covariance {sigma.shape}")
    return w * (sigma @ w)


def _embedding(eta, part: SectorPartition) -> np.ndarray:
    # N x G matrix E with E[i, g(i)] = eta_i, so w = E @ W and Sigma~ = E' Sigma E
    E = np.zeros((part.n_assets, part.n_sectors))
    for g, (m, e) in enumerate(zip(part.members, eta)):
        if len(e) != m.size:
            raise StructuralError(f"sector {g} has {m.size} members but {len(e)} weights")
        E[m, g] = e
    return E


def composite_sector_cov(sigma, eta, part: SectorPartition) -> np.ndarray:
    """G x G covariance of the sector portfolios formed with weights ``eta``."""
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != (part.n_assets, part.n_assets):
        raise StructuralError("covariance does not match partition")
    if len(eta) != part.n_sectors:
        raise StructuralError("need one within-sector vector per sector")
    E = _embedding(eta, part)
    st = E.T @ sigma @ E
    return 0.5 * (st + st.T)


def sector_risk_contributions(W, sigma_tilde) -> np.ndarray:
    W = np.asarray(W, dtype=float)
    sigma_tilde = np.asarray(sigma_tilde, dtype=float)
    if sigma_tilde.shape != (W.size, W.size):
        raise StructuralError("sector weights do not match composite covariance")
    return W * (sigma_tilde @ W)


def rc_dispersion(w, sigma, part: SectorPartition) -> float:
    """Sum of within-sector RC variances plus the variance of sector RCs."""
    rc = risk_contributions(w, sigma)
    within = sum(float(np.var(rc[m])) for m in part.members)
    return within + float(np.var(part.sector_sums(rc)))


def within_sector_step(sigma, part: SectorPartition, W, eta, cfg: SolverConfig | None = None,
                       damping: float | None = None) -> tuple[np.ndarray, ...]:
    """One Gauss-Seidel sweep of the reciprocal within-sector update.

    For each sector in index order, ``m = (Sigma w)`` restricted to the sector
    (with earlier sectors already updated) and ``eta <- normalize(1/max(m, delta))``.
    With ``damping < 1`` the new vector is the normalized geometric blend
    ``eta**(1-damping) * (1/m)**damping``, which has the same fixed points.
    """
    cfg = cfg or SolverConfig()
    theta = cfg.damping if damping is None else damping
    sigma = np.asarray(sigma, dtype=float)
    W = np.asarray(W, dtype=float)
    eta = [np.asarray(e, dtype=float).copy() for e in eta]
    w = _embedding(eta, part) @ W
    for g, m_idx in enumerate(part.members):
        m = sigma[m_idx] @ w
        recip = 1.0 / np.maximum(m, cfg.safeguard)
        new = recip if theta == 1.0 else eta[g] ** (1.0 - theta) * recip**theta
        eta[g] = new / new.sum()
        w[m_idx] = W[g] * eta[g]
    return tuple(eta)


@dataclass
class LogNewtonResult:
    W: np.ndarray
    iters: int
    final_residual: float
    converged: bool
    residuals: list[float] = field(default_factory=list)


def _kkt_residual(sigma_tilde, log_b, y, c):
    u = np.exp(y)
    z = sigma_tilde @ u
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.log(z) + y - log_b - c
    return r, u.sum() - 1.0, u, z


def _ccd_sweep(sigma, x, b, idx) -> None:
    # exact minimization of 0.5 x'Sx - sum b log x over each coordinate in idx, in place
    for i in idx:
        sii = sigma[i, i]
        rest = sigma[i] @ x - sii * x[i]
        x[i] = (-rest + np.sqrt(rest * rest + 4.0 * sii * b[i])) / (2.0 * sii)


def _positive_start(sigma_tilde, b, max_sweeps: int = 1000) -> np.ndarray:
    # y = 0 needs Sigma~ 1 > 0; otherwise warm up with coordinate descent until z > 0
    G = b.size
    if np.all(sigma_tilde @ np.ones(G) > 0):
        return np.zeros(G)
    x = b / np.sqrt(np.diag(sigma_tilde))
    for _ in range(max_sweeps):
        _ccd_sweep(sigma_tilde, x, b, range(G))
        if np.all(sigma_tilde @ x > 0):
            return np.log(x / x.sum())
    raise SolverError("could not find a starting point with positive marginal risk")


def sector_log_newton(sigma_tilde, b=None, cfg: SolverConfig | None = None) -> LogNewtonResult:
    """Risk-budgeting weights on the simplex via log-domain Newton.

    Solves ``log(Sigma~ u) + y - log b - c = 0`` and ``sum(u) = 1`` for
    ``u = exp(y)``, so that ``W_g (Sigma~ W)_g = b_g * W' Sigma~ W``.
    Raises :class:`SolverError` if the Newton system stays singular after one
    diagonal regularization, or if the line search exhausts its halvings.
    """
    cfg = cfg or SolverConfig()
    sigma_tilde = np.asarray(sigma_tilde, dtype=float)
    G = sigma_tilde.shape[0]
    if sigma_tilde.shape != (G, G):
        raise StructuralError("composite covariance must be square")
    if b is None:
        b = RiskBudget.equal(G)
    elif not isinstance(b, RiskBudget):
        b = RiskBudget(b)
    if b.budgets.size != G:
        raise StructuralError("budget length does not match covariance")
    bv = b.budgets
    log_b = np.log(bv)

    y = _positive_start(sigma_tilde, bv)
    c = 0.0
    history = []
    ones = np.ones(G)
    for it in range(cfg.newton_max_iters + 1):
        r, s, u, z = _kkt_residual(sigma_tilde, log_b, y, c)
        res = max(float(np.abs(r).max()), abs(s))
        history.append(res)
        if res <= cfg.tol:
            return LogNewtonResult(u, it, res, True, history)
        if it == cfg.newton_max_iters:
            break
        J = np.eye(G) + sigma_tilde * u[None, :] / z[:, None]
        A = np.zeros((G + 1, G + 1))
        A[:G, :G] = J
        A[:G, G] = -ones
        A[G, :G] = u
        rhs = -np.append(r, s)
        try:
            step = np.linalg.solve(A, rhs)
        except np.linalg.LinAlgError:
            A[:G, :G] += 1e-12 * np.eye(G)
            try:
                step = np.linalg.solve(A, rhs)
            except np.linalg.LinAlgError:
                raise SolverError("singular Newton system") from None
        if not np.all(np.isfinite(step)):
            raise SolverError("non-finite Newton step")
        dy, dc = step[:G], step[G]
        merit = r @ r + s * s
        alpha = 1.0
        for _ in range(cfg.max_halvings):
            with np.errstate(over="ignore", invalid="ignore"):
                r2, s2, _, _ = _kkt_residual(sigma_tilde, log_b, y + alpha * dy, c + alpha * dc)
                trial = r2 @ r2 + s2 * s2
            if np.isfinite(trial) and trial <= (1.0 - 2.0 * cfg.armijo_slope * alpha) * merit:
                break
            alpha *= cfg.armijo_shrink
        else:
            raise SolverError(f"line search failed after {cfg.max_halvings} halvings")
        y = y + alpha * dy
        c = c + alpha * dc
    u = np.exp(y)
    logger.debug("log-Newton stopped at residual %.3e without converging", history[-1])
    return LogNewtonResult(u / u.sum(), cfg.newton_max_iters, history[-1], False, history)


@dataclass
class BHRPResult:
    weights: HierWeights
    iters: int
    rc_dispersion: float
    l1_step: float
    converged: bool


def _hier(x, part: SectorPartition) -> HierWeights:
    w = x / x.sum()
    W = part.sector_sums(w)
    eta = tuple(w[m] / W[g] for g, m in enumerate(part.members))
    return assemble_weights(W, eta, part)


def bhrp_fixed_point(sigma, part: SectorPartition, cfg: SolverConfig | None = None,
                     budgets=None) -> BHRPResult:
    """Two-level risk parity: equal RCs inside each sector and across sectors.

    Starts from uniform sector and within-sector weights. Each outer iteration
    updates every sector's within weights (Gauss-Seidel, ascending index),
    rebuilds the composite covariance and updates the sector weights. Stops
    when the L1 step and :func:`rc_dispersion` are both below tolerance.

    With ``cfg.method == "block"`` each update is an exact block minimization
    of ``0.5 x'Sigma x - sum_i b_i log x_i`` with asset budgets
    ``b_i = B_g / n_g``; the sector block is :func:`sector_log_newton`. With
    ``"reciprocal"`` the updates are the plain reciprocal maps, which can cycle
    (e.g. on a diagonal matrix with undamped steps).

    Non-convergence is not raised; the lowest-dispersion iterate is returned
    with ``converged=False``.
    """
    cfg = cfg or SolverConfig()
    sigma = np.asarray(sigma, dtype=float)
    N, G = part.n_assets, part.n_sectors
    if sigma.shape != (N, N):
        raise StructuralError("covariance does not match partition")
    B = RiskBudget.equal(G) if budgets is None else (
        budgets if isinstance(budgets, RiskBudget) else RiskBudget(budgets))
    if B.budgets.size != G:
        raise StructuralError("sector budgets do not match partition")
    b_asset = B.budgets[part.sector_of] / part.sizes[part.sector_of]

    W = np.full(G, 1.0 / G)
    eta = tuple(np.full(m.size, 1.0 / m.size) for m in part.members)
    w = _embedding(eta, part) @ W
    x = w / np.sqrt(w @ sigma @ w)

    best = None
    E_val = l1 = np.inf
    for k in range(1, cfg.max_iters + 1):
        if cfg.method == "block":
            for m in part.members:
                _ccd_sweep(sigma, x, b_asset, m)
            eta = tuple(x[m] / x[m].sum() for m in part.members)
            st = composite_sector_cov(sigma, eta, part)
            W = sector_log_newton(st, B, cfg).W
            w_new = _embedding(eta, part) @ W
            x = w_new / np.sqrt(w_new @ sigma @ w_new)
        else:
            eta = within_sector_step(sigma, part, W, eta, cfg)
            st = composite_sector_cov(sigma, eta, part)
            recip = B.budgets / np.maximum(st @ W, cfg.safeguard)
            if cfg.damping != 1.0:
                recip = W ** (1.0 - cfg.damping) * recip**cfg.damping
            W = recip / recip.sum()
            w_new = _embedding(eta, part) @ W
        w_new = w_new / w_new.sum()
        l1 = float(np.abs(w_new - w).sum())
        E_val = rc_dispersion(w_new, sigma, part)
        w = w_new
        if best is None or E_val < best[1]:
            best = (w.copy(), E_val, l1, k)
        if l1 <= cfg.l1_tol and E_val <= cfg.tol:
            return BHRPResult(_hier(w, part), k, E_val, l1, True)
    logger.info("two-level fixed point did not converge: dispersion %.3e, step %.3e", E_val, l1)
    w_best, e_best, l1_best, _ = best
    return BHRPResult(_hier(w_best, part), cfg.max_iters, e_best, l1_best, False)


def rp_penalties(w, sigma, part: SectorPartition) -> tuple[float, float]:
    """Centered squared-norm dispersion of asset RCs and of sector RCs."""
    rc = risk_contributions(w, sigma)
    dev = rc - rc.mean()
    sec = part.sector_sums(rc)
    sdev = sec - sec.mean()
    return float(dev @ dev) / rc.size, float(sdev @ sdev) / sec.size


def rp_penalty_gradients(w, sigma, part: SectorPartition) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of :func:`rp_penalties` with respect to ``w``.

    With ``J = diag(Sigma w) + diag(w) Sigma`` the Jacobian of the RC map,
    ``grad_within = (2/N) J' P_N RC`` and ``grad_across = (2/G) J' S' P_G S RC``.
    """
    w = np.asarray(w, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    sw = sigma @ w
    rc = w * sw
    N, G = w.size, part.n_sectors
    dev = rc - rc.mean()
    sec = part.sector_sums(rc)
    sdev = (sec - sec.mean())[part.sector_of]

    def jt(v):
        # J' v = Sigma w * v + Sigma (w * v), using symmetry of Sigma
        return sw * v + sigma @ (w * v)

    return 2.0 / N * jt(dev), 2.0 / G * jt(sdev)
