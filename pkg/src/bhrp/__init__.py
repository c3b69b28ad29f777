"""Two-level (sector / asset) risk parity with Bayesian inputs and an RL overlay."""

__version__ = "0.1.0"

from .analytics import MetricsBundle, WeightDiagnostics, performance_metrics, weight_diagnostics
from .backtest import BacktestReport, UniverseScreen, run_benchmark, run_bhrp, run_rl_bhrp, screen_universe
from .bayes import PosteriorState, PriorHyperparams, shrinkage_cov, update_posterior
from .core import (
    BHRPError,
    DomainError,
    HierWeights,
    ReturnsPanel,
    SectorPartition,
    SolverError,
    StructuralError,
    assemble_weights,
    decompose_weights,
)
from .policy import PolicyParams, PPOConfig, load_checkpoint, policy_forward, ppo_update, save_checkpoint
from .riskparity import (
    CovarianceMatrix,
    RiskBudget,
    SolverConfig,
    bhrp_fixed_point,
    composite_sector_cov,
    risk_contributions,
    rp_penalty_gradients,
    sector_log_newton,
)
from .rlenv import PortfolioEnv, RewardConfig, reward
