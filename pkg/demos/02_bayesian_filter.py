"""
Posterior means and shrunk covariance
=====================================

Estimate inputs from a rolling window and see how much the prior pulls.
"""
import numpy as np

from bhrp import SectorPartition
from bhrp.bayes import PriorHyperparams, ledoit_wolf_intensity, posterior_at, shrink_mean
from bhrp.core import ReturnsPanel
from bhrp.synthetic import sector_market

dates, R, sector_of = sector_market(60, [0.01, 0.0, -0.005], [3, 3, 2], vol=0.04, seed=1)
panel = ReturnsPanel(dates, [f"a{i}" for i in range(R.shape[1])], R)
part = SectorPartition(sector_of, 3)

# one observation, unit variance, prior mean 0 and variance 1: halfway
print("n=1 example:", shrink_mean(np.array([1.0]), np.array([1.0]), 1, np.array([0.0]), 1.0))

prior = PriorHyperparams(window_len=36)
post = posterior_at(panel, 59, part, prior)
window = R[59 - 35:60]
print("sample means   ", np.round(window.mean(axis=0), 4))
print("posterior means", np.round(post.mu_hat, 4))
print("sector prior   ", np.round(post.sector_prior, 4))

_, _, delta = ledoit_wolf_intensity(window)
print(f"shrinkage intensity {post.shrinkage:.3f} (direct {delta:.3f})")
print("eigenvalues    ", np.round(np.linalg.eigvalsh(post.sigma.values), 5))

# a tighter prior pulls harder
tight = posterior_at(panel, 59, part, PriorHyperparams(tau_sq=0.005**2, window_len=36))
print("tight prior    ", np.round(tight.mu_hat, 4))
