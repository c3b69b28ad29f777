import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.covariance import LedoitWolf

from bhrp.bayes import (
    PriorHyperparams,
    ledoit_wolf_intensity,
    posterior_at,
    shrink_mean,
    shrinkage_cov,
    update_posterior,
)
from bhrp.core import DomainError, ReturnsPanel, SectorPartition


def panel(R):
    R = np.asarray(R, dtype=float)
    return ReturnsPanel(np.arange(R.shape[0]), [f"a{i}" for i in range(R.shape[1])], R)


def test_flat_prior_limit():
    assert shrink_mean(0.013, 0.002, 24, 0.5, np.inf) == 0.013


def test_hand_shrinkage():
    assert shrink_mean(1.0, 1.0, 1, 0.0, 1.0) == 0.5


def test_flat_prior_in_posterior(rng):
    part = SectorPartition(np.array([0, 0, 1]), 2)
    R = 0.05 * rng.standard_normal((30, 3))
    post = update_posterior(panel(R), part, PriorHyperparams(tau_sq=np.inf))
    np.testing.assert_allclose(post.mu_hat, R.mean(axis=0), rtol=1e-15)


def test_shared_sector_mean_is_fixed_point():
    part = SectorPartition(np.array([0, 0, 1]), 2)
    base = np.array([[0.01, -0.01], [0.03, 0.01], [0.02, 0.0]])
    R = np.column_stack([base[:, 0], base[:, 0][::-1], base[:, 1]])
    post = update_posterior(panel(R), part, PriorHyperparams())
    np.testing.assert_allclose(post.sector_prior, [0.02, 0.0], atol=1e-15)
    np.testing.assert_allclose(post.mu_hat, [0.02, 0.02, 0.0], atol=1e-15)


def test_mu_between_prior_and_sample(rng):
    part = SectorPartition(np.array([0, 0, 0, 1, 1]), 2)
    for _ in range(20):
        R = 0.02 + 0.05 * rng.standard_normal((24, 5))
        post = update_posterior(panel(R), part, PriorHyperparams())
        lo = np.minimum(post.sector_prior[part.sector_of], R.mean(axis=0))
        hi = np.maximum(post.sector_prior[part.sector_of], R.mean(axis=0))
        assert np.all(post.mu_hat >= lo - 1e-15) and np.all(post.mu_hat <= hi + 1e-15)


def test_inactive_asset_masked():
    part = SectorPartition(np.array([0, 0, 1]), 2)
    R = np.array([[0.01, np.nan, 0.02], [0.02, 0.03, 0.01], [0.0, np.nan, -0.01]])
    post = update_posterior(panel(R), part, PriorHyperparams())
    assert post.active.tolist() == [True, False, True]
    assert post.mu_hat[1] == 0.0
    assert post.sigma.values[1, 0] == 0.0 and post.sigma.values[1, 1] > 0


@pytest.mark.parametrize("shape", [(40, 5), (12, 8), (6, 10)])
def test_shrinkage_matches_sklearn(rng, shape):
    X = 0.05 * rng.standard_normal(shape) + 0.01 * rng.standard_normal((shape[0], 1))
    ours, delta = shrinkage_cov(X, return_intensity=True)
    lw = LedoitWolf().fit(X)
    np.testing.assert_allclose(ours.values, lw.covariance_, atol=1e-14)
    assert delta == pytest.approx(lw.shrinkage_, abs=1e-12)


def test_target_equals_sample():
    # columns with equal variance and zero sample correlation
    X = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]], dtype=float) * 0.1
    S, nu, _ = ledoit_wolf_intensity(X)
    np.testing.assert_allclose(S, nu * np.eye(2), atol=1e-18)
    np.testing.assert_allclose(shrinkage_cov(X).values, S, atol=1e-18)


def test_singular_sample_is_made_pd(rng):
    a = 0.05 * rng.standard_normal(20)
    X = np.column_stack([a, 2 * a])
    out = shrinkage_cov(X)
    assert np.linalg.eigvalsh(out.values)[0] > 0


def test_scalar_case(rng):
    x = 0.05 * rng.standard_normal((15, 1))
    np.testing.assert_allclose(shrinkage_cov(x).values, [[x.var()]], rtol=1e-14)
    tiny = 1e-9 * np.array([[1.0], [-1.0], [1.0]])
    assert shrinkage_cov(tiny, variance_floor=1e-6).values[0, 0] == 1e-6


def test_constant_window_warns():
    with pytest.warns(RuntimeWarning):
        out = shrinkage_cov(np.ones((5, 3)), variance_floor=1e-8)
    np.testing.assert_allclose(out.values, 1e-8 * np.eye(3))


def test_short_window_rejected():
    with pytest.raises(DomainError):
        shrinkage_cov(np.ones((1, 3)))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 30), st.integers(1, 12))
def test_intensity_in_unit_interval_and_pd(seed, T, N):
    rng = np.random.default_rng(seed)
    X = 0.05 * rng.standard_normal((T, N))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        out, delta = shrinkage_cov(X, return_intensity=True)
    assert 0.0 <= delta <= 1.0
    np.testing.assert_array_equal(out.values, out.values.T)
    assert np.linalg.eigvalsh(out.values)[0] > 0


def test_deterministic(rng):
    part = SectorPartition(np.array([0, 1, 1]), 2)
    P = panel(0.05 * rng.standard_normal((20, 3)))
    a = update_posterior(P, part, PriorHyperparams())
    b = update_posterior(P, part, PriorHyperparams())
    assert np.array_equal(a.mu_hat, b.mu_hat) and np.array_equal(a.sigma.values, b.sigma.values)


def test_posterior_at_uses_trailing_window(rng):
    part = SectorPartition(np.array([0, 1]), 2)
    P = panel(0.05 * rng.standard_normal((50, 2)))
    prior = PriorHyperparams(window_len=12)
    post = posterior_at(P, 30, part, prior)
    ref = update_posterior(P.rows(19, 31), part, prior)
    assert np.array_equal(post.sigma.values, ref.sigma.values)
    assert post.as_of == P.dates[30]
