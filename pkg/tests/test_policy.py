import math

import numpy as np
import pytest

from bhrp.core import DomainError, SectorPartition
from bhrp.policy import (
    LOG_STD_MAX,
    LOG_STD_MIN,
    PolicyParams,
    PPOConfig,
    RolloutBatch,
    actor_loss_and_grads,
    batch_weights,
    critic_loss_and_grads,
    gae_advantages,
    load_checkpoint,
    logits_from_weights,
    policy_forward,
    ppo_update,
    sample_action,
    save_checkpoint,
    weight_logit_jacobian,
)

from conftest import central_diff, random_partition


# ---- factorized softmax

def test_zero_logits_uniform():
    part = SectorPartition(np.array([0, 0, 0, 1]), 2)
    hw = policy_forward(np.zeros(2), np.zeros(4), part)
    np.testing.assert_allclose(hw.asset_w, [1 / 6, 1 / 6, 1 / 6, 1 / 2])


def test_hand_softmax():
    part = SectorPartition(np.array([0, 1]), 2)
    hw = policy_forward([math.log(2), 0.0], [[0.0], [0.0]], part)
    np.testing.assert_allclose(hw.sector_w, [2 / 3, 1 / 3])
    np.testing.assert_allclose(hw.asset_w, [2 / 3, 1 / 3])


def test_shift_invariance(rng):
    part = random_partition(rng, 6, 3)
    psi, phi = rng.standard_normal(3), rng.standard_normal(6)
    a = policy_forward(psi, phi, part)
    b = policy_forward(psi + 4.2, phi, part)
    np.testing.assert_allclose(a.sector_w, b.sector_w, atol=1e-15)


def test_non_finite_logits():
    part = SectorPartition(np.array([0, 1]), 2)
    with pytest.raises(DomainError):
        policy_forward([np.nan, 0.0], [0.0, 0.0], part)


def test_logits_from_uniform():
    part = SectorPartition(np.array([0, 0, 1, 1, 1]), 2)
    psi, phi = logits_from_weights(np.full(5, 0.2), part)
    for m in part.members:
        assert np.ptp(phi[m]) < 1e-15


def test_logits_hand():
    part = SectorPartition(np.array([0, 0, 1]), 2)
    psi, phi = logits_from_weights([0.2, 0.3, 0.5], part)
    np.testing.assert_allclose(psi, np.log([0.5, 0.5]))
    np.testing.assert_allclose(phi[:2], np.log([0.4, 0.6]))
    np.testing.assert_allclose(policy_forward(psi, phi, part).asset_w, [0.2, 0.3, 0.5], atol=1e-15)


def test_logits_reject_boundary():
    part = SectorPartition(np.array([0, 0, 1]), 2)
    with pytest.raises(DomainError):
        logits_from_weights([0.0, 0.5, 0.5], part)


def test_round_trip(rng):
    for _ in range(100):
        part = random_partition(rng, 9, 3)
        w = rng.dirichlet(np.ones(9))
        psi, phi = logits_from_weights(w, part)
        assert np.max(np.abs(policy_forward(psi, phi, part).asset_w - w)) <= 1e-12


def test_batch_weights_matches_forward(rng):
    part = random_partition(rng, 7, 3)
    L = rng.standard_normal((5, 10))
    out = batch_weights(L, part)
    for row, lg in zip(out, L):
        np.testing.assert_allclose(row, policy_forward(lg[:3], lg[3:], part).asset_w, atol=1e-15)


# ---- jacobian

def test_jacobian_hand():
    part = SectorPartition(np.array([0, 1]), 2)
    J = weight_logit_jacobian(policy_forward(np.zeros(2), np.zeros(2), part), part)
    assert J[0, 0] == pytest.approx(0.25) and J[0, 1] == pytest.approx(-0.25)


def test_jacobian_columns_sum_to_zero(rng):
    part = random_partition(rng, 8, 3)
    J = weight_logit_jacobian(policy_forward(rng.standard_normal(3), rng.standard_normal(8), part), part)
    np.testing.assert_allclose(J.sum(axis=0), 0.0, atol=1e-15)


def test_jacobian_finite_difference(rng):
    for _ in range(100):
        part = random_partition(rng, 7, 3)
        x = rng.standard_normal(10)
        J = weight_logit_jacobian(policy_forward(x[:3], x[3:], part), part)
        for i in range(7):
            fd = central_diff(lambda v: policy_forward(v[:3], v[3:], part).asset_w[i], x)
            assert np.max(np.abs(J[i] - fd)) <= 1e-6 * max(np.max(np.abs(fd)), 1e-12)


# ---- sampling

def _params(part, state_dim=6, log_std=math.log(0.1), seed=0):
    return PolicyParams.init(state_dim, part, hidden=8, init_log_std=log_std,
                             rng=np.random.default_rng(seed))


def test_floor_noise_sampling():
    part = SectorPartition(np.array([0, 0, 1]), 2)
    p = _params(part, log_std=-50.0)
    assert np.all(p.log_std == LOG_STD_MIN)
    s = np.ones(6)
    a = sample_action(p, s, np.random.default_rng(1))
    b = sample_action(p, s, np.random.default_rng(2))
    np.testing.assert_allclose(a.weights.asset_w, b.weights.asset_w, atol=1e-2)
    mean = sample_action(p, s, deterministic=True)
    expect = -p.log_std.sum() - 0.5 * p.log_std.size * math.log(2 * math.pi)
    assert mean.log_prob == pytest.approx(expect)


def test_seeded_sampling_bit_identical():
    part = SectorPartition(np.array([0, 0, 1]), 2)
    p = _params(part)
    a = sample_action(p, np.ones(6), np.random.default_rng(7))
    b = sample_action(p, np.ones(6), np.random.default_rng(7))
    assert np.array_equal(a.logits, b.logits) and a.log_prob == b.log_prob


def test_sample_std_monte_carlo():
    part = SectorPartition(np.array([0, 1, 1]), 2)
    p = _params(part, log_std=math.log(0.3))
    rng = np.random.default_rng(3)
    draws = np.array([sample_action(p, np.zeros(6), rng).logits for _ in range(10_000)])
    np.testing.assert_allclose(draws.std(axis=0), 0.3, rtol=0.05)


def test_every_sample_feasible(rng):
    part = random_partition(rng, 6, 2)
    p = _params(part, state_dim=4, log_std=0.0)
    for _ in range(200):
        w = sample_action(p, rng.standard_normal(4), rng).weights.asset_w
        assert np.all(w >= 0) and abs(w.sum() - 1) < 1e-12


# ---- GAE

def test_gae_lambda_zero(rng):
    r, v = rng.standard_normal(6), rng.standard_normal(7)
    adv, tgt = gae_advantages(r, v, 0.9, 0.0)
    np.testing.assert_allclose(adv, r + 0.9 * v[1:] - v[:-1], atol=1e-15)
    np.testing.assert_allclose(tgt, adv + v[:-1])


def test_gae_monte_carlo_limit(rng):
    r = rng.standard_normal(6)
    adv, _ = gae_advantages(r, np.zeros(7), 1.0, 1.0)
    np.testing.assert_allclose(adv, np.cumsum(r[::-1])[::-1], atol=1e-14)


def test_gae_brute_force(rng):
    T, g, lam = 12, 0.97, 0.9
    r, v = rng.standard_normal(T), rng.standard_normal(T + 1)
    delta = r + g * v[1:] - v[:-1]
    brute = [sum((g * lam) ** k * delta[t + k] for k in range(T - t)) for t in range(T)]
    np.testing.assert_allclose(gae_advantages(r, v, g, lam)[0], brute, atol=1e-13)


def test_gae_resets_at_done():
    adv, _ = gae_advantages([1.0, 1.0], [0.0, 5.0, 5.0], 1.0, 1.0, dones=[1, 0])
    assert adv[0] == pytest.approx(1.0 - 0.0)


def test_gae_empty():
    with pytest.raises(ValueError):
        gae_advantages([], [0.0])


# ---- PPO

def _batch(part, rng, B=40, state_dim=6, adv=None):
    p = _params(part, state_dim)
    p.actor["w2"] = 0.1 * rng.standard_normal(p.actor["w2"].shape)
    p.critic["w2"] = 0.1 * rng.standard_normal(p.critic["w2"].shape)
    S = rng.standard_normal((B, state_dim))
    acts = [sample_action(p, s, rng) for s in S]
    L = np.array([a.logits for a in acts])
    lp = np.array([a.log_prob for a in acts])
    A = rng.standard_normal(B) if adv is None else adv
    return p, RolloutBatch(S, L, lp, A, rng.standard_normal(B))


def test_actor_gradients_finite_difference(rng):
    part = SectorPartition(np.array([0, 0, 1]), 2)
    p, b = _batch(part, rng)
    # perturb so some ratios are clipped
    p.actor["b2"] += 0.02 * rng.standard_normal(p.actor["b2"].shape)
    _, grads, _ = actor_loss_and_grads(p, b.states, b.logits, b.log_probs, b.advantages, 0.2, 0.01)
    for name in ("w1", "b2", "log_std"):
        arr = p.log_std if name == "log_std" else p.actor[name]
        flat = arr.ravel()

        def f(x, name=name, arr=arr):
            q = p.copy()
            target = q.log_std if name == "log_std" else q.actor[name]
            target[...] = x.reshape(arr.shape)
            return actor_loss_and_grads(q, b.states, b.logits, b.log_probs, b.advantages, 0.2, 0.01)[0]

        fd = central_diff(f, flat.copy(), h=1e-7)
        np.testing.assert_allclose(grads[name].ravel(), fd, atol=1e-7)


def test_critic_gradients_finite_difference(rng):
    part = SectorPartition(np.array([0, 1]), 2)
    p, b = _batch(part, rng)
    _, grads = critic_loss_and_grads(p, b.states, b.value_targets)
    for name in ("w1", "w2"):
        shape = p.critic[name].shape

        def f(x, name=name):
            q = p.copy()
            q.critic[name] = x.reshape(shape)
            return critic_loss_and_grads(q, b.states, b.value_targets)[0]

        fd = central_diff(f, p.critic[name].ravel().copy(), h=1e-7)
        np.testing.assert_allclose(grads[name].ravel(), fd, atol=1e-8)


def test_zero_advantage_entropy_only(rng):
    part = SectorPartition(np.array([0, 1]), 2)
    p, b = _batch(part, rng, adv=np.zeros(40))
    _, grads, _ = actor_loss_and_grads(p, b.states, b.logits, b.log_probs, b.advantages, 0.2, 0.01)
    np.testing.assert_allclose(grads["w2"], 0.0)
    np.testing.assert_allclose(grads["log_std"], -0.01)
    cfg = PPOConfig(epochs=50, learning_rate=0.05)
    new, _ = ppo_update(p, b, cfg)
    assert np.all(new.log_std > p.log_std)
    for _ in range(5):
        new, _ = ppo_update(new, b, cfg)
    np.testing.assert_allclose(new.log_std, LOG_STD_MAX)


def test_identity_step(rng):
    part = SectorPartition(np.array([0, 1]), 2)
    p, b = _batch(part, rng)
    cfg = PPOConfig(epochs=1, learning_rate=0.0, critic_learning_rate=0.0)
    new, stats = ppo_update(p, b, cfg)
    for k in p.actor:
        assert np.array_equal(new.actor[k], p.actor[k])
    assert np.array_equal(new.log_std, p.log_std)
    assert stats["clip_frac"] == 0.0 and abs(stats["kl"]) < 1e-12


def test_update_does_not_mutate_input(rng):
    part = SectorPartition(np.array([0, 1]), 2)
    p, b = _batch(part, rng)
    before = p.copy()
    new, stats = ppo_update(p, b, PPOConfig())
    assert np.array_equal(p.actor["w2"], before.actor["w2"])
    assert not np.array_equal(new.actor["w2"], p.actor["w2"])
    assert not stats["aborted"]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_aborts(rng):
    part = SectorPartition(np.array([0, 1]), 2)
    p, b = _batch(part, rng)
    b.advantages[0] = np.inf
    b.advantages[1] = -np.inf
    new, stats = ppo_update(p, b, PPOConfig())
    assert stats["aborted"] and new is p


def test_config_validation():
    with pytest.raises(ValueError):
        PPOConfig(clip_ratio=1.5)
    with pytest.raises(ValueError):
        PPOConfig(epochs=0)


def test_checkpoint_round_trip(tmp_path, rng):
    part = SectorPartition(np.array([0, 0, 1]), 2)
    p, _ = _batch(part, rng)
    p.meta["train_end"] = "2019-12-31"
    path = save_checkpoint(p, tmp_path / "p.npz", PPOConfig())
    q = load_checkpoint(path)
    for k in p.actor:
        assert np.array_equal(p.actor[k], q.actor[k])
    assert np.array_equal(p.log_std, q.log_std)
    assert q.meta["train_end"] == "2019-12-31" and q.meta["ppo_config"]["clip_ratio"] == 0.2
    s = rng.standard_normal(6)
    assert np.array_equal(sample_action(p, s, deterministic=True).logits,
                          sample_action(q, s, deterministic=True).logits)
