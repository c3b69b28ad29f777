"""Acceptance gate. Each test prints one PASS/FAIL line; a summary is printed at the end of the run."""
import math
import time

import numpy as np
import pytest

from bhrp.analytics import cagr_from_total, calmar_ratio, sharpe_ratio, weight_diagnostics
from bhrp.backtest import bhrp_decision, run_bhrp, run_rl_bhrp
from bhrp.bayes import PriorHyperparams
from bhrp.core import ReturnsPanel, SectorPartition, assemble_weights, decompose_weights
from bhrp.policy import PolicyParams, PPOConfig, logits_from_weights, policy_forward, weight_logit_jacobian
from bhrp.riskparity import (
    SolverConfig,
    bhrp_fixed_point,
    composite_sector_cov,
    rc_dispersion,
    risk_contributions,
    rp_penalties,
    rp_penalty_gradients,
    sector_log_newton,
)
from bhrp.rlenv import PortfolioEnv, RewardConfig
from bhrp.training import evaluate_policy, substream, train_ppo

from conftest import central_diff, random_partition, random_spd

RESULTS: dict[int, str] = {}


def record(n, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] #{n} {title}: {detail}"
    RESULTS[n] = line
    print(line)
    assert ok, line


def test_01_metric_anchors():
    vals = {
        "cagr(1.199612,67)": (cagr_from_total(1.199612, 67), 0.151637),
        "cagr(0.914063,67)": (cagr_from_total(0.914063, 67), 0.123310),
        "sharpe": (sharpe_ratio(0.157213, 0.173748), 0.904829),
        "calmar": (calmar_ratio(0.151637, -0.203308), 0.745850),
    }
    worst = max(abs(a - b) for a, b in vals.values())
    detail = ", ".join(f"{k}={a:.6f}" for k, (a, _) in vals.items())
    record(1, "metric-convention anchors", worst <= 1e-4, f"{detail}; max dev {worst:.1e}")


def test_02_log_newton_closed_form():
    rng = np.random.default_rng(2)
    errs, resids, iters = [], [], []
    for k in range(100):
        G = 2 + k % 7
        sig = np.exp(rng.uniform(np.log(0.05), np.log(2.0), G))
        kind = k % 3
        if kind == 0:
            b = np.full(G, 1.0 / G)
        elif kind == 1:
            b = np.concatenate([[0.8], np.full(G - 1, 0.2 / (G - 1))])
        else:
            b = rng.dirichlet(np.ones(G))
        res = sector_log_newton(np.diag(sig**2), b)
        exact = np.sqrt(b) / sig
        exact /= exact.sum()
        errs.append(np.max(np.abs(res.W - exact)))
        resids.append(res.final_residual)
        iters.append(res.iters)
    ok = max(errs) <= 1e-10 and max(resids) <= 1e-10 and np.median(iters) <= 12
    record(2, "log-Newton vs diagonal closed form", ok,
           f"max err {max(errs):.1e}, max KKT {max(resids):.1e}, median iters {np.median(iters):g}")


def test_03_risk_budgets_dense():
    rng = np.random.default_rng(3)
    worst = 0.0
    for k in range(100):
        S = random_spd(rng, 5)
        b = np.full(5, 0.2) if k % 2 == 0 else rng.dirichlet(np.ones(5))
        W = sector_log_newton(S, b).W
        rc = W * (S @ W)
        worst = max(worst, np.max(np.abs(rc / (W @ S @ W) - b)))
    record(3, "risk-budget satisfaction (G=5 dense)", worst <= 1e-8, f"max |RC/var - b| {worst:.1e}")


def test_04_two_level_fixed_point():
    t0 = time.perf_counter()
    part = SectorPartition(np.array([0, 0, 1, 1]), 2)
    S = np.diag([1.0, 1.0, 4.0, 4.0])
    res = bhrp_fixed_point(S, part)
    w_err = np.max(np.abs(res.weights.asset_w - [1 / 3, 1 / 3, 1 / 6, 1 / 6]))
    rc = risk_contributions(res.weights.asset_w, S)
    rc_spread = np.ptp(rc)
    rng = np.random.default_rng(4)
    worst = 0.0
    all_conv = True
    for _ in range(50):
        p = random_partition(rng, 8, 3)
        Sr = random_spd(rng, 8)
        r = bhrp_fixed_point(Sr, p)
        all_conv &= r.converged
        worst = max(worst, rc_dispersion(r.weights.asset_w, Sr, p))
    elapsed = time.perf_counter() - t0
    ok = res.converged and w_err <= 1e-8 and rc_spread <= 1e-10 and worst <= 1e-10 and all_conv and elapsed < 1.0
    record(4, "two-level fixed point", ok,
           f"fixture err {w_err:.1e}, RC spread {rc_spread:.1e}, max dispersion (50 dense) {worst:.1e}, "
           f"{elapsed:.2f}s")


def test_05_conservation_and_decomposition():
    rng = np.random.default_rng(5)
    e1 = e2 = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 16))
        g = int(rng.integers(1, min(n, 6) + 1))
        part = random_partition(rng, n, g)
        S = random_spd(rng, n)
        W = rng.dirichlet(np.ones(g))
        eta = [rng.dirichlet(np.ones(m)) for m in part.sizes]
        w = assemble_weights(W, eta, part).asset_w
        var = w @ S @ w
        e1 = max(e1, abs(risk_contributions(w, S).sum() - var) / var)
        e2 = max(e2, abs(W @ composite_sector_cov(S, eta, part) @ W - var) / var)
    record(5, "RC conservation and variance decomposition", max(e1, e2) <= 1e-10,
           f"max rel err {e1:.1e} / {e2:.1e}")


def test_06_gradients():
    rng = np.random.default_rng(6)
    worst_pen = worst_jac = 0.0
    for _ in range(100):
        part = random_partition(rng, 10, 3)
        S = random_spd(rng, 10)
        w = rng.dirichlet(np.ones(10))
        grads = rp_penalty_gradients(w, S, part)
        for j in range(2):
            fd = central_diff(lambda x: rp_penalties(x, S, part)[j], w)
            worst_pen = max(worst_pen, np.max(np.abs(grads[j] - fd)) / max(np.max(np.abs(fd)), 1e-12))
    for _ in range(100):
        part = random_partition(rng, 8, 3)
        x = rng.standard_normal(11)
        J = weight_logit_jacobian(policy_forward(x[:3], x[3:], part), part)
        fd = np.array([central_diff(lambda v: policy_forward(v[:3], v[3:], part).asset_w[i], x)
                       for i in range(8)])
        worst_jac = max(worst_jac, np.max(np.abs(J - fd)) / np.max(np.abs(fd)))
    record(6, "penalty gradients and softmax Jacobian vs finite differences",
           max(worst_pen, worst_jac) <= 1e-6, f"max rel err {worst_pen:.1e} / {worst_jac:.1e}")


def test_07_bijections():
    rng = np.random.default_rng(7)
    rt = lg = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 16))
        part = random_partition(rng, n, int(rng.integers(1, n + 1)))
        w = rng.dirichlet(np.ones(n))
        w = np.maximum(w, 1e-8)
        w /= w.sum()
        rt = max(rt, np.max(np.abs(assemble_weights(*decompose_weights(w, part), part).asset_w - w)))
        psi, phi = logits_from_weights(w, part)
        lg = max(lg, np.max(np.abs(policy_forward(psi, phi, part).asset_w - w)))
        # the other direction recovers logits up to one shift per group
        x = rng.standard_normal(part.n_sectors + n)
        p2, f2 = logits_from_weights(policy_forward(x[:part.n_sectors], x[part.n_sectors:], part).asset_w, part)
        d = [np.ptp(p2 - x[:part.n_sectors])] + [np.ptp(f2[m] - x[part.n_sectors:][m]) for m in part.members]
        lg = max(lg, max(d))
    record(7, "weight and logit bijections", max(rt, lg) <= 1e-12, f"round trip {rt:.1e}, logits {lg:.1e}")


def _rl_market(seed, T):
    rng = np.random.default_rng(seed)
    R = np.array([0.02, 0.02, 0.0, 0.0]) + 0.05 * rng.standard_normal((T, 4))
    return ReturnsPanel(np.arange(T), ("a", "b", "c", "d"), R)


def test_08_rl_directional():
    part = SectorPartition(np.array([0, 0, 1, 1]), 2)
    prior = PriorHyperparams()
    reward_cfg = RewardConfig(cost_rate=0.0005, risk_weight=0.5, split=0.5)
    n_train, n_test = 240, 120
    passes, rows = 0, []
    t0 = time.perf_counter()
    for seed in range(5):
        panel = _rl_market(seed, n_train + n_test + 1)
        env = PortfolioEnv(panel, part, prior, reward_cfg, stop=n_train)
        cfg = PPOConfig(seed=seed, init_log_std=math.log(0.5))
        params, _ = train_ppo(env, cfg, 200)
        held_out = PortfolioEnv(panel, part, prior, reward_cfg, start=n_train, stop=n_train + n_test + 1)
        _, w, _ = evaluate_policy(held_out, params)
        untrained = PolicyParams.init(env.state_dim, part, cfg.hidden, cfg.init_log_std, substream(seed, "init"))
        _, w0, _ = evaluate_policy(held_out, untrained)
        s1, s0 = w[:, :2].sum(axis=1).mean(), w0[:, :2].sum(axis=1).mean()
        assert w.shape[0] == n_test
        passes += (s1 > 0.55) and (s1 >= s0 + 0.05)
        rows.append(f"{s1:.3f}")
    elapsed = time.perf_counter() - t0
    record(8, "RL directional test", passes >= 4 and elapsed < 300,
           f"{passes}/5 seeds pass; sector-1 weight {', '.join(rows)} (untrained 0.500); {elapsed:.0f}s")


def test_09_backtest_accounting():
    rng = np.random.default_rng(9)
    R = np.array([0.01, 0.03, 0.05, 0.08, 0.04]) * rng.standard_normal((60, 5)) + 0.005
    dates = np.arange("2015-01", "2020-01", dtype="datetime64[M]")
    panel = ReturnsPanel(dates, list("abcde"), R)
    part = SectorPartition(np.array([0, 0, 1, 1, 2]), 3)
    prior = PriorHyperparams(window_len=24)
    c = 0.0005
    rows = np.arange(24, 59)
    rep = run_bhrp(panel, part, prior, rows, c)
    W = rep.weights.to_numpy()
    prev = np.vstack([np.full(5, 0.2), W[:-1]])
    r = np.einsum("ij,ij->i", W, R[rows + 1]) - c * np.abs(W - prev).sum(axis=1)
    acc = np.max(np.abs(rep.wealth.to_numpy() - np.cumprod(1 + r)) / np.cumprod(1 + r))

    params = PolicyParams.init(3 * 5 + 15, part, 16, math.log(0.1), substream(9, "init"),
                               meta={"train_end": str(dates[23])})
    params.actor["w2"] = 0.5 * rng.standard_normal(params.actor["w2"].shape)
    rl = run_rl_bhrp(panel, part, prior, rows, params, RewardConfig(cost_rate=c))
    Wr = rl.weights.to_numpy()
    prev = np.vstack([np.full(5, 0.2), Wr[:-1]])
    rr = np.einsum("ij,ij->i", Wr, R[rows + 1]) - c * np.abs(Wr - prev).sum(axis=1)
    acc = max(acc, np.max(np.abs(rl.wealth.to_numpy() - np.cumprod(1 + rr)) / np.cumprod(1 + rr)))

    same = True
    for t in (24, 35, 47, 58):
        cut = ReturnsPanel(dates[:t + 1], list("abcde"), R[:t + 1])
        a, _ = bhrp_decision(panel, t, part, prior, SolverConfig())
        b, _ = bhrp_decision(cut, t, part, prior, SolverConfig())
        same &= np.array_equal(a, b)
        # policy input at t also depends only on rows <= t
        env_full = PortfolioEnv(panel, part, prior, start=t, stop=t + 1 + (t < 59))
        env_cut = PortfolioEnv(ReturnsPanel(dates[:t + 2], list("abcde"), R[:t + 2]), part, prior,
                               start=t, stop=t + 2)
        if t + 1 < 60:
            same &= np.array_equal(env_full.reset(), env_cut.reset())
    record(9, "backtest accounting and no look-ahead", acc <= 1e-12 and same,
           f"max rel wealth err {acc:.1e}; truncation-invariant decisions: {same}")


def test_10_diagnostics_ranges():
    rng = np.random.default_rng(10)
    R = 0.05 * rng.standard_normal((60, 6))
    R[30:35, 2] = np.nan
    panel = ReturnsPanel(np.arange(60), list("abcdef"), R)
    part = SectorPartition(np.array([0, 0, 1, 1, 2, 2]), 3)
    rep = run_bhrp(panel, part, PriorHyperparams(window_len=24), np.arange(24, 59), 0.0005)
    runs = [rep.weights.to_numpy(), rng.dirichlet(np.full(30, 0.2), 40)]
    ok = True
    for W in runs:
        for k in (1, 3, 15, 50):
            d = weight_diagnostics(W, k)
            ok &= bool(np.all((d.turnover >= 0) & (d.turnover <= 2)))
            ok &= bool(np.all((d.persistence >= 0) & (d.persistence <= 1 + 1e-12)))
            ok &= bool(np.all((d.topk_share >= 0) & (d.topk_share <= 1 + 1e-12)))
    alt = weight_diagnostics(np.array([[1.0, 0.0], [0.0, 1.0]] * 6))
    pair = (alt.mean_turnover, alt.mean_persistence)
    record(10, "weight diagnostics ranges", ok and pair == (2.0, 0.0),
           f"ranges hold: {ok}; alternation (turnover, cosine) = {pair}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
