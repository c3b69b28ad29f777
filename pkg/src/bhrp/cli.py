"""Command-line entry point: ``solve``, ``backtest``, ``train`` and ``report``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 solver
non-convergence under ``solve --strict``.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .analytics import metrics_table, performance_metrics, weight_diagnostics
from .backtest import (
    BacktestReport,
    bhrp_decision,
    run_benchmark,
    run_bhrp,
    run_rl_bhrp,
    universe_schedule,
)
from .bayes import posterior_at
from .config import ConfigError, RunConfig
from .core import BHRPError, SolverError
from .io import DataError, load_prices, load_sector_map, monthly_returns, read_matrix_csv
from .policy import load_checkpoint, save_checkpoint
from .riskparity import bhrp_fixed_point, risk_contributions
from .rlenv import PortfolioEnv
from .training import train_ppo

logger = logging.getLogger("bhrp")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_SOLVER = 0, 2, 3, 4


class SolverFailure(Exception):
    pass


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out: Path, command: str, cfg: RunConfig, inputs, outputs) -> Path:
    manifest = {
        "command": command,
        "config": cfg.data,
        "config_hash": cfg.digest(),
        "seed": cfg["seed"],
        "versions": {
            "bhrp": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "pandas": pd.__version__,
        },
        "inputs": {str(p): _sha256(p) for p in inputs if p},
        "outputs": sorted(str(p) for p in outputs),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return path


class Market:
    """Everything derived from the prices and sector-map files."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        daily = load_prices(cfg["prices"])
        self.smap = load_sector_map(cfg["sector_map"], daily.tickers)
        stocks = [t for t in self.smap.tickers if t in daily.close.columns]
        absent = [t for t in self.smap.tickers if t not in daily.close.columns]
        if absent:
            logger.warning("mapped tickers with no prices are ignored: %s", absent)
        if not stocks:
            raise DataError("no mapped ticker has prices")
        self.daily = daily
        self.stocks = stocks
        self.part = self.smap.partition(stocks)
        self.panel, self.partial = monthly_returns(daily.close[stocks])
        self.etfs = [e for e in self.smap.etfs if e in daily.close.columns]
        self._universe = None

    @property
    def dates(self) -> pd.DatetimeIndex:
        return pd.DatetimeIndex(self.panel.dates)

    def universe(self) -> np.ndarray | None:
        if not self.cfg["screen"]["enabled"]:
            return None
        if self._universe is None:
            sched = universe_schedule(self.daily.close[self.stocks], self.daily.volume[self.stocks],
                                      self.dates, self.cfg.screen(), self.smap.sector_of)
            self._universe = sched[self.stocks].to_numpy()
        return self._universe

    def test_rows(self) -> np.ndarray:
        d = self.dates
        start, end = pd.Timestamp(self.cfg["train_end"]), pd.Timestamp(self.cfg["test_end"])
        rows = [t for t in range(len(d) - 1) if d[t] >= start and d[t + 1] <= end]
        if not rows:
            raise DataError("no test decisions between train_end and test_end")
        return np.array(rows)

    def train_rows(self) -> np.ndarray:
        d = self.dates
        start, end = pd.Timestamp(self.cfg["train_start"]), pd.Timestamp(self.cfg["train_end"])
        first = max(self.cfg["lags"] - 1, 1)
        rows = [t for t in range(first, len(d) - 1) if d[t] >= start and d[t + 1] < end]
        if len(rows) < 2:
            raise DataError("fewer than two training decisions between train_start and train_end")
        return np.array(rows)

    def partial_final(self, rows) -> bool:
        return bool(self.partial and rows[-1] + 1 == self.panel.n_periods - 1)

    def etf_panel(self):
        if not self.etfs:
            raise DataError("none of the sector ETFs has prices")
        panel, _ = monthly_returns(self.daily.close[self.etfs])
        return panel


def _write_csv(path: Path, header, rows) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def _fmt(x) -> str:
    return repr(float(x))


def write_report_files(rep: BacktestReport, out: Path) -> list[Path]:
    files = [
        _write_csv(out / "returns.csv", ["date", "return", "cost", "wealth"],
                   [[d.date().isoformat(), _fmt(r), _fmt(c), _fmt(w)] for d, r, c, w in
                    zip(rep.returns.index, rep.returns, rep.costs, rep.wealth)]),
        _write_csv(out / "weights.csv", ["date", *rep.weights.columns],
                   [[d.date().isoformat(), *map(_fmt, row)] for d, row in
                    zip(rep.weights.index, rep.weights.to_numpy())]),
    ]
    ev = out / "events.json"
    ev.write_text(json.dumps({"strategy": rep.strategy, "partial_final": bool(rep.partial_final),
                              "events": rep.events}, indent=2) + "\n")
    files.append(ev)
    return files


def run_strategy(market: Market, strategy: str, checkpoint=None) -> BacktestReport:
    cfg = market.cfg
    rows = market.test_rows()
    partial = market.partial_final(rows)
    if strategy == "benchmark":
        etf = market.etf_panel()
        pos = {d: i for i, d in enumerate(etf.dates)}
        erows = np.array([pos[d] for d in market.panel.dates[rows]])
        return run_benchmark(etf, erows, partial)
    if strategy == "bhrp":
        return run_bhrp(market.panel, market.part, cfg.prior(), rows, cfg.reward().cost_rate,
                        cfg.solver(), market.universe(), partial, cfg["spectral_bound"])
    params = load_checkpoint(checkpoint)
    return run_rl_bhrp(market.panel, market.part, cfg.prior(), rows, params, cfg.reward(),
                       cfg["lags"], market.universe(), partial, cfg["spectral_bound"])


def cmd_solve(cfg: RunConfig, args) -> int:
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    if cfg["covariance"]:
        names, sigma = read_matrix_csv(cfg["covariance"])
        smap = load_sector_map(cfg["sector_map"])
        part = smap.partition(names)
        res = bhrp_fixed_point(sigma, part, cfg.solver())
        w = res.weights.asset_w
        tickers = names
        inputs = [cfg["covariance"], cfg["sector_map"]]
    else:
        market = Market(cfg)
        date = pd.Timestamp(cfg["date"])
        d = market.dates
        t = int(np.searchsorted(d, date, side="right")) - 1
        if t < 0:
            raise DataError(f"no month-end on or before {date.date()}")
        uni = market.universe()
        w, res = bhrp_decision(market.panel, t, market.part, cfg.prior(), cfg.solver(),
                               None if uni is None else uni[t], cfg["spectral_bound"])
        tickers, part = market.stocks, market.part
        sigma = posterior_at(market.panel, t, part, cfg.prior(), cfg["spectral_bound"]).sigma.values
        inputs = [cfg["prices"], cfg["sector_map"]]
    labels = [part.sector_names[g] for g in part.sector_of]
    rc = risk_contributions(w, sigma)
    files = [_write_csv(out / "weights.csv", ["ticker", "sector", "weight", "risk_contribution"],
                        [[tk, s, _fmt(x), _fmt(r)] for tk, s, x, r in zip(tickers, labels, w, rc)])]
    summary = {"converged": bool(res.converged), "iterations": int(res.iters),
               "rc_dispersion": float(res.rc_dispersion), "l1_step": float(res.l1_step)}
    (out / "solve.json").write_text(json.dumps(summary, indent=2) + "\n")
    files.append(out / "solve.json")
    write_manifest(out, "solve", cfg, inputs, files)
    for tk, x in zip(tickers, w):
        print(f"{tk}\t{x:.10f}")
    if not res.converged:
        logger.warning("solver did not converge after %d iterations", res.iters)
        if args.strict:
            raise SolverFailure("solver did not converge")
    return EXIT_OK


def cmd_backtest(cfg: RunConfig, args) -> int:
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    market = Market(cfg)
    rep = run_strategy(market, cfg["strategy"], cfg["checkpoint"])
    files = write_report_files(rep, out)
    write_manifest(out, "backtest", cfg, [cfg["prices"], cfg["sector_map"], cfg["checkpoint"]], files)
    print(f"{rep.strategy}: {len(rep.returns)} periods, final wealth {rep.wealth.iloc[-1]:.6f}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    market = Market(cfg)
    rows = market.train_rows()
    # the last realized return used in training is dated rows[-1] + 1
    stop = int(rows[-1]) + 2
    env = PortfolioEnv(market.panel, market.part, cfg.prior(), cfg.reward(), cfg["lags"],
                       start=int(rows[0]), stop=stop, universe=market.universe(),
                       spectral_bound=cfg["spectral_bound"])
    meta = {"seed": cfg["seed"], "train_start": str(market.dates[rows[0]].date()),
            "train_end": str(market.dates[stop - 1].date()), "tickers": market.stocks,
            "sectors": list(market.part.sector_names), "lags": cfg["lags"]}
    ppo = cfg.ppo()
    params, log = train_ppo(env, ppo, cfg["iterations"], meta=meta)
    ckpt = save_checkpoint(params, out / "policy.npz", ppo)
    keys = ["actor_loss", "critic_loss", "clip_frac", "kl", "entropy"]
    log_file = _write_csv(out / "training_log.csv", ["iteration", "mean_reward", *keys],
                          [[k, _fmt(r), *[_fmt(s.get(key, np.nan)) for key in keys]]
                           for k, (r, s) in enumerate(zip(log.mean_reward, log.stats))])
    write_manifest(out, "train", cfg, [cfg["prices"], cfg["sector_map"]], [ckpt, log_file])
    print(f"trained {cfg['iterations']} iterations on {meta['train_start']}..{meta['train_end']} -> {ckpt}")
    return EXIT_OK


def _read_run(path: Path) -> tuple[str, pd.Series, pd.DataFrame]:
    try:
        strategy = json.loads((path / "events.json").read_text())["strategy"]
        rets = pd.read_csv(path / "returns.csv", parse_dates=["date"], index_col="date")["return"]
        weights = pd.read_csv(path / "weights.csv", parse_dates=["date"], index_col="date")
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"{path}: not a backtest output directory ({exc})") from None
    return strategy, rets, weights


def topk_stack(weights: pd.DataFrame, k: int) -> pd.DataFrame:
    diag = weight_diagnostics(weights.to_numpy(), k)
    names = [weights.columns[i] for i in diag.top_set]
    stack = weights[names].copy()
    stack["Other"] = (1.0 - stack.sum(axis=1)).clip(lower=0.0)
    return stack


def cmd_report(cfg: RunConfig, args) -> int:
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    runs = {}
    inputs = []
    if args.runs:
        for p in args.runs:
            s, r, w = _read_run(Path(p))
            runs[s] = (r, w)
            inputs += [Path(p) / "returns.csv", Path(p) / "weights.csv"]
    else:
        market = Market(cfg)
        strategies = ["benchmark", "bhrp"] + (["rl_bhrp"] if cfg["checkpoint"] else [])
        for s in strategies:
            rep = run_strategy(market, s, cfg["checkpoint"])
            runs[s] = (rep.returns, rep.weights)
        inputs += [cfg["prices"], cfg["sector_map"], cfg["checkpoint"]]
    if not runs:
        raise DataError("nothing to report")

    common = None
    for r, _ in runs.values():
        common = r.index if common is None else common.intersection(r.index)
    if common is None or len(common) < 2:
        raise DataError("strategies share fewer than two periods")
    bench = runs["benchmark"][0].loc[common].to_numpy() if "benchmark" in runs else None
    bundles = {}
    for s, (r, _) in runs.items():
        bundles[s] = performance_metrics(r.loc[common].to_numpy(), bench,
                                         common[0].date().isoformat(), common[-1].date().isoformat())
    files = [_write_csv(out / "metrics.csv", metrics_table(bundles)[0], metrics_table(bundles)[1:])]
    mj = out / "metrics.json"
    mj.write_text(json.dumps({s: b.as_dict() for s, b in bundles.items()}, indent=2) + "\n")
    files.append(mj)

    wealth = pd.DataFrame({s: np.cumprod(1.0 + r.loc[common].to_numpy()) for s, (r, _) in runs.items()},
                          index=common)
    files.append(_write_csv(out / "wealth_curves.csv", ["date", *wealth.columns],
                            [[d.date().isoformat(), *map(_fmt, row)] for d, row in
                             zip(wealth.index, wealth.to_numpy())]))
    k = cfg["top_k"]
    for s, (_, w) in runs.items():
        if s == "benchmark":
            continue
        files.append(_write_csv(out / f"weights_heatmap_{s}.csv", ["date", *w.columns],
                                [[d.date().isoformat(), *map(_fmt, row)] for d, row in
                                 zip(w.index, w.to_numpy())]))
        stack = topk_stack(w, k)
        files.append(_write_csv(out / f"topk_stack_{s}.csv", ["date", *stack.columns],
                                [[d.date().isoformat(), *map(_fmt, row)] for d, row in
                                 zip(stack.index, stack.to_numpy())]))
        diag = weight_diagnostics(w.to_numpy(), k)
        files.append(_write_csv(
            out / f"diagnostics_{s}.csv", ["date", "turnover", "persistence", "topk_share"],
            [[w.index[i].date().isoformat(),
              _fmt(diag.turnover[i - 1]) if i else "", _fmt(diag.persistence[i - 1]) if i else "",
              _fmt(diag.topk_share[i])] for i in range(len(w))]))
    write_manifest(out, "report", cfg, inputs, files)
    for row in metrics_table(bundles):
        print("  ".join(f"{c:>24}" for c in row))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a setting, e.g. solver.tol=1e-12 (repeatable)")
    common.add_argument("--prices", help="prices file (date,ticker,adj_close,volume)")
    common.add_argument("--sector-map", dest="sector_map", help="sector map (ticker,sector,etf)")
    common.add_argument("--out", dest="output_dir", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="bhrp", description="Hierarchical risk parity toolkit")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", parents=[common], help="two-level risk-parity weights for one date")
    s.add_argument("--date", help="decision date (uses the last month-end on or before it)")
    s.add_argument("--covariance", help="square covariance CSV instead of estimating from prices")
    s.add_argument("--strict", action="store_true", help="exit 4 if the solver does not converge")

    b = sub.add_parser("backtest", parents=[common], help="run one strategy over the test window")
    b.add_argument("--strategy", choices=["benchmark", "bhrp", "rl_bhrp"])
    b.add_argument("--checkpoint", help="trained policy (.npz) for rl_bhrp")

    t = sub.add_parser("train", parents=[common], help="train the PPO policy on the training window")
    t.add_argument("--iterations", type=int)

    r = sub.add_parser("report", parents=[common], help="metrics table and plot-ready CSVs")
    r.add_argument("--runs", nargs="*", help="backtest output directories (default: run in-process)")
    r.add_argument("--checkpoint", help="include rl_bhrp when running in-process")
    return p


FLAG_KEYS = ("prices", "sector_map", "output_dir", "seed", "date", "covariance",
             "strategy", "checkpoint", "iterations")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    flags = {k: getattr(args, k, None) for k in FLAG_KEYS}
    handlers = {"solve": cmd_solve, "backtest": cmd_backtest, "train": cmd_train, "report": cmd_report}
    try:
        cfg = RunConfig.resolve(args.config, args.set, flags)
        cfg.validate(args.command)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return handlers[args.command](cfg, args)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverFailure as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (BHRPError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
