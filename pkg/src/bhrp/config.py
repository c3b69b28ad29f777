"""Run configuration: defaults, JSON file, command-line overrides."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import fields
from pathlib import Path

import pandas as pd

from .backtest import UniverseScreen
from .bayes import PriorHyperparams
from .core import BHRPError
from .policy import PPOConfig
from .riskparity import SolverConfig
from .rlenv import RewardConfig

STRATEGIES = ("benchmark", "bhrp", "rl_bhrp")


class ConfigError(BHRPError, ValueError):
    """Invalid configuration; carries every problem found."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


def _section_defaults(cls, skip=()):
    return {f.name: f.default for f in fields(cls) if f.name not in skip}


DEFAULTS = {
    "prices": None,
    "sector_map": None,
    "output_dir": "out",
    "checkpoint": None,
    "covariance": None,
    "date": None,
    "train_start": "2012-01-01",
    "train_end": "2020-01-01",
    "test_end": "2025-08-31",
    "seed": 0,
    "strategy": "bhrp",
    "lags": 3,
    "iterations": 200,
    "spectral_bound": 10.0,
    "top_k": 15,
    "screen": {"enabled": True, **_section_defaults(UniverseScreen)},
    "prior": {"tau": 0.05, "window_len": 36, "variance_floor": 1e-10},
    "solver": _section_defaults(SolverConfig),
    "reward": _section_defaults(RewardConfig),
    "ppo": _section_defaults(PPOConfig, skip=("seed",)),
}


def parse_value(text: str):
    """JSON literal if it parses (numbers, true/false/null, lists), else the raw string."""
    try:
        return json.loads(text)
    except ValueError:
        return text


def _merge(base: dict, over: dict, where: str, problems: list) -> None:
    for key, val in over.items():
        if key not in base:
            problems.append(f"unknown setting {where}{key}")
        elif isinstance(base[key], dict):
            if not isinstance(val, dict):
                problems.append(f"{where}{key} must be an object")
            else:
                _merge(base[key], val, f"{where}{key}.", problems)
        else:
            base[key] = val


def _dotted(pairs) -> dict:
    out: dict = {}
    for key, val in pairs:
        node = out
        *head, last = key.split(".")
        for part in head:
            node = node.setdefault(part, {})
        node[last] = val
    return out


class RunConfig:
    """Resolved settings. Precedence: explicit flags > ``--set`` > file > defaults."""

    def __init__(self, data: dict):
        self.data = data

    def __getitem__(self, key):
        return self.data[key]

    @classmethod
    def resolve(cls, path=None, sets=(), flags=None) -> "RunConfig":
        data = copy.deepcopy(DEFAULTS)
        problems: list[str] = []
        if path is not None:
            try:
                loaded = json.loads(Path(path).read_text())
            except OSError as exc:
                raise ConfigError([f"cannot read config {path}: {exc.strerror}"]) from None
            except ValueError as exc:
                raise ConfigError([f"config {path} is not valid JSON: {exc}"]) from None
            if not isinstance(loaded, dict):
                raise ConfigError([f"config {path} must hold a JSON object"])
            _merge(data, loaded, "", problems)
        pairs = []
        for item in sets:
            if "=" not in item:
                problems.append(f"--set expects key=value, got {item!r}")
                continue
            key, val = item.split("=", 1)
            pairs.append((key.strip(), parse_value(val)))
        _merge(data, _dotted(pairs), "", problems)
        _merge(data, {k: v for k, v in (flags or {}).items() if v is not None}, "", problems)
        if problems:
            raise ConfigError(problems)
        return cls(data)

    def validate(self, command: str) -> None:
        """Collect every problem relevant to ``command`` and raise them together."""
        d, problems = self.data, []
        for name, build in (("screen", self.screen), ("prior", self.prior), ("solver", self.solver),
                            ("reward", self.reward), ("ppo", self.ppo)):
            try:
                build()
            except (TypeError, ValueError) as exc:
                problems.append(f"{name}: {exc}")
        dates = {}
        for key in ("train_start", "train_end", "test_end"):
            try:
                dates[key] = pd.Timestamp(d[key])
            except (TypeError, ValueError):
                problems.append(f"{key}: not a date: {d[key]!r}")
        if len(dates) == 3 and not dates["train_start"] < dates["train_end"] < dates["test_end"]:
            problems.append("dates must satisfy train_start < train_end < test_end")
        if not isinstance(d["seed"], int) or isinstance(d["seed"], bool):
            problems.append("seed must be an integer")
        if not isinstance(d["lags"], int) or d["lags"] < 1:
            problems.append("lags must be a positive integer")
        if not isinstance(d["iterations"], int) or d["iterations"] < 1:
            problems.append("iterations must be a positive integer")
        if d["strategy"] not in STRATEGIES:
            problems.append(f"strategy must be one of {', '.join(STRATEGIES)}")

        needs = {"solve": [] if d["covariance"] else ["prices"], "backtest": ["prices"],
                 "train": ["prices"], "report": []}.get(command, [])
        if command in ("solve", "backtest", "train"):
            needs.append("sector_map")
        if command == "backtest" and d["strategy"] == "rl_bhrp":
            needs.append("checkpoint")
        if command == "solve" and not d["covariance"] and not d["date"]:
            problems.append("solve needs --date (or --covariance)")
        for key in needs:
            if not d[key]:
                problems.append(f"{key} is required for {command}")
            elif not Path(d[key]).is_file():
                problems.append(f"{key}: file not found: {d[key]}")
        if problems:
            raise ConfigError(problems)

    def screen(self) -> UniverseScreen:
        s = {k: v for k, v in self.data["screen"].items() if k != "enabled"}
        return UniverseScreen(**s)

    def prior(self) -> PriorHyperparams:
        p = self.data["prior"]
        return PriorHyperparams(tau_sq=float(p["tau"]) ** 2, window_len=int(p["window_len"]),
                                variance_floor=float(p["variance_floor"]))

    def solver(self) -> SolverConfig:
        return SolverConfig(**self.data["solver"])

    def reward(self) -> RewardConfig:
        return RewardConfig(**self.data["reward"])

    def ppo(self) -> PPOConfig:
        return PPOConfig(**self.data["ppo"], seed=self.data["seed"])

    def canonical_json(self) -> str:
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()
