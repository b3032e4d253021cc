"""Experiment configuration and the end-to-end run used by the CLI."""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from . import data as datamod
from . import fedcore, report
from .aggregation import STRATEGIES, StrategyConfig

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class ExperimentConfig:
    algorithm: str = "fedgcc"
    strategy: str = "k-relevant"
    gamma: float = 0.01
    k: int = 4
    delta: float = 0.5
    normalize: bool = True
    tau: int = 5
    batch_size: int = 20
    epsilon: float = 0.1
    eta: float = 1.0
    milestones: list[int] = field(default_factory=lambda: [100, 150])
    rounds: int = 200
    participation: float = 1.0
    mu: float = 0.01
    seed: int = 0
    window: int = 6
    train_slots: int | None = None
    data: str | None = None
    clients: int = 8
    slots: int = 2016
    heterogeneity: float = 0.5
    out: str = "results"
    dump_correlation: bool = False

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path, overrides: dict | None = None) -> "ExperimentConfig":
        raw = {}
        if path is not None:
            try:
                raw = json.loads(Path(path).read_text(encoding="utf-8"))
            except FileNotFoundError:
                raise ConfigError(f"config file not found: {path}") from None
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
            if not isinstance(raw, dict):
                raise ConfigError("config file must hold a JSON object")
        raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_dict(raw)

    def validate(self) -> None:
        if self.algorithm not in fedcore.ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {', '.join(fedcore.ALGORITHMS)}")
        if self.strategy.replace("-", "_") not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {', '.join(s.replace('_', '-') for s in STRATEGIES)}")
        if self.window < 1:
            raise ConfigError("window must be >= 1")
        if self.data is None:
            if self.clients < 2:
                raise ConfigError("synthetic data needs clients >= 2")
            if self.slots < 2 * datamod.SLOTS_PER_DAY:
                raise ConfigError(f"synthetic data needs slots >= {2 * datamod.SLOTS_PER_DAY}")
            if not 0.0 <= self.heterogeneity <= 1.0:
                raise ConfigError("heterogeneity must lie in [0, 1]")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        try:
            self.round_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def strategy_config(self) -> StrategyConfig:
        return StrategyConfig(self.strategy, self.k, self.delta, self.normalize)

    def round_config(self) -> fedcore.RoundConfig:
        cfg = fedcore.RoundConfig(
            tau=self.tau, batch_size=self.batch_size, epsilon=self.epsilon,
            milestones=tuple(self.milestones), eta=self.eta, gamma=self.gamma,
            strategy=self.strategy_config(), participation=self.participation,
            rounds=self.rounds, mu=self.mu,
        )
        return fedcore.with_algorithm_defaults(cfg, self.algorithm)

    def echo(self) -> dict:
        """Config as recorded in summary.json (output location omitted)."""
        d = dataclasses.asdict(self)
        d.pop("out")
        return d


def load_series(cfg: ExperimentConfig) -> dict[str, datamod.TrafficSeries]:
    if cfg.data is not None:
        return datamod.load_csv(cfg.data)
    return datamod.generate_synthetic(cfg.clients, cfg.slots, cfg.seed, cfg.heterogeneity)


def run_experiment(cfg: ExperimentConfig, series=None, out_dir=None) -> dict:
    """Train, evaluate and write ``summary.json``/``history.csv``; return the summary."""
    cfg.validate()
    if series is None:
        series = load_series(cfg)
    split = datamod.SplitSpec(cfg.train_slots) if cfg.train_slots else None
    ids, train_sets, test_sets = datamod.prepare_clients(series, cfg.window, split)
    if cfg.algorithm == "fedgcc" and cfg.strategy_config().kind == "k_relevant" and cfg.k > len(ids):
        raise ConfigError(f"k={cfg.k} exceeds the number of clients ({len(ids)})")
    out = Path(out_dir if out_dir is not None else cfg.out)
    out.mkdir(parents=True, exist_ok=True)

    on_corr = None
    if cfg.dump_correlation:
        corr_dir = out / "correlation"
        corr_dir.mkdir(exist_ok=True)

        def on_corr(t, rho):
            report.write_correlation(rho, corr_dir / f"round_{t:04d}.csv")

    def rmse_of(model):
        return report.rmse(*report.pooled_predictions(model, test_sets))

    log.info("training %s on %d clients for %d rounds", cfg.algorithm, len(ids), cfg.rounds)
    result = fedcore.run_training(cfg.round_config(), train_sets, cfg.algorithm, seed=cfg.seed, ids=ids,
                                  evaluate=rmse_of, on_correlation=on_corr)
    metrics = report.evaluate(result.model, test_sets)
    echo = cfg.echo()
    echo.update(strategy=cfg.strategy if cfg.algorithm == "fedgcc" else "mean",
                gamma=cfg.round_config().gamma)
    echo["data_hash"] = datamod.data_hash(series)
    report.write_results(result.history, metrics, echo, out)
    return report.summary_dict(metrics, result.history, echo)
