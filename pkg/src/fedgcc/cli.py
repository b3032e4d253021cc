"""Command-line entry point: ``fedgcc gen-data | train | compare``.

Exit codes: 0 success, 2 invalid arguments or configuration, 3 runtime
failure. Failures print one JSON line ``{"error": ..., "message": ...}`` on
stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import data as datamod
from . import report
from .experiment import ConfigError, ExperimentConfig, load_series, run_experiment

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3

DEFAULT_RUNS = "fedavg,fedprox,fedgcc:k-relevant,fedgcc:delta-threshold,fedgcc:all-correlated"
COMPARISON_COLUMNS = ("run", "algorithm", "strategy", "mu", "gamma", "seed", "data_hash",
                      "rmse", "mae", "r2", "uplink_bytes", "downlink_bytes")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _add_training_flags(p: argparse.ArgumentParser) -> None:
    # every flag defaults to None so that only explicit flags override the config file
    p.add_argument("--config", metavar="PATH", help="JSON config file")
    p.add_argument("--algorithm", choices=("fedgcc", "fedavg", "fedprox"))
    p.add_argument("--strategy", choices=("mean", "k-relevant", "delta-threshold", "all-correlated"))
    p.add_argument("--gamma", type=float, help="compression ratio in (0, 1]")
    p.add_argument("--k", type=int)
    p.add_argument("--delta", type=float)
    p.add_argument("--normalize", dest="normalize", action="store_const", const=True,
                   help="average the k-relevant/delta-threshold selections (default)")
    p.add_argument("--no-normalize", dest="normalize", action="store_const", const=False,
                   help="use the raw sums over the selected clients")
    p.add_argument("--tau", type=int, help="local steps per round")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epsilon", type=float, help="initial local learning rate")
    p.add_argument("--eta", type=float, help="server learning rate")
    p.add_argument("--rounds", type=int)
    p.add_argument("--participation", type=float)
    p.add_argument("--mu", type=float, help="FedProx proximal weight")
    p.add_argument("--seed", type=int)
    p.add_argument("--window", type=int, help="input window p in slots")
    p.add_argument("--train-slots", type=int)
    p.add_argument("--data", metavar="PATH", help="CSV with slot,client_id,volume (default: synthetic)")
    p.add_argument("--clients", type=int, help="synthetic clients")
    p.add_argument("--slots", type=int, help="synthetic slots per client")
    p.add_argument("--heterogeneity", type=float, help="synthetic heterogeneity in [0, 1]")
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--dump-correlation", action="store_const", const=True,
                   help="write the per-round correlation matrix as CSV")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fedgcc", description="Correlation-driven compressed federated traffic prediction")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("gen-data", help="write a synthetic traffic CSV")
    gen.add_argument("--clients", type=int, default=8)
    gen.add_argument("--slots", type=int, default=2016)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--heterogeneity", type=float, default=0.5)
    gen.add_argument("--out", required=True, metavar="PATH")

    train = sub.add_parser("train", help="run one training job")
    _add_training_flags(train)

    compare = sub.add_parser("compare", help="run several algorithms on the same data and seed")
    _add_training_flags(compare)
    compare.add_argument("--runs", default=DEFAULT_RUNS,
                         help="comma-separated list of fedavg, fedprox[:mu], fedgcc:<strategy>")
    return parser


_OVERRIDE_KEYS = ("algorithm", "strategy", "gamma", "k", "delta", "normalize", "tau", "batch_size",
                  "epsilon", "eta", "rounds", "participation", "mu", "seed", "window", "train_slots",
                  "data", "clients", "slots", "heterogeneity", "out", "dump_correlation")


def _config_from_args(args) -> ExperimentConfig:
    return ExperimentConfig.load(args.config, {k: getattr(args, k) for k in _OVERRIDE_KEYS})


def cmd_gen_data(args) -> int:
    try:
        series = datamod.generate_synthetic(args.clients, args.slots, args.seed, args.heterogeneity)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = Path(args.out)
    if out.parent:
        out.parent.mkdir(parents=True, exist_ok=True)
    datamod.write_csv(series, out)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    summary = run_experiment(cfg)
    print(json.dumps({k: summary[k] for k in report.SUMMARY_KEYS}))
    return EXIT_OK


def parse_runs(spec: str, base: ExperimentConfig) -> list[tuple[str, dict]]:
    runs = []
    for item in (s.strip() for s in spec.split(",")):
        if not item:
            continue
        name, _, arg = item.partition(":")
        if name == "fedavg" and not arg:
            runs.append((item, {"algorithm": "fedavg"}))
        elif name == "fedprox":
            try:
                mu = float(arg) if arg else base.mu
            except ValueError:
                raise ConfigError(f"bad FedProx weight in run {item!r}") from None
            runs.append((item, {"algorithm": "fedprox", "mu": mu}))
        elif name == "fedgcc":
            runs.append((item, {"algorithm": "fedgcc", "strategy": arg or base.strategy}))
        else:
            raise ConfigError(f"unknown run {item!r}")
    if not runs:
        raise ConfigError("no runs given")
    return runs


def cmd_compare(args) -> int:
    base = _config_from_args(args)
    runs = parse_runs(args.runs, base)
    configs = [(name, ExperimentConfig.from_dict({**base.echo(), "out": base.out, **changes}))
               for name, changes in runs]
    series = load_series(base)
    out = Path(base.out)
    rows = []
    for name, cfg in configs:
        run_dir = out / name.replace(":", "_")
        try:
            summary = run_experiment(cfg, series, run_dir)
        except Exception as exc:
            raise RuntimeError(f"run {name!r} failed: {exc}") from exc
        rows.append({
            "run": name, "algorithm": cfg.algorithm, "strategy": summary["strategy"],
            "mu": cfg.mu if cfg.algorithm == "fedprox" else "", "gamma": summary["gamma"],
            "seed": cfg.seed, "data_hash": summary["config"]["data_hash"],
            "rmse": summary["rmse"], "mae": summary["mae"], "r2": summary["r2"],
            "uplink_bytes": summary["uplink_bytes"], "downlink_bytes": summary["downlink_bytes"],
        })
        logging.getLogger(__name__).info("%s rmse=%.4f", name, summary["rmse"])
    report.write_comparison(rows, out / "comparison.csv", COMPARISON_COLUMNS)
    return EXIT_OK


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "compare": cmd_compare}


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": " ".join(str(message).split())}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as exc:
        return _fail("validation", exc, EXIT_VALIDATION)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        return _fail("validation", exc, EXIT_VALIDATION)
    except datamod.DataError as exc:
        return _fail("data", exc, EXIT_RUNTIME)
    except Exception as exc:
        return _fail("runtime", f"{type(exc).__name__}: {exc}", EXIT_RUNTIME)


if __name__ == "__main__":
    sys.exit(main())
