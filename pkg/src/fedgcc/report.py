"""Test metrics and result files.

Metrics are computed on the standardized scale and pooled over the test
samples of all clients. ``history.csv`` and ``summary.json`` are written
with fixed column/key order, LF line endings and ``repr`` floats so that
identical runs produce identical bytes.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import MlpModel, forward

HISTORY_HEADER = ("round", "loss", "uplink_bytes", "downlink_bytes", "rmse")
SUMMARY_KEYS = ("algorithm", "strategy", "gamma", "k", "delta", "seed", "rounds",
                "rmse", "mae", "r2", "uplink_bytes", "downlink_bytes")


@dataclass
class MetricsSnapshot:
    rmse: float
    mae: float
    r2: float
    n_samples: int
    scale: str = "standardized"


def _pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if pred.size != truth.size:
        raise ValueError(f"length mismatch: {pred.size} != {truth.size}")
    if pred.size == 0:
        raise ValueError("empty inputs")
    return pred, truth


def rmse(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    r = pred - truth
    return math.sqrt(float(np.dot(r, r)) / r.size)


def mae(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.abs(pred - truth).sum() / pred.size)


def r2_score(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    if pred.size < 2:
        raise ValueError("r2 needs at least two samples")
    dev = truth - truth.sum() / truth.size
    total = float(np.dot(dev, dev))
    if total == 0.0:
        raise ValueError("r2 undefined for constant truth")
    r = truth - pred
    return 1.0 - float(np.dot(r, r)) / total


def pooled_predictions(model: MlpModel, test_sets) -> tuple[np.ndarray, np.ndarray]:
    sets = [ts for ts in test_sets if len(ts)]
    if not sets:
        raise ValueError("empty test set")
    pred = np.concatenate([forward(model, ts.inputs) for ts in sets])
    truth = np.concatenate([ts.targets for ts in sets])
    return pred, truth


def evaluate(model: MlpModel, test_sets) -> MetricsSnapshot:
    pred, truth = pooled_predictions(model, test_sets)
    return MetricsSnapshot(rmse(pred, truth), mae(pred, truth), r2_score(pred, truth), int(pred.size))


def _num(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def history_csv(history) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HISTORY_HEADER)
    for rec in history:
        writer.writerow([rec.round, _num(rec.loss), rec.uplink_bytes, rec.downlink_bytes, _num(rec.rmse)])
    return buf.getvalue()


def summary_dict(metrics: MetricsSnapshot, history, config: dict) -> dict:
    """The summary schema: run identification, final metrics, byte totals.

    ``config`` must provide algorithm, strategy, gamma, k, delta, seed and
    rounds; it is also echoed in full under ``"config"``.
    """
    last = history[-1] if history else None
    out = {key: config.get(key) for key in SUMMARY_KEYS[:7]}
    out.update(
        rmse=metrics.rmse,
        mae=metrics.mae,
        r2=metrics.r2,
        uplink_bytes=last.uplink_bytes if last else 0,
        downlink_bytes=last.downlink_bytes if last else 0,
    )
    out["config"] = config
    return out


def write_results(history, metrics: MetricsSnapshot, config: dict, path) -> tuple[Path, Path]:
    out_dir = Path(path)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary_path = out_dir / "summary.json"
    history_path = out_dir / "history.csv"
    summary_path.write_text(json.dumps(summary_dict(metrics, history, config), indent=2) + "\n",
                            encoding="utf-8", newline="\n")
    history_path.write_text(history_csv(history), encoding="utf-8", newline="\n")
    return summary_path, history_path


def write_correlation(rho: np.ndarray, path) -> None:
    rows = "\n".join(",".join(repr(float(x)) for x in row) for row in np.asarray(rho))
    Path(path).write_text(rows + "\n", encoding="utf-8", newline="\n")


def write_comparison(rows: Sequence[dict], path, columns: Sequence[str]) -> Path:
    path = Path(path)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_num(row[c]) if isinstance(row[c], (float, int, np.number)) and not isinstance(row[c], bool)
                         else row[c] for c in columns])
    path.write_text(buf.getvalue(), encoding="utf-8", newline="\n")
    return path
