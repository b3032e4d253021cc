"""Traffic series ingestion, synthetic generation and windowing.

Series are indexed by integer slot with a 10-minute cadence (slot 0 is the
start of the series, 144 slots per day, 1008 per week). The on-disk format
is a UTF-8 CSV with header ``slot,client_id,volume``.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import RngStream, mean_std

SLOTS_PER_DAY = 144
SLOTS_PER_WEEK = 1008
TRAIN_WEEKS = 7

CSV_HEADER = ("slot", "client_id", "volume")

# stream ids used by the synthetic generator; per-client noise uses
# _NOISE_STREAM_BASE + client index
_PARAM_STREAM = 1
_NOISE_STREAM_BASE = 1_000


class DataError(ValueError):
    """Raised for unreadable or inconsistent traffic data."""


@dataclass
class TrafficSeries:
    client_id: str
    volumes: np.ndarray

    def __post_init__(self):
        self.volumes = np.asarray(self.volumes, dtype=np.float64)
        if self.volumes.ndim != 1:
            raise DataError("volumes must be one-dimensional")

    @property
    def slot_count(self) -> int:
        return self.volumes.size


@dataclass
class WindowedDataset:
    inputs: np.ndarray
    targets: np.ndarray
    p: int
    mean: float = 0.0
    std: float = 1.0

    def __len__(self) -> int:
        return self.targets.size


@dataclass(frozen=True)
class SplitSpec:
    train_slots: int

    @classmethod
    def default_for(cls, slot_count: int) -> "SplitSpec":
        """First seven weeks for series of eight weeks or more, else the first 7/8."""
        if slot_count >= (TRAIN_WEEKS + 1) * SLOTS_PER_WEEK:
            return cls(TRAIN_WEEKS * SLOTS_PER_WEEK)
        return cls(max(1, (slot_count * TRAIN_WEEKS) // (TRAIN_WEEKS + 1)))

    def check(self, slot_count: int) -> None:
        if not 0 < self.train_slots < slot_count:
            raise DataError(f"train_slots={self.train_slots} must lie in (0, {slot_count})")


def load_csv(path) -> dict[str, TrafficSeries]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    rows: dict[str, list[tuple[int, float]]] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise DataError(f"{path}: line 1: expected header {','.join(CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise DataError(f"{path}: line {lineno}: malformed row, expected 3 fields")
            try:
                slot = int(row[0])
                volume = float(row[2])
            except ValueError:
                raise DataError(f"{path}: line {lineno}: malformed row {row!r}") from None
            if not math.isfinite(volume):
                raise DataError(f"{path}: line {lineno}: non-finite volume")
            if volume < 0:
                raise DataError(f"{path}: line {lineno}: negative volume {volume}")
            rows.setdefault(row[1].strip(), []).append((slot, volume))

    out = {}
    for client_id, entries in rows.items():
        entries.sort(key=lambda e: e[0])
        for expected, (slot, _) in enumerate(entries):
            if slot != expected:
                raise DataError(f"{path}: client {client_id}: gap in slots, expected slot {expected}, found {slot}")
        out[client_id] = TrafficSeries(client_id, np.array([v for _, v in entries]))
    return out


def write_csv(series: dict[str, TrafficSeries], path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(CSV_HEADER) + "\n")
        for client_id, s in series.items():
            for slot, v in enumerate(s.volumes):
                fh.write(f"{slot},{client_id},{float(v)!r}\n")


def data_hash(series: dict[str, TrafficSeries]) -> str:
    h = hashlib.sha256()
    for client_id in sorted(series):
        h.update(client_id.encode())
        h.update(np.ascontiguousarray(series[client_id].volumes).tobytes())
    return h.hexdigest()[:16]


def generate_synthetic(num_clients: int, slot_count: int, seed: int,
                       heterogeneity: float = 0.5) -> dict[str, TrafficSeries]:
    """Diurnal plus weekly sinusoidal traffic with per-client variation.

    Client ``m`` gets ``base_m + A_m sin(2 pi t/144 + phi_m)
    + B_m sin(2 pi t/1008 + psi_m) + noise``, clipped at zero. With
    ``heterogeneity=0`` all clients share the same base, amplitudes and
    phases; larger values widen the spread of every per-client parameter
    and raise the expected relative amplitude.
    """
    if num_clients < 2:
        raise ValueError("num_clients must be >= 2")
    if slot_count < 2 * SLOTS_PER_DAY:
        raise ValueError(f"slot_count must be >= {2 * SLOTS_PER_DAY}")
    if not 0.0 <= heterogeneity <= 1.0:
        raise ValueError("heterogeneity must lie in [0, 1]")

    prm = RngStream(seed, _PARAM_STREAM)
    # one row of draws per client, always consumed in full so that the
    # parameters of client m do not depend on num_clients
    draws = prm.uniform(6 * num_clients).reshape(num_clients, 6)
    h = float(heterogeneity)
    t = np.arange(slot_count, dtype=np.float64)
    out = {}
    for m in range(num_clients):
        u = draws[m]
        base = 100.0 * math.exp(1.5 * h * (2.0 * u[0] - 1.0))
        daily = base * (0.4 + 0.5 * h * u[1])
        weekly = base * (0.1 + 0.2 * h * u[2])
        phi = 2.0 * math.pi * h * u[3]
        psi = 2.0 * math.pi * h * u[4]
        noise_scale = base * (0.05 + 0.1 * h * u[5])
        noise = RngStream(seed, _NOISE_STREAM_BASE + m).normal(slot_count)
        v = (base
             + daily * np.sin(2.0 * math.pi * t / SLOTS_PER_DAY + phi)
             + weekly * np.sin(2.0 * math.pi * t / SLOTS_PER_WEEK + psi)
             + noise_scale * noise)
        client_id = f"c{m:03d}"
        out[client_id] = TrafficSeries(client_id, np.maximum(v, 0.0))
    return out


def standardize(series: TrafficSeries, split: SplitSpec) -> tuple[TrafficSeries, float, float]:
    """Scale the whole series with mean/std taken from the training slots only."""
    split.check(series.slot_count)
    mean, std = mean_std(series.volumes[:split.train_slots])
    if std == 0.0:
        raise DataError(f"client {series.client_id}: zero-variance training series")
    return TrafficSeries(series.client_id, (series.volumes - mean) / std), mean, std


def _windows(values: np.ndarray, p: int, first_target: int, stop: int) -> tuple[np.ndarray, np.ndarray]:
    first_target = max(first_target, p)
    targets_idx = np.arange(first_target, stop)
    if targets_idx.size == 0:
        return np.empty((0, p)), np.empty(0)
    inputs = values[targets_idx[:, None] - p + np.arange(p)[None, :]]
    return inputs, values[targets_idx]


def make_windows(series: TrafficSeries, p: int, split: SplitSpec,
                 mean: float = 0.0, std: float = 1.0) -> tuple[WindowedDataset, WindowedDataset]:
    """Sliding windows of ``p`` inputs predicting the next slot.

    Training targets are the slots ``p .. train_slots - 1``; test targets are
    ``train_slots .. end`` and may take their input context from the last
    ``p`` training slots. ``mean`` and ``std`` are only recorded.
    """
    if p < 1:
        raise ValueError("window size p must be >= 1")
    if series.slot_count < p + 1:
        raise DataError(f"client {series.client_id}: series of {series.slot_count} slots too short for p={p}")
    split.check(series.slot_count)
    values = series.volumes
    tr_x, tr_y = _windows(values, p, 0, split.train_slots)
    te_x, te_y = _windows(values, p, split.train_slots, series.slot_count)
    return (WindowedDataset(tr_x, tr_y, p, mean, std),
            WindowedDataset(te_x, te_y, p, mean, std))


def prepare_clients(series: dict[str, TrafficSeries], p: int, split: SplitSpec | None = None):
    """Standardize and window every client. Returns ``(ids, train_sets, test_sets)``."""
    ids = sorted(series)
    train, test = [], []
    for client_id in ids:
        s = series[client_id]
        sp = split or SplitSpec.default_for(s.slot_count)
        std_series, mean, std = standardize(s, sp)
        tr, te = make_windows(std_series, p, sp, mean, std)
        train.append(tr)
        test.append(te)
    return ids, train, test
