"""Federated training loop: FedGCC plus FedAvg and FedProx baselines.

One communication round of FedGCC:

1. each participant runs ``tau`` local SGD steps from the current global
   model on ``grad + (e - h) / tau``;
2. it forms the accumulated gradient ``g = (w_t - w_tau) / eps`` and
   uploads its top-gamma sparsification ``phi(g)``;
3. the server personalizes every message with the chosen correlation
   strategy, averages the personalized gradients into ``g_t``, moves the
   global model by ``-eta * eps * g_t`` and broadcasts ``g_t``;
4. clients fold the untransmitted mass into ``e``, move ``h`` by
   ``(phi(g) - g_t) / tau`` and apply the same global step to their copy.

The server aggregates before clients touch ``e``/``h`` so every quantity in
step 4 is defined with a single broadcast per round. Because ``g`` is in
gradient units, the global step is scaled by the current local rate: with
``eta = 1`` and no compression a round moves the model by the average
local displacement, as in FedAvg.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import aggregation
from .aggregation import StrategyConfig
from .compression import SparseGradient, dense_bytes, densify, sparsify_topk, update_error_feedback, wire_bytes
from .data import WindowedDataset
from .model import MlpModel, init_params, loss_and_grad
from .numerics import RngStream

log = logging.getLogger(__name__)

ALGORITHMS = ("fedgcc", "fedavg", "fedprox")

INIT_STREAM = 0
SAMPLING_STREAM = 1
CLIENT_STREAM_BASE = 100


@dataclass(frozen=True)
class RoundConfig:
    tau: int = 5
    batch_size: int = 20
    epsilon: float = 0.1
    milestones: tuple[int, ...] = (100, 150)
    decay: float = 0.1
    eta: float = 1.0
    gamma: float = 0.01
    strategy: StrategyConfig = field(default_factory=StrategyConfig)
    participation: float = 1.0
    rounds: int = 200
    mu: float = 0.0

    def __post_init__(self):
        if self.tau < 1:
            raise ValueError("tau must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not (self.epsilon > 0 and self.eta > 0):
            raise ValueError("epsilon and eta must be positive")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not 0.0 < self.participation <= 1.0:
            raise ValueError("participation must lie in (0, 1]")
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if self.mu < 0:
            raise ValueError("mu must be >= 0")
        if not 0.0 < self.decay <= 1.0:
            raise ValueError("decay must lie in (0, 1]")

    def local_lr(self, t: int) -> float:
        return self.epsilon * self.decay ** sum(1 for m in self.milestones if t >= m)


@dataclass
class ClientState:
    client_id: str
    w_local: np.ndarray
    e: np.ndarray
    h: np.ndarray
    train: WindowedDataset
    rng: RngStream


@dataclass
class RoundRecord:
    round: int
    loss: float
    uplink_bytes: int
    downlink_bytes: int
    rmse: float | None = None


class LocalResult(NamedTuple):
    phi_g: SparseGradient
    g_raw: np.ndarray
    loss: float


@dataclass
class TrainingResult:
    model: MlpModel
    history: list[RoundRecord]
    clients: list[ClientState]


def sample_clients(n_clients: int, participation: float, rng: RngStream) -> list[int]:
    """Indices of the round's participants, ascending.

    Full participation returns every client and draws nothing from ``rng``.
    Otherwise ``ceil(participation * n)`` clients are chosen by a partial
    Fisher-Yates shuffle driven by ``rng``.
    """
    if not 0.0 < participation <= 1.0:
        raise ValueError("participation must lie in (0, 1]")
    count = math.ceil(participation * n_clients)
    if count >= n_clients:
        return list(range(n_clients))
    pool = list(range(n_clients))
    u = rng.uniform(count)
    for i in range(count):
        j = i + int(u[i] * (n_clients - i))
        pool[i], pool[j] = pool[j], pool[i]
    return sorted(pool[:count])


def sample_batch(train: WindowedDataset, batch_size: int, rng: RngStream):
    idx = rng.integers(batch_size, len(train))
    return train.inputs[idx], train.targets[idx]


def local_round(client: ClientState, w_t: np.ndarray, layer_dims, cfg: RoundConfig, lr: float,
                corrected: bool = True, prox_mu: float = 0.0, gamma: float | None = None) -> LocalResult:
    """Run ``tau`` local steps from ``w_t`` and compress the accumulated gradient.

    Each step uses ``grad + (e - h) / tau``, so over a round the static
    corrections enter the accumulated gradient exactly once. ``e`` and ``h``
    are read but not modified. ``corrected=False`` drops them
    (FedAvg/FedProx); ``prox_mu`` adds ``mu * (w - w_t)`` to each batch
    gradient.
    """
    if len(client.train) == 0:
        raise ValueError(f"client {client.client_id} has an empty training set")
    gamma = cfg.gamma if gamma is None else gamma
    model = MlpModel(layer_dims, w_t.copy())
    w = model.params
    correction = (client.e - client.h) / cfg.tau if corrected else None
    losses = []
    for _ in range(cfg.tau):
        x, y = sample_batch(client.train, cfg.batch_size, client.rng)
        loss, grad = loss_and_grad(model, x, y)
        losses.append(loss)
        if prox_mu:
            grad = grad + prox_mu * (w - w_t)
        if corrected:
            grad = grad + correction
        # in place so the layer views in `model` follow the update
        w -= lr * grad
    g_raw = (w_t - w) / lr
    if not np.all(np.isfinite(g_raw)):
        raise FloatingPointError(f"client {client.client_id}: non-finite local update")
    return LocalResult(sparsify_topk(g_raw, gamma), g_raw, float(np.mean(losses)))


def finish_round_client(client: ClientState, phi_g: SparseGradient, g_raw: np.ndarray,
                        g_t: np.ndarray, cfg: RoundConfig, lr: float, corrected: bool = True) -> ClientState:
    """Fold the round's outcome into the client state.

    ``e`` absorbs whatever part of the fresh gradient ``g_raw - e`` was not
    transmitted, ``h`` moves by ``(phi_g - g_t) / tau`` and the local copy
    of the global model takes the same step as the server.
    """
    if g_t.shape != client.w_local.shape:
        raise ValueError("broadcast dimension does not match client model")
    if corrected:
        client.e = update_error_feedback(client.e, g_raw - client.e, phi_g)
        client.h = client.h + (densify(phi_g) - g_t) / cfg.tau
    client.w_local = client.w_local - (cfg.eta * lr) * g_t
    return client


def make_clients(train_sets: Sequence[WindowedDataset], d: int, seed: int,
                 ids: Sequence[str] | None = None) -> list[ClientState]:
    ids = list(ids) if ids is not None else [f"c{m:03d}" for m in range(len(train_sets))]
    return [ClientState(cid, np.zeros(d), np.zeros(d), np.zeros(d), tr, RngStream(seed, CLIENT_STREAM_BASE + m))
            for m, (cid, tr) in enumerate(zip(ids, train_sets))]


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("FEDGCC_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class _Run:
    algorithm: str
    cfg: RoundConfig
    layer_dims: tuple[int, ...]
    clients: list[ClientState]
    sampler: RngStream
    threads: int
    on_correlation: Callable[[int, np.ndarray], None] | None = None
    uplink: int = 0
    downlink: int = 0
    # clients that sat out a round and hold an outdated model copy
    stale: set = field(default_factory=set)


def run_round(run: _Run, server_w: np.ndarray, t: int) -> tuple[np.ndarray, RoundRecord]:
    cfg = run.cfg
    fedgcc = run.algorithm == "fedgcc"
    gamma = cfg.gamma if fedgcc else 1.0
    prox_mu = cfg.mu if run.algorithm == "fedprox" else 0.0
    lr = cfg.local_lr(t)
    picked = sample_clients(len(run.clients), cfg.participation, run.sampler)
    chosen = [run.clients[i] for i in picked]

    for i, c in zip(picked, chosen):
        if i in run.stale:
            # returning client downloads the full model
            c.w_local = server_w.copy()
            run.downlink += dense_bytes(server_w.size)
            run.stale.discard(i)
        elif not np.array_equal(c.w_local, server_w):
            raise RuntimeError(f"client {c.client_id} model copy diverged from the server model")

    def work(c):
        return local_round(c, server_w, run.layer_dims, cfg, lr, corrected=fedgcc, prox_mu=prox_mu, gamma=gamma)

    if run.threads > 1 and len(chosen) > 1:
        with ThreadPoolExecutor(max_workers=run.threads) as pool:
            results = list(pool.map(work, chosen))
    else:
        results = [work(c) for c in chosen]

    messages = [r.phi_g for r in results]
    strategy = cfg.strategy if fedgcc else StrategyConfig(kind="mean")
    rho = None
    if strategy.kind != "mean" and len(messages) > 1:
        rho = aggregation.correlation_matrix(messages)
        if run.on_correlation is not None:
            run.on_correlation(t, rho)
    personalized = aggregation.personalize(messages, strategy, rho)
    g_t = aggregation.server_average(personalized)
    new_w = server_w - (cfg.eta * lr) * g_t

    for c, r in zip(chosen, results):
        finish_round_client(c, r.phi_g, r.g_raw, g_t, cfg, lr, corrected=fedgcc)
    run.stale.update(set(range(len(run.clients))) - set(picked))

    run.uplink += sum(wire_bytes(m) for m in messages)
    run.downlink += dense_bytes(g_t.size) * len(chosen)
    loss = float(np.mean([r.loss for r in results]))
    return new_w, RoundRecord(t, loss, run.uplink, run.downlink)


def run_training(cfg: RoundConfig, train_sets: Sequence[WindowedDataset], algorithm: str = "fedgcc",
                 seed: int = 0, ids: Sequence[str] | None = None, hidden=(128, 128),
                 evaluate: Callable[[MlpModel], float] | None = None,
                 on_correlation: Callable[[int, np.ndarray], None] | None = None,
                 threads: int | None = None, init: MlpModel | None = None) -> TrainingResult:
    """Train for ``cfg.rounds`` rounds and return the final global model and history.

    ``evaluate`` (optional) maps the global model to a test RMSE recorded in
    each round's history entry.
    """
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}; choose from {', '.join(ALGORITHMS)}")
    if not train_sets:
        raise ValueError("need at least one client")
    for i, tr in enumerate(train_sets):
        if len(tr) == 0:
            raise ValueError(f"client {i} has an empty training set")
    p = train_sets[0].p
    if algorithm == "fedgcc" and cfg.strategy.kind == "k_relevant" and cfg.strategy.k > len(train_sets):
        raise ValueError(f"k={cfg.strategy.k} exceeds the number of clients ({len(train_sets)})")

    model = init if init is not None else init_params(p, RngStream(seed, INIT_STREAM), hidden)
    clients = make_clients(train_sets, model.dim, seed, ids)
    for c in clients:
        c.w_local = model.params.copy()
    run = _Run(algorithm, cfg, model.layer_dims, clients, RngStream(seed, SAMPLING_STREAM),
               threads if threads is not None else thread_count(), on_correlation)

    w = model.params.copy()
    history = []
    for t in range(cfg.rounds):
        w, rec = run_round(run, w, t)
        if not np.all(np.isfinite(w)):
            raise FloatingPointError(f"training diverged: non-finite global model after round {t}")
        if evaluate is not None:
            rec.rmse = evaluate(MlpModel(model.layer_dims, w))
        history.append(rec)
        log.debug("round %d loss %.6g uplink %d", t, rec.loss, rec.uplink_bytes)
    return TrainingResult(MlpModel(model.layer_dims, w), history, clients)


def with_algorithm_defaults(cfg: RoundConfig, algorithm: str) -> RoundConfig:
    """FedAvg and FedProx transmit uncompressed gradients."""
    if algorithm == "fedgcc":
        return cfg
    return replace(cfg, gamma=1.0, strategy=StrategyConfig(kind="mean"))
