"""Correlation-driven personalization of compressed client gradients.

The server sees only the sparse messages, so correlations are computed on
their densified form (zeros at untransmitted coordinates). For each client
``m`` a personalized gradient is formed from the messages of all
participants; the mean of the personalized gradients is the broadcast.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .compression import SparseGradient, densify
from .numerics import pearson, softmax

log = logging.getLogger(__name__)

STRATEGIES = ("mean", "k_relevant", "delta_threshold", "all_correlated")


@dataclass(frozen=True)
class StrategyConfig:
    kind: str = "k_relevant"
    k: int = 4
    delta: float = 0.5
    # divide the k-relevant / delta-threshold sums by the number of selected
    # clients; the raw sums grow the global step roughly k-fold and diverge
    # at the default learning rates
    normalize: bool = True

    def __post_init__(self):
        kind = self.kind.replace("-", "_")
        object.__setattr__(self, "kind", kind)
        if kind not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.kind!r}; choose from {', '.join(STRATEGIES)}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not -1.0 <= self.delta <= 1.0:
            raise ValueError("delta must lie in [-1, 1]")


def _dense_stack(grads) -> np.ndarray:
    if isinstance(grads, np.ndarray) and grads.ndim == 2:
        return grads
    rows = [densify(g) if isinstance(g, SparseGradient) else np.asarray(g, dtype=np.float64) for g in grads]
    dims = {r.size for r in rows}
    if len(dims) != 1:
        raise ValueError(f"dimension mismatch among gradients: {sorted(dims)}")
    return np.stack(rows)


def correlation_matrix(grads) -> np.ndarray:
    """Pearson matrix of the densified gradients, diagonal pinned to 1."""
    dense = _dense_stack(grads)
    n = dense.shape[0]
    if n < 2:
        raise ValueError("need at least two gradients")
    rho = np.eye(n)
    for m in range(n):
        for s in range(m + 1, n):
            rho[m, s] = rho[s, m] = pearson(dense[m], dense[s])
    return rho


def _rank_row(row: np.ndarray, m: int) -> np.ndarray:
    """Client indices by decreasing correlation; self first among ties, then lower index."""
    order = sorted(range(row.size), key=lambda s: (-row[s], s != m, s))
    return np.array(order)


def aggregate_k_relevant(rho, grads, m: int, k: int, normalize: bool = False) -> np.ndarray:
    dense = _dense_stack(grads)
    n = dense.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} must lie in [1, {n}]")
    chosen = _rank_row(np.asarray(rho)[m], m)[:k]
    out = dense[np.sort(chosen)].sum(axis=0)
    return out / k if normalize else out


def aggregate_threshold(rho, grads, m: int, delta: float, normalize: bool = False) -> np.ndarray:
    dense = _dense_stack(grads)
    row = np.asarray(rho)[m]
    mask = row >= delta
    mask[m] = True
    out = dense[mask].sum(axis=0)
    return out / mask.sum() if normalize else out


def aggregate_all_correlated(rho, grads, m: int) -> np.ndarray:
    dense = _dense_stack(grads)
    weights = softmax(np.asarray(rho)[m])
    return weights @ dense


def server_average(personalized) -> np.ndarray:
    stack = _dense_stack(personalized)
    return stack.sum(axis=0) / stack.shape[0]


def personalize(grads, strategy: StrategyConfig, rho=None) -> list[np.ndarray]:
    """Apply ``strategy`` for every client; returns one dense vector per client.

    ``rho`` is computed when needed and not supplied.
    """
    grads = _dense_stack(grads)
    n = grads.shape[0]
    if strategy.kind == "mean" or n == 1:
        return list(grads)
    if rho is None:
        rho = correlation_matrix(grads)
    if strategy.kind == "k_relevant":
        k = min(strategy.k, n)
        if k != strategy.k:
            log.debug("k=%d exceeds %d participants; using k=%d", strategy.k, n, k)
        return [aggregate_k_relevant(rho, grads, m, k, strategy.normalize) for m in range(n)]
    if strategy.kind == "delta_threshold":
        return [aggregate_threshold(rho, grads, m, strategy.delta, strategy.normalize) for m in range(n)]
    return [aggregate_all_correlated(rho, grads, m) for m in range(n)]
