"""Small numeric helpers shared by the rest of the package.

Vectors are plain 1-D ``float64`` numpy arrays. Random numbers come from
:class:`RngStream`, a counter-based Philox4x64-10 generator keyed by
``(seed, stream_id)`` so that every client, the server and the data
generator each own an independent, reproducible stream.
"""

from __future__ import annotations

import math

import numpy as np

_TWO_POW_MINUS_53 = 1.0 / 9007199254740992.0


def as_vector(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError(f"expected a non-empty 1-D vector, got shape {v.shape}")
    return v


def pearson(a, b) -> float:
    """Pearson correlation with population statistics.

    Returns 1.0 when ``a is b``. If either operand has zero variance the
    pair is treated as uncorrelated and 0.0 is returned. The result is
    clamped into [-1, 1].
    """
    if a is b:
        return 1.0
    x = as_vector(a)
    y = as_vector(b)
    if x.size != y.size:
        raise ValueError(f"length mismatch: {x.size} != {y.size}")
    if x.size < 2:
        raise ValueError("pearson needs at least two samples")
    n = x.size
    xc = x - x.sum() / n
    yc = y - y.sum() / n
    sx = math.sqrt(float(np.dot(xc, xc)) / n)
    sy = math.sqrt(float(np.dot(yc, yc)) / n)
    if sx == 0.0 or sy == 0.0:
        return 0.0
    # dot and the product of stds are both commutative, so pearson(a, b) is
    # bitwise equal to pearson(b, a)
    r = (float(np.dot(xc, yc)) / n) / (sx * sy)
    return min(1.0, max(-1.0, r))


def softmax(r) -> np.ndarray:
    v = as_vector(r)
    z = np.exp(v - v.max())
    return z / z.sum()


def mean_std(v) -> tuple[float, float]:
    """Population mean and standard deviation (divide by n)."""
    x = as_vector(v)
    mean = float(x.sum() / x.size)
    dev = x - mean
    return mean, math.sqrt(float(np.dot(dev, dev)) / x.size)


class RngStream:
    """Deterministic random stream identified by ``(seed, stream_id)``.

    Raw output is Philox4x64-10 with key ``[seed, stream_id]``: block
    ``i = 1, 2, ...`` encrypts the counter ``(i, 0, 0, 0)`` and its four
    64-bit words are emitted in order. Derived draws are defined in terms
    of the raw words so they can be reproduced anywhere:

    * uniform: ``(raw >> 11) * 2**-53``, in [0, 1)
    * normal: Box-Muller on consecutive uniform pairs ``(u1, u2)``,
      ``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`` then ``... * sin(2 pi u2)``
    * integers below ``high``: ``floor(uniform * high)``

    A stream is single-owner mutable state; do not share one across threads.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        if not (0 <= seed < 2**64 and 0 <= stream_id < 2**64):
            raise ValueError("seed and stream_id must be unsigned 64-bit integers")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self._bitgen = np.random.Philox(key=np.array([self.seed, self.stream_id], dtype=np.uint64))
        self.draws = 0

    def raw(self, n: int) -> np.ndarray:
        self.draws += n
        return self._bitgen.random_raw(n)

    def uniform(self, n: int) -> np.ndarray:
        return (self.raw(n) >> np.uint64(11)).astype(np.float64) * _TWO_POW_MINUS_53

    def normal(self, n: int) -> np.ndarray:
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs)
        radius = np.sqrt(-2.0 * np.log1p(-u[0::2]))
        angle = 2.0 * np.pi * u[1::2]
        out = np.empty(2 * pairs)
        out[0::2] = radius * np.cos(angle)
        out[1::2] = radius * np.sin(angle)
        return out[:n]

    def integers(self, n: int, high: int) -> np.ndarray:
        if high < 1:
            raise ValueError("high must be >= 1")
        return np.floor(self.uniform(n) * high).astype(np.int64)

    def next_uniform(self) -> float:
        return float(self.uniform(1)[0])

    def next_normal(self) -> float:
        return float(self.normal(1)[0])

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, draws={self.draws})"
