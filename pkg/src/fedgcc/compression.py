"""Top-gamma magnitude sparsification and the uplink byte model."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

VALUE_BYTES = 4
INDEX_BYTES = 4


@dataclass
class SparseGradient:
    dim: int
    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.indices.ndim != 1 or self.indices.shape != self.values.shape or self.indices.size < 1:
            raise ValueError("indices and values must be non-empty vectors of equal length")
        if np.any(np.diff(self.indices) <= 0):
            raise ValueError("indices must be strictly increasing")
        if self.indices[0] < 0 or self.indices[-1] >= self.dim:
            raise ValueError(f"indices out of range for dim {self.dim}")

    @property
    def nnz(self) -> int:
        return self.indices.size


def kept_count(dim: int, gamma: float) -> int:
    """``max(1, ceil(gamma * dim))``; the product is rounded to 9 decimals
    first so that e.g. ``0.07 * 100`` counts as 7, not 8."""
    return max(1, math.ceil(round(gamma * dim, 9)))


def sparsify_topk(g, gamma: float) -> SparseGradient:
    """Keep the ``max(1, ceil(gamma * d))`` entries of largest modulus.

    Ties in modulus go to the smaller index. ``gamma == 1`` keeps everything.
    """
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    g = np.asarray(g, dtype=np.float64)
    d = g.size
    if d < 1:
        raise ValueError("cannot sparsify an empty vector")
    k = kept_count(d, gamma)
    if k >= d:
        idx = np.arange(d)
    else:
        mod = np.abs(g)
        kth = np.partition(mod, d - k)[d - k]
        above = np.flatnonzero(mod > kth)
        # flatnonzero is ascending, so ties at the cut go to the smaller indices
        ties = np.flatnonzero(mod == kth)[:k - above.size]
        idx = np.union1d(above, ties)
    return SparseGradient(d, idx, g[idx].copy())


def densify(sg: SparseGradient) -> np.ndarray:
    out = np.zeros(sg.dim)
    out[sg.indices] = sg.values
    return out


def update_error_feedback(e, g, phi_g: SparseGradient) -> np.ndarray:
    """``e + g - densify(phi_g)``."""
    e = np.asarray(e, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if e.shape != g.shape or e.size != phi_g.dim:
        raise ValueError(f"dimension mismatch: e{e.shape}, g{g.shape}, phi dim {phi_g.dim}")
    return e + g - densify(phi_g)


def wire_bytes(sg: SparseGradient) -> int:
    """Uplink cost: 32-bit value plus 32-bit index per entry, or 4 bytes per
    coordinate when the message carries every coordinate."""
    if sg.nnz == sg.dim:
        return dense_bytes(sg.dim)
    return (VALUE_BYTES + INDEX_BYTES) * sg.nnz


def dense_bytes(dim: int) -> int:
    return VALUE_BYTES * dim


def to_bytes(sg: SparseGradient) -> bytes:
    """``[dim:u32][nnz:u32][indices:u32 x nnz][values:f32 x nnz]``, little-endian."""
    return (struct.pack("<II", sg.dim, sg.nnz)
            + sg.indices.astype("<u4").tobytes()
            + sg.values.astype("<f4").tobytes())


def from_bytes(buf: bytes) -> SparseGradient:
    dim, nnz = struct.unpack_from("<II", buf, 0)
    if len(buf) != 8 + 8 * nnz:
        raise ValueError(f"frame length {len(buf)} does not match nnz={nnz}")
    idx = np.frombuffer(buf, dtype="<u4", count=nnz, offset=8)
    vals = np.frombuffer(buf, dtype="<f4", count=nnz, offset=8 + 4 * nnz)
    return SparseGradient(dim, idx.astype(np.int64), vals.astype(np.float64))
