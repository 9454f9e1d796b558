"""Locality-perceptive self-attention over the stride-16 grid.

Per head, scaled dot-product logits are multiplied elementwise by a coefficient
looked up from the (capped) Euclidean distance between the two grid cells,
then softmax-normalised. On integer grids with cap 2 the distance takes only
the values {0, 1, sqrt(2), 2}, so each head owns a 4-entry table.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .config import ModelConfig
from .module import Module, glorot
from .numeric import Tensor, ops

BUCKET_TOL = 1e-9


@dataclass(frozen=True)
class DistanceMatrix:
    values: np.ndarray      # (h*w, h*w), row-major cell order
    height: int
    width: int


def distance_buckets(cap: float = 2.0) -> np.ndarray:
    """Distinct values min(cap, |offset|) can take between integer grid cells."""
    r = int(np.floor(cap))
    dists = {min(cap, float(np.hypot(dy, dx))) for dy in range(r + 2) for dx in range(r + 2)}
    return np.array(sorted(dists))


@lru_cache(maxsize=32)
def _distances(height: int, width: int, cap: float) -> np.ndarray:
    ys, xs = np.divmod(np.arange(height * width), width)
    d = np.sqrt((ys[:, None] - ys[None, :]) ** 2 + (xs[:, None] - xs[None, :]) ** 2)
    d = np.minimum(d, cap)
    d.flags.writeable = False
    return d


def truncated_distance_matrix(height: int, width: int, cap: float = 2.0) -> DistanceMatrix:
    if height < 1 or width < 1:
        raise ValueError(f"grid extents must be >= 1, got {height}x{width}")
    return DistanceMatrix(_distances(height, width, float(cap)), height, width)


@lru_cache(maxsize=32)
def _bucket_index(height: int, width: int, cap: float) -> np.ndarray:
    return bucket_indices(_distances(height, width, cap), distance_buckets(cap))


def bucket_indices(d: np.ndarray, buckets: np.ndarray) -> np.ndarray:
    diff = np.abs(np.asarray(d)[..., None] - buckets)
    idx = diff.argmin(axis=-1)
    if not (diff.min(axis=-1) <= BUCKET_TOL).all():
        raise RuntimeError("distance entry matches no bucket; not an integer-grid distance")
    idx.flags.writeable = False
    return idx


def coefficient_matrix(d: DistanceMatrix, table: np.ndarray, head: int, cap: float = 2.0) -> np.ndarray:
    """R for one head: table[head][bucket(d[m, n])]."""
    table = np.asarray(table)
    return table[head][bucket_indices(d.values, distance_buckets(cap))]


def attention(query_in: Tensor, kv_in: Tensor, w_q, w_k, w_v, w_o, heads: int,
              coefficients: Tensor | None = None, sink: list | None = None) -> Tensor:
    """Multi-head attention; ``coefficients`` (heads, Nq, Nk) rescale the scaled logits before softmax."""
    nq, c = query_in.shape
    nk = kv_in.shape[0]
    dk = c // heads

    def split(x, n):
        return ops.transpose(ops.reshape(x, (n, heads, dk)), (1, 0, 2))

    q = split(ops.matmul(query_in, w_q), nq)
    k = split(ops.matmul(kv_in, w_k), nk)
    v = split(ops.matmul(kv_in, w_v), nk)
    logits = ops.scale(ops.matmul(q, ops.swap_last(k)), 1.0 / np.sqrt(dk))
    if coefficients is not None:
        logits = ops.mul(logits, coefficients)
    weights = ops.softmax_rows(logits)
    if sink is not None:
        sink.append(weights.data)
    mixed = ops.reshape(ops.transpose(ops.matmul(weights, v), (1, 0, 2)), (nq, c))
    return ops.matmul(mixed, w_o)


class LPALayer(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, prefix: str):
        super().__init__(prefix)
        c, h = cfg.channels, cfg.heads
        if c % h:
            raise ValueError(f"channels ({c}) must be divisible by heads ({h})")
        self.heads = h
        self.cap = float(cfg.distance_cap)
        self.w_q = self.param("w_q", glorot(rng, c, c, (c, c)))
        self.w_k = self.param("w_k", glorot(rng, c, c, (c, c)))
        self.w_v = self.param("w_v", glorot(rng, c, c, (c, c)))
        self.w_o = self.param("w_o", glorot(rng, c, c, (c, c)))
        # None means every coefficient is fixed at 1 (plain multi-head attention)
        self.bias_table = (self.param("bias_table", np.ones((h, len(distance_buckets(self.cap)))))
                           if cfg.locality_bias else None)
        self.ln_gamma = self.param("ln.gamma", np.ones(c))
        self.ln_beta = self.param("ln.beta", np.zeros(c))

    def coefficients(self, height: int, width: int) -> Tensor | None:
        if self.bias_table is None:
            return None
        return ops.take(self.bias_table, _bucket_index(height, width, self.cap), axis=1)

    def __call__(self, grid: Tensor, sink: list | None = None) -> Tensor:
        """``grid`` is (h, w, C); returns LN(attention(grid) + grid) with the same shape."""
        height, width, c = grid.shape
        tokens = ops.reshape(grid, (height * width, c))
        attended = attention(tokens, tokens, self.w_q, self.w_k, self.w_v, self.w_o, self.heads,
                             self.coefficients(height, width), sink)
        out = ops.layer_norm(attended + tokens, self.ln_gamma, self.ln_beta)
        return ops.reshape(out, (height, width, c))
