"""Seeded randomness: splittable streams, batch subsets, geometric loop lengths.

All randomness in the package flows through `RngStream`, a counter-based
(Philox) generator keyed by a (seed, stream id) pair.  Batch draws, the
operator's random subset, inner-loop lengths, and the output-iterate draw
each live on a dedicated stream so that replaying one kind of draw never
perturbs another.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1

# Stream ids used by the optimizers.
STREAM_BATCH = 1
STREAM_GEOM = 2
STREAM_OPERATOR = 3
STREAM_OUTPUT = 4


class RngStream:
    """Deterministic random stream keyed by (seed, stream id).

    The same key reproduces the same draw sequence on every platform
    (Philox is pure integer arithmetic); distinct stream ids give
    statistically independent sequences.  A stream is single-owner:
    share seeds, not stream objects.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        key = np.array([self.seed & _MASK64, self.stream & _MASK64], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream={self.stream})"

    def replay(self) -> "RngStream":
        """Fresh stream positioned at the start of the same sequence."""
        return RngStream(self.seed, self.stream)

    def random(self, size=None):
        """Uniform float64 draw(s) in [0, 1)."""
        out = self._gen.random(size)
        return float(out) if size is None else out

    def uniform_open(self) -> float:
        """Uniform draw in (0, 1]."""
        return 1.0 - float(self._gen.random())

    def integers(self, low: int, high: int) -> int:
        """One exact uniform integer in [low, high)."""
        return int(self._gen.integers(low, high))

    def subset(self, n: int, size: int) -> np.ndarray:
        """Uniform random size-`size` subset of range(n), sorted ascending.

        Partial Fisher-Yates over an index array: the bounded-integer
        draws come from a single vectorized call, the swaps are applied
        in order, so uniformity is exact and the draw count is `size`
        (zero when size == n or size == 0).
        """
        if size < 0 or size > n:
            raise ValueError(f"subset size {size} out of range for n={n}")
        if size == n:
            return np.arange(n, dtype=np.int64)
        if size == 0:
            return np.empty(0, dtype=np.int64)
        arr = np.arange(n, dtype=np.int64)
        offsets = self._gen.integers(0, n - np.arange(size))
        for i in range(size):
            j = i + int(offsets[i])
            arr[i], arr[j] = arr[j], arr[i]
        sel = arr[:size]
        sel.sort()
        return sel

    def choose(self, pool: np.ndarray, size: int) -> np.ndarray:
        """Uniform random size-`size` subset of `pool`, sorted ascending."""
        pool = np.asarray(pool, dtype=np.int64)
        sel = self.subset(pool.size, size)
        out = pool[sel]
        out.sort()
        return out


@dataclass(frozen=True)
class GeomParams:
    """Geometric inner-loop length with mean m, supported on {0, 1, ...}."""

    m: float

    def __post_init__(self):
        if not self.m > 0:
            raise ValueError("mean m must be positive")

    @property
    def gamma(self) -> float:
        # P(N = k) = gamma^k (1 - gamma) has mean gamma/(1-gamma) = m.
        return self.m / (self.m + 1.0)


def sample_batch(n: int, size: int, rng: RngStream) -> np.ndarray:
    """Uniform random size-`size` subset of {0, ..., n-1}, without replacement."""
    if size < 1 or size > n:
        raise ValueError(f"batch size {size} out of range for n={n}")
    return rng.subset(n, size)


def draw_geometric(p: GeomParams, rng: RngStream) -> int:
    """One draw of N with P(N=k) = gamma^k (1-gamma), via inverse CDF."""
    u = rng.uniform_open()
    return int(math.floor(math.log(u) / math.log(p.gamma)))


def draw_geometric_many(p: GeomParams, rng: RngStream, count: int) -> np.ndarray:
    """Vectorized geometric draws (same inverse-CDF construction)."""
    u = 1.0 - rng.random(count)
    return np.floor(np.log(u) / math.log(p.gamma)).astype(np.int64)


def check_geom_lemma(m: float, sequence, trials: int, rng: RngStream):
    """Monte-Carlo check of E(D_N - D_{N+1}) = (D_0 - E D_N) / m for N ~ Geom(m).

    `sequence` maps integer arrays t to D_t and must be polynomially
    bounded.  Both sides are estimated from the same draws; returns
    (lhs, rhs).
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    p = GeomParams(m)
    ns = draw_geometric_many(p, rng, trials)
    d_n = np.asarray(sequence(ns), dtype=np.float64)
    d_n1 = np.asarray(sequence(ns + 1), dtype=np.float64)
    d_0 = float(np.asarray(sequence(np.zeros(1, dtype=np.int64)))[0])
    lhs = float(np.mean(d_n - d_n1))
    rhs = (d_0 - float(np.mean(d_n))) / m
    return lhs, rhs
