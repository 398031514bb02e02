"""The random-top-k sparsification operator.

`rtop` keeps the k1 coordinates of y whose score has largest absolute
value, plus k2 uniformly random coordinates from the complement rescaled
by (d - k1)/k2, which makes the output an unbiased estimate of y.
`top_neg_k1` is the residual of y on the non-selected coordinates; its
squared norm drives the operator's variance.  `rtop_enumerate` computes
the exact mean and variance by brute-force enumeration of every random
subset and serves as the test oracle for the closed-form variance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .sampling import RngStream
from .vecops import SparseUpdate, as_vector

# rtop_enumerate refuses instances with more random subsets than this.
ENUMERATION_GUARD = 10**6


@dataclass(frozen=True)
class SparsityParams:
    """Operator sizes: k1 scored slots, k2 random slots, dimension d."""

    k1: int
    k2: int
    d: int

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be positive")
        if self.k1 < 0 or self.k2 < 0:
            raise ValueError("k1 and k2 must be nonnegative")
        if self.k1 > self.d:
            raise ValueError(f"k1={self.k1} exceeds d={self.d}")
        if self.k2 > self.d - self.k1:
            raise ValueError(f"k2={self.k2} exceeds d-k1={self.d - self.k1}")
        if self.k1 + self.k2 < 1:
            raise ValueError("k1 + k2 must be at least 1")
        if self.k2 == 0 and self.k1 != self.d:
            # The (d-k1)/k2 rescaling is undefined; only the k1=d identity
            # degenerates gracefully.
            raise ValueError("k2=0 is only valid when k1=d")

    @property
    def k(self) -> int:
        return self.k1 + self.k2

    @property
    def scale(self) -> float:
        """Rescaling applied to the random slots; exactly 1 when k1+k2=d."""
        if self.k2 == 0:
            return 1.0
        return (self.d - self.k1) / self.k2


def select_top_k1(score: np.ndarray, k1: int) -> np.ndarray:
    """Indices of the k1 largest |score| entries, sorted ascending.

    Ties at the threshold are broken toward smaller indices, so the
    selection equals the first k1 entries of a sort by (-|score|, index).
    The threshold comes from an introselect partition (np.partition),
    keeping worst-case linear time.
    """
    score = as_vector(score)
    d = score.size
    if k1 < 0 or k1 > d:
        raise ValueError(f"k1={k1} out of range for d={d}")
    if k1 == 0:
        return np.empty(0, dtype=np.int64)
    if k1 == d:
        return np.arange(d, dtype=np.int64)
    a = np.abs(score)
    kth = np.partition(a, d - k1)[d - k1]  # k1-th largest absolute value
    sel = np.flatnonzero(a > kth)
    need = k1 - sel.size
    if need > 0:
        ties = np.flatnonzero(a == kth)[:need]
        sel = np.sort(np.concatenate([sel, ties]))
    return sel.astype(np.int64)


def top_neg_k1(score: np.ndarray, y: np.ndarray, k1: int) -> np.ndarray:
    """y with the selected top-k1 coordinates zeroed out."""
    score = as_vector(score)
    y = as_vector(y, score.size)
    out = y.copy()
    out[select_top_k1(score, k1)] = 0.0
    return out


def draw_support(score: np.ndarray, p: SparsityParams, rng: RngStream):
    """Draw the operator support: (top indices, random complement indices).

    The random part is a uniform size-k2 subset of the complement of the
    selected top set, sampled by partial Fisher-Yates over the complement
    index array.
    """
    top = select_top_k1(score, p.k1)
    if p.k2 == 0:
        return top, np.empty(0, dtype=np.int64)
    mask = np.ones(p.d, dtype=bool)
    mask[top] = False
    comp = np.flatnonzero(mask)
    rand = rng.choose(comp, p.k2)
    return top, rand


def build_update(top: np.ndarray, rand: np.ndarray, p: SparsityParams,
                 y: np.ndarray) -> SparseUpdate:
    """Assemble the sparse estimate of y on a drawn support."""
    if rand.size:
        idx = np.concatenate([top, rand])
        vals = np.concatenate([y[top], p.scale * y[rand]])
        order = np.argsort(idx)
        return SparseUpdate(p.d, idx[order], vals[order])
    return SparseUpdate(p.d, top, y[top])


def rtop(score: np.ndarray, y: np.ndarray, p: SparsityParams,
         rng: RngStream) -> SparseUpdate:
    """Random-top-k estimate of y, scored by |score|.

    Support is T ∪ S with T the deterministic top-k1 selection and S a
    uniform random size-k2 subset of its complement; values are y on T
    and ((d-k1)/k2)·y on S.  Unbiased for y over the draw of S.
    """
    score = as_vector(score, p.d)
    y = as_vector(y, p.d)
    top, rand = draw_support(score, p, rng)
    return build_update(top, rand, p, y)


def rtop_enumerate(score: np.ndarray, y: np.ndarray, p: SparsityParams):
    """Exact mean vector and total variance of rtop by subset enumeration.

    Iterates every size-k2 subset of the complement (guarded by
    ENUMERATION_GUARD), so it is independent of the sampling path and of
    the closed-form variance expression it is used to check.  Variance is
    summed over coordinates.
    """
    score = as_vector(score, p.d)
    y = as_vector(y, p.d)
    top = select_top_k1(score, p.k1)
    mask = np.ones(p.d, dtype=bool)
    mask[top] = False
    comp = np.flatnonzero(mask)
    count = math.comb(comp.size, p.k2)
    if count > ENUMERATION_GUARD:
        raise ValueError(f"enumeration would visit {count} subsets "
                         f"(guard: {ENUMERATION_GUARD})")

    base = np.zeros(p.d, dtype=np.float64)
    base[top] = y[top]
    scale = p.scale

    total = np.zeros(p.d, dtype=np.float64)
    subsets = list(combinations(comp.tolist(), p.k2))
    for s in subsets:
        v = base.copy()
        if s:
            s = list(s)
            v[s] = scale * y[s]
        total += v
    mean = total / count

    var_acc = np.zeros(p.d, dtype=np.float64)
    for s in subsets:
        v = base.copy()
        if s:
            s = list(s)
            v[s] = scale * y[s]
        dev = v - mean
        var_acc += dev * dev
    variance = float(np.sum(var_acc / count))
    return mean, variance
