"""Sparse variance-reduced optimization: the main algorithm and baselines.

The main loop keeps a variance-reduction direction nu, refreshed by a
size-B snapshot gradient at the top of every outer loop and corrected at
every inner step by a sparsified small-batch gradient difference.  The
sparsification support (top-k1 scored by the memory vector, plus k2
random slots) is drawn before any gradient work, so both restricted
gradient evaluations touch only the selected coordinates and the query
meter charges 2*b*(k1+k2)/d per inner step.

Also here: the dense baseline (same loop with the operator replaced by
the identity), plain batch SGD, the exponential-moving-average memory
update, and the two hyperparameter calculators.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .diagnostics import QueryMeter, entropy_bits, measure_g_G
from .problems import FiniteSumProblem, ProblemConstants
from .sampling import (STREAM_BATCH, STREAM_GEOM, STREAM_OPERATOR,
                       STREAM_OUTPUT, GeomParams, RngStream, draw_geometric,
                       sample_batch)
from .sparsity import SparsityParams, build_update, draw_support
from .vecops import as_vector

log = logging.getLogger("sparsevr")


def ema_update(memory: np.ndarray, nu: np.ndarray, alpha: float) -> np.ndarray:
    """alpha*|nu| + (1-alpha)*memory, entrywise; preserves nonnegativity."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    return alpha * np.abs(nu) + (1.0 - alpha) * memory


@dataclass
class RunConfig:
    """Full configuration of one optimizer run."""

    problem: FiniteSumProblem
    eta: float
    m: int
    T: int
    B: int
    b: int
    alpha: float = 0.5
    k1: int = 0
    k2: int = 0
    inner_mode: str = "fixed"        # fixed | geometric
    output_mode: str = "last"        # last | uniform
    seed: int = 0
    x0: np.ndarray | None = None
    eta_end: float | None = None     # linear inner-loop interpolation when set
    record_grad_norm: bool = True
    record_capture: bool = False
    keep_iterates: bool = False
    debug_check_restricted: bool = False
    target_grad_norm: float | None = None
    divergence_factor: float = 1e6

    def validate(self) -> None:
        d, n = self.problem.d, self.problem.n
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.m < 1 or self.T < 1:
            raise ValueError("m and T must be at least 1")
        if self.B < 1 or self.b < 1:
            raise ValueError("B and b must be at least 1")
        if self.b > min(self.B, n):
            raise ValueError("need b <= min(B, n)")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        SparsityParams(self.k1, self.k2, d)  # validates the sparsity budget
        if self.inner_mode not in ("fixed", "geometric"):
            raise ValueError("inner_mode must be 'fixed' or 'geometric'")
        if self.output_mode not in ("last", "uniform"):
            raise ValueError("output_mode must be 'last' or 'uniform'")
        if self.x0 is not None:
            as_vector(self.x0, d)
        if self.eta_end is not None and not self.eta_end > 0:
            raise ValueError("eta_end must be positive")


@dataclass
class RunRow:
    """One outer-loop (or SGD checkpoint) record."""

    j: int
    n_inner: int
    loss: float
    grad_norm: float | None
    units: float
    queries_over_n: float
    entropy: float | None
    wall_ms: float
    g: float | None = None
    G: float | None = None
    R: float | None = None


@dataclass
class RunRecord:
    """Everything one run produced besides the final iterate."""

    algorithm: str
    seed: int
    n: int
    d: int
    rows: list[RunRow] = field(default_factory=list)
    meter: QueryMeter = field(default_factory=QueryMeter)
    aborted: bool = False
    abort_reason: str = ""
    iterates: list | None = None
    config_echo: dict = field(default_factory=dict)

    def inner_lengths(self):
        return [row.n_inner for row in self.rows]


def _config_echo(cfg: RunConfig, algorithm: str) -> dict:
    return {
        "algorithm": algorithm, "eta": cfg.eta, "m": cfg.m, "T": cfg.T,
        "B": cfg.B, "b": cfg.b, "alpha": cfg.alpha, "k1": cfg.k1,
        "k2": cfg.k2, "inner_mode": cfg.inner_mode,
        "output_mode": cfg.output_mode, "seed": cfg.seed,
        "eta_end": cfg.eta_end, "n": cfg.problem.n, "d": cfg.problem.d,
    }


def _inner_eta(cfg: RunConfig, t: int) -> float:
    if cfg.eta_end is None:
        return cfg.eta
    # interpolates from eta at t=0 down to eta_end at t=m
    frac = min(t, cfg.m) / cfg.m
    return cfg.eta_end + (cfg.eta - cfg.eta_end) * (1.0 - frac)


def _largest_remainder(total: int, weights: np.ndarray, caps: np.ndarray) -> np.ndarray:
    """Apportion `total` integer slots by weight, respecting per-entry caps."""
    weights = np.asarray(weights, dtype=np.float64)
    caps = np.asarray(caps, dtype=np.int64)
    if total > caps.sum():
        raise ValueError("not enough capacity for the requested allocation")
    if total == 0:
        return np.zeros(len(caps), dtype=np.int64)
    quota = total * weights / weights.sum()
    alloc = np.minimum(np.floor(quota).astype(np.int64), caps)
    remainder = quota - alloc
    order = np.argsort(-remainder, kind="stable")
    left = total - int(alloc.sum())
    while left > 0:
        progressed = False
        for i in order:
            if left == 0:
                break
            if alloc[i] < caps[i]:
                alloc[i] += 1
                left -= 1
                progressed = True
        if not progressed:
            raise ValueError("allocation failed to place all slots")
    return alloc


def allocate_block_sparsity(k1: int, k2: int, block_sizes) -> list[SparsityParams]:
    """Split a global (k1, k2) budget across parameter blocks.

    Shares are proportional to block size with largest-remainder rounding.
    Every block that is not fully covered by its top slots gets at least
    one random slot, so the blocked operator stays unbiased; the totals
    are preserved exactly.  When k1+k2 = d each block degenerates to the
    identity.
    """
    sizes = np.asarray(block_sizes, dtype=np.int64)
    if sizes.min() < 1:
        raise ValueError("block sizes must be positive")
    d = int(sizes.sum())
    SparsityParams(k1, k2, d)  # validates the global budget
    k1_b = _largest_remainder(k1, sizes, caps=sizes)
    cap2 = sizes - k1_b
    if k1 + k2 == d:
        k2_b = cap2
    else:
        base = (cap2 >= 1).astype(np.int64)
        mandatory = int(base.sum())
        if k2 < mandatory:
            raise ValueError(
                f"k2={k2} is too small for per-block allocation: every block "
                f"with free coordinates needs one random slot ({mandatory} blocks)")
        k2_b = base + _largest_remainder(k2 - mandatory, sizes, caps=cap2 - base)
    return [SparsityParams(int(a), int(b), int(s))
            for a, b, s in zip(k1_b, k2_b, sizes)]


class _Aborted(Exception):
    def __init__(self, reason):
        self.reason = reason


def _guard_finite(x: np.ndarray) -> None:
    if not np.isfinite(x).all():
        raise _Aborted("non-finite iterate")


def _spider_loop(cfg: RunConfig, sparse: bool, algorithm: str):
    """Shared outer/inner loop for the sparse and dense variants."""
    cfg.validate()
    prob = cfg.problem
    n, d = prob.n, prob.d
    snap = min(cfg.B, n)

    batch_rng = RngStream(cfg.seed, STREAM_BATCH)
    geom_rng = RngStream(cfg.seed, STREAM_GEOM)
    op_rng = RngStream(cfg.seed, STREAM_OPERATOR)
    out_rng = RngStream(cfg.seed, STREAM_OUTPUT)

    x = np.zeros(d) if cfg.x0 is None else as_vector(cfg.x0, d).copy()
    f0 = prob.full_loss(x)
    loss_ceiling = cfg.divergence_factor * max(abs(f0), 1.0)

    record = RunRecord(algorithm=algorithm, seed=cfg.seed, n=n, d=d,
                       config_echo=_config_echo(cfg, algorithm))
    record.iterates = [] if cfg.keep_iterates else None
    meter = record.meter

    blocks = None
    global_params = None
    if sparse:
        global_params = SparsityParams(cfg.k1, cfg.k2, d)
        ranges = prob.param_blocks()
        if ranges is not None and len(ranges) > 1:
            sizes = [hi - lo for lo, hi in ranges]
            blocks = list(zip([lo for lo, _ in ranges],
                              allocate_block_sparsity(cfg.k1, cfg.k2, sizes)))

    geom = GeomParams(cfg.m) if cfg.inner_mode == "geometric" else None
    out_index = out_rng.integers(1, cfg.T + 1) if cfg.output_mode == "uniform" else None
    x_stash = None

    # Memory init from its own large batch; this one-off snapshot is not part
    # of the per-outer-loop cost sum the meter tracks.
    i0 = sample_batch(n, snap, batch_rng)
    memory = np.abs(prob.grad_batch(i0, x))

    k = cfg.k1 + cfg.k2
    try:
        for j in range(1, cfg.T + 1):
            tic = time.perf_counter()
            i_snap = sample_batch(n, snap, batch_rng)
            nu = prob.grad_batch(i_snap, x)
            meter.charge_snapshot(cfg.B, n)
            n_j = cfg.m if geom is None else draw_geometric(geom, geom_rng)

            for t in range(n_j):
                eta_t = _inner_eta(cfg, t)
                x_new = x - eta_t * nu
                _guard_finite(x_new)
                i_t = sample_batch(n, cfg.b, batch_rng)

                if sparse:
                    if blocks is None:
                        supports = [(0, global_params,
                                     *draw_support(memory, global_params, op_rng))]
                    else:
                        supports = []
                        for lo, bp in blocks:
                            topb, randb = draw_support(
                                memory[lo:lo + bp.d], bp, op_rng)
                            supports.append((lo, bp, topb, randb))
                    joined = np.sort(np.concatenate(
                        [np.concatenate([lo + top, lo + rand])
                         for lo, _, top, rand in supports]))
                    g_next = prob.grad_batch_restricted(i_t, x_new, joined)
                    g_prev = prob.grad_batch_restricted(i_t, x, joined)
                    diff = g_next - g_prev
                    if cfg.debug_check_restricted:
                        dense_diff = (prob.grad_batch(i_t, x_new)
                                      - prob.grad_batch(i_t, x))
                        masked = np.zeros(d)
                        masked[joined] = dense_diff[joined]
                        if not np.array_equal(masked, diff):
                            raise RuntimeError(
                                "restricted-oracle update diverged from the "
                                "dense masked update")
                    nu = nu.copy()
                    for lo, bp, top, rand in supports:
                        upd = build_update(top, rand, bp, diff[lo:lo + bp.d])
                        nu[lo + upd.indices] += upd.values
                else:
                    g_next = prob.grad_batch(i_t, x_new)
                    g_prev = prob.grad_batch(i_t, x)
                    nu = nu + (g_next - g_prev)
                meter.charge_inner(cfg.b, k if sparse else d, d)

                memory = ema_update(memory, nu, cfg.alpha)
                x = x_new

            loss = prob.full_loss(x)
            if not math.isfinite(loss) or loss > loss_ceiling:
                raise _Aborted(f"divergence: loss {loss:.3e} at outer loop {j}")

            grad_norm = None
            if cfg.record_grad_norm or cfg.target_grad_norm is not None:
                grad_norm = float(np.linalg.norm(prob.full_grad(x)))
            ent = entropy_bits(memory) if memory.sum() > 0 else None

            g_val = big_g_val = r_val = None
            if cfg.record_capture:
                x_virtual = x - _inner_eta(cfg, n_j) * nu
                cap = measure_g_G(prob, memory, x_virtual, x, cfg.k1, cfg.b,
                                  rng=op_rng)
                g_val, big_g_val, r_val = cap.g, cap.G, cap.R

            wall_ms = (time.perf_counter() - tic) * 1e3
            record.rows.append(RunRow(
                j=j, n_inner=n_j, loss=loss, grad_norm=grad_norm,
                units=meter.units_float(),
                queries_over_n=meter.units_float() / n,
                entropy=ent, wall_ms=wall_ms, g=g_val, G=big_g_val, R=r_val))
            if record.iterates is not None:
                record.iterates.append(x.copy())
            if out_index is not None and j == out_index:
                x_stash = x.copy()
            if (cfg.target_grad_norm is not None and grad_norm is not None
                    and grad_norm <= cfg.target_grad_norm):
                break
    except _Aborted as ab:
        record.aborted = True
        record.abort_reason = ab.reason
        log.warning("%s run (seed %d) aborted: %s", algorithm, cfg.seed, ab.reason)

    if (cfg.output_mode == "uniform" and x_stash is not None
            and not record.aborted and cfg.target_grad_norm is None):
        x_out = x_stash
    else:
        x_out = x
    return x_out, record


def run_sparse_spiderboost(cfg: RunConfig):
    """Variance reduction with sparsified gradient-difference corrections.

    Outer loop: refresh nu from a size-min(B,n) snapshot batch.  Inner loop
    (m steps, or Geom(m) in 'geometric' mode): step x by -eta*nu, then add
    the sparsified small-batch gradient difference to nu and fold |nu| into
    the memory vector.  Returns the last iterate, or a uniformly chosen
    outer-loop iterate in 'uniform' output mode.
    """
    return _spider_loop(cfg, sparse=True, algorithm="sparse-spiderboost")


def run_spiderboost_dense(cfg: RunConfig):
    """Same loop with the identity in place of the sparsifier; inner steps
    cost the full 2b units."""
    return _spider_loop(cfg, sparse=False, algorithm="spiderboost")


def run_sgd(eta: float, b: int, steps: int, problem: FiniteSumProblem,
            seed: int, x0: np.ndarray | None = None,
            eta_decay: float | None = None, record_every: int | None = None,
            record_grad_norm: bool = True,
            target_grad_norm: float | None = None,
            divergence_factor: float = 1e6):
    """Plain batch SGD baseline; one size-b gradient (b cost units) per step.

    `eta_decay`, when set, multiplies the learning rate by that factor once
    per epoch (ceil(n/b) steps).
    """
    if eta <= 0 or b < 1 or steps < 1:
        raise ValueError("need eta > 0, b >= 1, steps >= 1")
    n, d = problem.n, problem.d
    if b > n:
        raise ValueError("need b <= n")
    batch_rng = RngStream(seed, STREAM_BATCH)
    x = np.zeros(d) if x0 is None else as_vector(x0, d).copy()
    f0 = problem.full_loss(x)
    loss_ceiling = divergence_factor * max(abs(f0), 1.0)
    record = RunRecord(algorithm="sgd", seed=seed, n=n, d=d,
                       config_echo={"algorithm": "sgd", "eta": eta, "b": b,
                                    "steps": steps, "seed": seed,
                                    "eta_decay": eta_decay, "n": n, "d": d})
    meter = record.meter
    if record_every is None:
        record_every = max(1, steps // 100)
    steps_per_epoch = max(1, math.ceil(n / b))

    tic = time.perf_counter()
    try:
        for t in range(1, steps + 1):
            step_eta = eta if eta_decay is None else eta * eta_decay ** ((t - 1) // steps_per_epoch)
            idx = sample_batch(n, b, batch_rng)
            x = x - step_eta * problem.grad_batch(idx, x)
            meter.charge_sgd(b)
            _guard_finite(x)
            if t % record_every == 0 or t == steps:
                loss = problem.full_loss(x)
                if not math.isfinite(loss) or loss > loss_ceiling:
                    raise _Aborted(f"divergence: loss {loss:.3e} at step {t}")
                grad_norm = None
                if record_grad_norm or target_grad_norm is not None:
                    grad_norm = float(np.linalg.norm(problem.full_grad(x)))
                record.rows.append(RunRow(
                    j=t, n_inner=1, loss=loss, grad_norm=grad_norm,
                    units=meter.units_float(),
                    queries_over_n=meter.units_float() / n,
                    entropy=None,
                    wall_ms=(time.perf_counter() - tic) * 1e3))
                tic = time.perf_counter()
                if (target_grad_norm is not None and grad_norm is not None
                        and grad_norm <= target_grad_norm):
                    break
    except _Aborted as ab:
        record.aborted = True
        record.abort_reason = ab.reason
        log.warning("sgd run (seed %d) aborted: %s", seed, ab.reason)
    return x, record


@dataclass(frozen=True)
class HyperparamInputs:
    """Inputs to the two parameter rules."""

    epsilon: float
    constants: ProblemConstants
    b: int
    k1: int
    k2: int
    d: int
    n: int

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.b < 1 or self.d < 1 or self.n < 1:
            raise ValueError("b, d, n must be positive")


def _check_k2(inp: HyperparamInputs) -> None:
    if inp.k2 == 0 and inp.k1 < inp.d:
        raise ValueError("k2=0 is only valid when k1=d")


def _snapshot_size(raw: float, inp: HyperparamInputs) -> int:
    # ceil(raw ∧ n), then lifted to at least the small batch so the run
    # configuration stays valid (a larger snapshot only helps).
    return int(min(inp.n, max(math.ceil(min(raw, inp.n)), inp.b, 1)))


def worst_case_hyperparams(inp: HyperparamInputs) -> dict:
    """Parameter rule with guarantees independent of gradient structure:
    B = ceil(2*sigma^2/eps^2 ∧ n), m = ceil(B*d/(b*(k1+k2))),
    eta = sqrt(k2/(6*d*m))/L, T = ceil(4*delta_f/(eta*m*eps^2))."""
    _check_k2(inp)
    c = inp.constants
    big_b = _snapshot_size(2.0 * c.sigma2 / inp.epsilon ** 2, inp)
    m = max(1, math.ceil(big_b * inp.d / (inp.b * (inp.k1 + inp.k2))))
    eta = math.sqrt(inp.k2 / (6.0 * inp.d * m)) / c.L
    big_t = max(1, math.ceil(4.0 * c.delta_f / (eta * m * inp.epsilon ** 2)))
    return {"B": big_b, "m": m, "eta": eta, "T": big_t}


def data_adaptive_hyperparams(inp: HyperparamInputs) -> dict:
    """Parameter rule whose guarantee tightens when the selection captures
    the gradient-difference energy: B = ceil(3*sigma^2/eps^2 ∧ n),
    m = ceil(B*d/(b*(k1+k2))), eta = sqrt((b ∧ m)/(3m))/L,
    T = ceil(6*delta_f/(eta*m*eps^2))."""
    _check_k2(inp)
    c = inp.constants
    big_b = _snapshot_size(3.0 * c.sigma2 / inp.epsilon ** 2, inp)
    m = max(1, math.ceil(big_b * inp.d / (inp.b * (inp.k1 + inp.k2))))
    eta = math.sqrt(min(inp.b, m) / (3.0 * m)) / c.L
    big_t = max(1, math.ceil(6.0 * c.delta_f / (eta * m * inp.epsilon ** 2)))
    return {"B": big_b, "m": m, "eta": eta, "T": big_t}


def apply_hyperparams(cfg: RunConfig, fragment: dict) -> RunConfig:
    """New config with the calculator outputs (B, m, eta, T) spliced in."""
    return replace(cfg, B=fragment["B"], m=fragment["m"],
                   eta=fragment["eta"], T=fragment["T"])
