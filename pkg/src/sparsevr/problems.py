"""Finite-sum objectives f(x) = (1/n) sum_i f_i(x) with gradient oracles.

Each problem exposes component losses, vectorized batch gradients,
per-component gradient matrices, and a restricted-coordinate batch
gradient.  The restricted oracle computes the dense batch gradient and
masks it, so its values agree exactly with the dense path; the reduced
k/d cost is accounted by the optimizer's query meter, which follows the
cost model rather than wall-clock work.

Also here: closed-form or estimated problem constants (smoothness L,
gradient second-moment bound sigma^2, initial suboptimality delta_f),
seeded synthetic dataset generators, and the text dataset format.
"""

from __future__ import annotations

import abc
import math
from dataclasses import dataclass

import numpy as np

from .sampling import RngStream
from .vecops import as_vector


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # Stable in both tails.
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class FiniteSumProblem(abc.ABC):
    """Oracle interface shared by every objective in the package."""

    n: int
    d: int

    @abc.abstractmethod
    def component_loss(self, i: int, x: np.ndarray) -> float:
        """Loss of component i at x."""

    @abc.abstractmethod
    def grad_components(self, idx: np.ndarray, x: np.ndarray) -> np.ndarray:
        """len(idx) x d matrix whose rows are the per-component gradients."""

    @abc.abstractmethod
    def grad_batch(self, idx: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Average gradient over the components in idx."""

    @abc.abstractmethod
    def full_loss(self, x: np.ndarray) -> float:
        """f(x), averaged over all components."""

    def full_grad(self, x: np.ndarray) -> np.ndarray:
        return self.grad_batch(np.arange(self.n, dtype=np.int64), x)

    def grad_batch_restricted(self, idx: np.ndarray, x: np.ndarray,
                              coords: np.ndarray) -> np.ndarray:
        """Batch gradient masked to `coords`.

        Same code path as grad_batch up to the masking, so the surviving
        entries match the dense gradient bit for bit.
        """
        g = self.grad_batch(idx, x)
        out = np.zeros_like(g)
        out[coords] = g[coords]
        return out

    def smoothness_hint(self):
        """Closed-form component-Lipschitz constant, when one is known."""
        return None

    def reference_minimum(self):
        """(x*, f*) from a direct method, or None when not available."""
        return None

    def param_blocks(self):
        """Per-layer (lo, hi) coordinate ranges for blocked operators, or None."""
        return None


class LeastSquaresProblem(FiniteSumProblem):
    """f_i(x) = (a_i.x - b_i)^2 / 2 + ridge/2 ||x||^2."""

    def __init__(self, A: np.ndarray, b: np.ndarray, ridge: float = 0.0):
        A = np.ascontiguousarray(A, dtype=np.float64)
        b = np.ascontiguousarray(b, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
            raise ValueError("A must be a nonempty 2-D matrix")
        if b.shape != (A.shape[0],):
            raise ValueError("b must have one entry per row of A")
        if ridge < 0:
            raise ValueError("ridge must be nonnegative")
        if not (np.isfinite(A).all() and np.isfinite(b).all()):
            raise ValueError("design contains NaN or Inf")
        self.A, self.b, self.ridge = A, b, float(ridge)
        self.n, self.d = A.shape

    def component_loss(self, i, x):
        x = as_vector(x, self.d)
        r = float(self.A[i] @ x - self.b[i])
        return 0.5 * r * r + 0.5 * self.ridge * float(x @ x)

    def grad_components(self, idx, x):
        x = as_vector(x, self.d)
        sub = self.A[idx]
        r = sub @ x - self.b[idx]
        return sub * r[:, None] + self.ridge * x[None, :]

    def grad_batch(self, idx, x):
        x = as_vector(x, self.d)
        sub = self.A[idx]
        r = sub @ x - self.b[idx]
        return sub.T @ r / len(idx) + self.ridge * x

    def full_loss(self, x):
        x = as_vector(x, self.d)
        r = self.A @ x - self.b
        return 0.5 * float(r @ r) / self.n + 0.5 * self.ridge * float(x @ x)

    def smoothness_hint(self):
        return float(np.max(np.sum(self.A * self.A, axis=1))) + self.ridge

    def reference_minimum(self):
        """Normal-equation solve; falls back to lstsq for singular systems."""
        h = self.A.T @ self.A / self.n + self.ridge * np.eye(self.d)
        rhs = self.A.T @ self.b / self.n
        try:
            x_star = np.linalg.solve(h, rhs)
        except np.linalg.LinAlgError:
            x_star = np.linalg.lstsq(h, rhs, rcond=None)[0]
        return x_star, self.full_loss(x_star)


class LogisticProblem(FiniteSumProblem):
    """f_i(x) = log(1 + exp(-y_i a_i.x)) + ridge/2 ||x||^2, labels in {-1, +1}."""

    def __init__(self, A: np.ndarray, y: np.ndarray, ridge: float = 0.0):
        A = np.ascontiguousarray(A, dtype=np.float64)
        y = np.ascontiguousarray(y, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
            raise ValueError("A must be a nonempty 2-D matrix")
        if y.shape != (A.shape[0],):
            raise ValueError("y must have one label per row of A")
        if not np.all(np.isin(y, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")
        if ridge < 0:
            raise ValueError("ridge must be nonnegative")
        self.A, self.y, self.ridge = A, y, float(ridge)
        self.n, self.d = A.shape

    def _margins(self, idx, x):
        return self.y[idx] * (self.A[idx] @ x)

    def component_loss(self, i, x):
        x = as_vector(x, self.d)
        z = float(self.y[i] * (self.A[i] @ x))
        return float(np.logaddexp(0.0, -z)) + 0.5 * self.ridge * float(x @ x)

    def grad_components(self, idx, x):
        x = as_vector(x, self.d)
        z = self._margins(idx, x)
        w = -self.y[idx] * _sigmoid(-z)
        return self.A[idx] * w[:, None] + self.ridge * x[None, :]

    def grad_batch(self, idx, x):
        x = as_vector(x, self.d)
        z = self._margins(idx, x)
        w = -self.y[idx] * _sigmoid(-z)
        return self.A[idx].T @ w / len(idx) + self.ridge * x

    def full_loss(self, x):
        x = as_vector(x, self.d)
        z = self.y * (self.A @ x)
        return float(np.mean(np.logaddexp(0.0, -z))) + 0.5 * self.ridge * float(x @ x)

    def smoothness_hint(self):
        return 0.25 * float(np.max(np.sum(self.A * self.A, axis=1))) + self.ridge

    def reference_minimum(self, tol: float = 1e-10, max_iter: int = 200_000):
        """Long full-gradient descent at step 1/L; None if tol is not reached."""
        lip = self.smoothness_hint()
        x = np.zeros(self.d)
        step = 1.0 / lip
        for _ in range(max_iter):
            g = self.full_grad(x)
            if float(np.linalg.norm(g)) <= tol:
                return x, self.full_loss(x)
            x = x - step * g
        return None


class MLPProblem(FiniteSumProblem):
    """Fully connected net with sigmoid hidden layers and softmax cross-entropy.

    Parameters are flattened layer by layer (weights then bias) into one
    vector; `param_blocks` exposes the per-layer ranges so the optimizer
    can split its sparsity budget across layers.  Backprop is written by
    hand on numpy.
    """

    def __init__(self, layer_sizes, X: np.ndarray, labels: np.ndarray):
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 3:
            raise ValueError("need at least one hidden layer")
        if any(s < 1 for s in sizes):
            raise ValueError("layer sizes must be positive")
        X = np.ascontiguousarray(X, dtype=np.float64)
        labels = np.ascontiguousarray(labels, dtype=np.int64)
        if X.ndim != 2 or X.shape[1] != sizes[0]:
            raise ValueError("X must be n x input_dim")
        if labels.shape != (X.shape[0],):
            raise ValueError("one integer label per sample")
        if labels.min() < 0 or labels.max() >= sizes[-1]:
            raise ValueError("labels out of range for the output layer")
        self.sizes = sizes
        self.X, self.labels = X, labels
        self.n = X.shape[0]
        self._layout = []
        off = 0
        for nin, nout in zip(sizes[:-1], sizes[1:]):
            w_lo, w_hi = off, off + nin * nout
            b_lo, b_hi = w_hi, w_hi + nout
            self._layout.append((w_lo, w_hi, b_lo, b_hi, nin, nout))
            off = b_hi
        self.d = off

    def param_blocks(self):
        return [(w_lo, b_hi) for (w_lo, _, _, b_hi, _, _) in self._layout]

    def _unpack(self, x):
        out = []
        for w_lo, w_hi, b_lo, b_hi, nin, nout in self._layout:
            out.append((x[w_lo:w_hi].reshape(nin, nout), x[b_lo:b_hi]))
        return out

    def _forward(self, params, xb):
        """Activations per layer; the last entry holds the logits."""
        acts = [xb]
        z = xb
        for li, (w, b) in enumerate(params):
            a = z @ w + b
            z = a if li == len(params) - 1 else _sigmoid(a)
            acts.append(z)
        return acts

    @staticmethod
    def _log_softmax(logits):
        shifted = logits - logits.max(axis=1, keepdims=True)
        return shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))

    def _deltas(self, params, idx):
        """Backprop error signals per layer for the given samples."""
        acts = self._forward(params, self.X[idx])
        probs = np.exp(self._log_softmax(acts[-1]))
        delta = probs
        delta[np.arange(len(idx)), self.labels[idx]] -= 1.0
        deltas = [None] * len(params)
        deltas[-1] = delta
        for li in range(len(params) - 2, -1, -1):
            w_next = params[li + 1][0]
            z = acts[li + 1]
            deltas[li] = (deltas[li + 1] @ w_next.T) * z * (1.0 - z)
        return acts, deltas

    def component_loss(self, i, x):
        x = as_vector(x, self.d)
        params = self._unpack(x)
        acts = self._forward(params, self.X[i:i + 1])
        logp = self._log_softmax(acts[-1])
        return float(-logp[0, self.labels[i]])

    def full_loss(self, x):
        x = as_vector(x, self.d)
        params = self._unpack(x)
        acts = self._forward(params, self.X)
        logp = self._log_softmax(acts[-1])
        return float(-np.mean(logp[np.arange(self.n), self.labels]))

    def grad_batch(self, idx, x):
        x = as_vector(x, self.d)
        params = self._unpack(x)
        acts, deltas = self._deltas(params, idx)
        out = np.zeros(self.d)
        scale = 1.0 / len(idx)
        for li, (w_lo, w_hi, b_lo, b_hi, nin, nout) in enumerate(self._layout):
            out[w_lo:w_hi] = (acts[li].T @ deltas[li]).ravel() * scale
            out[b_lo:b_hi] = deltas[li].sum(axis=0) * scale
        return out

    def grad_components(self, idx, x):
        x = as_vector(x, self.d)
        params = self._unpack(x)
        acts, deltas = self._deltas(params, idx)
        out = np.zeros((len(idx), self.d))
        for li, (w_lo, w_hi, b_lo, b_hi, nin, nout) in enumerate(self._layout):
            per = np.einsum("bi,bj->bij", acts[li], deltas[li])
            out[:, w_lo:w_hi] = per.reshape(len(idx), nin * nout)
            out[:, b_lo:b_hi] = deltas[li]
        return out


class MatrixFactorizationProblem(FiniteSumProblem):
    """Squared loss on observed entries of a ratings matrix, rank-r factors.

    One component per observed (u, v): f_i = (P_u.Q_v - R_uv)^2 / 2 plus a
    local ridge on the touched factor rows, so each component gradient is
    supported on exactly 2r coordinates.
    """

    def __init__(self, rows, cols, vals, n_rows: int, n_cols: int,
                 rank: int, ridge: float = 0.0):
        rows = np.ascontiguousarray(rows, dtype=np.int64)
        cols = np.ascontiguousarray(cols, dtype=np.int64)
        vals = np.ascontiguousarray(vals, dtype=np.float64)
        if rows.size < 1:
            raise ValueError("need at least one observed rating")
        if not (rows.shape == cols.shape == vals.shape):
            raise ValueError("rows, cols, vals must have equal length")
        if rank < 1:
            raise ValueError("rank must be positive")
        if rows.min() < 0 or rows.max() >= n_rows:
            raise ValueError("row index out of range")
        if cols.min() < 0 or cols.max() >= n_cols:
            raise ValueError("column index out of range")
        if ridge < 0:
            raise ValueError("ridge must be nonnegative")
        self.rows, self.cols, self.vals = rows, cols, vals
        self.n_rows, self.n_cols, self.rank = int(n_rows), int(n_cols), int(rank)
        self.ridge = float(ridge)
        self.n = rows.size
        self.d = (self.n_rows + self.n_cols) * self.rank

    def _factors(self, x):
        r = self.rank
        p = x[:self.n_rows * r].reshape(self.n_rows, r)
        q = x[self.n_rows * r:].reshape(self.n_cols, r)
        return p, q

    def _coords(self, u, v):
        r = self.rank
        pc = u[:, None] * r + np.arange(r)[None, :]
        qc = self.n_rows * r + v[:, None] * r + np.arange(r)[None, :]
        return pc, qc

    def component_loss(self, i, x):
        x = as_vector(x, self.d)
        p, q = self._factors(x)
        u, v = self.rows[i], self.cols[i]
        e = float(p[u] @ q[v] - self.vals[i])
        reg = 0.5 * self.ridge * (float(p[u] @ p[u]) + float(q[v] @ q[v]))
        return 0.5 * e * e + reg

    def grad_components(self, idx, x):
        x = as_vector(x, self.d)
        p, q = self._factors(x)
        u, v = self.rows[idx], self.cols[idx]
        pu, qv = p[u], q[v]
        e = np.sum(pu * qv, axis=1) - self.vals[idx]
        gp = e[:, None] * qv + self.ridge * pu
        gq = e[:, None] * pu + self.ridge * qv
        out = np.zeros((len(idx), self.d))
        rowsel = np.arange(len(idx))[:, None]
        pc, qc = self._coords(u, v)
        out[rowsel, pc] = gp
        out[rowsel, qc] = gq
        return out

    def grad_batch(self, idx, x):
        x = as_vector(x, self.d)
        p, q = self._factors(x)
        u, v = self.rows[idx], self.cols[idx]
        pu, qv = p[u], q[v]
        e = np.sum(pu * qv, axis=1) - self.vals[idx]
        gp = e[:, None] * qv + self.ridge * pu
        gq = e[:, None] * pu + self.ridge * qv
        out = np.zeros(self.d)
        pc, qc = self._coords(u, v)
        # duplicate (u, v) rows in a batch must accumulate
        np.add.at(out, pc.ravel(), gp.ravel())
        np.add.at(out, qc.ravel(), gq.ravel())
        return out / len(idx)

    def full_loss(self, x):
        x = as_vector(x, self.d)
        p, q = self._factors(x)
        pu, qv = p[self.rows], q[self.cols]
        e = np.sum(pu * qv, axis=1) - self.vals
        reg = 0.5 * self.ridge * (np.sum(pu * pu, axis=1) + np.sum(qv * qv, axis=1))
        return float(np.mean(0.5 * e * e + reg))


@dataclass(frozen=True)
class ProblemConstants:
    """Certified or estimated constants driving the hyperparameter rules."""

    L: float
    sigma2: float
    delta_f: float
    f_star: float
    f_star_exact: bool

    def __post_init__(self):
        if not (self.L > 0 and self.sigma2 >= 0 and self.delta_f >= 0):
            raise ValueError("need L > 0, sigma2 >= 0, delta_f >= 0")


def _power_iteration_lipschitz(problem, x, iters: int = 40, h: float = 1e-5,
                               seed: int = 0) -> float:
    """Largest Hessian eigenvalue at x via finite-difference Hessian-vector
    products and power iteration."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(problem.d)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        hv = (problem.full_grad(x + h * v) - problem.full_grad(x - h * v)) / (2 * h)
        lam = float(np.linalg.norm(hv))
        if lam == 0.0:
            return 0.0
        v = hv / lam
    return lam


def estimate_constants(problem: FiniteSumProblem, probe_points,
                       rng: RngStream | None = None) -> ProblemConstants:
    """Estimate (L, sigma^2, delta_f) from probe points.

    sigma^2 is the max over probes of the mean squared per-component
    gradient norm -- a lower estimate of the sup over all x, so callers
    needing a certified bound must probe where the trajectory lives.
    L comes from the closed-form hint when the problem has one, else from
    finite-difference power iteration at the probes.  delta_f measures
    f(first probe) - f*, with f* from the direct reference solve when
    available and the best probed value (flagged inexact) otherwise.
    """
    probes = [as_vector(p, problem.d) for p in probe_points]
    if not probes:
        raise ValueError("need at least one probe point")

    sigma2 = 0.0
    chunk = 4096
    for x in probes:
        acc = 0.0
        for lo in range(0, problem.n, chunk):
            idx = np.arange(lo, min(lo + chunk, problem.n), dtype=np.int64)
            comps = problem.grad_components(idx, x)
            acc += float(np.sum(comps * comps))
        sigma2 = max(sigma2, acc / problem.n)

    lip = problem.smoothness_hint()
    if lip is None:
        lip = max(_power_iteration_lipschitz(problem, x) for x in probes)
    if lip <= 0:
        lip = 1.0

    ref = problem.reference_minimum()
    if ref is not None:
        _, f_star = ref
        exact = True
    else:
        f_star = min(problem.full_loss(x) for x in probes)
        exact = False
    delta_f = max(problem.full_loss(probes[0]) - f_star, 0.0)
    return ProblemConstants(L=float(lip), sigma2=float(sigma2),
                            delta_f=float(delta_f), f_star=float(f_star),
                            f_star_exact=exact)


# ---------------------------------------------------------------------------
# Seeded synthetic generators
# ---------------------------------------------------------------------------

def gen_planted_ls(n: int, d: int, s_active: int, seed: int,
                   signal_norm: float = 1.0, tau: float = 0.1,
                   noise: float = 0.05, normalize_rows: bool = True):
    """Planted sparse least squares: s_active large-scale columns carry the
    signal, the rest are scaled by tau.  Returns (A, b, x_true).

    Rows are unit-normalized by default so the component smoothness
    constant is exactly 1.  tau=1 with s_active=d gives the isotropic
    (non-sparse) control of equal scale.
    """
    if not 1 <= s_active <= d:
        raise ValueError("s_active out of range")
    rng = np.random.default_rng(seed)
    active = rng.choice(d, size=s_active, replace=False)
    active.sort()
    scales = np.full(d, tau)
    scales[active] = 1.0
    a = rng.standard_normal((n, d)) * scales[None, :]
    if normalize_rows:
        a /= np.linalg.norm(a, axis=1, keepdims=True)
    x_true = np.zeros(d)
    coeff = rng.standard_normal(s_active)
    coeff *= signal_norm / np.linalg.norm(coeff)
    x_true[active] = coeff
    b = a @ x_true + noise * rng.standard_normal(n)
    return a, b, x_true


def gen_gaussian_ls(n: int, d: int, seed: int, signal_norm: float = 1.0,
                    noise: float = 0.05, normalize_rows: bool = True):
    """Dense Gaussian least squares (all columns equal scale)."""
    return gen_planted_ls(n, d, s_active=d, seed=seed, signal_norm=signal_norm,
                          tau=1.0, noise=noise, normalize_rows=normalize_rows)


def gen_logistic_blobs(n: int, d: int, seed: int, separation: float = 2.0):
    """Two Gaussian blobs at +/- separation/2 along a random direction,
    labels in {-1, +1}.  Returns (A, y)."""
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal(d)
    direction /= np.linalg.norm(direction)
    y = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    a = rng.standard_normal((n, d)) + (separation / 2.0) * y[:, None] * direction[None, :]
    return a, y


def gen_class_blobs(n: int, d: int, classes: int, seed: int,
                    separation: float = 3.0):
    """`classes` Gaussian clusters with random centers, integer labels.
    Returns (X, labels)."""
    if classes < 2:
        raise ValueError("need at least two classes")
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((classes, d))
    centers *= separation / np.linalg.norm(centers, axis=1, keepdims=True)
    labels = rng.integers(0, classes, size=n)
    x = rng.standard_normal((n, d)) + centers[labels]
    return x, labels.astype(np.int64)


def gen_low_rank_ratings(n_rows: int, n_cols: int, rank: int, seed: int,
                         density: float = 0.3, noise: float = 0.0):
    """Planted low-rank ratings.  Returns (rows, cols, vals, P, Q)."""
    if not (0 < density <= 1):
        raise ValueError("density must be in (0, 1]")
    rng = np.random.default_rng(seed)
    p = rng.standard_normal((n_rows, rank)) / math.sqrt(rank)
    q = rng.standard_normal((n_cols, rank)) / math.sqrt(rank)
    total = n_rows * n_cols
    count = max(1, int(round(density * total)))
    flat = rng.choice(total, size=count, replace=False)
    flat.sort()
    rows = flat // n_cols
    cols = flat % n_cols
    vals = np.sum(p[rows] * q[cols], axis=1) + noise * rng.standard_normal(count)
    return rows, cols, vals, p, q


# ---------------------------------------------------------------------------
# Text dataset format: whitespace-separated, one sample per line, label first
# ---------------------------------------------------------------------------

def save_labeled_dataset(path, labels, features):
    """Write 'label f1 ... fd' lines."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    with open(path, "w", encoding="utf-8") as fh:
        for lab, row in zip(labels, features):
            fh.write("%.17g " % lab + " ".join("%.17g" % v for v in row) + "\n")


def load_labeled_dataset(path):
    """Read (labels, features) from the text format."""
    labels, rows = [], []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 2:
                raise ValueError(f"{path}:{ln}: need a label and at least one feature")
            if width is None:
                width = len(parts)
            elif len(parts) != width:
                raise ValueError(f"{path}:{ln}: inconsistent column count")
            labels.append(float(parts[0]))
            rows.append([float(v) for v in parts[1:]])
    if not rows:
        raise ValueError(f"{path}: empty dataset")
    return np.array(labels), np.array(rows)


def save_ratings_dataset(path, rows, cols, vals):
    """Write 'rating u v' lines (rating first, per the labeled format)."""
    with open(path, "w", encoding="utf-8") as fh:
        for r, u, v in zip(vals, rows, cols):
            fh.write("%.17g %d %d\n" % (r, u, v))


def load_ratings_dataset(path):
    """Read (rows, cols, vals) from 'rating u v' lines."""
    rows, cols, vals = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3:
                raise ValueError(f"{path}:{ln}: expected 'rating u v'")
            vals.append(float(parts[0]))
            cols_v = int(parts[2])
            rows_v = int(parts[1])
            if rows_v < 0 or cols_v < 0:
                raise ValueError(f"{path}:{ln}: negative index")
            rows.append(rows_v)
            cols.append(cols_v)
    if not vals:
        raise ValueError(f"{path}: empty dataset")
    return (np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64),
            np.array(vals))
