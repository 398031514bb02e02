"""Command-line surface: dataset generation, experiments, and self-checks.

Verbs:
  gen    write a synthetic dataset to a text file
  run    execute an experiment described by a key=value config (or preset)
  check  run the built-in invariant/oracle suite
  hyper  print the calculator output for given accuracy and constants

Configs are flat `section.key = value` lines; unknown or duplicate keys
are rejected with their line number before any computation starts.  Each
(algorithm, seed) run writes one CSV; an aggregate CSV keyed by
queries-over-n bins is rebuilt from the per-run files afterwards.  Set
SPARSE_VR_LOG=DEBUG|INFO|... for logging verbosity.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import io
import logging
import math
import os
import sys
import tempfile

import numpy as np

from . import problems as prob_mod
from .diagnostics import entropy_bits
from .optimize import (HyperparamInputs, RunConfig, data_adaptive_hyperparams,
                       run_sgd, run_sparse_spiderboost, run_spiderboost_dense,
                       worst_case_hyperparams)
from .problems import (LeastSquaresProblem, LogisticProblem,
                       MatrixFactorizationProblem, MLPProblem,
                       estimate_constants)

log = logging.getLogger("sparsevr")

ALGORITHMS = ("sparse-spiderboost", "spiderboost", "sgd")
PROBLEM_KINDS = ("gaussian-ls", "planted-sparse-ls", "logistic-blobs",
                 "mlp-blobs", "low-rank-ratings", "ls-file", "logistic-file",
                 "ratings-file")
GEN_KINDS = ("gaussian-ls", "planted-sparse-ls", "logistic-blobs",
             "low-rank-ratings")

CSV_HEADER = ["j", "N_j", "queries_over_n", "loss", "grad_norm",
              "entropy_bits", "wall_ms"]
AGG_HEADER = ["algorithm", "queries_over_n", "seeds", "loss_mean",
              "loss_median", "grad_norm_mean", "entropy_mean"]


class ConfigError(ValueError):
    pass


def _parse_bool(s):
    if s in ("true", "1", "yes"):
        return True
    if s in ("false", "0", "no"):
        return False
    raise ValueError(f"expected true/false, got {s!r}")


def _parse_ints(s):
    return [int(v) for v in s.split(",") if v.strip() != ""]


def _parse_algs(s):
    algs = [v.strip() for v in s.split(",") if v.strip()]
    for a in algs:
        if a not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {a!r} (choices: {ALGORITHMS})")
    if not algs:
        raise ValueError("need at least one algorithm")
    return algs


def _parse_kind(s):
    if s not in PROBLEM_KINDS:
        raise ValueError(f"unknown problem kind {s!r} (choices: {PROBLEM_KINDS})")
    return s


def _parse_mode(s):
    if s not in ("impl", "theory"):
        raise ValueError(f"mode must be 'impl' or 'theory', got {s!r}")
    return s


def _parse_rule(s):
    if s not in ("none", "worst-case", "data-adaptive"):
        raise ValueError(f"rule must be none/worst-case/data-adaptive, got {s!r}")
    return s


_REQUIRED = object()

# key -> (parser, default); _REQUIRED defaults are checked per problem kind.
_SCHEMA = {
    "problem.kind": (_parse_kind, _REQUIRED),
    "problem.path": (str, None),
    "problem.n": (int, None),
    "problem.d": (int, None),
    "problem.s_active": (int, 5),
    "problem.tau": (float, 0.1),
    "problem.signal": (float, 1.0),
    "problem.noise": (float, 0.05),
    "problem.ridge": (float, 0.0),
    "problem.seed": (int, 0),
    "problem.separation": (float, 2.0),
    "problem.classes": (int, 3),
    "problem.hidden": (_parse_ints, [8]),
    "problem.rows": (int, 30),
    "problem.cols": (int, 20),
    "problem.rank": (int, 2),
    "problem.density": (float, 0.3),
    "opt.algorithm": (_parse_algs, ["sparse-spiderboost"]),
    "opt.eta": (float, 0.1),
    "opt.m": (int, 10),
    "opt.T": (int, 50),
    "opt.B": (int, 1000),
    "opt.b": (int, 100),
    "opt.alpha": (float, 0.5),
    "opt.k1": (int, None),
    "opt.k2": (int, None),
    "opt.rule": (_parse_rule, "none"),
    "opt.epsilon": (float, None),
    "opt.steps": (int, None),
    "opt.eta_end": (float, None),
    "opt.eta_decay": (float, None),
    "run.seeds": (_parse_ints, [0]),
    "run.mode": (_parse_mode, "impl"),
    "run.out": (str, "runs"),
    "run.record_grad_norm": (_parse_bool, True),
    "run.capture": (_parse_bool, False),
    "run.timing": (_parse_bool, False),
    "run.bins": (int, 50),
    "run.jobs": (int, 1),
    "run.target_grad_norm": (float, None),
}


class ExperimentSpec:
    """Validated experiment description plus the constructed problem."""

    def __init__(self, values: dict):
        self.values = values
        self.problem = build_problem(values)
        d = self.problem.d
        if values["opt.k1"] is None:
            values["opt.k1"] = max(1, round(0.05 * d))
        if values["opt.k2"] is None:
            values["opt.k2"] = max(1, round(0.05 * d))
        self.algorithms = values["opt.algorithm"]
        self.seeds = values["run.seeds"]
        self.mode = values["run.mode"]
        self.out_dir = values["run.out"]
        self._validate()
        self.fragments = self._resolve_rule()

    def __getitem__(self, key):
        return self.values[key]

    def _validate(self):
        v = self.values
        d, n = self.problem.d, self.problem.n
        if v["opt.k1"] + v["opt.k2"] > d:
            raise ConfigError(f"opt.k1 + opt.k2 = {v['opt.k1'] + v['opt.k2']} "
                              f"exceeds problem dimension d={d}")
        if v["opt.k1"] < 0 or v["opt.k2"] < 0:
            raise ConfigError("opt.k1 and opt.k2 must be nonnegative")
        if v["opt.k2"] == 0 and v["opt.k1"] != d:
            raise ConfigError("opt.k2 = 0 is only valid when opt.k1 = d")
        if v["opt.b"] > n:
            raise ConfigError(f"opt.b = {v['opt.b']} exceeds n = {n}")
        if v["opt.b"] > min(v["opt.B"], n):
            raise ConfigError("opt.b must not exceed min(opt.B, n)")
        if v["opt.eta"] <= 0:
            raise ConfigError("opt.eta must be positive")
        if v["opt.rule"] != "none" and v["opt.epsilon"] is None:
            raise ConfigError("opt.epsilon is required when opt.rule is set")
        if not self.seeds:
            raise ConfigError("run.seeds must list at least one seed")
        if v["run.bins"] < 1:
            raise ConfigError("run.bins must be positive")
        if v["run.jobs"] < 1:
            raise ConfigError("run.jobs must be positive")

    def _resolve_rule(self):
        """Per-algorithm (B, m, eta, T) fragments from the chosen rule."""
        v = self.values
        frags = {}
        if v["opt.rule"] == "none":
            return frags
        probes = [np.zeros(self.problem.d)]
        ref = self.problem.reference_minimum()
        if ref is not None:
            x_star, _ = ref
            probes.append(x_star)
            probes.append(x_star + 2.0 * (probes[0] - x_star))
        consts = estimate_constants(self.problem, probes)
        calc = (worst_case_hyperparams if v["opt.rule"] == "worst-case"
                else data_adaptive_hyperparams)
        for alg in self.algorithms:
            if alg == "sgd":
                continue  # the rules parameterize the variance-reduced runs only
            k1, k2 = ((v["opt.k1"], v["opt.k2"]) if alg == "sparse-spiderboost"
                      else (0, self.problem.d))
            inp = HyperparamInputs(epsilon=v["opt.epsilon"], constants=consts,
                                   b=v["opt.b"], k1=k1, k2=k2,
                                   d=self.problem.d, n=self.problem.n)
            frags[alg] = calc(inp)
        return frags


def parse_config(text: str) -> ExperimentSpec:
    """Parse and fully validate a key=value config; no partial results."""
    values = {}
    seen = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected 'key = value'")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _SCHEMA:
            raise ConfigError(f"line {ln}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {ln}: duplicate key {key!r} "
                              f"(first set on line {seen[key]})")
        seen[key] = ln
        parser, _ = _SCHEMA[key]
        try:
            values[key] = parser(val)
        except ValueError as exc:
            raise ConfigError(f"line {ln}: bad value for {key!r}: {exc}") from exc
    for key, (_, default) in _SCHEMA.items():
        if key not in values:
            if default is _REQUIRED:
                raise ConfigError(f"missing required key {key!r}")
            values[key] = default
    try:
        return ExperimentSpec(values)
    except (ValueError, OSError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def build_problem(v: dict):
    """Construct the problem a config describes (also used by `gen`)."""
    kind = v["problem.kind"]
    seed = v["problem.seed"]
    ridge = v["problem.ridge"]

    def need(*keys):
        for k in keys:
            if v.get(k) is None:
                raise ConfigError(f"{k} is required for problem.kind={kind}")

    if kind in ("gaussian-ls", "planted-sparse-ls"):
        need("problem.n", "problem.d")
        if kind == "gaussian-ls":
            a, b, _ = prob_mod.gen_gaussian_ls(
                v["problem.n"], v["problem.d"], seed,
                signal_norm=v["problem.signal"], noise=v["problem.noise"])
        else:
            a, b, _ = prob_mod.gen_planted_ls(
                v["problem.n"], v["problem.d"], v["problem.s_active"], seed,
                signal_norm=v["problem.signal"], tau=v["problem.tau"],
                noise=v["problem.noise"])
        return LeastSquaresProblem(a, b, ridge)
    if kind == "logistic-blobs":
        need("problem.n", "problem.d")
        a, y = prob_mod.gen_logistic_blobs(v["problem.n"], v["problem.d"],
                                           seed, v["problem.separation"])
        return LogisticProblem(a, y, ridge)
    if kind == "mlp-blobs":
        need("problem.n", "problem.d")
        x, labels = prob_mod.gen_class_blobs(v["problem.n"], v["problem.d"],
                                             v["problem.classes"], seed,
                                             v["problem.separation"])
        layout = [v["problem.d"]] + list(v["problem.hidden"]) + [v["problem.classes"]]
        return MLPProblem(layout, x, labels)
    if kind == "low-rank-ratings":
        rows, cols, vals, _, _ = prob_mod.gen_low_rank_ratings(
            v["problem.rows"], v["problem.cols"], v["problem.rank"], seed,
            density=v["problem.density"], noise=v["problem.noise"])
        return MatrixFactorizationProblem(rows, cols, vals, v["problem.rows"],
                                          v["problem.cols"], v["problem.rank"],
                                          ridge)
    if kind in ("ls-file", "logistic-file"):
        need("problem.path")
        labels, feats = prob_mod.load_labeled_dataset(v["problem.path"])
        if kind == "ls-file":
            return LeastSquaresProblem(feats, labels, ridge)
        return LogisticProblem(feats, labels, ridge)
    if kind == "ratings-file":
        need("problem.path")
        rows, cols, vals = prob_mod.load_ratings_dataset(v["problem.path"])
        return MatrixFactorizationProblem(rows, cols, vals,
                                          int(rows.max()) + 1,
                                          int(cols.max()) + 1,
                                          v["problem.rank"], ridge)
    raise ConfigError(f"unknown problem kind {kind!r}")


# ---------------------------------------------------------------------------
# Experiment execution and CSV persistence
# ---------------------------------------------------------------------------

def _fmt(x):
    if x is None:
        return ""
    return "%.17g" % x


def _atomic_write(path: str, data: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def render_run_csv(record, timing: bool) -> str:
    """Per-run CSV with the config echoed as '#' header comments."""
    buf = io.StringIO()
    for key in sorted(record.config_echo):
        buf.write(f"# {key} = {record.config_echo[key]}\n")
    if record.aborted:
        buf.write(f"# aborted = {record.abort_reason}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in record.rows:
        writer.writerow([
            row.j, row.n_inner, _fmt(row.queries_over_n), _fmt(row.loss),
            _fmt(row.grad_norm), _fmt(row.entropy),
            _fmt(row.wall_ms) if timing else "",
        ])
    return buf.getvalue()


def read_run_csv(path: str):
    """(algorithm, rows-as-dicts) from a per-run CSV."""
    algorithm = None
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh]
    body = []
    for ln in lines:
        if ln.startswith("#"):
            stripped = ln[1:].strip()
            if stripped.startswith("algorithm ="):
                algorithm = stripped.split("=", 1)[1].strip()
            continue
        body.append(ln)
    reader = csv.DictReader(body)
    for rec in reader:
        rows.append({
            "queries_over_n": float(rec["queries_over_n"]),
            "loss": float(rec["loss"]),
            "grad_norm": float(rec["grad_norm"]) if rec["grad_norm"] else None,
            "entropy_bits": float(rec["entropy_bits"]) if rec["entropy_bits"] else None,
        })
    return algorithm, rows


def build_aggregate(run_paths, bins: int) -> str:
    """Aggregate CSV keyed by queries-over-n bins; a pure function of the
    per-run CSVs (each run contributes its last row at or before each
    bin edge)."""
    runs = [read_run_csv(p) for p in sorted(run_paths)]
    max_q = 0.0
    for _, rows in runs:
        if rows:
            max_q = max(max_q, rows[-1]["queries_over_n"])
    edges = [max_q * (i + 1) / bins for i in range(bins)] if max_q > 0 else []
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(AGG_HEADER)
    algorithms = sorted({alg for alg, _ in runs if alg})
    for alg in algorithms:
        per_run = [rows for a, rows in runs if a == alg]
        for edge in edges:
            losses, grads, ents = [], [], []
            for rows in per_run:
                last = None
                for row in rows:
                    if row["queries_over_n"] <= edge * (1 + 1e-12):
                        last = row
                    else:
                        break
                if last is not None:
                    losses.append(last["loss"])
                    if last["grad_norm"] is not None:
                        grads.append(last["grad_norm"])
                    if last["entropy_bits"] is not None:
                        ents.append(last["entropy_bits"])
            if not losses:
                continue
            writer.writerow([
                alg, _fmt(edge), len(losses),
                _fmt(float(np.mean(losses))), _fmt(float(np.median(losses))),
                _fmt(float(np.mean(grads))) if grads else "",
                _fmt(float(np.mean(ents))) if ents else "",
            ])
    return buf.getvalue()


def _execute_run(spec_values: dict, fragment: dict | None, algorithm: str,
                 seed: int):
    """Build the problem and run one (algorithm, seed) cell."""
    problem = build_problem(spec_values)
    v = spec_values
    mode = v["run.mode"]
    if algorithm == "sgd":
        steps = v["opt.steps"] if v["opt.steps"] is not None else v["opt.m"] * v["opt.T"]
        _, record = run_sgd(v["opt.eta"], min(v["opt.b"], problem.n), steps,
                            problem, seed, eta_decay=v["opt.eta_decay"],
                            record_grad_norm=v["run.record_grad_norm"],
                            target_grad_norm=v["run.target_grad_norm"])
        return record
    cfg = RunConfig(
        problem=problem, eta=v["opt.eta"], m=v["opt.m"], T=v["opt.T"],
        B=v["opt.B"], b=v["opt.b"], alpha=v["opt.alpha"],
        k1=v["opt.k1"] if algorithm == "sparse-spiderboost" else 0,
        k2=v["opt.k2"] if algorithm == "sparse-spiderboost" else problem.d,
        inner_mode="geometric" if mode == "theory" else "fixed",
        output_mode="uniform" if mode == "theory" else "last",
        seed=seed, eta_end=v["opt.eta_end"],
        record_grad_norm=v["run.record_grad_norm"],
        record_capture=v["run.capture"],
        target_grad_norm=v["run.target_grad_norm"])
    if fragment:
        cfg.B, cfg.m, cfg.eta, cfg.T = (fragment["B"], fragment["m"],
                                        fragment["eta"], fragment["T"])
        cfg.b = min(cfg.b, cfg.B)
    runner = (run_sparse_spiderboost if algorithm == "sparse-spiderboost"
              else run_spiderboost_dense)
    _, record = runner(cfg)
    return record


def run_experiment(spec: ExperimentSpec) -> int:
    """Run every (algorithm, seed) cell, write per-run CSVs and the
    aggregate.  Returns 0 iff all runs completed without divergence."""
    os.makedirs(spec.out_dir, exist_ok=True)
    cells = [(alg, seed) for alg in spec.algorithms for seed in spec.seeds]
    jobs = min(spec["run.jobs"], len(cells))
    records = {}
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {
                pool.submit(_execute_run, spec.values,
                            spec.fragments.get(alg), alg, seed): (alg, seed)
                for alg, seed in cells}
            for fut in concurrent.futures.as_completed(futures):
                records[futures[fut]] = fut.result()
    else:
        for alg, seed in cells:
            records[(alg, seed)] = _execute_run(spec.values,
                                                spec.fragments.get(alg),
                                                alg, seed)

    timing = spec["run.timing"]
    paths = []
    status = 0
    for alg, seed in cells:  # deterministic write order
        record = records[(alg, seed)]
        path = os.path.join(spec.out_dir, f"{alg}_seed{seed}.csv")
        _atomic_write(path, render_run_csv(record, timing))
        paths.append(path)
        log.info("wrote %s (%d rows%s)", path, len(record.rows),
                 ", ABORTED" if record.aborted else "")
        if record.aborted:
            status = 1
    agg = build_aggregate(paths, spec["run.bins"])
    _atomic_write(os.path.join(spec.out_dir, "aggregate.csv"), agg)
    return status


def generate_dataset(kind: str, params: dict, seed: int, path: str) -> None:
    """Write one synthetic dataset to `path` (deterministic given seed)."""
    if kind not in GEN_KINDS:
        raise ConfigError(f"unknown dataset kind {kind!r} (choices: {GEN_KINDS})")
    if kind == "gaussian-ls":
        a, b, _ = prob_mod.gen_gaussian_ls(
            params["n"], params["d"], seed, signal_norm=params["signal"],
            noise=params["noise"])
        prob_mod.save_labeled_dataset(path, b, a)
    elif kind == "planted-sparse-ls":
        a, b, _ = prob_mod.gen_planted_ls(
            params["n"], params["d"], params["s_active"], seed,
            signal_norm=params["signal"], tau=params["tau"],
            noise=params["noise"])
        prob_mod.save_labeled_dataset(path, b, a)
    elif kind == "logistic-blobs":
        a, y = prob_mod.gen_logistic_blobs(params["n"], params["d"], seed,
                                           params["separation"])
        prob_mod.save_labeled_dataset(path, y, a)
    else:
        rows, cols, vals, _, _ = prob_mod.gen_low_rank_ratings(
            params["rows"], params["cols"], params["rank"], seed,
            density=params["density"], noise=params["noise"])
        prob_mod.save_ratings_dataset(path, rows, cols, vals)


# ---------------------------------------------------------------------------
# Presets: desk-scale experiment families with documented expected behavior
# ---------------------------------------------------------------------------

PRESETS = {
    # Sparse variant reaches the gradient-norm target in fewer query units
    # than the dense one on planted-sparse data.
    "sparse-vs-dense-least-squares": """
problem.kind = planted-sparse-ls
problem.n = 4000
problem.d = 100
problem.s_active = 5
problem.tau = 0.1
problem.noise = 0.02
problem.signal = 1.0
opt.algorithm = sparse-spiderboost,spiderboost
opt.rule = data-adaptive
opt.epsilon = 0.05
opt.b = 10
opt.k1 = 5
opt.k2 = 5
run.seeds = 1,2,3
run.target_grad_norm = 0.05
run.out = runs-sparse-vs-dense
""",
    # Both variants drive the logistic loss down; with k1+k2 = 10% of d the
    # sparse one spends ~40% of the dense query budget per inner step.
    "logistic-desk": """
problem.kind = logistic-blobs
problem.n = 2000
problem.d = 60
problem.separation = 3.0
problem.ridge = 0.001
opt.algorithm = sparse-spiderboost,spiderboost,sgd
opt.eta = 0.5
opt.B = 400
opt.b = 20
opt.m = 40
opt.k1 = 3
opt.k2 = 3
opt.T = 30
run.seeds = 1,2,3
run.out = runs-logistic
""",
    # Small net on class blobs; entropy of the memory vector drops as
    # training concentrates gradient mass.
    "mlp-blobs": """
problem.kind = mlp-blobs
problem.n = 400
problem.d = 12
problem.classes = 3
problem.hidden = 16
opt.algorithm = sparse-spiderboost,spiderboost
opt.eta = 0.4
opt.B = 200
opt.b = 20
opt.m = 10
opt.k1 = 10
opt.k2 = 10
opt.T = 40
run.seeds = 1,2
run.out = runs-mlp
""",
    # Squared-loss factorization with the linear inner-loop learning-rate
    # interpolation.
    "matrix-factorization": """
problem.kind = low-rank-ratings
problem.rows = 40
problem.cols = 30
problem.rank = 3
problem.density = 0.4
problem.noise = 0.01
problem.ridge = 0.001
opt.algorithm = sparse-spiderboost,spiderboost
opt.eta = 0.8
opt.eta_end = 0.2
opt.B = 240
opt.b = 24
opt.m = 10
opt.k1 = 10
opt.k2 = 11
opt.T = 60
run.seeds = 1,2
run.out = runs-mf
""",
}


# ---------------------------------------------------------------------------
# Built-in invariant/oracle suite (the `check` verb)
# ---------------------------------------------------------------------------

def _check_operator():
    from .sparsity import SparsityParams, rtop_enumerate, top_neg_k1
    from .vecops import norm2_sq
    rng = np.random.default_rng(7)
    for _ in range(25):
        d = int(rng.integers(2, 10))
        k1 = int(rng.integers(0, d))
        k2 = int(rng.integers(1, d - k1 + 1))
        score = rng.standard_normal(d)
        y = rng.standard_normal(d)
        p = SparsityParams(k1, k2, d)
        mean, var = rtop_enumerate(score, y, p)
        if not np.allclose(mean, y, atol=1e-12):
            return False, "enumerated mean deviated from y"
        expect = (d - k1 - k2) / k2 * norm2_sq(top_neg_k1(score, y, k1))
        if abs(var - expect) > 1e-9 * max(expect, 1e-12):
            return False, "enumerated variance deviated from closed form"
    return True, "25 random instances"


def _check_worked_example():
    from .sparsity import SparsityParams, build_update, rtop_enumerate
    from .vecops import densify
    score = np.array([11.0, 12.0, 13.0, -14.0, -15.0])
    y = np.array([-25.0, -24.0, 13.0, 12.0, 11.0])
    p = SparsityParams(1, 1, 5)
    upd = build_update(np.array([4]), np.array([1]), p, y)
    dense = densify(upd)
    if not np.array_equal(dense, np.array([0.0, -96.0, 0.0, 0.0, 11.0])):
        return False, f"got {dense}"
    _, var = rtop_enumerate(score, y, p)
    if var != 4542.0:
        return False, f"variance {var} != 4542"
    return True, "(0, -96, 0, 0, 11), variance 4542"


def _check_entropy_pin():
    h = entropy_bits(np.ones(308310))
    ok = abs(h - 18.234) <= 1e-3
    return ok, f"uniform d=308310 -> {h:.4f} bits"


def _check_geom_lemma():
    from .sampling import RngStream, check_geom_lemma
    lhs, rhs = check_geom_lemma(3.0, lambda t: t.astype(float) ** 2,
                                200_000, RngStream(11, 5))
    analytic = -(2 * 3.0 + 1)
    ok = (abs(lhs - analytic) <= 0.08 * abs(analytic)
          and abs(rhs - analytic) <= 0.08 * abs(analytic))
    return ok, f"lhs={lhs:.3f} rhs={rhs:.3f} analytic={analytic}"


def _fd_grad(problem, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (problem.full_loss(x + e) - problem.full_loss(x - e)) / (2 * h)
    return g


def _check_gradients():
    rng = np.random.default_rng(3)
    a, b, _ = prob_mod.gen_gaussian_ls(12, 5, seed=1)
    ls = LeastSquaresProblem(a, b, ridge=0.01)
    al, yl = prob_mod.gen_logistic_blobs(12, 5, seed=2)
    lo = LogisticProblem(al, yl, ridge=0.01)
    xs, labs = prob_mod.gen_class_blobs(8, 4, 2, seed=3)
    mlp = MLPProblem([4, 3, 2], xs, labs)
    rows, cols, vals, _, _ = prob_mod.gen_low_rank_ratings(5, 4, 2, seed=4)
    mf = MatrixFactorizationProblem(rows, cols, vals, 5, 4, 2, ridge=0.01)
    for problem, tol in ((ls, 1e-6), (lo, 1e-6), (mlp, 1e-4), (mf, 1e-5)):
        x = 0.5 * rng.standard_normal(problem.d)
        err = np.max(np.abs(problem.full_grad(x) - _fd_grad(problem, x)))
        if err > tol:
            return False, f"{type(problem).__name__}: fd error {err:.2e} > {tol}"
    return True, "all four problem kinds vs central differences"


def _check_meter_identity():
    from fractions import Fraction
    a, b, _ = prob_mod.gen_gaussian_ls(40, 8, seed=5)
    problem = LeastSquaresProblem(a, b)
    cfg = RunConfig(problem=problem, eta=0.05, m=4, T=6, B=16, b=4,
                    alpha=0.5, k1=2, k2=2, inner_mode="geometric", seed=9)
    _, record = run_sparse_spiderboost(cfg)
    expect = sum((Fraction(min(cfg.B, problem.n))
                  + Fraction(2 * cfg.b * (cfg.k1 + cfg.k2), problem.d) * nj
                  for nj in record.inner_lengths()), Fraction(0))
    ok = record.meter.units == expect
    return ok, f"{record.meter.units} vs {expect}"


def _check_dense_equivalence():
    a, y = prob_mod.gen_logistic_blobs(30, 6, seed=6)
    problem = LogisticProblem(a, y, ridge=0.01)
    base = dict(problem=problem, eta=0.3, m=5, T=4, B=12, b=4, alpha=0.5,
                seed=13, keep_iterates=True)
    _, sparse = run_sparse_spiderboost(RunConfig(k1=3, k2=3, **base))
    _, dense = run_spiderboost_dense(RunConfig(k1=0, k2=6, **base))
    ok = all(np.array_equal(xs, xd)
             for xs, xd in zip(sparse.iterates, dense.iterates))
    return ok, "k1+k2=d run matches the dense baseline iterate-for-iterate"


def run_self_checks() -> list:
    checks = [
        ("operator-exactness", _check_operator),
        ("worked-example", _check_worked_example),
        ("entropy-pin", _check_entropy_pin),
        ("geometrization-lemma", _check_geom_lemma),
        ("gradient-fd", _check_gradients),
        ("meter-identity", _check_meter_identity),
        ("dense-equivalence", _check_dense_equivalence),
    ]
    results = []
    for name, fn in checks:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failure, not an error
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        results.append((name, ok, detail))
    return results


# ---------------------------------------------------------------------------
# argparse wiring
# ---------------------------------------------------------------------------

def _setup_logging():
    level = os.environ.get("SPARSE_VR_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _cmd_gen(args) -> int:
    params = {"n": args.n, "d": args.d, "s_active": args.s_active,
              "tau": args.tau, "signal": args.signal, "noise": args.noise,
              "separation": args.separation, "rows": args.rows,
              "cols": args.cols, "rank": args.rank, "density": args.density}
    generate_dataset(args.kind, params, args.seed, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_run(args) -> int:
    if args.preset:
        if args.preset not in PRESETS:
            print(f"unknown preset {args.preset!r}; available: "
                  f"{', '.join(sorted(PRESETS))}", file=sys.stderr)
            return 2
        text = PRESETS[args.preset]
    elif args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            text = fh.read()
    else:
        print("run needs --config PATH or --preset NAME", file=sys.stderr)
        return 2
    try:
        spec = parse_config(text)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        spec.values["run.seeds"] = [args.seed]
        spec.seeds = [args.seed]
    if args.out is not None:
        spec.values["run.out"] = args.out
        spec.out_dir = args.out
    if args.jobs is not None:
        spec.values["run.jobs"] = args.jobs
    if args.mode is not None:
        spec.values["run.mode"] = args.mode
        spec.mode = args.mode
    return run_experiment(spec)


def _cmd_check(_args) -> int:
    results = run_self_checks()
    failed = 0
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        failed += 0 if ok else 1
    return 1 if failed else 0


def _cmd_hyper(args) -> int:
    consts = ProblemConstantsShim(args.L, args.sigma2, args.delta_f)
    inp = HyperparamInputs(epsilon=args.epsilon, constants=consts, b=args.b,
                           k1=args.k1, k2=args.k2, d=args.d, n=args.n)
    rules = (["worst-case", "data-adaptive"] if args.rule == "both"
             else [args.rule])
    for rule in rules:
        calc = (worst_case_hyperparams if rule == "worst-case"
                else data_adaptive_hyperparams)
        frag = calc(inp)
        print(f"{rule}: B={frag['B']} m={frag['m']} eta={frag['eta']:.6g} "
              f"T={frag['T']}")
    return 0


def ProblemConstantsShim(L, sigma2, delta_f):
    from .problems import ProblemConstants
    return ProblemConstants(L=L, sigma2=sigma2, delta_f=delta_f,
                            f_star=0.0, f_star_exact=False)


def main(argv=None) -> int:
    _setup_logging()
    parser = argparse.ArgumentParser(prog="sparsevr",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)

    p_gen = sub.add_parser("gen", help="write a synthetic dataset")
    p_gen.add_argument("--kind", required=True, choices=GEN_KINDS)
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--n", type=int, default=200)
    p_gen.add_argument("--d", type=int, default=20)
    p_gen.add_argument("--s-active", dest="s_active", type=int, default=5)
    p_gen.add_argument("--tau", type=float, default=0.1)
    p_gen.add_argument("--signal", type=float, default=1.0)
    p_gen.add_argument("--noise", type=float, default=0.05)
    p_gen.add_argument("--separation", type=float, default=2.0)
    p_gen.add_argument("--rows", type=int, default=30)
    p_gen.add_argument("--cols", type=int, default=20)
    p_gen.add_argument("--rank", type=int, default=2)
    p_gen.add_argument("--density", type=float, default=0.3)
    p_gen.set_defaults(func=_cmd_gen)

    p_run = sub.add_parser("run", help="run an experiment")
    p_run.add_argument("--config", help="key=value config file")
    p_run.add_argument("--preset", help=f"one of: {', '.join(sorted(PRESETS))}")
    p_run.add_argument("--seed", type=int, help="override run.seeds with one seed")
    p_run.add_argument("--jobs", type=int, help="parallel runs")
    p_run.add_argument("--out", help="output directory")
    p_run.add_argument("--mode", choices=("theory", "impl"))
    p_run.set_defaults(func=_cmd_run)

    p_check = sub.add_parser("check", help="run the invariant/oracle suite")
    p_check.set_defaults(func=_cmd_check)

    p_hyper = sub.add_parser("hyper", help="print calculator output")
    p_hyper.add_argument("--rule", default="both",
                         choices=("worst-case", "data-adaptive", "both"))
    p_hyper.add_argument("--epsilon", type=float, required=True)
    p_hyper.add_argument("--L", type=float, required=True)
    p_hyper.add_argument("--sigma2", type=float, required=True)
    p_hyper.add_argument("--delta-f", dest="delta_f", type=float, required=True)
    p_hyper.add_argument("--n", type=int, required=True)
    p_hyper.add_argument("--d", type=int, required=True)
    p_hyper.add_argument("--b", type=int, required=True)
    p_hyper.add_argument("--k1", type=int, required=True)
    p_hyper.add_argument("--k2", type=int, required=True)
    p_hyper.set_defaults(func=_cmd_hyper)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
