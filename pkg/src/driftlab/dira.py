"""Supervised DIRA: EWC-regularized retraining over a (lambda, eta) grid,
scored by CFAS = A_T + zeta * A_0 and reduced to a single selected model.
"""
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import AdaptationError, NumericError, UsageError
from .ewc import SCHEMES, fingerprint, regularized_step
from .network import TrainLoopState, accuracy, as_batch, batch_stream, copy_params
from .rng import derive_seed

THREADS_ENV = "DRIFTLAB_THREADS"


@dataclass
class HyperGrid:
    lams: tuple = (0.0, 1.0, 10.0, 1e2, 1e3, 1e4)
    lrs: tuple = (1e-3, 3e-3, 1e-2, 3e-2, 1e-1)
    steps: int = 100
    batch_size: int = 32
    scheme: str = "implicit"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise UsageError(f"unknown update scheme {self.scheme!r}")
        self.lams = tuple(float(v) for v in self.lams)
        self.lrs = tuple(float(v) for v in self.lrs)
        if not self.lams or not self.lrs:
            raise UsageError("hyperparameter grid must have at least one lambda and one eta")
        for name, vals in (("lambda", self.lams), ("eta", self.lrs)):
            if len(set(vals)) != len(vals):
                raise UsageError(f"duplicate {name} values in grid")
            if list(vals) != sorted(vals):
                raise UsageError(f"{name} values must be sorted ascending")
        if min(self.lams) < 0:
            raise UsageError("lambda values must be non-negative")
        if min(self.lrs) <= 0:
            raise UsageError("eta values must be positive")
        if self.steps <= 0 or self.batch_size <= 0:
            raise UsageError("steps and batch_size must be positive")

    def cells(self):
        """(lambda index, eta index, lambda, eta) in lambda-major order."""
        return [(i, j, lam, lr) for i, lam in enumerate(self.lams) for j, lr in enumerate(self.lrs)]


@dataclass(frozen=True)
class CFASConfig:
    zeta: float = 10.0

    def __post_init__(self):
        if self.zeta < 0:
            raise UsageError("zeta must be non-negative")


def cfas(a_t, a_0, zeta=10.0):
    """Controlled Forgetting Adaptation Score."""
    return a_t + zeta * a_0


@dataclass
class CandidateResult:
    lam: float
    lr: float
    a_t: float = 0.0
    a_0: float = 0.0
    score: float = -math.inf
    params_fingerprint: str = ""
    target_accuracy: float = None
    failed: bool = False
    error: str = ""
    params: list = field(default=None, repr=False, compare=False)

    def to_dict(self):
        return {
            "lambda": self.lam, "eta": self.lr,
            "A_T": self.a_t, "A_0": self.a_0,
            "cfas": None if self.failed else self.score,
            "failed": self.failed, "error": self.error,
            "params_fingerprint": self.params_fingerprint,
            "target_test_accuracy": self.target_accuracy,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["lambda"], d["eta"], d["A_T"], d["A_0"],
                   -math.inf if d["cfas"] is None else d["cfas"], d["params_fingerprint"],
                   d.get("target_test_accuracy"), d["failed"], d.get("error", ""))


@dataclass
class AdaptationReport:
    domain: str
    n_samples: int
    zeta: float
    candidates: list
    selected: int
    mode: str = "dira"
    metadata: dict = field(default_factory=dict, compare=False)

    @property
    def best(self):
        return self.candidates[self.selected]

    def to_dict(self):
        return {
            "mode": self.mode, "domain": self.domain, "n_samples": self.n_samples,
            "zeta": self.zeta, "selected": self.selected,
            "candidates": [c.to_dict() for c in self.candidates],
        }

    def to_json(self):
        """Deterministic JSON (wall-clock metadata is kept out on purpose)."""
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d):
        return cls(d["domain"], d["n_samples"], d["zeta"],
                   [CandidateResult.from_dict(c) for c in d["candidates"]], d["selected"], d["mode"])

    def to_text(self):
        lines = [f"# {self.mode} adaptation on {self.domain} (n={self.n_samples}, zeta={self.zeta:g})",
                 f"{'lambda':>10} {'eta':>8} {'A_T':>7} {'A_0':>7} {'CFAS':>8} {'target':>7}  sel"]
        for i, c in enumerate(self.candidates):
            score = "failed" if c.failed else f"{c.score:.4f}"
            tgt = "-" if c.target_accuracy is None else f"{c.target_accuracy:.4f}"
            mark = "*" if i == self.selected else ""
            lines.append(f"{c.lam:>10g} {c.lr:>8g} {c.a_t:>7.4f} {c.a_0:>7.4f} {score:>8} {tgt:>7}  {mark}")
        return "\n".join(lines) + "\n"


def select_best(candidates):
    """Index of the highest-CFAS candidate.

    Ties go to the larger lambda, then the smaller eta.
    """
    alive = [i for i, c in enumerate(candidates) if not c.failed]
    if not alive:
        raise AdaptationError("every adaptation candidate failed")
    return max(alive, key=lambda i: (candidates[i].score, candidates[i].lam, -candidates[i].lr))


def resolve_workers(workers=None):
    if workers is None:
        workers = int(os.environ.get(THREADS_ENV, "0") or 0)
    if workers < 0:
        raise UsageError(f"{THREADS_ENV} must be >= 0")
    return workers


def run_cells(fn, jobs, workers=None):
    """Map ``fn`` over ``jobs`` serially or in worker processes; order is preserved."""
    workers = resolve_workers(workers)
    if workers <= 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def _supervised_candidate(job):
    (net, anchor, fisher, s_t, x0_test, target_test, lam, lr, grid, batch_size,
     cand_seed, keep_params) = job
    x = as_batch(s_t.images)
    y = s_t.labels
    state = TrainLoopState(copy_params(net.params), lr)
    batches = batch_stream(len(y), batch_size, cand_seed, "adapt-batches")
    result = CandidateResult(lam, lr)
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            for _ in range(grid.steps):
                idx = next(batches)
                state = regularized_step(state, net, x[idx], y[idx], anchor, fisher, lam, grid.scheme)
    except NumericError as exc:
        result.failed, result.error = True, f"step {state.step}: {exc}"
        return result
    adapted = net.with_params(state.params)
    result.a_t = accuracy(adapted, s_t)
    result.a_0 = accuracy(adapted, x0_test)
    if target_test is not None:
        result.target_accuracy = accuracy(adapted, target_test)
    result.params_fingerprint = fingerprint(*state.params)
    if keep_params:
        result.params = state.params
    return result


def _finish(candidates, cfg, domain, n, mode, started):
    for c in candidates:
        if not c.failed:
            c.score = cfas(c.a_t, c.a_0, cfg.zeta)
    report = AdaptationReport(domain, n, cfg.zeta, candidates, select_best(candidates), mode)
    report.metadata = {"wall_clock_s": time.perf_counter() - started,
                       "started_at": time.strftime("%Y-%m-%dT%H:%M:%S")}
    return report


def adapt_supervised(m0, anchor, fisher, s_t, x0_test, grid=None, cfas_cfg=None, seed=0,
                     target_test=None, domain="target", workers=None, keep_params=True,
                     mode="dira"):
    """Retrain ``m0`` on labeled ``s_t`` for every grid cell and pick the best by CFAS.

    ``A_T`` is accuracy on ``s_t`` itself and ``A_0`` accuracy on
    ``x0_test``.  ``target_test`` (optional) is only recorded for offline
    evaluation and never influences the score.  Inputs are not mutated.
    """
    grid = grid or HyperGrid()
    cfas_cfg = cfas_cfg or CFASConfig()
    if len(s_t) == 0 or len(x0_test) == 0:
        raise UsageError("target samples and source test set must be non-empty")
    started = time.perf_counter()
    batch_size = min(grid.batch_size, len(s_t))
    jobs = [(m0, anchor, fisher, s_t, x0_test, target_test, lam, lr, grid, batch_size,
             derive_seed(seed, "candidate", i, j), keep_params)
            for i, j, lam, lr in grid.cells()]
    candidates = run_cells(_supervised_candidate, jobs, workers)
    return _finish(candidates, cfas_cfg, domain, len(s_t), mode, started)


def finetune(m0, anchor, fisher, s_t, x0_test, grid=None, **kwargs):
    """Unregularized baseline: the supervised sweep with lambda forced to 0."""
    grid = grid or HyperGrid()
    grid = HyperGrid((0.0,), grid.lrs, grid.steps, grid.batch_size, grid.scheme)
    return adapt_supervised(m0, anchor, fisher, s_t, x0_test, grid, mode="finetune", **kwargs)
