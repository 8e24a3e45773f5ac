"""A posteriori error bounds: subsolution value vs simulated policy cost."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import bellman
from .bellman import HAMILTONIAN, ArgminMode
from .model import LinearConvexProblem
from .rng import EVAL_NOISE, EVAL_START, stream
from .subsolution import SubsolutionStack

CHUNK = 2048


@dataclass(frozen=True)
class EvalConfig:
    mc_paths: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.mc_paths, (int, np.integer)) or self.mc_paths < 1:
            raise ValueError(f"mc_paths must be a positive integer, got {self.mc_paths!r}")


@dataclass(frozen=True)
class ConvergenceRecord:
    iteration: int
    lower_bound: float
    upper_estimate: float
    upper_stderr: float
    gap: float
    relative_gap: float
    cuts_total: int
    wall_millis: int

    FIELDS = ("iteration", "lower_bound", "upper_estimate", "upper_stderr", "gap",
              "relative_gap", "cuts_total", "wall_millis")


def make_record(iteration, lower, upper, stderr, cuts_total, wall_millis) -> ConvergenceRecord:
    gap = upper - lower
    rel = gap / lower if lower > 0 else math.nan
    return ConvergenceRecord(int(iteration), float(lower), float(upper), float(stderr), float(gap),
                             float(rel), int(cuts_total), int(wall_millis))


class UpperEstimate(NamedTuple):
    mean: float
    stderr: float


def policy_costs(problem: LinearConvexProblem, stack: SubsolutionStack, starts, draws,
                 mode: ArgminMode = HAMILTONIAN) -> np.ndarray:
    """Realised cost of the feedback policy induced by ``stack`` along each path.

    ``starts`` is (n, d) and ``draws`` holds (n, N) noise atom indices.
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    draws = np.asarray(draws, dtype=np.int64).reshape(starts.shape[0], problem.N)
    out = np.empty(starts.shape[0])
    for lo in range(0, starts.shape[0], CHUNK):
        sl = slice(lo, lo + CHUNK)
        out[sl] = _chunk_costs(problem, stack, starts[sl], draws[sl], mode)
    if not np.all(np.isfinite(out)):
        raise bellman.NumericalFailure("non-finite policy cost")
    return out


def _chunk_costs(problem, stack, X, draws, mode):
    h, c = problem.h, problem.c
    M = problem.transition
    offsets = problem.noise_offsets
    X = X.copy()
    cost = np.zeros(X.shape[0])
    G = None
    for j in range(problem.N):
        nxt = stack.stage(j + 1)
        if mode.mode == "hamiltonian":
            # the previous control predicts the successor, as along a simulated path
            G = bellman.hamiltonian_controls(problem, nxt, X, G)
        else:
            G = np.array([bellman.stage_control(problem, nxt, j, x, mode) for x in X])
        cost += (c * np.einsum("ni,ni->n", G, G) + problem.state_cost(X)) * h
        X = X @ M.T + h * (G @ problem.B.T) + offsets[draws[:, j]]
    return cost + problem.terminal_cost(X)


def eval_starts(problem: LinearConvexProblem, paths: int, seed: int, x0=None) -> np.ndarray:
    if x0 is not None:
        x0 = np.asarray(x0, dtype=float)
        return np.tile(x0, (paths, 1)) if x0.ndim == 1 else x0
    law = problem.initial_law
    if law.is_dirac:
        return np.tile(law.x0, (paths, 1))
    return law.sample(stream(seed, EVAL_START), paths)


def estimate_upper(problem: LinearConvexProblem, stack: SubsolutionStack, x0, paths: int, seed: int,
                   mode: ArgminMode = HAMILTONIAN) -> UpperEstimate:
    """Monte-Carlo mean and standard error of the policy cost.

    ``x0`` may be one start state, an (n, d) array of starts, or ``None``
    for starts drawn from the problem's initial law.  Deterministic
    problems started from one state need a single path; ``paths`` is then
    ignored and the standard error is 0.
    """
    single_start = x0 is None and problem.initial_law.is_dirac or (
        x0 is not None and np.asarray(x0).ndim == 1)
    if problem.deterministic and single_start:
        starts = eval_starts(problem, 1, seed, x0)
        cost = policy_costs(problem, stack, starts, np.zeros((1, problem.N), dtype=np.int64), mode)
        return UpperEstimate(float(cost[0]), 0.0)
    starts = eval_starts(problem, paths, seed, x0)
    n = starts.shape[0]
    if problem.noise.size == 1:
        draws = np.zeros((n, problem.N), dtype=np.int64)
    else:
        draws = problem.noise.sample_indices(stream(seed, EVAL_NOISE).random((n, problem.N)))
    costs = policy_costs(problem, stack, starts, draws, mode)
    stderr = float(costs.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return UpperEstimate(float(costs.mean()), stderr)


def lower_bound(problem: LinearConvexProblem, stack: SubsolutionStack, paths: int, seed: int) -> float:
    """w(0, x0), or its mean over the evaluation starts for a random initial law."""
    if problem.initial_law.is_dirac:
        return stack.eval(0, problem.initial_law.x0)
    return float(np.mean(stack.eval(0, eval_starts(problem, paths, seed))))


def evaluate(problem, stack, iteration, evaluation: EvalConfig, mode, cuts_total=None,
             wall_millis=0) -> ConvergenceRecord:
    lo = lower_bound(problem, stack, evaluation.mc_paths, evaluation.seed)
    up = estimate_upper(problem, stack, None, evaluation.mc_paths, evaluation.seed, mode)
    total = stack.cuts_total if cuts_total is None else cuts_total
    return make_record(iteration, lo, up.mean, up.stderr, total, wall_millis)


def gap_report(records) -> list[dict]:
    """One summary row per record, relative gap in percent."""
    rows = []
    for r in records:
        lower, upper = r.lower_bound, r.upper_estimate
        gap = upper - lower
        rel = gap / lower if lower > 0 else math.nan
        rows.append({
            "iteration": r.iteration,
            "value_below": lower,
            "value_above": upper,
            "gap": gap,
            "relative_gap_pct": 100.0 * rel if lower > 0 else (0.0 if gap == 0 else math.nan),
        })
    return rows


def format_report(rows) -> str:
    lines = [f"{'iter':>6} {'below':>12} {'above':>12} {'gap':>12} {'rel':>9}"]
    for r in rows:
        lines.append(f"{r['iteration']:>6} {r['value_below']:>12.6g} {r['value_above']:>12.6g} "
                     f"{r['gap']:>12.4g} {r['relative_gap_pct']:>8.2f}%")
    return "\n".join(lines)
