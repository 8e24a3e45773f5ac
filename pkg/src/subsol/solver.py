"""Forward trajectory simulation and backward cut generation."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import bellman
from .bellman import HAMILTONIAN, ArgminMode
from .bounds import ConvergenceRecord, EvalConfig, evaluate
from .model import LinearConvexProblem, running_cost, validate
from .rng import TRAIN_NOISE, TRAIN_START, stream
from .subsolution import Hyperplane, SubsolutionStack, add_cuts

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    iterations: int = 20
    batch: int = 1
    argmin_mode: ArgminMode = field(default_factory=ArgminMode)
    seed: int = 0
    record_every: int = 1

    def __post_init__(self):
        for name in ("iterations", "batch", "record_every"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")


@dataclass
class Trajectory:
    states: np.ndarray          # (N+1, d)
    controls: np.ndarray        # (N, d2)
    noises: np.ndarray          # (N,) atom indices of xi_1..xi_N
    realized_cost: float


def draw_noise(problem: LinearConvexProblem, seed: int, purpose: int, *key: int) -> np.ndarray:
    """Atom indices for one trajectory's N steps."""
    if problem.noise.size == 1:
        return np.zeros(problem.N, dtype=np.int64)
    u = stream(seed, purpose, *key).random(problem.N)
    return problem.noise.sample_indices(u)


def simulate_trajectory(problem: LinearConvexProblem, stack: SubsolutionStack, x0, noise_draws,
                        mode: ArgminMode = HAMILTONIAN) -> Trajectory:
    N, d = problem.N, problem.d
    noise_draws = np.asarray(noise_draws, dtype=np.int64)
    if noise_draws.shape != (N,):
        raise ValueError(f"need {N} noise draws, got {noise_draws.shape}")
    X = np.empty((N + 1, d))
    U = np.empty((N, problem.d2))
    X[0] = np.asarray(x0, dtype=float)
    if not np.all(np.isfinite(X[0])):
        raise ValueError("initial state is not finite")
    offsets = problem.noise_offsets
    cost = 0.0
    for j in range(N):
        nxt = stack.stage(j + 1)
        g = bellman.stage_control(problem, nxt, j, X[j], mode, U[j - 1] if j else None)
        U[j] = g
        cost += running_cost(problem, j, X[j], g)
        X[j + 1] = X[j] + (problem.A @ X[j] + problem.B @ g) * problem.h + offsets[noise_draws[j]]
    cost += problem.terminal_cost(X[N])
    if not np.isfinite(cost):
        raise bellman.NumericalFailure("non-finite trajectory cost")
    return Trajectory(X, U, noise_draws, float(cost))


def update_subsolution(problem: LinearConvexProblem, stack: SubsolutionStack, trajectories,
                       iteration_tag: int, mode: ArgminMode = HAMILTONIAN) -> SubsolutionStack:
    """Backward pass: F-tangents at stage N, then Bellman cuts against the updated next stage."""
    N = problem.N
    stages = list(stack.stages)
    term = [bellman.terminal_cut(problem, t.states[N]) for t in trajectories]
    stages[N] = add_cuts(stages[N], (Hyperplane(c.anchor, c.value, c.slope, iteration_tag) for c in term))
    for j in range(N - 1, -1, -1):
        nxt = stages[j + 1]
        cuts = []
        for t in trajectories:
            cs = bellman.minimize_stage(problem, nxt, j, t.states[j], mode)
            cuts.append(Hyperplane(cs.anchor, cs.value, cs.slope, iteration_tag))
        stages[j] = add_cuts(stages[j], cuts)
    return SubsolutionStack(stages)


def sample_starts(problem: LinearConvexProblem, seed: int, iteration: int, batch: int) -> np.ndarray:
    law = problem.initial_law
    if law.is_dirac:
        return np.tile(law.x0, (batch, 1))
    return np.vstack([law.sample(stream(seed, TRAIN_START, iteration, m), 1) for m in range(batch)])


def check_problem(problem: LinearConvexProblem) -> None:
    report = validate(problem)
    if report:
        raise ConfigError("invalid problem: " + "; ".join(report))


def run(problem: LinearConvexProblem, config: SolverConfig, evaluation: EvalConfig | None = None,
        callback=None, timing: bool = True):
    """Run ``config.iterations`` rounds of simulate-then-update from the zero subsolution.

    Every ``record_every`` iterations (and after the last one) a
    :class:`ConvergenceRecord` is produced; the upper estimate uses
    ``evaluation`` (default: 10^4 paths, seed 0).  ``callback(n, stack,
    trajectories)`` is invoked after every iteration.
    """
    check_problem(problem)
    if not isinstance(config, SolverConfig):
        raise ConfigError("config must be a SolverConfig")
    evaluation = evaluation or EvalConfig()
    mode = config.argmin_mode
    stack = SubsolutionStack.initial(problem.N, problem.d)
    records: list[ConvergenceRecord] = []
    train_seconds = 0.0
    for n in range(1, config.iterations + 1):
        t0 = time.perf_counter()
        starts = sample_starts(problem, config.seed, n, config.batch)
        trajs = [
            simulate_trajectory(problem, stack, starts[m],
                                draw_noise(problem, config.seed, TRAIN_NOISE, n, m), mode)
            for m in range(config.batch)
        ]
        stack = update_subsolution(problem, stack, trajs, n, mode)
        train_seconds += time.perf_counter() - t0
        if callback is not None:
            callback(n, stack, trajs)
        if n % config.record_every == 0 or n == config.iterations:
            rec = evaluate(problem, stack, n, evaluation, mode,
                           wall_millis=int(round(train_seconds * 1000)) if timing else 0)
            log.info("iter %d lower %.6g upper %.6g gap %.3g", n, rec.lower_bound,
                     rec.upper_estimate, rec.gap)
            records.append(rec)
    return stack, records
