import math

import numpy as np
import pytest

from conftest import quad1, scalar_problem
from subsol import presets
from subsol.bellman import ArgminMode, minimize_stage, stage_control
from subsol.bounds import EvalConfig
from subsol.model import InitialLaw, running_cost, step_dynamics
from subsol.rng import TRAIN_NOISE
from subsol.solver import (ConfigError, SolverConfig, Trajectory, draw_noise, run, simulate_trajectory,
                           update_subsolution)
from subsol.subsolution import SubsolutionStack

GRID = ArgminMode("grid")
QUICK_EVAL = EvalConfig(mc_paths=200, seed=3)


def test_zero_stack_gives_uncontrolled_flow():
    p = presets.get("example-6.4")
    stack = SubsolutionStack.initial(p.N, p.d)
    tr = simulate_trajectory(p, stack, presets.X0_6D, draw_noise(p, 0, TRAIN_NOISE, 1, 0))
    assert not tr.controls.any()


def test_trajectory_recursion_and_cost():
    p = presets.get("example-6.3", c=0.5)
    stack, _ = run(p, SolverConfig(iterations=3), QUICK_EVAL, timing=False)
    draws = draw_noise(p, 11, TRAIN_NOISE, 99, 0)
    tr = simulate_trajectory(p, stack, presets.X0_5D, draws)
    cost = 0.0
    for j in range(p.N):
        nxt = step_dynamics(p, j, tr.states[j], tr.controls[j], p.noise.points[draws[j]])
        np.testing.assert_allclose(tr.states[j + 1], nxt, rtol=0, atol=1e-15)
        cost += running_cost(p, j, tr.states[j], tr.controls[j])
    cost += p.terminal_cost(tr.states[p.N])
    assert tr.realized_cost == pytest.approx(cost, rel=1e-13)
    assert np.all(np.linalg.norm(tr.controls, axis=1) <= p.r + 1e-9)


def test_converged_controls_point_home():
    p = presets.get("example-6.1")
    stack, _ = run(p, SolverConfig(iterations=20), EvalConfig(1, 0), timing=False)
    tr = simulate_trajectory(p, stack, presets.X0_5D, np.zeros(p.N, dtype=np.int64))
    np.testing.assert_allclose(np.linalg.norm(tr.controls, axis=1), 1.0, atol=1e-12)
    heading = -tr.states[:-1] / np.linalg.norm(tr.states[:-1], axis=1)[:, None]
    np.testing.assert_allclose(tr.controls, heading, atol=1e-9)
    assert np.linalg.norm(tr.states[-1]) == pytest.approx(math.sqrt(10) - 2, abs=1e-9)


def test_deterministic_simulation_repeats():
    p = presets.get("example-6.2", c=0.5)
    stack, _ = run(p, SolverConfig(iterations=2), EvalConfig(1, 0), timing=False)
    a = simulate_trajectory(p, stack, presets.X0_10D, np.zeros(p.N, dtype=np.int64))
    b = simulate_trajectory(p, stack, presets.X0_10D, np.zeros(p.N, dtype=np.int64))
    np.testing.assert_array_equal(a.states, b.states)


def test_wrong_draw_length_rejected():
    p = presets.get("example-6.1")
    with pytest.raises(ValueError):
        simulate_trajectory(p, SubsolutionStack.initial(p.N, 5), presets.X0_5D, np.zeros(3, dtype=np.int64))


def test_one_step_update_matches_direct_evaluation():
    # N = 1: the stage-0 cut value is min_g f + E[max(F-cut, 0)(X_1(g))]
    p = scalar_problem(1.5, h=0.5, N=1, c=0.4, sigma=0.5, F=quad1(1.0, 0.0, 0.5))
    stack = SubsolutionStack.initial(1, 1)
    tr = simulate_trajectory(p, stack, [1.5], np.array([1]), GRID)
    new = update_subsolution(p, stack, [tr], 1, GRID)
    xN = tr.states[1]
    F = p.terminal_cost
    tangent = lambda z: F(xN) + F.gradient(xN)[0] * (z - xN[0])  # noqa: E731
    u = np.linspace(-1, 1, 200001)
    succ = 1.5 + 0.5 * u[:, None] + p.noise_offsets[:, 0]
    direct = np.min(p.c * u * u * p.h + np.maximum(tangent(succ), 0) @ p.noise.weights)
    assert new.eval(0, [1.5]) == pytest.approx(direct, abs=1e-8)
    assert new.cut_counts() == [1, 1]


def test_update_raises_stack_at_anchors():
    p = presets.get("example-6.3", c=1.5)
    stack, _ = run(p, SolverConfig(iterations=2), QUICK_EVAL, timing=False)
    trs = [simulate_trajectory(p, stack, presets.X0_5D, draw_noise(p, 5, TRAIN_NOISE, 3, m)) for m in range(2)]
    new = update_subsolution(p, stack, trs, 3)
    for tr in trs:
        for j in range(p.N + 1):
            assert new.eval(j, tr.states[j]) >= stack.eval(j, tr.states[j])


def test_batch_adds_one_cut_per_trajectory():
    p = presets.get("example-6.1")
    stack, _ = run(p, SolverConfig(iterations=1, batch=3), EvalConfig(1, 0), timing=False)
    assert stack.cut_counts() == [3] * (p.N + 1)
    stack, _ = run(p, SolverConfig(iterations=1), EvalConfig(1, 0), timing=False)
    assert stack.cut_counts() == [1] * (p.N + 1)


@pytest.mark.parametrize("field", ["iterations", "batch", "record_every"])
def test_nonpositive_settings_rejected(field):
    with pytest.raises(ConfigError):
        SolverConfig(**{field: 0})


def test_invalid_problem_rejected_before_iterating():
    p = presets.get("example-6.1", h=0.3)
    calls = []
    with pytest.raises(ConfigError, match="N·h"):
        run(p, SolverConfig(iterations=2), callback=lambda *a: calls.append(a))
    assert calls == []


def test_same_seed_same_records():
    p = presets.get("example-6.3")
    a = run(p, SolverConfig(iterations=4, seed=9, record_every=2), QUICK_EVAL, timing=False)[1]
    b = run(p, SolverConfig(iterations=4, seed=9, record_every=2), QUICK_EVAL, timing=False)[1]
    assert a == b
    assert [r.iteration for r in a] == [2, 4]
    c = run(p, SolverConfig(iterations=4, seed=10, record_every=2), QUICK_EVAL, timing=False)[1]
    assert c != a


def test_lower_bounds_non_decreasing():
    p = presets.get("example-6.3", c=0.5)
    _, recs = run(p, SolverConfig(iterations=15), QUICK_EVAL, timing=False)
    lows = [r.lower_bound for r in recs]
    assert all(b >= a for a, b in zip(lows, lows[1:]))


def test_lower_bound_below_realized_costs():
    p = presets.get("example-6.2", c=1.5)
    seen = []
    stack, recs = run(p, SolverConfig(iterations=5), EvalConfig(1, 0), timing=False,
                      callback=lambda n, s, t: seen.append((s.eval(0, presets.X0_10D), t[0].realized_cost)))
    # each trajectory was simulated under the previous stack, whose bound is lower still
    assert all(low <= cost + 1e-9 for low, cost in seen)


def test_random_initial_law_uses_sampled_starts():
    p = presets.get("example-6.1").with_overrides(
        initial_law=InitialLaw.uniform_box(presets.X0_5D - 0.5, presets.X0_5D + 0.5))
    stack, recs = run(p, SolverConfig(iterations=3, batch=2), EvalConfig(50, 0), timing=False)
    assert stack.cut_counts()[0] == 6
    anchors = stack.stage(0).anchors
    assert len({tuple(a) for a in anchors}) == 6
    assert np.all(np.abs(anchors - presets.X0_5D) <= 0.5)
    assert recs[-1].upper_stderr > 0


def test_callback_sees_every_iteration():
    p = presets.get("example-6.1")
    seen = []
    run(p, SolverConfig(iterations=3), EvalConfig(1, 0), callback=lambda n, s, t: seen.append(
        (n, len(t), isinstance(t[0], Trajectory))), timing=False)
    assert seen == [(1, 1, True), (2, 1, True), (3, 1, True)]


def test_grid_mode_runs_scalar_instance():
    p = scalar_problem(2.0, h=0.05, N=20, c=0.5, sigma=0.3)
    _, recs = run(p, SolverConfig(iterations=5, argmin_mode=GRID), QUICK_EVAL, timing=False)
    assert recs[-1].lower_bound <= recs[-1].upper_estimate + 3 * recs[-1].upper_stderr


def test_trajectory_controls_use_previous_control_as_predictor():
    p = presets.get("example-6.3", c=0.5)
    stack, _ = run(p, SolverConfig(iterations=2), QUICK_EVAL, timing=False)
    tr = simulate_trajectory(p, stack, presets.X0_5D, draw_noise(p, 0, TRAIN_NOISE, 7, 0))
    np.testing.assert_array_equal(minimize_stage(p, stack.stage(1), 0, tr.states[0]).control, tr.controls[0])
    for j in (1, 50, 199):
        g = stage_control(p, stack.stage(j + 1), j, tr.states[j], predictor=tr.controls[j - 1])
        np.testing.assert_array_equal(g, tr.controls[j])
