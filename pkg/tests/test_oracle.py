import math

import numpy as np
import pytest

from conftest import quad1, scalar_problem
from subsol import presets
from subsol.model import ConvexQuadratic, InitialLaw, LinearConvexProblem
from subsol.oracle import (OracleError, check_radial_problem, grid_value_iteration, radial_oracle,
                           radial_oracle_for, radial_value)

RHO = math.sqrt(10)


def radial_1d(c, h=0.01, x0=3.0):
    return scalar_problem(x0, h=h, T=2.0, c=c, F=quad1(1.0, 0.0, 1.0))


def test_one_step_enumeration():
    p = scalar_problem(3.0, h=1.0, N=1)
    g = grid_value_iteration(p, -1, 6, 701, 201)
    assert g.value(0, 3.0) == pytest.approx(4.0, abs=1e-12)
    assert g.controls[0][np.searchsorted(g.axes[0], 3.0)] == pytest.approx([-1.0])


def test_constant_terminal_cost():
    p = scalar_problem(0.0, h=0.1, N=5, F=quad1(0.0, 0.0, 2.5))
    g = grid_value_iteration(p, -1, 1, 51, 5)
    finite = g.values[np.isfinite(g.values)]
    np.testing.assert_allclose(finite, 2.5, rtol=0, atol=1e-14)


@pytest.mark.parametrize("c", [0.0, 1.5])
def test_scalar_radial_analogue(c):
    p = radial_1d(c)
    g = grid_value_iteration(p, 0, 6, 2001, 201)
    exact = radial_oracle(3.0, 2.0, 1.0, c)
    assert g.value(0, 3.0) == pytest.approx(exact, abs=1e-2)
    assert abs(g.value(0, 3.0) - exact) <= g.error_estimate
    if c == 0.0:
        assert exact == 2.0


def test_refinement_within_coarse_error_estimate():
    p = radial_1d(0.5, h=0.05)
    coarse = grid_value_iteration(p, 0, 6, 401, 41)
    fine = grid_value_iteration(p, 0, 6, 801, 81)
    assert abs(fine.value(0, 3.0) - coarse.value(0, 3.0)) < coarse.error_estimate
    assert fine.error_estimate < coarse.error_estimate


def test_monotone_in_terminal_cost():
    low = radial_1d(0.5, h=0.05)
    high = low.with_overrides(terminal_cost=ConvexQuadratic([[1.2]], [0.3], 1.5))
    a = grid_value_iteration(low, -1, 6, 281, 21)
    b = grid_value_iteration(high, -1, 6, 281, 21)
    both = np.isfinite(a.values) & np.isfinite(b.values)
    assert both.any()
    assert np.all(b.values[both] >= a.values[both] - 1e-12)


def test_stochastic_uncontrolled_toy():
    p = scalar_problem(0.0, h=1.0, N=1, b=0.0, sigma=1.0)
    g = grid_value_iteration(p, -2, 2, 41, 3)
    assert g.value(0, 0.0) == pytest.approx(1.0, abs=1e-12)


def test_two_dimensional_radial_off_axis():
    p = LinearConvexProblem(A=np.zeros((2, 2)), B=np.eye(2), h=0.1, T=2.0, r=1.0, c=0.5,
                            state_cost=ConvexQuadratic.zero(2),
                            terminal_cost=ConvexQuadratic(np.eye(2), np.zeros(2), 1.0),
                            initial_law=InitialLaw.dirac([1.8, 2.4]))
    g = grid_value_iteration(p, [-1, -1], [3, 4], 41, 11)
    exact = radial_oracle_for(p)
    assert exact == pytest.approx(3.0)
    assert g.value(0, [1.8, 2.4]) == pytest.approx(exact, abs=g.error_estimate)
    assert g.value(0, [1.8, 2.4]) >= exact - 1e-12


def test_dimension_limits():
    with pytest.raises(OracleError, match="d <= 2"):
        grid_value_iteration(presets.get("example-6.1"), -5, 5, 11, 3)
    p = presets.get("example-6.4")
    with pytest.raises(OracleError):
        grid_value_iteration(p, -5, 5, 11, 3)


def test_grid_too_small():
    # the uncontrolled state grows like (1 + h)^j and escapes the box
    p = scalar_problem(3.0, h=0.1, T=2.0, a=1.0, b=0.0)
    g = grid_value_iteration(p, 2.5, 3.5, 101, 3)
    with pytest.raises(OracleError, match="enlarge"):
        g.value(0, 3.0)
    with pytest.raises(OracleError):
        g.value(p.N, 10.0)


def test_noise_leaving_the_grid_marks_nodes_infeasible():
    p = scalar_problem(0.0, h=0.25, N=2, sigma=1.0, c=0.5)
    g = grid_value_iteration(p, -1, 1, 81, 11)
    # only nodes at least one noise kick from the edge survive each stage
    assert np.isinf(g.values[0][0]) and np.isinf(g.values[0][-1])
    assert math.isfinite(g.value(0, 0.0))


def test_radial_examples():
    assert radial_oracle(RHO, 2, 1, 0.0) == pytest.approx(15 - 4 * RHO, abs=1e-14)
    assert radial_oracle(RHO, 2, 1, 0.0) == pytest.approx(2.3509, abs=5e-5)
    assert radial_oracle(RHO, 2, 1, 0.5) == pytest.approx(0.5 * 2 + 1 + (RHO - 2) ** 2, abs=1e-14)
    assert radial_oracle(RHO, 2, 1, 1.5) == pytest.approx(1 + 1.5 * 10 / 3.5, abs=1e-14)
    assert radial_oracle(RHO, 2, 1, 1.5) == pytest.approx(5.2857, abs=5e-5)


@pytest.mark.parametrize("c", [0.0, 0.3, 1.5, 4.0])
@pytest.mark.parametrize("rho", [0.0, 0.5, 2.0, RHO, 7.0])
def test_radial_minimiser_beats_every_speed(c, rho):
    best = radial_oracle(rho, 2.0, 1.0, c)
    speeds = np.linspace(0, 1, 2001)
    assert best <= min(radial_value(rho, 2.0, 1.0, c, a) for a in speeds) + 1e-12


def test_radial_applies_only_to_isotropic_instances():
    assert check_radial_problem(presets.get("example-6.1")) == []
    assert radial_oracle_for(presets.get("example-6.1", c=0.5)) == pytest.approx(3.3509, abs=5e-5)
    assert "dynamics must be deterministic" in check_radial_problem(presets.get("example-6.3"))
    with pytest.raises(OracleError):
        radial_oracle_for(presets.get("example-6.2"))
    with pytest.raises(OracleError):
        radial_oracle(-1.0, 2.0, 1.0, 0.0)
