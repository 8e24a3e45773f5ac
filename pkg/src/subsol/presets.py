"""Benchmark instances: two deterministic and two stochastic linear-convex problems."""
from __future__ import annotations

import math

import numpy as np

from .model import ConvexQuadratic, InitialLaw, LinearConvexProblem, NoiseModel

X0_5D = np.array([1.0, -math.sqrt(3.0), 2.0, 1.0, -1.0])
X0_10D = np.array([0.45251, -1.14480, -1.04310, 2.58810, -0.28219,
                   0.52325, 1.03390, -0.44980, -1.56190, -1.56260])
X0_6D = np.array([1.0, -3.0, 2.0, 0.0, 0.0, 0.0])


def _unit_quadratic_terminal(d):
    # 1 + |x|^2
    return ConvexQuadratic(np.eye(d), np.zeros(d), 1.0)


def example_6_1(h=0.01, c=0.0, T=2.0) -> LinearConvexProblem:
    """5-d deterministic: A = 0, B = I, r = 1, F = 1 + |x|^2."""
    d = 5
    return LinearConvexProblem(
        name="example-6.1", A=np.zeros((d, d)), B=np.eye(d), h=h, T=T, r=1.0, c=c,
        state_cost=ConvexQuadratic.zero(d), terminal_cost=_unit_quadratic_terminal(d),
        initial_law=InitialLaw.dirac(X0_5D))


def coupled_drift(d: int = 10) -> np.ndarray:
    i = np.arange(d)[:, None]
    j = np.arange(d)[None, :]
    # 1-based (i-1)(j-1) equals 0-based i*j
    return 0.1 * np.where((i * j) % 2 == 0, 1.0, -1.0)


def example_6_2(h=0.01, c=0.0, T=2.0) -> LinearConvexProblem:
    """10-d deterministic with fully coupled drift."""
    d = 10
    return LinearConvexProblem(
        name="example-6.2", A=coupled_drift(d), B=np.eye(d), h=h, T=T, r=1.0, c=c,
        state_cost=ConvexQuadratic.zero(d), terminal_cost=_unit_quadratic_terminal(d),
        initial_law=InitialLaw.dirac(X0_10D))


def example_6_3(h=0.01, c=0.0, T=2.0) -> LinearConvexProblem:
    """5-d stochastic: example 6.1 plus C = 0.25 I and Rademacher noise."""
    d = 5
    return LinearConvexProblem(
        name="example-6.3", A=np.zeros((d, d)), B=np.eye(d), C=0.25 * np.eye(d),
        noise=NoiseModel.rademacher(d), h=h, T=T, r=1.0, c=c,
        state_cost=ConvexQuadratic.zero(d), terminal_cost=_unit_quadratic_terminal(d),
        initial_law=InitialLaw.dirac(X0_5D))


def example_6_4(h=0.01, c=0.5, T=2.0) -> LinearConvexProblem:
    """Brownian particle in space: position/velocity, controlled and noisy velocity."""
    A = np.zeros((6, 6))
    A[:3, 3:] = np.eye(3)
    A[3:, 3:] = -0.2 * np.eye(3)
    B = np.vstack([np.zeros((3, 3)), np.eye(3)])
    C = np.vstack([np.zeros((3, 3)), 0.25 * np.eye(3)])
    Q = np.zeros((6, 6))
    Q[:3, :3] = 0.5 * np.eye(3)
    return LinearConvexProblem(
        name="example-6.4", A=A, B=B, C=C, noise=NoiseModel.rademacher(3), h=h, T=T, r=2.0, c=c,
        state_cost=ConvexQuadratic(Q, np.zeros(6), 0.0),
        terminal_cost=ConvexQuadratic.constant(6, 1.0),
        initial_law=InitialLaw.dirac(X0_6D))


PRESETS = {
    "example-6.1": example_6_1,
    "example-6.2": example_6_2,
    "example-6.3": example_6_3,
    "example-6.4": example_6_4,
}

# iteration counts and evaluation sizes used for the published runs
DEFAULT_ITERATIONS = {"example-6.1": 20, "example-6.2": 20, "example-6.3": 200, "example-6.4": 20}


def get(name: str, **overrides) -> LinearConvexProblem:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
    return factory(**{k: v for k, v in overrides.items() if v is not None})
