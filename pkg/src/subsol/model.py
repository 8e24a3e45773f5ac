"""Discrete-time linear-convex control problems.

A problem instance is the Euler discretisation of

    dX = (A X + B u) dt + C dW,   |u| <= r,

with running cost (c|u|^2 + fbar(X)) dt and terminal cost F(X(T)).  The
one-step map is ``x + (A x + B g) h + sqrt(h) C y`` where ``y`` is drawn
from a finite-support noise law.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

PSD_FLOOR = -1e-10
SYMMETRY_TOL = 1e-12
WEIGHT_TOL = 1e-12
HORIZON_RTOL = 1e-12
CONTROL_SLACK = 1e-9


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ConvexQuadratic:
    """x -> x'Qx + q'x + q0."""

    Q: np.ndarray
    q: np.ndarray
    q0: float = 0.0

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        q = np.asarray(self.q, dtype=float).reshape(-1)
        if Q.shape != (q.size, q.size):
            raise ValueError(f"Q has shape {Q.shape}, expected {(q.size, q.size)}")
        object.__setattr__(self, "Q", _frozen(Q))
        object.__setattr__(self, "q", _frozen(q))
        object.__setattr__(self, "q0", float(self.q0))

    @classmethod
    def zero(cls, d: int) -> "ConvexQuadratic":
        return cls(np.zeros((d, d)), np.zeros(d), 0.0)

    @classmethod
    def constant(cls, d: int, value: float) -> "ConvexQuadratic":
        return cls(np.zeros((d, d)), np.zeros(d), value)

    @property
    def dim(self) -> int:
        return self.q.size

    @property
    def is_zero(self) -> bool:
        return not (self.Q.any() or self.q.any() or self.q0)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return float(x @ self.Q @ x + self.q @ x + self.q0)
        # batch of row vectors
        return np.einsum("ni,ij,nj->n", x, self.Q, x) + x @ self.q + self.q0

    def minimum(self) -> float:
        """Infimum over R^d (``-inf`` if unbounded below)."""
        if not self.Q.any():
            return self.q0 if not self.q.any() else -math.inf
        sym = 0.5 * (self.Q + self.Q.T)
        # stationary point of x'Sx + q'x solves 2Sx = -q
        x, *_ = np.linalg.lstsq(2 * sym, -self.q, rcond=None)
        if np.max(np.abs(2 * sym @ x + self.q)) > 1e-9 * (1 + np.abs(self.q).max()):
            return -math.inf
        return float(x @ sym @ x + self.q @ x + self.q0)

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        # for a symmetric Q this is 2Qx + q
        return x @ (self.Q + self.Q.T) + self.q

    def violations(self, label: str) -> list[str]:
        out = []
        if not np.all(np.isfinite(self.Q)) or not np.all(np.isfinite(self.q)) or not math.isfinite(self.q0):
            return [f"{label} has non-finite entries"]
        if np.max(np.abs(self.Q - self.Q.T), initial=0.0) > SYMMETRY_TOL:
            out.append(f"{label} Q not symmetric")
        sym = 0.5 * (self.Q + self.Q.T)
        if sym.size and np.linalg.eigvalsh(sym).min() < PSD_FLOOR:
            out.append(f"{label} not PSD")
        elif self.minimum() < -1e-12:
            # the zero floor of the initial subsolution needs non-negative costs
            out.append(f"{label} takes negative values")
        return out

    def __eq__(self, other):
        if not isinstance(other, ConvexQuadratic):
            return NotImplemented
        return (np.array_equal(self.Q, other.Q) and np.array_equal(self.q, other.q)
                and self.q0 == other.q0)


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Finite-support noise law: ``points[k]`` occurs with probability ``weights[k]``."""

    kind: str
    points: np.ndarray
    weights: np.ndarray

    KINDS = ("none", "rademacher_product", "explicit")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}")
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1) if pts.size else pts.reshape(1, 0)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if pts.shape[0] != w.size:
            raise ValueError("noise points and weights differ in length")
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "weights", _frozen(w))

    @classmethod
    def none(cls, d1: int = 0) -> "NoiseModel":
        return cls("none", np.zeros((1, d1)), np.ones(1))

    @classmethod
    def rademacher(cls, d1: int) -> "NoiseModel":
        if d1 < 1:
            raise ValueError("rademacher_product needs d1 >= 1")
        pts = np.array(list(itertools.product((1.0, -1.0), repeat=d1)))
        return cls("rademacher_product", pts, np.full(len(pts), 2.0 ** -d1))

    @classmethod
    def explicit(cls, points, weights) -> "NoiseModel":
        return cls("explicit", points, weights)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.weights.size

    @property
    def degenerate(self) -> bool:
        return self.kind == "none"

    def violations(self) -> list[str]:
        out = []
        if self.size == 0:
            return ["noise has no atoms"]
        if np.any(self.weights <= 0):
            out.append("noise weights not strictly positive")
        if abs(self.weights.sum() - 1.0) > WEIGHT_TOL:
            out.append("noise weights do not sum to 1")
        if not np.all(np.isfinite(self.points)):
            out.append("noise atoms not finite")
        if self.kind == "none" and (self.size != 1 or np.any(self.points != 0)):
            out.append("noise kind none must be a single zero atom")
        return out

    def sample_indices(self, uniforms: np.ndarray) -> np.ndarray:
        """Inverse-CDF map from uniforms in [0, 1) to atom indices."""
        cdf = np.cumsum(self.weights)
        idx = np.searchsorted(cdf, uniforms, side="right")
        return np.minimum(idx, self.size - 1)

    def __eq__(self, other):
        if not isinstance(other, NoiseModel):
            return NotImplemented
        return (self.kind == other.kind and np.array_equal(self.points, other.points)
                and np.array_equal(self.weights, other.weights))


@dataclass(frozen=True, eq=False)
class InitialLaw:
    kind: str
    x0: np.ndarray | None = None
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    points: np.ndarray | None = None
    weights: np.ndarray | None = None

    KINDS = ("dirac", "uniform_box", "finite_support")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown initial law kind {self.kind!r}")
        for name in ("x0", "lo", "hi", "weights"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, _frozen(np.asarray(val, dtype=float).reshape(-1)))
        if self.points is not None:
            object.__setattr__(self, "points", _frozen(np.atleast_2d(np.asarray(self.points, dtype=float))))
        needed = {"dirac": ("x0",), "uniform_box": ("lo", "hi"),
                  "finite_support": ("points", "weights")}[self.kind]
        for name in needed:
            if getattr(self, name) is None:
                raise ValueError(f"initial law {self.kind} requires {name}")

    @classmethod
    def dirac(cls, x0) -> "InitialLaw":
        return cls("dirac", x0=x0)

    @classmethod
    def uniform_box(cls, lo, hi) -> "InitialLaw":
        return cls("uniform_box", lo=lo, hi=hi)

    @classmethod
    def finite_support(cls, points, weights) -> "InitialLaw":
        return cls("finite_support", points=points, weights=weights)

    @property
    def dim(self) -> int:
        if self.kind == "dirac":
            return self.x0.size
        if self.kind == "uniform_box":
            return self.lo.size
        return self.points.shape[1]

    @property
    def is_dirac(self) -> bool:
        return self.kind == "dirac"

    def sample(self, rng: np.random.Generator, n: int = 1) -> np.ndarray:
        """Draw ``n`` start points as an ``(n, d)`` array."""
        if self.kind == "dirac":
            return np.tile(self.x0, (n, 1))
        if self.kind == "uniform_box":
            u = rng.random((n, self.lo.size))
            return self.lo + u * (self.hi - self.lo)
        cdf = np.cumsum(self.weights)
        idx = np.minimum(np.searchsorted(cdf, rng.random(n), side="right"), len(self.weights) - 1)
        return self.points[idx].copy()

    def violations(self, d: int) -> list[str]:
        out = []
        if self.dim != d:
            out.append(f"initial law has dimension {self.dim}, expected {d}")
        if self.kind == "uniform_box":
            if self.lo.shape != self.hi.shape:
                out.append("initial box corners differ in dimension")
            elif np.any(self.lo > self.hi):
                out.append("initial box has lo > hi")
        if self.kind == "finite_support":
            if self.points.shape[0] != self.weights.size:
                out.append("initial atoms and weights differ in length")
            elif np.any(self.weights <= 0) or abs(self.weights.sum() - 1) > WEIGHT_TOL:
                out.append("initial weights must be positive and sum to 1")
        return out

    def __eq__(self, other):
        if not isinstance(other, InitialLaw):
            return NotImplemented

        def same(a, b):
            return (a is None and b is None) or (a is not None and b is not None and np.array_equal(a, b))

        return self.kind == other.kind and all(
            same(getattr(self, k), getattr(other, k)) for k in ("x0", "lo", "hi", "points", "weights"))


@dataclass(frozen=True, eq=False)
class LinearConvexProblem:
    """Full problem instance.  ``C`` may be ``None`` for deterministic dynamics."""

    A: np.ndarray
    B: np.ndarray
    h: float
    T: float
    r: float
    c: float
    state_cost: ConvexQuadratic
    terminal_cost: ConvexQuadratic
    initial_law: InitialLaw
    C: np.ndarray | None = None
    noise: NoiseModel = None
    name: str = "unnamed"
    N: int = field(init=False)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(A.shape[0], -1)
        object.__setattr__(self, "A", _frozen(A))
        object.__setattr__(self, "B", _frozen(B))
        if self.C is not None:
            C = np.asarray(self.C, dtype=float)
            if C.ndim == 1:
                C = C.reshape(A.shape[0], -1)
            object.__setattr__(self, "C", _frozen(C))
        if self.noise is None:
            d1 = 0 if self.C is None else self.C.shape[1]
            object.__setattr__(self, "noise", NoiseModel.none(d1))
        for name in ("h", "T", "r", "c"):
            object.__setattr__(self, name, float(getattr(self, name)))
        n = round(self.T / self.h) if self.h > 0 and math.isfinite(self.T / self.h) else 0
        object.__setattr__(self, "N", int(n))

    # dimensions
    @property
    def d(self) -> int:
        return self.A.shape[0]

    @property
    def d1(self) -> int:
        return self.noise.dim

    @property
    def d2(self) -> int:
        return self.B.shape[1]

    @property
    def deterministic(self) -> bool:
        return self.noise.degenerate or self.C is None or not self.C.any()

    @cached_property
    def transition(self) -> np.ndarray:
        """I + hA, the linear part of the one-step map."""
        return _frozen(np.eye(self.d) + self.h * self.A)

    @cached_property
    def noise_offsets(self) -> np.ndarray:
        """sqrt(h) C y_k for every atom, shape ``(n_atoms, d)``."""
        if self.C is None or self.noise.dim == 0:
            out = np.zeros((self.noise.size, self.d))
        else:
            out = math.sqrt(self.h) * self.noise.points @ self.C.T
        return _frozen(out)

    def with_overrides(self, **kw) -> "LinearConvexProblem":
        fields_ = {k: getattr(self, k) for k in (
            "A", "B", "h", "T", "r", "c", "state_cost", "terminal_cost",
            "initial_law", "C", "noise", "name")}
        fields_.update(kw)
        return LinearConvexProblem(**fields_)

    def __eq__(self, other):
        if not isinstance(other, LinearConvexProblem):
            return NotImplemented
        if (self.C is None) != (other.C is None):
            return False
        return (self.name == other.name and np.array_equal(self.A, other.A)
                and np.array_equal(self.B, other.B)
                and (self.C is None or np.array_equal(self.C, other.C))
                and (self.h, self.T, self.r, self.c, self.N) == (other.h, other.T, other.r, other.c, other.N)
                and self.state_cost == other.state_cost and self.terminal_cost == other.terminal_cost
                and self.noise == other.noise and self.initial_law == other.initial_law)


def validate(problem: LinearConvexProblem) -> list[str]:
    """Return the list of violated instance invariants (empty if accepted)."""
    p = problem
    report: list[str] = []
    d = p.A.shape[0]
    if p.A.shape != (d, d) or d < 1:
        report.append(f"A must be square, got {p.A.shape}")
    if p.B.shape[0] != d or p.B.shape[1] < 1:
        report.append(f"B must be {d}x d2 with d2 >= 1, got {p.B.shape}")
    for name in ("A", "B"):
        if not np.all(np.isfinite(getattr(p, name))):
            report.append(f"{name} has non-finite entries")
    if not (p.h > 0 and math.isfinite(p.h)):
        report.append("h must be positive")
    if not (p.T > 0 and math.isfinite(p.T)):
        report.append("T must be positive")
    if p.h > 0 and p.T > 0 and (p.N < 1 or abs(p.N * p.h - p.T) > HORIZON_RTOL * p.T):
        report.append("N·h ≠ T (T/h is not an integer)")
    if not (p.r > 0 and math.isfinite(p.r)):
        report.append("control radius r must be positive")
    if not (p.c >= 0 and math.isfinite(p.c)):
        report.append("control cost c must be non-negative")
    for label, cost in (("state_cost", p.state_cost), ("terminal_cost", p.terminal_cost)):
        if cost.dim != d:
            report.append(f"{label} has dimension {cost.dim}, expected {d}")
        else:
            report.extend(cost.violations(label))
    report.extend(p.noise.violations())
    if not p.noise.degenerate:
        if p.C is None:
            report.append("non-degenerate noise requires C")
        elif p.C.shape != (d, p.noise.dim):
            report.append(f"C has shape {p.C.shape}, expected {(d, p.noise.dim)}")
    elif p.C is not None and p.C.shape[0] != d:
        report.append(f"C has {p.C.shape[0]} rows, expected {d}")
    if p.C is not None and not np.all(np.isfinite(p.C)):
        report.append("C has non-finite entries")
    report.extend(p.initial_law.violations(d))
    return report


def _check_dims(problem, x, g, y=None):
    if x.shape[-1] != problem.d:
        raise ValueError(f"state has dimension {x.shape[-1]}, expected {problem.d}")
    if g.shape[-1] != problem.d2:
        raise ValueError(f"control has dimension {g.shape[-1]}, expected {problem.d2}")
    if y is not None and y.shape[-1] != problem.d1:
        raise ValueError(f"noise has dimension {y.shape[-1]}, expected {problem.d1}")


def step_dynamics(problem: LinearConvexProblem, j: int, x, gamma, y=None) -> np.ndarray:
    """x + (Ax + B gamma) h + sqrt(h) C y."""
    x = np.asarray(x, dtype=float)
    g = np.asarray(gamma, dtype=float)
    y = np.zeros(problem.d1) if y is None else np.asarray(y, dtype=float)
    _check_dims(problem, x, g, y)
    out = x + (problem.A @ x + problem.B @ g) * problem.h
    if problem.C is not None and y.size:
        out = out + math.sqrt(problem.h) * (problem.C @ y)
    return out


def running_cost(problem: LinearConvexProblem, j: int, x, gamma) -> float:
    x = np.asarray(x, dtype=float)
    g = np.asarray(gamma, dtype=float)
    _check_dims(problem, x, g)
    return (problem.c * float(g @ g) + problem.state_cost(x)) * problem.h
