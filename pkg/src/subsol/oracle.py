"""Independent reference values used to check the cutting-plane solver.

Two oracles are provided.  :func:`grid_value_iteration` runs plain backward
dynamic programming on a tensor grid (state dimension 1 or 2), evaluating
off-grid successors by multilinear interpolation and minimising over a
control lattice.  :func:`radial_oracle` is the closed-form value of the
isotropic benchmark (A = 0, B = I, no running state cost, F = 1 + |x|^2),
which reduces to a one-dimensional problem in the distance to the origin.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .bellman import control_lattice
from .model import LinearConvexProblem, validate

# successor states this far (relative to the box width) outside the grid still count as inside
EDGE_RTOL = 1e-12
# bound on successor points evaluated at once, to keep memory flat on 2-d grids
CHUNK_POINTS = 2_000_000


class OracleError(ValueError):
    """The oracle's preconditions do not hold for this instance or grid."""


@dataclass(frozen=True)
class GridValue:
    """Tabulated V(j, .) on a tensor grid.

    ``values[j]`` has the grid's shape and holds ``inf`` at nodes from which
    every control sends some successor off the grid.  ``error_estimate``
    is an a priori bound on the accumulated interpolation and control
    lattice error, built from discrete second derivatives of the tables.
    """

    axes: tuple
    values: np.ndarray
    controls: np.ndarray
    error_estimate: float

    @property
    def N(self) -> int:
        return self.values.shape[0] - 1

    def value(self, j: int, x) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.size != len(self.axes):
            raise ValueError(f"point has dimension {x.size}, expected {len(self.axes)}")
        v = float(_interpolate(self.axes, self.values[j], x[None, :])[0])
        if not math.isfinite(v):
            raise OracleError(f"V({j}, {x.tolist()}) depends on nodes outside the reachable grid; "
                              "enlarge the box")
        return v


def _outside(axes, pts):
    bad = np.zeros(pts.shape[0], dtype=bool)
    for i, ax in enumerate(axes):
        tol = EDGE_RTOL * (ax[-1] - ax[0])
        bad |= (pts[:, i] < ax[0] - tol) | (pts[:, i] > ax[-1] + tol)
    return bad


def _interpolate(axes, table, pts):
    """Multilinear interpolation; ``inf`` if any node with positive weight is ``inf``."""
    blocked = ~np.isfinite(table)
    finite = np.where(blocked, 0.0, table)
    if len(axes) == 1:
        x = np.clip(pts[:, 0], axes[0][0], axes[0][-1])
        vals = np.interp(x, axes[0], finite)
        hits = np.interp(x, axes[0], blocked.astype(float))
    else:
        clipped = np.column_stack([np.clip(pts[:, i], ax[0], ax[-1]) for i, ax in enumerate(axes)])
        vals = RegularGridInterpolator(axes, finite)(clipped)
        hits = RegularGridInterpolator(axes, blocked.astype(float))(clipped)
    # interpolation weights are non-negative, so hits == 0 iff no blocked node contributes
    return np.where((hits > 0) | _outside(axes, pts), math.inf, vals)


def _curvature(axes, table):
    """Largest discrete second derivative along any axis over finite nodes."""
    kappa = 0.0
    for i, ax in enumerate(axes):
        if ax.size < 3:
            continue
        with np.errstate(invalid="ignore"):
            d2 = np.diff(table, n=2, axis=i) / (ax[1] - ax[0]) ** 2
        d2 = np.abs(d2[np.isfinite(d2)])
        if d2.size:
            kappa = max(kappa, float(d2.max()))
    return kappa


def check_grid_problem(problem: LinearConvexProblem) -> list[str]:
    """Reasons why ``problem`` is outside the grid oracle's scope (empty if fine)."""
    reasons = [f"invalid problem: {m}" for m in validate(problem)]
    if problem.d > 2:
        reasons.append(f"grid oracle needs d <= 2, got d = {problem.d}")
    if problem.d1 > 2:
        reasons.append(f"grid oracle needs d1 <= 2, got d1 = {problem.d1}")
    return reasons


def grid_value_iteration(problem: LinearConvexProblem, lo, hi, points_per_axis: int,
                         control_points: int) -> GridValue:
    """Backward dynamic programming on the box [lo, hi] with ``points_per_axis`` nodes per axis.

    Controls range over the lattice with ``control_points`` values per axis
    clipped to the control ball.  A control is admissible at a node only if
    every noise successor stays inside the box; nodes without an admissible
    control get value ``inf``.  Querying such a value raises
    :class:`OracleError`.
    """
    reasons = check_grid_problem(problem)
    if reasons:
        raise OracleError("; ".join(reasons))
    d = problem.d
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (d,))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (d,))
    if np.any(hi <= lo) or points_per_axis < 2 or control_points < 1:
        raise OracleError("grid needs lo < hi, at least 2 points per axis and 1 control point")
    axes = tuple(np.linspace(lo[i], hi[i], points_per_axis) for i in range(d))
    shape = tuple(ax.size for ax in axes)
    X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    U = control_lattice(problem, control_points)
    E = problem.noise_offsets
    w = problem.noise.weights
    h, N = problem.h, problem.N

    drift_x = X @ problem.transition.T
    push_u = h * (U @ problem.B.T)
    stage_cost = (problem.c * np.einsum("ki,ki->k", U, U)[None, :]
                  + problem.state_cost(X)[:, None]) * h

    values = np.empty((N + 1,) + shape)
    controls = np.empty((N,) + shape + (problem.d2,))
    values[N] = problem.terminal_cost(X).reshape(shape)
    dx = np.array([ax[1] - ax[0] for ax in axes])
    du = 2 * problem.r / (control_points - 1) if control_points > 1 else 2 * problem.r
    b_norm2 = float(np.linalg.norm(problem.B, 2) ** 2)
    error = 0.0
    rows = max(1, CHUNK_POINTS // (U.shape[0] * E.shape[0]))
    for j in range(N - 1, -1, -1):
        nxt = values[j + 1]
        best = np.empty(X.shape[0])
        arg = np.empty(X.shape[0], dtype=np.int64)
        for s in range(0, X.shape[0], rows):
            sl = slice(s, s + rows)
            succ = (drift_x[sl, None, None, :] + push_u[None, :, None, :] + E[None, None, :, :])
            cont = _interpolate(axes, nxt, succ.reshape(-1, d)).reshape(succ.shape[:3]) @ w
            obj = stage_cost[sl] + cont
            arg[sl] = np.argmin(obj, axis=1)
            best[sl] = obj[np.arange(obj.shape[0]), arg[sl]]
        values[j] = best.reshape(shape)
        controls[j] = U[arg].reshape(shape + (problem.d2,))
        kappa = _curvature(axes, nxt)
        # linear interpolation of a function with curvature kappa errs by at most kappa dx^2 / 8
        error += kappa * float(np.sum(dx ** 2)) / 8
        # nearest lattice control is within du sqrt(d2) / 2 of the true minimiser
        curv_u = 2 * problem.c * h + h * h * b_norm2 * kappa
        error += 0.5 * curv_u * (du * math.sqrt(problem.d2) / 2) ** 2
    return GridValue(axes, values, controls, error)


def radial_value(rho: float, T: float, r: float, c: float, speed: float) -> float:
    """Cost of moving towards the origin at constant ``speed`` for time T."""
    return c * speed ** 2 * T + 1.0 + max(rho - speed * T, 0.0) ** 2


def radial_oracle(rho: float, T: float, r: float, c: float) -> float:
    """Optimal value of the isotropic benchmark started at distance ``rho``.

    With A = 0, B = I and F = 1 + |x|^2 the optimal control points at the
    origin with a constant speed a in [0, r], so the value is the minimum
    of c a^2 T + 1 + max(rho - a T, 0)^2.  For c > 0 the unconstrained
    minimiser is rho / (c + T); for c = 0 any speed reaching the origin is
    optimal and min(r, rho / T) is returned.
    """
    if rho < 0 or T <= 0 or r <= 0 or c < 0:
        raise OracleError("radial oracle needs rho >= 0, T > 0, r > 0, c >= 0")
    a = min(r, rho / (c + T)) if c > 0 else min(r, rho / T)
    return radial_value(rho, T, r, c, a)


def check_radial_problem(problem: LinearConvexProblem) -> list[str]:
    """Reasons why ``problem`` is not an instance of the isotropic benchmark."""
    p = problem
    d = p.d
    out = []
    if p.A.any():
        out.append("A must be 0")
    if p.B.shape != (d, d) or not np.array_equal(p.B, np.eye(d)):
        out.append("B must be the identity")
    if not p.state_cost.is_zero:
        out.append("state cost must vanish")
    F = p.terminal_cost
    if not (np.array_equal(F.Q, np.eye(d)) and not F.q.any() and F.q0 == 1.0):
        out.append("terminal cost must be 1 + |x|^2")
    if not p.deterministic:
        out.append("dynamics must be deterministic")
    if not p.initial_law.is_dirac:
        out.append("initial law must be a point mass")
    return out


def radial_oracle_for(problem: LinearConvexProblem) -> float:
    reasons = check_radial_problem(problem)
    if reasons:
        raise OracleError("not a radial instance: " + "; ".join(reasons))
    rho = float(np.linalg.norm(problem.initial_law.x0))
    return radial_oracle(rho, problem.T, problem.r, problem.c)
