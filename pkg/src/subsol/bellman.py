"""One-step Bellman operator on max-of-hyperplanes stage functions.

For a stage function g = max(floor, max_i cut_i) and a state x the
operator is

    L g (x) = min_{|u| <= r}  (c|u|^2 + fbar(x)) h + sum_k w_k g(x + (Ax + Bu) h + e_k)

with e_k = sqrt(h) C y_k.  Expectations are exact sums over the noise
atoms.  Two ways of choosing the minimising control are provided:

* ``hamiltonian``: the closed-form minimiser of c|u|^2 + <p, Bu> over the
  ball, where p is the noise-averaged active slope at the successors under
  a predicted control.  Along a simulated path the predictor is the
  previous stage's control.  Without one, the slope is read at the
  zero-control successors, the resulting control is corrected once, and
  the cheaper of the two is kept.  Cheap, exact as h -> 0.
* ``grid``: enumeration of a control lattice plus the hamiltonian
  candidate and u = 0.  With a scalar control the minimisation is done
  exactly on the piecewise-quadratic objective instead.  With a vector
  control the cut comes from the Lagrangian dual (see :func:`_dual_cut`),
  so it stays below the Bellman image even where the lattice minimiser
  sits on a kink.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize

from ._kernels import expected_active
from .model import LinearConvexProblem, running_cost
from .subsolution import StageCuts


class NumericalFailure(FloatingPointError):
    """A cut or control came out non-finite."""


@dataclass(frozen=True)
class ArgminMode:
    mode: str = "hamiltonian"
    grid_points_per_axis: int = 21

    def __post_init__(self):
        if self.mode not in ("hamiltonian", "grid"):
            raise ValueError(f"unknown argmin mode {self.mode!r}")
        if self.grid_points_per_axis < 1:
            raise ValueError("grid_points_per_axis must be positive")


HAMILTONIAN = ArgminMode("hamiltonian")


@dataclass(frozen=True)
class CutSample:
    value: float
    slope: np.ndarray
    control: np.ndarray
    anchor: np.ndarray
    stage: int


def _floor(stage: StageCuts) -> float:
    return -math.inf if stage.floor is None else stage.floor


def _drift(problem: LinearConvexProblem, x, gamma) -> np.ndarray:
    return x + (problem.A @ x + problem.B @ gamma) * problem.h


def _shift(problem, stage: StageCuts) -> np.ndarray:
    """Cut-value shifts e_k . p_i, shape (n_atoms, K), memoised per snapshot."""
    E = problem.noise_offsets
    hit = stage.memo.get("shift")
    if hit is not None and hit[0] is E:
        return hit[1]
    out = np.ascontiguousarray(E @ stage.slopes.T)
    stage.memo["shift"] = (E, out)
    return out


def _padded_slopes(stage: StageCuts) -> np.ndarray:
    # trailing zero row so that index -1 (floor active) picks slope 0
    out = stage.memo.get("padded")
    if out is None:
        out = np.vstack([stage.slopes, np.zeros((1, stage.dim))])
        stage.memo["padded"] = out
    return out


def _atom_values(problem, stage: StageCuts, base):
    """Active value and index at base + e_k for every atom k."""
    if len(stage) == 0:
        n = problem.noise.size
        return np.full(n, _floor(stage)), np.full(n, -1)
    vals = (stage.intercepts + stage.slopes @ base) + _shift(problem, stage)
    idx = vals.argmax(axis=1)
    best = vals[np.arange(idx.size), idx]
    floor = _floor(stage)
    if floor > best.min():
        under = floor > best
        return np.where(under, floor, best), np.where(under, -1, idx)
    return best, idx


def _avg_slope(problem, stage, idx):
    if len(stage) == 0:
        return np.zeros(problem.d)
    return problem.noise.weights @ _padded_slopes(stage)[idx]


def expected_next_value(problem: LinearConvexProblem, next_stage: StageCuts, j: int, x, gamma):
    """Noise-weighted value of the next stage function and its averaged active slope."""
    x = np.asarray(x, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    vals, idx = _atom_values(problem, next_stage, _drift(problem, x, gamma))
    return float(problem.noise.weights @ vals), _avg_slope(problem, next_stage, idx)


def ball_argmin(c: float, r: float, q) -> np.ndarray:
    """argmin of c|u|^2 + q.u over |u| <= r."""
    q = np.asarray(q, dtype=float)
    nq = float(np.linalg.norm(q))
    # compare |q| with 2cr rather than forming q / 2c, which overflows for tiny c
    if c > 0 and nq <= 2 * c * r:
        return -q / (2 * c)
    if nq == 0.0:
        return np.zeros_like(q)
    return -r * q / nq


def ball_argmin_batch(c: float, r: float, Q: np.ndarray) -> np.ndarray:
    """Row-wise :func:`ball_argmin`."""
    nq = np.linalg.norm(Q, axis=1)
    safe = np.where(nq > 0, nq, 1.0)
    boundary = -r * Q / safe[:, None]
    boundary[nq == 0] = 0.0
    if c > 0:
        ok = nq <= 2 * c * r
        inner = -Q[ok] / (2 * c)
        boundary[ok] = inner
    return boundary


def _finish(problem, next_stage, j, x, gamma) -> CutSample:
    value, avg = expected_next_value(problem, next_stage, j, x, gamma)
    v = running_cost(problem, j, x, gamma) + value
    p = problem.h * problem.state_cost.gradient(x) + problem.transition.T @ avg
    return _checked(CutSample(v, p, gamma, x, j))


def _checked(cs: CutSample) -> CutSample:
    if not (math.isfinite(cs.value) and np.all(np.isfinite(cs.slope)) and np.all(np.isfinite(cs.control))):
        raise NumericalFailure(f"non-finite cut at stage {cs.stage}")
    return cs


def hamiltonian_control(problem, next_stage, j, x, predictor=None) -> np.ndarray:
    if predictor is not None:
        _, p = expected_next_value(problem, next_stage, j, x, predictor)
        return ball_argmin(problem.c, problem.r, problem.B.T @ p)
    _, p0 = expected_next_value(problem, next_stage, j, x, np.zeros(problem.d2))
    u0 = ball_argmin(problem.c, problem.r, problem.B.T @ p0)
    # without this corrector the active cut behind the true successor can
    # flip between neighbouring anchors and the controls never settle
    v0, p1 = expected_next_value(problem, next_stage, j, x, u0)
    u1 = ball_argmin(problem.c, problem.r, problem.B.T @ p1)
    v1, _ = expected_next_value(problem, next_stage, j, x, u1)
    # at a kink the corrector can overshoot; keep it only if it is no worse
    if problem.c * (u1 @ u1) * problem.h + v1 <= problem.c * (u0 @ u0) * problem.h + v0:
        return u1
    return u0


@lru_cache(maxsize=32)
def _lattice(d2: int, r: float, n: int) -> np.ndarray:
    axis = np.linspace(-r, r, n) if n > 1 else np.zeros(1)
    pts = np.stack(np.meshgrid(*([axis] * d2), indexing="ij"), axis=-1).reshape(-1, d2)
    pts = pts[np.linalg.norm(pts, axis=1) <= r * (1 + 1e-12)]
    pts.setflags(write=False)
    return pts


def control_lattice(problem: LinearConvexProblem, points_per_axis: int) -> np.ndarray:
    return _lattice(problem.d2, problem.r, points_per_axis)


def control_objective(problem, next_stage, x, G):
    """Running cost + expected next value for each control row of ``G``."""
    h = problem.h
    fx = problem.state_cost(x)
    w = problem.noise.weights
    floor = _floor(next_stage)
    base = x + (problem.A @ x) * h
    if len(next_stage) == 0:
        nxt = np.full(G.shape[0], floor)
    else:
        P = next_stage.slopes
        sx = next_stage.intercepts + P @ base          # (K,)
        sG = (G @ (h * problem.B).T) @ P.T              # (n, K)
        sE = _shift(problem, next_stage)                # (A, K)
        vals = (sx[None, None, :] + sG[:, None, :] + sE[None, :, :]).max(axis=2)
        nxt = np.maximum(vals, floor) @ w
    return (problem.c * np.einsum("ni,ni->n", G, G) + fx) * h + nxt


def _grid_control(problem, next_stage, j, x, mode) -> np.ndarray:
    cand = np.vstack([
        control_lattice(problem, mode.grid_points_per_axis),
        hamiltonian_control(problem, next_stage, j, x)[None, :],
        np.zeros((1, problem.d2)),
    ])
    order = np.lexsort(cand.T[::-1])
    cand = cand[order]
    obj = control_objective(problem, next_stage, x, cand)
    if not np.all(np.isfinite(obj)):
        raise NumericalFailure(f"non-finite Bellman objective at stage {j}")
    return cand[int(np.argmin(obj))].copy()


# pieces per atom entering the dual; a kink of a d2-dimensional problem
# generically involves at most d2 + 1 of them
DUAL_PIECES_EXTRA = 2


def _dual_value(problem, b, P, theta):
    # b: (n_atoms, m) piece values at the zero-control successors; P: (n_atoms, m, d) slopes
    w = problem.noise.weights
    S = np.einsum("a,ak,akd->d", w, theta, P)
    hB = problem.h * problem.B
    q = hB.T @ S
    u = ball_argmin(problem.c * problem.h, problem.r, q)
    value = float(w @ (theta * b).sum(axis=1)) + problem.c * problem.h * float(u @ u) + float(q @ u)
    grad = w[:, None] * (b + P @ (hB @ u))
    return value, grad, S


def _dual_cut(problem, next_stage, j, x, gamma) -> CutSample:
    """Cut certified by weak duality, anchored at ``x``.

    Replacing each max over pieces by a convex mixture theta can only lower
    the objective, and for fixed theta the minimum over the ball is closed
    form and affine in x apart from the running cost.  Its tangent at x is
    therefore below the Bellman image everywhere, whatever theta is; theta
    is then pushed up towards the primal value at the lattice control.
    """
    primal = _finish(problem, next_stage, j, x, gamma)
    floor = _floor(next_stage)
    base = problem.transition @ x
    n_atoms = problem.noise.size
    if len(next_stage):
        vals = (next_stage.intercepts + next_stage.slopes @ base) + _shift(problem, next_stage)
        slopes = next_stage.slopes
    else:
        vals, slopes = np.empty((n_atoms, 0)), np.empty((0, problem.d))
    if math.isfinite(floor):
        vals = np.hstack([vals, np.full((n_atoms, 1), floor)])
        slopes = np.vstack([slopes, np.zeros((1, problem.d))])
    # rank pieces by their value at the successors of the lattice control
    at_gamma = vals + slopes @ (problem.h * problem.B @ gamma)
    m = min(at_gamma.shape[1], problem.d2 + DUAL_PIECES_EXTRA)
    top = np.argsort(-at_gamma, axis=1, kind="stable")[:, :m]
    b = np.take_along_axis(vals, top, axis=1)
    P = slopes[top]
    theta0 = np.zeros((n_atoms, m))
    theta0[:, 0] = 1.0
    best, _, S = _dual_value(problem, b, P, theta0)
    run_cost = running_cost(problem, j, x, np.zeros(problem.d2))
    if primal.value - (run_cost + best) > 1e-13 * (1.0 + abs(primal.value)) and m > 1:
        rows = np.kron(np.eye(n_atoms), np.ones(m))
        res = minimize(lambda t: tuple(-z for z in _dual_value(problem, b, P, t.reshape(n_atoms, m))[:2]),
                       theta0.ravel(), jac=True, method="SLSQP", bounds=[(0.0, 1.0)] * theta0.size,
                       constraints=[{"type": "eq", "fun": lambda t: rows @ t - 1.0, "jac": lambda t: rows}],
                       options={"ftol": 1e-15, "maxiter": 200})
        # project back onto the simplices before trusting the certificate
        theta = np.clip(res.x.reshape(n_atoms, m), 0.0, None)
        sums = theta.sum(axis=1, keepdims=True)
        if np.all(sums > 0):
            value, _, S_opt = _dual_value(problem, b, P, theta / sums)
            if value > best:
                best, S = value, S_opt
    v = run_cost + best
    p = problem.h * problem.state_cost.gradient(x) + problem.transition.T @ S
    return _checked(CutSample(v, p, gamma, x, j))


def _envelope(alpha, beta, lo, hi):
    """Upper envelope of the lines alpha + beta*t on [lo, hi].

    Returns interior breakpoints and the active line of each piece.
    The active slope strictly increases from piece to piece.
    """
    v0 = alpha + beta * lo
    top = v0.max()
    tied = np.flatnonzero(v0 >= top - 1e-13 * (1 + abs(top)))
    cur = int(tied[np.argmax(beta[tied])])
    breaks, pieces = [], [cur]
    pos = lo
    while True:
        steeper = beta > beta[cur]
        if not steeper.any():
            break
        cand = np.flatnonzero(steeper)
        t = (alpha[cur] - alpha[cand]) / (beta[cand] - beta[cur])
        t = np.maximum(t, pos)
        tmin = t.min()
        if tmin >= hi:
            break
        at = cand[t <= tmin]
        cur = int(at[np.argmax(beta[at])])
        breaks.append(float(tmin))
        pieces.append(cur)
        pos = tmin
    return breaks, pieces


def _exact_scalar_control(problem, next_stage, j, x):
    """Exact minimiser for d2 == 1 plus the dual weights of the active lines.

    Returns (u, slope) where ``slope`` is a valid x-subgradient of the
    Bellman image at x built from a stationarity-consistent mixture of
    the left and right active cuts at u.
    """
    h, c, r = problem.h, problem.c, problem.r
    b = problem.B[:, 0]
    E = problem.noise_offsets
    w = problem.noise.weights
    base = x + (problem.A @ x) * h
    floor = _floor(next_stage)
    # lines: floor first (index 0), then cuts
    P = next_stage.slopes
    if math.isfinite(floor):
        P = np.vstack([np.zeros((1, problem.d)), P])
        icpt = np.concatenate([[floor], next_stage.intercepts])
    else:
        icpt = next_stage.intercepts
    beta = h * (P @ b)
    envs = []
    for e in E:
        alpha = icpt + P @ (base + e)
        envs.append((alpha, _envelope(alpha, beta, -r, r)))

    pts = sorted({-r, r, *[t for _, (br, _) in envs for t in br]})

    def active(env, t, side):
        br, pieces = env
        k = int(np.searchsorted(br, t, side=side))
        return pieces[k]

    def slope_sum(t, side):
        return sum(wk * beta[active(env, t, side)] for wk, (_, env) in zip(w, envs))

    u = r
    for lo_, hi_ in zip(pts[:-1], pts[1:]):
        mid = 0.5 * (lo_ + hi_)
        s = slope_sum(mid, "right")
        if 2 * h * c * hi_ + s >= 0:
            if 2 * h * c * lo_ + s >= 0:
                u = lo_
            else:
                u = -s / (2 * h * c)
            break
    left = [active(env, u, "left") for _, env in envs]
    right = [active(env, u, "right") for _, env in envs]
    if u <= -r:
        left = right
    if u >= r:
        right = left
    L = float(w @ beta[left])
    H = float(w @ beta[right])
    g = min(max(-2 * h * c * u, L), H)
    theta = (g - L) / (H - L) if H > L else 0.0
    avg = w @ ((1 - theta) * P[left] + theta * P[right])
    return np.array([u]), avg


def minimize_stage(problem: LinearConvexProblem, next_stage: StageCuts, j: int, x,
                   mode: ArgminMode = HAMILTONIAN) -> CutSample:
    """Bellman image at ``x`` with its minimising control and a cut slope."""
    x = np.asarray(x, dtype=float)
    if mode.mode == "hamiltonian":
        return _finish(problem, next_stage, j, x, hamiltonian_control(problem, next_stage, j, x))
    if problem.d2 == 1:
        gamma, avg = _exact_scalar_control(problem, next_stage, j, x)
        value, _ = expected_next_value(problem, next_stage, j, x, gamma)
        v = running_cost(problem, j, x, gamma) + value
        p = problem.h * problem.state_cost.gradient(x) + problem.transition.T @ avg
        return _checked(CutSample(v, p, gamma, x, j))
    return _dual_cut(problem, next_stage, j, x, _grid_control(problem, next_stage, j, x, mode))


def stage_control(problem: LinearConvexProblem, next_stage: StageCuts, j: int, x,
                  mode: ArgminMode = HAMILTONIAN, predictor=None) -> np.ndarray:
    """The control :func:`minimize_stage` would pick, without building a cut.

    ``predictor`` (hamiltonian mode only) is a guess of the control, usually
    the one applied at the previous stage.
    """
    x = np.asarray(x, dtype=float)
    if mode.mode == "hamiltonian":
        return hamiltonian_control(problem, next_stage, j, x, predictor)
    if problem.d2 == 1:
        return _exact_scalar_control(problem, next_stage, j, x)[0]
    return _grid_control(problem, next_stage, j, x, mode)


def bellman_value(problem, next_stage, j, x, mode: ArgminMode = HAMILTONIAN) -> float:
    return minimize_stage(problem, next_stage, j, x, mode).value


def terminal_cut(problem: LinearConvexProblem, x) -> CutSample:
    x = np.asarray(x, dtype=float)
    F = problem.terminal_cost
    return _checked(CutSample(F(x), F.gradient(x), np.zeros(problem.d2), x, problem.N))


def hamiltonian_controls(problem: LinearConvexProblem, next_stage: StageCuts, X,
                         predictors=None) -> np.ndarray:
    """Hamiltonian-mode controls for a batch of states ``X`` of shape (n, d).

    Row-wise equal to :func:`hamiltonian_control`, with ``predictors`` an
    optional (n, d2) array.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if len(next_stage) == 0:
        return ball_argmin_batch(problem.c, problem.r, np.zeros((n, problem.d2)))
    base = X @ problem.transition.T
    shift, floor = _shift(problem, next_stage), _floor(next_stage)
    w = problem.noise.weights
    hB = problem.h * problem.B

    def at(U):
        vals = np.ascontiguousarray((base + U @ hB.T) @ next_stage.slopes.T + next_stage.intercepts)
        nxt, avg = expected_active(vals, shift, floor, w, next_stage.slopes)
        return problem.c * problem.h * np.einsum("ni,ni->n", U, U) + nxt, avg

    if predictors is not None:
        _, avg = at(np.asarray(predictors, dtype=float))
        return ball_argmin_batch(problem.c, problem.r, avg @ problem.B)
    _, avg = at(np.zeros((n, problem.d2)))
    U0 = ball_argmin_batch(problem.c, problem.r, avg @ problem.B)
    cost0, avg = at(U0)
    U1 = ball_argmin_batch(problem.c, problem.r, avg @ problem.B)
    cost1, _ = at(U1)
    return np.where((cost1 <= cost0)[:, None], U1, U0)
