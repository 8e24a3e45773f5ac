"""Piecewise-linear convex subsolutions stored as maxima of hyperplanes."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Hyperplane:
    """Affine function x -> value + slope . (x - anchor)."""

    anchor: np.ndarray
    value: float
    slope: np.ndarray
    iteration_tag: int = 0

    def __post_init__(self):
        object.__setattr__(self, "anchor", np.asarray(self.anchor, dtype=float).reshape(-1))
        object.__setattr__(self, "slope", np.asarray(self.slope, dtype=float).reshape(-1))
        object.__setattr__(self, "value", float(self.value))
        if self.anchor.shape != self.slope.shape:
            raise ValueError("anchor and slope differ in dimension")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.value + _inner(x - self.anchor, self.slope)


def _inner(a, b):
    # one reduction order everywhere so that cut values agree bit for bit
    return (a * b).sum(axis=-1)


def _readonly(a):
    a.setflags(write=False)
    return a


class StageCuts:
    """Immutable snapshot of w(j, .) = max(floor, max_i cut_i).

    ``floor`` is ``None`` for an unbounded-below (-inf) constant part.
    Cuts are held column-wise in arrays so evaluation over many points is
    a single matrix product.
    """

    __slots__ = ("stage", "floor", "anchors", "values", "slopes", "tags", "intercepts", "memo")

    def __init__(self, stage: int, dim: int, floor: float | None = 0.0,
                 anchors=None, values=None, slopes=None, tags=None):
        self.stage = int(stage)
        self.floor = None if floor is None else float(floor)
        if anchors is None:
            anchors = np.empty((0, dim))
            slopes = np.empty((0, dim))
            values = np.empty(0)
            tags = np.empty(0, dtype=np.int64)
        self.anchors = _readonly(np.asarray(anchors, dtype=float).reshape(-1, dim))
        self.slopes = _readonly(np.asarray(slopes, dtype=float).reshape(-1, dim))
        self.values = _readonly(np.asarray(values, dtype=float).reshape(-1))
        self.tags = _readonly(np.asarray(tags, dtype=np.int64).reshape(-1))
        # v - p.xbar; cut_i(x) = intercept_i + p_i . x
        self.intercepts = _readonly(self.values - np.einsum("kd,kd->k", self.slopes, self.anchors))
        # derived per-snapshot quantities (e.g. noise shifts); valid because snapshots never change
        self.memo = {}

    @property
    def dim(self) -> int:
        return self.anchors.shape[1]

    def __len__(self) -> int:
        return self.values.size

    def cut(self, i: int) -> Hyperplane:
        return Hyperplane(self.anchors[i], self.values[i], self.slopes[i], int(self.tags[i]))

    def __iter__(self):
        return (self.cut(i) for i in range(len(self)))

    def __repr__(self):
        return f"StageCuts(stage={self.stage}, cuts={len(self)}, floor={self.floor})"


def eval(stage: StageCuts, x):
    """max(floor, max_i v_i + p_i.(x - xbar_i)); accepts one point or an (n, d) batch."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != stage.dim:
        raise ValueError(f"point has dimension {X.shape[1]}, expected {stage.dim}")
    floor = -math.inf if stage.floor is None else stage.floor
    if len(stage):
        # (x - xbar) . p form: exact at anchors
        vals = stage.values[None, :] + _inner(X[:, None, :] - stage.anchors[None, :, :], stage.slopes)
        out = np.maximum(vals.max(axis=1), floor)
    else:
        out = np.full(X.shape[0], floor)
    return float(out[0]) if single else out


def subgradient(stage: StageCuts, x) -> tuple[np.ndarray, int]:
    """Slope of the active cut at ``x`` and its index.

    Ties go to the lowest insertion index; a cut tying the floor wins.
    When the floor is strictly larger than every cut the zero slope and
    index -1 are returned.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != stage.dim:
        raise ValueError(f"point has dimension {x.size}, expected {stage.dim}")
    if len(stage) == 0:
        return np.zeros(stage.dim), -1
    vals = stage.values + _inner(x[None, :] - stage.anchors, stage.slopes)
    i = int(np.argmax(vals))
    if stage.floor is not None and stage.floor > vals[i]:
        return np.zeros(stage.dim), -1
    return stage.slopes[i].copy(), i


def add_cuts(stage: StageCuts, cuts) -> StageCuts:
    """New snapshot with ``cuts`` appended in order; the old cuts are a prefix."""
    cuts = list(cuts)
    if not cuts:
        return stage
    anchors = np.array([c.anchor for c in cuts], dtype=float)
    slopes = np.array([c.slope for c in cuts], dtype=float)
    values = np.array([c.value for c in cuts], dtype=float)
    if anchors.shape[1] != stage.dim or slopes.shape[1] != stage.dim:
        raise ValueError("cut dimension does not match stage")
    if not (np.all(np.isfinite(values)) and np.all(np.isfinite(slopes)) and np.all(np.isfinite(anchors))):
        raise FloatingPointError(f"non-finite cut at stage {stage.stage}")
    tags = np.array([c.iteration_tag for c in cuts], dtype=np.int64)
    return StageCuts(
        stage.stage, stage.dim, stage.floor,
        np.vstack([stage.anchors, anchors]),
        np.concatenate([stage.values, values]),
        np.vstack([stage.slopes, slopes]),
        np.concatenate([stage.tags, tags]),
    )


def add_cut(stage: StageCuts, cut: Hyperplane) -> StageCuts:
    return add_cuts(stage, [cut])


class SubsolutionStack:
    """Per-stage cut sets for stages 0..N.  Replaced, never mutated, by the solver."""

    def __init__(self, stages):
        self.stages = tuple(stages)

    @classmethod
    def initial(cls, N: int, dim: int, floor: float = 0.0) -> "SubsolutionStack":
        return cls(StageCuts(j, dim, floor) for j in range(N + 1))

    @property
    def N(self) -> int:
        return len(self.stages) - 1

    @property
    def dim(self) -> int:
        return self.stages[0].dim

    def stage(self, j: int) -> StageCuts:
        return self.stages[j]

    def replace(self, j: int, stage: StageCuts) -> "SubsolutionStack":
        stages = list(self.stages)
        stages[j] = stage
        return SubsolutionStack(stages)

    def eval(self, j: int, x):
        return eval(self.stages[j], x)

    @property
    def cuts_total(self) -> int:
        return sum(len(s) for s in self.stages)

    def cut_counts(self) -> list[int]:
        return [len(s) for s in self.stages]


def dump_cuts(stack: SubsolutionStack, path) -> None:
    """Write every cut as CSV: stage, iteration_tag, v, anchor_1..d, slope_1..d."""
    d = stack.dim
    header = (["stage", "iteration_tag", "v"] + [f"xbar_{i + 1}" for i in range(d)]
              + [f"p_{i + 1}" for i in range(d)])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for st in stack.stages:
            for k in range(len(st)):
                w.writerow([st.stage, int(st.tags[k]), f"{st.values[k]:.17g}"]
                           + [f"{v:.17g}" for v in st.anchors[k]]
                           + [f"{v:.17g}" for v in st.slopes[k]])


def load_cuts(path, N: int, dim: int, floor: float = 0.0) -> SubsolutionStack:
    """Inverse of :func:`dump_cuts`."""
    per_stage: list[list[Hyperplane]] = [[] for _ in range(N + 1)]
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows)
        if len(header) != 3 + 2 * dim:
            raise ValueError(f"cut file has {len(header)} columns, expected {3 + 2 * dim}")
        for row in rows:
            j, tag, v = int(row[0]), int(row[1]), float(row[2])
            vals = [float(t) for t in row[3:]]
            per_stage[j].append(Hyperplane(vals[:dim], v, vals[dim:], tag))
    stack = SubsolutionStack.initial(N, dim, floor)
    return SubsolutionStack(add_cuts(stack.stage(j), cuts) for j, cuts in enumerate(per_stage))
