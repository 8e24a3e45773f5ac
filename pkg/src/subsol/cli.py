"""Command-line front end: config parsing, presets, experiment runs and oracles.

Configs are YAML documents::

    name: example-6.1
    T: 2.0
    h: 0.01
    dims: {d: 5, d1: 0, d2: 5}
    A: [[0, 0, ...], ...]          # nested rows or one flat row-major list
    B: ...
    C: ...                         # optional; omit for deterministic dynamics
    control: {radius: 1.0, cost_c: 0.0}
    state_cost: {Q: ..., q: ..., q0: 0.0}
    terminal_cost: {Q: ..., q: ..., q0: 1.0}
    noise: {kind: rademacher_product}
    initial: {kind: dirac, x0: [...]}
    solver: {iterations: 20, batch: 1, seed: 0, argmin: {mode: hamiltonian, grid_points: 21}, record_every: 1}
    eval: {mc_paths: 10000, seed: 0}

A document may instead start from ``preset: example-6.1`` and override any
of the fields above.
"""
from __future__ import annotations

import argparse
import copy
import csv
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import presets
from .bellman import ArgminMode, NumericalFailure
from .bounds import ConvergenceRecord, EvalConfig, format_report, gap_report
from .model import ConvexQuadratic, InitialLaw, LinearConvexProblem, NoiseModel, validate
from .oracle import OracleError, grid_value_iteration, radial_oracle_for
from .solver import ConfigError, SolverConfig, run
from .subsolution import dump_cuts

log = logging.getLogger("subsol")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_ORACLE = 0, 2, 3, 4

SCHEMA = {
    "preset": None, "name": None, "T": None, "h": None,
    "dims": {"d": None, "d1": None, "d2": None},
    "A": None, "B": None, "C": None,
    "control": {"radius": None, "cost_c": None},
    "state_cost": {"Q": None, "q": None, "q0": None},
    "terminal_cost": {"Q": None, "q": None, "q0": None},
    "noise": {"kind": None, "atoms": {"points": None, "weights": None}},
    "initial": {"kind": None, "x0": None, "lo": None, "hi": None,
                "atoms": {"points": None, "weights": None}},
    "solver": {"iterations": None, "batch": None, "seed": None,
               "argmin": {"mode": None, "grid_points": None}, "record_every": None},
    "eval": {"mc_paths": None, "seed": None},
}
REQUIRED = ("T", "h", "A", "B", "control", "terminal_cost", "initial")


class _Diagnostics:
    """Collects field errors and renders them with source line numbers."""

    def __init__(self, lines: dict):
        self.lines = lines
        self.errors: list[str] = []

    def add(self, path: tuple, msg: str):
        field = ".".join(path) if path else "<document>"
        line = None
        for k in range(len(path), -1, -1):
            if path[:k] in self.lines:
                line = self.lines[path[:k]]
                break
        where = f"line {line}: " if line is not None else ""
        self.errors.append(f"{where}{field}: {msg}")

    def raise_if_any(self):
        if self.errors:
            raise ConfigError("invalid config:\n  " + "\n  ".join(self.errors))


def _line_map(node, path=(), out=None) -> dict:
    out = {} if out is None else out
    out.setdefault(path, node.start_mark.line + 1)
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = path + (str(k.value),)
            out[key] = k.start_mark.line + 1
            _line_map(v, key, out)
    return out


def _check_fields(doc, schema, path, diag):
    if not isinstance(doc, dict):
        diag.add(path, f"expected a mapping, got {type(doc).__name__}")
        return
    for key, val in doc.items():
        if key not in schema:
            diag.add(path + (str(key),), "unknown field")
        elif isinstance(schema[key], dict) and val is not None:
            _check_fields(val, schema[key], path + (key,), diag)


def _deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


class _Reader:
    """Typed accessors that record diagnostics instead of raising."""

    def __init__(self, doc, diag):
        self.doc, self.diag = doc, diag

    def get(self, path, default=None):
        cur = self.doc
        for k in path:
            if not isinstance(cur, dict) or k not in cur or cur[k] is None:
                return default
            cur = cur[k]
        return cur

    def number(self, path, default=None, integer=False):
        v = self.get(path, default)
        if v is None:
            self.diag.add(path, "missing")
            return None
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.diag.add(path, f"expected a number, got {v!r}")
            return None
        if integer:
            if isinstance(v, float) and not v.is_integer():
                self.diag.add(path, f"expected an integer, got {v!r}")
                return None
            return int(v)
        return float(v)

    def array(self, path, shape=None, default=None):
        v = self.get(path, default)
        if v is None:
            self.diag.add(path, "missing")
            return None
        try:
            arr = np.array(v, dtype=float)
        except (TypeError, ValueError):
            self.diag.add(path, "expected numbers")
            return None
        if shape is not None:
            if arr.ndim == 1 and len(shape) == 2 and arr.size == shape[0] * shape[1]:
                arr = arr.reshape(shape)
            if arr.shape != tuple(shape):
                self.diag.add(path, f"expected shape {tuple(shape)}, got {arr.shape}")
                return None
        if not np.all(np.isfinite(arr)):
            self.diag.add(path, "non-finite entries")
            return None
        return arr


def _columns(m, rows):
    """Column count of a nested or flat row-major matrix with ``rows`` rows."""
    if not isinstance(m, list) or not m:
        return None
    if isinstance(m[0], list):
        return len(m[0])
    return len(m) // rows if rows else None


def _infer_dims(rd: _Reader):
    """(d, d1, d2) from ``dims`` or, failing that, from the matrices."""
    dims = rd.get(("dims",), {}) or {}
    d = dims.get("d")
    A = rd.get(("A",))
    if d is None and isinstance(A, list) and A:
        d = len(A) if isinstance(A[0], list) else int(round(math.sqrt(len(A))))
    d2 = dims.get("d2")
    if d2 is None:
        d2 = _columns(rd.get(("B",)), d)
    d1 = dims.get("d1")
    if d1 is None:
        if rd.get(("C",)) is not None:
            d1 = _columns(rd.get(("C",)), d)
        elif rd.get(("noise", "kind")) == "explicit":
            d1 = _columns(rd.get(("noise", "atoms", "points")), len(rd.get(("noise", "atoms", "weights"), [])))
        else:
            d1 = 0
    for key, v in (("d", d), ("d1", d1), ("d2", d2)):
        if v is not None and (isinstance(v, bool) or not isinstance(v, int) or v < 0):
            rd.diag.add(("dims", key), f"expected a non-negative integer, got {v!r}")
    return d, d1, d2


def _quadratic(rd: _Reader, key: str, d: int, required: bool) -> ConvexQuadratic | None:
    if rd.get((key,)) is None:
        if required:
            rd.diag.add((key,), "missing")
        return ConvexQuadratic.zero(d)
    Q = rd.array((key, "Q"), (d, d), default=np.zeros((d, d)).tolist())
    q = rd.array((key, "q"), (d,), default=[0.0] * d)
    q0 = rd.number((key, "q0"), default=0.0)
    if Q is None or q is None or q0 is None:
        return None
    return ConvexQuadratic(Q, q, q0)


def _noise(rd: _Reader, d1: int) -> NoiseModel | None:
    kind = rd.get(("noise", "kind"), "none")
    if kind == "none":
        return NoiseModel.none(d1)
    if kind == "rademacher_product":
        if d1 < 1:
            rd.diag.add(("noise", "kind"), "rademacher_product needs d1 >= 1")
            return None
        return NoiseModel.rademacher(d1)
    if kind == "explicit":
        w = rd.array(("noise", "atoms", "weights"))
        pts = rd.array(("noise", "atoms", "points"))
        if w is None or pts is None:
            return None
        pts = pts.reshape(w.size, -1) if pts.size else pts
        return NoiseModel.explicit(pts, w)
    rd.diag.add(("noise", "kind"), f"unknown kind {kind!r}; use none, rademacher_product or explicit")
    return None


def _initial(rd: _Reader, d: int) -> InitialLaw | None:
    kind = rd.get(("initial", "kind"), "dirac")
    if kind == "dirac":
        x0 = rd.array(("initial", "x0"), (d,))
        return None if x0 is None else InitialLaw.dirac(x0)
    if kind == "uniform_box":
        lo, hi = rd.array(("initial", "lo"), (d,)), rd.array(("initial", "hi"), (d,))
        return None if lo is None or hi is None else InitialLaw.uniform_box(lo, hi)
    if kind == "finite_support":
        w = rd.array(("initial", "atoms", "weights"))
        pts = rd.array(("initial", "atoms", "points"))
        if w is None or pts is None:
            return None
        return InitialLaw.finite_support(pts.reshape(w.size, d), w)
    rd.diag.add(("initial", "kind"), f"unknown kind {kind!r}; use dirac, uniform_box or finite_support")
    return None


def _load(source) -> tuple[dict, dict]:
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source
                                    and os.path.isfile(source)):
        text = Path(source).read_text()
    else:
        text = str(source)
    try:
        node = yaml.compose(text)
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    if doc is None:
        doc = {}
    lines = _line_map(node) if node is not None else {}
    return doc, lines


def parse_config(source) -> tuple[LinearConvexProblem, SolverConfig, EvalConfig]:
    """Build a validated problem, solver settings and evaluation settings.

    ``source`` is a path or the config text itself.  All problems found are
    reported together in the :class:`ConfigError` message.
    """
    doc, lines = _load(source)
    diag = _Diagnostics(lines)
    _check_fields(doc, SCHEMA, (), diag)
    diag.raise_if_any()
    default_iters = 20
    if doc.get("preset") is not None:
        name = doc["preset"]
        try:
            base = problem_to_config(presets.get(name))
        except KeyError as exc:
            diag.add(("preset",), str(exc.args[0]))
            diag.raise_if_any()
        default_iters = presets.DEFAULT_ITERATIONS[name]
        doc = _deep_merge(base, {k: v for k, v in doc.items() if k != "preset"})
    for key in REQUIRED:
        if doc.get(key) is None:
            diag.add((key,), "missing")
    diag.raise_if_any()

    rd = _Reader(doc, diag)
    d, d1, d2 = _infer_dims(rd)
    if not d or not d2:
        diag.add(("dims",), "cannot determine d and d2")
        diag.raise_if_any()
    A = rd.array(("A",), (d, d))
    B = rd.array(("B",), (d, d2))
    C = rd.array(("C",), (d, d1)) if rd.get(("C",)) is not None else None
    r = rd.number(("control", "radius"))
    c = rd.number(("control", "cost_c"), default=0.0)
    T, h = rd.number(("T",)), rd.number(("h",))
    f = _quadratic(rd, "state_cost", d, required=False)
    F = _quadratic(rd, "terminal_cost", d, required=True)
    noise = _noise(rd, d1)
    law = _initial(rd, d)
    if r is not None and r <= 0:
        diag.add(("control", "radius"), f"must be positive, got {r}")
    if c is not None and c < 0:
        diag.add(("control", "cost_c"), f"must be non-negative, got {c}")
    diag.raise_if_any()

    try:
        problem = LinearConvexProblem(A=A, B=B, C=C, noise=noise, h=h, T=T, r=r, c=c,
                                      state_cost=f, terminal_cost=F, initial_law=law,
                                      name=str(doc.get("name") or "unnamed"))
    except ValueError as exc:
        diag.add((), str(exc))
        diag.raise_if_any()
    for msg in validate(problem):
        diag.add((), msg)

    mode = rd.get(("solver", "argmin", "mode"), "hamiltonian")
    if mode not in ("hamiltonian", "grid"):
        diag.add(("solver", "argmin", "mode"), f"unknown mode {mode!r}; use hamiltonian or grid")
    ints = {}
    for path, default in ((("solver", "iterations"), default_iters), (("solver", "batch"), 1),
                          (("solver", "seed"), 0), (("solver", "argmin", "grid_points"), 21),
                          (("solver", "record_every"), 1), (("eval", "mc_paths"), 10_000),
                          (("eval", "seed"), 0)):
        v = rd.number(path, default=default, integer=True)
        lower = 0 if path[-1] == "seed" else 1
        if v is not None and v < lower:
            diag.add(path, f"must be >= {lower}, got {v}")
        ints[path[-1] if path[0] == "solver" else "eval_" + path[-1]] = v
    diag.raise_if_any()
    solver = SolverConfig(iterations=ints["iterations"], batch=ints["batch"], seed=ints["seed"],
                          record_every=ints["record_every"],
                          argmin_mode=ArgminMode(mode, ints["grid_points"]))
    return problem, solver, EvalConfig(ints["eval_mc_paths"], ints["eval_seed"])


def _matrix(a) -> list:
    return np.asarray(a, dtype=float).tolist()


def problem_to_config(problem: LinearConvexProblem, solver: SolverConfig | None = None,
                      evaluation: EvalConfig | None = None) -> dict:
    """Inverse of :func:`parse_config` as a plain dict (dump with ``yaml.safe_dump``)."""
    p = problem
    doc = {
        "name": p.name, "T": p.T, "h": p.h,
        "dims": {"d": p.d, "d1": p.d1, "d2": p.d2},
        "A": _matrix(p.A), "B": _matrix(p.B),
    }
    if p.C is not None:
        doc["C"] = _matrix(p.C)
    doc["control"] = {"radius": p.r, "cost_c": p.c}
    for key, q in (("state_cost", p.state_cost), ("terminal_cost", p.terminal_cost)):
        doc[key] = {"Q": _matrix(q.Q), "q": _matrix(q.q), "q0": q.q0}
    doc["noise"] = {"kind": p.noise.kind}
    if p.noise.kind == "explicit":
        doc["noise"]["atoms"] = {"points": _matrix(p.noise.points), "weights": _matrix(p.noise.weights)}
    law = p.initial_law
    doc["initial"] = {"kind": law.kind}
    if law.kind == "dirac":
        doc["initial"]["x0"] = _matrix(law.x0)
    elif law.kind == "uniform_box":
        doc["initial"].update(lo=_matrix(law.lo), hi=_matrix(law.hi))
    else:
        doc["initial"]["atoms"] = {"points": _matrix(law.points), "weights": _matrix(law.weights)}
    if solver is not None:
        doc["solver"] = {"iterations": solver.iterations, "batch": solver.batch, "seed": solver.seed,
                         "argmin": {"mode": solver.argmin_mode.mode,
                                    "grid_points": solver.argmin_mode.grid_points_per_axis},
                         "record_every": solver.record_every}
    if evaluation is not None:
        doc["eval"] = {"mc_paths": evaluation.mc_paths, "seed": evaluation.seed}
    return doc


def dump_config(problem, solver=None, evaluation=None) -> str:
    return yaml.safe_dump(problem_to_config(problem, solver, evaluation), sort_keys=False,
                          default_flow_style=None, width=120)


def write_convergence(records, path) -> None:
    """CSV with one row per record; floats carry 17 significant digits."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ConvergenceRecord.FIELDS)
        for r in records:
            w.writerow([r.iteration, f"{r.lower_bound:.17g}", f"{r.upper_estimate:.17g}",
                        f"{r.upper_stderr:.17g}", f"{r.gap:.17g}", f"{r.relative_gap:.17g}",
                        r.cuts_total, r.wall_millis])


# command handlers

def _resolve(args):
    """Problem and settings from --preset/--config plus command-line overrides."""
    if args.config:
        problem, solver, evaluation = parse_config(Path(args.config))
    else:
        problem, solver, evaluation = parse_config(f"preset: {args.preset}\n")
    over = {k: getattr(args, k) for k in ("h", "T", "c") if getattr(args, k, None) is not None}
    if over:
        problem = problem.with_overrides(**over)
        report = validate(problem)
        if report:
            raise ConfigError("invalid overrides: " + "; ".join(report))
    return problem, solver, evaluation


def cmd_run(args) -> int:
    problem, solver, evaluation = _resolve(args)
    changes = {}
    if args.iters is not None:
        changes["iterations"] = args.iters
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.batch is not None:
        changes["batch"] = args.batch
    if args.record_every is not None:
        changes["record_every"] = args.record_every
    if args.argmin is not None:
        changes["argmin_mode"] = ArgminMode(args.argmin, solver.argmin_mode.grid_points_per_axis)
    solver = SolverConfig(**{**solver.__dict__, **changes})
    if args.mc_paths is not None or args.eval_seed is not None:
        evaluation = EvalConfig(args.mc_paths or evaluation.mc_paths,
                                evaluation.seed if args.eval_seed is None else args.eval_seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log.info("running %s: N=%d, %d iterations", problem.name, problem.N, solver.iterations)
    stack, records = run(problem, solver, evaluation, timing=not args.no_timing)
    write_convergence(records, out / "convergence.csv")
    if args.dump_cuts:
        dump_cuts(stack, out / "cuts.csv")
    print(format_report(gap_report(records[-1:])))
    return EXIT_OK


def cmd_oracle(args) -> int:
    problem, _, _ = _resolve(args)
    if args.radial:
        print(f"{radial_oracle_for(problem):.10g}")
        return EXIT_OK
    if not problem.initial_law.is_dirac:
        raise OracleError("grid oracle reports V(0, x0) and needs a point-mass initial law")
    table = grid_value_iteration(problem, args.lo, args.hi, args.points, args.controls)
    print(f"{table.value(0, problem.initial_law.x0):.10g} +/- {table.error_estimate:.3g}")
    return EXIT_OK


def cmd_presets(args) -> int:
    if args.show:
        p = presets.get(args.show)
        cfg = SolverConfig(iterations=presets.DEFAULT_ITERATIONS[args.show])
        sys.stdout.write(dump_config(p, cfg, EvalConfig()))
        return EXIT_OK
    with np.printoptions(precision=5, suppress=True, linewidth=100):
        for name, factory in presets.PRESETS.items():
            p = factory()
            print(f"{name}: d={p.d} d1={p.d1} d2={p.d2} r={p.r} c={p.c} T={p.T} h={p.h}"
                  f" noise={p.noise.kind}")
            print(f"  x0 = {p.initial_law.x0}")
            print("  A =\n" + _indent(p.A))
            print("  B =\n" + _indent(p.B))
            if p.C is not None:
                print("  C =\n" + _indent(p.C))
    return EXIT_OK


def _indent(m) -> str:
    return "\n".join("    " + line for line in str(np.asarray(m)).splitlines())


def _add_source(sp):
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", choices=sorted(presets.PRESETS))
    src.add_argument("--config", help="YAML config file")
    sp.add_argument("--h", type=float, help="override the time step")
    sp.add_argument("--T", type=float, help="override the horizon")
    sp.add_argument("--c", type=float, help="override the control cost")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="subsol", description="Convex subsolutions for linear-convex control.")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    rp = sub.add_parser("run", help="run the cutting-plane solver and write convergence.csv")
    _add_source(rp)
    rp.add_argument("--iters", type=int)
    rp.add_argument("--seed", type=int, help="training seed")
    rp.add_argument("--eval-seed", type=int, help="seed of the Monte-Carlo evaluation")
    rp.add_argument("--batch", type=int, help="trajectories per iteration")
    rp.add_argument("--record-every", type=int)
    rp.add_argument("--argmin", choices=("hamiltonian", "grid"))
    rp.add_argument("--mc-paths", type=int)
    rp.add_argument("--out", default=".", help="output directory")
    rp.add_argument("--dump-cuts", action="store_true", help="also write cuts.csv")
    rp.add_argument("--no-timing", action="store_true", help="write wall_millis = 0 for reproducible output")
    rp.set_defaults(func=cmd_run)

    op = sub.add_parser("oracle", help="reference value at x0")
    _add_source(op)
    kind = op.add_mutually_exclusive_group(required=True)
    kind.add_argument("--radial", action="store_true", help="closed form for the isotropic benchmark")
    kind.add_argument("--grid", action="store_true", help="grid value iteration (d <= 2)")
    op.add_argument("--lo", type=float, nargs="+", default=[-5.0])
    op.add_argument("--hi", type=float, nargs="+", default=[5.0])
    op.add_argument("--points", type=int, default=1001, help="grid points per axis")
    op.add_argument("--controls", type=int, default=101, help="control lattice points per axis")
    op.set_defaults(func=cmd_oracle)

    pp = sub.add_parser("presets", help="list the benchmark presets")
    pp.add_argument("--show", choices=sorted(presets.PRESETS), help="print one preset as a config")
    pp.set_defaults(func=cmd_presets)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OracleError as exc:
        print(f"oracle precondition violated: {exc}", file=sys.stderr)
        return EXIT_ORACLE


if __name__ == "__main__":
    sys.exit(main())
