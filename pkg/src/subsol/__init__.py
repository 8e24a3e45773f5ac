"""Cutting-plane subsolutions for discrete-time linear-convex optimal control."""
from .bellman import ArgminMode, CutSample, NumericalFailure, minimize_stage, terminal_cut
from .bounds import ConvergenceRecord, EvalConfig, estimate_upper, gap_report
from .model import ConvexQuadratic, InitialLaw, LinearConvexProblem, NoiseModel, validate
from .oracle import OracleError, grid_value_iteration, radial_oracle
from .solver import ConfigError, SolverConfig, run
from .subsolution import Hyperplane, StageCuts, SubsolutionStack

__all__ = [
    "ArgminMode", "ConfigError", "ConvergenceRecord", "ConvexQuadratic", "CutSample", "EvalConfig",
    "Hyperplane", "InitialLaw", "LinearConvexProblem", "NoiseModel", "NumericalFailure",
    "OracleError", "SolverConfig", "StageCuts", "SubsolutionStack", "estimate_upper", "gap_report",
    "grid_value_iteration", "minimize_stage", "radial_oracle", "run", "terminal_cut", "validate",
]
