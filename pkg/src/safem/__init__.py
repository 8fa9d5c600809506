"""Smoothed adaptive finite elements for linear elliptic problems in 2D."""

from .analysis import fit_rate, lemma10_bound, predict_threshold, speedup_factor, tail_summability
from .driver import RunLog, SafemConfig, classify_levels, mod_period, run_safem
from .estimator import cardinality_control, compute_indicators, dorfler_mark
from .fem import FeProblem, assemble, build_space, energy_norm, prolongate
from .iterate import SmootherSpec, SolverSpec, apply_smoother, solve_with_stopping
from .mesh import create_initial, refine, uniform_refine
from .problems import make_problem

__version__ = "0.1.0"

__all__ = [
    "FeProblem", "RunLog", "SafemConfig", "SmootherSpec", "SolverSpec",
    "apply_smoother", "assemble", "build_space", "cardinality_control", "classify_levels",
    "compute_indicators", "create_initial", "dorfler_mark", "energy_norm", "fit_rate",
    "lemma10_bound", "make_problem", "mod_period", "predict_threshold", "prolongate",
    "refine", "run_safem", "solve_with_stopping", "speedup_factor", "tail_summability",
    "uniform_refine",
]
