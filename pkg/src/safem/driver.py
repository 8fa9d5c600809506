"""The smoothed adaptive loop and its run log.

Levels ``l`` with ``l % L == 0`` are solve levels: the solver runs until
the increment criterion holds.  All other levels are intermediate: ``K``
smoother steps followed by one estimator evaluation.  Marking on
intermediate levels is capped relative to the previous level's marking.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from . import iterate, sparse
from .estimator import cardinality_control, compute_indicators, dorfler_mark
from .fem import (
    DiscreteFunction,
    FeProblem,
    assemble,
    build_space,
    energy_norm,
    h1_error_vs_reference,
    prolongate,
)
from .iterate import SmootherSpec, SolverCapExceeded, SolverSpec
from .mesh import Triangulation, refine, uniform_refine

SOLVE, INTERMEDIATE = "solve", "intermediate"


class ConfigError(ValueError):
    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class SafemConfig:
    """Algorithm parameters.  At least one stop rule must be set.

    ``max_dofs`` and ``estimator_tol`` are checked on solve levels only;
    ``max_levels`` bounds the number of levels of any type.  ``solver=None``
    selects Jacobi-PCG for symmetric problems and the Zarantonello solver
    otherwise.
    """

    theta: float = 0.5
    lam: float = 0.1
    L: int = 1
    K: int = 0
    C_mark: float = 1.0
    C_card: float = math.inf
    smoother: SmootherSpec = field(default_factory=lambda: SmootherSpec("gauss_seidel"))
    solver: Optional[SolverSpec] = None
    max_dofs: Optional[int] = None
    estimator_tol: Optional[float] = None
    max_levels: Optional[int] = None
    oracle_tracking: bool = False
    initial_uniform_refines: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "smoother", SmootherSpec.from_value(self.smoother))
        if self.solver is not None:
            object.__setattr__(self, "solver", SolverSpec.from_value(self.solver))
        self.validate()

    def validate(self):
        if not 0.0 < self.theta <= 1.0:
            raise ConfigError("theta", "must lie in (0, 1]")
        if not self.lam > 0:
            raise ConfigError("lam", "must be positive")
        if not (isinstance(self.L, (int, np.integer)) and self.L >= 1):
            raise ConfigError("L", "must be an integer >= 1")
        if not (isinstance(self.K, (int, np.integer)) and self.K >= 0):
            raise ConfigError("K", "must be an integer >= 0")
        if self.C_mark != 1.0:
            raise ConfigError("C_mark", "only minimal-cardinality marking (C_mark = 1) is supported")
        if not self.C_card >= 1:
            raise ConfigError("C_card", "must be >= 1 (or inf)")
        if self.max_dofs is None and self.estimator_tol is None and self.max_levels is None:
            raise ConfigError("max_dofs", "set at least one of max_dofs, estimator_tol, max_levels")
        if self.max_dofs is not None and self.max_dofs < 1:
            raise ConfigError("max_dofs", "must be positive")
        if self.estimator_tol is not None and not self.estimator_tol > 0:
            raise ConfigError("estimator_tol", "must be positive")
        if self.max_levels is not None and self.max_levels < 1:
            raise ConfigError("max_levels", "must be positive")
        if self.initial_uniform_refines is not None and self.initial_uniform_refines < 0:
            raise ConfigError("initial_uniform_refines", "must be nonnegative")

    def solver_for(self, problem: FeProblem) -> SolverSpec:
        if self.solver is not None:
            return self.solver
        return SolverSpec("pcg_jacobi" if problem.is_symmetric else "zarantonello_pcg")

    def to_dict(self):
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["smoother"] = self.smoother.to_dict()
        out["solver"] = None if self.solver is None else self.solver.to_dict()
        if math.isinf(self.C_card):
            out["C_card"] = "inf"
        return out

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown configuration field")
        if isinstance(data.get("C_card"), str):
            if data["C_card"].strip().lower() not in ("inf", "infinity"):
                raise ConfigError("C_card", "must be a number or 'inf'")
            data["C_card"] = math.inf
        for key, spec in (("smoother", SmootherSpec), ("solver", SolverSpec)):
            if data.get(key) is not None:
                try:
                    data[key] = spec.from_value(data[key])
                except (TypeError, ValueError) as exc:
                    raise ConfigError(key, str(exc)) from exc
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError("safem", str(exc)) from exc


def mod_period(level: int, L: int) -> int:
    if level < 0 or L < 1:
        raise ValueError("need level >= 0 and L >= 1")
    return level % L


NAN = float("nan")


@dataclass
class RunRecord:
    level: int
    k: int
    counter: int
    level_type: str
    num_triangles: int
    num_dofs: int
    estimator: float = NAN
    increment_norm: float = NAN
    marked_proposed: int = -1
    marked_final: int = -1
    cost: int = 0
    work: int = 0
    wall_time: float = 0.0
    cumulative_time: float = 0.0
    algebraic_error: float = NAN
    estimator_exact: float = NAN
    quasi_error: float = NAN
    reference_error: float = NAN


RECORD_COLUMNS = tuple(f.name for f in fields(RunRecord))


@dataclass
class LevelSummary:
    level: int
    level_type: str
    k_final: int
    num_triangles: int
    num_dofs: int
    estimator: float
    marked_proposed: int = -1
    marked_final: int = -1
    terminated: bool = True
    estimator_exact: float = NAN
    algebraic_error: float = NAN
    quasi_error: float = NAN
    reference_error: float = NAN
    cost: int = 0
    work: int = 0
    cumulative_time: float = 0.0


@dataclass
class RunLog:
    problem: str
    config: dict
    records: list = field(default_factory=list)
    levels: list = field(default_factory=list)
    stop_reason: str = ""
    aborted_level: Optional[int] = None
    final_mesh: Optional[Triangulation] = None
    final_function: Optional[DiscreteFunction] = None
    final_indicators: object = None

    @property
    def L(self) -> int:
        return int(self.config["L"])

    def solve_levels(self):
        """Summaries of solve levels whose solver terminated."""
        return [s for s in self.levels if s.level_type == SOLVE and s.terminated]

    def column(self, name, solve_only=True):
        rows = self.solve_levels() if solve_only else self.levels
        return np.array([getattr(s, name) for s in rows], dtype=float)

    def as_dict(self):
        return {
            "problem": self.problem,
            "config": self.config,
            "stop_reason": self.stop_reason,
            "aborted_level": self.aborted_level,
            "records": [asdict(r) for r in self.records],
            "levels": [asdict(s) for s in self.levels],
        }


class RunAborted(RuntimeError):
    """A run stopped abnormally; ``log`` holds everything computed so far."""

    def __init__(self, message, log):
        super().__init__(message)
        self.log = log


def classify_levels(log: RunLog):
    """Return ``(reached solve levels, terminated solve levels, intermediate levels)``."""
    L = log.L
    reached = sorted({s.level for s in log.levels} | ({log.aborted_level} - {None}))
    solve_reached = [lv for lv in reached if lv % L == 0]
    solved = [lv for lv in solve_reached if lv != log.aborted_level]
    inter = [lv for lv in reached if lv % L != 0]
    return {"S_reached": solve_reached, "S": solved, "I": inter}


def _ensure_interior(mesh, refines):
    if refines is not None:
        for _ in range(refines):
            mesh = uniform_refine(mesh)
        return mesh
    while not np.any(~mesh.boundary_vertex_mask):
        mesh = uniform_refine(mesh)
    return mesh


class _Oracle:
    """Galerkin solution and reference quantities on one level (untimed)."""

    def __init__(self, problem, system, space, enabled):
        self.enabled = enabled
        if not enabled:
            return
        self.problem, self.system, self.space = problem, system, space
        self.u_star = iterate.exact_solution(system)
        u = DiscreteFunction(space, self.u_star)
        self.eta_star = compute_indicators(problem, space, u).total
        self.has_reference = problem.exact_solution is not None and problem.exact_gradient is not None

    def fill(self, rec, x):
        if not self.enabled:
            return
        rec.algebraic_error = energy_norm(self.system.A_sym, self.u_star - x)
        rec.estimator_exact = self.eta_star
        rec.quasi_error = rec.algebraic_error + self.eta_star
        if self.has_reference:
            rec.reference_error = h1_error_vs_reference(
                self.space, DiscreteFunction(self.space, x),
                self.problem.exact_solution, self.problem.exact_gradient,
                problem=self.problem,
            )


def run_safem(problem: FeProblem, config: SafemConfig, clock=time.perf_counter,
              on_level=None) -> RunLog:
    """Run the smoothed adaptive loop.  ``on_level(level, mesh, indicators)`` is an optional hook."""
    solver = config.solver_for(problem)
    log = RunLog(problem=problem.name, config={**config.to_dict(), "solver_resolved": solver.to_dict()})
    mesh = _ensure_interior(problem.mesh, config.initial_uniform_refines)
    sparse.warmup()
    prev_function = None
    prev_marked = None
    counter = cost = work = 0
    total_time = 0.0
    level = 0
    while True:
        level_type = SOLVE if level % config.L == 0 else INTERMEDIATE
        space = build_space(mesh)
        system = assemble(problem, space)
        # geometry shared with the estimator is set up outside the timed steps
        space.interior_edge_data, space.edge_midpoints
        n_tri, n_dof = mesh.num_triangles, space.num_free_dofs
        u = DiscreteFunction.zero(space) if prev_function is None else prolongate(prev_function, space)
        oracle = _Oracle(problem, system, space, config.oracle_tracking)
        level_records = []

        def new_record(k, x, **kw):
            nonlocal counter, cost, work
            cost += n_tri
            if k > 0:
                work += n_dof
            rec = RunRecord(level, k, counter, level_type, n_tri, n_dof, cost=cost, work=work, **kw)
            counter += 1
            oracle.fill(rec, x)
            level_records.append(rec)
            return rec

        new_record(0, u.coefficients, cumulative_time=total_time)

        def estimate(v):
            return compute_indicators(problem, space, v)

        if level_type == SOLVE:
            def observer(it, v):
                new_record(it.k, v.coefficients, estimator=it.estimator,
                           increment_norm=it.increment_norm)

            try:
                result = iterate.solve_with_stopping(
                    solver, system, u, config.lam, estimate, observer=observer, clock=clock
                )
            except SolverCapExceeded as exc:
                _stamp_times(level_records, [r.elapsed for r in exc.records], total_time)
                log.records.extend(level_records)
                log.aborted_level = level
                log.stop_reason = "solver_cap"
                log.final_mesh = mesh
                raise RunAborted(str(exc), log) from exc
            u, indicators, k_final = result.function, result.indicators, result.k
            _stamp_times(level_records, [r.elapsed for r in result.records], total_time)
        else:
            t0 = clock()
            op = iterate.make_smoother(config.smoother, system) if config.K > 0 else None
            x = u.coefficients.copy()
            elapsed, excluded = [], 0.0
            for k in range(1, config.K + 1):
                x = op(x)
                elapsed.append(clock() - t0 - excluded)
                t1 = clock()
                new_record(k, x)
                excluded += clock() - t1
            u = DiscreteFunction(space, x)
            indicators = estimate(u)
            est_done = clock() - t0 - excluded
            k_final = config.K
            level_records[-1].estimator = indicators.total
            if elapsed:
                elapsed[-1] = est_done
            _stamp_times(level_records, elapsed, total_time)
            if config.K == 0:
                level_records[0].wall_time = est_done
                level_records[0].cumulative_time = total_time + est_done
        total_time = level_records[-1].cumulative_time
        eta = indicators.total
        last = level_records[-1]
        summary = LevelSummary(
            level, level_type, k_final, n_tri, n_dof, eta,
            estimator_exact=last.estimator_exact, algebraic_error=last.algebraic_error,
            quasi_error=last.quasi_error, reference_error=last.reference_error,
            cost=last.cost, work=last.work, cumulative_time=total_time,
        )
        log.records.extend(level_records)
        log.levels.append(summary)
        if on_level is not None:
            on_level(level, mesh, indicators)

        stop = _stop_reason(config, level, level_type, n_dof, eta)
        if stop:
            log.stop_reason = stop
            break

        proposed = dorfler_mark(indicators, config.theta)
        if level_type == SOLVE and eta > 0 and len(proposed) == 0:
            raise AssertionError("empty Doerfler marking with positive estimator")
        marked = cardinality_control(
            proposed, prev_marked, indicators, level_type == SOLVE, config.C_card
        )
        summary.marked_proposed = last.marked_proposed = len(proposed)
        summary.marked_final = last.marked_final = len(marked)
        prev_marked = len(marked)
        mesh, prev_function = refine(mesh, marked), u
        level += 1
    log.final_mesh = mesh
    log.final_function = u
    log.final_indicators = indicators
    return log


def _stamp_times(level_records, elapsed, base):
    """Per-record and cumulative times from cumulative in-level ``elapsed``."""
    prev = 0.0
    for rec, t in zip(level_records[1:], elapsed):
        rec.wall_time = t - prev
        rec.cumulative_time = base + t
        prev = t
    level_records[0].cumulative_time = base


def _stop_reason(config, level, level_type, n_dof, eta):
    if level_type == SOLVE:
        if eta == 0.0:
            return "exact_solution"
        if config.estimator_tol is not None and eta <= config.estimator_tol:
            return "estimator_tol"
        if config.max_dofs is not None and n_dof >= config.max_dofs:
            return "max_dofs"
    if config.max_levels is not None and level + 1 >= config.max_levels:
        return "max_levels"
    return ""
