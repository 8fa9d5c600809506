"""Iteration operators: smoothers, solve-level solvers, Zarantonello steps.

A smoother or solver is built per level from its spec and the assembled
:class:`~safem.fem.System`; calling ``step(x)`` returns the next iterate.
Krylov variants keep their state between steps of the same level.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import sparse
from .fem import DiscreteFunction, System, energy_norm
from .sparse import ConjugateGradient, SolverError

SMOOTHER_KINDS = (
    "identity",
    "richardson",
    "jacobi",
    "gauss_seidel",
    "cg_step",
    "pcg_jacobi_step",
    "zarantonello",
)
SOLVER_KINDS = ("pcg_jacobi", "direct_each_step", "zarantonello_pcg")


class SolverCapExceeded(SolverError):
    """The stopping criterion was not met within ``max_iters`` iterations."""

    def __init__(self, message, records=None):
        super().__init__(message)
        self.records = records or []


@dataclass(frozen=True)
class SmootherSpec:
    kind: str = "gauss_seidel"
    omega: Optional[float] = None
    delta: float = 0.5
    inner: Optional["SmootherSpec"] = None
    J: int = 4

    def __post_init__(self):
        if self.kind not in SMOOTHER_KINDS:
            raise ValueError(f"unknown smoother kind {self.kind!r}")
        if self.omega is not None and not self.omega > 0:
            raise ValueError("smoother damping omega must be positive")
        if self.kind == "zarantonello":
            if not self.delta > 0:
                raise ValueError("Zarantonello damping delta must be positive")
            if self.J < 0:
                raise ValueError("J must be nonnegative")
            if self.inner is None:
                object.__setattr__(self, "inner", SmootherSpec("pcg_jacobi_step"))
            elif self.inner.kind == "zarantonello":
                raise ValueError("nested Zarantonello smoothers are not supported")

    @classmethod
    def from_value(cls, value):
        """Build from a kind name or a mapping of fields."""
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            return cls(kind=value)
        data = dict(value)
        if data.get("inner") is not None:
            data["inner"] = cls.from_value(data["inner"])
        return cls(**data)

    def to_dict(self):
        out = {"kind": self.kind}
        if self.omega is not None:
            out["omega"] = self.omega
        if self.kind == "zarantonello":
            out.update(delta=self.delta, J=self.J, inner=self.inner.to_dict())
        return out


@dataclass(frozen=True)
class SolverSpec:
    kind: str = "pcg_jacobi"
    delta: float = 0.5
    inner_iters: int = 2
    max_iters: int = 500

    def __post_init__(self):
        if self.kind not in SOLVER_KINDS:
            raise ValueError(f"unknown solver kind {self.kind!r}")
        if not self.delta > 0:
            raise ValueError("Zarantonello damping delta must be positive")
        if self.inner_iters < 1 or self.max_iters < 1:
            raise ValueError("inner_iters and max_iters must be positive")

    @classmethod
    def from_value(cls, value):
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            return cls(kind=value)
        return cls(**dict(value))

    def to_dict(self):
        out = {"kind": self.kind, "max_iters": self.max_iters}
        if self.kind == "zarantonello_pcg":
            out.update(delta=self.delta, inner_iters=self.inner_iters)
        return out


def _richardson_omega(system: System):
    if "omega" not in system._cache:
        system._cache["omega"] = 1.0 / sparse.estimate_lambda_max(system.A_sym)
    return system._cache["omega"]


def _require_symmetric(system: System, what: str):
    if not system.symmetric and not sparse.is_symmetric(system.B):
        raise ValueError(f"{what} needs a symmetric system; wrap it in a Zarantonello smoother")


class _Stationary:
    def __init__(self, kind, matrix, rhs, omega):
        self.kind, self.matrix, self.rhs, self.omega = kind, matrix, rhs, omega
        if kind in ("jacobi", "gauss_seidel"):
            sparse._diagonal(matrix)

    def __call__(self, x):
        return sparse.stationary_sweep(self.kind, self.matrix, self.rhs, x, self.omega)


class _Krylov:
    """CG or Jacobi-PCG on ``(matrix, rhs)``, started at the first ``x`` seen."""

    def __init__(self, matrix, rhs, preconditioner):
        self.matrix, self.rhs, self.preconditioner = matrix, rhs, preconditioner
        self.cg = None

    def __call__(self, x):
        if self.cg is None or not np.array_equal(x, self.cg.x):
            self.cg = ConjugateGradient(self.matrix, self.rhs, x, self.preconditioner)
        return self.cg.step()


def _inner_operator(spec: SmootherSpec, matrix, rhs, system: System):
    kind = spec.kind
    if kind == "identity":
        return lambda x: np.array(x, dtype=float, copy=True)
    if kind in ("jacobi", "gauss_seidel"):
        return _Stationary(kind, matrix, rhs, spec.omega)
    if kind == "richardson":
        omega = spec.omega if spec.omega is not None else _richardson_omega(system)
        return _Stationary(kind, matrix, rhs, omega)
    if kind == "cg_step":
        return _Krylov(matrix, rhs, None)
    if kind == "pcg_jacobi_step":
        return _Krylov(matrix, rhs, "jacobi")
    raise ValueError(f"{kind!r} cannot be used as an inner iteration")


class _Zarantonello:
    """Inexact Zarantonello step: ``J`` inner iterations on ``A_sym z = r``."""

    def __init__(self, system: System, delta, inner: SmootherSpec, J):
        self.system, self.delta, self.inner, self.J = system, delta, inner, J

    def __call__(self, x):
        s = self.system
        r = s.A_sym @ x + self.delta * (s.F - s.B @ x)
        op = _inner_operator(self.inner, s.A_sym, r, s)
        z = np.array(x, dtype=float, copy=True)
        for _ in range(self.J):
            z = op(z)
        return z


def make_smoother(spec: SmootherSpec, system: System) -> Callable:
    """Iteration operator ``Psi`` on one level; restarts its state per call of this factory."""
    if spec.kind == "zarantonello":
        return _Zarantonello(system, spec.delta, spec.inner, spec.J)
    if spec.kind in ("cg_step", "pcg_jacobi_step"):
        _require_symmetric(system, spec.kind)
    return _inner_operator(spec, system.B, system.F, system)


def apply_smoother(spec: SmootherSpec, system: System, v: DiscreteFunction, K: int) -> DiscreteFunction:
    if K < 0:
        raise ValueError("K must be nonnegative")
    x = v.coefficients.copy()
    if K == 0 or spec.kind == "identity":
        return DiscreteFunction(v.space, x)
    op = make_smoother(spec, system)
    for _ in range(K):
        x = op(x)
    return DiscreteFunction(v.space, x)


def zarantonello_step(delta, system: System, v) -> np.ndarray:
    """Exact step: solve ``A_sym z = A_sym v + delta (F - B v)``."""
    if not delta > 0:
        raise ValueError("Zarantonello damping delta must be positive")
    x = v.coefficients if isinstance(v, DiscreteFunction) else np.asarray(v, dtype=float)
    rhs = system.A_sym @ x + delta * (system.F - system.B @ x)
    return sparse.direct_oracle_solve(system.A_sym, rhs)


def zarantonello_inexact(delta, inner: SmootherSpec, J, system: System, v) -> np.ndarray:
    x = v.coefficients if isinstance(v, DiscreteFunction) else np.asarray(v, dtype=float)
    return _Zarantonello(system, delta, SmootherSpec.from_value(inner), J)(x)


class _Direct:
    def __init__(self, system):
        self.system = system

    def __call__(self, x):
        return exact_solution(self.system).copy()


def exact_solution(system: System) -> np.ndarray:
    """Galerkin solution of ``B u = F`` (cached on the system)."""
    if "u_star" not in system._cache:
        system._cache["u_star"] = sparse.direct_oracle_solve(system.B, system.F)
    return system._cache["u_star"]


def make_solver(spec: SolverSpec, system: System) -> Callable:
    """Solve-level iteration operator ``Phi``; one call is one iteration."""
    if spec.kind == "pcg_jacobi":
        _require_symmetric(system, "pcg_jacobi")
        return _Krylov(system.B, system.F, "jacobi")
    if spec.kind == "direct_each_step":
        return _Direct(system)
    inner = SmootherSpec("pcg_jacobi_step")
    return _Zarantonello(system, spec.delta, inner, spec.inner_iters)


@dataclass
class IterateRecord:
    k: int
    increment_norm: float
    estimator: float
    elapsed: float


@dataclass
class SolveResult:
    function: DiscreteFunction
    k: int
    records: list = field(default_factory=list)
    indicators: object = None
    elapsed: float = 0.0


def solve_with_stopping(spec: SolverSpec, system: System, u0: DiscreteFunction, lam: float,
                        estimator_callback: Callable, observer: Optional[Callable] = None,
                        clock=time.perf_counter) -> SolveResult:
    """Iterate ``Phi`` until ``|||u^k - u^{k-1}||| <= lam * eta(u^k)``.

    ``estimator_callback(v)`` returns the indicator field of ``v``.
    ``observer(record, v)`` runs after each iterate and is excluded from timing.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    start = clock()
    phi = make_solver(spec, system)
    x = u0.coefficients.copy()
    records = []
    excluded = 0.0
    for k in range(1, spec.max_iters + 1):
        x_new = phi(x)
        if not np.all(np.isfinite(x_new)):
            raise SolverError("non-finite iterate")
        increment = energy_norm(system.A_sym, x_new - x)
        x = x_new
        v = DiscreteFunction(u0.space, x)
        indicators = estimator_callback(v)
        eta = indicators.total
        elapsed = clock() - start - excluded
        records.append(IterateRecord(k, increment, eta, elapsed))
        if observer is not None:
            t0 = clock()
            observer(records[-1], v)
            excluded += clock() - t0
        if increment <= lam * eta:
            return SolveResult(v, k, records, indicators, elapsed)
    raise SolverCapExceeded(
        f"stopping criterion not met after {spec.max_iters} iterations", records
    )


def measure_contraction(operator, system: System, trials=100, seed=0, starts=None):
    """Ratios ``|||u* - Op(v)||| / |||u* - v|||`` over random starts.

    ``operator`` maps a coefficient vector to a coefficient vector.  If it
    is a spec, a fresh operator is built for every start.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    u_star = exact_solution(system)
    rng = np.random.default_rng(seed)
    n = system.space.num_free_dofs if system.space is not None else len(system.F)
    ratios = []
    for t in range(trials):
        v = rng.standard_normal(n) if starts is None else starts[t]
        if isinstance(operator, SmootherSpec):
            w = make_smoother(operator, system)(v) if operator.kind != "identity" else v.copy()
        elif isinstance(operator, SolverSpec):
            w = make_solver(operator, system)(v)
        else:
            w = operator(v)
        denom = energy_norm(system.A_sym, u_star - v)
        if denom == 0.0:
            continue
        ratios.append(energy_norm(system.A_sym, u_star - w) / denom)
    ratios = np.array(ratios)
    return {"q_max": float(ratios.max()), "q_median": float(np.median(ratios)), "ratios": ratios}

