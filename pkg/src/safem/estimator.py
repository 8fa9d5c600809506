"""Residual error indicators, Doerfler marking and cardinality control."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .fem import DiscreteFunction, FeProblem, FeSpace, FemError, element_coefficients


@dataclass(frozen=True, eq=False)
class IndicatorField:
    """Squared local indicators ``eta(T)**2``, one per triangle."""

    squared: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.squared, dtype=float)
        if np.any(arr < 0) or not np.all(np.isfinite(arr)):
            raise ValueError("squared indicators must be finite and nonnegative")
        arr.setflags(write=False)
        object.__setattr__(self, "squared", arr)

    @property
    def total(self) -> float:
        return float(np.sqrt(self.squared.sum()))

    def __len__(self):
        return len(self.squared)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            for i, v in enumerate(self.squared):
                fh.write(f"{i} {float(v)!r}\n")


def compute_indicators(problem: FeProblem, space: FeSpace, v: DiscreteFunction) -> IndicatorField:
    """Residual indicators of a P1 function with piecewise-constant data.

    Volume part ``|T| * ||b.grad v + c v - f||^2_T`` by the edge-midpoint
    rule; jump part ``|T|^{1/2} * sum_e |e| [[(A grad v - fvec).n]]^2`` over
    the interior edges of ``T``.
    """
    if v.space is not space:
        raise FemError("discrete function does not belong to this space")
    mesh = space.mesh
    A, b, c, f, fvec = element_coefficients(problem, mesh)
    area = space.areas
    grad = v.element_gradients()
    nodal = v.nodal_values()[mesh.triangles]
    mid_vals = 0.5 * (nodal[:, [1, 2, 0]] + nodal[:, [2, 0, 1]])

    residual = (np.einsum("tk,tk->t", b, grad) - f)[:, None] + c[:, None] * mid_vals
    if problem.load_function is not None:
        mids = space.edge_midpoints
        residual = residual - problem.load_function(mids[..., 0], mids[..., 1])
    volume = area * (area / 3.0) * np.sum(residual**2, axis=1)

    flux = np.einsum("tkl,tl->tk", A, grad) - fvec
    pairs, length, normal = space.interior_edge_data
    jump = np.einsum("ek,ek->e", flux[pairs[:, 0]] - flux[pairs[:, 1]], normal)
    edge_term = length * jump**2
    jump_sum = np.zeros(mesh.num_triangles)
    np.add.at(jump_sum, pairs[:, 0], edge_term)
    np.add.at(jump_sum, pairs[:, 1], edge_term)
    return IndicatorField(volume + np.sqrt(area) * jump_sum)


def _descending_order(squared):
    # stable sort on the negated values keeps ascending indices among ties
    return np.argsort(-np.asarray(squared), kind="stable")


def dorfler_mark(indicators, theta: float) -> np.ndarray:
    """Minimal set carrying a ``theta`` fraction of the squared estimator.

    Returns sorted triangle indices.
    """
    if not 0.0 < theta <= 1.0:
        raise ValueError("theta must lie in (0, 1]")
    eta2 = indicators.squared if isinstance(indicators, IndicatorField) else np.asarray(indicators)
    total = float(eta2.sum())
    if total == 0.0:
        return np.zeros(0, dtype=np.int64)
    order = _descending_order(eta2)
    partial = np.cumsum(eta2[order])
    goal = theta * total
    count = int(np.searchsorted(partial, goal, side="left")) + 1
    count = min(count, len(order))
    # cumsum rounding can be off by one; confirm each candidate exactly
    total = math.fsum(eta2)
    while count > 1 and _carries(eta2[order[: count - 1]], eta2, theta, total):
        count -= 1
    while count < len(order) and not _carries(eta2[order[:count]], eta2, theta, total):
        count += 1
    return np.sort(order[:count])


def _carries(part, eta2, theta, total) -> bool:
    """Exact test of ``sum(part) >= theta * sum(eta2)``."""
    have = math.fsum(part)
    goal = theta * total
    if abs(have - goal) > 8 * np.finfo(float).eps * total and goal > 1e-290:
        return have > goal
    # near tie or underflow: fall back to rationals
    return sum(map(Fraction, part.tolist())) >= Fraction(theta) * sum(map(Fraction, eta2.tolist()))


def cardinality_control(proposed, previous_size, indicators, is_solve_level: bool,
                        C_card: float = np.inf) -> np.ndarray:
    """Bound an intermediate-level marking by ``floor(C_card * previous_size)``.

    Elements with the largest indicators are kept; solve levels pass through.
    """
    proposed = np.asarray(proposed, dtype=np.int64)
    if is_solve_level:
        return proposed
    if previous_size is None or previous_size < 0:
        raise ValueError("an intermediate level needs the previous marking size")
    if C_card < 1:
        raise ValueError("C_card must be at least 1")
    if np.isinf(C_card):
        return proposed
    bound = int(np.floor(C_card * previous_size))
    if bound >= len(proposed):
        return proposed
    eta2 = indicators.squared if isinstance(indicators, IndicatorField) else np.asarray(indicators)
    order = _descending_order(eta2[proposed])
    return np.sort(proposed[order[:bound]])
