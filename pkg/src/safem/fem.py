"""P1 Lagrange discretization with homogeneous Dirichlet conditions.

Coefficients are constant on every element of the initial mesh.  The
bilinear form is

    b(v, w) = <A grad v, grad w> + <b . grad v + c v, w>

with load ``F(w) = <f, w> + <fvec, grad w>``; ``a`` is its symmetric part.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from .mesh import Triangulation
from .sparse import from_triplets


class FemError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FeProblem:
    """Coefficient table on the initial mesh.

    Array shapes (``n0`` initial elements): ``diffusion (n0, 2, 2)``,
    ``convection (n0, 2)``, ``reaction (n0,)``, ``load (n0,)``,
    ``load_vector (n0, 2)``.  ``load_function(x, y)`` is an optional
    additional volume load integrated by quadrature.
    """

    mesh: Triangulation
    diffusion: np.ndarray
    convection: np.ndarray
    reaction: np.ndarray
    load: np.ndarray
    load_vector: np.ndarray
    load_function: Optional[Callable] = None
    exact_solution: Optional[Callable] = None
    exact_gradient: Optional[Callable] = None
    name: str = "problem"

    def __post_init__(self):
        n0 = self.mesh.num_triangles
        shapes = {
            "diffusion": (n0, 2, 2),
            "convection": (n0, 2),
            "reaction": (n0,),
            "load": (n0,),
            "load_vector": (n0, 2),
        }
        for name, shape in shapes.items():
            arr = np.array(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise FemError(f"{name} must have shape {shape}, got {arr.shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        A = self.diffusion
        if np.any(np.abs(A[:, 0, 1] - A[:, 1, 0]) > 1e-14 * np.abs(A).max()):
            raise FemError("diffusion matrix must be symmetric")
        if np.any(np.linalg.eigvalsh(A) <= 0):
            raise FemError("diffusion matrix must be positive definite")

    @classmethod
    def constant(cls, mesh, diffusion=None, convection=(0.0, 0.0), reaction=0.0,
                 load=0.0, load_vector=(0.0, 0.0), **kwargs):
        n0 = mesh.num_triangles
        diffusion = np.eye(2) if diffusion is None else np.asarray(diffusion, dtype=float)
        return cls(
            mesh=mesh,
            diffusion=np.broadcast_to(diffusion, (n0, 2, 2)),
            convection=np.broadcast_to(np.asarray(convection, dtype=float), (n0, 2)),
            reaction=np.full(n0, float(reaction)),
            load=np.full(n0, float(load)),
            load_vector=np.broadcast_to(np.asarray(load_vector, dtype=float), (n0, 2)),
            **kwargs,
        )

    @property
    def is_symmetric(self) -> bool:
        return not np.any(self.convection)

    def coefficient_table(self) -> str:
        """Rows ``elem A11 A12 A22 b1 b2 c f fvec1 fvec2``."""
        lines = ["elem A11 A12 A22 b1 b2 c f fvec1 fvec2"]
        for i in range(self.mesh.num_triangles):
            A, b, fv = self.diffusion[i], self.convection[i], self.load_vector[i]
            vals = [A[0, 0], A[0, 1], A[1, 1], b[0], b[1], self.reaction[i], self.load[i],
                    fv[0], fv[1]]
            lines.append(f"{i} " + " ".join(repr(float(v)) for v in vals))
        return "\n".join(lines) + "\n"


@dataclass(frozen=True, eq=False)
class FeSpace:
    """P1 space on ``mesh``; one degree of freedom per interior vertex."""

    mesh: Triangulation
    dof_of_vertex: np.ndarray
    num_free_dofs: int

    @cached_property
    def element_dofs(self) -> np.ndarray:
        return self.dof_of_vertex[self.mesh.triangles]

    @cached_property
    def free_vertices(self) -> np.ndarray:
        return np.flatnonzero(self.dof_of_vertex >= 0)

    @property
    def areas(self) -> np.ndarray:
        return self.mesh.areas

    @cached_property
    def gradients(self) -> np.ndarray:
        """Barycentric gradients, shape ``(M, 3, 2)``."""
        p = self.mesh.vertices[self.mesh.triangles]
        two_area = 2.0 * self.mesh.areas
        g = np.empty((len(p), 3, 2))
        for i in range(3):
            a, b = p[:, (i + 1) % 3], p[:, (i + 2) % 3]
            g[:, i, 0] = (a[:, 1] - b[:, 1]) / two_area
            g[:, i, 1] = (b[:, 0] - a[:, 0]) / two_area
        return g

    @cached_property
    def edge_midpoints(self) -> np.ndarray:
        """Midpoints of local edges ``(M, 3, 2)``; column j is opposite vertex j."""
        p = self.mesh.vertices[self.mesh.triangles]
        return 0.5 * (p[:, [1, 2, 0]] + p[:, [2, 0, 1]])

    @cached_property
    def interior_edge_data(self):
        """``(triangle pairs, lengths, unit normals)`` of interior edges."""
        mesh = self.mesh
        et = mesh.edge_triangles
        inner = et[:, 1] >= 0
        edges = mesh.edges[inner]
        d = mesh.vertices[edges[:, 1]] - mesh.vertices[edges[:, 0]]
        length = np.linalg.norm(d, axis=1)
        normal = np.column_stack([d[:, 1], -d[:, 0]]) / length[:, None]
        return et[inner], length, normal


def build_space(mesh: Triangulation) -> FeSpace:
    free = ~mesh.boundary_vertex_mask
    n_free = int(free.sum())
    if n_free == 0:
        raise FemError("mesh has no interior vertex; refine it first")
    dof = np.full(mesh.num_vertices, -1, dtype=np.int64)
    dof[free] = np.arange(n_free)
    dof.setflags(write=False)
    return FeSpace(mesh=mesh, dof_of_vertex=dof, num_free_dofs=n_free)


@dataclass(eq=False)
class DiscreteFunction:
    space: FeSpace
    coefficients: np.ndarray

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (self.space.num_free_dofs,):
            raise FemError("coefficient vector does not match the space")

    @classmethod
    def zero(cls, space):
        return cls(space, np.zeros(space.num_free_dofs))

    def nodal_values(self) -> np.ndarray:
        """Values at all mesh vertices, zero on the boundary."""
        out = np.zeros(self.space.mesh.num_vertices)
        out[self.space.free_vertices] = self.coefficients
        return out

    def element_gradients(self) -> np.ndarray:
        vals = self.nodal_values()[self.space.mesh.triangles]
        return np.einsum("tj,tjk->tk", vals, self.space.gradients)

    def write(self, path) -> None:
        vals = self.nodal_values()
        with open(path, "w") as fh:
            for (x, y), u in zip(self.space.mesh.vertices, vals):
                fh.write(f"{float(x)!r} {float(y)!r} {float(u)!r}\n")


@dataclass(eq=False)
class System:
    """Assembled matrices on one space: ``B`` (full form), ``A_sym``, load ``F``."""

    space: FeSpace
    B: object
    A_sym: object
    F: np.ndarray
    symmetric: bool = False
    _cache: dict = field(default_factory=dict, repr=False)


def element_coefficients(problem: FeProblem, mesh: Triangulation):
    idx = mesh.initial_element
    return (
        problem.diffusion[idx],
        problem.convection[idx],
        problem.reaction[idx],
        problem.load[idx],
        problem.load_vector[idx],
    )


def _midpoint_load(problem, space):
    """Edge-midpoint quadrature of ``<g, lambda_i>`` for ``g = load_function``."""
    mids = space.edge_midpoints
    g = problem.load_function(mids[..., 0], mids[..., 1])
    # lambda_i = 1/2 at the two midpoints of edges touching vertex i
    w = space.areas[:, None] / 3.0
    return w * 0.5 * (g[:, [1, 2, 0]] + g[:, [2, 0, 1]])


def assemble(problem: FeProblem, space: FeSpace) -> System:
    mesh = space.mesh
    A, b, c, f, fvec = element_coefficients(problem, mesh)
    area = space.areas
    G = space.gradients
    AG = np.einsum("tkl,tjl->tjk", A, G)
    local = area[:, None, None] * np.einsum("tik,tjk->tij", G, AG)
    conv = np.einsum("tk,tjk->tj", b, G) * (area / 3.0)[:, None]
    local += conv[:, None, :]
    mass = (area / 12.0)[:, None, None] * (np.ones((3, 3)) + np.eye(3))
    local += c[:, None, None] * mass

    load = (f * area / 3.0)[:, None] + area[:, None] * np.einsum("tk,tjk->tj", fvec, G)
    if problem.load_function is not None:
        load = load + _midpoint_load(problem, space)

    dofs = space.element_dofs
    rows = np.repeat(dofs, 3, axis=1).ravel()
    cols = np.tile(dofs, (1, 3)).ravel()
    keep = (rows >= 0) & (cols >= 0)
    n = space.num_free_dofs
    B = from_triplets(n, n, rows=rows[keep], cols=cols[keep], values=local.ravel()[keep])
    A_sym = (B + B.T) * 0.5
    A_sym.sum_duplicates()
    A_sym.sort_indices()
    F = np.zeros(n)
    lk = dofs.ravel() >= 0
    np.add.at(F, dofs.ravel()[lk], load.ravel()[lk])
    return System(space=space, B=B, A_sym=A_sym, F=F, symmetric=problem.is_symmetric)


def energy_norm(A_sym, v) -> float:
    x = v.coefficients if isinstance(v, DiscreteFunction) else np.asarray(v, dtype=float)
    q = float(x @ (A_sym @ x))
    if q < 0.0:
        if q < -1e-12:
            raise FemError(f"negative energy {q}; the assembled form is broken")
        return 0.0
    return float(np.sqrt(q))


def prolongate(coarse: DiscreteFunction, fine_space: FeSpace) -> DiscreteFunction:
    """Represent a coarse P1 function exactly on a refinement of its mesh."""
    cmesh, fmesh = coarse.space.mesh, fine_space.mesh
    if fmesh is cmesh:
        return DiscreteFunction(fine_space, coarse.coefficients.copy())
    n_old = cmesh.num_vertices
    if fmesh.num_old_vertices != n_old or not np.array_equal(fmesh.vertices[:n_old], cmesh.vertices):
        raise FemError("fine mesh is not a refinement of the coarse mesh")
    vals = np.zeros(fmesh.num_vertices)
    vals[:n_old] = coarse.nodal_values()
    parents = fmesh.vertex_parents
    vals[n_old:] = 0.5 * (vals[parents[:, 0]] + vals[parents[:, 1]])
    return DiscreteFunction(fine_space, vals[fine_space.free_vertices])


def triangle_quadrature(order: int):
    """Collapsed Gauss rule on the reference triangle exact to ``order``.

    Returns ``(points (Q, 2), weights (Q,))`` with weights summing to 1/2.
    """
    n = max(1, (order + 2) // 2 + 1)
    x, w = np.polynomial.legendre.leggauss(n)
    s, ws = 0.5 * (x + 1), 0.5 * w
    S, T = np.meshgrid(s, s, indexing="ij")
    WS, WT = np.meshgrid(ws, ws, indexing="ij")
    pts = np.column_stack([S.ravel(), (T * (1 - S)).ravel()])
    wts = (WS * WT * (1 - S)).ravel()
    return pts, wts


def h1_error_vs_reference(space, v, exact_value, exact_gradient, quad_order=6, problem=None):
    """Energy error ``b(u - v, u - v)^{1/2}`` against an analytic reference.

    Without ``problem`` the Laplace energy ``||grad(u - v)||`` is used.
    """
    mesh = space.mesh
    pts, wts = triangle_quadrature(quad_order)
    p = mesh.vertices[mesh.triangles]
    x0 = p[:, 0]
    J = np.stack([p[:, 1] - x0, p[:, 2] - x0], axis=2)  # (M, 2, 2)
    X = x0[:, None, :] + np.einsum("tkr,qr->tqk", J, pts)
    bary = np.column_stack([1 - pts[:, 0] - pts[:, 1], pts[:, 0], pts[:, 1]])
    vals = v.nodal_values()[mesh.triangles]
    vq = vals @ bary.T
    gv = v.element_gradients()
    u = exact_value(X[..., 0], X[..., 1])
    gu = np.stack(exact_gradient(X[..., 0], X[..., 1]), axis=-1)
    e = u - vq
    ge = gu - gv[:, None, :]
    weight = 2.0 * mesh.areas[:, None] * wts[None, :]
    if problem is None:
        integrand = np.einsum("tqk,tqk->tq", ge, ge)
    else:
        A, b, c, _, _ = element_coefficients(problem, mesh)
        integrand = (
            np.einsum("tqk,tkl,tql->tq", ge, A, ge)
            + np.einsum("tk,tqk->tq", b, ge) * e
            + c[:, None] * e * e
        )
    total = float(np.sum(weight * integrand))
    return float(np.sqrt(max(total, 0.0)))
