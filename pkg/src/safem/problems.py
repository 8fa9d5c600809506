"""Benchmark problems and their initial meshes.

All initial meshes are unions of unit squares split along both diagonals
("criss-cross"), so every initial triangle is right isosceles with its
hypotenuse on a square edge.
"""

from __future__ import annotations

import numpy as np

from .fem import FeProblem
from .mesh import create_initial

BENCHMARKS = ("zshape_interface", "lshape_convection_diffusion", "square_manufactured")


def _criss_cross(squares, extra=()):
    """Vertices and triangles for unit squares given by lower-left corners.

    ``extra`` lists ``(corner, sides)`` for partial squares where only the
    named sides' triangles (``bottom``, ``right``, ``top``, ``left``) are kept.
    """
    verts: dict = {}

    def vid(p):
        key = (float(p[0]), float(p[1]))
        if key not in verts:
            verts[key] = len(verts)
        return verts[key]

    tris = []
    pieces = [(c, ("bottom", "right", "top", "left")) for c in squares] + list(extra)
    for (x, y), sides in pieces:
        c = vid((x + 0.5, y + 0.5))
        corners = {
            "bottom": ((x, y), (x + 1, y)),
            "right": ((x + 1, y), (x + 1, y + 1)),
            "top": ((x + 1, y + 1), (x, y + 1)),
            "left": ((x, y + 1), (x, y)),
        }
        for s in sides:
            a, b = corners[s]
            tris.append((c, vid(a), vid(b)))
    return np.array(list(verts.keys())), np.array(tris)


def zshape_mesh():
    """14 triangles: three full squares plus half of the lower-left one."""
    return _criss_cross(
        [(-1, 0), (0, 0), (0, -1)],
        extra=[((-1, -1), ("bottom", "right"))],
    )


def lshape_mesh():
    return _criss_cross([(-1, 0), (0, 0), (-1, -1)])


def square_mesh():
    return _criss_cross([(0, 0)])


def _in_omega(mesh):
    """Elements of the Z-shape mesh inside conv{(1,0),(1,1),(0,1)}."""
    centroids = mesh.vertices[mesh.triangles].mean(axis=1)
    return (centroids.sum(axis=1) > 1.0) & (centroids[:, 0] > 0) & (centroids[:, 1] > 0)


def _sin_load(x, y):
    return 2.0 * np.pi**2 * np.sin(np.pi * x) * np.sin(np.pi * y)


def _sin_value(x, y):
    return np.sin(np.pi * x) * np.sin(np.pi * y)


def _sin_gradient(x, y):
    return (
        np.pi * np.cos(np.pi * x) * np.sin(np.pi * y),
        np.pi * np.sin(np.pi * x) * np.cos(np.pi * y),
    )


def make_problem(benchmark: str):
    """Return ``(FeProblem, initial mesh)`` for a benchmark id."""
    if benchmark == "zshape_interface":
        mesh = create_initial(*zshape_mesh())
        fvec = np.zeros((mesh.num_triangles, 2))
        fvec[_in_omega(mesh)] = 1.0
        problem = FeProblem.constant(mesh, name=benchmark)
        problem = FeProblem(
            mesh=mesh,
            diffusion=problem.diffusion,
            convection=problem.convection,
            reaction=problem.reaction,
            load=problem.load,
            load_vector=fvec,
            name=benchmark,
        )
    elif benchmark == "lshape_convection_diffusion":
        mesh = create_initial(*lshape_mesh())
        problem = FeProblem.constant(mesh, convection=(5.0, 5.0), load=1.0, name=benchmark)
    elif benchmark == "square_manufactured":
        mesh = create_initial(*square_mesh())
        problem = FeProblem.constant(
            mesh,
            load_function=_sin_load,
            exact_solution=_sin_value,
            exact_gradient=_sin_gradient,
            name=benchmark,
        )
    else:
        raise ValueError(f"unknown benchmark {benchmark!r}; choose one of {BENCHMARKS}")
    return problem, mesh
