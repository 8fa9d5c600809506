"""Conforming triangulations and newest-vertex bisection.

Triangles are stored as vertex triples ``(v0, v1, v2)`` in counter-clockwise
order where ``v0`` is the newest vertex and the opposite edge ``(v1, v2)`` is
the refinement edge.  Bisecting the refinement edge at its midpoint ``m``
produces the children ``(m, v0, v1)`` and ``(m, v2, v0)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


class MeshError(ValueError):
    """Raised for invalid triangulations or refinement requests."""


# local edge j is opposite local vertex j
_LOCAL_EDGES = np.array([[1, 2], [2, 0], [0, 1]])


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def _edge_keys(pairs, n_vertices):
    lo = np.minimum(pairs[..., 0], pairs[..., 1]).astype(np.int64)
    hi = np.maximum(pairs[..., 0], pairs[..., 1]).astype(np.int64)
    return lo * n_vertices + hi


def _signed_areas(vertices, triangles):
    p0 = vertices[triangles[:, 0]]
    d1 = vertices[triangles[:, 1]] - p0
    d2 = vertices[triangles[:, 2]] - p0
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


@dataclass(frozen=True, eq=False)
class Triangulation:
    """Immutable conforming triangulation with refinement history.

    ``parent[i]`` is the index of the triangle in the mesh this one was
    refined from (``-1`` on an initial mesh).  ``vertex_parents`` holds the
    edge endpoints of every vertex created by that refinement; those vertices
    are the trailing rows ``num_old_vertices:`` of ``vertices``.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    generation: np.ndarray
    parent: np.ndarray
    initial_element: np.ndarray
    vertex_parents: np.ndarray
    num_old_vertices: int

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def _edge_data(self):
        pairs = self.triangles[:, _LOCAL_EDGES]
        keys = _edge_keys(pairs, self.num_vertices)
        uniq, inverse = np.unique(keys.ravel(), return_inverse=True)
        n = self.num_vertices
        edges = np.column_stack([uniq // n, uniq % n])
        return uniq, _readonly(edges), _readonly(inverse.reshape(-1, 3))

    @property
    def edges(self) -> np.ndarray:
        """Unique edges as sorted vertex pairs."""
        return self._edge_data[1]

    @property
    def triangle_edges(self) -> np.ndarray:
        """``(M, 3)`` edge ids; column j is the edge opposite local vertex j."""
        return self._edge_data[2]

    @cached_property
    def edge_triangles(self) -> np.ndarray:
        """``(E, 2)`` adjacent triangles per edge, ``-1`` on the boundary."""
        te = self.triangle_edges.ravel()
        owner = np.repeat(np.arange(self.num_triangles), 3)
        order = np.argsort(te, kind="stable")
        te, owner = te[order], owner[order]
        out = np.full((len(self.edges), 2), -1, dtype=np.int64)
        first = np.ones(len(te), dtype=bool)
        first[1:] = te[1:] != te[:-1]
        out[te[first], 0] = owner[first]
        out[te[~first], 1] = owner[~first]
        return _readonly(out)

    @cached_property
    def boundary_vertex_mask(self) -> np.ndarray:
        mask = np.zeros(self.num_vertices, dtype=bool)
        mask[self.boundary_edges.ravel()] = True
        return _readonly(mask)

    @cached_property
    def areas(self) -> np.ndarray:
        return _readonly(_signed_areas(self.vertices, self.triangles))

    def refinement_edge_ids(self) -> np.ndarray:
        return self.triangle_edges[:, 0]


def _validate_conformity(vertices, triangles, boundary_edges, geometric=True):
    n = len(vertices)
    pairs = triangles[:, _LOCAL_EDGES]
    keys = _edge_keys(pairs, n).ravel()
    uniq, counts = np.unique(keys, return_counts=True)
    if np.any(counts > 2):
        raise MeshError("non-conforming mesh: an edge is shared by more than two triangles")
    edges = np.column_stack([uniq // n, uniq % n])
    if geometric:
        _check_hanging(vertices, edges)
    topo_boundary = uniq[counts == 1]
    if boundary_edges is None:
        return edges[counts == 1]
    bkeys = np.unique(_edge_keys(np.asarray(boundary_edges, dtype=np.int64), n))
    if len(bkeys) != len(topo_boundary) or np.any(bkeys != topo_boundary):
        raise MeshError("boundary edges are inconsistent with the triangle topology")
    return np.column_stack([bkeys // n, bkeys % n])


def _check_hanging(vertices, edges):
    # O(E * V); only used for small initial meshes
    a = vertices[edges[:, 0]]
    d = vertices[edges[:, 1]] - a
    length2 = np.einsum("ij,ij->i", d, d)
    rel = vertices[None, :, :] - a[:, None, :]
    t = np.einsum("ejk,ek->ej", rel, d) / length2[:, None]
    cross = rel[..., 0] * d[:, None, 1] - rel[..., 1] * d[:, None, 0]
    scale = np.sqrt(length2)[:, None]
    inside = (np.abs(cross) <= 1e-12 * scale**2) & (t > 1e-12) & (t < 1 - 1e-12)
    if inside.any():
        raise MeshError("non-conforming mesh: hanging vertex on an edge")


def create_initial(vertices, triangles, boundary_edges=None) -> Triangulation:
    """Validate an initial mesh and assign longest-edge refinement edges.

    Ties between equally long edges go to the edge whose opposite vertex
    has the smallest global index.  ``boundary_edges`` defaults to the edges
    that belong to a single triangle.
    """
    vertices = np.array(vertices, dtype=float).reshape(-1, 2)
    triangles = np.array(triangles, dtype=np.int64).reshape(-1, 3)
    if len(triangles) == 0:
        raise MeshError("mesh has no triangles")
    if triangles.min() < 0 or triangles.max() >= len(vertices):
        raise MeshError("triangle references an invalid vertex")
    if np.any(np.sort(triangles, axis=1)[:, 1:] == np.sort(triangles, axis=1)[:, :-1]):
        raise MeshError("degenerate triangle with repeated vertex")
    area = _signed_areas(vertices, triangles)
    scale = np.max(np.ptp(vertices, axis=0)) ** 2
    if np.any(np.abs(area) <= 1e-14 * scale):
        raise MeshError("degenerate (zero-area) triangle")

    # longest edge opposite local vertex 0
    p = vertices[triangles]
    opp_len = np.stack(
        [np.sum((p[:, (j + 1) % 3] - p[:, (j + 2) % 3]) ** 2, axis=1) for j in range(3)],
        axis=1,
    )
    longest = opp_len.max(axis=1, keepdims=True)
    tied = np.isclose(opp_len, longest, rtol=1e-12, atol=0.0)
    candidate = np.where(tied, triangles, np.iinfo(np.int64).max)
    apex = np.argmin(candidate, axis=1)
    rows = np.arange(len(triangles))
    v0 = triangles[rows, apex]
    v1 = triangles[rows, (apex + 1) % 3]
    v2 = triangles[rows, (apex + 2) % 3]
    tris = np.column_stack([v0, v1, v2])
    flip = _signed_areas(vertices, tris) < 0
    tris[flip, 1], tris[flip, 2] = v2[flip], v1[flip]

    bnd = _validate_conformity(vertices, tris, boundary_edges)
    m = len(tris)
    return Triangulation(
        vertices=_readonly(vertices),
        triangles=_readonly(tris),
        boundary_edges=_readonly(bnd.astype(np.int64)),
        generation=_readonly(np.zeros(m, dtype=np.int64)),
        parent=_readonly(np.full(m, -1, dtype=np.int64)),
        initial_element=_readonly(np.arange(m, dtype=np.int64)),
        vertex_parents=_readonly(np.zeros((0, 2), dtype=np.int64)),
        num_old_vertices=len(vertices),
    )


def closure_edges(mesh: Triangulation, marked) -> np.ndarray:
    """Boolean edge mask of the coarsest conforming NVB refinement of ``marked``."""
    te = mesh.triangle_edges
    flag = np.zeros(len(mesh.edges), dtype=bool)
    flag[te[marked, 0]] = True
    while True:
        need = flag[te].any(axis=1) & ~flag[te[:, 0]]
        if not need.any():
            return flag
        flag[te[need, 0]] = True


def refine(mesh: Triangulation, marked) -> Triangulation:
    """Coarsest NVB refinement in which every marked triangle is bisected.

    Returns ``mesh`` itself when nothing is marked.
    """
    marked = np.unique(np.asarray(marked, dtype=np.int64).ravel())
    if marked.size == 0:
        return mesh
    if marked[0] < 0 or marked[-1] >= mesh.num_triangles:
        raise MeshError("marked set contains an invalid triangle index")

    flag = closure_edges(mesh, marked)
    edges = mesh.edges
    te = mesh.triangle_edges
    n_old = mesh.num_vertices
    split = np.flatnonzero(flag)
    midpoint = np.full(len(edges), -1, dtype=np.int64)
    midpoint[split] = n_old + np.arange(len(split))
    new_xy = 0.5 * (mesh.vertices[edges[split, 0]] + mesh.vertices[edges[split, 1]])

    tris = mesh.triangles
    gen = mesh.generation
    ids = np.arange(mesh.num_triangles)
    bis = flag[te[:, 0]]
    keep = ~bis

    v0, v1, v2 = tris[bis].T
    m = midpoint[te[bis, 0]]
    m_a = midpoint[te[bis, 2]]  # edge (v0, v1): refinement edge of child a
    m_b = midpoint[te[bis, 1]]  # edge (v2, v0): refinement edge of child b
    pid = ids[bis]
    pgen = gen[bis]

    out_tris = [tris[keep]]
    out_parent = [ids[keep]]
    out_gen = [gen[keep]]

    a_split = m_a >= 0
    out_tris.append(np.column_stack([m, v0, v1])[~a_split])
    out_parent.append(pid[~a_split])
    out_gen.append(pgen[~a_split] + 1)
    s = a_split
    out_tris.append(np.column_stack([m_a[s], m[s], v0[s]]))
    out_tris.append(np.column_stack([m_a[s], v1[s], m[s]]))
    out_parent += [pid[s], pid[s]]
    out_gen += [pgen[s] + 2, pgen[s] + 2]

    b_split = m_b >= 0
    out_tris.append(np.column_stack([m, v2, v0])[~b_split])
    out_parent.append(pid[~b_split])
    out_gen.append(pgen[~b_split] + 1)
    s = b_split
    out_tris.append(np.column_stack([m_b[s], m[s], v2[s]]))
    out_tris.append(np.column_stack([m_b[s], v0[s], m[s]]))
    out_parent += [pid[s], pid[s]]
    out_gen += [pgen[s] + 2, pgen[s] + 2]

    new_tris = np.concatenate(out_tris).astype(np.int64)
    new_parent = np.concatenate(out_parent).astype(np.int64)
    new_gen = np.concatenate(out_gen).astype(np.int64)

    bnd = mesh.boundary_edges
    bkeys = _edge_keys(bnd, n_old)
    bedge = np.searchsorted(mesh._edge_data[0], bkeys)
    bmid = midpoint[bedge]
    cut = bmid >= 0
    new_bnd = np.concatenate(
        [
            bnd[~cut],
            np.column_stack([bnd[cut, 0], bmid[cut]]),
            np.column_stack([bmid[cut], bnd[cut, 1]]),
        ]
    )
    new_bnd = np.sort(new_bnd, axis=1)

    return Triangulation(
        vertices=_readonly(np.vstack([mesh.vertices, new_xy])),
        triangles=_readonly(new_tris),
        boundary_edges=_readonly(new_bnd),
        generation=_readonly(new_gen),
        parent=_readonly(new_parent),
        initial_element=_readonly(mesh.initial_element[new_parent]),
        vertex_parents=_readonly(edges[split].astype(np.int64)),
        num_old_vertices=n_old,
    )


def uniform_refine(mesh: Triangulation) -> Triangulation:
    """Mark every triangle.  On meshes with matching refinement edges
    (e.g. the criss-cross benchmark meshes) each triangle is bisected once."""
    return refine(mesh, np.arange(mesh.num_triangles))


def triangle_angles(mesh: Triangulation) -> np.ndarray:
    """Interior angles in degrees, shape ``(M, 3)``."""
    p = mesh.vertices[mesh.triangles]
    out = np.empty((mesh.num_triangles, 3))
    for j in range(3):
        a = p[:, (j + 1) % 3] - p[:, j]
        b = p[:, (j + 2) % 3] - p[:, j]
        cosang = np.einsum("ij,ij->i", a, b) / (
            np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
        )
        out[:, j] = np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))
    return out


def mesh_stats(mesh: Triangulation) -> dict:
    p = mesh.vertices[mesh.triangles]
    lengths = np.stack(
        [np.linalg.norm(p[:, (j + 1) % 3] - p[:, (j + 2) % 3], axis=1) for j in range(3)],
        axis=1,
    )
    return {
        "num_triangles": mesh.num_triangles,
        "min_angle": float(triangle_angles(mesh).min()),
        "areas": np.array(mesh.areas),
        "diameters": lengths.max(axis=1),
    }


def check_conforming(mesh: Triangulation, geometric: bool = False) -> None:
    """Raise :class:`MeshError` unless ``mesh`` is a valid conforming mesh.

    Without ``geometric`` a hanging vertex is detected topologically: the
    long edge it sits on has a single neighbour but is not a tracked
    boundary edge.
    """
    if np.any(mesh.areas <= 0):
        raise MeshError("triangle with non-positive signed area")
    _validate_conformity(mesh.vertices, mesh.triangles, mesh.boundary_edges, geometric)


def write_mesh(mesh: Triangulation, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"vertices {mesh.num_vertices}\n")
        for x, y in mesh.vertices:
            fh.write(f"{float(x)!r} {float(y)!r}\n")
        fh.write(f"triangles {mesh.num_triangles}\n")
        for (a, b, c), g, par, init in zip(
            mesh.triangles, mesh.generation, mesh.parent, mesh.initial_element
        ):
            fh.write(f"{a} {b} {c} {g} {par} {init}\n")


def read_mesh(path) -> Triangulation:
    """Read the plain-text dump written by :func:`write_mesh`.

    The stored vertex order of every triangle is kept as-is, so refinement
    edges survive the round trip; boundary edges are recovered from topology.
    """
    with open(path) as fh:
        tokens = fh.read().split("\n")
    head, count = tokens[0].split()
    if head != "vertices":
        raise MeshError("mesh dump must start with 'vertices N'")
    nv = int(count)
    verts = np.array([list(map(float, ln.split())) for ln in tokens[1 : 1 + nv]]).reshape(-1, 2)
    head, count = tokens[1 + nv].split()
    if head != "triangles":
        raise MeshError("expected 'triangles M' header")
    nt = int(count)
    rows = np.array(
        [list(map(int, ln.split())) for ln in tokens[2 + nv : 2 + nv + nt]], dtype=np.int64
    ).reshape(-1, 6)
    tris = rows[:, :3]
    bnd = _validate_conformity(verts, tris, None, geometric=False)
    return Triangulation(
        vertices=_readonly(verts),
        triangles=_readonly(tris),
        boundary_edges=_readonly(bnd.astype(np.int64)),
        generation=_readonly(rows[:, 3]),
        parent=_readonly(rows[:, 4]),
        initial_element=_readonly(rows[:, 5]),
        vertex_parents=_readonly(np.zeros((0, 2), dtype=np.int64)),
        num_old_vertices=nv,
    )
