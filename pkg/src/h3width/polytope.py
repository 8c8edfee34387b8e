"""Face lattice of a bounded intersection of affine half-spaces in R^3.

The hyperbolic kernel (through its projective chart) and the flat-torus
analogue both reduce cell construction to this routine, so the
combinatorial code path is shared between the two metrics.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import HalfspaceIntersection
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import QhullError, cKDTree


class HalfspaceIntersectionError(ValueError):
    """Base class for failed half-space intersections."""


class EmptyIntersectionError(HalfspaceIntersectionError):
    pass


class UnboundedIntersectionError(HalfspaceIntersectionError):
    pass


@dataclass(frozen=True)
class PolytopeLattice:
    """Vertices, faces and edges of a convex polytope given by ``A x <= b``.

    ``faces`` maps a constraint index to the cyclically ordered vertex
    indices of the facet it supports; redundant constraints do not appear.
    """

    vertices: np.ndarray
    vertex_planes: tuple[tuple[int, ...], ...]
    faces: dict[int, tuple[int, ...]]
    edges: tuple[tuple[int, int], ...]
    edge_faces: tuple[tuple[int, int], ...]
    interior: np.ndarray = field(repr=False)

    @property
    def euler(self) -> int:
        return len(self.vertices) - len(self.edges) + len(self.faces)

    @property
    def is_simple(self) -> bool:
        """True when every vertex lies on exactly three facets."""
        return all(len(p) == 3 for p in self.vertex_planes)


def chebyshev_center(A: np.ndarray, b: np.ndarray, box: float) -> tuple[np.ndarray, float]:
    """Center and radius of the largest ball inside ``A x <= b`` within a box."""
    dim = A.shape[1]
    # the box faces are constraints too, so the ball stays strictly inside it
    A = np.vstack([A, np.eye(dim), -np.eye(dim)])
    b = np.concatenate([b, np.full(2 * dim, box)])
    norms = np.linalg.norm(A, axis=1)
    c = np.zeros(dim + 1)
    c[-1] = -1.0
    A_ub = np.hstack([A, norms[:, None]])
    bounds = [(None, None)] * (dim + 1)
    res = linprog(c, A_ub=A_ub, b_ub=b, bounds=bounds, method="highs")
    if res.status != 0:
        raise EmptyIntersectionError(f"linear program failed: {res.message}")
    return res.x[:dim], float(res.x[-1])


def _merge_points(raw: np.ndarray, tol: float) -> np.ndarray:
    # qhull reports a degenerate vertex once per dual facet
    scale = max(1.0, float(np.abs(raw).max()))
    pairs = cKDTree(raw).query_pairs(tol * scale, output_type="ndarray")
    n = len(raw)
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    _, first = np.unique(labels, return_index=True)
    return raw[np.sort(first)]


def _order_cycle(points: np.ndarray, normal: np.ndarray) -> np.ndarray:
    centroid = points.mean(axis=0)
    n = normal / np.linalg.norm(normal)
    ref = np.eye(3)[np.argmin(np.abs(n))]
    u = ref - (ref @ n) * n
    u /= np.linalg.norm(u)
    v = np.array([n[1] * u[2] - n[2] * u[1], n[2] * u[0] - n[0] * u[2], n[0] * u[1] - n[1] * u[0]])
    rel = points - centroid
    return np.argsort(np.arctan2(rel @ v, rel @ u))


def halfspace_lattice(
    A: np.ndarray,
    b: np.ndarray,
    *,
    residual: Callable[[np.ndarray], np.ndarray] | None = None,
    tol: float = 1e-9,
    box: float = 1e6,
    merge_tol: float = 1e-11,
) -> PolytopeLattice:
    """Intersect ``A x <= b`` and recover the facet/edge/vertex lattice.

    ``residual(vertices)`` returns a (V, k) array of metric slacks used for
    the incidence predicate (a vertex lies on plane j when
    ``|residual[:, j]| <= tol``); by default the Euclidean distance to each
    plane is used.  Constraints that only touch the polytope in a vertex or
    an edge are reported as extra incidences, which makes the vertex
    non-simple.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    k, dim = A.shape
    if dim != 3:
        raise ValueError("halfspace_lattice works in three dimensions")
    center, radius = chebyshev_center(A, b, box)
    scale = max(1.0, float(np.abs(center).max()))
    if radius <= 1e-12 * scale:
        raise EmptyIntersectionError("half-spaces have empty interior")

    box_A = np.vstack([np.eye(3), -np.eye(3)])
    box_b = np.full(6, box)
    full_A = np.vstack([A, box_A])
    full_b = np.concatenate([b, box_b])
    try:
        hs = HalfspaceIntersection(np.hstack([full_A, -full_b[:, None]]), center)
    except QhullError as exc:  # pragma: no cover - qhull rejects only degenerate input
        raise EmptyIntersectionError(str(exc)) from exc

    verts = _merge_points(hs.intersections, merge_tol)

    if np.any(np.abs(verts).max(axis=1) >= box * (1 - 1e-9)):
        raise UnboundedIntersectionError("half-space intersection is unbounded")

    if residual is None:
        norms = np.linalg.norm(A, axis=1)
        slack = (verts @ A.T - b) / norms
    else:
        slack = residual(verts)
    tight = np.abs(slack) <= tol
    # a repeated constraint supports the same facet; only its first copy counts
    unit = np.column_stack([A, b]) / np.linalg.norm(A, axis=1)[:, None]
    for j in range(1, k):
        if np.any(np.abs(unit[:j] - unit[j]).max(axis=1) <= tol):
            tight[:, j] = False
    vertex_planes = tuple(tuple(int(j) for j in np.flatnonzero(row)) for row in tight)

    faces: dict[int, tuple[int, ...]] = {}
    for j in range(k):
        idx = np.flatnonzero(tight[:, j])
        if len(idx) < 3:
            continue
        cyc = idx[_order_cycle(verts[idx], A[j])]
        faces[j] = tuple(int(i) for i in cyc)

    edge_map: dict[tuple[int, int], list[int]] = {}
    for j, cyc in faces.items():
        for a, c in zip(cyc, cyc[1:] + cyc[:1]):
            key = (a, c) if a < c else (c, a)
            edge_map.setdefault(key, []).append(j)
    edges = tuple(sorted(edge_map))
    edge_faces = []
    for e in edges:
        fs = edge_map[e]
        if len(fs) != 2:
            raise HalfspaceIntersectionError(
                f"inconsistent face lattice: edge {e} lies in {len(fs)} faces"
            )
        edge_faces.append((fs[0], fs[1]))
    return PolytopeLattice(
        vertices=verts,
        vertex_planes=vertex_planes,
        faces=faces,
        edges=edges,
        edge_faces=tuple(edge_faces),
        interior=center,
    )
