"""Hyperbolic 3-space in the hyperboloid model.

Points are unit future-timelike vectors of R^{3,1} with the form
``<x, y> = -x0 y0 + x1 y1 + x2 y2 + x3 y3``.  Geodesic planes are unit
spacelike normals, isometries are 4x4 Lorentz matrices.  Everything is
vectorised over leading axes so that arrays of shape ``(..., 4)`` can be
used wherever a single point is accepted.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import math
from functools import lru_cache

import numpy as np

from .polytope import (
    EmptyIntersectionError,
    HalfspaceIntersectionError,
    PolytopeLattice,
    UnboundedIntersectionError,
    halfspace_lattice,
)

__all__ = [
    "TAU_GEOM",
    "TAU_NORM",
    "ETA",
    "GeometryError",
    "PreconditionError",
    "DegeneratePairError",
    "HalfspaceIntersectionError",
    "EmptyIntersectionError",
    "UnboundedIntersectionError",
    "HPoint",
    "Isometry",
    "GeodesicPlane",
    "ConvexPolyhedron",
    "minkowski",
    "normalize",
    "distance",
    "pairwise_distance",
    "midpoint",
    "bisector",
    "bisector_normals",
    "ball_volume",
    "equatorial_disc_area",
    "sphere_area",
    "triangle_area",
    "intersect_halfspaces",
    "to_klein",
    "from_klein",
    "transvection",
    "sample_ball",
]

TAU_GEOM = 1e-9
TAU_NORM = 1e-12
ETA = np.diag([-1.0, 1.0, 1.0, 1.0])


class GeometryError(ValueError):
    pass


class PreconditionError(GeometryError):
    pass


class DegeneratePairError(GeometryError):
    pass


def minkowski(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return -a[..., 0] * b[..., 0] + np.einsum("...i,...i->...", a[..., 1:], b[..., 1:])


def normalize(x) -> np.ndarray:
    """Project timelike vectors back onto the upper sheet."""
    x = np.asarray(x, dtype=float)
    q = -minkowski(x, x)
    if np.any(q <= 0):
        raise PreconditionError("vector is not timelike")
    return x * (np.sign(x[..., :1]) / np.sqrt(q)[..., None])


def _coords(p) -> np.ndarray:
    if isinstance(p, HPoint):
        return p.coords
    return np.asarray(p, dtype=float)


def _check_normalized(x: np.ndarray, tol: float = 1e-9) -> None:
    # drift on the hyperboloid is multiplicative, so compare against x0^2
    err = np.abs(minkowski(x, x) + 1.0)
    if np.any(err > tol * np.maximum(1.0, x[..., 0] ** 2)) or np.any(x[..., 0] < 1.0 - tol):
        raise PreconditionError("point is not on the upper sheet of the hyperboloid")


@dataclass(frozen=True, eq=False)
class HPoint:
    coords: np.ndarray

    def __post_init__(self):
        c = np.array(self.coords, dtype=float)
        if c.shape != (4,):
            raise PreconditionError(f"HPoint needs a 4-vector, got shape {c.shape}")
        _check_normalized(c)
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    @classmethod
    def origin(cls) -> "HPoint":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def polar(cls, r: float, direction: Sequence[float]) -> "HPoint":
        u = np.asarray(direction, dtype=float)
        u = u / np.linalg.norm(u)
        return cls(np.concatenate([[np.cosh(r)], np.sinh(r) * u]))

    @classmethod
    def from_klein(cls, k: Sequence[float]) -> "HPoint":
        return cls(from_klein(k))

    @property
    def klein(self) -> np.ndarray:
        return to_klein(self.coords)

    def __eq__(self, other):
        return isinstance(other, HPoint) and np.array_equal(self.coords, other.coords)

    def __hash__(self):
        return hash(self.coords.tobytes())

    def __repr__(self):
        return f"HPoint({np.array2string(self.coords, precision=6)})"


def to_klein(x) -> np.ndarray:
    x = _coords(x)
    return x[..., 1:] / x[..., :1]


def from_klein(k) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    r2 = np.einsum("...i,...i->...", k, k)
    if np.any(r2 >= 1.0):
        raise PreconditionError("Klein coordinates must lie in the open unit ball")
    x0 = 1.0 / np.sqrt(1.0 - r2)
    return np.concatenate([x0[..., None], k * x0[..., None]], axis=-1)


def distance(p, q) -> np.ndarray | float:
    """Hyperbolic distance; broadcasts over leading axes.

    Uses ``2 asinh(|p - q| / 2)`` with the Lorentzian norm of the difference,
    which keeps full relative precision for nearby points.
    """
    p = _coords(p)
    q = _coords(q)
    _check_normalized(p)
    _check_normalized(q)
    return _distance(p, q)


def _distance(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    diff = p - q
    sq = np.maximum(minkowski(diff, diff), 0.0)
    d = 2.0 * np.arcsinh(0.5 * np.sqrt(sq))
    return d if d.ndim else float(d)


def pairwise_distance(P, Q) -> np.ndarray:
    """Distance matrix between two point arrays of shape (n, 4) and (m, 4)."""
    P = np.atleast_2d(_coords(P))
    Q = np.atleast_2d(_coords(Q))
    inner = -(P @ (Q * np.array([-1.0, 1.0, 1.0, 1.0])).T)
    # small distances from the inner product lose precision; redo them exactly
    d = np.arccosh(np.maximum(inner, 1.0))
    close = d < 1e-3
    if np.any(close):
        i, j = np.nonzero(close)
        d[i, j] = _distance(P[i], Q[j])
    return d


def midpoint(p, q) -> np.ndarray:
    return normalize(_coords(p) + _coords(q))


def ball_volume(r: float) -> float:
    """Volume of a hyperbolic ball, ``pi (sinh 2r - 2r)``."""
    if r < 0:
        raise GeometryError("radius must be non-negative")
    return float(_ball_volumes(np.asarray(r, float)))


_SERIES = [1.0 / math.factorial(2 * k + 3) for k in range(6)]


def _ball_volumes(r: np.ndarray) -> np.ndarray:
    x = 2.0 * r
    # sinh x - x by its series for small x; the closed form cancels there
    series = sum(c * x ** (2 * k + 3) for k, c in reversed(list(enumerate(_SERIES))))
    return np.pi * np.where(x < 0.1, series, np.sinh(x) - x)


def equatorial_disc_area(r: float) -> float:
    """Area of a totally geodesic disc of radius r: ``2 pi (cosh r - 1)``."""
    if r < 0:
        raise GeometryError("radius must be non-negative")
    return float(4.0 * np.pi * np.sinh(0.5 * r) ** 2)


def sphere_area(r: float) -> float:
    if r < 0:
        raise GeometryError("radius must be non-negative")
    return float(4.0 * np.pi * np.sinh(r) ** 2)


def triangle_area(a, b, c) -> np.ndarray:
    """Area of geodesic triangles with vertices on the hyperboloid.

    Hyperbolic analogue of the Van Oosterom-Strackee formula,
    ``tan(A/2) = sqrt|det G| / (1 - <a,b> - <b,c> - <c,a>)`` with G the
    Gram matrix of (a, b, c).  The Gram determinant is assembled from edge
    differences to avoid cancellation for small triangles.
    """
    a = _coords(a)
    u = _coords(b) - a
    w = _coords(c) - a
    uu = minkowski(u, u)
    ww = minkowski(w, w)
    uw = minkowski(u, w)
    p = -0.5 * uu
    q = -0.5 * ww
    det = -(uu * ww - uw * uw) - p * p * ww + 2.0 * p * q * uw - q * q * uu
    denom = 1.0 + 3.0 + 0.5 * (uu + ww + minkowski(u - w, u - w))
    return 2.0 * np.arctan2(np.sqrt(np.abs(det)), denom)


def transvection(p) -> np.ndarray:
    """Matrix of the translation taking the origin to p along their geodesic."""
    x = _coords(p)
    v = x[1:]
    m = np.eye(4)
    m[0, 0] = x[0]
    m[0, 1:] = m[1:, 0] = v
    m[1:, 1:] += np.outer(v, v) / (1.0 + x[0])
    return m


@lru_cache(maxsize=32)
def _radial_cdf(r: float) -> tuple[np.ndarray, np.ndarray]:
    grid = np.linspace(0.0, r, 4097)
    cdf = _ball_volumes(grid)
    return grid, cdf / cdf[-1]


def ball_radius_quantile(u, r: float) -> np.ndarray:
    """Inverse of the radial volume distribution of B(0, r) at levels u in [0, 1]."""
    u = np.asarray(u, dtype=float)
    grid, cdf = _radial_cdf(float(r))
    # refine linear interpolation with two Newton steps on the exact volume
    rho = np.interp(u, cdf, grid)
    target = u * ball_volume(r)
    for _ in range(2):
        vol = np.pi * (np.sinh(2 * rho) - 2 * rho)
        dens = 4 * np.pi * np.sinh(rho) ** 2
        ok = dens > 1e-300
        rho = np.where(ok, rho - (vol - target) / np.where(ok, dens, 1.0), rho)
    return np.clip(rho, 0.0, r)


def sample_ball(center, r: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """n volume-uniform points of the hyperbolic ball B(center, r)."""
    rho = ball_radius_quantile(rng.uniform(size=n), r)
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    pts = np.column_stack([np.cosh(rho), np.sinh(rho)[:, None] * d])
    return normalize(pts @ transvection(center).T)


@dataclass(frozen=True, eq=False)
class Isometry:
    """Orientation-agnostic Lorentz transformation preserving the upper sheet."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.shape != (4, 4):
            raise PreconditionError("isometry must be a 4x4 matrix")
        scale = max(1.0, float(np.abs(m).max())) ** 2
        if np.abs(m.T @ ETA @ m - ETA).max() > 1e-9 * scale:
            raise PreconditionError("matrix does not preserve the Minkowski form")
        if m[0, 0] < 1.0 - 1e-9:
            raise PreconditionError("matrix swaps the sheets of the hyperboloid")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "Isometry":
        return cls(np.eye(4))

    @classmethod
    def boost(cls, direction: Sequence[float], dist: float) -> "Isometry":
        """Translation by ``dist`` along the geodesic through the origin."""
        u = np.asarray(direction, dtype=float)
        u = u / np.linalg.norm(u)
        m = np.eye(4)
        m[0, 0] = np.cosh(dist)
        m[0, 1:] = m[1:, 0] = np.sinh(dist) * u
        m[1:, 1:] += (np.cosh(dist) - 1.0) * np.outer(u, u)
        return cls(m)

    @classmethod
    def rotation(cls, axis: Sequence[float], angle: float) -> "Isometry":
        u = np.asarray(axis, dtype=float)
        u = u / np.linalg.norm(u)
        K = np.array([[0, -u[2], u[1]], [u[2], 0, -u[0]], [-u[1], u[0], 0]])
        m = np.eye(4)
        m[1:, 1:] = np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * K @ K
        return cls(m)

    def inverse(self) -> "Isometry":
        return Isometry(ETA @ self.matrix.T @ ETA)

    def apply(self, points) -> np.ndarray:
        x = _coords(points)
        return normalize(x @ self.matrix.T)

    def __call__(self, p):
        if isinstance(p, HPoint):
            return HPoint(self.apply(p.coords))
        return self.apply(p)

    def __matmul__(self, other):
        if isinstance(other, Isometry):
            return Isometry(lorentz_renormalize(self.matrix @ other.matrix))
        return self(other)

    def displacement(self, p=None) -> float:
        p = HPoint.origin() if p is None else p
        return float(_distance(_coords(p), self.apply(p)))


def lorentz_renormalize(m: np.ndarray) -> np.ndarray:
    """Gram-Schmidt the columns of ``m`` (or a stack of matrices) in the Minkowski form."""
    m = np.array(m, dtype=float)
    out = np.empty_like(m)
    col = m[..., :, 0]
    out[..., :, 0] = col / np.sqrt(-minkowski(col, col))[..., None]
    for j in range(1, 4):
        v = m[..., :, j].copy()
        for i in range(j):
            e = out[..., :, i]
            sign = -1.0 if i == 0 else 1.0
            v -= sign * minkowski(v, e)[..., None] * e
        out[..., :, j] = v / np.sqrt(minkowski(v, v))[..., None]
    return out


@dataclass(frozen=True, eq=False)
class GeodesicPlane:
    """Plane ``{x : <x, n> = 0}``; the kept half-space is ``<x, n> <= 0``."""

    normal: np.ndarray

    def __post_init__(self):
        n = np.array(self.normal, dtype=float)
        q = minkowski(n, n)
        if q <= 0:
            raise PreconditionError("plane normal must be spacelike")
        if abs(q - 1.0) > TAU_NORM:
            n = n / np.sqrt(q)
        n.setflags(write=False)
        object.__setattr__(self, "normal", n)

    def sinh_distance(self, points) -> np.ndarray:
        """Signed ``sinh`` of the distance to the plane (negative inside)."""
        return minkowski(_coords(points), self.normal)

    def contains(self, points, tol: float = TAU_GEOM) -> np.ndarray:
        return self.sinh_distance(points) <= tol

    def on_plane(self, points, tol: float = TAU_GEOM) -> np.ndarray:
        return np.abs(self.sinh_distance(points)) <= tol

    @classmethod
    def at_distance(cls, direction: Sequence[float], dist: float) -> "GeodesicPlane":
        """Plane orthogonal to ``direction`` at ``dist`` from the origin, origin inside."""
        u = np.asarray(direction, dtype=float)
        u = u / np.linalg.norm(u)
        return cls(np.concatenate([[np.sinh(dist)], np.cosh(dist) * u]))

    def transform(self, g: Isometry) -> "GeodesicPlane":
        return GeodesicPlane(g.matrix @ self.normal)


def bisector(p, q) -> GeodesicPlane:
    """Perpendicular bisector of [p, q]; its kept half-space contains p."""
    p = _coords(p)
    q = _coords(q)
    _check_normalized(p)
    _check_normalized(q)
    diff = q - p
    sq = minkowski(diff, diff)
    if sq <= (2 * np.sinh(TAU_GEOM / 2)) ** 2:
        raise DegeneratePairError("bisector of coincident points")
    return GeodesicPlane(diff / np.sqrt(sq))


def bisector_normals(p, Q) -> np.ndarray:
    """Unit normals of the bisectors between p and each row of Q (kept side holds p)."""
    p = _coords(p)
    diff = np.atleast_2d(_coords(Q)) - p
    sq = minkowski(diff, diff)
    if np.any(sq <= (2 * np.sinh(TAU_GEOM / 2)) ** 2):
        raise DegeneratePairError("bisector of coincident points")
    return diff / np.sqrt(sq)[:, None]


@dataclass(frozen=True, eq=False)
class ConvexPolyhedron:
    """Compact intersection of half-spaces with its face lattice.

    ``faces`` maps a row of ``normals`` to the cyclic vertex order of that
    facet; rows that do not support a facet are redundant constraints.
    """

    normals: np.ndarray
    vertices: np.ndarray
    vertex_planes: tuple[tuple[int, ...], ...]
    faces: dict[int, tuple[int, ...]]
    edges: tuple[tuple[int, int], ...]
    edge_faces: tuple[tuple[int, int], ...]

    @property
    def planes(self) -> tuple[GeodesicPlane, ...]:
        return tuple(GeodesicPlane(n) for n in self.normals)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def euler(self) -> int:
        return self.n_vertices - self.n_edges + self.n_faces

    @property
    def is_simple(self) -> bool:
        return all(len(p) == 3 for p in self.vertex_planes)

    def contains(self, points, tol: float = TAU_GEOM) -> np.ndarray:
        x = _coords(points)
        return np.all(x @ (self.normals * np.array([-1.0, 1.0, 1.0, 1.0])).T <= tol, axis=-1)

    def circumradius(self, center=None) -> float:
        center = HPoint.origin() if center is None else center
        return float(np.max(_distance(self.vertices, _coords(center))))


def intersect_halfspaces(planes, tol: float = TAU_GEOM) -> ConvexPolyhedron:
    """Intersect the kept half-spaces of ``planes``.

    Each constraint ``<x, n> <= 0`` is linear on the hyperboloid cone; after
    dehomogenising by ``x0`` it becomes an affine constraint in R^3, so the
    intersection is computed as a Euclidean polytope and lifted back.
    Raises EmptyIntersectionError or UnboundedIntersectionError (the latter
    when the cell reaches the sphere at infinity).
    """
    if isinstance(planes, np.ndarray):
        N = np.atleast_2d(np.asarray(planes, dtype=float))
    else:
        N = np.array([p.normal for p in planes]).reshape(-1, 4)
    if not len(N):
        raise UnboundedIntersectionError("no half-spaces given")
    A = N[:, 1:]
    b = N[:, 0]

    def residual(k):
        return from_klein_unchecked(k) @ (N * np.array([-1.0, 1.0, 1.0, 1.0])).T

    try:
        lat = halfspace_lattice(A, b, residual=residual, tol=tol, box=1.0)
    except UnboundedIntersectionError:
        # the chart polytope left the unit ball through the bounding box
        raise UnboundedIntersectionError(
            "half-space intersection reaches the ideal boundary"
        ) from None
    r2 = np.einsum("ij,ij->i", lat.vertices, lat.vertices)
    if np.any(r2 >= 1.0 - 1e-12):
        if np.dot(lat.interior, lat.interior) >= 1.0:
            raise EmptyIntersectionError("half-spaces do not meet inside H^3")
        raise UnboundedIntersectionError("half-space intersection reaches the ideal boundary")
    return _from_lattice(N, lat)


def from_klein_unchecked(k: np.ndarray) -> np.ndarray:
    r2 = np.einsum("...i,...i->...", k, k)
    x0 = 1.0 / np.sqrt(np.maximum(1.0 - r2, 1e-300))
    return np.concatenate([x0[..., None], k * x0[..., None]], axis=-1)


def _from_lattice(normals: np.ndarray, lat: PolytopeLattice) -> ConvexPolyhedron:
    normals = normals.copy()
    normals.setflags(write=False)
    return ConvexPolyhedron(
        normals=normals,
        vertices=from_klein(lat.vertices),
        vertex_planes=lat.vertex_planes,
        faces=lat.faces,
        edges=lat.edges,
        edge_faces=lat.edge_faces,
    )
