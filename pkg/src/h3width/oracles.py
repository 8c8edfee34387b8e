"""Independent checks: Monte Carlo volumes, a flat-torus analogue, normal pieces.

The flat torus speaks the same metric interface as the hyperbolic adapter,
so the whole combinatorial layer (sampling, Voronoi cells, surfaces) runs on
it unchanged while distances, volumes and cells are exact.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.spatial import ConvexHull
from scipy.stats import qmc

from . import hkernel as hk
from . import morse_field as mf
from . import sweep_surfaces as ss
from . import voronoi_complex as vc
from .polytope import halfspace_lattice

# ---------------------------------------------------------------------------
# Monte Carlo ball volume


@dataclass(frozen=True)
class MCEstimate:
    value: float
    sigma: float
    n: int

    def within(self, exact: float, k: float = 3.0) -> bool:
        return abs(self.value - exact) <= k * self.sigma


def mc_ball_volume(r: float, n: int = 1_000_000, seed: int = 0) -> MCEstimate:
    """Volume of a hyperbolic r-ball by rejection sampling on the hyperboloid.

    Points are drawn uniformly in the cube of spatial coordinates
    ``|y_i| <= sinh r``; the hyperboloid volume element is ``dy / x0`` so a
    point is kept with probability ``1 / x0`` when ``x0 <= cosh r``.
    """
    if r <= 0:
        raise ValueError("radius must be positive")
    rng = np.random.default_rng(seed)
    s = math.sinh(r)
    cube = (2 * s) ** 3
    hits = 0
    for start in range(0, n, 1 << 18):
        m = min(1 << 18, n - start)
        y = rng.uniform(-s, s, size=(m, 3))
        x0 = np.sqrt(1.0 + np.einsum("ij,ij->i", y, y))
        hits += int(np.sum((x0 <= math.cosh(r)) & (rng.random(m) * x0 < 1.0)))
    p = hits / n
    return MCEstimate(cube * p, cube * math.sqrt(max(p * (1 - p), 1.0 / n) / n), n)


# ---------------------------------------------------------------------------
# level-set area of the distance field, by direction counting


def fibonacci_directions(n: int) -> np.ndarray:
    k = np.arange(n) + 0.5
    z = 1 - 2 * k / n
    phi = k * math.pi * (3 - math.sqrt(5))
    s = np.sqrt(1 - z * z)
    return np.column_stack([s * np.cos(phi), s * np.sin(phi), z])


def sphere_area_in_domain(m, t: float, n: int = 200_000) -> float:
    """Area of {d(o, .) = t} on the quotient for a domain centred at o.

    In a Dirichlet domain every point is at least as close to o as to its
    translates, so the level set is the part of the t-sphere inside it.
    """
    d = fibonacci_directions(n)
    pts = np.column_stack([np.full(n, math.cosh(t)), math.sinh(t) * d])
    pts = pts @ hk.transvection(m.basepoint).T
    frac = float(np.mean(m.domain.contains(pts, tol=0.0)))
    return hk.sphere_area(t) * frac


# ---------------------------------------------------------------------------
# flat torus


@dataclass(frozen=True)
class FlatTube:
    """Periodic round tube about a line parallel to a coordinate axis."""

    axis: int
    point: tuple[float, float, float]
    radius: float


@dataclass(eq=False)
class FlatPolytope:
    A: np.ndarray
    b: np.ndarray
    vertices: np.ndarray
    vertex_planes: tuple
    faces: dict
    edges: tuple
    edge_faces: tuple

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

    @property
    def volume(self) -> float:
        return float(ConvexHull(self.vertices).volume)

    def contains(self, points, tol: float = 1e-9) -> np.ndarray:
        P = np.atleast_2d(points)
        return np.all(P @ self.A.T - self.b <= tol, axis=1)


def _polytope(A, b) -> FlatPolytope:
    lat = halfspace_lattice(A, b)
    return FlatPolytope(
        np.asarray(A, float), np.asarray(b, float), lat.vertices, lat.vertex_planes, lat.faces, lat.edges, lat.edge_faces
    )


class FlatTorusModel:
    """R^3 modulo the lattice L1 Z x L2 Z x L3 Z.

    Deck elements are integer triples; the fundamental domain is the box
    ``[0, L]`` with the basepoint at its center.
    """

    identity = (0, 0, 0)

    def __init__(self, lengths: Sequence[float] = (1.0, 1.0, 1.0), tubes: Sequence[FlatTube] = ()):
        self.L = np.asarray(lengths, float)
        if self.L.shape != (3,) or np.any(self.L <= 0):
            raise ValueError("three positive side lengths are required")
        self.tubes = tuple(tubes)
        self.volume = float(np.prod(self.L))
        self.domain_radius = float(np.linalg.norm(self.L) / 2)
        self.basepoint = self.L / 2

    def __repr__(self):
        return f"FlatTorusModel(lengths={tuple(self.L)}, tubes={len(self.tubes)})"

    # group ---------------------------------------------------------------
    def mul(self, a, b):
        return (a[0] + b[0], a[1] + b[1], a[2] + b[2])

    def inv(self, a):
        return (-a[0], -a[1], -a[2])

    def reduce(self, points):
        return np.mod(np.atleast_2d(np.asarray(points, float)), self.L)

    # sampling and lifts ----------------------------------------------------
    def probes(self, n: int, seed: int) -> np.ndarray:
        sob = qmc.Sobol(d=3, scramble=True, seed=seed)
        return sob.random_base2(max(0, math.ceil(math.log2(max(n, 1)))))[:n] * self.L

    def _offsets(self, p: np.ndarray, center: np.ndarray, reach: float) -> np.ndarray:
        lo = np.floor((center - reach - p) / self.L).astype(int)
        hi = np.ceil((center + reach - p) / self.L).astype(int)
        return np.array(list(itertools.product(*(range(a, b + 1) for a, b in zip(lo, hi)))), int)

    def lifts(self, points, reach):
        P = np.atleast_2d(points)
        src, keys, coords = [], [], []
        for i, p in enumerate(P):
            off = self._offsets(p, self.basepoint, reach)
            Q = p + off * self.L
            keep = np.linalg.norm(Q - self.basepoint, axis=1) <= reach + 1e-12
            src += [i] * int(keep.sum())
            keys += [tuple(int(x) for x in o) for o in off[keep]]
            coords.append(Q[keep])
        return np.asarray(src, int), keys, np.concatenate(coords)

    def kd(self, points):
        return np.atleast_2d(points)

    def kd_radius(self, r):
        return r * (1 + 1e-9) + 1e-12

    def dist_rows(self, P, Q):
        return np.linalg.norm(np.asarray(P) - np.asarray(Q), axis=-1)

    def inj(self, points):
        return np.full(len(np.atleast_2d(points)), float(self.L.min() / 2))

    # cells -----------------------------------------------------------------
    def cell(self, center, others):
        Q = np.atleast_2d(others)
        A = Q - center
        b = 0.5 * (np.einsum("ij,ij->i", Q, Q) - center @ center)
        return _polytope(A, b)

    def cell_contains(self, poly, points, tol=1e-9):
        return poly.contains(points, tol=tol)

    def toward(self, p, q, s):
        d = q - p
        n = np.linalg.norm(d)
        return p.copy() if n == 0 else p + s * d / n

    def perturb(self, points, scale, rng):
        d = rng.normal(size=np.shape(points))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return self.reduce(points + scale * d)

    def ball_volume(self, r):
        return 4.0 / 3.0 * math.pi * r**3

    def sample_ball(self, center, r, n, rng):
        d = rng.normal(size=(n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return center + (r * rng.random(n) ** (1 / 3))[:, None] * d

    # fields and meshes -------------------------------------------------------
    @cached_property
    def domain(self) -> FlatPolytope:
        A = np.vstack([np.eye(3), -np.eye(3)])
        b = np.concatenate([self.L, np.zeros(3)])
        return _polytope(A, b)

    def combine(self, weighted):
        return np.asarray(weighted, float)

    def interpolate(self, P, Q, s):
        return (1.0 - s)[..., None] * P + s[..., None] * Q

    def triangle_area(self, a, b, c):
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=-1)

    def quotient_distance(self, P, q) -> np.ndarray:
        """Exact: the minimum over the 27 neighbouring lattice offsets."""
        D = np.mod(np.atleast_2d(P) - q + self.L / 2, self.L) - self.L / 2
        off = np.array(list(itertools.product((-1, 0, 1), repeat=3))) * self.L
        return np.min(np.linalg.norm(D[:, None, :] + off[None], axis=2), axis=1)

    def near_lifts(self, p, anchor, radius):
        off = self._offsets(np.asarray(p, float), np.asarray(anchor, float), radius)
        Q = p + off * self.L
        return Q[np.linalg.norm(Q - anchor, axis=1) <= radius]

    def ball_points(self, center, r, u):
        rad = r * u[:, 0] ** (1 / 3)
        z = 2.0 * u[:, 1] - 1.0
        phi = 2.0 * math.pi * u[:, 2]
        s = np.sqrt(np.maximum(1.0 - z * z, 0.0))
        return center + rad[:, None] * np.column_stack([s * np.cos(phi), s * np.sin(phi), z])

    def point_reflect(self, center, points):
        return 2 * np.asarray(center) - np.atleast_2d(points)

    def offset_point(self, center, direction, s):
        d = np.asarray(direction, float)
        return np.asarray(center, float) + s * d / np.linalg.norm(d)

    def axis_height(self, Y, axis: int) -> np.ndarray:
        """Periodic height along one lattice axis, lowest on the plane x_axis = 0."""
        return -np.cos(2 * math.pi * np.atleast_2d(Y)[:, axis] / self.L[axis])

    def axis_lipschitz(self, axis: int) -> float:
        return 2 * math.pi / float(self.L[axis])

    def tube_of(self, points) -> np.ndarray:
        P = np.atleast_2d(points)
        out = np.full(len(P), -1, int)
        for k, tb in enumerate(self.tubes):
            other = [i for i in range(3) if i != tb.axis]
            D = P[:, other] - np.asarray(tb.point)[other]
            D = np.mod(D + self.L[other] / 2, self.L[other]) - self.L[other] / 2
            inside = np.linalg.norm(D, axis=1) < tb.radius
            out[(out < 0) & inside] = k
        return out


def bcc_centers(counts: Sequence[int], spacing: float = 1.0, shift=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Body-centred cubic points: the cube lattice plus its body centres."""
    pts = []
    for idx in itertools.product(*(range(n) for n in counts)):
        a = np.asarray(idx, float) * spacing
        pts.append(a)
    for idx in itertools.product(*(range(n) for n in counts)):
        pts.append((np.asarray(idx, float) + 0.5) * spacing)
    return np.asarray(pts) + np.asarray(shift)


def flat_complex(torus: FlatTorusModel, centers: np.ndarray, epsilon: float, seed: int = 0) -> vc.VoronoiComplex:
    """Voronoi complex of given centers on the flat torus."""
    s = vc.SampleSet(torus.reduce(centers), float(epsilon), int(seed))
    return vc.build_voronoi(torus, s, max_retries=0)


# ---------------------------------------------------------------------------
# flat pipeline


@dataclass
class FlatReport:
    n_cells: int
    volume_exact: float
    volume_cells: float
    volume_mc: float
    volume_mc_sigma: float
    order: tuple
    genus: tuple
    components: tuple
    chi: tuple
    checks: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def flat_pipeline_check(
    L: Sequence[float] = (1.0, 1.0, 1.0),
    epsilon: float = 0.6,
    field: str = "axis_sweep",
    seed: int = 0,
    *,
    centers: np.ndarray | None = None,
    axis: int = 2,
    n_split: int = 4096,
    expected_genus: Sequence[int] | None = None,
) -> FlatReport:
    """Sampling, Voronoi, splitters and surfaces on a flat torus, with exact checks."""
    torus = FlatTorusModel(L)
    if centers is None:
        v = vc.build_voronoi(torus, vc.sample_maximal(torus, epsilon, seed), max_retries=0)
    else:
        v = flat_complex(torus, centers, epsilon, seed)
    exact = sum(c.poly.volume for c in v.cells)
    mc = vc.cell_volumes(v, n=20_000, seed=seed)
    # binomial error of each cell estimate, combined
    p = np.clip(mc / torus.ball_volume(epsilon * (1 + 1e-6)), 0, 1)
    sigma = float(np.sqrt(np.sum(p * (1 - p) / 20_000)) * torus.ball_volume(epsilon))
    if field == "axis_sweep":
        f = mf.axis_sweep(torus, axis)
    elif field == "distance_to_point":
        f = mf.distance_to_point(torus, torus.basepoint)
    else:
        raise ValueError(f"unsupported field {field!r}")
    splitters = mf.all_splitters(f, v, n_split, seed)
    order = mf.order_cells(splitters)
    sched = ss.nested_schedule(order.values) if not order.ties else None
    if sched is None:
        raise ss.NonGenericLevelError("flat run produced tied splitters")
    genus, comps, chis = [], [], []
    for u in sched.points:
        s = ss.extract_surface(v, None, ss.build_region(order, u))
        st = ss.surface_stats(s)
        genus.append(st.genus)
        comps.append(st.components)
        chis.append(st.chi)
    checks = {
        "regular": bool(v.checks["euler_zero"] and v.checks["edges_in_three_faces"]),
        "volumes_exact": abs(exact - torus.volume) <= 1e-9 * torus.volume,
        "volumes_mc": abs(mc.sum() - torus.volume) <= 4 * sigma + 1e-12,
        "chi_even": all(c % 2 == 0 for c in chis),
        "ends_empty": genus[0] == 0 and genus[-1] == 0 and comps[0] == 0 and comps[-1] == 0,
    }
    if expected_genus is not None:
        checks["genus_matches"] = tuple(genus) == tuple(expected_genus)
    return FlatReport(
        n_cells=v.n_cells,
        volume_exact=float(exact),
        volume_cells=float(exact),
        volume_mc=float(mc.sum()),
        volume_mc_sigma=sigma,
        order=order.order,
        genus=tuple(genus),
        components=tuple(comps),
        chi=tuple(chis),
        checks=checks,
    )


# ---------------------------------------------------------------------------
# normal pieces, exhaustively

_FACES = ((1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2))  # face opposite vertex k


def _arcs_on_face(marking, face) -> frozenset:
    """Edges of ``face`` crossed by the normal piece of ``marking``."""
    _, crossed = ss.normal_piece(marking)
    return frozenset(e for e in crossed if e[0] in face and e[1] in face)


@dataclass(frozen=True)
class NormalCheck:
    markings: int
    gluings: int
    failures: tuple

    @property
    def passed(self) -> bool:
        return not self.failures


def exhaustive_normal_check() -> NormalCheck:
    """All 16 markings of a tetrahedron and every face gluing of two of them.

    Checks the piece type for each marked-vertex count, that each piece's
    crossed edges form one closed normal curve, and that two tetrahedra glued
    along a face induce the same arc on it whenever their markings agree.
    """
    failures = []
    expected = {0: "empty", 1: "triangle", 2: "quad", 3: "triangle", 4: "empty"}
    markings = list(itertools.product((0, 1), repeat=4))
    for mk in markings:
        kind, crossed = ss.normal_piece(mk)
        if ss.PIECE_NAMES[kind] != expected[sum(mk)]:
            failures.append(("type", mk))
        arcs = [_arcs_on_face(mk, f) for f in _FACES]
        if any(len(a) not in (0, 2) for a in arcs):
            failures.append(("arc", mk))
        # each crossed edge lies in two faces, so a closed curve uses it twice
        if sum(len(a) for a in arcs) != 2 * len(crossed):
            failures.append(("curve", mk))
        if len(crossed) not in (0, 3, 4):
            failures.append(("size", mk))
        if sum(mk) in (1, 3):
            lone = [i for i in range(4) if mk[i] != (sum(mk) == 3)][0]
            if set(crossed) != {tuple(sorted((lone, j))) for j in range(4) if j != lone}:
                failures.append(("corner", mk))
    gluings = 0
    for ma, mb in itertools.product(markings, repeat=2):
        for fa, fb in itertools.product(_FACES, repeat=2):
            for perm in itertools.permutations(fb):
                # vertex fa[i] of the first tetrahedron is glued to perm[i]
                if any(ma[x] != mb[y] for x, y in zip(fa, perm)):
                    continue
                gluings += 1
                image = {x: y for x, y in zip(fa, perm)}
                arcs_a = {tuple(sorted((image[a], image[b]))) for a, b in _arcs_on_face(ma, fa)}
                if arcs_a != set(_arcs_on_face(mb, fb)):
                    failures.append(("glue", ma, mb, fa, perm))
    return NormalCheck(len(markings), gluings, tuple(failures))
