"""Epsilon-regular Voronoi decompositions of a closed 3-manifold and their duals.

The construction only talks to the manifold through a small metric
interface (:class:`HyperbolicSpace` here, ``FlatTorusModel`` in the oracles),
so the combinatorial layer is shared between the hyperbolic pipeline and its
Euclidean validation analogue.

Cells are computed in the universal cover around the representative of each
center that lies in the fundamental domain.  Every face, edge and vertex is
identified in the quotient by the set of ``(center id, deck element)`` pairs
of the cells meeting there, normalised under left translation.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Hashable, Protocol, Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import qmc

from . import hkernel as hk
from .hkernel import TAU_GEOM, GeometryError, ball_volume, equatorial_disc_area
from .polytope import HalfspaceIntersectionError
from .quotient_manifold import (
    ManifoldModel,
    SearchRadiusExhausted,
    injectivity_radius,
    tube_membership,
)


class DegeneracyError(GeometryError):
    """Regularity could not be reached by perturbing the centers."""


class NonRegularComplexError(GeometryError):
    pass


# ---------------------------------------------------------------------------
# metric interface


class MetricSpace(Protocol):
    identity: Hashable
    volume: float
    domain_radius: float

    def mul(self, a, b): ...
    def inv(self, a): ...
    def reduce(self, points: np.ndarray) -> np.ndarray: ...
    def probes(self, n: int, seed: int) -> np.ndarray: ...
    def lifts(self, points: np.ndarray, reach: float) -> tuple[np.ndarray, list, np.ndarray]: ...
    def kd(self, points: np.ndarray) -> np.ndarray: ...
    def kd_radius(self, r: float) -> float: ...
    def dist_rows(self, P: np.ndarray, Q: np.ndarray) -> np.ndarray: ...
    def inj(self, points: np.ndarray) -> np.ndarray: ...
    def cell(self, center: np.ndarray, others: np.ndarray): ...
    def toward(self, p: np.ndarray, q: np.ndarray, s: float) -> np.ndarray: ...
    def perturb(self, points: np.ndarray, scale: float, rng) -> np.ndarray: ...
    def ball_volume(self, r: float) -> float: ...
    def sample_ball(self, center: np.ndarray, r: float, n: int, rng) -> np.ndarray: ...


class HyperbolicSpace:
    """Adapter exposing a :class:`ManifoldModel` through the metric interface."""

    identity = 0

    def __init__(self, model: ManifoldModel):
        self.model = model
        self.volume = float(model.volume) if model.volume is not None else float("nan")
        self.domain_radius = model.domain_radius

    def mul(self, a, b):
        return a if b == 0 else (b if a == 0 else self.model.multiply(a, b))

    def inv(self, a):
        return 0 if a == 0 else self.model.inverse(a)

    def reduce(self, points):
        return self.model.reduce(points)[0]

    def probes(self, n: int, seed: int) -> np.ndarray:
        """Quasi-random, volume-uniform points of the fundamental domain."""
        poly = self.model.domain
        kv = poly.vertices[:, 1:] / poly.vertices[:, :1]
        lo, hi = kv.min(axis=0), kv.max(axis=0)
        r2max = float(np.max(np.einsum("ij,ij->i", kv, kv)))
        dmax = (1.0 - r2max) ** -2
        sob = qmc.Sobol(d=4, scramble=True, seed=seed)
        out, have = [], 0
        while have < n:
            u = sob.random(1 << max(10, int(np.ceil(np.log2(2 * (n - have) + 1)))))
            k = lo + u[:, :3] * (hi - lo)
            r2 = np.einsum("ij,ij->i", k, k)
            ok = (r2 < r2max) & (u[:, 3] * dmax <= (1.0 - np.minimum(r2, r2max)) ** -2)
            x = hk.from_klein(k[ok])
            x = x[poly.contains(x, tol=0.0)]
            out.append(x)
            have += len(x)
        return np.concatenate(out)[:n]

    def lifts(self, points, reach):
        """Translates g p lying within ``reach`` of the basepoint."""
        m = self.model
        P = np.atleast_2d(points)
        src, keys, coords = [], [], []
        limit = np.searchsorted(m.displacement, reach + self.domain_radius + 1e-9, side="right")
        ball = m.group_ball[:limit]
        o = m.basepoint * np.array([-1.0, 1.0, 1.0, 1.0])
        for i, p in enumerate(P):
            L = hk.normalize(ball @ p)
            keep = np.flatnonzero(np.arccosh(np.maximum(-(L @ o), 1.0)) <= reach + 1e-12)
            src.extend([i] * len(keep))
            keys.extend(int(g) for g in keep)
            coords.append(L[keep])
        return np.asarray(src, int), keys, np.concatenate(coords)

    def kd(self, points):
        # Poincare ball coordinates: Euclidean distance is at most half the hyperbolic one
        P = np.atleast_2d(points)
        return P[:, 1:] / (1.0 + P[:, :1])

    def kd_radius(self, r):
        return 0.5 * r * (1 + 1e-9) + 1e-12

    def dist_rows(self, P, Q):
        return hk._distance(P, Q)

    def inj(self, points):
        return np.atleast_1d(injectivity_radius(self.model, points))

    def cell(self, center, others):
        return hk.intersect_halfspaces(hk.bisector_normals(center, others))

    def toward(self, p, q, s):
        d = float(hk._distance(p, q))
        if d <= 0:
            return p.copy()
        a = np.sinh(d - s) / np.sinh(d)
        b = np.sinh(s) / np.sinh(d)
        return hk.normalize(a * p + b * q)

    def perturb(self, points, scale, rng):
        out = []
        for p in points:
            d = rng.normal(size=3)
            step = np.linalg.norm(d)
            off = np.concatenate([[np.cosh(scale)], np.sinh(scale) * d / step])
            out.append(hk.transvection(p) @ off)
        return self.reduce(hk.normalize(np.array(out)))

    def ball_volume(self, r):
        return ball_volume(r)

    def sample_ball(self, center, r, n, rng):
        return hk.sample_ball(center, r, n, rng)

    def ball_points(self, center, r, u):
        """Map unit-cube points to volume-uniform points of B(center, r)."""
        rad = hk.ball_radius_quantile(u[:, 0], r)
        z = 2.0 * u[:, 1] - 1.0
        phi = 2.0 * np.pi * u[:, 2]
        s = np.sqrt(np.maximum(1.0 - z * z, 0.0))
        d = np.column_stack([s * np.cos(phi), s * np.sin(phi), z])
        local = np.column_stack([np.cosh(rad), np.sinh(rad)[:, None] * d])
        return hk.normalize(local @ hk.transvection(center).T)

    def point_reflect(self, center, points):
        T = hk.transvection(center)
        R = T @ np.diag([1.0, -1.0, -1.0, -1.0]) @ np.linalg.inv(T)
        return hk.normalize(np.atleast_2d(points) @ R.T)

    def offset_point(self, center, direction, s):
        d = np.asarray(direction, float)
        d = d / np.linalg.norm(d)
        local = np.concatenate([[np.cosh(s)], np.sinh(s) * d])
        return hk.normalize(hk.transvection(center) @ local)

    def cell_contains(self, poly, points, tol=TAU_GEOM):
        return poly.contains(points, tol=tol)

    # -- fields and meshes -------------------------------------------------

    @property
    def basepoint(self) -> np.ndarray:
        return self.model.basepoint

    @property
    def domain(self):
        return self.model.domain

    def combine(self, weighted: np.ndarray) -> np.ndarray:
        """Point with the given (unnormalised) linear combination of vertices."""
        return hk.normalize(weighted)

    def interpolate(self, P, Q, s):
        return hk.normalize((1.0 - s)[..., None] * P + s[..., None] * Q)

    def triangle_area(self, a, b, c):
        return hk.triangle_area(a, b, c)

    def quotient_distance(self, P, q) -> np.ndarray:
        return self.model.nearest_translate(P, q)[0]

    def near_lifts(self, p, anchor, radius: float) -> np.ndarray:
        """All translates g p with d(anchor, g p) <= radius (certified)."""
        m = self.model
        p = np.asarray(p, float)
        rho_a = float(hk._distance(anchor, m.basepoint))
        rho_p = float(hk._distance(p, m.basepoint))
        if rho_a + radius + rho_p > m.R_search + 1e-12:
            raise SearchRadiusExhausted(
                f"lift search needs radius {rho_a + radius + rho_p:.4f} > {m.R_search:.4f}"
            )
        stop = np.searchsorted(m.displacement, rho_a + radius + rho_p + 1e-9, side="right")
        L = hk.normalize(m.group_ball[:stop] @ p)
        return L[hk._distance(L, anchor[None, :]) <= radius]

    def near_segments(self, a, b, anchor, radius: float):
        """Translates of the geodesic segment [a, b] within ``radius`` of anchor."""
        m = self.model
        rho_a = float(hk._distance(anchor, m.basepoint))
        reach = max(float(hk._distance(a, m.basepoint)), float(hk._distance(b, m.basepoint)))
        # every point of the segment lies within ``reach`` of the basepoint
        need = rho_a + radius + reach
        if need > m.R_search + 1e-12:
            raise SearchRadiusExhausted(f"segment search needs radius {need:.4f} > {m.R_search:.4f}")
        stop = np.searchsorted(m.displacement, need + 1e-9, side="right")
        A = hk.normalize(m.group_ball[:stop] @ a)
        B = hk.normalize(m.group_ball[:stop] @ b)
        d = segment_distance(anchor[None, :], A, B)[0]
        keep = d <= radius
        return A[keep], B[keep]

    def tube_of(self, points) -> np.ndarray:
        if not self.model.thin.tubes:
            return np.full(len(np.atleast_2d(points)), -1, dtype=int)
        return tube_membership(self.model, points)


def segment_distance(Y: np.ndarray, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Distances from each row of Y to each geodesic segment [A_k, B_k], shape (n, k)."""
    sig = np.array([-1.0, 1.0, 1.0, 1.0])
    ab = np.einsum("ki,ki->k", A * sig, B)  # <a, b> = -cosh(len)
    ya = Y @ (A * sig).T
    yb = Y @ (B * sig).T
    # coefficients of the Minkowski projection onto span(a, b)
    det = 1.0 - ab * ab
    det = np.where(np.abs(det) < 1e-300, -1e-300, det)
    ca = (-ya - ab * yb) / det
    cb = (-yb - ab * ya) / det
    q = ca * ca + cb * cb - 2.0 * ab * ca * cb
    inside = (ca >= 0) & (cb >= 0)
    d_line = np.arccosh(np.sqrt(np.maximum(q, 1.0)))
    d_end = np.arccosh(np.maximum(np.minimum(-ya, -yb), 1.0))
    return np.where(inside, d_line, d_end)


def as_space(m) -> MetricSpace:
    if isinstance(m, ManifoldModel):
        # one adapter per model so that caches keyed on the space are shared
        return m.__dict__.setdefault("_space", HyperbolicSpace(m))
    return m


# ---------------------------------------------------------------------------
# samples


@dataclass(frozen=True, eq=False)
class SampleSet:
    centers: np.ndarray
    epsilon: float
    seed: int
    n_probes: int = 0
    refinements: int = 0

    def __len__(self):
        return len(self.centers)


def _greedy(space: MetricSpace, probes: np.ndarray, eps: float, reach: float) -> list[int]:
    """Sequential greedy epsilon-net over the probes, batched through a KD-tree."""
    r_kd = space.kd_radius(eps)
    accepted: list[int] = []
    lift_pts = np.empty((0, probes.shape[1]))
    block = 256
    for s in range(0, len(probes), block):
        cand = np.arange(s, min(s + block, len(probes)))
        if len(lift_pts):
            tree = cKDTree(space.kd(lift_pts))
            near = tree.query_ball_point(space.kd(probes[cand]), r_kd)
            counts = np.fromiter((len(nb) for nb in near), int, len(near))
            if counts.sum():
                rows = np.repeat(np.arange(len(cand)), counts)
                cols = np.fromiter((k for nb in near for k in nb), int, counts.sum())
                close = space.dist_rows(lift_pts[cols], probes[cand[rows]]) < eps
                covered = np.zeros(len(cand), bool)
                covered[rows[close]] = True
                cand = cand[~covered]
        fresh_pts = []
        new_lifts: list[np.ndarray] = []
        for c in cand:
            p = probes[c]
            if new_lifts:
                L = np.concatenate(new_lifts)
                if np.any(space.dist_rows(L, p[None, :]) < eps):
                    continue
            accepted.append(int(c))
            _, _, L = space.lifts(p[None, :], reach)
            new_lifts.append(L)
            fresh_pts.append(L)
        if fresh_pts:
            lift_pts = np.concatenate([lift_pts] + fresh_pts)
    return accepted


def _probe_count(space: MetricSpace, eps: float, max_probes: int) -> int:
    n = space.volume / (eps / 4.0) ** 3
    return int(min(max_probes, max(64, math.ceil(n))))


def sample_maximal(
    m, epsilon: float, seed: int, *, max_probes: int = 150_000, refine: bool = True
) -> SampleSet:
    """Maximal epsilon-separated centers.

    Greedy selection over a shuffled quasi-random probe set makes every probe
    lie within epsilon of a center.  With ``refine`` the net is then made
    maximal outright: while some cell vertex lies at distance >= epsilon from
    its center, the point at distance epsilon toward it is added.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    space = as_space(m)
    n = _probe_count(space, epsilon, max_probes)
    probes = space.probes(n, seed)
    rng = np.random.default_rng(seed)
    probes = probes[rng.permutation(len(probes))]
    reach = space.domain_radius + epsilon
    chosen = _greedy(space, probes, epsilon, reach)
    centers = probes[chosen]
    rounds = 0
    dirty = np.arange(len(centers))
    while refine and len(dirty):
        extra = _far_points(space, centers, epsilon, dirty)
        if not len(extra):
            break
        # the additions may be close to each other: keep a separated subset
        extra = extra[_greedy(space, extra, epsilon, reach)]
        n_old = len(centers)
        centers = np.concatenate([centers, extra])
        # only cells within 2 eps of an addition can have changed
        _, _, lifted = space.lifts(extra, reach + 2 * epsilon)
        hit = cKDTree(space.kd(lifted)).query_ball_point(space.kd(centers[:n_old]), space.kd_radius(2 * epsilon))
        near = [
            i
            for i, h in enumerate(hit)
            if h and np.any(space.dist_rows(lifted[h], centers[i][None, :]) <= 2 * epsilon)
        ]
        dirty = np.concatenate([np.asarray(near, int), np.arange(n_old, len(centers))])
        rounds += 1
    return SampleSet(centers=centers, epsilon=float(epsilon), seed=int(seed), n_probes=n, refinements=rounds)


def _neighbor_table(space: MetricSpace, centers: np.ndarray, radius: float, which=None):
    """For each center (or each listed one): lifted centers within ``radius``."""
    which = np.arange(len(centers)) if which is None else np.asarray(which, int)
    reach = space.domain_radius + radius
    src, keys, coords = space.lifts(centers, reach)
    tree = cKDTree(space.kd(coords))
    hits = tree.query_ball_point(space.kd(centers[which]), space.kd_radius(radius)) if len(which) else []
    out = []
    for i, nb in zip(which, hits):
        nb = np.asarray(sorted(nb), int)
        if len(nb):
            d = space.dist_rows(coords[nb], centers[i][None, :])
            nb = nb[(d <= radius) & ~((src[nb] == i) & np.array([keys[k] == space.identity for k in nb]))]
        out.append([(int(src[k]), keys[k], coords[k]) for k in nb])
    return out


def _far_points(space: MetricSpace, centers: np.ndarray, eps: float, which) -> np.ndarray:
    table = _neighbor_table(space, centers, 2 * eps, which)
    extra = []
    for i, nbrs in zip(which, table):
        if not nbrs:
            continue
        poly = space.cell(centers[i], np.array([c for _, _, c in nbrs]))
        d = space.dist_rows(poly.vertices, np.broadcast_to(centers[i], poly.vertices.shape))
        k = int(np.argmax(d))
        if d[k] >= eps * (1 + 1e-9):
            extra.append(space.toward(centers[i], poly.vertices[k], eps * (1 + 1e-9)))
    if not extra:
        return np.empty((0, centers.shape[1]))
    return space.reduce(np.array(extra))


# ---------------------------------------------------------------------------
# constants


@dataclass(frozen=True)
class DerivedConstants:
    epsilon: float
    J1: int
    J: int
    L: int
    A: float
    K: float
    G: int

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("epsilon", "J1", "J", "L", "A", "K", "G")}


def derive_constants(epsilon: float) -> DerivedConstants:
    """Volume-ratio combinatorial constants of an epsilon-regular decomposition.

    ``L`` counts centers in a ``3 eps`` ball: their ``eps/2`` balls are
    disjoint and lie in the ``7 eps / 2`` ball.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    small = ball_volume(epsilon / 2)
    J1 = math.ceil(ball_volume(5 * epsilon / 2) / small)
    L = math.ceil(ball_volume(7 * epsilon / 2) / small)
    A = equatorial_disc_area(epsilon / 2)
    J = J1 * J1 + 2
    return DerivedConstants(epsilon=float(epsilon), J1=J1, J=J, L=L, A=A, K=L / A, G=3 * J)


# ---------------------------------------------------------------------------
# the complex


@dataclass(eq=False)
class Cell:
    id: int
    center: np.ndarray
    poly: Any
    neighbors: list  # per plane index: (center id, deck element, lifted center)
    face_of_plane: dict  # plane index -> global face id
    deep: bool
    inj: float


@dataclass(eq=False)
class VoronoiComplex:
    """Cells, global faces/edges/vertices with incidences, deep flags.

    Faces, edges and vertices are numbered by sorted canonical key.  For each
    face ``face_cells[f]`` gives the two center ids meeting there (they may
    coincide when a cell touches its own translate); likewise
    ``edge_cells`` (3 ids) and ``vertex_cells`` (4 ids).
    """

    space: Any
    samples: SampleSet
    cells: list[Cell]
    face_keys: list
    face_cells: np.ndarray
    face_edges: list[tuple[int, ...]]
    face_length: np.ndarray
    edge_keys: list
    edge_cells: np.ndarray
    edge_faces: list[tuple[int, ...]]
    edge_vertices: list[tuple[int, ...]]
    vertex_keys: list
    vertex_cells: np.ndarray
    deep: np.ndarray
    constants: DerivedConstants
    perturbations: int = 0
    checks: dict = field(default_factory=dict)

    @property
    def epsilon(self) -> float:
        return self.samples.epsilon

    @property
    def centers(self) -> np.ndarray:
        return self.samples.centers

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_faces(self) -> int:
        return len(self.face_keys)

    @property
    def n_edges(self) -> int:
        return len(self.edge_keys)

    @property
    def n_vertices(self) -> int:
        return len(self.vertex_keys)

    @property
    def euler(self) -> int:
        """V - E + F - C; zero for a closed 3-manifold."""
        return self.n_vertices - self.n_edges + self.n_faces - self.n_cells

    @cached_property
    def cell_faces(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in self.cells]
        for f, (a, b) in enumerate(self.face_cells):
            out[a].append(f)
            if b != a:
                out[b].append(f)
        return out

    def to_json(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "constants": self.constants.to_dict(),
            "perturbations": self.perturbations,
            "counts": {
                "cells": self.n_cells,
                "faces": self.n_faces,
                "edges": self.n_edges,
                "vertices": self.n_vertices,
            },
            "cells": [
                {
                    "id": c.id,
                    "deep": bool(c.deep),
                    "inj": round(float(c.inj), 12),
                    "faces": sorted(set(c.face_of_plane.values())),
                    "adjacency": [
                        {"face": f, "cell": int(c.neighbors[p][0]), "deck": _json_key(c.neighbors[p][1])}
                        for p, f in sorted(c.face_of_plane.items())
                    ],
                }
                for c in self.cells
            ],
            "checks": self.checks,
        }

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1, sort_keys=True)


def _json_key(g):
    return list(g) if isinstance(g, tuple) else g


class _Canon:
    """Canonical form of a set of (center, deck) pairs under left translation."""

    def __init__(self, space: MetricSpace):
        self.space = space

    def __call__(self, members) -> tuple:
        low = min(c for c, _ in members)
        best = None
        for c, g in members:
            if c != low:
                continue
            h = self.space.inv(g)
            cand = tuple(sorted((cc, self.space.mul(h, gg)) for cc, gg in members))
            if best is None or cand < best:
                best = cand
        return best


def _build_once(space: MetricSpace, centers: np.ndarray, eps: float):
    table = _neighbor_table(space, centers, 2 * eps * (1 + 1e-9))
    canon = _Canon(space)
    ident = space.identity
    cells = []
    face_seen: dict = {}
    edge_seen: dict = {}
    vert_seen: dict = {}
    problems = []
    for i, nbrs in enumerate(table):
        if not nbrs:
            raise DegeneracyError(f"center {i} has no neighbours within 2 epsilon")
        others = np.array([c for _, _, c in nbrs])
        try:
            poly = space.cell(centers[i], others)
        except HalfspaceIntersectionError as exc:
            raise DegeneracyError(f"cell {i}: {exc}") from exc
        if not poly.is_simple:
            problems.append(f"cell {i} has a vertex on more than three faces")
            continue
        me = (i, ident)
        member = {p: (nbrs[p][0], nbrs[p][1]) for p in poly.faces}
        face_of_plane = {}
        for p in poly.faces:
            key = canon((me, member[p]))
            face_of_plane[p] = key
            face_seen.setdefault(key, []).append((i, p))
        vkeys = []
        for v, planes in enumerate(poly.vertex_planes):
            key = canon((me,) + tuple(member[p] for p in planes))
            vkeys.append(key)
            vert_seen.setdefault(key, []).append(i)
        for (a, b), (p, q) in zip(poly.edges, poly.edge_faces):
            key = canon((me, member[p], member[q]))
            edge_seen.setdefault(key, []).append((i, p, q, vkeys[a], vkeys[b]))
        cells.append((i, poly, nbrs, face_of_plane))
    for key, occ in face_seen.items():
        if len(occ) != 2:
            problems.append(f"face {key} seen {len(occ)} times")
    for key, occ in edge_seen.items():
        if len(occ) != 3:
            problems.append(f"edge {key} seen {len(occ)} times")
    for key, occ in vert_seen.items():
        if len(occ) != 4:
            problems.append(f"vertex {key} seen {len(occ)} times")
    return cells, face_seen, edge_seen, vert_seen, problems


def build_voronoi(
    m, s: SampleSet, *, max_retries: int = 8, seed: int | None = None, check_maximal: bool = True
) -> VoronoiComplex:
    """Voronoi decomposition of the quotient determined by the sample set.

    Cells are bisector intersections against every lifted center within
    ``2 eps``.  When the result is not regular the centers are moved by
    ``10 tau_geom`` and the construction is repeated.
    """
    space = as_space(m)
    eps = s.epsilon
    centers = np.array(s.centers, dtype=float)
    rng = np.random.default_rng(s.seed if seed is None else seed)
    attempt = 0
    while True:
        built = _build_once(space, centers, eps)
        if not built[-1]:
            break
        attempt += 1
        if attempt > max_retries:
            raise DegeneracyError(
                f"regularity not reached after {max_retries} perturbations: {built[-1][:3]}"
            )
        centers = space.perturb(centers, 10 * TAU_GEOM, rng)
    cells_raw, face_seen, edge_seen, vert_seen, _ = built
    samples = s if attempt == 0 else SampleSet(centers, eps, s.seed, s.n_probes, s.refinements)

    face_keys = sorted(face_seen)
    fid = {k: n for n, k in enumerate(face_keys)}
    edge_keys = sorted(edge_seen)
    eid = {k: n for n, k in enumerate(edge_keys)}
    vert_keys = sorted(vert_seen)
    vid = {k: n for n, k in enumerate(vert_keys)}

    face_cells = np.array([[c for c, _ in k] for k in face_keys], int).reshape(-1, 2)
    edge_cells = np.array([[c for c, _ in k] for k in edge_keys], int).reshape(-1, 3)
    vertex_cells = np.array([[c for c, _ in k] for k in vert_keys], int).reshape(-1, 4)

    face_edges: list[set] = [set() for _ in face_keys]
    edge_faces: list[set] = [set() for _ in edge_keys]
    edge_vertices: list[tuple[int, ...]] = [()] * len(edge_keys)
    face_length = np.zeros(len(face_keys))
    cells = []
    inj = space.inj(centers)
    deep = inj >= 4 * eps
    for i, poly, nbrs, fop in cells_raw:
        fop_id = {p: fid[k] for p, k in fop.items()}
        for p, f in fop_id.items():
            face_length[f] = float(space.dist_rows(nbrs[p][2][None, :], centers[i][None, :])[0])
        cells.append(Cell(i, centers[i], poly, nbrs, fop_id, bool(deep[i]), float(inj[i])))
    for key, occ in edge_seen.items():
        e = eid[key]
        i, p, q, va, vb = occ[0]
        edge_vertices[e] = tuple(sorted((vid[va], vid[vb])))
        for (i, p, q, _, _) in occ:
            fop = cells[i].face_of_plane
            for f in (fop[p], fop[q]):
                face_edges[f].add(e)
                edge_faces[e].add(f)
    cx = VoronoiComplex(
        space=space,
        samples=samples,
        cells=cells,
        face_keys=face_keys,
        face_cells=face_cells,
        face_edges=[tuple(sorted(x)) for x in face_edges],
        face_length=face_length,
        edge_keys=edge_keys,
        edge_cells=edge_cells,
        edge_faces=[tuple(sorted(x)) for x in edge_faces],
        edge_vertices=edge_vertices,
        vertex_keys=vert_keys,
        vertex_cells=vertex_cells,
        deep=deep,
        constants=derive_constants(eps),
        perturbations=attempt,
    )
    cx.checks = complex_checks(cx, check_maximal=check_maximal)
    return cx


def complex_checks(cx: VoronoiComplex, check_maximal: bool = True) -> dict:
    """Bound and structural checks recorded with every build."""
    c = cx.constants
    eps = cx.epsilon
    space = cx.space
    out: dict = {"euler_zero": cx.euler == 0}
    bad_edges = sum(len(f) != 3 for f in cx.edge_faces)
    out["edges_in_three_faces"] = bad_edges == 0
    radii = []
    for cell in cx.cells:
        v = cell.poly.vertices
        radii.append(float(np.max(space.dist_rows(v, np.broadcast_to(cell.center, v.shape)))))
    out["max_cell_radius"] = max(radii) if radii else 0.0
    if check_maximal:
        out["maximal"] = out["max_cell_radius"] < eps * (1 + 1e-6)
    deep_cells = [cell for cell in cx.cells if cell.deep]
    worst = 0
    for cell in deep_cells:
        worst = max(worst, cell.poly.n_faces, cell.poly.n_edges, cell.poly.n_vertices)
    out["deep_cell_max_count"] = worst
    out["deep_count_le_J"] = worst <= c.J
    table = _neighbor_table(space, cx.centers, 3 * eps) if deep_cells else []
    in3 = [1 + len(table[cell.id]) for cell in deep_cells]
    out["centers_in_3eps_max"] = max(in3, default=0)
    out["centers_in_3eps_le_L"] = out["centers_in_3eps_max"] <= c.L
    return out


# ---------------------------------------------------------------------------
# dual


@dataclass(eq=False)
class DualComplex:
    n_vertices: int
    edges: np.ndarray  # (F, 2) center ids, one per Voronoi face
    edge_length: np.ndarray
    triangles: np.ndarray  # (E, 3), one per Voronoi edge
    tetrahedra: np.ndarray  # (V, 4), one per Voronoi vertex
    deep_vertices: np.ndarray
    deep_edges: np.ndarray  # indices into ``edges``

    @cached_property
    def deep_valence(self) -> np.ndarray:
        val = np.zeros(self.n_vertices, int)
        for a, b in self.edges[self.deep_edges]:
            val[a] += 1
            val[b] += 1
        return val[self.deep_vertices]


def build_dual(v: VoronoiComplex) -> DualComplex:
    """Dual triangulation with vertices at the centers."""
    if not (v.checks.get("edges_in_three_faces", False) and v.checks.get("euler_zero", False)):
        raise NonRegularComplexError("dual needs a regular Voronoi complex")
    deep = v.deep
    de = np.flatnonzero(deep[v.face_cells[:, 0]] & deep[v.face_cells[:, 1]])
    return DualComplex(
        n_vertices=v.n_cells,
        edges=v.face_cells.copy(),
        edge_length=v.face_length.copy(),
        triangles=v.edge_cells.copy(),
        tetrahedra=v.vertex_cells.copy(),
        deep_vertices=np.flatnonzero(deep),
        deep_edges=de,
    )


# ---------------------------------------------------------------------------
# Monte Carlo cell volumes


def cell_volumes(v: VoronoiComplex, n: int = 2000, seed: int = 0) -> np.ndarray:
    """Monte Carlo volume of each cell from uniform samples of B(x_i, eps)."""
    space = v.space
    rng = np.random.default_rng(seed)
    r = v.epsilon * (1 + 1e-6)
    vb = space.ball_volume(r)
    out = np.empty(v.n_cells)
    for cell in v.cells:
        pts = space.sample_ball(cell.center, r, n, rng)
        out[cell.id] = vb * float(np.mean(space.cell_contains(cell.poly, pts, tol=0.0)))
    return out
