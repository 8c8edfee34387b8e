"""Deck-invariant scalar fields, sublevel volumes, cell splitters and level areas."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from functools import lru_cache
from itertools import permutations
from typing import Any, Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import qmc

from . import hkernel as hk
from .hkernel import GeometryError
from .voronoi_complex import VoronoiComplex, as_space

FIELD_KINDS = ("distance_to_point", "radial_bump_sum", "axis_sweep")


class BallNotEmbeddedError(GeometryError):
    pass


class NonGenericFieldError(GeometryError):
    pass


class NonGenericLevelWarning(UserWarning):
    pass


# ---------------------------------------------------------------------------
# fields


def _bump(s: np.ndarray) -> np.ndarray:
    """C^2 profile supported on [0, 1)."""
    return np.where(s < 1.0, (1.0 - np.minimum(s, 1.0) ** 2) ** 3, 0.0)


@dataclass(frozen=True, eq=False)
class MorseField:
    """A continuous function on the quotient, built from orbit data.

    ``kind`` selects the family; ``params`` holds its data; ``offset`` is a
    constant added to every value.  Lipschitz constants: 1 for distances,
    ``6 sqrt(3)/9 * sum|w| * n_overlap / radius`` for bump sums.
    """

    kind: str
    params: dict
    space: Any
    offset: float = 0.0

    def __post_init__(self):
        if self.kind not in FIELD_KINDS:
            raise ValueError(f"unknown field kind {self.kind!r}")

    @property
    def lipschitz(self) -> float:
        if self.kind == "radial_bump_sum":
            # max |d/ds (1 - s^2)^3| = 96 / (25 sqrt 5); bump supports assumed disjoint from own translates
            return float(96 / (25 * math.sqrt(5)) * np.sum(np.abs(self.params["weights"])) / self.params["radius"])
        if self.kind == "axis_sweep" and "segment" not in self.params:
            return float(self.space.axis_lipschitz(self.params["axis"]))
        return 1.0

    def shifted(self, c: float) -> "MorseField":
        return replace(self, offset=self.offset + float(c))

    # evaluation -----------------------------------------------------------

    def __call__(self, points) -> np.ndarray:
        return self.evaluate(points)

    def evaluate(self, points, anchor=None, radius: float | None = None) -> np.ndarray:
        """Values at points of the cover.

        With ``anchor`` and ``radius`` the points must lie within ``radius`` of
        the anchor, which lets the orbit search be restricted.  Without them
        the points are clustered and each cluster is handled that way.
        """
        Y = np.atleast_2d(np.asarray(points, float))
        if anchor is None:
            # the field is deck-invariant: bring far points back to the domain
            sp = self.space
            far = sp.dist_rows(Y, np.broadcast_to(sp.basepoint, Y.shape)) > sp.domain_radius + 1e-9
            if np.any(far):
                Y = Y.copy()
                Y[far] = sp.reduce(Y[far])
            return self._evaluate_clustered(Y)
        anchor = np.asarray(anchor, float)
        if radius is None:
            radius = float(np.max(self.space.dist_rows(Y, np.broadcast_to(anchor, Y.shape))))
        return self._evaluate_near(Y, anchor, float(radius)) + self.offset

    def _evaluate_clustered(self, Y: np.ndarray) -> np.ndarray:
        out = np.empty(len(Y))
        if self.kind == "distance_to_point":
            for s in range(0, len(Y), 2048):
                out[s : s + 2048] = self.space.quotient_distance(Y[s : s + 2048], self.params["target"])
            return out + self.offset
        key = np.floor(self.space.kd(Y) / 0.12).astype(np.int64)
        _, inverse = np.unique(key, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        order = np.argsort(inverse, kind="stable")
        bounds = np.flatnonzero(np.diff(inverse[order])) + 1
        for grp in np.split(order, bounds):
            P = Y[grp]
            a = P[0]
            r = float(np.max(self.space.dist_rows(P, np.broadcast_to(a, P.shape))))
            out[grp] = self._evaluate_near(P, a, r)
        return out + self.offset

    def _evaluate_near(self, Y, anchor, r) -> np.ndarray:
        sp = self.space
        if self.kind == "distance_to_point":
            p = self.params["target"]
            dA = float(np.atleast_1d(sp.quotient_distance(anchor[None, :], p))[0])
            L = sp.near_lifts(p, anchor, dA + 2 * r + 1e-12)
            return _min_dist(sp, Y, L)
        if self.kind == "radial_bump_sum":
            R = self.params["radius"]
            total = np.zeros(len(Y))
            for p, w in zip(self.params["points"], self.params["weights"]):
                L = sp.near_lifts(p, anchor, r + R)
                if len(L):
                    D = np.stack([sp.dist_rows(Y, np.broadcast_to(q, Y.shape)) for q in L], axis=1)
                    total += w * _bump(D / R).sum(axis=1)
            return total
        # axis sweep
        if hasattr(sp, "near_segments"):
            a, b = self.params["segment"]
            from .voronoi_complex import segment_distance

            dA = float(segment_distance(anchor[None, :], a[None, :], b[None, :])[0, 0])
            A, B = sp.near_segments(a, b, anchor, dA + 2 * r + 1e-12)
            return segment_distance(Y, A, B).min(axis=1)
        return sp.axis_height(Y, self.params["axis"])


def _min_dist(space, Y, L) -> np.ndarray:
    best = np.full(len(Y), np.inf)
    for q in L:
        best = np.minimum(best, space.dist_rows(Y, np.broadcast_to(q, Y.shape)))
    return best


def distance_to_point(m, target) -> MorseField:
    space = as_space(m)
    t = space.reduce(np.atleast_2d(hk._coords(target)))[0]
    return MorseField("distance_to_point", {"target": t}, space)


def radial_bump_sum(m, points, weights, radius: float) -> MorseField:
    space = as_space(m)
    P = space.reduce(np.atleast_2d(np.asarray(points, float)))
    w = np.asarray(weights, float)
    if len(w) != len(P) or radius <= 0:
        raise ValueError("bump sum needs one weight per point and a positive radius")
    return MorseField("radial_bump_sum", {"points": P, "weights": w, "radius": float(radius)}, space)


def antisymmetric_bumps(m, center, direction, offset: float, radius: float) -> MorseField:
    """Two opposite bumps placed symmetrically about ``center``.

    The field is odd under the point reflection through ``center`` as long as
    the bumps do not reach their own translates.
    """
    space = as_space(m)
    c = np.asarray(center, float)
    p_plus = space.offset_point(c, direction, offset)
    p_minus = space.offset_point(c, direction, -offset)
    P = np.array([p_plus, p_minus])
    return MorseField(
        "radial_bump_sum",
        {"points": P, "weights": np.array([1.0, -1.0]), "radius": float(radius)},
        space,
    )


def axis_sweep(m, axis=0) -> MorseField:
    """Sweep field.

    Hyperbolic: distance from the closed loop traced by pairing ``axis``
    (the segment from the midpoint of ``[g^-1 o, o]`` to the midpoint of
    ``[o, g o]``).  Flat torus: periodic height along lattice axis ``axis``.
    """
    space = as_space(m)
    if hasattr(space, "near_segments"):
        g = space.model.pairings[int(axis)].isometry
        o = space.basepoint
        c = hk.midpoint(g.inverse().apply(o), o)
        return MorseField("axis_sweep", {"segment": (c, g.apply(c)), "axis": int(axis)}, space)
    return MorseField("axis_sweep", {"axis": int(axis)}, space)


# ---------------------------------------------------------------------------
# sublevel volumes and splitters


def ball_samples(space, x, r: float, n: int, seed: int) -> np.ndarray:
    """Fixed, antithetic, volume-uniform sample of B(x, r).

    Half the points come from a scrambled Sobol sequence; the other half are
    their reflections through ``x``.
    """
    if n < 2:
        raise ValueError("need at least two samples")
    half = n // 2
    sob = qmc.Sobol(d=3, scramble=True, seed=np.random.default_rng(seed))
    u = sob.random_base2(max(0, math.ceil(math.log2(half))))[:half]
    pts = space.ball_points(np.asarray(x, float), r, u)
    return np.concatenate([pts, space.point_reflect(np.asarray(x, float), pts)])


def _cell_seed(seed: int, cell: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(cell)]).generate_state(1)[0])


def sublevel_ball_volume(f: MorseField, x, r: float, t: float, n: int, seed: int) -> float:
    """Monte Carlo volume of {f <= t} inside B(x, r) on a fixed sample."""
    space = f.space
    x = np.asarray(x, float)
    inj = float(np.atleast_1d(space.inj(x[None, :]))[0])
    if r > inj + 1e-12:
        raise BallNotEmbeddedError(f"radius {r} exceeds the injectivity radius {inj:.6g}")
    Y = ball_samples(space, x, r, n, seed)
    vals = f.evaluate(Y, anchor=x, radius=r)
    return space.ball_volume(r) * float(np.mean(vals <= t))


@dataclass(frozen=True)
class CellSplitter:
    cell: int
    t: float
    residual: float
    shallow: bool = False
    iterations: int = 0


def _median_split(vals: np.ndarray, tol: float) -> tuple[float, float, int]:
    """Bisection for the half-volume level of a fixed sample; (t, |est - 1/2|, steps)."""
    v = np.sort(vals)
    n = len(v)
    if v[0] == v[-1]:
        raise NonGenericFieldError("field is constant on the ball")

    def est(t):
        return np.searchsorted(v, t, side="right") / n

    span = v[-1] - v[0]
    lo, hi = v[0] - 0.5 * span, v[-1]
    steps = 0
    # invariant: est(lo) < 1/2 <= est(hi)
    while steps < 200:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if est(mid) >= 0.5:
            hi = mid
        else:
            lo = mid
        steps += 1
    k = int(np.searchsorted(v, hi, side="right"))
    upper = v[k] if k < n else v[-1]
    # centre of the plateau on which the estimator is constant
    t = 0.5 * (v[k - 1] + upper)
    resid = abs(est(t) - 0.5)
    if resid > tol:
        raise NonGenericFieldError(f"sample cannot be split in half (residual {resid:.3g})")
    return float(t), float(resid), steps


def cell_splitter(
    f: MorseField, v: VoronoiComplex, cell: int, n: int = 200_000, seed: int = 0, tau_split: float = 1e-4
) -> CellSplitter:
    """Level at which {f <= t} holds half of B(x_i, eps/2)."""
    c = v.cells[cell]
    r = v.epsilon / 2
    shallow = not c.deep and c.inj < r
    Y = ball_samples(f.space, c.center, r, n, _cell_seed(seed, cell))
    vals = f.evaluate(Y, anchor=c.center, radius=r)
    tol = max(tau_split, 1.0 / n)
    t, resid, steps = _median_split(vals, tol)
    return CellSplitter(cell, t, resid * f.space.ball_volume(r), shallow, steps)


def all_splitters(f: MorseField, v: VoronoiComplex, n: int, seed: int, tau_split: float = 1e-4):
    return [cell_splitter(f, v, i, n, seed, tau_split) for i in range(v.n_cells)]


@dataclass(frozen=True)
class CellOrder:
    order: tuple[int, ...]
    values: tuple[float, ...]  # splitter values in order
    ties: tuple[tuple[int, int], ...]  # pairs of cells with equal splitters


def order_cells(splitters: Sequence[CellSplitter]) -> CellOrder:
    """Ascending splitter order; equal values are broken by cell id and recorded."""
    ranked = sorted(splitters, key=lambda s: (s.t, s.cell))
    ties = tuple(
        (a.cell, b.cell) for a, b in zip(ranked, ranked[1:]) if a.t == b.t
    )
    return CellOrder(tuple(s.cell for s in ranked), tuple(s.t for s in ranked), ties)


# ---------------------------------------------------------------------------
# level-set area by marching tetrahedra

DEFAULT_H = 0.05
COARSE_H = 0.2


@lru_cache(maxsize=64)
def _kuhn_template(N: int) -> tuple[np.ndarray, np.ndarray]:
    """Integer barycentric nodes and tetrahedra of the N-fold edgewise subdivision.

    Nodes are lattice points ``N >= z1 >= z2 >= z3 >= 0``; tetrahedra come
    from the Freudenthal triangulation of the cube grid with vertices listed
    along their monotone lattice path, which is the order octasection needs.
    """
    z = np.array([(a, b, c) for a in range(N + 1) for b in range(a + 1) for c in range(b + 1)], int)
    index = {tuple(p): i for i, p in enumerate(z)}
    tets = []
    eye = np.eye(3, dtype=int)
    for corner in np.ndindex(N, N, N):
        pts = [np.array(corner)]
        for perm in permutations(range(3)):
            path = [pts[0]]
            for k in perm:
                path.append(path[-1] + eye[k])
            ids = [index.get(tuple(q)) for q in path]
            if None not in ids:
                tets.append(ids)
    bary = np.column_stack([N - z[:, 0], z[:, 0] - z[:, 1], z[:, 1] - z[:, 2], z[:, 2]])
    return bary, np.array(tets, int)


@dataclass(eq=False)
class LevelMesh:
    """Geodesic tetrahedralisation of the fundamental domain.

    The domain is coned from the basepoint over face centers; every cone
    tetrahedron is subdivided edgewise.  A tetrahedron is stored as its cone
    index, a denominator and four integer barycentric vectors, so that
    refinements of neighbouring tetrahedra share nodes exactly.
    """

    h: float
    corners: np.ndarray  # (C, 4, D)
    cone: np.ndarray  # (T,)
    den: np.ndarray  # (T,)
    bary: np.ndarray  # (T, 4, 4) integers

    def points(self, space, cone, den, bary) -> np.ndarray:
        w = bary / den[:, None, None] if bary.ndim == 3 else bary / den[:, None]
        if bary.ndim == 3:
            return space.combine(np.einsum("tkc,tcd->tkd", w, self.corners[cone]))
        return space.combine(np.einsum("tc,tcd->td", w, self.corners[cone]))


def build_level_mesh(space, h: float) -> LevelMesh:
    space = as_space(space)
    dom = space.domain
    V = dom.vertices
    c = space.basepoint
    corners, cone, den, bary = [], [], [], []
    for _, cyc in sorted(dom.faces.items()):
        fc = space.combine(V[list(cyc)].mean(axis=0))
        for a, b in zip(cyc, cyc[1:] + cyc[:1]):
            k = len(corners)
            cn = np.array([c, fc, V[a], V[b]])
            corners.append(cn)
            edge = max(
                float(space.dist_rows(cn[i][None], cn[j][None])[0]) for i in range(4) for j in range(i + 1, 4)
            )
            N = max(1, math.ceil(edge / h))
            nodes, tt = _kuhn_template(N)
            bary.append(nodes[tt])
            cone.append(np.full(len(tt), k))
            den.append(np.full(len(tt), N))
    return LevelMesh(h, np.array(corners), np.concatenate(cone), np.concatenate(den), np.concatenate(bary))


def _marching_table():
    edges = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
    eid = {e: k for k, e in enumerate(edges)}
    eid.update({(b, a): k for (a, b), k in list(eid.items())})
    table = {}
    for mask in range(16):
        inside = [i for i in range(4) if mask >> i & 1]
        outside = [i for i in range(4) if not mask >> i & 1]
        if len(inside) in (0, 4):
            table[mask] = []
        elif len(inside) in (1, 3):
            lone = inside[0] if len(inside) == 1 else outside[0]
            others = [i for i in range(4) if i != lone]
            table[mask] = [tuple(eid[(lone, o)] for o in others)]
        else:
            (i1, i2), (o1, o2) = inside, outside
            quad = [eid[(i1, o1)], eid[(i1, o2)], eid[(i2, o2)], eid[(i2, o1)]]
            table[mask] = [(quad[0], quad[1], quad[2]), (quad[0], quad[2], quad[3])]
    return edges, table


_EDGES, _TABLE = _marching_table()

# octasection of a tetrahedron listed along a lattice path; node k < 4 is a
# vertex, the rest are edge midpoints in ``_EDGES`` order
_MID = {e: 4 + k for k, e in enumerate(_EDGES)}
_CHILDREN = np.array(
    [
        [0, _MID[0, 1], _MID[0, 2], _MID[0, 3]],
        [_MID[0, 1], 1, _MID[1, 2], _MID[1, 3]],
        [_MID[0, 2], _MID[1, 2], 2, _MID[2, 3]],
        [_MID[0, 3], _MID[1, 3], _MID[2, 3], 3],
        [_MID[0, 1], _MID[0, 2], _MID[0, 3], _MID[1, 3]],
        [_MID[0, 1], _MID[0, 2], _MID[1, 2], _MID[1, 3]],
        [_MID[0, 2], _MID[0, 3], _MID[1, 3], _MID[2, 3]],
        [_MID[0, 2], _MID[1, 2], _MID[1, 3], _MID[2, 3]],
    ]
)


@dataclass(eq=False)
class _Tets:
    """A batch of mesh tetrahedra with vertex values and points."""

    cone: np.ndarray
    den: np.ndarray
    bary: np.ndarray
    values: np.ndarray  # (T, 4)
    points: np.ndarray  # (T, 4, D)

    def take(self, idx) -> "_Tets":
        return _Tets(self.cone[idx], self.den[idx], self.bary[idx], self.values[idx], self.points[idx])


def _evaluate_nodes(f: "MorseField", mesh: LevelMesh, cone, den, bary):
    """Values and points at tet vertices, evaluating each distinct node once."""
    T = len(cone)
    if T == 0:
        return np.empty((0, 4)), np.empty((0, 4, len(f.space.basepoint)))
    flat = bary.reshape(-1, 4)
    # within one batch all tets of a cone share the denominator, so a node
    # is fixed by its cone and three barycentric integers
    B = int(den.max()) + 1
    c4 = np.repeat(cone, 4).astype(np.int64)
    keys = ((c4 * B + flat[:, 0]) * B + flat[:, 1]) * B + flat[:, 2]
    uniq, first, inv = np.unique(keys, return_index=True, return_inverse=True)
    inv = inv.reshape(-1)
    pts = mesh.points(f.space, c4[first], np.repeat(den, 4)[first].astype(float), flat[first].astype(float))
    # mesh values are for the unshifted field; levels are shifted instead
    vals = f.evaluate(pts) - f.offset
    return vals[inv].reshape(T, 4), pts[inv].reshape(T, 4, -1)


def _area_of(space, tets: _Tets, t: float) -> float:
    F, P = tets.values, tets.points
    mask = ((F < t) * np.array([1, 2, 4, 8])).sum(axis=1)
    total = 0.0
    for m in np.unique(mask):
        tris = _TABLE[int(m)]
        if not tris:
            continue
        sel = mask == m
        Fm, Pm = F[sel], P[sel]
        cross = {}
        for tri in tris:
            for e in tri:
                if e not in cross:
                    a, b = _EDGES[e]
                    s = (t - Fm[:, a]) / (Fm[:, b] - Fm[:, a])
                    cross[e] = space.interpolate(Pm[:, a], Pm[:, b], np.clip(s, 0.0, 1.0))
            total += float(np.sum(space.triangle_area(cross[tri[0]], cross[tri[1]], cross[tri[2]])))
    return total


def _diameters(space, P: np.ndarray) -> np.ndarray:
    d = np.zeros(len(P))
    for a, b in _EDGES:
        d = np.maximum(d, space.dist_rows(P[:, a], P[:, b]))
    return d


def _near_level(space, tets: _Tets, t: float, lip: float, diam: np.ndarray | None = None) -> _Tets:
    """Tets whose sub-tetrahedra might cross level t (Lipschitz padding)."""
    # every point is within the diameter of each vertex, so
    # max_v f(v) - pad <= f <= min_v f(v) + pad on the whole tet
    if diam is None:
        diam = _diameters(space, tets.points)
    pad = lip * diam * (1 + 1e-9)
    keep = (tets.values.max(axis=1) - pad < t) & (tets.values.min(axis=1) + pad > t)
    return tets.take(np.flatnonzero(keep))


def _refine(f: "MorseField", mesh: LevelMesh, tets: _Tets) -> _Tets:
    B = tets.bary * 2
    mids = np.stack([(tets.bary[:, a] + tets.bary[:, b]) for a, b in _EDGES], axis=1)
    nodes = np.concatenate([B, mids], axis=1)  # (T, 10, 4)
    child = nodes[:, _CHILDREN].reshape(-1, 4, 4)
    cone = np.repeat(tets.cone, 8)
    den = np.repeat(tets.den * 2, 8)
    vals, pts = _evaluate_nodes(f, mesh, cone, den, child)
    return _Tets(cone, den, child, vals, pts)


class _FieldMesh:
    """Coarse uniform mesh with field values, cached per field."""

    def __init__(self, f: "MorseField", h0: float):
        self.f = f
        self.mesh = build_level_mesh(f.space, h0)
        m = self.mesh
        vals, pts = _evaluate_nodes(f, m, m.cone, m.den, m.bary)
        self.tets = _Tets(m.cone, m.den, m.bary, vals, pts)
        self.fmin = float(vals.min())
        self.fmax = float(vals.max())
        self.diam = _diameters(f.space, pts)


_FIELD_MESHES: dict = {}


def _field_mesh(f: "MorseField", h0: float) -> _FieldMesh:
    key = (id(f), h0)
    hit = _FIELD_MESHES.get(key)
    if hit is None or hit.f is not f:
        hit = _FieldMesh(f, h0)
        _FIELD_MESHES[key] = hit
    return hit


def clear_mesh_cache() -> None:
    _FIELD_MESHES.clear()


def _area_levels(f: "MorseField", t: float, h: float, extra: int) -> tuple[list[float], list[float]]:
    """Areas on successively halved meshes from the coarse scale down to h / 2**extra."""
    k = max(0, math.ceil(math.log2(COARSE_H / h) - 1e-9))
    h0 = h * 2**k
    fm = _field_mesh(f, h0)
    t_raw = t - f.offset
    lip = f.lipschitz
    if k + extra == 0:
        vals = fm.tets.values
        cross = np.flatnonzero((vals.min(axis=1) < t_raw) & (vals.max(axis=1) >= t_raw))
        return [h0], [_area_of(f.space, fm.tets.take(cross), t_raw)]
    tets = _near_level(f.space, fm.tets, t_raw, lip, fm.diam)
    scales, areas = [], []
    for level in range(k + extra + 1):
        scales.append(h0 / 2**level)
        areas.append(_area_of(f.space, tets, t_raw))
        if level < k + extra:
            tets = _refine(f, fm.mesh, tets)
            if level + 1 < k + extra:
                tets = _near_level(f.space, tets, t_raw, lip)
    return scales, areas


@dataclass(frozen=True)
class LevelArea:
    t: float
    area: float
    error: float
    h: float
    refined: float = float("nan")  # estimate at h / 2
    generic: bool = True


def level_area(
    f: MorseField,
    m=None,
    t: float = 0.0,
    h: float = DEFAULT_H,
    *,
    splitters: Sequence[float] | None = None,
    tau: float = 1e-9,
    with_error: bool = True,
) -> LevelArea:
    """Area of {f = t} by marching tetrahedra at edge scale h.

    A uniform mesh at the coarse scale is refined by octasection only where
    the level can pass.  The reported error is the change from the 2h mesh;
    ``refined`` holds the h/2 value for the halving self-check.
    """
    generic = True
    if splitters is not None and len(splitters):
        generic = bool(np.min(np.abs(np.asarray(splitters) - t)) > tau)
        if not generic:
            warnings.warn(f"level {t} is within {tau} of a cell splitter", NonGenericLevelWarning)
    if not with_error:
        _, areas = _area_levels(f, t, h, 0)
        return LevelArea(float(t), areas[-1], float("nan"), h, generic=generic)
    scales, areas = _area_levels(f, t, h, 1)
    if len(areas) < 3:  # h is already the coarse scale
        coarse = _area_levels(f, t, 2 * h, 0)[1][-1]
        areas = [coarse] + areas
    return LevelArea(float(t), areas[-2], abs(areas[-2] - areas[-3]), h, areas[-1], generic)


def level_areas(f: MorseField, ts: Sequence[float], h: float = COARSE_H) -> np.ndarray:
    """Areas at many levels without error estimates."""
    return np.array([_area_levels(f, float(t), h, 0)[1][-1] for t in ts])


def field_range(f: MorseField, h: float = COARSE_H) -> tuple[float, float]:
    """Min and max of f over the nodes of the coarse mesh."""
    fm = _field_mesh(f, h)
    return fm.fmin + f.offset, fm.fmax + f.offset


@dataclass(frozen=True)
class MorseAreaEstimate:
    area: float
    t_max: float
    error: float
    grid: tuple[float, ...]
    areas: tuple[float, ...]


def morse_area_estimate(
    f: MorseField, m=None, t_grid: Sequence[float] | int = 32, h: float = 0.1, refine: int = 2
) -> MorseAreaEstimate:
    """Largest level-set area over a t-grid, refined around the maximum."""
    if isinstance(t_grid, (int, np.integer)):
        lo, hi = field_range(f)
        t_grid = np.linspace(lo, hi, int(t_grid) + 2)[1:-1]
    grid = [float(t) for t in t_grid]
    areas = list(level_areas(f, grid, h))
    for _ in range(refine):
        k = int(np.argmax(areas))
        lo = grid[max(k - 1, 0)]
        hi = grid[min(k + 1, len(grid) - 1)]
        new = [float(t) for t in np.linspace(lo, hi, 7)[1:-1] if float(t) not in grid]
        grid += new
        areas += list(level_areas(f, new, h))
        order = np.argsort(grid)
        grid = [grid[i] for i in order]
        areas = [areas[i] for i in order]
    k = int(np.argmax(areas))
    best = level_area(f, m, grid[k], h)
    return MorseAreaEstimate(
        area=float(areas[k]),
        t_max=grid[k],
        error=best.error,
        grid=tuple(grid),
        areas=tuple(float(a) for a in areas),
    )
