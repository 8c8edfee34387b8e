"""Polyhedral sweeps: regions, boundary surfaces, capping, handle counts.

A region is a set of Voronoi cells.  Its boundary is stored twice over: as
the Voronoi faces separating inside from outside, and as normal pieces of
the dual triangulation (one per Voronoi vertex).  Topology is computed from
the face representation.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .hkernel import GeometryError
from .morse_field import CellOrder
from .voronoi_complex import DerivedConstants, DualComplex, VoronoiComplex

PIECE_EMPTY, PIECE_TRIANGLE, PIECE_QUAD = 0, 1, 2
PIECE_NAMES = {PIECE_EMPTY: "empty", PIECE_TRIANGLE: "triangle", PIECE_QUAD: "quad"}
RESTRICTIONS = ("all", "deep", "thick")


class NonGenericLevelError(ValueError):
    pass


class SurfaceStructureError(GeometryError):
    """The face representation is not a closed surface where it must be."""


class CappingError(GeometryError):
    pass


class InequalityViolation(AssertionError):
    """A proved inequality failed; this indicates a defect, not data."""


# ---------------------------------------------------------------------------
# normal pieces


def piece_type(marked: int) -> int:
    """Normal piece in a tetrahedron with ``marked`` inside vertices."""
    if marked in (0, 4):
        return PIECE_EMPTY
    return PIECE_TRIANGLE if marked in (1, 3) else PIECE_QUAD


def normal_piece(marking: Sequence[bool]) -> tuple[int, tuple[tuple[int, int], ...]]:
    """Piece type and the tetrahedron edges it crosses, for one vertex marking."""
    crossed = tuple(
        (a, b) for a in range(4) for b in range(a + 1, 4) if bool(marking[a]) != bool(marking[b])
    )
    return piece_type(sum(bool(x) for x in marking)), crossed


# ---------------------------------------------------------------------------
# regions


@dataclass(frozen=True)
class PolyhedralRegion:
    t: float
    cells: frozenset
    n_cells: int

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.n_cells, bool)
        m[list(self.cells)] = True
        return m

    def complement(self) -> "PolyhedralRegion":
        return PolyhedralRegion(self.t, frozenset(range(self.n_cells)) - self.cells, self.n_cells)


def build_region(order: CellOrder, t: float, tau: float = 0.0) -> PolyhedralRegion:
    """Cells whose splitter is at most t (a prefix of the order)."""
    vals = np.asarray(order.values)
    if len(vals) and np.min(np.abs(vals - t)) <= tau:
        raise NonGenericLevelError(f"level {t} coincides with a cell splitter")
    k = int(np.searchsorted(vals, t, side="right"))
    return PolyhedralRegion(float(t), frozenset(order.order[:k]), len(order.order))


# ---------------------------------------------------------------------------
# surfaces


@dataclass(eq=False)
class PolyhedralSurface:
    """Boundary of a region, as Voronoi faces and as normal pieces."""

    t: float
    complex: VoronoiComplex = field(repr=False)
    inside: np.ndarray = field(repr=False)
    faces: np.ndarray  # ids of Voronoi faces separating inside from outside
    edges: np.ndarray  # Voronoi edges on the surface
    edge_faces: np.ndarray  # (len(edges), 2) surface faces along each surface edge
    vertices: np.ndarray  # Voronoi vertices on the surface
    pieces: np.ndarray = field(repr=False)  # piece type per dual tetrahedron

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def piece_census(self) -> dict:
        return {PIECE_NAMES[k]: int(np.sum(self.pieces == k)) for k in PIECE_NAMES}

    @property
    def norm_W(self) -> int:
        """Number of surface faces whose two adjacent cells are both deep."""
        deep = self.complex.deep
        fc = self.complex.face_cells[self.faces]
        return int(np.sum(deep[fc[:, 0]] & deep[fc[:, 1]]))

    def restricted_faces(self, restriction: str, thin_cells: np.ndarray | None = None) -> np.ndarray:
        fc = self.complex.face_cells[self.faces]
        if restriction == "all":
            keep = np.ones(len(self.faces), bool)
        elif restriction == "deep":
            deep = self.complex.deep
            keep = deep[fc[:, 0]] & deep[fc[:, 1]]
        elif restriction == "thick":
            thin = cell_thin_labels(self.complex) if thin_cells is None else thin_cells
            keep = (thin[fc[:, 0]] < 0) & (thin[fc[:, 1]] < 0)
        else:
            raise ValueError(f"restriction must be one of {RESTRICTIONS}")
        return self.faces[keep]


def cell_thin_labels(v: VoronoiComplex) -> np.ndarray:
    """Tube id of each cell center, or -1 for thick cells."""
    tube_of = getattr(v.space, "tube_of", None)
    if tube_of is None:
        return np.full(v.n_cells, -1, int)
    return np.asarray(tube_of(v.centers), int)


def _edge_arrays(v: VoronoiComplex) -> tuple[np.ndarray, np.ndarray]:
    """Padded (E, 3) edge-face table and (E, 2) edge-vertex table, cached on the complex."""
    hit = v.__dict__.get("_edge_arrays")
    if hit is None:
        EF = np.full((v.n_edges, 3), -1, int)
        for e, fs in enumerate(v.edge_faces):
            EF[e, : len(fs)] = fs
        EV = np.asarray(v.edge_vertices, int).reshape(-1, 2)
        hit = v.__dict__["_edge_arrays"] = (EF, EV)
    return hit


_PIECE_OF_COUNT = np.array([piece_type(k) for k in range(5)])


def _surface_from_faces(v: VoronoiComplex, t: float, inside: np.ndarray, on: np.ndarray) -> PolyhedralSurface:
    EF, EV = _edge_arrays(v)
    hits = np.where(EF >= 0, on[np.maximum(EF, 0)], False)
    count = hits.sum(axis=1)
    edges = np.flatnonzero(count)
    bad = edges[count[edges] != 2]
    if len(bad):
        raise SurfaceStructureError(f"edge {int(bad[0])} meets {int(count[bad[0]])} surface faces")
    pairs = EF[edges][hits[edges]].reshape(-1, 2)
    marked = inside[v.vertex_cells].sum(axis=1) if v.n_vertices else np.zeros(0, int)
    return PolyhedralSurface(
        t=float(t),
        complex=v,
        inside=inside,
        faces=np.flatnonzero(on),
        edges=edges,
        edge_faces=pairs,
        vertices=np.unique(EV[edges]),
        pieces=_PIECE_OF_COUNT[marked],
    )


def extract_surface(v: VoronoiComplex, d: DualComplex | None, r: PolyhedralRegion) -> PolyhedralSurface:
    """Boundary of the region: faces whose two cells lie on opposite sides."""
    inside = r.mask
    fc = v.face_cells
    on = inside[fc[:, 0]] != inside[fc[:, 1]]
    return _surface_from_faces(v, r.t, inside, on)


@dataclass(frozen=True)
class SurfaceStats:
    components: int
    chi: int
    genus: int
    boundary: int
    faces: int
    edges: int
    vertices: int

    def __add__(self, other: "SurfaceStats") -> "SurfaceStats":
        return SurfaceStats(*(getattr(self, k) + getattr(other, k) for k in self.__dataclass_fields__))


EMPTY_STATS = SurfaceStats(0, 0, 0, 0, 0, 0, 0)


def _components(n: int, a: np.ndarray, b: np.ndarray) -> tuple[int, np.ndarray]:
    if n == 0:
        return 0, np.zeros(0, int)
    g = coo_matrix((np.ones(len(a)), (a, b)), shape=(n, n))
    return connected_components(g, directed=False)


def face_subsurface_stats(v: VoronoiComplex, s: PolyhedralSurface, keep_faces: np.ndarray) -> SurfaceStats:
    """Topology of a union of surface faces, split at pinch vertices.

    A vertex where the kept faces form several fans counts once per fan.
    Boundary curves are closed off by discs before the genus is read off.
    """
    F = len(keep_faces)
    if F == 0:
        return EMPTY_STATS
    loc = np.full(v.n_faces, -1, np.int64)
    loc[keep_faces] = np.arange(F)
    ev = _edge_arrays(v)[1][s.edges].astype(np.int64)
    la, lb = loc[s.edge_faces[:, 0]], loc[s.edge_faces[:, 1]]
    in_a, in_b = la >= 0, lb >= 0
    interior = in_a & in_b
    boundary = in_a ^ in_b
    E = int(np.sum(in_a | in_b))

    # vertex-face incidences of kept faces, numbered through a packed key
    inc = np.concatenate(
        [ev[in_a, 0] * F + la[in_a], ev[in_a, 1] * F + la[in_a], ev[in_b, 0] * F + lb[in_b], ev[in_b, 1] * F + lb[in_b]]
    )
    uniq = np.unique(inc)

    def node(vert, f):
        return np.searchsorted(uniq, vert * F + f)

    # fans: incidences joined through interior edges at the shared vertex
    ia, ib = la[interior], lb[interior]
    vi = ev[interior]
    a = np.concatenate([node(vi[:, 0], ia), node(vi[:, 1], ia)])
    b = np.concatenate([node(vi[:, 0], ib), node(vi[:, 1], ib)])
    n_fans, fan = _components(len(uniq), a, b)

    # boundary curves: fans joined by boundary edges
    fb = np.where(in_a, la, lb)[boundary]
    vb = ev[boundary]
    a, b = fan[node(vb[:, 0], fb)], fan[node(vb[:, 1], fb)]
    _, curve = _components(n_fans, a, b)
    n_curves = len(np.unique(curve[a])) if len(a) else 0

    n_comp, _ = _components(F, ia, ib)

    chi = n_fans - E + F
    closed_chi = chi + n_curves
    if closed_chi % 2:
        raise SurfaceStructureError("odd Euler characteristic after capping")
    genus = n_comp - closed_chi // 2
    if genus < 0:
        raise SurfaceStructureError("negative genus")
    return SurfaceStats(int(n_comp), int(chi), int(genus), int(n_curves), F, E, int(n_fans))


def surface_stats(s: PolyhedralSurface, restriction: str = "all", thin_cells: np.ndarray | None = None) -> SurfaceStats:
    """Components, Euler characteristic, genus and boundary count.

    ``deep`` keeps faces between two deep cells, ``thick`` faces between two
    cells outside the thin tubes.  The genus of a restriction is that of the
    surface obtained by closing its boundary curves with discs.
    """
    keep = s.restricted_faces(restriction, thin_cells)
    return face_subsurface_stats(s.complex, s, keep)


# ---------------------------------------------------------------------------
# inequality checks


@dataclass(frozen=True)
class FaceBoundReport:
    t: float
    norm_W: int
    area: float
    bound: float
    passed: bool
    slack: float  # bound / norm, inf for an empty intersection


def face_bound_check(
    s: PolyhedralSurface, stats: SurfaceStats | None, F_area: float, c: DerivedConstants, raise_on_fail: bool = False
) -> FaceBoundReport:
    """Deep face count against (L/A) times the level-set area."""
    n = s.norm_W
    bound = c.L / c.A * float(F_area)
    ok = n <= bound
    rep = FaceBoundReport(s.t, n, float(F_area), bound, bool(ok), bound / n if n else float("inf"))
    if raise_on_fail and not ok:
        raise InequalityViolation(f"face bound fails at t={s.t}: {n} > {bound:.6g}")
    return rep


def deep_genus_bound(c: DerivedConstants, norm_W: int) -> float:
    return (1 + c.J / 2) * norm_W


def capped_genus_bound(c: DerivedConstants, norm_W: int) -> int:
    return (5 * c.J + 1) * norm_W


# ---------------------------------------------------------------------------
# capping


@dataclass(eq=False)
class CappedSurface:
    """S^+ : thick part of the boundary closed up by pieces of tube boundaries."""

    base: np.ndarray  # surface faces between two thick cells
    caps: dict  # tube id -> faces between thick region cells and that tube
    depth: float
    surface: PolyhedralSurface = field(repr=False)
    stats: SurfaceStats = EMPTY_STATS

    @property
    def faces(self) -> np.ndarray:
        return self.surface.faces


def cap_surface(
    s: PolyhedralSurface,
    thin_cells: np.ndarray | None,
    region: PolyhedralRegion,
    i: int = 0,
    n: int = 1,
) -> CappedSurface:
    """Close the thick part of S with the tube-boundary faces lying in the region.

    Thin cells are treated as outside, so the result is the boundary of the
    thick part of the region; caps are recorded per tube with depth i/n.
    """
    v = s.complex
    thin = cell_thin_labels(v) if thin_cells is None else np.asarray(thin_cells, int)
    inside = region.mask
    if not np.any(thin >= 0):
        return CappedSurface(s.faces, {}, i / n, s, surface_stats(s, "all", thin))
    thick_in = inside & (thin < 0)
    fc = v.face_cells
    on = thick_in[fc[:, 0]] != thick_in[fc[:, 1]]
    capped = _surface_from_faces(v, s.t, thick_in, on)
    a, b = thin[fc[capped.faces, 0]], thin[fc[capped.faces, 1]]
    tube = np.maximum(a, b)
    base = capped.faces[tube < 0]
    caps = {int(k): capped.faces[tube == k] for k in np.unique(tube[tube >= 0])}
    # extraction already enforced two faces per edge, so the caps close up
    # the base exactly when the base is the thick part of S
    if not np.array_equal(np.sort(base), np.sort(s.restricted_faces("thick", thin))):
        raise CappingError("cap boundary curves do not match the thick part of the surface")
    return CappedSurface(base, caps, i / n, capped, surface_stats(capped, "all", thin))


# ---------------------------------------------------------------------------
# handle counts


def handle_bound_attach(g: int, b: int) -> int:
    """Handles needed to attach a genus g surface with b boundary curves."""
    if g < 0 or b < 0:
        raise ValueError("genus and boundary count must be non-negative")
    return 4 * g + 2 * b


def cell_meets_thin(v: VoronoiComplex, cell: int, thin_cells: np.ndarray) -> bool:
    if thin_cells[cell] >= 0:
        return True
    nbrs = {int(c) for f in v.cell_faces[cell] for c in v.face_cells[f]}
    return any(thin_cells[c] >= 0 for c in nbrs)


def handle_bound_step(
    cell: int,
    v: VoronoiComplex,
    thin_cells: np.ndarray | None,
    c: DerivedConstants,
    norm1: int,
    norm2: int,
) -> int:
    """Handles added when the sweep passes one cell splitter.

    A cell away from the thin part costs 2J; a cell meeting it costs
    54 J^2 + 4 J |S_2 n W| + 2 J |S_1 n W|.  When some surface meets the deep
    part the result is checked against 60 J^2 max |S_i n W|.
    """
    thin = np.full(v.n_cells, -1, int) if thin_cells is None else np.asarray(thin_cells, int)
    J = c.J
    if cell_meets_thin(v, cell, thin):
        h = 54 * J * J + 4 * J * norm2 + 2 * J * norm1
    else:
        h = 2 * J
    top = max(norm1, norm2)
    if top > 0 and h > 60 * J * J * top:
        raise InequalityViolation(f"step bound {h} exceeds 60 J^2 max = {60 * J * J * top}")
    return int(h)


# ---------------------------------------------------------------------------
# schedule and census


@dataclass(frozen=True)
class Schedule:
    points: tuple[float, ...]
    depths: tuple[float, ...]
    prefix: tuple[int, ...]  # region size at each point


def nested_schedule(splitters: Sequence[float], caps: int | None = None) -> Schedule:
    """One generic level per splitter gap, plus one below and one above.

    Levels are gap midpoints; cap depths are i/n with n the number of levels.
    """
    t = np.asarray(splitters, float)
    if len(t) and np.any(np.diff(t) <= 0):
        raise NonGenericLevelError("splitters must be sorted and distinct")
    if len(t) == 0:
        pts = [0.0]
    else:
        spread = max(float(t[-1] - t[0]), 1.0)
        pts = [float(t[0] - spread)] + [float(x) for x in 0.5 * (t[1:] + t[:-1])] + [float(t[-1] + spread)]
    n = len(pts)
    depths = tuple(i / n for i in range(n))
    prefix = tuple(int(np.searchsorted(t, u, side="right")) for u in pts)
    if any(b != a + 1 for a, b in zip(prefix, prefix[1:])):
        raise NonGenericLevelError("schedule regions are not strictly nested")
    if any(b <= a for a, b in zip(depths, depths[1:])):
        raise NonGenericLevelError("cap depths are not strictly nested")
    return Schedule(tuple(pts), depths, prefix)


CENSUS_COLUMNS = (
    "index",
    "u",
    "cells",
    "norm_S_W",
    "V",
    "E",
    "F",
    "chi",
    "components",
    "genus",
    "capped_genus",
    "handle_bound_next",
)


def census_csv(rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CENSUS_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: r[k] for k in CENSUS_COLUMNS})
    return buf.getvalue()
