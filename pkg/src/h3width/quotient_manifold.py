"""Closed hyperbolic 3-manifolds as a fundamental polyhedron plus face pairings.

The universal cover is represented only through a finite ball of deck
transformations around the basepoint; every quotient computation is a
minimum over that ball, certified against its search radius.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .hkernel import (
    ETA,
    TAU_GEOM,
    ConvexPolyhedron,
    GeodesicPlane,
    GeometryError,
    HPoint,
    Isometry,
    _coords,
    _distance,
    from_klein,
    intersect_halfspaces,
    lorentz_renormalize,
    minkowski,
    normalize,
    pairwise_distance,
)

_SIG = np.array([-1.0, 1.0, 1.0, 1.0])


class SearchRadiusExhausted(GeometryError):
    """The deck-group ball is too small to certify a quotient minimum."""


class InconsistentThinPart(GeometryError):
    pass


class ManifoldFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Pairing:
    source_face: int
    target_face: int
    isometry: Isometry


@dataclass(frozen=True)
class Tube:
    """Declared Margulis tube: a neighbourhood of a closed geodesic."""

    core: tuple[np.ndarray, np.ndarray]
    generator: Isometry
    radius: float

    def distance_to_core(self, points: np.ndarray) -> np.ndarray:
        a, b = self.core
        G = np.array([[minkowski(a, a), minkowski(a, b)], [minkowski(b, a), minkowski(b, b)]])
        rhs = np.stack([minkowski(points, a), minkowski(points, b)], axis=-1)
        c = rhs @ np.linalg.inv(G).T
        q = -np.einsum("...i,ij,...j->...", c, G, c)
        return np.arccosh(np.sqrt(np.maximum(q, 1.0)))


@dataclass(frozen=True)
class ThinPart:
    tubes: tuple[Tube, ...] = ()

    def __len__(self):
        return len(self.tubes)


@dataclass(frozen=True)
class MVConstants:
    """Margulis-compatible constants (mu, epsilon)."""

    mu: float
    mu1: float
    mu2: float
    delta: float
    epsilon: float

    def __post_init__(self):
        if not 0 < self.mu1 < self.mu < self.mu2:
            raise ValueError("MV constants need 0 < mu1 < mu < mu2")
        if self.delta <= 0 or self.epsilon <= 0:
            raise ValueError("delta and epsilon must be positive")

    @classmethod
    def from_margulis(cls, mu: float, mu1: float, mu2: float, delta: float) -> "MVConstants":
        return cls(mu, mu1, mu2, delta, 0.25 * min(mu1, delta))

    @classmethod
    def desk(cls, epsilon: float, inj: float) -> "MVConstants":
        """Desk mode: user epsilon with empty thin part, needs eps < inj(M)/2."""
        if not 0 < epsilon < 0.5 * inj:
            raise ValueError(f"desk mode needs 0 < eps < inj(M)/2 = {0.5 * inj:.6g}")
        mu = 0.5 * inj
        return cls(mu=mu, mu1=0.5 * mu, mu2=inj, delta=4 * epsilon, epsilon=epsilon)


@dataclass(frozen=True, eq=False)
class ManifoldModel:
    """Fundamental polyhedron, face pairings and a ball of deck transformations.

    ``group_ball`` is an (m, 4, 4) array sorted by the displacement of the
    basepoint; entry 0 is the identity.
    """

    name: str
    domain: ConvexPolyhedron
    pairings: tuple[Pairing, ...]
    group_ball: np.ndarray
    R_search: float
    basepoint: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    thin: ThinPart = field(default_factory=ThinPart)
    volume: float | None = None

    @cached_property
    def orbit(self) -> np.ndarray:
        return normalize(self.group_ball @ self.basepoint)

    @cached_property
    def displacement(self) -> np.ndarray:
        return _distance(self.orbit, self.basepoint[None, :])

    @cached_property
    def domain_radius(self) -> float:
        """Largest distance from the basepoint to a point of the domain."""
        return float(np.max(_distance(self.domain.vertices, self.basepoint[None, :])))

    @cached_property
    def _orbit_tree(self) -> cKDTree:
        return cKDTree(self.orbit)

    @cached_property
    def inverse_index(self) -> np.ndarray:
        inv = np.einsum("ij,mkj,kl->mil", ETA, self.group_ball, ETA)
        return self.lookup(normalize(inv @ self.basepoint))

    def lookup(self, orbit_points: np.ndarray) -> np.ndarray:
        """Indices of group elements whose image of the basepoint is given."""
        pts = np.atleast_2d(orbit_points)
        d, idx = self._orbit_tree.query(pts)
        scale = np.maximum(1.0, np.abs(pts).max(axis=1))
        if np.any(d > 1e-6 * scale):
            raise SearchRadiusExhausted("group element not present in the deck ball")
        return idx

    def multiply(self, i: int, j: int) -> int:
        """Index of ``g_i g_j`` in the ball (memoised)."""
        cache = self.__dict__.setdefault("_mul_cache", {})
        key = (i, j)
        if key not in cache:
            p = normalize(self.group_ball[i] @ self.orbit[j])
            cache[key] = int(self.lookup(p[None, :])[0])
        return cache[key]

    def inverse(self, i: int) -> int:
        return int(self.inverse_index[i])

    def point_radius(self, points: np.ndarray) -> np.ndarray:
        return _distance(points, self.basepoint)

    def reduce(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Move points of the cover into the Dirichlet domain of the basepoint.

        Returns the reduced points and the index of the applied element.
        """
        x = np.atleast_2d(_coords(points))
        inner = x @ (self.orbit * _SIG).T
        best = np.argmax(inner, axis=1)
        gi = self.inverse_index[best]
        reduced = normalize(np.einsum("nij,nj->ni", self.group_ball[gi], x))
        return reduced, gi

    def lift_orbit(self, q: np.ndarray) -> np.ndarray:
        """All translates g q, g in the deck ball, shape (m, 4)."""
        return normalize(self.group_ball @ q)

    def nearest_translate(self, P, q) -> tuple[np.ndarray, np.ndarray]:
        """min_g d(p, g q) for each row p, with the minimising element.

        Certified: raises SearchRadiusExhausted when an element outside the
        ball could still be closer.
        """
        P = np.atleast_2d(_coords(P))
        q = _coords(q)
        lifts = self.lift_orbit(q)
        rho_q = float(_distance(q, self.basepoint))
        rho_p = self.point_radius(P)
        # candidates limited by the identity translate and the triangle inequality
        d_id = _distance(P, q[None, :])
        reach = np.max(rho_p + d_id)
        lift_rad = _distance(lifts, self.basepoint[None, :])
        cand = np.flatnonzero(lift_rad <= reach + 1e-12)
        D = pairwise_distance(P, lifts[cand])
        k = np.argmin(D, axis=1)
        dmin = D[np.arange(len(P)), k]
        need = rho_p + dmin + rho_q
        if np.any(need > self.R_search + 1e-12):
            raise SearchRadiusExhausted(
                f"quotient distance needs search radius {need.max():.4f} > {self.R_search:.4f}"
            )
        return dmin, cand[k]

    def translates_within(self, p, q, radius: float) -> tuple[np.ndarray, np.ndarray]:
        """Indices g and distances with d(p, g q) <= radius."""
        p = _coords(p)
        q = _coords(q)
        rho_p = float(_distance(p, self.basepoint))
        rho_q = float(_distance(q, self.basepoint))
        if rho_p + rho_q + radius > self.R_search + 1e-12:
            raise SearchRadiusExhausted("translate search exceeds the deck ball")
        lifts = self.lift_orbit(q)
        d = _distance(lifts, p[None, :])
        idx = np.flatnonzero(d <= radius)
        return idx, d[idx]

    def with_thin(self, thin: ThinPart) -> "ManifoldModel":
        return ManifoldModel(
            name=self.name,
            domain=self.domain,
            pairings=self.pairings,
            group_ball=self.group_ball,
            R_search=self.R_search,
            basepoint=self.basepoint,
            thin=thin,
            volume=self.volume,
        )

    def sample_domain(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Volume-uniform random points of the fundamental domain."""
        return sample_polyhedron(self.domain, n, rng)


def sample_polyhedron(poly: ConvexPolyhedron, n: int, rng: np.random.Generator) -> np.ndarray:
    """Hyperbolic-volume-uniform points of a compact polyhedron by rejection.

    Klein coordinates are drawn uniformly in the bounding box and accepted
    with probability proportional to the density ``(1 - |k|^2)^-2``.
    """
    kv = poly.vertices[:, 1:] / poly.vertices[:, :1]
    lo, hi = kv.min(axis=0), kv.max(axis=0)
    rmax = np.max(np.einsum("ij,ij->i", kv, kv))
    dmax = (1.0 - rmax) ** -2
    out = []
    have = 0
    while have < n:
        m = max(1024, 4 * (n - have))
        k = rng.uniform(lo, hi, size=(m, 3))
        r2 = np.einsum("ij,ij->i", k, k)
        ok = r2 < rmax
        k, r2 = k[ok], r2[ok]
        acc = rng.uniform(size=len(k)) * dmax <= (1.0 - r2) ** -2
        k = k[acc]
        x = from_klein(k)
        x = x[poly.contains(x, tol=0.0)]
        out.append(x)
        have += len(x)
    return np.concatenate(out)[:n]


# ---------------------------------------------------------------------------
# deck group generation


def generate_group_ball(
    generators: Sequence[np.ndarray],
    R_search: float,
    domain_radius: float,
    basepoint: np.ndarray | None = None,
) -> np.ndarray:
    """All words in the generators moving the basepoint at most ``R_search``.

    Breadth-first search through the Cayley graph, pruned at
    ``R_search + domain_radius``: the tiles crossed by the geodesic from the
    basepoint to ``g o`` all have centres within that distance, so no element
    of the ball is missed.
    """
    o = np.array([1.0, 0.0, 0.0, 0.0]) if basepoint is None else np.asarray(basepoint, float)
    gens = lorentz_renormalize(np.asarray(generators, float))
    gen_o = gens @ o
    limit = R_search + domain_radius
    mats = [np.eye(4)[None]]
    known = o[None].copy()
    frontier = np.eye(4)[None]
    while len(frontier):
        # images of the basepoint first; only surviving products are formed
        cp = np.einsum("fij,gj->fgi", frontier, gen_o).reshape(-1, 4)
        disp = np.arccosh(np.maximum(-(cp @ (o * _SIG)), 1.0))
        keep = np.flatnonzero(disp <= limit + 1e-9)
        if not len(keep):
            break
        cp = cp[keep]
        tol = 1e-6 * max(1.0, float(np.abs(cp).max()))
        d, _ = cKDTree(known).query(cp, distance_upper_bound=tol)
        fresh = np.flatnonzero(np.isinf(d))
        keep, cp = keep[fresh], cp[fresh]
        if len(cp) > 1:
            pairs = cKDTree(cp).query_pairs(tol, output_type="ndarray")
            if len(pairs):
                drop = np.zeros(len(cp), bool)
                drop[pairs.max(axis=1)] = True
                keep, cp = keep[~drop], cp[~drop]
        if not len(keep):
            break
        fi, gi = np.divmod(keep, len(gens))
        frontier = lorentz_renormalize(frontier[fi] @ gens[gi])
        mats.append(frontier)
        known = np.concatenate([known, cp])
    allm = np.concatenate(mats)
    allp = normalize(allm @ o)
    disp = _distance(allp, o[None, :])
    order = np.argsort(disp, kind="stable")
    allm, disp = allm[order], disp[order]
    return allm[disp <= R_search + 1e-9]


def check_group_ball(m: ManifoldModel, n_pairs: int = 20000, seed: int = 0) -> dict:
    """Saturation diagnostics: identity, inverses and sampled closure."""
    ball = m.group_ball
    report = {"size": len(ball), "identity": bool(np.allclose(ball[0], np.eye(4)))}
    inv = np.einsum("ij,mkj,kl->mil", ETA, ball, ETA)
    ip = normalize(inv @ m.basepoint)
    d, _ = m._orbit_tree.query(ip)
    interior = m.displacement <= m.R_search - 1e-6
    ok = d < 1e-6 * np.maximum(1.0, np.abs(ip).max(axis=1))
    report["closed_under_inverse"] = bool(np.all(ok[interior]))
    rng = np.random.default_rng(seed)
    i = rng.integers(0, len(ball), n_pairs)
    j = rng.integers(0, len(ball), n_pairs)
    prod = normalize(np.einsum("nij,nj->ni", ball[i], m.orbit[j]))
    disp = _distance(prod, m.basepoint[None, :])
    inside = disp <= m.R_search - 1e-6
    d, _ = m._orbit_tree.query(prod[inside])
    report["sampled_products"] = int(inside.sum())
    report["closed_under_products"] = bool(np.all(d < 1e-6 * np.maximum(1.0, np.abs(prod[inside]).max(axis=1))))
    return report


# ---------------------------------------------------------------------------
# the operations


def quotient_distance(m: ManifoldModel, p, q) -> float | np.ndarray:
    """Distance in M: min over the deck ball of d(p, g q)."""
    P = _coords(p)
    single = P.ndim == 1
    d, _ = m.nearest_translate(P, _coords(q))
    return float(d[0]) if single else d


def injectivity_radius(m: ManifoldModel, p) -> float | np.ndarray:
    """Half the shortest displacement of p by a non-trivial deck element."""
    P = np.atleast_2d(_coords(p))
    rho = m.point_radius(P)
    # an upper bound from the pairings limits which ball elements can compete
    gens = np.array([q.isometry.matrix for q in m.pairings])
    gp = np.einsum("gij,nj->ngi", gens, P)
    ub = np.arccosh(np.maximum(-np.einsum("ngi,ni->ng", gp * _SIG, P).min(axis=1), 1.0))
    reach = 2 * rho + ub
    order = np.argsort(reach)
    dmin = np.empty(len(P))
    step = 512
    for s in range(0, len(P), step):
        idx = order[s : s + step]
        stop = int(np.searchsorted(m.displacement, reach[idx].max() + 1e-9, side="right"))
        chunk = P[idx]
        lifts = np.einsum("gij,nj->ngi", m.group_ball[1:stop], chunk)
        inner = -np.einsum("ngi,ni->ng", lifts * _SIG, chunk)
        dmin[idx] = np.arccosh(np.maximum(inner.min(axis=1), 1.0))
    need = 2 * rho + dmin
    if np.any(need > m.R_search + 1e-12):
        raise SearchRadiusExhausted(
            f"injectivity radius needs search radius {need.max():.4f} > {m.R_search:.4f}"
        )
    out = 0.5 * dmin
    return float(out[0]) if _coords(p).ndim == 1 else out


def classify_thick_thin(m: ManifoldModel, mu: float) -> Callable[[np.ndarray], np.ndarray]:
    """Return ``p -> label`` with -1 for thick points and the tube index otherwise."""
    if mu <= 0:
        raise ValueError("mu must be positive")

    def classify(points) -> np.ndarray:
        P = np.atleast_2d(_coords(points))
        inj = np.atleast_1d(injectivity_radius(m, P))
        labels = np.full(len(P), -1, dtype=int)
        thin = np.flatnonzero(inj < mu)
        if len(thin) == 0:
            return labels
        tube_of = tube_membership(m, P[thin])
        if np.any(tube_of < 0):
            raise InconsistentThinPart(
                f"{int(np.sum(tube_of < 0))} thin points lie in no declared tube"
            )
        labels[thin] = tube_of
        return labels

    return classify


def tube_membership(m: ManifoldModel, points: np.ndarray) -> np.ndarray:
    """Index of the declared tube containing each point, or -1."""
    P = np.atleast_2d(points)
    out = np.full(len(P), -1, dtype=int)
    for t, tube in enumerate(m.thin.tubes):
        # distance to the orbit of the core: pull the points back instead
        inv = np.einsum("ij,mkj,kl->mil", ETA, m.group_ball, ETA)
        best = np.full(len(P), np.inf)
        for g in inv:
            best = np.minimum(best, tube.distance_to_core(normalize(P @ g.T)))
        out[(best <= tube.radius) & (out < 0)] = t
    return out


# ---------------------------------------------------------------------------
# serialisation


def _face_ids(domain: ConvexPolyhedron) -> list[int]:
    return sorted(domain.faces)


def to_json(m: ManifoldModel, include_group_ball: bool = True) -> dict:
    data = {
        "meta": {"name": m.name, "R_search": m.R_search, "volume": m.volume},
        "basepoint": m.basepoint.tolist(),
        "vertices": m.domain.vertices.tolist(),
        "halfspaces": [p.normal.tolist() for p in m.domain.planes],
        "pairings": [
            {
                "source": p.source_face,
                "target": p.target_face,
                "matrix": p.isometry.matrix.reshape(-1).tolist(),
            }
            for p in m.pairings
        ],
    }
    if include_group_ball:
        data["group_ball"] = [g.reshape(-1).tolist() for g in m.group_ball]
    if m.thin.tubes:
        data["thin_tubes"] = [
            {
                "core": [t.core[0].tolist(), t.core[1].tolist()],
                "generator": t.generator.matrix.reshape(-1).tolist(),
                "radius": t.radius,
            }
            for t in m.thin.tubes
        ]
    return data


def from_json(data: dict) -> ManifoldModel:
    try:
        meta = data["meta"]
        planes = [GeodesicPlane(np.array(n, float)) for n in data["halfspaces"]]
        pairings = tuple(
            Pairing(int(p["source"]), int(p["target"]), Isometry(np.array(p["matrix"], float).reshape(4, 4)))
            for p in data["pairings"]
        )
    except (KeyError, TypeError) as exc:
        raise ManifoldFormatError(f"malformed manifold description: {exc}") from exc
    domain = intersect_halfspaces(planes)
    stored = np.array(data.get("vertices", []), float)
    if len(stored) and len(stored) != domain.n_vertices:
        raise ManifoldFormatError("stored vertices disagree with the half-spaces")
    basepoint = np.array(data.get("basepoint", [1.0, 0.0, 0.0, 0.0]), float)
    R = float(meta.get("R_search") or default_search_radius(domain, basepoint, 0.0))
    if "group_ball" in data:
        ball = np.array(data["group_ball"], float).reshape(-1, 4, 4)
    else:
        ball = generate_group_ball(
            [p.isometry.matrix for p in pairings],
            R,
            float(np.max(_distance(domain.vertices, basepoint[None, :]))),
            basepoint,
        )
    tubes = tuple(
        Tube(
            core=(np.array(t["core"][0], float), np.array(t["core"][1], float)),
            generator=Isometry(np.array(t["generator"], float).reshape(4, 4)),
            radius=float(t["radius"]),
        )
        for t in data.get("thin_tubes", [])
    )
    model = ManifoldModel(
        name=str(meta.get("name", "unnamed")),
        domain=domain,
        pairings=pairings,
        group_ball=ball,
        R_search=R,
        basepoint=basepoint,
        thin=ThinPart(tubes),
        volume=meta.get("volume"),
    )
    validate_pairings(model)
    return model


def load_manifold(path: str | Path) -> ManifoldModel:
    with open(path) as fh:
        return from_json(json.load(fh))


def save_manifold(m: ManifoldModel, path: str | Path, include_group_ball: bool = True) -> None:
    with open(path, "w") as fh:
        json.dump(to_json(m, include_group_ball), fh)


def default_search_radius(domain: ConvexPolyhedron, basepoint, epsilon: float) -> float:
    """Deck-ball radius covering every query the pipeline makes.

    Two points of the domain and an epsilon-scale neighbourhood need
    ``diam + 8 eps``; injectivity radii need ``diam`` plus twice the largest
    face distance (a displacement bound), padded by 0.2.
    """
    o = _coords(basepoint)
    diam = 2.0 * float(np.max(_distance(domain.vertices, o[None, :])))
    face = max(float(np.arcsinh(abs(minkowski(o, pl.normal)))) for pl in domain.planes)
    return max(diam + 8.0 * epsilon, diam + 2.0 * face + 0.2)


def validate_pairings(m: ManifoldModel, tol: float = 1e-7) -> None:
    """Every pairing maps its source face onto its target face."""
    faces = m.domain.faces
    verts = m.domain.vertices
    for p in m.pairings:
        if p.source_face not in faces or p.target_face not in faces:
            raise ManifoldFormatError(f"pairing refers to a missing face: {p}")
        src = verts[list(faces[p.source_face])]
        dst = verts[list(faces[p.target_face])]
        img = p.isometry.apply(src)
        D = pairwise_distance(img, dst)
        if D.min(axis=1).max() > tol or D.min(axis=0).max() > tol:
            raise ManifoldFormatError(
                f"pairing {p.source_face}->{p.target_face} does not map face onto face"
            )


# ---------------------------------------------------------------------------
# bundled fixture


def _icosahedron_directions() -> np.ndarray:
    phi = (1 + 5 ** 0.5) / 2
    dirs = []
    for s1 in (1, -1):
        for s2 in (1, -1):
            dirs += [(0, s1, s2 * phi), (s1, s2 * phi, 0), (s2 * phi, 0, s1)]
    U = np.array(dirs, float)
    return U / np.linalg.norm(U, axis=1)[:, None]


SEIFERT_WEBER_VOLUME = 11.199064693597421


@lru_cache(maxsize=4)
def seifert_weber(R_search: float | None = None, epsilon: float = 0.125) -> ManifoldModel:
    """The Seifert-Weber dodecahedral space.

    Regular hyperbolic dodecahedron with dihedral angle 2pi/5; each face is
    glued to the opposite face after a 3/10 twist about their common axis.
    """
    U = _icosahedron_directions()
    # inradius from the dihedral angle: cos(2pi/5) = sinh^2 r - cosh^2 r / sqrt 5
    c2 = (1 + np.cos(2 * np.pi / 5)) / (1 - 1 / 5 ** 0.5)
    r = float(np.arccosh(np.sqrt(c2)))
    planes = [GeodesicPlane.at_distance(u, r) for u in U]
    domain = intersect_halfspaces(planes)
    face_of = {j: j for j in domain.faces}
    pairings = []
    for i, u in enumerate(U):
        j = int(np.argmin(np.linalg.norm(U + u, axis=1)))
        g = Isometry.boost(u, 2 * r) @ Isometry.rotation(u, 3 * np.pi / 5)
        pairings.append(Pairing(face_of[j], face_of[i], g))
    o = np.array([1.0, 0.0, 0.0, 0.0])
    if R_search is None:
        R_search = default_search_radius(domain, o, epsilon)
    rho = float(np.max(_distance(domain.vertices, o[None, :])))
    ball = generate_group_ball([p.isometry.matrix for p in pairings], R_search, rho, o)
    model = ManifoldModel(
        name="seifert-weber",
        domain=domain,
        pairings=tuple(pairings),
        group_ball=ball,
        R_search=float(R_search),
        basepoint=o,
        volume=SEIFERT_WEBER_VOLUME,
    )
    validate_pairings(model)
    return model
