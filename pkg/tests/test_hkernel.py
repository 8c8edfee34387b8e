import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from h3width import hkernel as hk

O = np.array([1.0, 0.0, 0.0, 0.0])

radii = st.floats(0.0, 3.0, allow_nan=False)
unit = st.tuples(*[st.floats(-1, 1)] * 3).filter(lambda v: np.linalg.norm(v) > 1e-3)


def polar(r, d):
    d = np.asarray(d, float)
    return hk.HPoint.polar(r, d).coords


def cosh_law_angle(a, b, c):
    """Angle opposite side c in a hyperbolic triangle with sides a, b, c."""
    return math.acos((math.cosh(a) * math.cosh(b) - math.cosh(c)) / (math.sinh(a) * math.sinh(b)))


# -- points and distance ------------------------------------------------------


def test_hpoint_rejects_off_sheet():
    with pytest.raises(hk.PreconditionError):
        hk.HPoint(np.array([1.0, 1.0, 0.0, 0.0]))
    with pytest.raises(hk.PreconditionError):
        hk.HPoint(np.array([-1.0, 0.0, 0.0, 0.0]))


def test_distance_examples():
    assert hk.distance(O, O) == 0.0
    q = np.array([math.cosh(1), math.sinh(1), 0, 0])
    assert hk.distance(O, q) == pytest.approx(1.0, abs=1e-12)


def test_klein_round_trip(rng):
    k = rng.uniform(-0.5, 0.5, size=(50, 3))
    assert np.allclose(hk.to_klein(hk.from_klein(k)), k)


@given(radii, unit, radii, unit)
def test_distance_symmetric_and_triangle(r1, d1, r2, d2):
    p, q = polar(r1, d1), polar(r2, d2)
    assert abs(hk.distance(p, q) - hk.distance(q, p)) <= 1e-9
    assert hk.distance(p, q) <= hk.distance(p, O) + hk.distance(O, q) + 1e-9


@given(radii, unit, radii, unit, st.floats(0, 2), unit, st.floats(0, 6.3))
def test_isometries_preserve_distance(r1, d1, r2, d2, s, axis, ang):
    p, q = polar(r1, d1), polar(r2, d2)
    g = hk.Isometry.boost(axis, s) @ hk.Isometry.rotation(axis, ang)
    assert hk.distance(g(p), g(q)) == pytest.approx(hk.distance(p, q), abs=1e-7)
    assert g.inverse()(g(p)) == pytest.approx(p, abs=1e-8)


def test_isometry_rejects_bad_matrix():
    with pytest.raises(hk.PreconditionError):
        hk.Isometry(2 * np.eye(4))
    with pytest.raises(hk.PreconditionError):
        hk.Isometry(np.diag([-1.0, 1, 1, 1]))


def test_midpoint_equidistant(rng):
    P = polar(0.7, (1, 2, 3))
    Q = polar(1.3, (-1, 0, 2))
    m = hk.midpoint(P, Q)
    assert hk.distance(m, P) == pytest.approx(hk.distance(P, Q) / 2, abs=1e-10)
    assert hk.distance(m, Q) == pytest.approx(hk.distance(P, Q) / 2, abs=1e-10)


def test_transvection_maps_origin():
    p = polar(1.1, (0.3, -0.2, 0.9))
    T = hk.transvection(p)
    assert T @ O == pytest.approx(p)
    hk.Isometry(T)  # is Lorentz


# -- bisectors ------------------------------------------------------------------


def test_bisector_symmetric_pair():
    p = np.array([math.cosh(1), math.sinh(1), 0, 0])
    q = np.array([math.cosh(1), -math.sinh(1), 0, 0])
    pl = hk.bisector(p, q)
    assert pl.on_plane(O)
    assert np.allclose(np.abs(pl.normal), [0, 1, 0, 0])
    assert pl.contains(p) and not pl.contains(q)


def test_bisector_equidistance_sampled(rng):
    p, q = polar(0.4, (1, 1, 0)), polar(1.2, (0, -1, 2))
    pl = hk.bisector(p, q)
    assert pl.on_plane(hk.midpoint(p, q))
    # rejection-sample points near the plane and project onto it
    x = hk.sample_ball(hk.midpoint(p, q), 1.0, 4000, rng)
    n = pl.normal
    y = x - hk.minkowski(x, n)[:, None] * n  # Minkowski-orthogonal projection
    y = hk.normalize(y[y[:, 0] > 0])
    assert np.all(pl.on_plane(y, tol=1e-9))
    assert np.max(np.abs(hk.distance(y, p) - hk.distance(y, q))) <= 1e-9


def test_bisector_of_coincident_points():
    with pytest.raises(hk.DegeneratePairError):
        hk.bisector(O, O)


# -- closed forms against quadrature --------------------------------------------


@pytest.mark.parametrize("r", [0.1, 0.5, 1.0, 2.0])
def test_ball_volume_quadrature(r):
    ref = quad(lambda s: 4 * math.pi * math.sinh(s) ** 2, 0, r)[0]
    assert hk.ball_volume(r) == pytest.approx(ref, rel=1e-12)


def test_ball_volume_examples():
    assert hk.ball_volume(0.0) == 0.0
    assert hk.ball_volume(1.0) == pytest.approx(5.1113, rel=1e-4)
    assert hk.ball_volume(0.1) == pytest.approx(4 / 3 * math.pi * 0.1**3, rel=0.02)
    tiny = 1e-4
    assert hk.ball_volume(tiny) == pytest.approx(4 / 3 * math.pi * tiny**3, rel=1e-6)


@given(st.floats(0.0, 4.0), st.floats(1e-6, 1.0))
def test_ball_volume_strictly_increasing(r, dr):
    assert hk.ball_volume(r + dr) > hk.ball_volume(r)


@given(st.floats(0.05, 3.0))
def test_ball_volume_derivative_is_sphere_area(r):
    h = 1e-5
    fd = (hk.ball_volume(r + h) - hk.ball_volume(r - h)) / (2 * h)
    assert fd == pytest.approx(hk.sphere_area(r), rel=1e-6)


@pytest.mark.parametrize("r,expected", [(0.0, 0.0), (0.5, 0.80195), (1.0, 3.41227)])
def test_equatorial_disc_area(r, expected):
    ref = quad(lambda s: 2 * math.pi * math.sinh(s), 0, r)[0]
    assert hk.equatorial_disc_area(r) == pytest.approx(ref, abs=1e-12)
    assert hk.equatorial_disc_area(r) == pytest.approx(expected, abs=1e-4)


def test_sphere_area_examples():
    assert hk.sphere_area(0.0) == 0.0
    assert hk.sphere_area(1.0) == pytest.approx(17.35539, abs=1e-4)


@given(st.floats(0.05, 1.5), st.floats(0.05, 1.5), st.floats(0.3, 2.8))
def test_triangle_area_gauss_bonnet(a, b, gamma):
    # two sides from the origin with angle gamma between them
    A = polar(a, (1, 0, 0))
    B = polar(b, (math.cos(gamma), math.sin(gamma), 0))
    c = hk.distance(A, B)
    alpha = cosh_law_angle(a, c, b)
    beta = cosh_law_angle(b, c, a)
    assert hk.triangle_area(O, A, B) == pytest.approx(math.pi - alpha - beta - gamma, abs=1e-7)


def test_sample_ball_radii(rng):
    X = hk.sample_ball(O, 1.0, 20000, rng)
    d = hk.distance(X, O)
    assert d.max() <= 1.0 + 1e-12
    # fraction inside radius 0.5 matches the volume ratio
    assert np.mean(d <= 0.5) == pytest.approx(hk.ball_volume(0.5) / hk.ball_volume(1.0), abs=0.01)


def test_radius_quantile_inverts_volume():
    u = np.linspace(0, 1, 11)
    rho = hk.ball_radius_quantile(u, 0.8)
    assert np.allclose(hk._ball_volumes(rho) / hk.ball_volume(0.8), u, atol=1e-10)


# -- polyhedra ------------------------------------------------------------------


def test_tetrahedron_from_four_planes():
    dirs = [(1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)]
    P = hk.intersect_halfspaces([hk.GeodesicPlane.at_distance(d, 0.2) for d in dirs])
    assert (P.n_faces, P.n_edges, P.n_vertices) == (4, 6, 4)
    assert P.euler == 2
    assert P.is_simple


def test_cube_from_axis_bisectors():
    axes = [s * e for e in np.eye(3) for s in (1, -1)]
    planes = [hk.bisector(O, polar(1.0, a)) for a in axes]
    P = hk.intersect_halfspaces(planes)
    assert (P.n_faces, P.n_edges, P.n_vertices) == (6, 12, 8)
    # direct construction: cube corners are where three planes at distance 1/2 meet
    k = math.tanh(0.5)
    corners = hk.from_klein(np.array([[sx, sy, sz] for sx in (-k, k) for sy in (-k, k) for sz in (-k, k)]))
    D = hk.pairwise_distance(P.vertices, corners)
    assert D.min(axis=1).max() < 1e-9
    assert np.all(P.contains(P.vertices))
    # each edge lies in exactly two faces
    assert all(len(ef) == 2 for ef in P.edge_faces)


def test_contradictory_planes_are_empty():
    a = hk.GeodesicPlane(-hk.GeodesicPlane.at_distance((1, 0, 0), 0.5).normal)  # the far side of x = 1/2
    b = hk.GeodesicPlane.at_distance((1, 0, 0), 0.2)  # the near side of x = 0.2
    box = [hk.GeodesicPlane.at_distance(d, 1.0) for d in ((0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1))]
    with pytest.raises(hk.EmptyIntersectionError):
        hk.intersect_halfspaces([a, b] + box)


def test_unbounded_intersection():
    with pytest.raises(hk.UnboundedIntersectionError):
        hk.intersect_halfspaces([hk.GeodesicPlane.at_distance((1, 0, 0), 0.3)])


@settings(max_examples=25, deadline=None)
@given(st.lists(unit, min_size=12, max_size=20, unique=True), st.floats(0.2, 0.35))
def test_random_polyhedron_lattice(dirs, dist):
    dirs = np.array(dirs, float)
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    box = [s * e for e in np.eye(3) for s in (1, -1)]
    planes = [hk.GeodesicPlane.at_distance(d, dist) for d in dirs]
    planes += [hk.GeodesicPlane.at_distance(d, 0.3) for d in box]
    P = hk.intersect_halfspaces(planes)
    assert P.euler == 2
    assert np.all(P.contains(P.vertices, tol=hk.TAU_GEOM))
    assert all(len(ef) == 2 for ef in P.edge_faces)
