import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from h3width import hkernel as hk
from h3width import quotient_manifold as qm
from h3width import width_pipeline as wp

# Frozen by orbit enumeration over the full deck ball (min_g d(o, g o) / 2).
INJ_AT_BASEPOINT = 0.9963844978473166


def brute_quotient_distance(m, p, q):
    lifts = hk.normalize(m.group_ball @ q)
    return float(np.min(hk.distance(lifts, p[None, :])))


@pytest.fixture(scope="module")
def domain_points(sw):
    return sw.sample_domain(200, np.random.default_rng(7))


def test_fixture_domain_is_dodecahedron(sw):
    d = sw.domain
    assert (d.n_faces, d.n_edges, d.n_vertices) == (12, 30, 20)
    assert d.is_simple
    assert len(sw.pairings) == 12


def test_dodecahedron_dihedral_angle(sw):
    # angle between adjacent face planes: cos = -<n1, n2>
    P = sw.domain.planes
    f1, f2 = sw.domain.edge_faces[0]
    cos = -hk.minkowski(P[f1].normal, P[f2].normal)
    assert math.acos(cos) == pytest.approx(2 * math.pi / 5, abs=1e-9)


def test_pairings_map_faces(sw):
    qm.validate_pairings(sw)
    for p in sw.pairings:
        m = p.isometry.matrix
        assert np.abs(m.T @ hk.ETA @ m - hk.ETA).max() < 1e-9


def test_group_ball_saturation(sw):
    rep = qm.check_group_ball(sw, n_pairs=5000)
    assert rep["identity"] and rep["closed_under_inverse"] and rep["closed_under_products"]
    assert np.all(np.diff(sw.displacement) >= -1e-12)
    assert sw.displacement[-1] <= sw.R_search + 1e-9


def test_quotient_distance_examples(sw, domain_points):
    p = domain_points[0]
    assert qm.quotient_distance(sw, p, p) == pytest.approx(0.0, abs=1e-7)
    # a translate of p by a pairing is the same point of M
    for pair in sw.pairings[:4]:
        q = pair.isometry.apply(p)
        assert qm.quotient_distance(sw, p, q) == pytest.approx(0.0, abs=1e-7)


def test_quotient_distance_against_brute_force(sw, domain_points):
    P, Q = domain_points[:30], domain_points[30:60]
    for p, q in zip(P, Q):
        d = qm.quotient_distance(sw, p, q)
        assert d == pytest.approx(brute_quotient_distance(sw, p, q), abs=1e-10)
        assert abs(d - qm.quotient_distance(sw, q, p)) <= 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 199), st.integers(0, 199), st.integers(0, 199))
def test_quotient_distance_triangle(sw, domain_points, i, j, k):
    a, b, c = domain_points[i], domain_points[j], domain_points[k]
    ab, bc, ac = (qm.quotient_distance(sw, x, y) for x, y in ((a, b), (b, c), (a, c)))
    assert ac <= ab + bc + 1e-9
    # no two points of M are further apart than the domain diameter
    assert ac <= 2 * sw.domain_radius + 1e-9


def test_injectivity_radius_at_basepoint(sw):
    assert qm.injectivity_radius(sw, sw.basepoint) == pytest.approx(INJ_AT_BASEPOINT, abs=1e-12)


def test_injectivity_radius_min_property(sw, domain_points):
    P = domain_points[:50]
    inj = qm.injectivity_radius(sw, P)
    for pair in sw.pairings:
        assert np.all(inj <= 0.5 * hk.distance(P, pair.isometry.apply(P)) + 1e-12)
    assert np.all(inj > 0.8)


def test_reduce_lands_in_domain(sw, rng):
    X = hk.sample_ball(sw.basepoint, 3.0, 200, rng)
    R, g = sw.reduce(X)
    assert np.all(sw.domain.contains(R, tol=1e-9))
    assert np.allclose(np.einsum("nij,nj->ni", sw.group_ball[g], X), R, atol=1e-8)


def test_search_radius_is_certified():
    m = qm.seifert_weber()
    small = qm.ManifoldModel(
        name="truncated",
        domain=m.domain,
        pairings=m.pairings,
        group_ball=m.group_ball[:13],
        R_search=float(m.displacement[12]),
        basepoint=m.basepoint,
    )
    with pytest.raises(qm.SearchRadiusExhausted):
        qm.injectivity_radius(small, small.domain.vertices[0])


def test_thick_everywhere_below_inj(sw, domain_points):
    classify = qm.classify_thick_thin(sw, 0.5)
    assert np.all(classify(domain_points[:100]) == -1)
    with pytest.raises(ValueError):
        qm.classify_thick_thin(sw, 0.0)


def _axis_tube(sw, radius):
    """Tube about the axis of the first pairing, which runs through the basepoint."""
    u = hk.to_klein(sw.pairings[0].isometry.apply(sw.basepoint))
    core = (sw.basepoint, hk.HPoint.polar(0.5, u).coords)
    return qm.Tube(core=core, generator=sw.pairings[0].isometry, radius=radius)


def test_thin_point_on_declared_core(sw):
    m = sw.with_thin(qm.ThinPart((_axis_tube(sw, 0.3),)))
    label = qm.classify_thick_thin(m, 1.0)(sw.basepoint)
    assert label.tolist() == [0]


def test_undeclared_thin_point_is_an_error(sw, domain_points):
    classify = qm.classify_thick_thin(sw, 1.5)
    with pytest.raises(qm.InconsistentThinPart):
        classify(domain_points[:5])


def test_classifier_matches_direct_threshold(sw, domain_points):
    mu = 1.0
    # a tube wide enough to hold every thin point isolates the threshold logic
    m = sw.with_thin(qm.ThinPart((_axis_tube(sw, 2 * sw.domain_radius),)))
    P = domain_points[:120]
    labels = qm.classify_thick_thin(m, mu)(P)
    direct = qm.injectivity_radius(sw, P) >= mu
    assert np.array_equal(labels == -1, direct)
    assert 0 < direct.sum() < len(P)


def test_mv_constants():
    c = qm.MVConstants.from_margulis(mu=0.3, mu1=0.2, mu2=0.4, delta=0.6)
    assert c.epsilon == pytest.approx(0.05)
    with pytest.raises(ValueError):
        qm.MVConstants.from_margulis(mu=0.1, mu1=0.2, mu2=0.4, delta=0.6)
    d = qm.MVConstants.desk(0.2, 0.9)
    assert d.epsilon == 0.2
    with pytest.raises(ValueError):
        qm.MVConstants.desk(0.5, 0.9)


def test_json_round_trip(sw, tmp_path):
    path = tmp_path / "m.json"
    qm.save_manifold(sw, path)
    m2 = qm.load_manifold(path)
    assert m2.group_ball.shape == sw.group_ball.shape
    assert m2.R_search == sw.R_search
    p = sw.sample_domain(3, np.random.default_rng(0))
    assert qm.quotient_distance(m2, p[0], p[1]) == pytest.approx(qm.quotient_distance(sw, p[0], p[1]))


def test_bundled_file_matches_builtin(sw):
    data = json.loads(wp.bundled_manifold_path().read_text())
    assert "group_ball" not in data
    m = qm.from_json(data)
    assert len(m.group_ball) == len(sw.group_ball)
    assert m.volume == pytest.approx(sw.volume)


def test_malformed_manifold_rejected():
    with pytest.raises(qm.ManifoldFormatError):
        qm.from_json({"meta": {}})
    m = qm.seifert_weber()
    data = qm.to_json(m)
    data["pairings"][0]["matrix"] = np.eye(4).reshape(-1).tolist()
    with pytest.raises(qm.ManifoldFormatError):
        qm.from_json(data)
