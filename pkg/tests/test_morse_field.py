import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq, minimize_scalar

from conftest import sw_complex
from h3width import hkernel as hk
from h3width import morse_field as mf
from h3width import oracles
from h3width import quotient_manifold as qm


def half_volume_root(eps):
    """Radius whose ball holds half the volume of B(eps / 2), by bisection on the closed form."""
    V = lambda r: math.pi * (math.sinh(2 * r) - 2 * r)
    return brentq(lambda t: V(t) - 0.5 * V(eps / 2), 0.0, eps / 2, xtol=1e-14)


@pytest.fixture(scope="module")
def dist_field(sw):
    return mf.distance_to_point(sw, sw.basepoint)


@pytest.fixture(scope="module")
def pts(sw):
    return sw.sample_domain(300, np.random.default_rng(21))


@pytest.fixture(scope="module")
def complex1():
    return sw_complex(0, 1.0)


# -- fields ---------------------------------------------------------------------


def test_distance_field_is_quotient_distance(sw, dist_field, pts):
    assert np.allclose(dist_field(pts), qm.quotient_distance(sw, pts, sw.basepoint), atol=1e-12)


@pytest.mark.parametrize("kind", ["distance", "bumps", "axis"])
def test_fields_are_deck_invariant(sw, pts, kind):
    if kind == "distance":
        f = mf.distance_to_point(sw, pts[0])
    elif kind == "bumps":
        f = mf.radial_bump_sum(sw, pts[:3], [1.0, -0.5, 2.0], 0.6)
    else:
        f = mf.axis_sweep(sw, 3)
    base = f(pts[:100])
    for pair in sw.pairings[::3]:
        assert np.allclose(f(pair.isometry.apply(pts[:100])), base, atol=1e-9)


@pytest.mark.parametrize("kind", ["distance", "bumps", "axis"])
def test_lipschitz_bound(sw, pts, kind, rng):
    f = {
        "distance": lambda: mf.distance_to_point(sw, pts[5]),
        "bumps": lambda: mf.radial_bump_sum(sw, pts[:2], [1.0, 1.0], 0.5),
        "axis": lambda: mf.axis_sweep(sw, 0),
    }[kind]()
    P = pts[:150]
    Q = np.array([hk.sample_ball(p, 0.2, 1, rng)[0] for p in P])
    d = hk.distance(P, Q)
    assert np.all(np.abs(f(P) - f(Q)) <= f.lipschitz * d + 1e-9)


def test_anchored_and_clustered_agree(sw, pts):
    f = mf.axis_sweep(sw, 1)
    x = pts[0]
    Y = hk.sample_ball(x, 0.3, 200, np.random.default_rng(0))
    assert np.allclose(f.evaluate(Y, anchor=x, radius=0.3), f(Y), atol=1e-12)


@given(st.floats(-5, 5))
@settings(max_examples=20, deadline=None)
def test_shift_adds_constant(dist_field, pts, c):
    assert np.allclose(dist_field.shifted(c)(pts[:20]), dist_field(pts[:20]) + c)


def test_field_validation(sw):
    with pytest.raises(ValueError):
        mf.MorseField("nope", {}, None)
    with pytest.raises(ValueError):
        mf.radial_bump_sum(sw, [sw.basepoint], [1.0, 2.0], 0.5)


def test_flat_axis_field():
    torus = oracles.FlatTorusModel((1.0, 2.0, 1.0))
    f = mf.axis_sweep(torus, 1)
    assert f.lipschitz == pytest.approx(2 * math.pi / 2.0)
    y = np.array([[0.3, 0.0, 0.2], [0.3, 1.0, 0.2], [0.3, 2.0, 0.2]])
    assert np.allclose(f(y), [-1.0, 1.0, -1.0])


# -- sublevel volumes --------------------------------------------------------------


def test_sublevel_volume_examples(sw, dist_field):
    o = sw.basepoint
    r = 0.8
    assert mf.sublevel_ball_volume(dist_field, o, r, -0.1, 4096, 0) == 0.0
    assert mf.sublevel_ball_volume(dist_field, o, r, 1.0, 4096, 0) == pytest.approx(hk.ball_volume(r))


def test_sublevel_nested_ball(sw, pts):
    x = pts[3]
    f = mf.distance_to_point(sw, x)
    r, n = 0.8, 1 << 16
    est = mf.sublevel_ball_volume(f, x, r, r / 2, n, seed=1)
    p = hk.ball_volume(r / 2) / hk.ball_volume(r)
    sigma = hk.ball_volume(r) * math.sqrt(p * (1 - p) / n)
    assert abs(est - hk.ball_volume(r / 2)) <= 3 * sigma


@settings(max_examples=15, deadline=None)
@given(st.floats(-1, 2), st.floats(0, 1))
def test_sublevel_volume_monotone(sw, pts, t, dt):
    f = mf.axis_sweep(sw, 2)
    a = mf.sublevel_ball_volume(f, pts[7], 0.4, t, 1024, 3)
    b = mf.sublevel_ball_volume(f, pts[7], 0.4, t + dt, 1024, 3)
    assert a <= b


def test_sublevel_needs_embedded_ball(sw, dist_field):
    with pytest.raises(mf.BallNotEmbeddedError):
        mf.sublevel_ball_volume(dist_field, sw.basepoint, 1.2, 0.5, 256, 0)


def test_ball_samples_are_antithetic(sw_space, pts):
    Y = mf.ball_samples(sw_space, pts[0], 0.5, 1024, 9)
    half = len(Y) // 2
    mid = hk.midpoint(Y[:half], Y[half:])
    assert np.allclose(mid, pts[0], atol=1e-9)
    assert np.array_equal(Y, mf.ball_samples(sw_space, pts[0], 0.5, 1024, 9))


# -- splitters -------------------------------------------------------------------


def test_splitter_matches_closed_form(sw, complex1):
    root = half_volume_root(1.0)
    assert root == pytest.approx(0.399, abs=5e-4)
    for i in range(min(3, complex1.n_cells)):
        f = mf.distance_to_point(sw, complex1.cells[i].center)
        s = mf.cell_splitter(f, complex1, i, n=200_000, seed=0)
        assert abs(s.t - root) <= 1e-3
        assert s.residual <= 1e-4 * hk.ball_volume(0.5)


def test_splitter_of_odd_field_is_symmetry_value(sw, complex1):
    c = complex1.cells[0].center
    f = mf.antisymmetric_bumps(sw, c, (0.3, 0.4, 0.5), 0.2, 0.8)
    s = mf.cell_splitter(f, complex1, 0, n=4096, seed=0)
    assert abs(s.t) <= 1e-12


@settings(max_examples=10, deadline=None)
@given(st.floats(-10, 10))
def test_splitter_shift(sw, complex1, c):
    f = mf.axis_sweep(sw, 0)
    a = mf.cell_splitter(f, complex1, 1, n=2048, seed=4)
    b = mf.cell_splitter(f.shifted(c), complex1, 1, n=2048, seed=4)
    assert b.t == pytest.approx(a.t + c, abs=1e-9)


def test_splitter_deterministic(sw, complex1):
    f = mf.axis_sweep(sw, 0)
    assert mf.cell_splitter(f, complex1, 2, 2048, 5) == mf.cell_splitter(f, complex1, 2, 2048, 5)


def test_constant_field_is_rejected(sw, complex1):
    f = mf.radial_bump_sum(sw, [sw.basepoint], [0.0], 0.5)
    with pytest.raises(mf.NonGenericFieldError):
        mf.cell_splitter(f, complex1, 0, 2048, 0)


def test_order_cells():
    S = [mf.CellSplitter(i, t, 0.0) for i, t in enumerate([0.3, -1.0, 2.0, 0.3])]
    o = mf.order_cells(S)
    assert o.order == (1, 0, 3, 2)
    assert o.ties == ((0, 3),)
    assert sorted(o.order) == [0, 1, 2, 3]
    assert list(o.values) == sorted(o.values)


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=30))
def test_order_is_sorted_permutation(ts):
    o = mf.order_cells([mf.CellSplitter(i, t, 0.0) for i, t in enumerate(ts)])
    assert sorted(o.order) == list(range(len(ts)))
    assert all(a <= b for a, b in zip(o.values, o.values[1:]))
    assert len(o.ties) == len(ts) - len(set(ts))


# -- level areas ------------------------------------------------------------------


def test_level_area_sphere_inside_domain(dist_field):
    la = mf.level_area(dist_field, t=0.5, h=0.1)
    assert la.area == pytest.approx(hk.sphere_area(0.5), rel=0.02)
    assert abs(la.area - la.refined) <= la.error


def test_level_area_outside_range(dist_field):
    assert mf.level_area(dist_field, t=-0.5, h=0.2).area == 0.0
    assert mf.level_area(dist_field, t=5.0, h=0.2).area == 0.0


def test_level_area_flags_splitter_levels(dist_field):
    with pytest.warns(mf.NonGenericLevelWarning):
        la = mf.level_area(dist_field, t=0.5, h=0.2, splitters=[0.1, 0.5], with_error=False)
    assert not la.generic


def test_level_areas_batch_matches_single(dist_field):
    ts = [0.3, 0.7]
    batch = mf.level_areas(dist_field, ts, 0.2)
    for t, a in zip(ts, batch):
        assert a == pytest.approx(mf.level_area(dist_field, t=t, h=0.2, with_error=False).area)


def test_level_area_halving_converges(dist_field):
    exact = hk.sphere_area(0.7)
    errs = [abs(mf.level_area(dist_field, t=0.7, h=h, with_error=False).area - exact) for h in (0.2, 0.1)]
    assert errs[1] < errs[0]


def test_field_range(dist_field, sw):
    lo, hi = mf.field_range(dist_field)
    assert lo == pytest.approx(0.0, abs=1e-12)
    assert hi == pytest.approx(sw.domain_radius, abs=1e-9)


@pytest.fixture(scope="module")
def morse(dist_field):
    return mf.morse_area_estimate(dist_field, None, 24, 0.2, refine=1)


def test_morse_area_against_sphere_family(sw, morse):
    # largest area of a sphere about o cut off by the Dirichlet domain
    res = minimize_scalar(
        lambda t: -oracles.sphere_area_in_domain(sw, t, 100_000), bounds=(0.8, 1.3), method="bounded"
    )
    assert morse.area == pytest.approx(-res.fun, rel=0.03)
    assert morse.t_max == pytest.approx(res.x, abs=0.1)


def test_morse_area_shift_invariant(dist_field, morse):
    shifted = mf.morse_area_estimate(dist_field.shifted(2.5), None, 24, 0.2, refine=1)
    assert shifted.area == pytest.approx(morse.area, rel=1e-9)
    assert shifted.t_max == pytest.approx(morse.t_max + 2.5)


def test_morse_area_refinement_keeps_maximum(dist_field, morse):
    coarse = mf.morse_area_estimate(dist_field, None, 24, 0.2, refine=0)
    assert morse.area >= coarse.area - morse.error
    assert morse.area == max(morse.areas)
