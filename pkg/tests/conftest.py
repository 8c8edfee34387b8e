from functools import lru_cache

import numpy as np
import pytest

from h3width import quotient_manifold as qm
from h3width import voronoi_complex as vc

FIXTURE_EPS = 0.2


@lru_cache(maxsize=8)
def sw_complex(seed: int, eps: float = FIXTURE_EPS) -> vc.VoronoiComplex:
    """Voronoi complex of the bundled fixture, shared across test modules."""
    m = qm.seifert_weber()
    return vc.build_voronoi(m, vc.sample_maximal(m, eps, seed), seed=seed)


@pytest.fixture(scope="session")
def sw():
    return qm.seifert_weber()


@pytest.fixture(scope="session")
def sw_space(sw):
    return vc.as_space(sw)


@pytest.fixture(scope="session")
def complex0():
    return sw_complex(0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_points(rng, n, rmax=1.5):
    """Points of H^3 within ``rmax`` of the origin, uniform in direction."""
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    r = rng.uniform(0, rmax, n)
    return np.column_stack([np.cosh(r), np.sinh(r)[:, None] * d])


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
