import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings, strategies as st

from gridmtd.grid import Branch, Bus, Generator, Grid, load_case

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_grid(n_bus, edges, slack=1, loads=None, gens=(), limits=None):
    """Grid from ``(from, to, x)`` triples; branch ids follow list order."""
    loads = loads or [0.0] * n_bus
    buses = tuple(Bus(i + 1, float(loads[i]), i + 1 == slack) for i in range(n_bus))
    branches = tuple(
        Branch(k + 1, f, t, x, np.inf if limits is None else limits[k])
        for k, (f, t, x) in enumerate(edges)
    )
    return Grid(buses, branches, tuple(gens), name=f"test{n_bus}")


@st.composite
def random_grids(draw):
    n = draw(st.integers(2, 12))
    edges = []
    for i in range(2, n + 1):  # random spanning tree keeps the grid connected
        j = draw(st.integers(1, i - 1))
        edges.append((j, i) if draw(st.booleans()) else (i, j))
    for _ in range(draw(st.integers(0, 8))):
        a, b = draw(st.integers(1, n)), draw(st.integers(1, n))
        if a != b:
            edges.append((a, b))
    xs = draw(st.lists(st.floats(0.01, 1.0), min_size=len(edges), max_size=len(edges)))
    lims = draw(st.lists(st.one_of(st.just(math.inf), st.floats(1.0, 500.0)),
                         min_size=len(edges), max_size=len(edges)))
    loads = draw(st.lists(st.floats(0.0, 200.0), min_size=n, max_size=n))
    slack = draw(st.integers(1, n))
    gens = [Generator(draw(st.integers(1, n)), 0.0, draw(st.floats(1.0, 400.0)), draw(st.floats(0.0, 80.0)))
            for _ in range(draw(st.integers(1, 3)))]
    return make_grid(n, [(f, t, x) for (f, t), x in zip(edges, xs)], slack, loads, gens, lims)


@pytest.fixture
def two_bus():
    return make_grid(2, [(1, 2, 0.1)], loads=[0.0, 10.0], gens=[Generator(1, 0.0, 100.0, 20.0)])


@pytest.fixture
def four_bus():
    # link 1 joins buses 1 and 4; the other two paths are {2,3,4} and {5,4}
    edges = [(1, 4, 0.2), (2, 1, 0.1), (3, 2, 0.15), (4, 3, 0.12), (3, 1, 0.25)]
    return make_grid(4, edges, loads=[0, 40.0, 30.0, 50.0], gens=[Generator(1, 0, 300, 20)])


@pytest.fixture(scope="session")
def case14():
    return load_case("case14")


@pytest.fixture(scope="session")
def case24():
    return load_case("case24_ieee_rts")
