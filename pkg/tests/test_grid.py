import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given

from conftest import make_grid, random_grids
from gridmtd.grid import (
    BUNDLED_CASES, CaseSemanticError, CaseSyntaxError, Generator, apply_sidecar, bridges,
    components, full_incidence, is_connected, load_case, parse_case, parse_sidecar,
    reduced_incidence, serialize_case, serialize_sidecar, validate,
)

MINIMAL = """
function mpc = tiny
mpc.baseMVA = 100;
mpc.bus = [
  1 3 0 0 0 0 1 1 0 135 1 1.05 0.95;
  2 1 10 0 0 0 1 1 0 135 1 1.05 0.95;
];
mpc.gen = [
  1 0 0 300 -300 1 100 1 50 0 0 0 0 0 0 0 0 0 0 0 0;
];
mpc.branch = [
  1 2 0 0.1 0 0 0 0 0 0 1 -360 360;
];
mpc.gencost = [
  2 0 0 3 0 20 0;
];
"""


@pytest.mark.parametrize("name,n_bus,n_branch", [
    ("case9", 9, 9), ("case14", 14, 20), ("case24_ieee_rts", 24, 38),
    ("case39", 39, 46), ("case118", 118, 186),
])
def test_bundled_case_sizes(name, n_bus, n_branch):
    g = load_case(name)
    assert (g.n_bus, g.n_branch) == (n_bus, n_branch)
    assert validate(g) == []


def test_minimal_case():
    g = parse_case(MINIMAL)
    assert g.n_bus == 2 and g.n_branch == 1 and is_connected(g)
    assert g.buses[0].is_slack and g.buses[1].load_mw == 10.0
    assert g.generators[0] == Generator(1, 0.0, 50.0, 20.0, g.generators[0].ramp_limit)
    assert math.isinf(g.branches[0].flow_limit_mw)


def test_dangling_branch_is_semantic_error():
    with pytest.raises(CaseSemanticError, match="99"):
        parse_case(MINIMAL.replace("1 2 0 0.1", "1 99 0 0.1"))


def test_syntax_error_reports_position():
    bad = MINIMAL.replace("2 1 10 0", "2 1 1x0 0")
    with pytest.raises(CaseSyntaxError) as exc:
        parse_case(bad)
    assert exc.value.line == 6
    assert exc.value.column > 1


@pytest.mark.parametrize("edit,match", [
    (("1 2 0 0.1", "1 2 0 -0.1"), "reactance"),
    (("2 1 10 0", "2 3 10 0"), "DuplicateSlack"),
])
def test_semantic_errors(edit, match):
    with pytest.raises(CaseSemanticError, match=match):
        parse_case(MINIMAL.replace(*edit))


def test_unsupported_fields_warn():
    g = parse_case(MINIMAL.replace("mpc.baseMVA = 100;", "mpc.baseMVA = 100;\nmpc.areas = [1 1];"))
    assert any("areas" in w for w in g.warnings)


def test_validate_duplicate_slack_and_disconnected():
    g = make_grid(3, [(1, 2, 0.1)])
    kinds = {v.kind for v in validate(g)}
    assert kinds == {"Disconnected"}
    two = make_grid(2, [(1, 2, 0.1)])
    two = two.__class__(tuple(b.__class__(b.id, b.load_mw, True) for b in two.buses), two.branches)
    assert [v.kind for v in validate(two)] == ["DuplicateSlack"]


def test_reduced_incidence_two_bus(two_bus):
    np.testing.assert_array_equal(reduced_incidence(two_bus), [[-1.0]])


def test_incidence_columns_sum_to_zero(case14):
    np.testing.assert_array_equal(full_incidence(case14).sum(axis=0), 0.0)
    assert np.linalg.matrix_rank(reduced_incidence(case14)) == 13


@pytest.mark.parametrize("name", BUNDLED_CASES)
def test_bridges_match_networkx(name):
    g = load_case(name)
    simple = nx.Graph()
    count = {}
    for b in g.branches:
        simple.add_edge(b.from_bus, b.to_bus)
        count[frozenset(b.endpoints)] = count.get(frozenset(b.endpoints), 0) + 1
    cut_pairs = {frozenset(e) for e in nx.bridges(simple)}
    # a bus pair joined by parallel circuits is never a bridge
    expected = {b.id for b in g.branches
                if frozenset(b.endpoints) in cut_pairs and count[frozenset(b.endpoints)] == 1}
    assert bridges(g) == expected


def test_parallel_branches_kept(case24):
    pairs = [frozenset(b.endpoints) for b in case24.branches]
    assert len(pairs) - len(set(pairs)) == 4
    assert not (bridges(case24) & {b.id for b in case24.branches if pairs.count(frozenset(b.endpoints)) > 1})


@pytest.mark.parametrize("name", BUNDLED_CASES)
def test_serialize_roundtrip_bundled(name):
    g = load_case(name)
    assert parse_case(serialize_case(g), g.name) == g


@given(random_grids())
def test_roundtrip_random(g):
    assert parse_case(serialize_case(g), g.name) == g


@given(random_grids())
def test_incidence_rank_and_cycle_space(g):
    assert np.linalg.matrix_rank(reduced_incidence(g)) == g.n_bus - 1
    nxg = nx.MultiGraph()
    nxg.add_nodes_from(range(1, g.n_bus + 1))
    nxg.add_edges_from((b.from_bus, b.to_bus) for b in g.branches)
    # cycle-space dimension = L - N + (number of components)
    assert g.n_branch - (g.n_bus - 1) == g.n_branch - g.n_bus + nx.number_connected_components(nxg)
    assert len(components(g)) == 1


def test_sidecar_roundtrip(case14):
    text = """
[dfacts]
min_factor = 0.9
max_factor = 1.1
links = [1, 3, 5]
[dfacts.range]
"3" = [0.05, 0.4]
"""
    g = apply_sidecar(case14, parse_sidecar(text))
    assert g.dfacts_links == {1, 3, 5}
    assert g.branch(3).x_min == 0.05 and g.branch(3).x_max == 0.4
    assert g.branch(1).x_max == pytest.approx(1.1 * g.branch(1).reactance)
    assert g.branch(2).x_min == g.branch(2).x_max == g.branch(2).reactance
    again = apply_sidecar(case14, parse_sidecar(serialize_sidecar(g)))
    assert again == g


def test_with_reactances_keeps_range_invariant(case14):
    g = case14.with_dfacts([1])
    x = g.reactances * 1.1
    h = g.with_reactances(x)
    assert h.branch(2).x_min == h.branch(2).x_max == h.branch(2).reactance
    assert validate(h) == []
