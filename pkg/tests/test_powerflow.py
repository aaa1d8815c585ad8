import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_grids
from gridmtd.grid import full_incidence
from gridmtd.powerflow import (
    Perturbation, RangeViolation, StructuralError, apply_perturbation, build_h,
    measurements, solve_dc,
)

REFERENCE_LD = [1, 3, 5, 8, 9, 18, 19]


def balanced(grid, rng):
    p = rng.normal(0, 50, grid.n_bus)
    p[grid.slack_index] -= p.sum()
    return p


def test_two_bus_hand_solution(two_bus):
    st_ = solve_dc(two_bus, np.array([-10.0, 10.0]))
    # B = 100 / 0.1 = 1000 MW/rad, A = [-1]
    assert st_.theta == pytest.approx([0.01])
    assert st_.flows == pytest.approx([-10.0])


def test_two_bus_h(two_bus):
    h = build_h(two_bus).h / two_bus.base_mva
    # the slack column is [10, -10, 10, -10]; the kept column is its negation
    np.testing.assert_allclose(h[:, 0], [-10.0, 10.0, -10.0, 10.0])


def test_zero_injections(case14):
    s = solve_dc(case14, np.zeros(14))
    assert not s.theta.any() and not s.flows.any()


def test_islanded_grid_is_structural_error(case14):
    with pytest.raises(StructuralError):
        solve_dc(case14.with_outages([14]), np.zeros(14))


def test_h_structure(case14):
    m = build_h(case14)
    assert m.h.shape == (54, 13)
    np.testing.assert_array_equal(m.h[m.rev], -m.h[m.fwd])
    assert np.linalg.matrix_rank(m.h) == 13


@given(random_grids(), st.integers(0, 2**32 - 1))
def test_nodal_balance_and_h_equivalence(g, seed):
    p = balanced(g, np.random.default_rng(seed))
    s = solve_dc(g, p)
    inj = full_incidence(g) @ s.flows
    assert np.max(np.abs(inj - p)) < 1e-8 * max(1.0, np.abs(p).max())
    z = measurements(g, s)
    np.testing.assert_allclose(z, np.concatenate([s.flows, -s.flows, inj]), atol=1e-8)


@given(random_grids(), st.floats(-3, 3))
def test_angle_gauge(g, c):
    p = balanced(g, np.random.default_rng(0))
    s = solve_dc(g, p)
    full = s.angles_full(g)
    flows = g.susceptances * (full_incidence(g).T @ (full + c))
    np.testing.assert_allclose(flows, s.flows, atol=1e-7)


def test_zero_perturbation_identity(case14):
    g = case14.with_dfacts(REFERENCE_LD)
    assert apply_perturbation(g, Perturbation.uniform(REFERENCE_LD, 0.0)) == g


def test_reference_perturbation_scales_seven_links(case14):
    g = case14.with_dfacts(REFERENCE_LD)
    h = apply_perturbation(g, Perturbation.uniform(REFERENCE_LD, 0.15))
    ratio = h.reactances / g.reactances
    np.testing.assert_allclose(ratio[np.array(REFERENCE_LD) - 1], 1.15)
    assert np.count_nonzero(np.abs(ratio - 1) > 1e-12) == 7


def test_out_of_range_rejected(case14):
    g = case14.with_dfacts(REFERENCE_LD)
    with pytest.raises(RangeViolation) as exc:
        apply_perturbation(g, Perturbation({1: 0.5, 3: 0.1, 5: 0.3}))
    assert exc.value.branch_ids == [1, 5]
    with pytest.raises(RangeViolation, match="no D-FACTS"):
        apply_perturbation(g, Perturbation({2: 0.1}))
