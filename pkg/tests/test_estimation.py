import numpy as np
import pytest

from gridmtd.estimation import (
    BadDataDetector, ObservabilityError, bdd_residual, calibrate_threshold, default_sigma,
    generate_measurements, make_rng, wls_estimate,
)
from gridmtd.powerflow import build_h, solve_dc


@pytest.fixture(scope="module")
def setup14(case14):
    p = -case14.loads.copy()
    p[0] += case14.loads.sum()
    state = solve_dc(case14, p)
    h = build_h(case14).h
    return case14, state, h, h @ state.theta


def test_zero_sigma_is_noiseless(setup14):
    g, state, h, z0 = setup14
    ms = generate_measurements(g, state, 0.0, rng_seed=1)
    np.testing.assert_array_equal(ms.z, z0)


def test_seeded_noise_is_reproducible(setup14):
    g, state, _, _ = setup14
    a = generate_measurements(g, state, 1.0, rng_seed=7).z
    b = generate_measurements(g, state, 1.0, rng_seed=7).z
    c = generate_measurements(g, state, 1.0, rng_seed=8).z
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_noise_std_matches_sigma(setup14):
    _, _, h, z0 = setup14
    sigma = default_sigma(z0)
    rng = make_rng(3)
    z = z0 + rng.standard_normal((10_000, z0.size)) * sigma
    ratio = (z - z0).std(axis=0) / sigma
    assert np.all(np.abs(ratio - 1) < 0.05)


def test_noiseless_estimate_exact(setup14):
    _, state, h, z0 = setup14
    w = 1 / default_sigma(z0) ** 2
    theta = wls_estimate(h, w, z0)
    np.testing.assert_allclose(theta, state.theta, atol=1e-9)
    assert bdd_residual(z0, h, theta) < 1e-9


def test_batch_estimate_matches_single(setup14):
    _, _, h, z0 = setup14
    w = np.ones(z0.size)
    z = z0 + make_rng(0).standard_normal((5, z0.size))
    batch = wls_estimate(h, w, z)
    for k in range(5):
        np.testing.assert_allclose(batch[k], wls_estimate(h, w, z[k]), atol=1e-12)


def test_redundant_row_removal(setup14):
    g, _, h, z0 = setup14
    sigma = default_sigma(z0)
    z = z0 + make_rng(4).standard_normal(z0.size) * sigma
    full = wls_estimate(h, 1 / sigma**2, z)
    keep = np.ones(z0.size, bool)
    keep[g.n_branch] = False  # reverse flow of branch 1 duplicates the forward one
    part = wls_estimate(h[keep], 1 / sigma[keep] ** 2, z[keep])
    cov = np.linalg.inv((h.T / sigma**2) @ h)
    assert np.all(np.abs(full - part) < 3 * np.sqrt(np.diag(cov)))


def test_spike_increases_residual(setup14):
    _, _, h, z0 = setup14
    sigma = default_sigma(z0)
    bdd = BadDataDetector(h, sigma, 0.05)
    z = z0 + make_rng(5).standard_normal(z0.size) * sigma
    spiked = z.copy()
    spiked[3] += 10 * sigma[3]
    assert bdd.residual(spiked) > bdd.residual(z)


def test_threshold_dof(setup14):
    _, _, h, _ = setup14
    cfg = calibrate_threshold(0.05, h)
    assert cfg.dof == 54 - 13
    with pytest.raises(ValueError):
        calibrate_threshold(1.5, h)


def test_false_positive_rate(setup14):
    _, _, h, z0 = setup14
    sigma = default_sigma(z0)
    bdd = BadDataDetector(h, sigma, 0.05)
    z = z0 + make_rng(11).standard_normal((10_000, z0.size)) * sigma
    rate = bdd.flags(z).mean()
    assert 0.04 <= rate <= 0.06
    assert abs(rate - 0.05) < 3 * np.sqrt(0.05 * 0.95 / 10_000)


def test_unobservable_raises(setup14):
    _, _, h, z0 = setup14
    with pytest.raises(ObservabilityError):
        wls_estimate(h[:3], np.ones(3), z0[:3])
