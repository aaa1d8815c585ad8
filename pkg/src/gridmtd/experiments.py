"""Seeded Monte-Carlo studies behind the command-line runner.

Each function is deterministic given its seed and returns plain rows.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import binomtest

from .attack import AttackError, KnowledgeSnapshot, build_ccpa, lambda_metric
from .estimation import BadDataDetector, default_sigma, make_rng
from .grid import Grid, bridges, is_connected
from .opf import OpfInfeasible, solve_opf_with_shedding
from .powerflow import Perturbation, apply_perturbation, build_h, solve_dc


def injections(grid: Grid, load=None) -> np.ndarray:
    """Net bus injections (MW) at the shedding-OPF dispatch."""
    load = grid.loads if load is None else np.asarray(load, dtype=float)
    res = solve_opf_with_shedding(grid, load)
    if not res.ok:
        raise OpfInfeasible("no feasible dispatch")
    p = -load + res.shed_mw
    for g, mw in zip(grid.generators, res.gen_mw):
        p[g.bus - 1] += mw
    return p


def attackable_lines(grid: Grid) -> list[int]:
    cut = bridges(grid)
    return [b.id for b in grid.branches if b.in_service and b.id not in cut]


@dataclass(frozen=True)
class DetectionPoint:
    eta: float
    trials: int
    detected: int

    @property
    def rate(self) -> float:
        return self.detected / self.trials if self.trials else float("nan")

    def interval(self, level: float = 0.95) -> tuple[float, float]:
        if not self.trials:
            return float("nan"), float("nan")
        ci = binomtest(self.detected, self.trials).proportion_ci(level, method="wilson")
        return float(ci.low), float(ci.high)


def detection_rate(grid: Grid, dfacts: Iterable[int], eta: float, trials: int,
                   alpha: float = 0.05, seed=0, attacks: Sequence[Iterable[int]] | None = None,
                   sigma_fraction: float = 0.01, load=None) -> DetectionPoint:
    """Fraction of CCPAs flagged by the BDD after an MTD perturbation.

    The attacker holds the pre-perturbation reactances; the grid runs with
    ``dfacts`` scaled by ``1 + eta`` and the operator's detector uses the true
    reactances. Each trial draws an attack from ``attacks`` (default: every
    single non-bridge line) and fresh measurement noise.
    """
    if trials <= 0:
        return DetectionPoint(eta, 0, 0)
    rng = make_rng(seed)
    dfacts = sorted(set(dfacts))
    snapshot = KnowledgeSnapshot.from_grid(grid)
    true_grid = grid.with_dfacts(dfacts, 1.0 + min(eta, 0.0) - 1e-9, 1.0 + max(eta, 0.0) + 1e-9)
    true_grid = apply_perturbation(true_grid, Perturbation.uniform(dfacts, eta)) if dfacts and eta else true_grid
    p = injections(true_grid, load)
    h = build_h(true_grid).h
    z_clean = h @ solve_dc(true_grid, p).theta
    sigma = default_sigma(z_clean, sigma_fraction)
    bdd = BadDataDetector(h, sigma, alpha)

    attacks = [frozenset([l]) for l in attackable_lines(grid)] if attacks is None \
        else [frozenset(a) for a in attacks]
    means = []
    for a in attacks:
        sc = build_ccpa(true_grid, snapshot, a, p)
        post_h = build_h(true_grid.with_outages(a)).h
        means.append(post_h @ sc.post_state.theta + sc.fdi)
    means = np.array(means)
    pick = rng.integers(0, len(attacks), trials)
    z = means[pick] + rng.standard_normal((trials, h.shape[0])) * sigma
    detected = int(np.count_nonzero(bdd.flags(z)))
    return DetectionPoint(eta, trials, detected)


def sample_combos(grid: Grid, k: int, count: int, seed=0, max_tries: int = 100_000) -> list[frozenset[int]]:
    """Distinct random ``k``-line sets whose removal keeps the grid connected."""
    rng = make_rng(seed)
    lines = np.array(attackable_lines(grid))
    total = 1
    for i in range(k):
        total = total * (len(lines) - i) // (i + 1)
    out: list[frozenset[int]] = []
    seen = set()
    for _ in range(max_tries):
        if len(out) >= count or len(seen) >= total:
            break
        combo = frozenset(int(v) for v in rng.choice(lines, k, replace=False))
        if combo in seen:
            continue
        seen.add(combo)
        if is_connected(grid, exclude=combo):
            out.append(combo)
    return out


def lambda_for_attack(grid: Grid, combo: Iterable[int], p: np.ndarray) -> float:
    """Lambda of a perfectly masked outage against the intact measurements."""
    z = build_h(grid).h @ solve_dc(grid, p).theta
    sc = build_ccpa(grid, KnowledgeSnapshot.from_grid(grid), combo, p)
    z_masked = build_h(grid.with_outages(sc.tripped)).h @ sc.post_state.theta + sc.fdi
    return lambda_metric(z, z_masked, eps=1e-3 * grid.base_mva)


def lambda_attacks(grid: Grid, ks: Sequence[int] = (2, 3, 4), count: int = 100, seed=0,
                   load=None) -> list[tuple[frozenset[int], float]]:
    """Lambda for ``count`` random multi-line outages spread over the sizes ``ks``."""
    p = injections(grid, load)
    per_k = [count // len(ks) + (1 if i < count % len(ks) else 0) for i in range(len(ks))]
    rows = []
    for i, (k, n) in enumerate(zip(ks, per_k)):
        for combo in sample_combos(grid, k, n, seed=[seed, i] if seed is not None else None):
            try:
                rows.append((combo, lambda_for_attack(grid, combo, p)))
            except AttackError:
                continue
    return rows


def load_fluctuation_lambda(grid: Grid, steps: int = 1000, phi: float = 0.95,
                            step_std: float = 0.02, seed=0, load=None) -> np.ndarray:
    """Lambda between consecutive snapshots of a synthetic AR(1) load trace.

    Per-bus load deviations follow ``x_t = phi x_{t-1} + e_t`` with
    ``e_t ~ N(0, step_std^2)``; generation scales with total load.
    """
    rng = make_rng(seed)
    base_load = grid.loads if load is None else np.asarray(load, dtype=float)
    p0 = injections(grid, base_load)
    gen0 = p0 + base_load
    h = build_h(grid).h
    x = np.zeros(grid.n_bus)
    out = np.empty(steps)
    prev = None
    for t in range(steps + 1):
        x = phi * x + rng.normal(0.0, step_std, grid.n_bus)
        d = base_load * (1.0 + x)
        gen = gen0 * (d.sum() / base_load.sum())
        z = h @ solve_dc(grid, gen - d).theta
        if prev is not None:
            out[t - 1] = lambda_metric(prev, z, eps=1e-3 * grid.base_mva)
        prev = z
    return out


def all_combos(lines: Sequence[int], k: int) -> Iterable[frozenset[int]]:
    return (frozenset(c) for c in itertools.combinations(lines, k))
