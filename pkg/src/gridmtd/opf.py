"""DC optimal power flow, with optional load shedding, and the MTD cost.

Decision vector: generator outputs, then per-bus shed (shedding variant
only), then non-slack angles. Reactances are fixed inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import Grid, full_incidence, reduced_incidence
from .lp import LpInfeasible, LpProblem, lp_solve
from .powerflow import Perturbation, apply_perturbation

DEFAULT_SHED_COST = 1000.0  # $/MWh
BIND_TOL = 1e-6


class OpfInfeasible(RuntimeError):
    pass


@dataclass(frozen=True)
class DispatchResult:
    gen_mw: np.ndarray
    shed_mw: np.ndarray
    theta: np.ndarray
    flows: np.ndarray
    cost: float
    status: str  # "optimal" or "infeasible"
    binding: tuple[str, ...] = field(default=())

    @property
    def ok(self) -> bool:
        return self.status == "optimal"

    @property
    def shed_total(self) -> float:
        return float(self.shed_mw.sum())

    def to_row(self, **labels) -> dict:
        row = dict(labels)
        row.update(
            cost=f"{self.cost:.6f}",
            shed_mw=f"{self.shed_total:.6f}",
            status=self.status,
            binding=" ".join(self.binding),
        )
        return row


def _infeasible(grid: Grid) -> DispatchResult:
    nan = lambda k: np.full(k, np.nan)  # noqa: E731
    return DispatchResult(nan(len(grid.generators)), nan(grid.n_bus), nan(grid.n_bus - 1),
                          nan(grid.n_branch), float("inf"), "infeasible")


def _dispatch(grid: Grid, load, prev_gen, shed_cost: float | None) -> DispatchResult:
    load = grid.loads if load is None else np.asarray(load, dtype=float)
    if load.shape != (grid.n_bus,):
        raise ValueError(f"expected {grid.n_bus} loads, got shape {load.shape}")
    gens = grid.generators
    n_g, n_b, n_t = len(gens), grid.n_bus, grid.n_bus - 1
    n_s = n_b if shed_cost is not None else 0
    n = n_g + n_s + n_t

    a_red = reduced_incidence(grid)
    flow_map = grid.susceptances[:, None] * a_red.T  # flows = flow_map @ theta
    inj_map = full_incidence(grid) @ flow_map

    c = np.zeros(n)
    c[:n_g] = [g.cost_per_mwh for g in gens]
    c[n_g:n_g + n_s] = shed_cost if n_s else 0.0

    # nodal balance: sum g + shed - B theta = load
    bal = np.zeros((n_b, n))
    for k, g in enumerate(gens):
        bal[g.bus - 1, k] = 1.0
    if n_s:
        bal[:, n_g:n_g + n_s] = np.eye(n_b)
    bal[:, n_g + n_s:] = -inj_map

    limits = grid.flow_limits
    lim_rows = np.flatnonzero(np.isfinite(limits) & grid.in_service)
    fl = np.zeros((lim_rows.size, n))
    fl[:, n_g + n_s:] = flow_map[lim_rows]

    a = np.vstack([bal, fl])
    row_lo = np.concatenate([load, -limits[lim_rows]])
    row_hi = np.concatenate([load, limits[lim_rows]])

    g_lo = np.array([g.g_min for g in gens], dtype=float)
    g_hi = np.array([g.g_max for g in gens], dtype=float)
    if prev_gen is not None:
        prev = np.asarray(prev_gen, dtype=float)
        ramp = np.array([g.ramp_limit for g in gens], dtype=float)
        g_lo = np.maximum(g_lo, prev - ramp)
        g_hi = np.minimum(g_hi, prev + ramp)
        if np.any(g_lo > g_hi):
            return _infeasible(grid)
    var_lo = np.concatenate([g_lo, np.zeros(n_s), np.full(n_t, -np.inf)])
    var_hi = np.concatenate([g_hi, np.maximum(load, 0.0)[:n_s] if n_s else [], np.full(n_t, np.inf)])

    try:
        res = lp_solve(LpProblem.build(c, a, row_lo, row_hi, var_lo, var_hi))
    except LpInfeasible:
        return _infeasible(grid)
    x = res.x
    gen = x[:n_g]
    shed = x[n_g:n_g + n_s] if n_s else np.zeros(n_b)
    theta = x[n_g + n_s:]
    flows = flow_map @ theta

    binding = []
    for l in lim_rows:
        if abs(flows[l]) >= limits[l] - BIND_TOL * max(1.0, limits[l]):
            binding.append(f"flow{l + 1}{'+' if flows[l] > 0 else '-'}")
    for k in range(n_g):
        if gen[k] >= g_hi[k] - BIND_TOL and g_hi[k] > g_lo[k]:
            binding.append(f"gmax{k + 1}")
    return DispatchResult(gen, shed, theta, flows, float(c @ x), "optimal", tuple(binding))


def solve_opf(grid: Grid, load=None, prev_gen=None) -> DispatchResult:
    """Least-cost dispatch with all load served.

    The ramp window around ``prev_gen`` applies only when it is given.
    Infeasibility is reported through ``status``.
    """
    return _dispatch(grid, load, prev_gen, None)


def solve_opf_with_shedding(grid: Grid, load=None, prev_gen=None,
                            shed_cost: float = DEFAULT_SHED_COST) -> DispatchResult:
    """Least-cost dispatch where load may be shed at ``shed_cost`` $/MWh."""
    return _dispatch(grid, load, prev_gen, shed_cost)


def mtd_cost(grid: Grid, load, x_star, perturbation: Perturbation,
             shedding: bool = False) -> float:
    """Cost of operating with perturbed reactances, ``C(x* + dx) - C(x*)``.

    The difference is signed: with ``x*`` fixed to the case reactances a
    perturbation can relieve congestion and lower the cost.
    """
    base_grid = grid if x_star is None else grid.with_reactances(x_star)
    solver = solve_opf_with_shedding if shedding else solve_opf
    before = solver(base_grid, load)
    after = solver(apply_perturbation(base_grid, perturbation), load)
    if not (before.ok and after.ok):
        raise OpfInfeasible("OPF infeasible for the MTD cost")
    return after.cost - before.cost


def nodal_mismatch(grid: Grid, load, result: DispatchResult) -> float:
    """``max |A flows - (g - load + shed)|`` of a dispatch."""
    load = grid.loads if load is None else np.asarray(load, dtype=float)
    inj = -load + result.shed_mw
    for g, p in zip(grid.generators, result.gen_mw):
        inj[g.bus - 1] += p
    return float(np.max(np.abs(full_incidence(grid) @ result.flows - inj)))
