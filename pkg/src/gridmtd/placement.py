"""Where to install D-FACTS devices.

Every line must have an alternative path only through perturbed branches, so
the perturbed set is a feedback edge set: the complement of a spanning tree.
The tree is chosen to keep the branches whose reactance moves the OPF cost
the most (largest ``|dC/dx|``) in the perturbed set. With partial attacker
access it is enough to break the loops inside each observable island.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg

from .grid import Grid, full_incidence, is_connected
from .opf import OpfInfeasible, solve_opf

OCI_STEP = 0.01
NULL_TOL = 1e-8


@dataclass(frozen=True)
class DeploymentPlan:
    dfacts_links: frozenset[int]
    sensitivities: np.ndarray  # dC/dx per branch, $/h per p.u.
    islands: tuple[frozenset[int], ...] | None = None

    @property
    def size(self) -> int:
        return len(self.dfacts_links)

    def record(self, grid: Grid) -> dict:
        rec = {
            "case": grid.name,
            "n_bus": grid.n_bus,
            "n_branch": grid.n_branch,
            "n_dfacts": self.size,
            "dfacts_links": sorted(self.dfacts_links),
            "sensitivities": [float(v) for v in self.sensitivities],
        }
        if self.islands is not None:
            rec["islands"] = [sorted(i) for i in self.islands]
        return rec

    def table(self, grid: Grid) -> str:
        """Plain-text summary: sizes, the deployment set, and islands if any."""
        lines = [
            f"{'case':<20} {'|L|':>5} {'|L_D|':>6}  L_D",
            f"{grid.name:<20} {grid.n_branch:>5} {self.size:>6}  {_fmt_set(self.dfacts_links)}",
        ]
        if self.islands is not None:
            lines.append("observable islands:")
            lines += [f"  {_fmt_set(i)}" for i in self.islands]
        return "\n".join(lines)


def _fmt_set(s: Iterable[int]) -> str:
    return "{" + ",".join(map(str, sorted(s))) + "}"


# -- sensitivities -------------------------------------------------------------


def _opf_cost(args) -> float:
    grid, load = args
    res = solve_opf(grid, load)
    if not res.ok:
        raise OpfInfeasible("OPF infeasible while estimating sensitivities")
    return res.cost


def oci_sensitivities(grid: Grid, load=None, step: float = OCI_STEP, workers: int = 1) -> np.ndarray:
    """Central-difference ``dC_OPF/dx_l`` with ``dx = step * x_l``.

    Without any finite flow limit the DC-OPF cost does not depend on the
    reactances, so zeros are returned without solving.
    """
    load = grid.loads if load is None else np.asarray(load, dtype=float)
    base = solve_opf(grid, load)
    if not base.ok:
        raise OpfInfeasible("OPF infeasible at the given load")
    limited = np.isfinite(grid.flow_limits) & grid.in_service
    if not limited.any():
        return np.zeros(grid.n_branch)
    x = grid.reactances
    jobs, index = [], []
    for k in range(grid.n_branch):
        if not grid.in_service[k]:
            continue
        for sign in (1.0, -1.0):
            xs = x.copy()
            xs[k] *= 1.0 + sign * step
            jobs.append((grid.with_reactances(xs), load))
        index.append(k)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            costs = list(pool.map(_opf_cost, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        costs = [_opf_cost(j) for j in jobs]
    out = np.zeros(grid.n_branch)
    noise = 1e-9 * max(1.0, abs(base.cost))  # LP round-off, not sensitivity
    for n, k in enumerate(index):
        dc = costs[2 * n] - costs[2 * n + 1]
        out[k] = dc / (2.0 * step * x[k]) if abs(dc) > noise else 0.0
    return out


# -- spanning trees --------------------------------------------------------------


class _DisjointSet:
    def __init__(self, items: Iterable[int]):
        self.parent = {i: i for i in items}

    def find(self, i: int) -> int:
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i: int, j: int) -> bool:
        ri, rj = self.find(i), self.find(j)
        if ri == rj:
            return False
        self.parent[max(ri, rj)] = min(ri, rj)
        return True


def _tie_keys(weights: np.ndarray) -> np.ndarray:
    # finite-difference noise must not decide ties
    scale = float(np.max(np.abs(weights))) if weights.size else 0.0
    return np.round(weights / scale, 9) if scale > 0 else np.zeros_like(weights)


def spanning_forest(grid: Grid, weights, branch_ids: Iterable[int] | None = None) -> set[int]:
    """Kruskal minimum-weight spanning forest over ``branch_ids`` (default: all in service)."""
    w = _tie_keys(np.asarray(weights, dtype=float))
    ids = [b.id for b in grid.branches if b.in_service] if branch_ids is None else list(branch_ids)
    dsu = _DisjointSet(b.id for b in grid.buses)
    tree = set()
    for bid in sorted(ids, key=lambda b: (w[b - 1], b)):
        br = grid.branch(bid)
        if dsu.union(br.from_bus, br.to_bus):
            tree.add(bid)
    return tree


def min_weight_spanning_tree(grid: Grid, weights) -> set[int]:
    if not is_connected(grid):
        raise ValueError("grid is not connected; no spanning tree exists")
    return spanning_forest(grid, weights)


def deploy_full(grid: Grid, load=None, weights=None, workers: int = 1) -> DeploymentPlan:
    """Perturb every branch outside the min-``|OCI|`` spanning tree."""
    if not is_connected(grid):
        raise ValueError("grid is not connected")
    sens = oci_sensitivities(grid, load, workers=workers) if weights is None else np.asarray(weights, float)
    tree = min_weight_spanning_tree(grid, np.abs(sens))
    links = frozenset(b.id for b in grid.branches if b.in_service and b.id not in tree)
    return DeploymentPlan(links, sens)


# -- observability ---------------------------------------------------------------


def _null_space(rows: np.ndarray, n: int) -> np.ndarray:
    if rows.shape[0] == 0:
        return np.eye(n)
    _, s, vt = scipy.linalg.svd(rows, full_matrices=True)
    rank = int(np.sum(s > NULL_TOL * max(1.0, s[0])))
    return vt[rank:].T


def observable_islands(grid: Grid, accessed_sensors: Iterable[int]) -> tuple[list[frozenset[int]], set[int]]:
    """Observable islands and unobservable branches for a set of channel ids.

    Numerical method: take the null space of the accessed measurement rows
    over all bus angles, mark branches whose end angles are not tied by
    it as unobservable, drop injections touching those branches, repeat.
    Islands are the bus groups with identical null-space rows.
    """
    n_br, n_bus = grid.n_branch, grid.n_bus
    acc = set(int(c) for c in accessed_sensors)
    flow_meas = {c - 1 if c <= n_br else c - n_br - 1 for c in acc if 1 <= c <= 2 * n_br}
    flow_meas = {k for k in flow_meas if grid.in_service[k]}
    inj_meas = {c - 2 * n_br - 1 for c in acc if 2 * n_br < c <= 2 * n_br + n_bus}

    # rows over the full angle vector, unit susceptance is enough for structure
    b = grid.susceptances
    bt = np.zeros((n_br, n_bus))
    idx = np.arange(n_br)
    bt[idx, grid.from_idx] = b
    bt[idx, grid.to_idx] = -b
    inj_rows = full_incidence(grid) @ bt
    incident = [set() for _ in range(n_bus)]
    for k in range(n_br):
        if grid.in_service[k]:
            incident[grid.from_idx[k]].add(k)
            incident[grid.to_idx[k]].add(k)

    while True:
        rows = np.vstack([bt[sorted(flow_meas)], inj_rows[sorted(inj_meas)]]) \
            if flow_meas or inj_meas else np.zeros((0, n_bus))
        z = _null_space(rows, n_bus)
        diff = np.abs(z[grid.from_idx] - z[grid.to_idx]).max(axis=1) if z.shape[1] else np.zeros(n_br)
        unobs = {k for k in range(n_br) if grid.in_service[k] and diff[k] > 1e-6}
        drop = {i for i in inj_meas if incident[i] & unobs}
        if not drop:
            break
        inj_meas -= drop

    groups: dict[tuple, set[int]] = {}
    if z.shape[1]:
        zn = z / np.abs(z).max()
        keys = [tuple(np.round(r, 6) + 0.0) for r in zn]
    else:
        keys = [()] * n_bus
    for i, key in enumerate(keys):
        groups.setdefault(key, set()).add(i + 1)
    islands = sorted((frozenset(g) for g in groups.values()), key=min)
    return islands, {k + 1 for k in unobs}


def deploy_partial(grid: Grid, accessed_sensors: Iterable[int], load=None, weights=None,
                   workers: int = 1) -> DeploymentPlan:
    """Break the loops inside each observable island only."""
    islands, _ = observable_islands(grid, accessed_sensors)
    sens = oci_sensitivities(grid, load, workers=workers) if weights is None else np.asarray(weights, float)
    links: set[int] = set()
    for isl in islands:
        inner = [b.id for b in grid.branches
                 if b.in_service and b.from_bus in isl and b.to_bus in isl]
        forest = spanning_forest(grid, np.abs(sens), inner)
        links |= set(inner) - forest
    return DeploymentPlan(frozenset(links), sens, tuple(islands))


# -- parallel circuits -------------------------------------------------------------


def merged_links(grid: Grid) -> list[tuple[int, ...]]:
    """Branch ids grouped by bus pair, in order of first appearance.

    Case files list parallel circuits as separate branches; some published
    tables count each bus pair once.
    """
    order: dict[frozenset[int], list[int]] = {}
    for b in grid.branches:
        order.setdefault(frozenset(b.endpoints), []).append(b.id)
    return [tuple(v) for v in order.values()]


def cyclomatic_size(grid: Grid, merge_parallel: bool = False) -> int:
    """Size of a minimal feedback edge set, ``L - (N - 1)`` for a connected grid."""
    n_links = len(merged_links(grid)) if merge_parallel else int(grid.in_service.sum())
    return n_links - (grid.n_bus - 1)


def link_channels(grid: Grid, flow_links: Sequence[int], inj_buses: Sequence[int],
                  merge_parallel: bool = True) -> set[int]:
    """Channel ids for flow sensors on ``flow_links`` and injections at ``inj_buses``.

    With ``merge_parallel`` link numbers index :func:`merged_links` and a
    sensor covers every circuit of the pair.
    """
    groups = merged_links(grid) if merge_parallel else [(b.id,) for b in grid.branches]
    chans = set()
    for l in flow_links:
        chans.update(groups[l - 1])
    chans.update(2 * grid.n_branch + i for i in inj_buses)
    return chans
