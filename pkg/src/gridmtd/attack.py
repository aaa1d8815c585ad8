"""Undetectable FDI and coordinated cyber-physical attacks (CCPA).

A CCPA trips lines and injects ``a = dH theta_p`` so that the corrupted
measurements look like a consistent state of the intact network. The
attacker builds ``a`` from a possibly outdated knowledge snapshot.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .grid import Grid, adjacency, is_connected
from .powerflow import DcState, MeasurementMatrix, solve_dc

DEFAULT_PATH_LIMIT = 10_000


class AttackError(RuntimeError):
    pass


class KnowledgeInsufficient(AttackError):
    """The snapshot lacks a reactance, a flow, or a usable path."""


@dataclass(frozen=True)
class KnowledgeSnapshot:
    reactances: Mapping[int, float]
    observed_sensors: frozenset[int] | None = None  # None = every channel
    writable: frozenset[int] | None = None  # None = same as observed

    @classmethod
    def from_grid(cls, grid: Grid, observed: Iterable[int] | None = None) -> "KnowledgeSnapshot":
        """Exact knowledge of ``grid``'s reactances at the time of the call."""
        obs = None if observed is None else frozenset(observed)
        return cls({b.id: b.reactance for b in grid.branches}, obs)

    def can_write(self, channel: int) -> bool:
        allowed = self.writable if self.writable is not None else self.observed_sensors
        return allowed is None or channel in allowed


@dataclass(frozen=True)
class AttackScenario:
    tripped: frozenset[int]
    fdi: np.ndarray
    path_used: Mapping[int, tuple[int, ...]] = field(default_factory=dict)
    post_state: DcState | None = field(default=None, compare=False, repr=False)

    def to_record(self, seed: int | None = None) -> dict:
        return {
            "tripped": sorted(self.tripped),
            "fdi": [float(v) for v in self.fdi],
            "paths": {str(k): list(v) for k, v in sorted(self.path_used.items())},
            "seed": seed,
        }


class Paths(list):
    """List of branch-id paths; ``truncated`` is set when the cap was hit."""

    truncated: bool = False


def enumerate_paths(grid: Grid, tripped_line: int, limit: int = DEFAULT_PATH_LIMIT) -> Paths:
    """All simple paths between the ends of ``tripped_line`` avoiding it.

    Each path is a tuple of branch ids walked from the line's from-bus to its
    to-bus. Depth-first search over branch-id-sorted adjacency yields the
    paths in lexicographic order.
    """
    line = grid.branch(tripped_line)
    src, dst = line.from_bus, line.to_bus
    adj = adjacency(grid, exclude=[tripped_line])
    for nbrs in adj.values():
        nbrs.sort()
    out = Paths()
    on_path = {src}
    stack: list[int] = []

    def walk(u: int) -> bool:
        for bid, v in adj[u]:
            if v in on_path:
                continue
            stack.append(bid)
            if v == dst:
                out.append(tuple(stack))
                if len(out) >= limit:
                    out.truncated = True
                    return False
            else:
                on_path.add(v)
                if not walk(v):
                    return False
                on_path.discard(v)
            stack.pop()
        return True

    walk(src)
    return out


def _walk_signs(grid: Grid, start_bus: int, path: Iterable[int]) -> tuple[list[int], int]:
    """Orientation sign of each path branch when walked from ``start_bus``."""
    signs = []
    at = start_bus
    for bid in path:
        br = grid.branch(bid)
        if br.from_bus == at:
            signs.append(1)
            at = br.to_bus
        elif br.to_bus == at:
            signs.append(-1)
            at = br.from_bus
        else:
            raise ValueError(f"branch {bid} does not continue the path at bus {at}")
    return signs, at


def phase_diff_via_path(grid: Grid, tripped_line: int, path: Iterable[int],
                        snapshot: KnowledgeSnapshot, post_flows) -> float:
    """Angle difference across ``tripped_line`` (from minus to), in rad.

    Summed along ``path`` as ``sum(s_m * x_m * F_m) / base`` where ``s_m`` is
    +1 when the path walks branch ``m`` along its orientation. ``post_flows``
    maps branch id to MW (array indexed ``id - 1`` or a mapping); NaN marks an
    unknown flow.
    """
    path = tuple(path)
    line = grid.branch(tripped_line)
    signs, end = _walk_signs(grid, line.from_bus, path)
    if path and end != line.to_bus:
        raise ValueError(f"path ends at bus {end}, not {line.to_bus}")
    total = 0.0
    for bid, s in zip(path, signs):
        x = snapshot.reactances.get(bid)
        f = post_flows[bid] if isinstance(post_flows, Mapping) else post_flows[bid - 1]
        if x is None or not np.isfinite(x):
            raise KnowledgeInsufficient(f"reactance of branch {bid} unknown")
        if f is None or not np.isfinite(f):
            raise KnowledgeInsufficient(f"flow on branch {bid} unknown")
        total += s * x * f
    return total / grid.base_mva


def build_fdi(h, c) -> np.ndarray:
    h = h.h if isinstance(h, MeasurementMatrix) else np.asarray(h)
    return h @ np.asarray(c, dtype=float)


def known_flows(post_grid: Grid, snapshot: KnowledgeSnapshot, flows: np.ndarray) -> np.ndarray:
    """Post-attack flows as the attacker can derive them; NaN where unknown."""
    if snapshot.observed_sensors is None:
        return np.asarray(flows, dtype=float).copy()
    from .placement import observable_islands

    _, unobservable = observable_islands(post_grid, snapshot.observed_sensors)
    out = np.asarray(flows, dtype=float).copy()
    for bid in unobservable:
        out[bid - 1] = np.nan
    return out


def _shortest_usable_path(grid: Grid, tripped_line: int, usable: set[int]) -> tuple[int, ...] | None:
    line = grid.branch(tripped_line)
    adj = adjacency(grid, exclude=[tripped_line])
    prev: dict[int, tuple[int, int] | None] = {line.from_bus: None}
    queue = deque([line.from_bus])
    while queue:
        u = queue.popleft()
        if u == line.to_bus:
            break
        for bid, v in sorted(adj[u]):
            if bid in usable and v not in prev:
                prev[v] = (u, bid)
                queue.append(v)
    if line.to_bus not in prev:
        return None
    path = []
    at = line.to_bus
    while prev[at] is not None:
        u, bid = prev[at]
        path.append(bid)
        at = u
    return tuple(reversed(path))


def build_ccpa(grid_true: Grid, snapshot: KnowledgeSnapshot, tripped: Iterable[int],
               injections: np.ndarray) -> AttackScenario:
    """Trip ``tripped`` on ``grid_true`` and build the masking vector.

    The attacker observes the true post-attack flows (through its sensors)
    but evaluates them with the snapshot reactances, shortest usable path
    first. Raises :class:`KnowledgeInsufficient` when no usable path exists.
    """
    tripped = frozenset(int(t) for t in tripped)
    if not tripped:
        return AttackScenario(tripped, np.zeros(grid_true.n_meas))
    post = grid_true.with_outages(tripped)
    if not is_connected(post):
        raise AttackError(f"tripping {sorted(tripped)} islands the grid")
    state_p = solve_dc(post, injections)
    flows = known_flows(post, snapshot, state_p.flows)
    usable = {
        b.id for b in post.branches
        if b.in_service and np.isfinite(flows[b.id - 1]) and b.id in snapshot.reactances
    }
    n_br = grid_true.n_branch
    a = np.zeros(grid_true.n_meas)
    paths = {}
    for l in sorted(tripped):
        x_l = snapshot.reactances.get(l)
        if x_l is None:
            raise KnowledgeInsufficient(f"reactance of tripped branch {l} unknown")
        path = _shortest_usable_path(post, l, usable)
        if path is None:
            raise KnowledgeInsufficient(f"no usable path around branch {l}")
        dtheta = phase_diff_via_path(post, l, path, snapshot, flows)
        fake = grid_true.base_mva * dtheta / x_l
        br = grid_true.branch(l)
        a[l - 1] += fake
        a[n_br + l - 1] -= fake
        a[2 * n_br + br.from_bus - 1] += fake
        a[2 * n_br + br.to_bus - 1] -= fake
        paths[l] = path
    blocked = [k + 1 for k in np.flatnonzero(a) if not snapshot.can_write(k + 1)]
    if blocked:
        raise KnowledgeInsufficient(f"no write access to channels {blocked}")
    return AttackScenario(tripped, a, paths, state_p)


def is_protected(tripped_line: int, perturbed: Iterable[int], grid: Grid) -> bool:
    """Whether perturbing ``perturbed`` invalidates any masking of the trip.

    True when the line itself is perturbed, or when every alternative path
    between its ends crosses a perturbed branch. A bridge (no alternative
    path) counts as protected only if it is perturbed itself.
    """
    perturbed = set(perturbed)
    if tripped_line in perturbed:
        return True
    line = grid.branch(tripped_line)
    if not _reachable(grid, line.from_bus, line.to_bus, exclude={tripped_line}):
        return False
    return not _reachable(grid, line.from_bus, line.to_bus, exclude=perturbed | {tripped_line})


def _reachable(grid: Grid, src: int, dst: int, exclude: set[int]) -> bool:
    adj = adjacency(grid, exclude=exclude)
    seen = {src}
    queue = deque([src])
    while queue:
        u = queue.popleft()
        if u == dst:
            return True
        for _, v in adj[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return False


def lambda_metric(z_clean, z_masked, eps: float = 0.1) -> float:
    """Largest relative channel change ``(z_masked - z_clean) / z_clean``.

    Channels with ``|z_clean| < eps`` (MW; 1e-3 p.u. on a 100 MVA base)
    are skipped.
    """
    z_clean = np.asarray(z_clean, dtype=float)
    z_masked = np.asarray(z_masked, dtype=float)
    keep = np.abs(z_clean) >= eps
    if not keep.any():
        return 0.0
    return float(np.max((z_masked[keep] - z_clean[keep]) / z_clean[keep]))
