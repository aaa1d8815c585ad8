"""DC power flow, the stacked measurement matrix, and reactance perturbations.

Measurement channels are stacked as forward flows (L), reverse flows (L),
then bus injections (N). Channel ids are 1-based in that order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
import scipy.linalg

from .grid import Grid, full_incidence, is_connected, reduced_incidence


class StructuralError(RuntimeError):
    """The network equations are singular (islanded grid)."""


class RangeViolation(ValueError):
    def __init__(self, branch_ids: Iterable[int], reason: str = "outside D-FACTS range"):
        self.branch_ids = sorted(branch_ids)
        super().__init__(f"branches {self.branch_ids}: {reason}")


@dataclass(frozen=True)
class DcState:
    theta: np.ndarray  # rad, slack excluded
    flows: np.ndarray  # MW per branch

    def angles_full(self, grid: Grid) -> np.ndarray:
        full = np.zeros(grid.n_bus)
        full[grid.non_slack] = self.theta
        return full


@dataclass(frozen=True)
class MeasurementMatrix:
    h: np.ndarray
    n_bus: int
    n_branch: int

    @property
    def fwd(self) -> slice:
        return slice(0, self.n_branch)

    @property
    def rev(self) -> slice:
        return slice(self.n_branch, 2 * self.n_branch)

    @property
    def inj(self) -> slice:
        return slice(2 * self.n_branch, 2 * self.n_branch + self.n_bus)

    @property
    def n_meas(self) -> int:
        return self.h.shape[0]

    def __matmul__(self, other):
        return self.h @ other


@dataclass(frozen=True)
class Perturbation:
    deltas: Mapping[int, float] = field(default_factory=dict)

    @classmethod
    def uniform(cls, links: Iterable[int], eta: float) -> "Perturbation":
        return cls({int(l): float(eta) for l in links})

    @property
    def links(self) -> frozenset[int]:
        return frozenset(l for l, eta in self.deltas.items() if eta != 0.0)


# channel id helpers (1-based)

def fwd_channel(grid: Grid, branch_id: int) -> int:
    return branch_id


def rev_channel(grid: Grid, branch_id: int) -> int:
    return grid.n_branch + branch_id


def inj_channel(grid: Grid, bus_id: int) -> int:
    return 2 * grid.n_branch + bus_id


def susceptance_matrix(grid: Grid) -> np.ndarray:
    a = reduced_incidence(grid)
    return (a * grid.susceptances) @ a.T


def solve_dc(grid: Grid, injections: np.ndarray) -> DcState:
    """Solve ``B theta = P`` with the slack absorbing any imbalance.

    ``injections`` is the net injection (generation minus load) in MW at every
    bus; the slack entry is not used.
    """
    injections = np.asarray(injections, dtype=float)
    if injections.shape != (grid.n_bus,):
        raise ValueError(f"expected {grid.n_bus} injections, got shape {injections.shape}")
    if not is_connected(grid):
        raise StructuralError("grid is islanded; B is singular")
    a = reduced_incidence(grid)
    b = (a * grid.susceptances) @ a.T
    try:
        theta = scipy.linalg.solve(b, injections[grid.non_slack], assume_a="pos")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise StructuralError(str(exc)) from exc
    flows = grid.susceptances * (a.T @ theta)
    return DcState(theta=theta, flows=flows)


def build_h(grid: Grid) -> MeasurementMatrix:
    """Stack ``[D A^T; -D A^T; A_full D A^T]`` in MW/rad."""
    a = reduced_incidence(grid)
    dat = grid.susceptances[:, None] * a.T
    inj = full_incidence(grid) @ dat
    return MeasurementMatrix(np.vstack([dat, -dat, inj]), grid.n_bus, grid.n_branch)


def measurements(grid: Grid, state: DcState) -> np.ndarray:
    """Noiseless measurement vector for a solved state."""
    return build_h(grid).h @ state.theta


def apply_perturbation(grid: Grid, p: Perturbation) -> Grid:
    """Scale reactances by ``1 + eta`` on the perturbed D-FACTS branches."""
    if not p.deltas:
        return grid
    unknown = [l for l in p.deltas if not 1 <= l <= grid.n_branch]
    if unknown:
        raise RangeViolation(unknown, "no such branch")
    no_device = [l for l, eta in p.deltas.items() if eta != 0.0 and not grid.branch(l).has_dfacts]
    if no_device:
        raise RangeViolation(no_device, "no D-FACTS device installed")
    x = grid.reactances.copy()
    bad = []
    for l, eta in p.deltas.items():
        br = grid.branch(l)
        new = br.reactance * (1.0 + eta)
        tol = 1e-12 * br.reactance
        if not (br.x_min - tol <= new <= br.x_max + tol):
            bad.append(l)
        x[l - 1] = new
    if bad:
        raise RangeViolation(bad)
    return grid.with_reactances(x)
