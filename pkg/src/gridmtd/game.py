"""Defender-attacker zero-sum game over MTD perturbations and line trips.

The defender picks a set of D-FACTS links to perturb, the attacker a set of
lines to trip under a CCPA. Payoffs are OPF cost differences relative to the
unattacked, unperturbed benchmark. Equilibria come from the minimax LP, and
EXP3 self-play learns them from realised payoffs only.
"""

from __future__ import annotations

import math
import sys
import threading
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from ._kernels_py import player_update
from .attack import is_protected
from .estimation import make_rng
from .grid import DATA_DIR, Generator, Grid, bridges, is_connected, load_case
from .lp import LpProblem, lp_solve
from .opf import DEFAULT_SHED_COST, OpfInfeasible, solve_opf_with_shedding
from .powerflow import Perturbation, apply_perturbation

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

PROB_FLOOR = 1e-6


# -- scenario ------------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    grid: Grid  # D-FACTS installed on ``dfacts``
    loads: dict[str, np.ndarray]
    eta: float
    dfacts: frozenset[int]
    defender_actions: tuple[frozenset[int], ...]  # without the null action
    shed_cost: float = DEFAULT_SHED_COST


def load_scenario(path_or_name: str | Path = "case14_game") -> Scenario:
    """Read a game scenario TOML (bundled name or path)."""
    path = Path(path_or_name)
    if not path.exists():
        path = DATA_DIR / f"{path_or_name}.toml"
    raw = tomllib.loads(path.read_text())
    case = raw.get("case", "case14")
    case_path = path.parent / case if (path.parent / case).exists() else case
    grid = load_case(case_path)

    if "generators" in raw:
        grid = grid.with_generators(
            Generator(int(g["bus"]), float(g.get("g_min", 0.0)), float(g["g_max"]),
                      float(g.get("cost", 0.0)), g.get("ramp"))
            for g in raw["generators"]
        )
    if "flow_limits" in raw:
        fl = raw["flow_limits"]
        default = float(fl.get("default", math.inf))
        grid = grid.with_flow_limits(float(fl.get(str(b.id), default)) for b in grid.branches)
    dfacts = frozenset(int(l) for l in raw.get("dfacts", ()))
    grid = grid.with_dfacts(dfacts)
    loads = {k: np.asarray(v, dtype=float) for k, v in raw.get("loads", {}).items()}
    for k, v in loads.items():
        if v.shape != (grid.n_bus,):
            raise ValueError(f"load vector {k!r} has {v.size} entries, expected {grid.n_bus}")
    actions = tuple(frozenset(int(l) for l in a) for a in raw.get("defender_actions", ()))
    return Scenario(grid, loads, float(raw.get("eta", 0.15)), dfacts, actions,
                    float(raw.get("shed_cost", DEFAULT_SHED_COST)))


# -- types -----------------------------------------------------------------------


@dataclass(frozen=True)
class MixedStrategy:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or np.any(p < -1e-12) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("probabilities must be nonnegative and sum to 1")
        object.__setattr__(self, "probs", p)

    def support(self, tol: float = 1e-6) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.probs > tol))


@dataclass(frozen=True)
class GameSpec:
    attacker_actions: tuple[frozenset[int], ...]
    defender_actions: tuple[frozenset[int], ...]
    eta: float
    payoff: np.ndarray  # defender payoff, rows = defender actions
    baseline_cost: float = float("nan")

    def __post_init__(self):
        u = np.asarray(self.payoff, dtype=float)
        if u.shape != (len(self.defender_actions), len(self.attacker_actions)):
            raise ValueError("payoff shape does not match the action sets")
        if not np.all(np.isfinite(u)):
            raise ValueError("payoff matrix must be finite")
        object.__setattr__(self, "payoff", u)

    @property
    def payoff_map(self) -> tuple[float, float]:
        """``(lo, span)`` of the affine map ``u01 = (u - lo) / span``."""
        lo, hi = float(self.payoff.min()), float(self.payoff.max())
        return lo, (hi - lo) if hi > lo else 1.0

    def rescaled(self) -> np.ndarray:
        lo, span = self.payoff_map
        return (self.payoff - lo) / span

    def records(self) -> list[dict]:
        lo, span = self.payoff_map
        rows = []
        for i, d in enumerate(self.defender_actions):
            for j, a in enumerate(self.attacker_actions):
                rows.append({
                    "defender": _label(d), "attacker": _label(a),
                    "u_d": f"{self.payoff[i, j]:.6f}",
                    "u01": f"{(self.payoff[i, j] - lo) / span:.9f}",
                })
        return rows


def _label(s: Iterable[int]) -> str:
    s = sorted(s)
    return "{" + " ".join(map(str, s)) + "}" if s else "null"


@dataclass
class Exp3State:
    scores: np.ndarray
    probs: np.ndarray
    freq_num: np.ndarray
    freq_weight: float = 0.0
    t: int = 0

    @classmethod
    def initial(cls, n: int) -> "Exp3State":
        return cls(np.zeros(n), np.full(n, 1.0 / n), np.zeros(n))

    @property
    def empirical(self) -> np.ndarray:
        if self.freq_weight <= 0:
            return self.probs.copy()
        return self.freq_num / self.freq_weight


@dataclass(frozen=True)
class FixedSchedule:
    gamma: float = 0.0
    eta: float = 0.01
    beta: float = 0.0

    def table(self, horizon: int, n_actions: int) -> np.ndarray:
        return np.tile([self.gamma, self.eta, self.beta], (horizon, 1)).astype(float)


@dataclass(frozen=True)
class Prop1Schedule:
    """Decaying exploration and step sizes with ``eta_t = beta_t``."""

    def table(self, horizon: int, n_actions: int) -> np.ndarray:
        t = np.arange(1, horizon + 1, dtype=float)
        s = float(n_actions)
        log_s = math.log(s) if s > 1 else 0.0
        gamma = np.minimum(1.0, np.sqrt(s * log_s / t))
        eta = np.sqrt(2.0 * log_s / (t * s))
        return np.column_stack([gamma, eta, eta])


# gamma = beta = 0 never explores and can lock onto a pure action; this
# small constant exploration keeps the averaged play near equilibrium
EXPLORE = FixedSchedule(gamma=0.005, eta=0.005, beta=0.0005)
FIXED = FixedSchedule(gamma=0.0, eta=0.01, beta=0.0)


def schedule_from_name(name: str):
    """``prop1`` (decaying), ``fixed`` (gamma = beta = 0, eta = 0.01) or ``explore``."""
    if name == "prop1":
        return Prop1Schedule()
    if name == "fixed":
        return FIXED
    if name == "explore":
        return EXPLORE
    raise ValueError(f"unknown schedule {name!r}")


# -- actions -------------------------------------------------------------------


def attacker_actions(grid: Grid, extra: Iterable[Iterable[int]] = (), load=None,
                     lambda_threshold: float = 0.5, single_lines: bool = True) -> tuple[frozenset[int], ...]:
    """The null action, then every single-line trip that keeps the grid connected.

    ``extra`` multi-line sets are appended when they keep the grid connected
    and their masked measurement change Lambda stays at or below
    ``lambda_threshold`` (larger changes are easy to spot). With
    ``single_lines`` false only the null action and ``extra`` remain.
    """
    from .experiments import injections, lambda_for_attack

    cut = bridges(grid)
    acts = [frozenset()]
    if single_lines:
        acts += [frozenset([b.id]) for b in grid.branches if b.in_service and b.id not in cut]
    p = None
    for combo in extra:
        combo = frozenset(int(l) for l in combo)
        if combo in acts or not is_connected(grid, exclude=combo):
            continue
        if p is None:
            p = injections(grid, load)
        if lambda_for_attack(grid, combo, p) <= lambda_threshold:
            acts.append(combo)
    return tuple(acts)


def defender_actions(actions: Iterable[Iterable[int]]) -> tuple[frozenset[int], ...]:
    acts = [frozenset()]
    for a in actions:
        a = frozenset(int(l) for l in a)
        if a not in acts:
            acts.append(a)
    return tuple(acts)


# -- payoffs -------------------------------------------------------------------


def attack_succeeds(grid: Grid, attack: Iterable[int], defense: Iterable[int]) -> bool:
    """A CCPA stays hidden only if none of its tripped lines is protected."""
    defense = set(defense)
    attack = list(attack)
    return bool(attack) and not any(is_protected(l, defense, grid) for l in attack)


def operating_cost(grid: Grid, load, attack: Iterable[int], defense: Iterable[int], eta: float,
                   shed_cost: float = DEFAULT_SHED_COST) -> float:
    """Shedding-OPF cost with ``defense`` perturbed by ``eta`` and ``attack`` tripped."""
    g = apply_perturbation(grid, Perturbation.uniform(defense, eta)) if defense else grid
    attack = list(attack)
    if attack:
        g = g.with_outages(attack)
    res = solve_opf_with_shedding(g, load, shed_cost=shed_cost)
    if not res.ok:
        raise OpfInfeasible(f"OPF failed for attack {sorted(attack)} defense {sorted(defense)}")
    return res.cost


def payoff_entry(grid: Grid, load, attack: Iterable[int], defense: Iterable[int], eta: float,
                 shed_cost: float = DEFAULT_SHED_COST, baseline: float | None = None) -> float:
    """Defender payoff ``C(d0, a0) - C(d, a_eff)``.

    ``a_eff`` is the attack if it succeeds against ``defense``, else no attack.
    """
    attack = frozenset(attack)
    if baseline is None:
        baseline = operating_cost(grid, load, (), (), eta, shed_cost)
    eff = attack if attack_succeeds(grid, attack, defense) else frozenset()
    return baseline - operating_cost(grid, load, eff, defense, eta, shed_cost)


def _cost_cell(args) -> float:
    grid, load, attack, defense, eta, shed_cost = args
    return operating_cost(grid, load, attack, defense, eta, shed_cost)


class PayoffOracle:
    """Lazily evaluated, cached payoff cells keyed by (defense, effective attack)."""

    def __init__(self, grid: Grid, load, eta: float, shed_cost: float = DEFAULT_SHED_COST):
        self.grid, self.eta, self.shed_cost = grid, eta, shed_cost
        self.load = grid.loads if load is None else np.asarray(load, dtype=float)
        self._cache: dict[tuple[frozenset, frozenset], float] = {}
        self._lock = threading.Lock()
        self.baseline = self.cost(frozenset(), frozenset())

    def key(self, attack, defense) -> tuple[frozenset, frozenset]:
        attack, defense = frozenset(attack), frozenset(defense)
        eff = attack if attack_succeeds(self.grid, attack, defense) else frozenset()
        return defense, eff

    def cost(self, defense, eff_attack) -> float:
        k = (frozenset(defense), frozenset(eff_attack))
        with self._lock:
            if k in self._cache:
                return self._cache[k]
        val = operating_cost(self.grid, self.load, k[1], k[0], self.eta, self.shed_cost)
        with self._lock:
            self._cache[k] = val
        return val

    def prefill(self, keys: Sequence[tuple[frozenset, frozenset]], workers: int = 1) -> None:
        todo = sorted({k for k in keys if k not in self._cache}, key=lambda k: (_label(k[0]), _label(k[1])))
        if workers > 1 and len(todo) > 1:
            args = [(self.grid, self.load, a, d, self.eta, self.shed_cost) for d, a in todo]
            with ProcessPoolExecutor(max_workers=workers) as pool:
                vals = list(pool.map(_cost_cell, args, chunksize=max(1, len(args) // (4 * workers))))
            with self._lock:
                self._cache.update(zip(todo, vals))
        else:
            for d, a in todo:
                self.cost(d, a)

    def __call__(self, attack, defense) -> float:
        return self.baseline - self.cost(*self.key(attack, defense))


def build_payoff_matrix(grid: Grid, load, attacks: Sequence[Iterable[int]],
                        defenses: Sequence[Iterable[int]], eta: float,
                        shed_cost: float = DEFAULT_SHED_COST, workers: int = 1,
                        oracle: PayoffOracle | None = None) -> GameSpec:
    """Full payoff matrix; cells sharing an effective outcome are solved once."""
    attacks = tuple(frozenset(a) for a in attacks)
    defenses = tuple(frozenset(d) for d in defenses)
    if not attacks or not defenses or attacks[0] or defenses[0]:
        raise ValueError("action sets must be nonempty and start with the null action")
    oracle = oracle or PayoffOracle(grid, load, eta, shed_cost)
    keys = [[oracle.key(a, d) for a in attacks] for d in defenses]
    oracle.prefill([k for row in keys for k in row], workers)
    u = np.array([[oracle.baseline - oracle.cost(*k) for k in row] for row in keys])
    return GameSpec(attacks, defenses, eta, u, oracle.baseline)


# -- equilibrium -----------------------------------------------------------------


def solve_ne_lp(payoff) -> tuple[np.ndarray, np.ndarray, float]:
    """Minimax mixed strategies of the zero-sum game (row player maximises)."""
    u = np.asarray(payoff, dtype=float)
    nd, na = u.shape
    # defender: max v  s.t.  u^T p >= v, sum p = 1
    a = np.block([[-u.T, np.ones((na, 1))], [np.ones((1, nd)), np.zeros((1, 1))]])
    c = np.zeros(nd + 1)
    c[-1] = -1.0
    res = lp_solve(LpProblem.build(
        c, a, np.concatenate([np.full(na, -np.inf), [1.0]]), np.concatenate([np.zeros(na), [1.0]]),
        np.concatenate([np.zeros(nd), [-np.inf]]), np.full(nd + 1, np.inf)))
    p_d = _clean(res.x[:nd])
    # attacker: min w  s.t.  u q <= w, sum q = 1
    a = np.block([[u, -np.ones((nd, 1))], [np.ones((1, na)), np.zeros((1, 1))]])
    c = np.zeros(na + 1)
    c[-1] = 1.0
    res2 = lp_solve(LpProblem.build(
        c, a, np.concatenate([np.full(nd, -np.inf), [1.0]]), np.concatenate([np.zeros(nd), [1.0]]),
        np.concatenate([np.zeros(na), [-np.inf]]), np.full(na + 1, np.inf)))
    p_a = _clean(res2.x[:na])
    return p_d, p_a, float(p_d @ u @ p_a)


def _clean(p: np.ndarray) -> np.ndarray:
    p = np.maximum(p, 0.0)
    return p / p.sum()


def exploitability(payoff, p_d, p_a) -> float:
    """Best-response gap ``max_i (U q)_i - min_j (p^T U)_j``; zero exactly at a NE."""
    u = np.asarray(payoff, dtype=float)
    return float(np.max(u @ p_a) - np.min(p_d @ u))


# -- EXP3 --------------------------------------------------------------------------


def exp3_step(state: Exp3State, observed_payoff: float, played: int, gamma: float,
              eta: float, beta: float, floor: float = PROB_FLOOR) -> Exp3State:
    """One importance-weighted exponential-weights update (payoff in [0, 1])."""
    p = state.probs.astype(float).copy()
    g = state.scores.astype(float).copy()
    num = state.freq_num.astype(float).copy()
    w = player_update(p, g, num, state.freq_weight, int(played), float(observed_payoff),
                      float(gamma), float(eta), float(beta), floor)
    return Exp3State(g, p, num, w, state.t + 1)


@dataclass(frozen=True)
class SelfPlayResult:
    p_d: np.ndarray  # time-averaged frequencies
    p_a: np.ndarray
    last_d: np.ndarray  # final per-round distributions
    last_a: np.ndarray
    trajectory: np.ndarray  # rows (t, exploitability, p_d..., p_a...)
    exploitability: float
    backend: str = field(default="")


def exp3_selfplay(game: GameSpec | np.ndarray, schedule="explore", horizon: int = 100_000,
                  seed: int | None = 0, noise: float = 0.0, record_every: int = 1000,
                  backend: str | None = None) -> SelfPlayResult:
    """Run both players' EXP3 against each other on the rescaled payoffs.

    ``noise`` is the std of zero-mean uniform noise added to each observed
    payoff, in units of the rescaled range.
    """
    u = game.rescaled() if isinstance(game, GameSpec) else np.asarray(game, dtype=float)
    if isinstance(schedule, str):
        schedule = schedule_from_name(schedule)
    nd, na = u.shape
    rng = make_rng(seed)
    draws = rng.random((horizon, 2))
    half = math.sqrt(3.0) * noise
    noise_arr = rng.uniform(-half, half, (horizon, 2)) if noise > 0 else np.zeros((horizon, 2))
    impl = kernels.backends()[backend] if backend else kernels.selfplay
    num_d, w_d, num_a, w_a, last_d, last_a, snaps = impl(
        np.ascontiguousarray(u), schedule.table(horizon, nd), schedule.table(horizon, na),
        draws, noise_arr, PROB_FLOOR, record_every)
    p_d = num_d / w_d if w_d > 0 else last_d
    p_a = num_a / w_a if w_a > 0 else last_a
    ts = (np.arange(snaps.shape[0]) + 1) * record_every
    expl = np.array([exploitability(u, s[:nd], s[nd:]) for s in snaps])
    traj = np.column_stack([ts, expl, snaps]) if snaps.size else np.zeros((0, 2 + nd + na))
    name = backend or kernels.BACKEND
    return SelfPlayResult(p_d, p_a, last_d, last_a, traj, exploitability(u, p_d, p_a), name)


def support(p, tol: float = 1e-3) -> tuple[int, ...]:
    return tuple(int(i) for i in np.flatnonzero(np.asarray(p) > tol))
