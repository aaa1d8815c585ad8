"""Network data model and a reader for MATPOWER-style case files.

Bus, branch and channel identifiers are 1-based everywhere in the public
API; arrays are positional, so the entry for branch ``l`` sits at ``l - 1``.
"""

from __future__ import annotations

import math
import re
import sys
from collections import deque
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

DATA_DIR = Path(__file__).parent / "data"
BUNDLED_CASES = ("case9", "case14", "case24_ieee_rts", "case39", "case118")

DEFAULT_X_MIN_FACTOR = 0.8
DEFAULT_X_MAX_FACTOR = 1.2


class CaseError(ValueError):
    """Base class for case-file problems."""


class CaseSyntaxError(CaseError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class CaseSemanticError(CaseError):
    pass


@dataclass(frozen=True)
class Bus:
    id: int
    load_mw: float = 0.0
    is_slack: bool = False


@dataclass(frozen=True)
class Branch:
    id: int
    from_bus: int
    to_bus: int
    reactance: float
    flow_limit_mw: float = math.inf
    x_min: float | None = None
    x_max: float | None = None
    has_dfacts: bool = False
    in_service: bool = True

    def __post_init__(self):
        # Without a device the range collapses onto the reactance.
        if self.x_min is None:
            object.__setattr__(self, "x_min", self.reactance)
        if self.x_max is None:
            object.__setattr__(self, "x_max", self.reactance)

    @property
    def endpoints(self) -> tuple[int, int]:
        return self.from_bus, self.to_bus


@dataclass(frozen=True)
class Generator:
    bus: int
    g_min: float
    g_max: float
    cost_per_mwh: float = 0.0
    ramp_limit: float | None = None

    def __post_init__(self):
        if self.ramp_limit is None:
            object.__setattr__(self, "ramp_limit", 0.3 * (self.g_max - self.g_min))


@dataclass(frozen=True)
class Violation:
    kind: str
    detail: str = ""

    def __str__(self):
        return f"{self.kind}: {self.detail}" if self.detail else self.kind


@dataclass(frozen=True)
class Grid:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...] = ()
    base_mva: float = 100.0
    name: str = ""
    warnings: tuple[str, ...] = field(default=(), compare=False)

    # -- sizes and positional views -------------------------------------

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_branch(self) -> int:
        return len(self.branches)

    @property
    def n_meas(self) -> int:
        return self.n_bus + 2 * self.n_branch

    @cached_property
    def slack_index(self) -> int:
        for k, b in enumerate(self.buses):
            if b.is_slack:
                return k
        raise CaseSemanticError("grid has no slack bus")

    @cached_property
    def non_slack(self) -> np.ndarray:
        """Positional indices of the buses that carry a state variable."""
        return np.array([k for k in range(self.n_bus) if k != self.slack_index], dtype=int)

    @cached_property
    def from_idx(self) -> np.ndarray:
        return np.array([b.from_bus - 1 for b in self.branches], dtype=int)

    @cached_property
    def to_idx(self) -> np.ndarray:
        return np.array([b.to_bus - 1 for b in self.branches], dtype=int)

    @cached_property
    def reactances(self) -> np.ndarray:
        return np.array([b.reactance for b in self.branches], dtype=float)

    @cached_property
    def in_service(self) -> np.ndarray:
        return np.array([b.in_service for b in self.branches], dtype=bool)

    @cached_property
    def flow_limits(self) -> np.ndarray:
        return np.array([b.flow_limit_mw for b in self.branches], dtype=float)

    @cached_property
    def loads(self) -> np.ndarray:
        return np.array([b.load_mw for b in self.buses], dtype=float)

    @cached_property
    def susceptances(self) -> np.ndarray:
        """Branch susceptances in MW/rad; zero for out-of-service branches."""
        return np.where(self.in_service, self.base_mva / self.reactances, 0.0)

    @cached_property
    def dfacts_links(self) -> frozenset[int]:
        return frozenset(b.id for b in self.branches if b.has_dfacts)

    def branch(self, branch_id: int) -> Branch:
        return self.branches[branch_id - 1]

    # -- derived grids ------------------------------------------------------

    def with_outages(self, branch_ids: Iterable[int]) -> "Grid":
        out = set(branch_ids)
        branches = tuple(replace(b, in_service=False) if b.id in out else b for b in self.branches)
        return replace(self, branches=branches)

    def with_loads(self, loads: Iterable[float]) -> "Grid":
        loads = list(loads)
        if len(loads) != self.n_bus:
            raise ValueError(f"expected {self.n_bus} loads, got {len(loads)}")
        buses = tuple(replace(b, load_mw=float(d)) for b, d in zip(self.buses, loads))
        return replace(self, buses=buses)

    def with_reactances(self, x: Iterable[float]) -> "Grid":
        """Replace reactances without any D-FACTS range check."""
        branches = []
        for b, v in zip(self.branches, x):
            v = float(v)
            if b.has_dfacts:
                branches.append(replace(b, reactance=v))
            else:
                branches.append(replace(b, reactance=v, x_min=v, x_max=v))
        return replace(self, branches=tuple(branches))

    def with_dfacts(
        self,
        links: Iterable[int],
        min_factor: float = DEFAULT_X_MIN_FACTOR,
        max_factor: float = DEFAULT_X_MAX_FACTOR,
        ranges: Mapping[int, tuple[float, float]] | None = None,
    ) -> "Grid":
        """Install D-FACTS devices on ``links``.

        Ranges default to ``[min_factor * x, max_factor * x]``; ``ranges``
        overrides them per branch id with absolute p.u. values. Branches not
        listed lose any device they had.
        """
        links = set(links)
        ranges = dict(ranges or {})
        unknown = (links | set(ranges)) - {b.id for b in self.branches}
        if unknown:
            raise CaseSemanticError(f"D-FACTS on unknown branches {sorted(unknown)}")
        branches = []
        for b in self.branches:
            if b.id in links:
                lo, hi = ranges.get(b.id, (min_factor * b.reactance, max_factor * b.reactance))
                branches.append(replace(b, has_dfacts=True, x_min=lo, x_max=hi))
            else:
                branches.append(replace(b, has_dfacts=False, x_min=b.reactance, x_max=b.reactance))
        return replace(self, branches=tuple(branches))

    def with_generators(self, generators: Iterable[Generator]) -> "Grid":
        return replace(self, generators=tuple(generators))

    def with_flow_limits(self, limits: Iterable[float]) -> "Grid":
        branches = tuple(replace(b, flow_limit_mw=float(f)) for b, f in zip(self.branches, limits))
        return replace(self, branches=branches)


# -- validation and graph helpers --------------------------------------------


def adjacency(grid: Grid, exclude: Iterable[int] = ()) -> dict[int, list[tuple[int, int]]]:
    """Map bus id -> [(branch id, neighbour bus id)] over in-service branches."""
    skip = set(exclude)
    adj: dict[int, list[tuple[int, int]]] = {b.id: [] for b in grid.buses}
    for br in grid.branches:
        if not br.in_service or br.id in skip:
            continue
        adj[br.from_bus].append((br.id, br.to_bus))
        adj[br.to_bus].append((br.id, br.from_bus))
    return adj


def components(grid: Grid, exclude: Iterable[int] = ()) -> list[set[int]]:
    adj = adjacency(grid, exclude)
    seen: set[int] = set()
    comps = []
    for start in adj:
        if start in seen:
            continue
        comp = {start}
        queue = deque([start])
        while queue:
            u = queue.popleft()
            for _, v in adj[u]:
                if v not in comp:
                    comp.add(v)
                    queue.append(v)
        seen |= comp
        comps.append(comp)
    return comps


def is_connected(grid: Grid, exclude: Iterable[int] = ()) -> bool:
    return len(components(grid, exclude)) == 1


def bridges(grid: Grid) -> set[int]:
    """Branch ids whose removal disconnects the in-service graph."""
    return {br.id for br in grid.branches if br.in_service and not is_connected(grid, [br.id])}


def validate(grid: Grid) -> list[Violation]:
    out: list[Violation] = []
    ids = [b.id for b in grid.buses]
    if ids != list(range(1, len(ids) + 1)):
        out.append(Violation("NonContiguousBusIds", f"{ids}"))
    slacks = [b.id for b in grid.buses if b.is_slack]
    if len(slacks) == 0:
        out.append(Violation("MissingSlack"))
    elif len(slacks) > 1:
        out.append(Violation("DuplicateSlack", f"buses {slacks}"))
    for b in grid.buses:
        if b.load_mw < 0:
            out.append(Violation("NegativeLoad", f"bus {b.id}"))
    busset = set(ids)
    bad_ref = False
    for k, br in enumerate(grid.branches, start=1):
        if br.id != k:
            out.append(Violation("NonContiguousBranchIds", f"branch {br.id} at position {k}"))
        if br.from_bus not in busset or br.to_bus not in busset:
            out.append(Violation("DanglingBranch", f"branch {br.id} -> ({br.from_bus}, {br.to_bus})"))
            bad_ref = True
        if br.from_bus == br.to_bus:
            out.append(Violation("SelfLoop", f"branch {br.id}"))
        if not br.reactance > 0:
            out.append(Violation("NonPositiveReactance", f"branch {br.id}"))
        if not br.flow_limit_mw > 0:
            out.append(Violation("NonPositiveFlowLimit", f"branch {br.id}"))
        if not (br.x_min <= br.reactance * (1 + 1e-12) and br.reactance <= br.x_max * (1 + 1e-12)):
            out.append(Violation("ReactanceOutOfRange", f"branch {br.id}"))
        if not br.has_dfacts and not (br.x_min == br.x_max == br.reactance):
            out.append(Violation("RangeWithoutDevice", f"branch {br.id}"))
    for g in grid.generators:
        if g.bus not in busset:
            out.append(Violation("DanglingGenerator", f"bus {g.bus}"))
            bad_ref = True
        if g.g_min > g.g_max:
            out.append(Violation("GeneratorLimits", f"bus {g.bus}"))
    if not bad_ref and grid.buses and not is_connected(grid):
        out.append(Violation("Disconnected", f"{len(components(grid))} components"))
    return out


def reduced_incidence(grid: Grid) -> np.ndarray:
    """Branch-bus incidence with the slack row removed, shape (N-1, L).

    Column ``l`` has +1 at the from-bus and -1 at the to-bus. Out-of-service
    branches keep their column; their susceptance is zero instead.
    """
    full = np.zeros((grid.n_bus, grid.n_branch))
    cols = np.arange(grid.n_branch)
    full[grid.from_idx, cols] = 1.0
    full[grid.to_idx, cols] = -1.0
    return full[grid.non_slack]


def full_incidence(grid: Grid) -> np.ndarray:
    full = np.zeros((grid.n_bus, grid.n_branch))
    cols = np.arange(grid.n_branch)
    full[grid.from_idx, cols] = 1.0
    full[grid.to_idx, cols] = -1.0
    return full


# -- case-file parsing ---------------------------------------------------------

_ASSIGN = re.compile(r"mpc\.(\w+)\s*=\s*")
_NUMBER = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?|[-+]?(?:Inf|inf|NaN|nan)")

# MATPOWER column positions (0-based)
BUS_I, BUS_TYPE, PD = 0, 1, 2
F_BUS, T_BUS, BR_X, RATE_A, BR_STATUS = 0, 1, 3, 5, 10
GEN_BUS, GEN_STATUS, PMAX, PMIN, RAMP_30 = 0, 7, 8, 9, 18


def _strip_comment(line: str) -> str:
    # '%' starts a comment unless inside a quoted string
    quoted = False
    for k, ch in enumerate(line):
        if ch == "'":
            quoted = not quoted
        elif ch == "%" and not quoted:
            return line[:k]
    return line


def _parse_matrix(lines: list[str], start_line: int, start_col: int) -> tuple[list[list[float]], int]:
    """Parse ``[ ... ];`` beginning at (start_line, start_col).

    Returns the rows and the index of the line holding the closing bracket.
    """
    rows: list[list[float]] = []
    current: list[float] = []
    ln, col = start_line, start_col
    text = _strip_comment(lines[ln])
    if col >= len(text) or text[col] != "[":
        raise CaseSyntaxError("expected '['", ln + 1, col + 1)
    col += 1
    while True:
        while col < len(text):
            ch = text[col]
            if ch in " \t,":
                col += 1
            elif ch == ";":
                if current:
                    rows.append(current)
                    current = []
                col += 1
            elif ch == "]":
                if current:
                    rows.append(current)
                return rows, ln
            else:
                m = _NUMBER.match(text, col)
                if not m:
                    raise CaseSyntaxError(f"unexpected character {ch!r}", ln + 1, col + 1)
                current.append(float(m.group()))
                col = m.end()
        # newline ends a row as in MATLAB
        if current:
            rows.append(current)
            current = []
        ln += 1
        if ln >= len(lines):
            raise CaseSyntaxError("unterminated matrix", ln, 1)
        text = _strip_comment(lines[ln])
        col = 0


def _read_tables(text: str) -> dict[str, object]:
    lines = text.splitlines()
    tables: dict[str, object] = {}
    ln = 0
    while ln < len(lines):
        line = _strip_comment(lines[ln])
        m = _ASSIGN.search(line)
        if not m:
            ln += 1
            continue
        name, col = m.group(1), m.end()
        rest = line[col:].strip()
        if rest.startswith("["):
            rows, ln = _parse_matrix(lines, ln, line.index("[", col))
            widths = {len(r) for r in rows}
            if len(widths) > 1:
                raise CaseSyntaxError(f"ragged rows in mpc.{name}", ln + 1, 1)
            tables[name] = rows
        else:
            value = rest.rstrip(";").strip()
            if value.startswith("'"):
                tables[name] = value.strip("'")
            else:
                num = _NUMBER.fullmatch(value)
                if not num:
                    raise CaseSyntaxError(f"cannot parse value of mpc.{name}", ln + 1, col + 1)
                tables[name] = float(value)
        ln += 1
    return tables


def parse_case(text: str, name: str = "") -> Grid:
    """Build a validated :class:`Grid` from MATPOWER case text.

    Only bus id/type/Pd, branch from/to/x/rateA/status, gen bus/status/Pmax/
    Pmin/ramp_30 and the linear gencost coefficient are read. ``rateA = 0``
    means unlimited. Anything else lands in ``Grid.warnings``.
    """
    tables = _read_tables(text)
    warnings: list[str] = []
    for key in ("bus", "branch"):
        if key not in tables:
            raise CaseSemanticError(f"case has no mpc.{key} table")
    base = float(tables.get("baseMVA", 100.0))
    ignored = sorted(set(tables) - {"bus", "branch", "gen", "gencost", "baseMVA", "version"})
    if ignored:
        warnings.append(f"ignored tables: {', '.join(ignored)}")

    bus_rows = tables["bus"]
    buses = []
    for row in bus_rows:
        if len(row) < 3:
            raise CaseSemanticError("bus rows need at least id, type, Pd")
        if row[BUS_TYPE] == 4:
            warnings.append(f"bus {int(row[BUS_I])} is marked isolated")
        buses.append(Bus(id=int(row[BUS_I]), load_mw=float(row[PD]), is_slack=int(row[BUS_TYPE]) == 3))
    if any(len(r) > 5 and (r[4] != 0 or r[5] != 0) for r in bus_rows):
        warnings.append("bus shunts ignored")

    branches = []
    for k, row in enumerate(tables["branch"], start=1):
        if len(row) < 4:
            raise CaseSemanticError("branch rows need at least fbus, tbus, r, x")
        rate = row[RATE_A] if len(row) > RATE_A else 0.0
        status = row[BR_STATUS] if len(row) > BR_STATUS else 1.0
        x = float(row[BR_X])
        if not x > 0:
            raise CaseSemanticError(f"branch {k} has nonpositive reactance {x}")
        if len(row) > 8 and row[8] not in (0.0, 1.0):
            warnings.append(f"branch {k}: off-nominal tap ignored")
        branches.append(Branch(
            id=k, from_bus=int(row[F_BUS]), to_bus=int(row[T_BUS]), reactance=x,
            flow_limit_mw=float(rate) if rate > 0 else math.inf, in_service=bool(status),
        ))

    gen_rows = tables.get("gen", [])
    cost_rows = tables.get("gencost", [])
    if gen_rows and len(cost_rows) < len(gen_rows):
        warnings.append("missing gencost rows; cost taken as 0")
    generators = []
    for k, row in enumerate(gen_rows):
        if len(row) > GEN_STATUS and row[GEN_STATUS] == 0:
            warnings.append(f"generator {k + 1} out of service, dropped")
            continue
        ramp = row[RAMP_30] if len(row) > RAMP_30 and row[RAMP_30] > 0 else None
        cost = _linear_cost(cost_rows[k], warnings, k + 1) if k < len(cost_rows) else 0.0
        generators.append(Generator(
            bus=int(row[GEN_BUS]), g_min=float(row[PMIN]), g_max=float(row[PMAX]),
            cost_per_mwh=cost, ramp_limit=ramp,
        ))

    grid = Grid(tuple(buses), tuple(branches), tuple(generators), base_mva=base, name=name,
                warnings=tuple(warnings))
    problems = [v for v in validate(grid) if v.kind != "Disconnected"]
    if problems:
        raise CaseSemanticError("; ".join(map(str, problems)))
    if not is_connected(grid):
        warnings.append("grid is not connected")
        grid = replace(grid, warnings=tuple(warnings))
    return grid


def _linear_cost(row: list[float], warnings: list[str], k: int) -> float:
    model, n = int(row[0]), int(row[3])
    coeffs = row[4:4 + (2 * n if model == 1 else n)]
    if model == 2:
        if n >= 3 and any(c != 0 for c in coeffs[:-2]):
            warnings.append(f"generator {k}: higher-order cost terms dropped")
        return float(coeffs[-2]) if n >= 2 else 0.0
    if model == 1:
        xs, ys = coeffs[0::2], coeffs[1::2]
        warnings.append(f"generator {k}: piecewise cost replaced by its average slope")
        return float((ys[-1] - ys[0]) / (xs[-1] - xs[0])) if xs[-1] != xs[0] else 0.0
    raise CaseSemanticError(f"generator {k}: unknown cost model {model}")


def _fmt(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def serialize_case(grid: Grid) -> str:
    """Write the fields a :class:`Grid` holds as MATPOWER case text."""
    name = grid.name or "case"
    gen_buses = {g.bus for g in grid.generators}
    out = [f"function mpc = {name}", "mpc.version = '2';", f"mpc.baseMVA = {_fmt(grid.base_mva)};", "",
           "%% bus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin", "mpc.bus = ["]
    for b in grid.buses:
        kind = 3 if b.is_slack else (2 if b.id in gen_buses else 1)
        out.append(f"\t{b.id}\t{kind}\t{_fmt(b.load_mw)}\t0\t0\t0\t1\t1\t0\t0\t1\t1.1\t0.9;")
    out += ["];", "", "%% bus Pg Qg Qmax Qmin Vg mBase status Pmax Pmin (10 zeros) ramp_30 ramp_q apf",
            "mpc.gen = ["]
    for g in grid.generators:
        zeros = "\t".join(["0"] * 8)
        out.append(f"\t{g.bus}\t0\t0\t0\t0\t1\t{_fmt(grid.base_mva)}\t1\t{_fmt(g.g_max)}\t{_fmt(g.g_min)}"
                   f"\t{zeros}\t{_fmt(g.ramp_limit)}\t0\t0;")
    out += ["];", "", "%% fbus tbus r x b rateA rateB rateC ratio angle status angmin angmax", "mpc.branch = ["]
    for br in grid.branches:
        rate = 0 if math.isinf(br.flow_limit_mw) else br.flow_limit_mw
        out.append(f"\t{br.from_bus}\t{br.to_bus}\t0\t{_fmt(br.reactance)}\t0\t{_fmt(rate)}\t0\t0\t0\t0"
                   f"\t{int(br.in_service)}\t-360\t360;")
    out += ["];", "", "%% 2 startup shutdown n c1 c0", "mpc.gencost = ["]
    for g in grid.generators:
        out.append(f"\t2\t0\t0\t2\t{_fmt(g.cost_per_mwh)}\t0;")
    out += ["];", ""]
    return "\n".join(out)


# -- sidecar config --------------------------------------------------------------


def parse_sidecar(text: str) -> dict:
    """Parse the D-FACTS sidecar (TOML).

    Recognised keys, all optional::

        [dfacts]
        min_factor = 0.8
        max_factor = 1.2
        links = [1, 3, 5]

        [dfacts.range]
        3 = [0.15, 0.25]
    """
    data = tomllib.loads(text)
    section = data.get("dfacts", {})
    ranges = {}
    for key, value in section.get("range", {}).items():
        lo, hi = value
        ranges[int(key)] = (float(lo), float(hi))
    return {
        "min_factor": float(section.get("min_factor", DEFAULT_X_MIN_FACTOR)),
        "max_factor": float(section.get("max_factor", DEFAULT_X_MAX_FACTOR)),
        "links": [int(v) for v in section.get("links", [])],
        "ranges": ranges,
    }


def apply_sidecar(grid: Grid, sidecar: dict, links: Iterable[int] | None = None) -> Grid:
    """Install D-FACTS per the sidecar; ``links`` overrides the sidecar list."""
    chosen = list(links) if links is not None else list(sidecar["links"]) + list(sidecar["ranges"])
    return grid.with_dfacts(chosen, sidecar["min_factor"], sidecar["max_factor"], sidecar["ranges"])


def serialize_sidecar(grid: Grid) -> str:
    lines = ["[dfacts]", f"links = [{', '.join(str(l) for l in sorted(grid.dfacts_links))}]", "", "[dfacts.range]"]
    for br in grid.branches:
        if br.has_dfacts:
            lines.append(f"{br.id} = [{br.x_min!r}, {br.x_max!r}]")
    return "\n".join(lines) + "\n"


def load_case(path_or_name: str | Path) -> Grid:
    """Load a bundled case by name (``"case14"``) or a case file by path."""
    p = Path(path_or_name)
    if not p.exists():
        candidate = DATA_DIR / f"{path_or_name}.m"
        if not candidate.exists():
            raise FileNotFoundError(f"no case file or bundled case named {path_or_name!r}")
        p = candidate
    return parse_case(p.read_text(encoding="utf-8"), name=p.stem)
