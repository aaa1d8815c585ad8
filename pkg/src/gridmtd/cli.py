"""Command-line runner for the detection, placement, game and Lambda studies.

Every output starts with a ``#`` comment line carrying the tool version, the
seed and a hash of the resolved configuration, followed by plain CSV.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .attack import AttackError
from .estimation import ObservabilityError
from .experiments import (detection_rate, lambda_attacks, load_fluctuation_lambda)
from .game import (attacker_actions, build_payoff_matrix, defender_actions, exp3_selfplay,
                   load_scenario, schedule_from_name, solve_ne_lp, support)
from .grid import CaseError, apply_sidecar, load_case, parse_sidecar
from .lp import LpError
from .opf import OpfInfeasible
from .placement import deploy_full, deploy_partial, link_channels, cyclomatic_size
from .powerflow import RangeViolation, StructuralError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2
NUMERIC_ERRORS = (OpfInfeasible, LpError, StructuralError, ObservabilityError, AttackError, RangeViolation)


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    case: str | None = None
    sidecar: str | None = None
    scenario: str | None = None
    load: str | None = None  # named load vector of the scenario
    seed: int = 0
    alpha: float = 0.05
    sigma_fraction: float = 0.01
    eta: list[float] = field(default_factory=lambda: [0.0, 0.05, 0.10, 0.15, 0.20])
    trials: int = 1000
    workers: int = 0  # 0 = all cores
    attacks: list[list[int]] | None = None
    dfacts: list[int] | None = None
    schedule: str = "explore"
    horizon: int = 100_000
    record_every: int = 1000
    ks: list[int] = field(default_factory=lambda: [2, 3, 4])
    samples: int = 100
    baseline_steps: int = 1000
    access_flows: list[int] | None = None
    access_injections: list[int] | None = None
    merge_parallel: bool = True
    lambda_threshold: float = 0.5
    single_line_attacks: bool = True

    def digest(self) -> str:
        # worker count never changes results, so it stays out of the hash
        fields = {k: v for k, v in dataclasses.asdict(self).items() if k != "workers"}
        blob = json.dumps(fields, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


def read_config(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = tomllib.loads(p.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return raw


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    values = read_config(args.config)
    for name in ("case", "scenario", "seed", "trials", "alpha", "workers"):
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    if args.eta is not None:
        values["eta"] = args.eta
    cfg = ExperimentConfig(**values)
    if isinstance(cfg.eta, (int, float)):
        cfg.eta = [float(cfg.eta)]
    if not 0.0 < cfg.alpha < 1.0:
        raise ConfigError("alpha must lie in (0, 1)")
    if cfg.trials < 0 or cfg.horizon < 0 or cfg.samples < 0:
        raise ConfigError("trials, horizon and samples must be nonnegative")
    if any(e <= -1.0 for e in cfg.eta):
        raise ConfigError("eta must exceed -1")
    if cfg.workers < 1:
        cfg.workers = os.cpu_count() or 1
    return cfg


def _grid_and_load(cfg: ExperimentConfig):
    """Grid, load vector and default D-FACTS set implied by the config."""
    try:
        if cfg.scenario:
            sc = load_scenario(cfg.scenario)
            name = cfg.load or ("heavy" if "heavy" in sc.loads else next(iter(sc.loads), None))
            load = sc.loads[name] if name else None
            return sc.grid, load, sc.dfacts, sc
        grid = load_case(cfg.case or "case14")
        if cfg.sidecar:
            grid = apply_sidecar(grid, parse_sidecar(Path(cfg.sidecar).read_text()))
        return grid, None, None, None
    except (CaseError, FileNotFoundError, KeyError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


# -- output ---------------------------------------------------------------------


def _header(cmd: str, cfg: ExperimentConfig) -> str:
    return f"# gridmtd {__version__} command={cmd} seed={cfg.seed} config={cfg.digest()}\n"


def _csv(rows: Sequence[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def _emit(text: str, out: str | None, name: str | None = None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    path = Path(out)
    if name is not None:
        path.mkdir(parents=True, exist_ok=True)
        path = path / name
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _fmt(v: float) -> str:
    return f"{v:.6f}"


# -- commands -----------------------------------------------------------------------


def cmd_detect_sweep(cfg: ExperimentConfig, out: str | None) -> None:
    grid, load, dfacts, _ = _grid_and_load(cfg)
    if cfg.dfacts is not None:
        dfacts = cfg.dfacts
    if dfacts is None:
        dfacts = deploy_full(grid, load, workers=cfg.workers).dfacts_links
    rows = []
    if cfg.trials > 0:
        for k, eta in enumerate(cfg.eta):
            pt = detection_rate(grid, dfacts, eta, cfg.trials, cfg.alpha, seed=[cfg.seed, k],
                                attacks=cfg.attacks, sigma_fraction=cfg.sigma_fraction, load=load)
            lo, hi = pt.interval()
            rows.append({"eta": f"{eta:g}", "trials": pt.trials, "detected": pt.detected,
                         "rate": _fmt(pt.rate), "ci_low": _fmt(lo), "ci_high": _fmt(hi)})
    cols = ["eta", "trials", "detected", "rate", "ci_low", "ci_high"]
    _emit(_header("detect-sweep", cfg) + _csv(rows, cols), out)


def cmd_placement(cfg: ExperimentConfig, out: str | None) -> None:
    grid, load, _, _ = _grid_and_load(cfg)
    if cfg.access_flows is not None or cfg.access_injections is not None:
        chans = link_channels(grid, cfg.access_flows or [], cfg.access_injections or [], cfg.merge_parallel)
        plan = deploy_partial(grid, chans, load, workers=cfg.workers)
    else:
        plan = deploy_full(grid, load, workers=cfg.workers)
    rows = [{"branch": b.id, "from": b.from_bus, "to": b.to_bus,
             "oci": f"{plan.sensitivities[b.id - 1]:.9g}", "dfacts": int(b.id in plan.dfacts_links)}
            for b in grid.branches]
    text = _header("placement", cfg)
    text += f"# n_branch={grid.n_branch} n_dfacts={plan.size} cyclomatic={cyclomatic_size(grid)}"
    text += f" cyclomatic_merged={cyclomatic_size(grid, merge_parallel=True)}\n"
    if plan.islands is not None:
        text += "# islands=" + " ".join("{" + ",".join(map(str, sorted(i))) + "}" for i in plan.islands) + "\n"
    text += _csv(rows, ["branch", "from", "to", "oci", "dfacts"])
    _emit(text, out)
    if out is not None:
        sys.stdout.write(plan.table(grid) + "\n")


def _build_games(cfg: ExperimentConfig):
    if not cfg.scenario:
        cfg.scenario = "case14_game"
    _, _, _, sc = _grid_and_load(cfg)
    names = [cfg.load] if cfg.load else list(sc.loads)
    acts_d = defender_actions(sc.defender_actions)
    games = {}
    for name in names:
        if name not in sc.loads:
            raise ConfigError(f"scenario has no load {name!r}")
        acts_a = attacker_actions(sc.grid, cfg.attacks or (), sc.loads[name], cfg.lambda_threshold,
                                  cfg.single_line_attacks)
        games[name] = build_payoff_matrix(sc.grid, sc.loads[name], acts_a, acts_d, sc.eta,
                                          sc.shed_cost, workers=cfg.workers)
    return games


def _payoff_csv(cfg: ExperimentConfig, name: str, game) -> str:
    lo, span = game.payoff_map
    text = _header("payoffs", cfg) + f"# load={name} baseline_cost={game.baseline_cost:.6f}"
    text += f" map_lo={lo:.9g} map_span={span:.9g}\n"
    return text + _csv(game.records(), ["defender", "attacker", "u_d", "u01"])


def cmd_payoffs(cfg: ExperimentConfig, out: str | None) -> None:
    for name, game in _build_games(cfg).items():
        _emit(_payoff_csv(cfg, name, game), out, f"payoffs_{name}.csv" if out else None)


def cmd_game(cfg: ExperimentConfig, out: str | None) -> None:
    try:
        schedule = schedule_from_name(cfg.schedule)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    games = _build_games(cfg)
    summary = []
    for k, (name, game) in enumerate(games.items()):
        p_d, p_a, value = solve_ne_lp(game.payoff)
        res = exp3_selfplay(game, schedule, cfg.horizon, seed=[cfg.seed, k], record_every=cfg.record_every)
        base = game.baseline_cost
        labels = ["{" + " ".join(map(str, sorted(d))) + "}" if d else "null" for d in game.defender_actions]
        summary.append({
            "load": name,
            "baseline_cost": _fmt(base),
            "ne_value": _fmt(value),
            "ne_cost_pct": _fmt(-100.0 * value / base),
            "ne_support": " ".join(labels[i] for i in support(p_d)),
            "full_defense_cost_pct": _fmt(-100.0 * game.payoff[-1, 0] / base),
            "exp3_exploitability": _fmt(res.exploitability),
            "exp3_top": labels[int(np.argmax(res.p_d))],
        })
        if out is not None:
            _emit(_payoff_csv(cfg, name, game), out, f"payoffs_{name}.csv")
            ne_rows = [{"player": "defender", "action": labels[i], "lp": _fmt(p_d[i]), "exp3": _fmt(res.p_d[i])}
                       for i in range(len(p_d))]
            ne_rows += [{"player": "attacker", "action": "{" + " ".join(map(str, sorted(a))) + "}" if a else "null",
                         "lp": _fmt(p_a[j]), "exp3": _fmt(res.p_a[j])}
                        for j, a in enumerate(game.attacker_actions)]
            _emit(_header("game", cfg) + _csv(ne_rows, ["player", "action", "lp", "exp3"]), out, f"ne_{name}.csv")
            nd = len(game.defender_actions)
            cols = ["t", "exploitability"] + [f"pd{i}" for i in range(nd)] + \
                [f"pa{j}" for j in range(len(game.attacker_actions))]
            traj = [dict(zip(cols, [str(int(r[0]))] + [f"{v:.6f}" for v in r[1:]])) for r in res.trajectory]
            _emit(_header("game", cfg) + _csv(traj, cols), out, f"trajectory_{name}.csv")
    cols = list(summary[0]) if summary else ["load"]
    text = _header("game", cfg) + _csv(summary, cols)
    _emit(text, out, "summary.csv" if out else None)


def cmd_lambda(cfg: ExperimentConfig, out: str | None) -> None:
    grid, load, _, _ = _grid_and_load(cfg)
    rows = lambda_attacks(grid, cfg.ks, cfg.samples, seed=cfg.seed, load=load)
    base = load_fluctuation_lambda(grid, cfg.baseline_steps, seed=[cfg.seed, 1], load=load)
    lam = np.array([v for _, v in rows])
    combo_rows = [{"combo": " ".join(map(str, sorted(c))), "k": len(c), "lambda": _fmt(v)} for c, v in rows]
    qs = [0.01, 0.05, 0.10, 0.25, 0.50, 0.75, 0.90, 0.95, 0.99]
    cdf = [{"quantile": f"{q:g}",
            "attack": _fmt(float(np.quantile(lam, q))) if lam.size else "",
            "load_fluctuation": _fmt(float(np.quantile(base, q))) if base.size else ""} for q in qs]
    text = _header("lambda", cfg) + _csv(combo_rows, ["combo", "k", "lambda"])
    if out is None:
        text += "\n" + _csv(cdf, ["quantile", "attack", "load_fluctuation"])
        _emit(text, None)
    else:
        _emit(text, out, "lambda.csv")
        _emit(_header("lambda", cfg) + _csv(cdf, ["quantile", "attack", "load_fluctuation"]), out, "lambda_cdf.csv")


COMMANDS = {
    "detect-sweep": cmd_detect_sweep,
    "placement": cmd_placement,
    "game": cmd_game,
    "lambda": cmd_lambda,
    "payoffs": cmd_payoffs,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridmtd", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"gridmtd {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--case", help="bundled case name or MATPOWER file")
        p.add_argument("--config", help="TOML experiment config")
        p.add_argument("--seed", type=int)
        p.add_argument("--eta", type=float, nargs="+", help="perturbation magnitude(s)")
        p.add_argument("--trials", type=int)
        p.add_argument("--alpha", type=float)
        p.add_argument("--scenario", help="game scenario TOML (bundled name or path)")
        p.add_argument("--out", help="output file (directory for game/payoffs/lambda)")
        p.add_argument("--workers", type=int, help="worker processes (default: all cores)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        COMMANDS[args.command](cfg, args.out)
    except (ConfigError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
