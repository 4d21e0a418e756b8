"""Command-line front end: ``solve``, ``rollout`` and ``check`` on a JSON config.

Config fields (all optional except ``domain``)::

    {
      "domain": "planar_nav" | "hand_eye" | "lqg",
      "params": {...},            # domain parameters, defaults filled in
      "solver": {...},            # SolverOptions fields (hand_eye: rel_tol 1e-5)
      "schedule": [10, 1, 0.3, 0.05],   # shaping values (hand_eye: eta)
      "rollout": {"seeds": 20, "seed": 0, "process_noise": true,
                  "observation_noise": true, "obstacle_shift": 0.0},
      "output_dir": "runs/nav"
    }

Exit statuses: 0 success (also when the solver did not converge; the
report says so), 2 bad config or missing solve report, 3 I/O failure.
The default output root can be set with ``BELIEFPLAN_OUTPUT_ROOT``.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .ddp import SolveReport, SolverOptions, continuation_solve, solve
from .domains import HandEyeParams, PlanarNavParams, make_hand_eye, make_lqg_test, make_planar_nav
from .domains.hand_eye import OBSTACLES, element
from .errors import ConfigError
from .execution import LinearPolicy, replay_deviation, rollout_many

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
OUTPUT_ROOT_ENV = "BELIEFPLAN_OUTPUT_ROOT"
EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 2, 3

REPORT_FILE = "solve_report.json"
NOMINAL_FILE = "nominal.csv"
CONFIG_FILE = "effective_config.json"
TIMING_FILE = "timing.json"
ROLLOUT_DIR = "rollouts"
AGGREGATE_FILE = "rollout_aggregate.csv"
ROLLOUT_SUMMARY_FILE = "rollout_summary.json"


# -- domain registry -----------------------------------------------------------


@dataclass(frozen=True)
class DomainEntry:
    build: Callable  # (params dict, stage value or None) -> DomainSpec
    defaults: Callable[[], dict]
    default_schedule: Optional[list] = None
    solver_defaults: dict = field(default_factory=dict)
    shift_obstacles: Optional[Callable] = None  # (state, rng, distance) -> state


def _planar_build(params, stage):
    if stage is not None:
        raise ConfigError("planar_nav has no shaping parameter; remove 'schedule'")
    return make_planar_nav(params)


def _hand_eye_shift(state, rng, distance):
    s = np.array(state, dtype=float)
    for j in OBSTACLES:
        angle = rng.uniform(0.0, 2.0 * np.pi)
        s[element(j)] += distance * np.array([np.cos(angle), np.sin(angle)])
    return s


def _lqg_defaults():
    return {"n": 2, "m": 1, "horizon": 20, "seed": 0, "tau": 0.1}


def _lqg_build(params, stage):
    if stage is not None:
        raise ConfigError("lqg has no shaping parameter; remove 'schedule'")
    return make_lqg_test(**params)


DOMAINS = {
    "planar_nav": DomainEntry(_planar_build, lambda: asdict(PlanarNavParams())),
    "hand_eye": DomainEntry(
        lambda params, stage: make_hand_eye(stage, params),
        lambda: asdict(HandEyeParams()),
        default_schedule=[10.0, 1.0, 0.3, 0.05],
        # Line-search steps stay small on this landscape; 1e-5 keeps each stage to a few
        # hundred iterations without a visible change in the plan.
        solver_defaults={"rel_tol": 1e-5},
        shift_obstacles=_hand_eye_shift,
    ),
    "lqg": DomainEntry(_lqg_build, _lqg_defaults),
}


# -- configuration -------------------------------------------------------------


@dataclass
class RolloutSettings:
    seeds: int = 20
    seed: int = 0
    process_noise: bool = True
    observation_noise: bool = True
    obstacle_shift: float = 0.0
    max_workers: Optional[int] = None


@dataclass
class RunConfig:
    domain: str
    params: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    schedule: Optional[list] = None
    rollout: RolloutSettings = field(default_factory=RolloutSettings)
    output_dir: Optional[str] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema_version"] = SCHEMA_VERSION
        return d

    @property
    def entry(self) -> DomainEntry:
        return DOMAINS[self.domain]

    def stages(self) -> list:
        return [None] if self.schedule is None else list(self.schedule)

    def build(self, stage=None):
        try:
            return self.entry.build(dict(self.params), stage)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"params: {exc}") from exc


def _json_types(obj):
    """Turn tuples (dataclass defaults) into lists so configs compare equal after a JSON trip."""
    if isinstance(obj, dict):
        return {k: _json_types(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_types(v) for v in obj]
    return obj


def parse_config(raw: dict) -> RunConfig:
    """Validate a decoded config and merge defaults; raises :class:`ConfigError`."""
    if not isinstance(raw, dict):
        raise ConfigError("top level: expected a JSON object")
    raw = dict(raw)
    raw.pop("schema_version", None)
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown field(s): {', '.join(unknown)}")
    name = raw.get("domain")
    if name not in DOMAINS:
        raise ConfigError(f"domain: expected one of {sorted(DOMAINS)}, got {name!r}")
    entry = DOMAINS[name]

    params = raw.get("params") or {}
    if not isinstance(params, dict):
        raise ConfigError("params: expected an object")
    defaults = entry.defaults()
    bad = sorted(set(params) - set(defaults))
    if bad:
        raise ConfigError(f"params: unknown parameter(s) {', '.join(bad)}")
    merged = _json_types({**defaults, **params})

    solver = raw.get("solver") or {}
    if not isinstance(solver, dict):
        raise ConfigError("solver: expected an object")
    try:
        solver = asdict(SolverOptions.from_mapping({**entry.solver_defaults, **solver}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"solver: {exc}") from exc

    schedule = raw.get("schedule", entry.default_schedule)
    if schedule is not None:
        if not isinstance(schedule, list) or not schedule:
            raise ConfigError("schedule: expected a non-empty list of numbers")
        try:
            schedule = [float(v) for v in schedule]
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"schedule: {exc}") from exc
        if any(not v > 0 for v in schedule):
            raise ConfigError("schedule: values must be positive")

    ro = raw.get("rollout") or {}
    if not isinstance(ro, dict):
        raise ConfigError("rollout: expected an object")
    bad = sorted(set(ro) - {f.name for f in fields(RolloutSettings)})
    if bad:
        raise ConfigError(f"rollout: unknown field(s) {', '.join(bad)}")
    settings = RolloutSettings(**ro)
    if not isinstance(settings.seeds, int) or settings.seeds < 1:
        raise ConfigError("rollout.seeds: expected a positive integer")
    if settings.obstacle_shift < 0:
        raise ConfigError("rollout.obstacle_shift: must be non-negative")
    if settings.obstacle_shift > 0 and entry.shift_obstacles is None:
        raise ConfigError(f"rollout.obstacle_shift: not supported for domain {name}")

    out = raw.get("output_dir")
    if out is not None and not isinstance(out, str):
        raise ConfigError("output_dir: expected a string")
    cfg = RunConfig(name, merged, solver, schedule, settings, out)
    for stage in cfg.stages():
        cfg.build(stage)
    return cfg


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return parse_config(raw)


def output_dir(cfg: RunConfig, config_path, override=None) -> Path:
    if override:
        return Path(override)
    if cfg.output_dir:
        return Path(cfg.output_dir)
    root = os.environ.get(OUTPUT_ROOT_ENV, "runs")
    return Path(root) / Path(config_path).stem


# -- artifacts -----------------------------------------------------------------


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _stage_dict(stage, report: SolveReport, domain) -> dict:
    layout = domain.layout
    X = report.nominal_beliefs
    mean, cov = layout.mixture_moments(X)
    return {
        "stage_value": stage,
        "converged": bool(report.converged),
        "iterations": int(report.iterations),
        "total_reward": float(report.total_reward),
        "cost_log": [float(c) for c in report.cost_log],
        "regularization": float(report.regularization),
        "belief_means": mean.tolist(),
        "belief_cov_diagonals": np.diagonal(cov, axis1=-2, axis2=-1).tolist(),
        "actions": report.nominal_actions.tolist(),
    }


def nominal_csv_columns(domain) -> list:
    n, m = domain.n, domain.m
    cols = ["t"] + [f"mean_{j}" for j in range(n)] + [f"var_{j}" for j in range(n)]
    if domain.layout.constrained:
        cols.append("free_weight")
    return cols + [f"action_{j}" for j in range(m)]


def write_nominal_csv(path: Path, report: SolveReport, domain) -> None:
    """Time index first, then moment means, variances, (weight), actions; last row has no action."""
    X, U = report.nominal_beliefs, report.nominal_actions
    mean, cov = domain.layout.mixture_moments(X)
    var = np.diagonal(cov, axis1=-2, axis2=-1)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(nominal_csv_columns(domain))
        for t in range(X.shape[0]):
            row = [t] + [repr(float(v)) for v in mean[t]] + [repr(float(v)) for v in var[t]]
            if domain.layout.constrained:
                row.append(repr(float(X[t, -1])))
            row += [repr(float(v)) for v in U[t]] if t < U.shape[0] else [""] * U.shape[1]
            w.writerow(row)


def run_solve(cfg: RunConfig, out: Path) -> list[SolveReport]:
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / CONFIG_FILE, cfg.to_dict())
    stages = cfg.stages()
    start = time.perf_counter()
    if cfg.schedule is None:
        domain = cfg.build()
        reports = [solve(domain.to_mdp(), domain.initial_actions, cfg.solver)]
    else:
        first = cfg.build(stages[0])
        reports = continuation_solve(lambda v: cfg.build(v).to_mdp(), stages,
                                     first.initial_actions, cfg.solver)
        domain = cfg.build(stages[-1])
    elapsed = time.perf_counter() - start
    final = reports[-1]
    doc = {
        "schema_version": SCHEMA_VERSION,
        "domain": cfg.domain,
        "converged": bool(all(r.converged for r in reports)),
        "stages": [_stage_dict(s, r, cfg.build(s)) for s, r in zip(stages, reports)],
        "layout": {"scheme": domain.layout.scheme, "size": domain.layout.size,
                   "constrained": domain.layout.constrained},
        "nominal_beliefs": final.nominal_beliefs.tolist(),
        "nominal_actions": final.nominal_actions.tolist(),
        "gains": final.gains.tolist(),
    }
    _write_json(out / REPORT_FILE, doc)
    write_nominal_csv(out / NOMINAL_FILE, final, domain)
    _write_json(out / TIMING_FILE, {
        "schema_version": SCHEMA_VERSION,
        "wall_time": elapsed,
        "stage_wall_times": [r.wall_time for r in reports],
    })
    return reports


def load_policy(out: Path, domain) -> LinearPolicy:
    path = out / REPORT_FILE
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"no solve report at {path}; run 'solve' first") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: corrupt solve report ({exc.msg})") from exc
    if doc.get("schema_version") != SCHEMA_VERSION or doc.get("domain") != domain.name:
        raise ConfigError(f"{path}: report does not match this config")
    try:
        return LinearPolicy(np.array(doc["nominal_beliefs"]), np.array(doc["nominal_actions"]),
                            np.array(doc["gains"]), domain.layout)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: unusable solve report ({exc})") from exc


AGGREGATE_COLUMNS = ["seed", "scene", "failed", "realized_reward", "terminal_error", "min_obstacle_clearance"]


def run_rollout(cfg: RunConfig, out: Path) -> dict:
    domain = cfg.build(cfg.stages()[-1])
    policy = load_policy(out, domain)
    ro = cfg.rollout
    seeds = list(range(ro.seed, ro.seed + ro.seeds))
    b0 = domain.initial_belief
    x0 = b0.moments().mean if hasattr(b0, "moments") else b0.mean
    kw = dict(process_noise=ro.process_noise, observation_noise=ro.observation_noise,
              max_workers=ro.max_workers)
    scenes = {"nominal": rollout_many(policy, domain, seeds, x0, **kw)}
    if ro.obstacle_shift > 0:
        inits = np.array([
            cfg.entry.shift_obstacles(x0, np.random.default_rng([s, 1]), ro.obstacle_shift) for s in seeds
        ])
        scenes["shifted"] = rollout_many(policy, domain, seeds, inits, **kw)
    replay = rollout_many(policy, domain, [ro.seed], x0, process_noise=False, observation_noise=False)[0]

    rdir = out / ROLLOUT_DIR
    rdir.mkdir(parents=True, exist_ok=True)
    rows = []
    for scene, records in scenes.items():
        for rec in records:
            _write_json(rdir / f"{scene}_seed{rec.seed:05d}.json",
                        {"schema_version": SCHEMA_VERSION, "scene": scene, **rec.to_dict()})
            rows.append([rec.seed, scene, int(rec.failed), repr(rec.realized_reward)]
                        + [repr(float(rec.metrics.get(k, float("nan"))))
                           for k in ("terminal_error", "min_obstacle_clearance")])
    with (out / AGGREGATE_FILE).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(AGGREGATE_COLUMNS)
        w.writerows(rows)

    def clearances(records):
        return [float(r.metrics["min_obstacle_clearance"]) for r in records
                if not r.failed and "min_obstacle_clearance" in r.metrics]

    summary = {
        "schema_version": SCHEMA_VERSION,
        "seeds": seeds,
        "failures": {k: int(sum(r.failed for r in v)) for k, v in scenes.items()},
        "noiseless_replay_deviation": replay_deviation(policy, domain, replay),
    }
    nominal_c = clearances(scenes["nominal"])
    if nominal_c:
        summary["nominal_clearance_median"] = float(np.median(nominal_c))
    if "shifted" in scenes and nominal_c:
        shifted_c = clearances(scenes["shifted"])
        summary["shifted_clearance_min"] = float(min(shifted_c)) if shifted_c else None
        summary["shifted_to_nominal_ratio"] = (
            float(min(shifted_c) / np.median(nominal_c)) if shifted_c else None
        )
    _write_json(out / ROLLOUT_SUMMARY_FILE, summary)
    return summary


# -- entry point ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="beliefplan", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (("solve", "optimize the nominal belief trajectory"),
                           ("rollout", "execute a solved policy on simulated ground truth"),
                           ("check", "validate a config and print the merged result")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("config", help="path to a JSON config")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--seed", type=int, help="first rollout seed")
        p.add_argument("--stages", help="comma-separated shaping schedule, e.g. 10,1,0.3,0.05")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if args.seed is not None:
        cfg.rollout.seed = args.seed
    if args.stages:
        raw = cfg.to_dict()
        try:
            raw["schedule"] = [float(v) for v in args.stages.split(",")]
        except ValueError as exc:
            raise ConfigError(f"--stages: {exc}") from exc
        cfg = parse_config(raw)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        if args.command == "check":
            print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
            return EXIT_OK
        out = output_dir(cfg, args.config, args.out)
        if args.command == "solve":
            reports = run_solve(cfg, out)
            print(f"{cfg.domain}: {len(reports)} stage(s), converged={all(r.converged for r in reports)}, "
                  f"reward={reports[-1].total_reward:.6g}, output in {out}")
        else:
            summary = run_rollout(cfg, out)
            print(json.dumps(summary, indent=2, sort_keys=True))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK
