"""Command-line entry point: simulate, solve, analyze, report."""

from __future__ import annotations

import argparse
import dataclasses
import glob
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis
from .agents import agent_info, make_agent
from .env import EpisodeLog, WorldConfig, run_episode
from .errors import (
    ConfigError,
    DegenerateDesignError,
    DependencyError,
    LogParseError,
    SampleSizeError,
    SolverError,
)
from .optimal import HORIZON, discounted_mvt_leave_step, mvt_leave_step, write_solution

log = logging.getLogger("patchforage")

MIXED_RANGE = (5.0, 12.0)


@dataclasses.dataclass(frozen=True)
class RunConfig:
    world: WorldConfig = dataclasses.field(default_factory=WorldConfig)
    agent: dict = dataclasses.field(default_factory=lambda: {"kind": "mvt_learner"})
    distances: tuple = (6.0, 8.0, 10.0, 12.0)
    episodes: int = 50
    base_seed: int = 0
    mixed_distances: bool = False
    output: str = "runs/out"

    def validate(self):
        if self.episodes < 1:
            raise ConfigError("episodes must be >= 1")
        for d in self.distances if not self.mixed_distances else MIXED_RANGE:
            dataclasses.replace(self.world, patch_distance=float(d)).validate()
        make_agent(self.agent)  # rejects bad agent settings early
        return self

    def plan(self):
        """(episode index, seed, distance) for every episode in the run."""
        if self.mixed_distances:
            total = self.episodes * len(self.distances)
            out = []
            for i in range(total):
                seed = self.base_seed + i
                d = float(np.random.default_rng(seed).uniform(*MIXED_RANGE))
                out.append((i, seed, d))
            return out
        out = []
        i = 0
        for d in self.distances:
            for _ in range(self.episodes):
                out.append((i, self.base_seed + i, float(d)))
                i += 1
        return out

    def to_dict(self):
        return {
            "world": self.world.to_dict(),
            "agent": dict(self.agent),
            "evaluation": {
                "distances": [float(d) for d in self.distances],
                "episodes": self.episodes,
                "base_seed": self.base_seed,
                "mixed_distances": self.mixed_distances,
            },
            "output": self.output,
        }

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - {"world", "agent", "evaluation", "output"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        ev = dict(data.get("evaluation", {}))
        bad = set(ev) - {"distances", "episodes", "base_seed", "mixed_distances"}
        if bad:
            raise ConfigError(f"unknown evaluation keys: {sorted(bad)}")
        kw = {}
        if "distances" in ev:
            kw["distances"] = tuple(float(d) for d in ev["distances"])
        if "episodes" in ev:
            kw["episodes"] = int(ev["episodes"])
        if "base_seed" in ev:
            kw["base_seed"] = int(ev["base_seed"])
        if "mixed_distances" in ev:
            kw["mixed_distances"] = bool(ev["mixed_distances"])
        if "output" in data:
            kw["output"] = str(data["output"])
        return cls(
            world=WorldConfig.from_dict(data.get("world", {})),
            agent=dict(data.get("agent", {"kind": "mvt_learner"})),
            **kw,
        ).validate()

    def digest(self):
        """Hash of everything that determines the simulated episodes (not the output path)."""
        data = self.to_dict()
        del data["output"]
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _simulate_one(job):
    world, agent_cfg, index, seed, distance, out_dir = job
    config = dataclasses.replace(world, patch_distance=distance)
    episode_id = f"ep{index:05d}"
    episode = run_episode(config, make_agent(agent_cfg), seed, agent_info(agent_cfg), episode_id)
    path = Path(out_dir) / f"{episode_id}_d{distance:g}.jsonl"
    episode.to_jsonl(path)
    return {
        "episode": episode_id,
        "file": path.name,
        "seed": seed,
        "distance": distance,
        "score": episode.score,
        "sha256": _sha256(path),
    }


def simulate(run, workers=1):
    """Run every episode of ``run`` and write logs plus ``manifest.json``."""
    out = Path(run.output)
    logs_dir = out / "logs"
    logs_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(run.world, run.agent, i, s, d, str(logs_dir)) for i, s, d in run.plan()]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            entries = list(pool.map(_simulate_one, jobs, chunksize=4))
    else:
        entries = [_simulate_one(j) for j in jobs]
    by_distance = {}
    for e in entries:
        by_distance.setdefault(e["distance"], []).append(e["score"])
    manifest = {
        "config": run.to_dict(),
        "config_hash": run.digest(),
        "episodes": entries,
        "scores": {
            f"{d:g}": {"mean": float(np.mean(v)), "sd": float(np.std(v)), "n": len(v)}
            for d, v in sorted(by_distance.items())
        },
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    log.info("wrote %d episode logs to %s", len(entries), logs_dir)
    return manifest


def load_logs(patterns):
    paths = sorted({p for pattern in patterns for p in glob.glob(pattern, recursive=True)})
    if not paths:
        raise FileNotFoundError(f"no logs matched {' '.join(patterns)}")
    return [EpisodeLog.from_jsonl(p) for p in paths]


# -- subcommands -------------------------------------------------------------


def cmd_simulate(args):
    data = {}
    if args.config:
        with open(args.config) as fh:
            data = json.load(fh)
    ev = data.setdefault("evaluation", {})
    if args.seed is not None:
        ev["base_seed"] = args.seed
    if args.episodes is not None:
        ev["episodes"] = args.episodes
    if args.distances:
        ev["distances"] = args.distances
    if args.out:
        data["output"] = args.out
    run = RunConfig.from_dict(data)
    manifest = simulate(run, workers=args.workers)
    print(f"{len(manifest['episodes'])} episodes, config {manifest['config_hash'][:12]}")
    return 0


def cmd_solve(args):
    if args.kind == "mvt":
        solution = mvt_leave_step(args.tau)
    else:
        solution = discounted_mvt_leave_step(args.tau, args.gamma, args.horizon)
    if args.out:
        write_solution(solution, args.out)
    print(json.dumps({"kind": args.kind, "tau": args.tau,
                      "gamma": 1.0 if args.kind == "mvt" else args.gamma,
                      "leave_step": solution.leave_step}))
    return 0


def _default_solvers(logs):
    solvers = [{"kind": "mvt"}, {"kind": "empirical"}]
    if all(e.agent and e.agent.get("kind") == "planner" for e in logs):
        solvers.append({"kind": "dmvt", "gamma": None})
    return solvers


def cmd_analyze(args):
    logs = load_logs(args.logs)
    if args.all:
        requested = list(analysis.ANALYSES)
        if any(e.agent_state is None for e in logs):
            log.warning("logs carry no agent state; skipping dynamics")
            requested.remove("dynamics")
    else:
        requested = args.analyses or []
        if not requested:
            raise DependencyError("name at least one analysis or pass --all")
        unknown = sorted(set(requested) - set(analysis.ANALYSES))
        if unknown:
            raise ConfigError(f"unknown analyses {unknown}; choose from {analysis.ANALYSES}")
    solvers = None
    if args.solver:
        solvers = [{"kind": k, "gamma": None} for k in args.solver if k != "dmvt"]
        if "dmvt" in args.solver:
            solvers += [{"kind": "dmvt", "gamma": g} for g in (args.gamma or [None])]
    elif args.all:
        solvers = _default_solvers(logs)
    summary, written = analysis.run_analyses(
        logs, args.out, requested, solvers=solvers, state_index=args.state_index
    )
    print(f"{len(written)} files written to {args.out}")
    return 0


def cmd_report(args):
    from .report import make_figures  # matplotlib is only needed here

    written, skipped = make_figures(args.out, args.figures)
    for name in skipped:
        print(f"skipped {name}: input CSV missing", file=sys.stderr)
    print(f"{len(written)} figures written")
    return 0 if written and not skipped else 1


def build_parser():
    parser = argparse.ArgumentParser(prog="patchforage", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a batch of episodes")
    p.add_argument("--config", help="RunConfig JSON")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--seed", type=int, help="base seed (overrides config)")
    p.add_argument("--episodes", type=int, help="episodes per distance (overrides config)")
    p.add_argument("--distances", type=float, nargs="+", help="patch distances in metres")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("solve", help="optimal patch leaving step")
    p.add_argument("kind", choices=("mvt", "dmvt"))
    p.add_argument("--tau", type=int, required=True, help="travel steps between patches")
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--horizon", type=int, default=HORIZON)
    p.add_argument("--out", help="write the solution (.json or .csv)")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("analyze", help="analyses over episode logs")
    p.add_argument("analyses", nargs="*", metavar="ANALYSIS", help=f"any of: {', '.join(analysis.ANALYSES)}")
    p.add_argument("--logs", nargs="+", required=True, help="log file globs")
    p.add_argument("--out", required=True)
    p.add_argument("--all", action="store_true", help="run every applicable analysis")
    p.add_argument("--solver", action="append", choices=("mvt", "dmvt", "empirical"),
                   help="optimality reference (repeatable)")
    p.add_argument("--gamma", type=float, action="append",
                   help="discount factor for dmvt gaps (repeatable; default: each planner's own)")
    p.add_argument("--state-index", type=int, default=0)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("report", help="SVG figures from analysis CSVs")
    p.add_argument("--out", required=True, help="analysis output directory")
    p.add_argument("--figures", help="figure directory (default: <out>/figures)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    logging.basicConfig(
        level=os.environ.get("FORAGE_LOG_LEVEL", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "workers", 1) < 1:
        parser.error("--workers must be >= 1")
    try:
        return args.func(args)
    except (ConfigError, DependencyError, SolverError, LogParseError, SampleSizeError,
            DegenerateDesignError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
