from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd
from tqdm import tqdm

from service.App import *
from service.trainer import run_training
from common.errors import *
from common.types import *
from common.metrics import *
from common.model_store import load_agent, read_sidecar
from common.scripted import scripted_agent
from common.arenas import get_arena
from outputs.plots import plot_trajectories
from inputs.collector import collect_episodes
from outputs.reports import write_csv, ABLATION_COLUMNS, SPEED_COLUMNS, MAZE_COLUMNS

import logging
log = logging.getLogger('evaluator')

EVAL_SEED_BASE = 2_000_000
SPEED_EPISODE_LENGTH = 500
MAZE_EPISODE_LENGTH = 3000


def parse_grid(grid) -> list:
    """Target speeds from "a:b:step" (both ends included) or from a list of numbers. "auto" gives None."""
    if grid is None or grid == "auto":
        return None
    if isinstance(grid, (list, tuple)):
        values = [float(v) for v in grid]
    else:
        parts = str(grid).split(":")
        try:
            if len(parts) != 3:
                raise ValueError()
            start, stop, step = (float(p) for p in parts)
        except ValueError:
            raise ConfigError(f"Speed grid must look like a:b:step, got '{grid}'")
        if step <= 0 or stop < start:
            raise ConfigError(f"Empty speed grid '{grid}'")
        count = int(np.floor((stop - start) / step + 1e-9)) + 1
        values = [round(start + i * step, 10) for i in range(count)]
    if not values or min(values) < 0:
        raise ConfigError(f"Invalid speed grid {values}")
    return values


def default_grid(body: Body) -> list:
    start, stop, step = SPEED_SWEEPS[to_enum(Body, body)]
    return parse_grid(f"{start}:{stop}:{step}")


@dataclass
class SpeedSweep:
    grid: Optional[List[float]] = None  # Default is the sweep range of the evaluated body
    episodes: int = 10
    body: Optional[Body] = None  # Default is the body of the checkpoint
    episode_length: int = SPEED_EPISODE_LENGTH
    pixels: int = 16

    family = Family.LOCOMOTION

    def tasks(self, body: Body):
        grid = self.grid if self.grid is not None else default_grid(body)
        for v in grid:
            spec = TaskSpec(family=Family.LOCOMOTION, v_target=v, body=body, episode_length=self.episode_length, pixels=self.pixels)
            for i in range(self.episodes):
                yield spec, EVAL_SEED_BASE + i


@dataclass
class MazeSuite:
    arenas: List[ArenaName] = field(default_factory=lambda: list(ArenaName))
    episodes: int = 10
    episode_length: int = MAZE_EPISODE_LENGTH
    touch_radius: float = 0.5
    pixels: int = 16

    family = Family.NAVIGATION

    def __post_init__(self):
        self.arenas = [to_enum(ArenaName, a) for a in self.arenas]

    def tasks(self, body: Body = None):
        for arena in self.arenas:
            spec = TaskSpec(
                family=Family.NAVIGATION, arena=arena, reward_variant=RewardVariant.EVAL_CONSTANT,
                touch_radius=self.touch_radius, episode_length=self.episode_length, pixels=self.pixels,
            )
            for i in range(self.episodes):
                yield spec, EVAL_SEED_BASE + i


def protocol_from_config(config: dict, protocol: str = None):
    """Build the evaluation protocol of the "eval" config section."""
    section = config.get("eval", {})
    name = protocol or section.get("protocol", "speed")
    length = section.get("episode_length")
    pixels = config.get("task", {}).get("pixels", 16)
    if name == "speed":
        body = section.get("body")
        return SpeedSweep(
            grid=parse_grid(section.get("grid", "auto")), episodes=int(section.get("episodes", 10)),
            body=to_enum(Body, body) if body else None, episode_length=int(length or SPEED_EPISODE_LENGTH), pixels=pixels,
        )
    if name == "maze":
        return MazeSuite(
            arenas=section.get("arenas", [a.value for a in ArenaName]), episodes=int(section.get("episodes", 10)),
            episode_length=int(length or MAZE_EPISODE_LENGTH), pixels=pixels,
        )
    raise ConfigError(f"Unknown evaluation protocol '{name}'. Use speed or maze")


def speed_report(episodes) -> pd.DataFrame:
    df = pd.DataFrame([episode_summary(ep) for ep in episodes])
    report = df.groupby("v_target", sort=True).agg(
        mean_return=("return", "mean"),
        mean_abs_speed_error=("mean_abs_speed_error", "mean"),
        episodes=("return", "size"),
    ).reset_index()
    return report[SPEED_COLUMNS]


def maze_report(episodes) -> pd.DataFrame:
    """One row per arena: mean targets reached (respawning arenas) or success rate (fixed target) and mean steps."""
    rows = []
    by_arena = {}
    for ep in episodes:
        audit_eval_rewards(ep.rewards)
        by_arena.setdefault(ep.spec.arena, []).append(ep)
    for arena, eps in by_arena.items():
        if eps[0].spec.target_respawn:
            reached = [check_touch_consistency(ep) for ep in eps]
            rows.append({
                "arena": arena.value, "targets_or_success": float(np.mean(reached)),
                "steps": float(np.mean([len(ep) for ep in eps])), "episodes": len(eps),
                "metric": "targets_reached",
            })
        else:
            results = [maze_success(ep) for ep in eps]
            rows.append({
                "arena": arena.value, "targets_or_success": 100.0 * float(np.mean([s for s, _ in results])),
                "steps": float(np.mean([n for _, n in results])), "episodes": len(eps),
                "metric": "success_percent",
            })
    return pd.DataFrame(rows, columns=MAZE_COLUMNS)


def check_protocol(sidecar: dict, protocol):
    family = sidecar.get("family")
    if family is not None and to_enum(Family, family) != protocol.family:
        raise ConfigError(f"Checkpoint was trained on {family} tasks but the protocol evaluates {protocol.family.value}")
    pixels = sidecar.get("pixels")
    if pixels is not None and int(pixels) != protocol.pixels:
        raise ConfigError(f"Checkpoint uses {pixels} pixel observations but the protocol renders {protocol.pixels}")


def run_zero_shot_eval(checkpoint, protocol, agent=None, n_jobs=1, progress=True):
    """
    Evaluate a checkpoint (or a given agent, for example a scripted one) under a protocol
    without any training. Returns (report data frame, episodes).
    """
    body = getattr(protocol, "body", None)
    if agent is None:
        sidecar = read_sidecar(checkpoint)
        check_protocol(sidecar, protocol)
        agent = load_agent(checkpoint)
        if body is None and sidecar.get("body"):
            body = to_enum(Body, sidecar["body"])
    body = body or Body.BIPED

    tasks = list(protocol.tasks(body))
    log.info(f"Evaluating {len(tasks)} episodes")
    episodes = collect_episodes(agent, tasks, greedy=True, n_jobs=n_jobs, progress=progress)

    if isinstance(protocol, SpeedSweep):
        return speed_report(episodes), episodes
    return maze_report(episodes), episodes


def run_baseline(name: str, protocol, n_jobs=1, progress=False):
    """Report of a scripted agent (random, zero, speed_oracle, shortest_path ...) under a protocol."""
    return run_zero_shot_eval(None, protocol, agent=scripted_agent(name), n_jobs=n_jobs, progress=progress)


def plot_maze_trajectories(episodes, out_dir) -> list:
    """One top-down SVG per arena (<arena>.svg) with the recorded paths of its episodes."""
    by_arena = {}
    for ep in episodes:
        if ep.spec.family != Family.NAVIGATION:
            raise ConfigError("Trajectories are drawn for navigation episodes only")
        by_arena.setdefault(ep.spec.arena, []).append(ep)
    paths = [
        plot_trajectories(eps, get_arena(arena), Path(out_dir) / f"{arena.value}.svg", title=arena.value)
        for arena, eps in by_arena.items()
    ]
    log.info(f"Wrote {len(paths)} trajectory plots to {out_dir}")
    return paths


def run_horizon_ablation(run: RunConfig, ks, sweep: SpeedSweep, out_dir, include_flat=True, progress=True) -> pd.DataFrame:
    """
    Train one hierarchical agent per goal horizon k (and a flat baseline) on the same task distribution
    and evaluate each with the speed sweep. Rows: agent, k, v_target, mean_return, mean_abs_speed_error.
    """
    out_dir = Path(out_dir)
    variants = [("hierarchical", int(k)) for k in ks]
    if include_flat:
        variants.append(("flat", None))

    frames = []
    for kind, k in tqdm(variants, desc="Horizons", disable=not progress):
        agent_config = replace(run.agent, kind=kind, goal_horizon=k or run.agent.goal_horizon, action_repeat=None)
        name = f"k{k}" if k else "flat"
        variant_run = replace(run, agent=agent_config, out_dir=str(out_dir / name))
        run_dir = run_training(variant_run, progress=False)

        report, _ = run_zero_shot_eval(run_dir / "checkpoints" / "latest.hgcp", sweep, progress=False)
        report.insert(0, "k", k if k else np.nan)
        report.insert(0, "agent", kind)
        frames.append(report)
        log.info(f"Horizon ablation {name}: mean return {report['mean_return'].mean():.3f}")

    result = pd.concat(frames, ignore_index=True)[ABLATION_COLUMNS]
    write_csv(result, out_dir / "ablation.csv", ABLATION_COLUMNS)
    return result
