from dataclasses import dataclass, replace, asdict
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from tqdm import tqdm

from service.App import *
from common.errors import *
from common.types import *
from common.numerics import seed_everything
from common.envs import observation_size
from common.agents import Agent, AgentConfig
from common.actor_critic import train_step, UpdateReport
from common.replay import ReplayBuffer, replay_sample
from common.scripted import RandomAgent, oracle_for
from common.metrics import steps_to_threshold
from common.model_store import save_agent, load_agent
from inputs.collector import collect_episode, collect_episodes
from outputs.reports import write_metrics, write_manifest, update_manifest

import logging
log = logging.getLogger('trainer')

EVAL_SEED_BASE = 1_000_000  # Evaluation episodes use seeds disjoint from training ones


def build_agent(run: RunConfig, seed=None) -> Agent:
    return Agent(
        run.agent, run.world_model, run.goal_vae,
        observation_size(run.task.pixels), seed=run.seed if seed is None else seed,
    )


def eval_tasks(sample_spec: Callable, episodes: int):
    """Fixed (spec, seed) pairs so that every evaluation of a run uses the same tasks."""
    return [(sample_spec(np.random.default_rng(EVAL_SEED_BASE + i)), EVAL_SEED_BASE + i) for i in range(episodes)]


def mean_eval_return(agent, tasks) -> float:
    episodes = collect_episodes(agent, tasks, greedy=True)
    return float(np.mean([ep.total_return for ep in episodes]))


def checkpoint_extra(task_spec_or_dist) -> dict:
    d = task_spec_or_dist.to_dict()
    return {"family": d["family"], "body": d.get("body"), "pixels": d["pixels"]}


def train_loop(
        agent: Agent, sample_spec: Callable, train: TrainConfig, total_steps: int, eval_every: int,
        rng, out_dir: Optional[Path] = None, ckpt_extra: dict = None,
        threshold: Optional[float] = None, progress=True,
):
    """
    Interleave episode collection with updates and evaluate every eval_every env steps.

    sample_spec(rng) returns the task of the next episode. One update of every component is done
    per train_every collected env steps once the replay holds a full subsequence.
    Returns the list of metric rows, one per evaluation point.
    A NumericalDivergence appends a divergence row before it is raised again.
    """
    replay = ReplayBuffer(train.replay_capacity)
    tasks = eval_tasks(sample_spec, train.eval_episodes)

    rows = []
    env_steps = 0
    episodes = 0
    updates = 0
    carry = 0
    next_eval = eval_every
    report = UpdateReport()
    recent_returns = []

    bar = tqdm(total=total_steps, desc="Env steps", disable=not progress)
    try:
        while env_steps < total_steps:
            spec = sample_spec(rng)
            spec = replace(spec, episode_length=min(spec.episode_length, total_steps - env_steps))
            seed = int(rng.integers(EVAL_SEED_BASE))
            actor = RandomAgent(seed) if episodes < train.prefill_episodes else agent
            ep = collect_episode(actor, spec, seed, greedy=False, replay=replay, rng=rng)
            episodes += 1
            env_steps += len(ep)
            recent_returns.append(ep.total_return)
            bar.update(len(ep))

            if any(len(e) >= train.batch_length for e in replay.episodes):
                carry += len(ep)
                for _ in range(carry // train.train_every):
                    batch = replay_sample(replay, train.batch_size, train.batch_length, rng=rng)
                    report = train_step(agent, batch, rng)
                    updates += 1
                carry %= train.train_every

            while next_eval <= env_steps:
                row = {
                    "env_step": next_eval,
                    "episodes": episodes,
                    "updates": updates,
                    "status": "ok",
                    "mean_return": mean_eval_return(agent, tasks),
                    "train_return": float(np.mean(recent_returns)) if recent_returns else np.nan,
                    **report.to_dict(),
                    "primitive": "",
                }
                rows.append(row)
                recent_returns = []
                log.info(f"Step {next_eval}: eval return {row['mean_return']:.3f} after {updates} updates")
                if out_dir is not None:
                    write_metrics(rows, out_dir / "metrics.csv")
                    save_agent(agent, out_dir / "checkpoints" / f"step_{next_eval}.hgcp", {**(ckpt_extra or {}), "env_step": next_eval})
                    save_agent(agent, out_dir / "checkpoints" / "latest.hgcp", {**(ckpt_extra or {}), "env_step": next_eval})
                next_eval += eval_every
                if threshold is not None and steps_to_threshold([r["env_step"] for r in rows], [r["mean_return"] for r in rows], threshold) < float("inf"):
                    return rows
    except NumericalDivergence as e:
        log.error(f"Numerical divergence in '{e.primitive}' at env step {env_steps}: {e}")
        rows.append({
            "env_step": env_steps, "episodes": episodes, "updates": updates, "status": "diverged",
            "primitive": e.primitive,
        })
        if out_dir is not None:
            write_metrics(rows, out_dir / "metrics.csv")
        raise
    finally:
        bar.close()
    return rows


def run_training(run: RunConfig, progress=True) -> Path:
    """Train an agent on the task distribution and write manifest, metrics and checkpoints into the run folder."""
    seed_everything(run.seed)
    out_dir = Path(run.out_dir)
    (out_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    App.run_dir = out_dir

    agent = build_agent(run)
    App.agent = agent
    write_manifest(out_dir, run.to_dict(), {"kind": "training"})

    rng = np.random.default_rng(run.seed)
    rows = train_loop(
        agent, lambda r: run.task.sample(rng=r), run.train, run.train.total_steps, run.train.eval_every,
        rng, out_dir=out_dir, ckpt_extra=checkpoint_extra(run.task), progress=progress,
    )
    log.info(f"Finished training with {len(rows)} evaluation rows in {out_dir}")
    return out_dir


#
# Fine-tuning
#

@dataclass(frozen=True)
class FinetuneRegime:
    name: str
    kind: AgentKind
    from_checkpoint: bool
    trainable: tuple = ()  # Trainable components of a hierarchical agent loaded from a checkpoint

    def mask(self) -> FreezeMask:
        if not self.from_checkpoint or self.kind == AgentKind.FLAT:
            return FreezeMask()
        return FreezeMask.trainable_only(self.trainable)


REGIMES = {
    r.name: r for r in [
        FinetuneRegime("flat-scratch", AgentKind.FLAT, from_checkpoint=False),
        FinetuneRegime("flat-finetune", AgentKind.FLAT, from_checkpoint=True),
        FinetuneRegime("hier-scratch", AgentKind.HIERARCHICAL, from_checkpoint=False),
        FinetuneRegime("wm-m", AgentKind.HIERARCHICAL, from_checkpoint=True, trainable=("wm", "mgr")),
        FinetuneRegime("wm-m-v", AgentKind.HIERARCHICAL, from_checkpoint=True, trainable=("wm", "mgr", "vae")),
        FinetuneRegime("wm-m-v-w", AgentKind.HIERARCHICAL, from_checkpoint=True, trainable=("wm", "mgr", "vae", "wrk")),
    ]
}


def get_regime(name: str) -> FinetuneRegime:
    regime = REGIMES.get(name)
    if regime is None:
        raise ConfigError(f"Unknown fine-tune regime '{name}'. Allowed values: {list(REGIMES)}")
    return regime


def apply_mask(agent: Agent, mask: FreezeMask):
    if mask.all_frozen(agent.kind):
        raise ConfigError("Every component is frozen. At least one group must be trainable for fine-tuning.")
    # Flags restored from a checkpoint belong to the run that wrote it
    agent.store.set_trainable("", True)
    frozen = []
    for prefix in mask.frozen_prefixes(agent.kind):
        frozen.extend(agent.store.set_trainable(prefix, False))
    return frozen


def scripted_return(spec: TaskSpec, episodes=3) -> float:
    """Mean return of the scripted oracle on the task."""
    tasks = [(spec, EVAL_SEED_BASE + i) for i in range(episodes)]
    return mean_eval_return(oracle_for(spec), tasks)


def auto_threshold(spec: TaskSpec, slack=0.2, episodes=3) -> float:
    """Scripted oracle return with slack, which is below the oracle for negative and positive returns."""
    ret = scripted_return(spec, episodes)
    return ret - slack * abs(ret)


def run_finetune(
        checkpoint, mask: FreezeMask, spec: TaskSpec, threshold, max_steps: int, eval_every: int,
        train: TrainConfig = None, out_dir=None, seed=0, agent: Agent = None, slack=0.2,
        stop_at_threshold=False, progress=True,
) -> dict:
    """
    Train only the unfrozen groups of a checkpointed (or given) agent on one task.

    threshold is a number or "auto". Returns the metric rows, the threshold, the first env step where
    the 5-evaluation moving average of the return reaches it (inf if never) and whether the frozen
    groups stayed bit-identical.
    """
    seed_everything(seed)
    if agent is None:
        if checkpoint is None:
            raise ConfigError("Fine-tuning needs a checkpoint or an agent")
        agent = load_agent(checkpoint)
    if agent.obs_size != observation_size(spec.pixels):
        raise ConfigError(f"Checkpoint observation size {agent.obs_size} does not match the task ({observation_size(spec.pixels)})")

    frozen = apply_mask(agent, mask)
    before = {n: agent.store.groups[n].numpy().tobytes() for n in frozen}

    if threshold is None or threshold == "auto":
        threshold = auto_threshold(spec, slack)
    threshold = float(threshold)
    log.info(f"Fine-tuning {len(agent.store.names(trainable_only=True))} groups with {len(frozen)} frozen. Threshold {threshold:.3f}")

    train = train or TrainConfig(total_steps=max_steps, eval_every=eval_every)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        write_manifest(out_dir, {
            "checkpoint": str(checkpoint) if checkpoint else None, "mask": asdict(mask), "spec": spec.to_dict(),
            "max_steps": max_steps, "eval_every": eval_every, "train": asdict(train), "seed": seed,
        }, {"kind": "finetune", "threshold": threshold})

    rng = np.random.default_rng(seed)
    rows = train_loop(
        agent, lambda r: spec, train, max_steps, eval_every, rng,
        out_dir=out_dir, ckpt_extra=checkpoint_extra(spec),
        threshold=threshold if stop_at_threshold else None, progress=progress,
    )

    intact = all(agent.store.groups[n].numpy().tobytes() == b for n, b in before.items())
    if not intact:
        raise ProtocolError("Frozen parameter groups changed during fine-tuning")

    crossing = steps_to_threshold([r["env_step"] for r in rows], [r["mean_return"] for r in rows], threshold)
    if out_dir is not None:
        update_manifest(out_dir, steps_to_threshold=crossing)
    return {
        "rows": rows,
        "threshold": threshold,
        "steps_to_threshold": crossing,
        "frozen_groups": frozen,
        "frozen_intact": intact,
        "agent": agent,
    }


def regime_agent(regime: FinetuneRegime, checkpoint, run: RunConfig, spec: TaskSpec) -> Agent:
    """Agent for a named regime: loaded from the checkpoint or freshly initialized."""
    if regime.from_checkpoint:
        return load_agent(checkpoint, kind=regime.kind)
    agent_config = replace(run.agent, kind=regime.kind, action_repeat=None)
    return Agent(agent_config, run.world_model, run.goal_vae, observation_size(spec.pixels), seed=run.seed)
