import json
from dataclasses import asdict
from pathlib import Path

from common.errors import *
from common.numerics import save_checkpoint, load_checkpoint
from common.worldmodel import WorldModelConfig
from common.goalvae import GoalVAEConfig
from common.agents import Agent, AgentConfig

import logging
log = logging.getLogger('model_store')


"""
Persistent agents: a binary parameter checkpoint plus a JSON sidecar with everything needed to
rebuild the agent (configurations, observation size, task family).
"""


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_agent(agent: Agent, path, extra: dict = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(agent.store, path)

    sidecar = {
        "agent": agent.config.to_dict(),
        "world_model": asdict(agent.wm_config),
        "goal_vae": asdict(agent.vae_config),
        "obs_size": agent.obs_size,
        "seed": agent.seed,
    }
    sidecar.update(extra or {})
    with open(sidecar_path(path), "w", encoding="utf-8") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
    return path


def read_sidecar(path) -> dict:
    side = sidecar_path(path)
    if not side.is_file():
        raise ConfigError(f"Checkpoint description file not found: {side}")
    with open(side, encoding="utf-8") as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as e:
            raise ParseError(f"Cannot parse checkpoint description {side}: {e.msg}", line=e.lineno)


def build_agent_from_sidecar(sidecar: dict, seed=None) -> Agent:
    try:
        config = AgentConfig(**sidecar["agent"])
        wm_config = WorldModelConfig(**sidecar["world_model"])
        vae_config = GoalVAEConfig(**sidecar["goal_vae"])
    except (KeyError, TypeError) as e:
        raise ConfigError(f"Incomplete checkpoint description: {e}")
    return Agent(config, wm_config, vae_config, sidecar["obs_size"], seed=sidecar.get("seed", 0) if seed is None else seed)


def load_agent(path, kind=None) -> Agent:
    """
    Rebuild the agent described by the sidecar and load its parameters.
    Only groups under the agent's own components are required to be present in the checkpoint.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Checkpoint file not found: {path}")
    sidecar = read_sidecar(path)
    agent = build_agent_from_sidecar(sidecar)
    if kind is not None and agent.kind != kind:
        raise ConfigError(f"Checkpoint holds a {agent.kind.value} agent but {kind.value} was requested")
    load_checkpoint(agent.store, path)
    log.info(f"Loaded {agent.kind.value} agent with {len(agent.store)} parameter groups from {path}")
    return agent
