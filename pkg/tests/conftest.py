import numpy as np
import pytest

from common.types import *
from common.worldmodel import WorldModelConfig
from common.goalvae import GoalVAEConfig
from common.agents import Agent, AgentConfig
from common.envs import observation_size

TINY_PIXELS = 4


def tiny_configs(kind="hierarchical", **agent_kw):
    agent = AgentConfig(kind=kind, hidden=16, ensemble_size=2, imag_horizon=4, imag_starts=8, **agent_kw)
    wm = WorldModelConfig(h_dim=8, z_dim=4, hidden=16, embed=16)
    vae = GoalVAEConfig(codes=2, classes=4, hidden=16)
    return agent, wm, vae


def tiny_agent(kind="hierarchical", seed=0, pixels=TINY_PIXELS, **agent_kw) -> Agent:
    agent, wm, vae = tiny_configs(kind, **agent_kw)
    return Agent(agent, wm, vae, observation_size(pixels), seed=seed)


def locomotion_spec(v_target=1.0, episode_length=20, body=Body.BIPED):
    return TaskSpec(family=Family.LOCOMOTION, v_target=v_target, body=body, episode_length=episode_length, pixels=TINY_PIXELS)


def navigation_spec(arena="box5", episode_length=20, reward_variant=RewardVariant.TRAIN_SHAPED):
    return TaskSpec(family=Family.NAVIGATION, arena=arena, reward_variant=reward_variant, episode_length=episode_length, pixels=TINY_PIXELS)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
