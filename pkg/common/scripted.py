from dataclasses import dataclass, replace

import numpy as np

from common.errors import ConfigError, ProtocolError
from common.types import *
from common.arenas import cell_of, shortest_path
from common.envs import EnvState, dynamics_for, arena_for

"""
Scripted agents used as baselines and to calibrate thresholds.
They act on the true environment state and share the acting interface of learned agents.
"""


@dataclass
class ScriptedState:
    step: int = 0
    decisions: int = 0
    manager_decisions: int = 0


class ScriptedAgent:
    obs_size = None  # Any observation size is accepted
    action_repeat = 1
    kind = None

    def initial_state(self):
        return ScriptedState()

    def observe(self, state, obs_vec, prev_action, rng=None):
        return state

    def policy(self, state, env_state: EnvState = None, rng=None, greedy=False):
        action = np.clip(np.asarray(self.act(env_state, rng), dtype=np.float64), -1.0, 1.0)
        return action, replace(state, step=state.step + 1, decisions=state.decisions + 1)

    def act(self, env_state: EnvState, rng):
        raise NotImplementedError()


class ConstantAgent(ScriptedAgent):
    def __init__(self, action=(0.0, 0.0)):
        self.action = np.asarray(action, dtype=np.float64)

    def act(self, env_state, rng):
        return self.action


class RandomAgent(ScriptedAgent):
    """Uniform actions. Draws from the collector rng, or from its own seeded one if none is given."""

    def __init__(self, seed=0):
        self.rng = np.random.default_rng(seed)

    def act(self, env_state, rng):
        return (rng if rng is not None else self.rng).uniform(-1.0, 1.0, size=2)


class SpeedOracle(ScriptedAgent):
    """Action that brings the forward speed to the target speed in one step where possible."""

    def act(self, env_state, rng):
        spec = env_state.spec
        if spec.family != Family.LOCOMOTION:
            raise ProtocolError("Speed oracle only drives locomotion tasks")
        dyn = dynamics_for(spec)
        vx, vy = env_state.velocity
        return np.array([(spec.v_target - dyn.rho * vx) / dyn.alpha, -dyn.rho * vy / dyn.alpha])


class ShortestPathAgent(ScriptedAgent):
    """Follows the grid shortest path to the current target, steering through cell centers."""

    def __init__(self, slowdown=0.5):
        self.slowdown = slowdown

    def waypoint(self, env_state):
        arena = arena_for(env_state.spec)
        target = np.asarray(env_state.target, dtype=np.float64)
        path = shortest_path(arena, cell_of(env_state.position), cell_of(target))
        if path is None or len(path) <= 2:
            return target
        row, col = path[1]
        return np.array([col + 0.5, row + 0.5])

    def act(self, env_state, rng):
        spec = env_state.spec
        if spec.family != Family.NAVIGATION:
            raise ProtocolError("Shortest-path agent only drives navigation tasks")
        dyn = dynamics_for(spec)
        delta = self.waypoint(env_state) - env_state.position
        dist = float(np.linalg.norm(delta))
        if dist < 1e-9:
            desired = np.zeros(2)
        else:
            desired = delta / dist * min(dyn.v_max, self.slowdown * dist)
        return (desired - dyn.rho * env_state.velocity) / dyn.alpha


SCRIPTED_AGENTS = {
    "zero": lambda: ConstantAgent((0.0, 0.0)),
    "full_throttle": lambda: ConstantAgent((1.0, 0.0)),
    "random": RandomAgent,
    "speed_oracle": SpeedOracle,
    "shortest_path": ShortestPathAgent,
}


def scripted_agent(name: str):
    factory = SCRIPTED_AGENTS.get(name)
    if factory is None:
        raise ConfigError(f"Unknown scripted agent '{name}'. Allowed values: {sorted(SCRIPTED_AGENTS)}")
    return factory()


def oracle_for(spec: TaskSpec):
    return SpeedOracle() if spec.family == Family.LOCOMOTION else ShortestPathAgent()
