import numpy as np
from joblib import Parallel, delayed
from tqdm import tqdm

from common.errors import *
from common.types import *
from common.envs import *
from common.replay import Episode, ReplayBuffer

import logging
log = logging.getLogger('collector')


def collect_episode(agent, spec: TaskSpec, seed: int, greedy=False, replay: ReplayBuffer = None, rng=None) -> Episode:
    """
    Run one episode of the agent in the environment.

    The agent observes every step so its posterior state is maintained online. A new policy decision
    is taken every action_repeat steps and the last action is repeated in between.
    Stochastic agents draw from rng (derived from the seed if not given). Greedy agents use no noise.
    """
    expected = observation_size(spec.pixels)
    if agent.obs_size is not None and agent.obs_size != expected:
        raise ConfigError(f"Agent expects observations of size {agent.obs_size} but the task produces {expected}")

    if greedy:
        rng = None
    elif rng is None:
        rng = np.random.default_rng([seed, 1])

    env_state, obs = env_reset(spec, seed)
    astate = agent.initial_state()
    action = np.zeros(2)
    prev_action = np.zeros(2)

    pixels, proprio, prev_rewards, actions, rewards, positions, velocities, targets = [], [], [], [], [], [], [], []
    for t in range(spec.episode_length):
        astate = agent.observe(astate, obs_vector(obs), prev_action, rng)
        if t % agent.action_repeat == 0:
            action, astate = agent.policy(astate, env_state, rng, greedy)
            action = np.asarray(action, dtype=np.float64)

        pixels.append(np.rint(obs.pixels * 255.0).astype(np.uint8))
        proprio.append(obs.proprio)
        prev_rewards.append(obs.prev_reward)
        actions.append(action)
        targets.append(env_state.target)

        env_state, obs, reward, done = env_step(env_state, action)
        rewards.append(reward)
        positions.append(env_state.position)
        velocities.append(env_state.velocity)
        prev_action = action
        if done:
            break

    episode = Episode(
        pixels=np.stack(pixels),
        proprio=np.stack(proprio),
        prev_rewards=np.array(prev_rewards),
        actions=np.stack(actions),
        rewards=np.array(rewards),
        positions=np.stack(positions),
        velocities=np.stack(velocities),
        targets=np.stack(targets) if spec.family == Family.NAVIGATION else None,
        seed=seed,
        spec=spec,
        decisions=astate.decisions,
        manager_decisions=astate.manager_decisions,
        info={"relocations": env_state.relocations},
    )
    if replay is not None:
        replay.add(episode)
    return episode


def collect_episodes(agent, tasks, greedy=True, n_jobs=1, progress=False):
    """
    Episodes for a list of (spec, seed) pairs in the given order.
    With n_jobs > 1 episodes run on threads sharing the agent parameters.
    """
    tasks = list(tasks)
    if n_jobs == 1:
        items = tqdm(tasks, desc="Episodes", disable=not progress)
        return [collect_episode(agent, spec, seed, greedy=greedy) for spec, seed in items]

    log.info(f"Collecting {len(tasks)} episodes with {n_jobs} threads")
    return Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(collect_episode)(agent, spec, seed, greedy) for spec, seed in tasks
    )
