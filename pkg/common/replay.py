from collections import deque
from dataclasses import dataclass, field
import threading
from typing import Optional

import numpy as np

from common.errors import *
from common.types import TaskSpec

import logging
log = logging.getLogger('replay')

DEFAULT_CAPACITY = 2000


@dataclass(eq=False)
class Episode:
    """
    One recorded episode. Index t refers to environment step t:
    observation o_t seen before acting, action a_t applied, reward r_t emitted, position after the step
    and the target in effect during the step.
    """
    pixels: np.ndarray  # (T, H, W, 3) uint8
    proprio: np.ndarray  # (T, 4)
    prev_rewards: np.ndarray  # (T,) reward channel of o_t
    actions: np.ndarray  # (T, 2)
    rewards: np.ndarray  # (T,)
    positions: np.ndarray  # (T, 2)
    velocities: np.ndarray  # (T, 2)
    targets: Optional[np.ndarray]  # (T, 2) or None for locomotion
    seed: int
    spec: TaskSpec
    decisions: int = 0  # Policy decisions
    manager_decisions: int = 0
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        T = len(self.rewards)
        arrays = [self.pixels, self.proprio, self.prev_rewards, self.actions, self.positions, self.velocities]
        if self.targets is not None:
            arrays.append(self.targets)
        if any(len(a) != T for a in arrays):
            raise ShapeError(f"Episode arrays have different lengths: {[len(a) for a in arrays]} vs {T} rewards")
        if self.pixels.dtype != np.uint8:
            raise ShapeError(f"Episode pixels must be stored as uint8, got {self.pixels.dtype}")

    def __len__(self):
        return len(self.rewards)

    @property
    def total_return(self):
        return float(np.sum(self.rewards))

    def observations(self, start=0, stop=None) -> np.ndarray:
        """Flattened observation vectors (pixels in [0, 1], proprioception, previous reward) of steps [start, stop)."""
        stop = len(self) if stop is None else stop
        pixels = self.pixels[start:stop].reshape(stop - start, -1).astype(np.float64) / 255.0
        return np.concatenate([pixels, self.proprio[start:stop], self.prev_rewards[start:stop, None]], axis=1)

    def prev_actions(self, start=0, stop=None) -> np.ndarray:
        """Action that led to each observation, zero for the first one."""
        shifted = np.concatenate([np.zeros((1, self.actions.shape[1])), self.actions[:-1]])
        return shifted[start:stop]


class ReplayBuffer:
    """FIFO store of whole episodes. A single writer adds while samples are drawn from a snapshot."""

    def __init__(self, capacity=DEFAULT_CAPACITY):
        if capacity < 1:
            raise ConfigError(f"Replay capacity must be positive: {capacity}")
        self.capacity = capacity
        self.episodes = deque(maxlen=capacity)
        self.lock = threading.Lock()
        self.evicted = 0

    def add(self, episode: Episode):
        with self.lock:
            if len(self.episodes) == self.capacity:
                self.evicted += 1
                log.debug(f"Replay buffer full. Evicting the oldest episode ({self.evicted} so far).")
            self.episodes.append(episode)

    def __len__(self):
        return len(self.episodes)

    @property
    def steps(self):
        return int(sum(len(e) for e in self.episodes))

    def snapshot(self):
        with self.lock:
            return list(self.episodes)


def replay_sample(buffer: ReplayBuffer, B: int, L: int, seed=None, rng=None) -> dict:
    """
    B subsequences of L steps drawn uniformly over all valid (episode, offset) pairs.
    Subsequences never cross episode boundaries.
    """
    if B < 1 or L < 1:
        raise ConfigError(f"Batch size and length must be positive, got B={B}, L={L}")
    if rng is None:
        rng = np.random.default_rng(seed)

    episodes = buffer.snapshot()
    counts = np.array([max(len(e) - L + 1, 0) for e in episodes], dtype=np.int64)
    total = int(counts.sum())
    if total == 0:
        raise NotEnoughData(f"No episode in the buffer of {len(episodes)} has at least {L} steps")

    bounds = np.cumsum(counts)
    pairs = rng.integers(total, size=B)
    episode_idx = np.searchsorted(bounds, pairs, side="right")
    offsets = pairs - (bounds[episode_idx] - counts[episode_idx])

    obs, actions, rewards = [], [], []
    for e, o in zip(episode_idx, offsets):
        ep = episodes[e]
        obs.append(ep.observations(o, o + L))
        actions.append(ep.prev_actions(o, o + L))
        # The reward of the transition into o_t is the reward channel of o_t
        rewards.append(ep.prev_rewards[o:o + L])

    return {
        "obs": np.stack(obs),
        "actions": np.stack(actions),
        "rewards": np.stack(rewards),
        "episode": episode_idx,
        "offset": offsets,
    }
