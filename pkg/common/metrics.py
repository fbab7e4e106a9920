import numpy as np
import pandas as pd

from common.errors import *
from common.types import *
from common.envs import FAR_REWARD, TOUCH_REWARD
from common.replay import Episode

"""
Episode metrics: targets reached, fixed-target success, speed tracking error, threshold crossing.
"""


def touching(ep: Episode, eps=None) -> np.ndarray:
    """Boolean (T,) flags of steps ending within eps of the target in effect during the step."""
    if ep.targets is None:
        raise ProtocolError("Episode has no targets")
    eps = ep.spec.touch_radius if eps is None else eps
    return np.linalg.norm(ep.positions - ep.targets, axis=1) < eps


def rising_edges(flags) -> int:
    flags = np.asarray(flags, dtype=bool)
    if len(flags) == 0:
        return 0
    return int(flags[0]) + int(np.sum(flags[1:] & ~flags[:-1]))


def count_targets_reached(ep: Episode, eps=None) -> int:
    """Number of entries into the touch ball. A respawned target starts a new event."""
    if not ep.spec.target_respawn:
        raise ProtocolError(f"Arena {ep.spec.arena} has a fixed target. Use maze_success instead.")
    flags = touching(ep, eps)
    new_target = np.ones(len(flags), dtype=bool)
    new_target[1:] = np.any(ep.targets[1:] != ep.targets[:-1], axis=1)
    events = flags & (new_target | np.concatenate([[True], ~flags[:-1]]))
    return int(np.sum(events))


def touch_events_from_rewards(rewards) -> int:
    """First-touch events in a constant evaluation reward stream."""
    return rising_edges(np.asarray(rewards) == TOUCH_REWARD)


def audit_eval_rewards(rewards):
    """Raise ProtocolError if any reward is outside the constant evaluation reward set."""
    rewards = np.asarray(rewards, dtype=np.float64)
    bad = ~np.isin(rewards, [FAR_REWARD, TOUCH_REWARD])
    if np.any(bad):
        raise ProtocolError(f"{int(bad.sum())} rewards outside {{{FAR_REWARD}, {TOUCH_REWARD}}}, first at step {int(np.argmax(bad))}")
    return True


def check_touch_consistency(ep: Episode, eps=None) -> int:
    """
    Targets reached by position must equal touch events in the constant evaluation rewards.
    Returns the count, raises ProtocolError on a mismatch.
    """
    reached = count_targets_reached(ep, eps)
    from_rewards = touch_events_from_rewards(ep.rewards)
    if reached != from_rewards:
        raise ProtocolError(f"Episode seed {ep.seed}: {reached} targets reached by position but {from_rewards} touch events in the rewards")
    return reached


def maze_success(ep: Episode, eps=None):
    """Returns (success, steps) where steps counts environment steps to the first touch (episode length if never)."""
    flags = touching(ep, eps)
    if not np.any(flags):
        return False, len(ep)
    return True, int(np.argmax(flags)) + 1


def mean_abs_speed_error(ep: Episode) -> float:
    if ep.spec.family != Family.LOCOMOTION:
        raise ProtocolError("Speed error is defined for locomotion episodes only")
    return float(np.mean(np.abs(ep.velocities[:, 0] - ep.spec.v_target)))


def moving_average(values, window=5, min_periods=1) -> np.ndarray:
    return pd.Series(values, dtype=float).rolling(window, min_periods=min_periods).mean().to_numpy()


def steps_to_threshold(env_steps, returns, threshold, window=5) -> float:
    """
    First env step where the moving average of returns reaches the threshold, inf if never.
    Only full windows count, so a single early evaluation cannot set it.
    """
    smoothed = moving_average(returns, window, min_periods=window)
    hits = np.nonzero(smoothed >= threshold)[0]
    if len(hits) == 0:
        return float("inf")
    return float(np.asarray(env_steps)[hits[0]])


def episode_summary(ep: Episode) -> dict:
    """Per-episode row used in evaluation reports."""
    row = {
        "seed": ep.seed,
        "return": ep.total_return,
        "steps": len(ep),
        "decisions": ep.decisions,
        "manager_decisions": ep.manager_decisions,
    }
    if ep.spec.family == Family.LOCOMOTION:
        row["v_target"] = ep.spec.v_target
        row["mean_abs_speed_error"] = mean_abs_speed_error(ep)
    elif ep.spec.target_respawn:
        row["targets_reached"] = count_targets_reached(ep)
    else:
        success, steps = maze_success(ep)
        row["success"] = success
        row["steps_to_target"] = steps
    return row
