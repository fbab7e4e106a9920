from dataclasses import dataclass, replace

import numpy as np

from common.errors import ConfigError
from common.types import *
from common.arenas import Arena, PALETTE, FREE, get_arena, furthest_free_cell

"""
Desk-scale environments: speed-matching locomotion and egocentric maze navigation.

Both families share the same planar point-mass dynamics:
  v <- clip(rho * v + alpha * action, v_max), p <- p + v
Navigation clamps the body against walls. Locomotion has no walls and is scored by the forward (x) speed.
"""


@dataclass(frozen=True)
class Dynamics:
    rho: float  # Momentum
    alpha: float  # Acceleration gain
    v_max: float

    @property
    def terminal_speed(self):
        return min(self.alpha / (1.0 - self.rho), self.v_max)


LOCOMOTION_DYNAMICS = {
    Body.BIPED: Dynamics(rho=0.9, alpha=1.0, v_max=8.0),
    Body.QUAD: Dynamics(rho=0.9, alpha=0.6, v_max=5.0),
}
NAVIGATION_DYNAMICS = Dynamics(rho=0.9, alpha=0.05, v_max=0.25)

BODY_RADIUS = 0.2
TARGET_MARGIN = 0.3  # Max offset of a spawned target from its cell center

FAR_REWARD = -8.0  # Evaluation reward away from the target
TOUCH_REWARD = -0.5  # Negative target radius

FIELD_OF_VIEW = np.deg2rad(120.0)
RAY_STEP = 0.05
TARGET_COLOR = np.array([0.0, 1.0, 0.0])
CEILING_COLOR = np.array([0.10, 0.10, 0.15])
FLOOR_COLOR = np.array([0.35, 0.30, 0.25])
SKY_COLOR = np.array([0.55, 0.70, 0.90])

PROPRIO_SIZE = 4


@dataclass(frozen=True, eq=False)
class EnvState:
    spec: TaskSpec
    position: np.ndarray
    velocity: np.ndarray
    heading: float
    target: np.ndarray  # None for locomotion
    step: int
    rng_state: dict
    relocations: int = 0


@dataclass(frozen=True, eq=False)
class Observation:
    pixels: np.ndarray  # (H, W, 3) in [0, 1]
    proprio: np.ndarray  # vx, vy, sin(heading), cos(heading)
    prev_reward: float


def dynamics_for(spec: TaskSpec) -> Dynamics:
    if spec.family == Family.NAVIGATION:
        return NAVIGATION_DYNAMICS
    return LOCOMOTION_DYNAMICS[spec.body]


def observation_size(pixels: int) -> int:
    """Length of the flattened observation vector (pixels, proprio, previous reward)."""
    return pixels * pixels * 3 + PROPRIO_SIZE + 1


def obs_vector(obs: Observation) -> np.ndarray:
    return np.concatenate([
        np.asarray(obs.pixels, dtype=np.float64).reshape(-1),
        np.asarray(obs.proprio, dtype=np.float64),
        [float(obs.prev_reward)],
    ])


def arena_for(spec: TaskSpec) -> Arena:
    if spec.family != Family.NAVIGATION:
        return None
    return get_arena(spec.arena)


#
# Rewards
#

def speed_reward(v, v_target):
    return 1.0 - abs(v - v_target)


def nav_train_reward(pos, target):
    return -float(np.linalg.norm(np.asarray(pos, dtype=np.float64) - np.asarray(target, dtype=np.float64)))


def nav_eval_reward(pos, target, eps):
    if eps <= 0:
        raise ConfigError(f"Touch radius must be positive: {eps}")
    dist = np.linalg.norm(np.asarray(pos, dtype=np.float64) - np.asarray(target, dtype=np.float64))
    return TOUCH_REWARD if dist < eps else FAR_REWARD


def task_reward(spec: TaskSpec, position, velocity, target):
    if spec.family == Family.LOCOMOTION:
        return speed_reward(float(velocity[0]), spec.v_target)
    if spec.reward_variant == RewardVariant.EVAL_CONSTANT:
        return nav_eval_reward(position, target, spec.touch_radius)
    return nav_train_reward(position, target)


def is_touching(position, target, eps):
    return float(np.linalg.norm(np.asarray(position) - np.asarray(target))) < eps


#
# Reset and step
#

def env_reset(spec: TaskSpec, seed: int):
    rng = np.random.default_rng(seed)

    if spec.family == Family.NAVIGATION:
        arena = arena_for(spec)
        position = np.array(arena.spawn, dtype=np.float64)
        heading = float(rng.uniform(0.0, 2.0 * np.pi))
        if spec.target_respawn:
            target = spawn_target(arena, position, spec.touch_radius, rng)
        else:
            target = fixed_target(arena)
    else:
        position = np.zeros(2)
        heading = 0.0
        target = None

    state = EnvState(
        spec=spec,
        position=position,
        velocity=np.zeros(2),
        heading=heading,
        target=target,
        step=0,
        rng_state=rng.bit_generator.state,
    )
    return state, observe(state, 0.0)


def env_step(state: EnvState, action):
    spec = state.spec
    dyn = dynamics_for(spec)

    action = np.clip(np.asarray(action, dtype=np.float64).reshape(2), -1.0, 1.0)
    velocity = dyn.rho * state.velocity + dyn.alpha * action
    speed = np.linalg.norm(velocity)
    if speed > dyn.v_max:
        velocity = velocity * (dyn.v_max / speed)

    heading = state.heading
    target = state.target
    relocations = state.relocations
    rng_state = state.rng_state

    if spec.family == Family.NAVIGATION:
        arena = arena_for(spec)
        position, velocity = move_body(arena, state.position, velocity)
        if np.linalg.norm(velocity) > 1e-9:
            heading = float(np.arctan2(velocity[1], velocity[0]) % (2.0 * np.pi))
    else:
        position = state.position + velocity

    reward = task_reward(spec, position, velocity, target)

    if spec.family == Family.NAVIGATION and spec.target_respawn and is_touching(position, target, spec.touch_radius):
        rng = np.random.default_rng()
        rng.bit_generator.state = rng_state
        target = spawn_target(arena_for(spec), position, spec.touch_radius, rng)
        rng_state = rng.bit_generator.state
        relocations += 1

    new_state = EnvState(
        spec=spec,
        position=position,
        velocity=velocity,
        heading=heading,
        target=target,
        step=state.step + 1,
        rng_state=rng_state,
        relocations=relocations,
    )
    done = new_state.step >= spec.episode_length
    return new_state, observe(new_state, reward), reward, done


def observe(state: EnvState, prev_reward: float) -> Observation:
    proprio = np.array([
        state.velocity[0], state.velocity[1], np.sin(state.heading), np.cos(state.heading),
    ])
    return Observation(pixels=render(state, arena_for(state.spec)), proprio=proprio, prev_reward=float(prev_reward))


def fixed_target(arena: Arena):
    if arena.target is not None:
        return np.array(arena.target, dtype=np.float64)
    row, col = furthest_free_cell(arena)
    return np.array([col + 0.5, row + 0.5])


def spawn_target(arena: Arena, agent_position, eps, rng, attempts=1000):
    """Uniform over free cells with a small offset, away from the agent so that a spawn is never an instant touch."""
    cells = arena.free_cells()
    target = None
    for _ in range(attempts):
        row, col = cells[int(rng.integers(len(cells)))]
        offset = rng.uniform(-TARGET_MARGIN, TARGET_MARGIN, size=2)
        target = np.array([col + 0.5, row + 0.5]) + offset
        if np.linalg.norm(target - agent_position) >= 2.0 * eps:
            return target
    return target


def _covered_cells(position):
    tol = 1e-9
    col_lo = int(np.floor(position[0] - BODY_RADIUS + tol))
    col_hi = int(np.ceil(position[0] + BODY_RADIUS - tol)) - 1
    row_lo = int(np.floor(position[1] - BODY_RADIUS + tol))
    row_hi = int(np.ceil(position[1] + BODY_RADIUS - tol)) - 1
    return row_lo, row_hi, col_lo, col_hi


def collides(arena: Arena, position):
    row_lo, row_hi, col_lo, col_hi = _covered_cells(position)
    for row in range(row_lo, row_hi + 1):
        for col in range(col_lo, col_hi + 1):
            if arena.is_wall_cell(row, col):
                return True
    return False


def move_body(arena: Arena, position, velocity):
    """Move axis by axis. A blocked axis is clamped to the wall face and its velocity component zeroed."""
    position = position.copy()
    velocity = velocity.copy()
    for axis in (0, 1):
        if velocity[axis] == 0.0:
            continue
        trial = position.copy()
        trial[axis] += velocity[axis]
        if collides(arena, trial):
            if velocity[axis] > 0:
                wall = np.ceil(trial[axis] + BODY_RADIUS - 1e-9) - 1
                trial[axis] = wall - BODY_RADIUS
            else:
                wall = np.floor(trial[axis] - BODY_RADIUS + 1e-9)
                trial[axis] = wall + 1 + BODY_RADIUS
            velocity[axis] = 0.0
        position = trial
    return position, velocity


#
# Rendering
#

def render(state: EnvState, arena: Arena = None) -> np.ndarray:
    size = state.spec.pixels
    if arena is None:
        img = _render_locomotion(state, size)
    else:
        img = _render_navigation(state, arena, size)
    # Quantized so that pixels can be stored as bytes without loss
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def _render_locomotion(state: EnvState, size):
    img = np.empty((size, size, 3))
    horizon = size // 2
    img[:horizon] = SKY_COLOR
    for i in range(horizon, size):
        # Perspective depth of the floor row, larger near the horizon
        depth = horizon / (i - horizon + 0.5)
        phase = state.position[0] + depth
        shade = 0.35 + 0.3 * (np.floor(phase * 2.0) % 2)
        img[i] = FLOOR_COLOR * shade / 0.35
    return img


def ray_angles(heading, width):
    """Column 0 looks furthest to the left (+60 degrees), the last column furthest to the right."""
    offsets = (FIELD_OF_VIEW / 2.0) * (1.0 - 2.0 * (np.arange(width) + 0.5) / width)
    return heading + offsets, offsets


def cast_rays(arena: Arena, position, angles):
    """Distance to the first wall along each ray and the color index of that wall."""
    rows, cols = arena.walls.shape
    max_dist = np.hypot(rows, cols) + 1.0
    ts = np.arange(1, int(np.ceil(max_dist / RAY_STEP)) + 1) * RAY_STEP
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    pts = position[None, None, :] + ts[None, :, None] * dirs[:, None, :]

    r = np.floor(pts[..., 1]).astype(np.int64)
    c = np.floor(pts[..., 0]).astype(np.int64)
    inside = (r >= 0) & (r < rows) & (c >= 0) & (c < cols)
    cells = np.where(inside, arena.walls[np.clip(r, 0, rows - 1), np.clip(c, 0, cols - 1)], 0)
    hit = cells != FREE

    first = np.argmax(hit, axis=1)
    idx = np.arange(len(angles))
    return ts[first], cells[idx, first]


def target_hits(position, target, radius, angles):
    """Distance along each ray to the target sphere, np.inf where the ray misses it."""
    rel = np.asarray(target) - position
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=-1)
    proj = dirs @ rel
    perp_sq = float(rel @ rel) - proj * proj
    dist = np.full(len(angles), np.inf)
    if float(np.linalg.norm(rel)) < radius:
        dist[:] = 0.0
        return dist
    hit = (proj > 0) & (perp_sq <= radius * radius)
    dist[hit] = proj[hit] - np.sqrt(radius * radius - perp_sq[hit])
    return dist


def _render_navigation(state: EnvState, arena: Arena, size):
    img = np.empty((size, size, 3))
    horizon = size // 2
    img[:horizon] = CEILING_COLOR
    img[horizon:] = FLOOR_COLOR

    angles, offsets = ray_angles(state.heading, size)
    wall_dist, wall_colors = cast_rays(arena, state.position, angles)
    target_dist = target_hits(state.position, state.target, state.spec.touch_radius, angles)

    for col in range(size):
        d = wall_dist[col]
        perp = max(d * np.cos(offsets[col]), 1e-6)
        half = int(min(horizon, round(horizon / perp)))
        color = PALETTE[wall_colors[col] % len(PALETTE)] / (1.0 + d)
        img[horizon - half:horizon + half, col] = color

        t = target_dist[col]
        if t < d:
            t_perp = max(t * np.cos(offsets[col]), 1e-6)
            t_half = int(min(horizon, max(1, round(horizon * state.spec.touch_radius / t_perp))))
            img[horizon - t_half:horizon + t_half, col] = TARGET_COLOR

    return img


def count_target_pixels(pixels) -> int:
    return int(np.sum(np.all(np.isclose(pixels, TARGET_COLOR), axis=-1)))


def with_state(state: EnvState, **changes) -> EnvState:
    """Copy of a state with some fields replaced (used by scripted setups and tests)."""
    return replace(state, **changes)
