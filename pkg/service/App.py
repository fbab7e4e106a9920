from pathlib import Path
from contextlib import contextmanager
from dataclasses import dataclass, field, asdict
import copy
import json
import re
import sys

from common.errors import *
from common.types import *
from common.worldmodel import WorldModelConfig
from common.goalvae import GoalVAEConfig
from common.agents import AgentConfig

PACKAGE_ROOT = Path(__file__).parent.parent


class App:
    """Globally visible variables."""

    agent = None  # Agent being trained or evaluated
    replay = None  # Replay buffer of the current run
    run_dir = None  # Output folder of the current run

    #
    # Constant configuration parameters
    #
    config = {
        "seed": 0,
        "out_dir": "runs/default",

        # Training task distribution. A new task is sampled for every episode
        "task": {
            "family": "locomotion",  # locomotion navigation
            "body": "biped",  # biped quad
            "v_range": None,  # Default is the body speed band: biped [1, 3], quad [0.5, 1.5]
            "arena": "box5",  # box5 box9 lmaze smaze
            "reward_variant": "train_shaped",  # train_shaped eval_constant
            "touch_radius": 0.5,
            "episode_length": 500,
            "pixels": 16,
        },

        "agent": {
            "kind": "hierarchical",  # hierarchical flat
            "goal_horizon": 8,
            "action_repeat": None,  # Default: hierarchical 1, flat 2
            "imag_horizon": 15,
            "discount": 0.99,
            "lambda_": 0.95,
            "entropy_weight": 3e-4,
            "explore_weight": 0.1,
            "ensemble_size": 4,
            "hidden": 128,
            "actor_lr": 3e-4,
            "critic_lr": 3e-4,
            "ensemble_lr": 3e-4,
            "imag_starts": 64,
            "grad_clip": 100.0,
        },

        "world_model": {
            "h_dim": 128,
            "z_dim": 32,
            "hidden": 128,
            "embed": 128,
            "reward_weight": 10.0,
            "kl_weight": 1.0,
            "free_bits": 1.0,
            "kl_balance": 0.8,
            "lr": 3e-4,
            "grad_clip": 100.0,
        },

        "goal_vae": {
            "codes": 8,
            "classes": 16,
            "hidden": 128,
            "kl_weight": 1.0,
            "lr": 3e-4,
        },

        "train": {
            "total_steps": 50000,
            "train_every": 16,  # One update of every component per this number of env steps
            "eval_every": 5000,
            "eval_episodes": 5,
            "batch_size": 16,
            "batch_length": 16,
            "prefill_episodes": 1,  # Episodes of a random agent before the first update
            "replay_capacity": 2000,
        },

        # Zero-shot evaluation
        "eval": {
            "protocol": "speed",  # speed maze
            "grid": "auto",  # a:b:step of target speeds or auto: biped 0:8:1, quad 0:5:0.5
            "body": None,  # Default is the body of the checkpoint
            "arenas": ["box5", "box9", "lmaze", "smaze"],
            "episodes": 10,
            "episode_length": None,  # Default: 500 for speed sweeps, 3000 for mazes
            "n_jobs": 1,
        },

        "finetune": {
            "regime": "wm-m",  # flat-scratch flat-finetune hier-scratch wm-m wm-m-v wm-m-v-w
            "task": "lmaze",
            "reward_variant": "eval_constant",
            "threshold": "auto",  # Number or auto (scripted shortest-path return with slack)
            "slack": 0.2,
            "max_steps": 20000,
            "eval_every": 1000,
            "episode_length": 500,
            "stop_at_threshold": False,
        },

        "ablation": {
            "k": [1, 2, 4, 8, 16, 32],
            "include_flat": True,
            "grid": "auto",
            "episodes": 5,
        },
    }


def deep_merge(base: dict, update: dict) -> dict:
    """Recursively merge update into base (in place). Nested dicts are merged, other values replaced."""
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            deep_merge(base[key], value)
        else:
            base[key] = copy.deepcopy(value)
    return base


def read_config_file(config_file, seen=None) -> dict:
    """
    Read one JSON configuration file with // comments.
    Files listed under "include" (relative to the including file) are merged first.
    """
    path = Path(config_file)
    if not path.is_absolute():
        path = PACKAGE_ROOT / path
    path = path.resolve()
    seen = set() if seen is None else seen
    if path in seen:
        raise ConfigError(f"Configuration include cycle at {path}")
    seen.add(path)
    if not path.is_file():
        raise ConfigError(f"Configuration file not found: {path}")

    with open(path, encoding='utf-8') as json_file:
        conf_str = json_file.read()

    # Remove everything starting with // and till the line end
    conf_str = re.sub(r"//.*$", "", conf_str, flags=re.M)

    try:
        conf_json = json.loads(conf_str)
    except json.JSONDecodeError as e:
        raise ParseError(f"Cannot parse configuration file {path}: {e.msg}", line=e.lineno)

    merged = {}
    for include in conf_json.pop("include", []):
        deep_merge(merged, read_config_file(path.parent / include, seen))
    return deep_merge(merged, conf_json)


def load_config(config_file):
    if config_file:
        deep_merge(App.config, read_config_file(config_file))


#
# Typed run configuration
#

@dataclass
class TrainConfig:
    total_steps: int = 50000
    train_every: int = 16
    eval_every: int = 5000
    eval_episodes: int = 5
    batch_size: int = 16
    batch_length: int = 16
    prefill_episodes: int = 1
    replay_capacity: int = 2000

    def __post_init__(self):
        if self.total_steps <= 0:
            raise ConfigError(f"Total env steps must be positive: {self.total_steps}")
        for name in ("train_every", "eval_every", "eval_episodes", "batch_size", "batch_length", "replay_capacity"):
            if getattr(self, name) < 1:
                raise ConfigError(f"Train parameter '{name}' must be positive")
        if self.prefill_episodes < 0:
            raise ConfigError("Number of prefill episodes cannot be negative")


def build(cls, section: dict, name: str):
    try:
        return cls(**(section or {}))
    except TypeError as e:
        raise ConfigError(f"Invalid '{name}' section: {e}")


@dataclass
class RunConfig:
    task: TaskDistribution = field(default_factory=TaskDistribution)
    agent: AgentConfig = field(default_factory=AgentConfig)
    world_model: WorldModelConfig = field(default_factory=WorldModelConfig)
    goal_vae: GoalVAEConfig = field(default_factory=GoalVAEConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    out_dir: str = "runs/default"

    @classmethod
    def from_config(cls, config: dict):
        return cls(
            task=build(TaskDistribution, config.get("task"), "task"),
            agent=build(AgentConfig, config.get("agent"), "agent"),
            world_model=build(WorldModelConfig, config.get("world_model"), "world_model"),
            goal_vae=build(GoalVAEConfig, config.get("goal_vae"), "goal_vae"),
            train=build(TrainConfig, config.get("train"), "train"),
            seed=int(config.get("seed", 0)),
            out_dir=str(config.get("out_dir", "runs/default")),
        )

    def to_dict(self):
        return {
            "task": self.task.to_dict(),
            "agent": self.agent.to_dict(),
            "world_model": asdict(self.world_model),
            "goal_vae": asdict(self.goal_vae),
            "train": asdict(self.train),
            "seed": self.seed,
            "out_dir": self.out_dir,
        }


@contextmanager
def cli_errors():
    """Print library errors and exit with their code: 2 for configuration and parse errors, 3 for divergence."""
    try:
        yield
    except HierarchyError as e:
        print(f"ERROR: {e}")
        sys.exit(e.exit_code)
