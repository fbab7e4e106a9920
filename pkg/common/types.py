from dataclasses import dataclass, asdict
from enum import Enum
from typing import Optional

import numpy as np

from common.errors import ConfigError


class Family(Enum):
    LOCOMOTION = "locomotion"
    NAVIGATION = "navigation"


class Body(Enum):
    BIPED = "biped"
    QUAD = "quad"


class ArenaName(Enum):
    BOX5 = "box5"
    BOX9 = "box9"
    LMAZE = "lmaze"
    SMAZE = "smaze"


class RewardVariant(Enum):
    TRAIN_SHAPED = "train_shaped"
    EVAL_CONSTANT = "eval_constant"


class AgentKind(Enum):
    HIERARCHICAL = "hierarchical"
    FLAT = "flat"


RESPAWN_ARENAS = (ArenaName.BOX5, ArenaName.BOX9)

# Training speed bands per body
SPEED_BANDS = {
    Body.BIPED: (1.0, 3.0),
    Body.QUAD: (0.5, 1.5),
}

# Default evaluation sweeps per body: start, stop, step
SPEED_SWEEPS = {
    Body.BIPED: (0.0, 8.0, 1.0),
    Body.QUAD: (0.0, 5.0, 0.5),
}


def to_enum(enum_class, value):
    """Convert a config string (or an existing member) into an enum member."""
    if isinstance(value, enum_class):
        return value
    try:
        return enum_class(str(value).lower())
    except ValueError:
        allowed = [m.value for m in enum_class]
        raise ConfigError(f"Unknown {enum_class.__name__} '{value}'. Allowed values: {allowed}")


@dataclass(frozen=True)
class TaskSpec:
    """One concrete task: environment family plus its parameters."""
    family: Family
    v_target: float = 0.0
    body: Body = Body.BIPED
    arena: Optional[ArenaName] = None
    reward_variant: RewardVariant = RewardVariant.TRAIN_SHAPED
    target_respawn: Optional[bool] = None
    touch_radius: float = 0.5
    episode_length: int = 500
    pixels: int = 16

    def __post_init__(self):
        object.__setattr__(self, "family", to_enum(Family, self.family))
        object.__setattr__(self, "body", to_enum(Body, self.body))
        object.__setattr__(self, "reward_variant", to_enum(RewardVariant, self.reward_variant))

        if self.v_target < 0:
            raise ConfigError(f"Target speed must be non-negative: {self.v_target}")
        if self.touch_radius <= 0:
            raise ConfigError(f"Touch radius must be positive: {self.touch_radius}")
        if self.episode_length <= 0:
            raise ConfigError(f"Episode length must be positive: {self.episode_length}")
        if self.pixels < 4:
            raise ConfigError(f"Pixel resolution too small: {self.pixels}")

        if self.family == Family.NAVIGATION:
            if self.arena is None:
                raise ConfigError("Navigation task requires an arena")
            arena = to_enum(ArenaName, self.arena)
            object.__setattr__(self, "arena", arena)
            respawn = arena in RESPAWN_ARENAS
            if self.target_respawn is None:
                object.__setattr__(self, "target_respawn", respawn)
            elif bool(self.target_respawn) != respawn:
                raise ConfigError(f"Arena {arena.value} requires target_respawn={respawn}")
        else:
            object.__setattr__(self, "arena", None)
            object.__setattr__(self, "target_respawn", False)

    def to_dict(self):
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, Enum):
                d[k] = v.value
        return d


@dataclass
class FreezeMask:
    """Frozen (true) or trainable (false) flag per component."""
    wm: bool = False
    manager: bool = False
    vae: bool = False
    worker: bool = False

    def frozen_prefixes(self, kind: AgentKind):
        prefixes = []
        if self.wm:
            prefixes.append("wm.")
        # Flat agents have no manager, goal VAE or worker
        if kind == AgentKind.HIERARCHICAL:
            if self.manager:
                prefixes.append("mgr.")
            if self.vae:
                prefixes.append("vae.")
            if self.worker:
                prefixes.append("wrk.")
        return prefixes

    def all_frozen(self, kind: AgentKind):
        if kind == AgentKind.FLAT:
            return False  # The flat policy group is never masked
        return self.wm and self.manager and self.vae and self.worker

    @classmethod
    def from_names(cls, names):
        """Build a mask from a list like ["wm", "mgr"] naming the frozen components."""
        aliases = {"wm": "wm", "mgr": "manager", "manager": "manager", "m": "manager",
                   "vae": "vae", "v": "vae", "wrk": "worker", "worker": "worker", "w": "worker"}
        mask = cls()
        for name in names:
            name = name.strip().lower()
            if not name:
                continue
            if name not in aliases:
                raise ConfigError(f"Unknown freeze component '{name}'. Use a subset of wm,mgr,vae,wrk")
            setattr(mask, aliases[name], True)
        return mask

    @classmethod
    def trainable_only(cls, names):
        """Build a mask where only the listed components are trainable."""
        frozen = cls(wm=True, manager=True, vae=True, worker=True)
        unfrozen = cls.from_names(names)
        for f in ("wm", "manager", "vae", "worker"):
            if getattr(unfrozen, f):
                setattr(frozen, f, False)
        return frozen


@dataclass
class TaskDistribution:
    """Training task sampler: one TaskSpec per episode."""
    family: Family = Family.LOCOMOTION
    body: Body = Body.BIPED
    v_range: Optional[tuple] = None  # Defaults to the body speed band
    arena: ArenaName = ArenaName.BOX5
    reward_variant: RewardVariant = RewardVariant.TRAIN_SHAPED
    touch_radius: float = 0.5
    episode_length: int = 500
    pixels: int = 16

    def __post_init__(self):
        self.family = to_enum(Family, self.family)
        self.body = to_enum(Body, self.body)
        self.arena = to_enum(ArenaName, self.arena)
        self.reward_variant = to_enum(RewardVariant, self.reward_variant)
        if self.v_range is None:
            self.v_range = SPEED_BANDS[self.body]
        self.v_range = tuple(float(v) for v in self.v_range)
        if len(self.v_range) != 2 or self.v_range[0] > self.v_range[1] or self.v_range[0] < 0:
            raise ConfigError(f"Invalid speed range {self.v_range}")
        # Validates the remaining fields
        self.sample(seed=0)

    def sample(self, seed=None, rng=None) -> TaskSpec:
        if self.family == Family.LOCOMOTION:
            if rng is None:
                rng = np.random.default_rng(seed)
            v_target = float(rng.uniform(self.v_range[0], self.v_range[1]))
            return TaskSpec(
                family=self.family, v_target=v_target, body=self.body,
                episode_length=self.episode_length, pixels=self.pixels,
            )
        return TaskSpec(
            family=self.family, body=self.body, arena=self.arena, reward_variant=self.reward_variant,
            touch_radius=self.touch_radius, episode_length=self.episode_length, pixels=self.pixels,
        )

    def to_dict(self):
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, Enum):
                d[k] = v.value
        d["v_range"] = list(self.v_range)
        return d
