from dataclasses import dataclass, replace, asdict
from typing import Optional

import numpy as np
import tensorflow as tf

from common.errors import *
from common.numerics import *
from common.types import AgentKind, to_enum
from common.worldmodel import *
from common.goalvae import *

import logging
log = logging.getLogger('agents')

ACTION_SIZE = 2

ACTOR_LOG_STD_MIN = -5.0
ACTOR_LOG_STD_MAX = 1.0


@dataclass
class AgentConfig:
    kind: AgentKind = AgentKind.HIERARCHICAL
    goal_horizon: int = 8  # k
    action_repeat: Optional[int] = None  # Default: 1 for hierarchical and 2 for flat agents
    imag_horizon: int = 15
    discount: float = 0.99
    lambda_: float = 0.95
    entropy_weight: float = 3e-4
    explore_weight: float = 0.1
    ensemble_size: int = 4
    hidden: int = 128
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    ensemble_lr: float = 3e-4
    imag_starts: int = 64  # Posterior states used as imagination starts per update
    grad_clip: float = 100.0

    def __post_init__(self):
        self.kind = to_enum(AgentKind, self.kind)
        if self.action_repeat is None:
            self.action_repeat = 1 if self.kind == AgentKind.HIERARCHICAL else 2
        if self.goal_horizon < 1:
            raise ConfigError(f"Goal horizon must be at least 1: {self.goal_horizon}")
        if self.action_repeat < 1:
            raise ConfigError(f"Action repeat must be at least 1: {self.action_repeat}")
        if self.imag_horizon < 1:
            raise ConfigError(f"Imagination horizon must be at least 1: {self.imag_horizon}")
        if self.kind == AgentKind.HIERARCHICAL and self.ensemble_size < 2:
            raise ConfigError(f"Exploration ensemble needs at least 2 members: {self.ensemble_size}")
        if not 0.0 < self.discount <= 1.0 or not 0.0 <= self.lambda_ <= 1.0:
            raise ConfigError("Discount must be in (0, 1] and lambda in [0, 1]")

    @property
    def manager_horizon(self):
        """Imagination length used for hierarchical updates: at least two manager decisions."""
        return max(self.imag_horizon, 2 * self.goal_horizon)

    def to_dict(self):
        d = asdict(self)
        d["kind"] = self.kind.value
        return d


#
# Policy heads
#

class GaussianActor:
    """Tanh-squashed diagonal Gaussian over primitive actions."""

    def __init__(self, store, name, n_in, hidden, rng):
        self.net = Mlp(store, name, [n_in, hidden, hidden, 2 * ACTION_SIZE], rng, out_scale=0.1)

    def stats(self, x):
        mean_, raw = tf.split(self.net(x), 2, axis=-1)
        return mean_, scaled_tanh(raw, ACTOR_LOG_STD_MIN, ACTOR_LOG_STD_MAX)


class CategoricalActor:
    """Per-row categorical logits over goal codes."""

    def __init__(self, store, name, n_in, codes, classes, hidden, rng):
        self.codes = codes
        self.classes = classes
        self.net = Mlp(store, name, [n_in, hidden, hidden, codes * classes], rng, out_scale=0.1)

    def __call__(self, x):
        shape = tf.concat([tf.shape(x)[:-1], [self.codes, self.classes]], axis=0)
        return tf.reshape(self.net(x), shape)


class Critic:
    def __init__(self, store, name, n_in, hidden, rng):
        self.net = Mlp(store, name, [n_in, hidden, hidden, 1], rng, out_scale=0.0)

    def __call__(self, x):
        """Values of (..., n_in) inputs with the leading shape kept."""
        shape = tf.shape(x)[:-1]
        flat = tf.reshape(x, (-1, int(x.shape[-1])))
        return tf.reshape(self.net(flat)[:, 0], shape)


def sample_action(actor: GaussianActor, x, rng=None, greedy=False):
    """Reparameterized action and the entropy of the pre-squash Gaussian. Mean action if greedy or no rng."""
    mean_, log_std = actor.stats(x)
    if greedy or rng is None:
        pre = mean_
    else:
        pre = mean_ + exp(log_std) * to_tensor(rng.standard_normal(mean_.shape))
    entropy = reduce_sum(log_std, axis=-1) + 0.5 * ACTION_SIZE * (1.0 + np.log(2.0 * np.pi))
    return tanh(pre), entropy


#
# Agent
#

@dataclass
class AgentState:
    """Online state of an acting agent. A value: acting returns a new state."""
    latent: ModelState
    goal: Optional[tf.Tensor] = None
    code: Optional[np.ndarray] = None
    step: int = 0  # Policy decisions taken so far
    decisions: int = 0
    manager_decisions: int = 0


class Agent:
    """
    World model plus policy heads. Hierarchical agents have a goal VAE, a manager (actor, critic and
    exploration ensemble) and a goal-conditioned worker. Flat agents have one actor and one critic.
    """

    def __init__(self, config: AgentConfig, wm_config: WorldModelConfig, vae_config: GoalVAEConfig, obs_size: int, seed=0):
        self.config = config
        self.wm_config = wm_config
        self.vae_config = vae_config
        self.obs_size = obs_size
        self.seed = seed
        self.store = ParamStore()

        rng = np.random.default_rng(seed)
        self.wm = WorldModel(self.store, wm_config, obs_size, ACTION_SIZE, rng)
        feat = self.wm.feat_size
        h_dim = wm_config.h_dim
        hidden = config.hidden

        if config.kind == AgentKind.HIERARCHICAL:
            self.vae = GoalVAE(self.store, vae_config, h_dim, rng)
            self.manager = CategoricalActor(self.store, "mgr.actor", feat, vae_config.codes, vae_config.classes, hidden, rng)
            self.manager_critic = Critic(self.store, "mgr.critic", feat, hidden, rng)
            self.ensemble = [Mlp(self.store, f"mgr.expl.{i}", [feat, hidden, h_dim], rng) for i in range(config.ensemble_size)]
            self.worker = GaussianActor(self.store, "wrk.actor", feat + h_dim, hidden, rng)
            self.worker_critic = Critic(self.store, "wrk.critic", feat + h_dim, hidden, rng)
        else:
            self.vae = None
            self.actor = GaussianActor(self.store, "flat.actor", feat, hidden, rng)
            self.critic = Critic(self.store, "flat.critic", feat, hidden, rng)

    @property
    def kind(self):
        return self.config.kind

    @property
    def action_repeat(self):
        return self.config.action_repeat

    def initial_state(self) -> AgentState:
        return AgentState(latent=initial_state(self.wm, 1))

    def observe(self, state: AgentState, obs_vec, prev_action, rng=None) -> AgentState:
        latent = encode_posterior(self.wm, state.latent, np.asarray(prev_action)[None], np.asarray(obs_vec)[None], rng)
        return replace(state, latent=latent)

    def policy(self, state: AgentState, env_state=None, rng=None, greedy=False):
        """One policy decision. Returns (action, new state)."""
        if self.kind == AgentKind.HIERARCHICAL:
            goal, code = manager_act(self, state.latent, state.step, self.config.goal_horizon, state.goal, rng, greedy)
            action = worker_act(self, state.latent, goal, rng, greedy)
            state = replace(
                state, goal=goal, code=code if code is not None else state.code,
                manager_decisions=state.manager_decisions + (code is not None),
            )
        else:
            action = flat_act(self, state.latent, rng, greedy)
        state = replace(state, step=state.step + 1, decisions=state.decisions + 1)
        return action.numpy()[0], state


#
# Acting
#

def effective_horizon(H: int, k: int) -> int:
    if H < 1 or k < 1:
        raise ConfigError(f"Horizon and goal horizon must be at least 1, got H={H}, k={k}")
    return -(-H // k)


def manager_act(agent: Agent, state: ModelState, step: int, k: int, current_goal, rng=None, greedy=False):
    """
    Returns (goal, code). A new code is sampled and decoded every k steps, otherwise the current goal
    is kept and code is None.
    """
    if step < 0:
        raise ConfigError(f"Step must be non-negative: {step}")
    if step % k != 0:
        if current_goal is None:
            raise ProtocolError(f"No current goal at step {step} which is not a manager decision step (k={k})")
        return current_goal, None

    logits = agent.manager(tf.stop_gradient(state.feat))
    code = sample_code(logits, None if greedy else rng)
    goal = tf.stop_gradient(vae_decode(agent.vae, code))
    return goal, code


def worker_act(agent: Agent, state: ModelState, goal, rng=None, greedy=False):
    goal = to_tensor(goal)
    if int(goal.shape[-1]) != agent.wm_config.h_dim:
        raise ShapeError(f"Goal dimension {goal.shape[-1]} does not match h dimension {agent.wm_config.h_dim}")
    action, _ = sample_action(agent.worker, tf.concat([state.feat, goal], axis=-1), rng, greedy)
    return action


def flat_act(agent: Agent, state: ModelState, rng=None, greedy=False):
    action, _ = sample_action(agent.actor, state.feat, rng, greedy)
    return action


def worker_intrinsic_reward(h, goal):
    """
    Magnitude-aware cosine h.g / max(|h|, |g|)^2. It is 1 only for h = g, 0 for orthogonal vectors
    and 0 when both are zero.
    """
    h = to_tensor(h)
    goal = to_tensor(goal)
    dot = tf.reduce_sum(h * goal, axis=-1)
    norm_sq = tf.maximum(tf.reduce_sum(h * h, axis=-1), tf.reduce_sum(goal * goal, axis=-1))
    safe = tf.where(norm_sq > 0, norm_sq, tf.ones_like(norm_sq))
    return tf.where(norm_sq > 0, dot / safe, tf.zeros_like(dot))


def ensemble_predictions(ensemble, feat):
    feat = to_tensor(feat)
    shape = tf.shape(feat)[:-1]
    flat = tf.reshape(feat, (-1, int(feat.shape[-1])))
    preds = [member(flat) for member in ensemble]
    return tf.stack(preds), shape


def exploration_reward(ensemble, feat):
    """Disagreement of the one-step predictors of the next h: variance over members, averaged over dimensions."""
    if len(ensemble) < 2:
        raise ConfigError("Exploration reward needs at least 2 ensemble members")
    preds, shape = ensemble_predictions(ensemble, feat)
    var = tf.reduce_mean(tf.square(preds - tf.reduce_mean(preds, axis=0, keepdims=True)), axis=0)
    return tf.reshape(tf.reduce_mean(var, axis=-1), shape)


def train_ensemble(agent: Agent, feat, next_h):
    """Regress every member on (state features -> next h). Updates "mgr.expl." only."""
    feat = to_tensor(feat)
    next_h = to_tensor(next_h)
    if int(feat.shape[0]) == 0:
        raise EmptyBatch("Ensemble batch is empty")

    def loss_fn(_):
        preds, _ = ensemble_predictions(agent.ensemble, feat)
        return reduce_mean(square(preds - next_h[None]))

    loss, grads = forward_backward(agent.store, None, loss_fn, prefix="mgr.expl.")
    if grads:
        apply_update(agent.store, clip_by_global_norm(grads, agent.config.grad_clip), agent.config.ensemble_lr)
    return loss
