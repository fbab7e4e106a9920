"""
Actor-critic learning in imagination: lambda-returns, critic regression, pathwise and
score-function actor objectives, and one full update of an agent on a replay batch.
"""
from dataclasses import dataclass, field, asdict
from typing import Callable, Optional

import numpy as np
import tensorflow as tf

from common.errors import *
from common.numerics import *
from common.types import AgentKind
from common.worldmodel import *
from common.goalvae import *
from common.agents import *

import logging
log = logging.getLogger('actor_critic')


@dataclass
class Rollout:
    critic_inputs: tf.Tensor  # (T+1, B, F) inputs of the critic, the last one is bootstrapped
    rewards: tf.Tensor  # (T, B)
    entropy: tf.Tensor  # (T, B)
    log_probs: Optional[tf.Tensor] = None  # (T, B), needed by the score-function objective
    extra: dict = field(default_factory=dict, repr=False)

    @property
    def horizon(self):
        return int(self.rewards.shape[0])


@dataclass
class ACLosses:
    actor: float
    critic: float
    mean_return: float
    entropy: float


@dataclass
class UpdateReport:
    """Losses of one train_step. Fields of components an agent does not have stay NaN."""
    wm_recon: float = np.nan
    wm_reward: float = np.nan
    wm_kl: float = np.nan
    wm_total: float = np.nan
    vae_recon: float = np.nan
    vae_kl: float = np.nan
    ensemble: float = np.nan
    actor: float = np.nan
    critic: float = np.nan
    manager_actor: float = np.nan
    manager_critic: float = np.nan
    imag_return: float = np.nan

    def to_dict(self):
        return asdict(self)


def lambda_return(rewards, values, discount: float, lambda_: float):
    """
    Targets R_t = r_t + discount * ((1 - lambda) * v_{t+1} + lambda * R_{t+1}) with R_T = v_T.

    rewards are (T, B) and values (T+1, B). Returns (T, B).
    """
    rewards = to_tensor(rewards)
    values = to_tensor(values)
    T = int(rewards.shape[0])
    if int(values.shape[0]) != T + 1:
        raise ShapeError(f"Values must have one more step than rewards: {values.shape[0]} vs {T}")

    next_return = values[T]
    returns = []
    for t in reversed(range(T)):
        next_return = rewards[t] + discount * ((1.0 - lambda_) * values[t + 1] + lambda_ * next_return)
        returns.append(next_return)
    return tf.stack(returns[::-1])


def train_actor_critic(
        store: ParamStore, rollout_fn: Callable[[], Rollout], critic: Critic,
        actor_prefix: str, critic_prefix: str, config: AgentConfig,
        discount: Optional[float] = None, pathwise=True,
):
    """
    One actor update followed by one critic update.

    rollout_fn() produces the imagined rollout and is evaluated under the gradient tape so that
    pathwise gradients flow through the imagined dynamics into the actor. Only groups under
    actor_prefix and critic_prefix are updated.

    Returns (ACLosses, Rollout). The returned rollout is detached.
    """
    discount = config.discount if discount is None else discount

    def actor_loss(_):
        rollout = rollout_fn()
        if rollout.horizon < 2:
            raise InsufficientHorizon(f"Lambda-returns need at least 2 imagined steps, got {rollout.horizon}")
        values = critic(rollout.critic_inputs)
        returns = lambda_return(rollout.rewards, values, discount, config.lambda_)
        if pathwise:
            objective = reduce_mean(returns)
        else:
            advantage = tf.stop_gradient(returns - values[:-1])
            objective = reduce_mean(rollout.log_probs * advantage)
        entropy = reduce_mean(rollout.entropy)
        loss = -objective - config.entropy_weight * entropy
        return loss, (rollout, returns, entropy)

    loss, grads, (rollout, returns, entropy) = forward_backward(store, None, actor_loss, prefix=actor_prefix, has_aux=True)
    if grads:
        apply_update(store, clip_by_global_norm(grads, config.grad_clip), config.actor_lr)

    inputs = tf.stop_gradient(rollout.critic_inputs[:-1])
    targets = tf.stop_gradient(returns)

    def critic_loss(_):
        return 0.5 * reduce_mean(square(critic(inputs) - targets))

    c_loss, c_grads = forward_backward(store, None, critic_loss, prefix=critic_prefix)
    if c_grads:
        apply_update(store, clip_by_global_norm(c_grads, config.grad_clip), config.critic_lr)

    detached = Rollout(
        critic_inputs=tf.stop_gradient(rollout.critic_inputs),
        rewards=tf.stop_gradient(rollout.rewards),
        entropy=tf.stop_gradient(rollout.entropy),
        log_probs=None if rollout.log_probs is None else tf.stop_gradient(rollout.log_probs),
        extra=rollout.extra,
    )
    losses = ACLosses(
        actor=loss, critic=c_loss,
        mean_return=float(tf.reduce_mean(returns).numpy()),
        entropy=float(entropy.numpy()),
    )
    return losses, detached


#
# Imagined rollouts
#

def worker_rollout(agent: Agent, start: ModelState, horizon: int, seed: int) -> Rollout:
    """
    Imagine under the manager and the worker. The manager picks a goal every k steps.
    The worker is rewarded for matching the goal with the state it reaches.
    Manager decisions are recorded in extra for the manager update.
    """
    rng = np.random.default_rng(seed)
    k = agent.config.goal_horizon
    goals, entropies, codes, decision_feats = [], [], [], []

    def policy(state, t):
        goal, code = manager_act(agent, state, t, k, goals[-1] if goals else None, rng)
        if code is not None:
            codes.append(code)
            decision_feats.append(tf.stop_gradient(state.feat))
        goals.append(goal)
        action, entropy = sample_action(agent.worker, tf.concat([state.feat, goal], axis=-1), rng)
        entropies.append(entropy)
        return action

    traj = imagine(agent.wm, start, policy, horizon, rng)
    goal_seq = tf.stack(goals)  # (T, B, h)
    rewards = worker_intrinsic_reward(traj.h[1:], goal_seq)
    critic_goals = tf.concat([goal_seq, goal_seq[-1:]], axis=0)

    return Rollout(
        critic_inputs=tf.concat([traj.feats, critic_goals], axis=-1),
        rewards=rewards,
        entropy=tf.stack(entropies),
        extra={
            "codes": np.stack(codes),  # (N, B, K, C)
            "decision_feats": tf.stack(decision_feats),  # (N, B, F)
            "final_feat": tf.stop_gradient(traj.feats[-1]),
            "feats": tf.stop_gradient(traj.feats),
            "extrinsic": tf.stop_gradient(traj.rewards),
        },
    )


def block_sums(rewards, k: int):
    """Sum (T, B) rewards over consecutive blocks of k steps, the last block may be shorter."""
    rewards = to_tensor(rewards)
    T = int(rewards.shape[0])
    return tf.stack([tf.reduce_sum(rewards[i:i + k], axis=0) for i in range(0, T, k)])


def manager_rollout(agent: Agent, recorded: dict) -> Rollout:
    """
    Abstract-step rollout of the manager from the decisions recorded during a worker rollout.
    Reward of an abstract step is the predicted extrinsic reward summed over its block plus the
    weighted exploration reward of the states reached.
    """
    k = agent.config.goal_horizon
    feats = recorded["feats"]
    novelty = exploration_reward(agent.ensemble, feats[1:])
    step_rewards = recorded["extrinsic"] + agent.config.explore_weight * novelty
    rewards = block_sums(step_rewards, k)

    decision_feats = recorded["decision_feats"]
    N, B, F = (int(d) for d in decision_feats.shape)
    logits = agent.manager(tf.reshape(decision_feats, (N * B, F)))
    log_q = log_softmax(logits)
    codes = to_tensor(recorded["codes"].reshape(N * B, agent.vae_config.codes, agent.vae_config.classes))
    log_probs = tf.reshape(reduce_sum(reduce_sum(codes * log_q, axis=-1), axis=-1), (N, B))
    entropy = tf.reshape(-reduce_sum(reduce_sum(softmax(logits) * log_q, axis=-1), axis=-1), (N, B))

    critic_inputs = tf.concat([decision_feats, recorded["final_feat"][None]], axis=0)
    return Rollout(critic_inputs=critic_inputs, rewards=rewards, entropy=entropy, log_probs=log_probs)


def flat_rollout(agent: Agent, start: ModelState, horizon: int, seed: int) -> Rollout:
    rng = np.random.default_rng(seed)
    entropies = []

    def policy(state, t):
        action, entropy = sample_action(agent.actor, state.feat, rng)
        entropies.append(entropy)
        return action

    traj = imagine(agent.wm, start, policy, horizon, rng)
    return Rollout(critic_inputs=traj.feats, rewards=traj.rewards, entropy=tf.stack(entropies))


#
# Full update
#

def imagination_starts(agent: Agent, posterior: ModelState, rng) -> ModelState:
    """Up to imag_starts posterior states drawn without replacement from a (B, L) batch."""
    flat = flatten_states(posterior)
    n = flat.batch_size
    count = min(n, agent.config.imag_starts)
    index = np.sort(rng.choice(n, size=count, replace=False))
    return select_states(flat, index)


def train_step(agent: Agent, batch: dict, rng) -> UpdateReport:
    """
    One update of every component on a replay batch: world model, then (hierarchical agents)
    goal VAE and exploration ensemble on the posterior states, then the policies in imagination.
    Frozen groups are left unchanged.
    """
    report = UpdateReport()
    wm_losses = train_worldmodel(agent.wm, batch, rng)
    report.wm_recon = wm_losses.recon
    report.wm_reward = wm_losses.reward
    report.wm_kl = wm_losses.kl
    report.wm_total = wm_losses.total

    posterior = wm_losses.posterior
    starts = imagination_starts(agent, posterior, rng)
    seed = int(rng.integers(2**31 - 1))

    if agent.kind == AgentKind.HIERARCHICAL:
        vae_losses = train_goalvae(agent.vae, flatten_states(posterior).h, rng)
        report.vae_recon = vae_losses.recon
        report.vae_kl = vae_losses.kl

        feat = tf.concat([posterior.h, posterior.z], axis=-1)
        if int(feat.shape[1]) >= 2:
            F = int(feat.shape[-1])
            report.ensemble = train_ensemble(
                agent,
                tf.reshape(feat[:, :-1], (-1, F)),
                tf.reshape(posterior.h[:, 1:], (-1, agent.wm_config.h_dim)),
            )

        horizon = agent.config.manager_horizon
        worker, rollout = train_actor_critic(
            agent.store, lambda: worker_rollout(agent, starts, horizon, seed), agent.worker_critic,
            "wrk.actor.", "wrk.critic.", agent.config,
        )
        manager, _ = train_actor_critic(
            agent.store, lambda: manager_rollout(agent, rollout.extra), agent.manager_critic,
            "mgr.actor.", "mgr.critic.", agent.config,
            discount=agent.config.discount ** agent.config.goal_horizon, pathwise=False,
        )
        report.actor, report.critic = worker.actor, worker.critic
        report.manager_actor, report.manager_critic = manager.actor, manager.critic
        report.imag_return = manager.mean_return
    else:
        flat, _ = train_actor_critic(
            agent.store, lambda: flat_rollout(agent, starts, agent.config.imag_horizon, seed), agent.critic,
            "flat.actor.", "flat.critic.", agent.config,
        )
        report.actor, report.critic = flat.actor, flat.critic
        report.imag_return = flat.mean_return

    return report
