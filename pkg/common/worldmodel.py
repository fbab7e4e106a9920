from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
import tensorflow as tf

from common.errors import *
from common.numerics import *

import logging
log = logging.getLogger('worldmodel')


@dataclass
class WorldModelConfig:
    h_dim: int = 128
    z_dim: int = 32
    hidden: int = 128
    embed: int = 128
    reward_weight: float = 10.0
    kl_weight: float = 1.0
    free_bits: float = 1.0
    kl_balance: float = 0.8  # Share of the KL gradient that moves the prior
    lr: float = 3e-4
    grad_clip: float = 100.0
    log_std_min: float = -5.0
    log_std_max: float = 2.0

    def __post_init__(self):
        for name in ("h_dim", "z_dim", "hidden", "embed"):
            if getattr(self, name) < 1:
                raise ConfigError(f"World model '{name}' must be positive")
        if not self.log_std_min < self.log_std_max:
            raise ConfigError("World model log-std range is empty")
        if self.free_bits < 0 or not 0.0 <= self.kl_balance <= 1.0:
            raise ConfigError("Invalid KL settings of the world model")


@dataclass
class ModelState:
    """Deterministic recurrent state h and stochastic latent z with its diagonal Gaussian parameters."""
    h: tf.Tensor
    z: tf.Tensor
    mean: tf.Tensor
    log_std: tf.Tensor

    @property
    def feat(self):
        return tf.concat([self.h, self.z], axis=-1)

    @property
    def batch_size(self):
        return int(self.h.shape[0])

    def detach(self):
        return ModelState(*(tf.stop_gradient(x) for x in (self.h, self.z, self.mean, self.log_std)))

    def is_finite(self):
        return all(bool(np.all(np.isfinite(x.numpy()))) for x in (self.h, self.z, self.mean, self.log_std))


@dataclass
class WMLosses:
    recon: float
    reward: float
    kl: float  # After the free-bits floor
    total: float
    kl_raw: float = 0.0
    posterior: Optional[ModelState] = field(default=None, repr=False)  # (B, L) posterior states, detached


@dataclass
class Trajectory:
    states: List[ModelState]  # horizon + 1 states, the first one is the start
    actions: tf.Tensor  # (T, B, A)
    rewards: tf.Tensor  # (T, B) predicted rewards of the transitions

    @property
    def horizon(self):
        return len(self.states) - 1

    @property
    def feats(self):
        return tf.stack([s.feat for s in self.states])

    @property
    def h(self):
        return tf.stack([s.h for s in self.states])


class WorldModel:
    """
    Recurrent latent model over flattened observations (pixels, proprioception and the previous reward).

    All parameters live under the "wm." prefix of the store.
    """

    def __init__(self, store: ParamStore, config: WorldModelConfig, obs_size: int, action_size: int, rng):
        self.store = store
        self.config = config
        self.obs_size = obs_size
        self.action_size = action_size
        c = config

        self.encoder = Mlp(store, "wm.enc", [obs_size, c.hidden, c.embed], rng)
        self.img_in = Dense(store, "wm.img_in", c.z_dim + action_size, c.hidden, rng)
        self.cell = GRUCell(store, "wm.gru", c.hidden, c.h_dim, rng)
        self.prior_net = Mlp(store, "wm.prior", [c.h_dim, c.hidden, 2 * c.z_dim], rng)
        self.post_net = Mlp(store, "wm.post", [c.h_dim + c.embed, c.hidden, 2 * c.z_dim], rng)
        # The previous reward is an input only and is not reconstructed
        self.decoder = Mlp(store, "wm.dec", [c.h_dim + c.z_dim, c.hidden, obs_size - 1], rng)
        self.reward_head = Mlp(store, "wm.rew", [c.h_dim + c.z_dim, c.hidden, 1], rng, out_scale=0.0)

    @property
    def feat_size(self):
        return self.config.h_dim + self.config.z_dim


def initial_state(wm: WorldModel, batch_size: int) -> ModelState:
    c = wm.config
    zeros_h = tf.zeros((batch_size, c.h_dim), dtype=DTYPE)
    zeros_z = tf.zeros((batch_size, c.z_dim), dtype=DTYPE)
    return ModelState(zeros_h, zeros_z, zeros_z, zeros_z)


def _stats(wm: WorldModel, out):
    mean, raw = tf.split(out, 2, axis=-1)
    log_std = scaled_tanh(raw, wm.config.log_std_min, wm.config.log_std_max)
    return mean, log_std


def _recurrent(wm: WorldModel, prev: ModelState, action):
    x = elu(wm.img_in(tf.concat([prev.z, to_tensor(action)], axis=-1)))
    return wm.cell(x, prev.h)


def _sample(mean, log_std, noise):
    if noise is None:
        return mean
    return mean + exp(log_std) * to_tensor(noise)


def encode_posterior(wm: WorldModel, prev: ModelState, action, obs, rng=None) -> ModelState:
    """
    Advance the recurrent state with the action and infer z from the observation vector.

    obs is the (B, obs_size) matrix of flattened observations. Without rng the posterior mean is used.
    """
    obs = to_tensor(obs)
    if int(obs.shape[-1]) != wm.obs_size:
        raise ShapeError(f"Observation size {obs.shape[-1]} does not match the world model {wm.obs_size}")
    h = _recurrent(wm, prev, action)
    embed = wm.encoder(obs)
    mean, log_std = _stats(wm, wm.post_net(tf.concat([h, embed], axis=-1)))
    noise = rng.standard_normal(mean.shape) if rng is not None else None
    state = ModelState(h, _sample(mean, log_std, noise), mean, log_std)
    if not state.is_finite():
        raise NumericalDivergence("encode_posterior")
    return state


def dynamics_prior(wm: WorldModel, prev: ModelState, action) -> ModelState:
    """Prior over z after the action, from the recurrent state only. z is set to the prior mean."""
    h = _recurrent(wm, prev, action)
    mean, log_std = _stats(wm, wm.prior_net(h))
    return ModelState(h, mean, mean, log_std)


def img_step(wm: WorldModel, prev: ModelState, action, noise=None) -> ModelState:
    prior = dynamics_prior(wm, prev, action)
    return ModelState(prior.h, _sample(prior.mean, prior.log_std, noise), prior.mean, prior.log_std)


def predict_reward(wm: WorldModel, feat):
    shape = tf.shape(feat)[:-1]
    flat = tf.reshape(feat, (-1, wm.feat_size))
    return tf.reshape(wm.reward_head(flat)[:, 0], shape)


def decode(wm: WorldModel, feat):
    return wm.decoder(feat)


def gaussian_kl(mean_q, log_std_q, mean_p, log_std_p):
    """KL(q || p) of diagonal Gaussians summed over the last axis."""
    var_q = exp(2.0 * log_std_q)
    var_p = exp(2.0 * log_std_p)
    kl = log_std_p - log_std_q + (var_q + square(mean_q - mean_p)) / (2.0 * var_p) - 0.5
    return reduce_sum(kl, axis=-1)


def _batch_arrays(batch):
    obs = np.asarray(batch["obs"], dtype=np.float64)
    if obs.ndim != 3 or obs.shape[0] * obs.shape[1] == 0:
        raise EmptyBatch(f"World model batch must be non-empty (B, L, D), got shape {obs.shape}")
    return obs, np.asarray(batch["actions"], dtype=np.float64), np.asarray(batch["rewards"], dtype=np.float64)


def world_model_loss(wm: WorldModel, batch, noise):
    """Returns (total loss tensor, parts) where parts hold the loss components and the posterior states."""
    c = wm.config
    obs, actions, rewards = _batch_arrays(batch)
    B, L, D = obs.shape

    obs_t = to_tensor(obs)
    embed = tf.reshape(wm.encoder(tf.reshape(obs_t, (B * L, D))), (B, L, c.embed))

    state = initial_state(wm, B)
    hs, zs, means, log_stds, prior_means, prior_log_stds = [], [], [], [], [], []
    for t in range(L):
        h = _recurrent(wm, state, actions[:, t])
        prior_mean, prior_log_std = _stats(wm, wm.prior_net(h))
        mean, log_std = _stats(wm, wm.post_net(tf.concat([h, embed[:, t]], axis=-1)))
        z = _sample(mean, log_std, noise[t])
        state = ModelState(h, z, mean, log_std)
        hs.append(h); zs.append(z); means.append(mean); log_stds.append(log_std)
        prior_means.append(prior_mean); prior_log_stds.append(prior_log_std)

    # (B, L, .) tensors
    h = tf.stack(hs, axis=1)
    z = tf.stack(zs, axis=1)
    mean = tf.stack(means, axis=1)
    log_std = tf.stack(log_stds, axis=1)
    prior_mean = tf.stack(prior_means, axis=1)
    prior_log_std = tf.stack(prior_log_stds, axis=1)

    feat = tf.reshape(tf.concat([h, z], axis=-1), (B * L, wm.feat_size))
    recon = decode(wm, feat)
    target = tf.reshape(obs_t[..., :-1], (B * L, D - 1))
    recon_loss = reduce_mean(square(recon - target))

    reward_pred = wm.reward_head(feat)[:, 0]
    reward_loss = reduce_mean(square(reward_pred - to_tensor(rewards.reshape(-1))))

    kl_prior = gaussian_kl(tf.stop_gradient(mean), tf.stop_gradient(log_std), prior_mean, prior_log_std)
    kl_post = gaussian_kl(mean, log_std, tf.stop_gradient(prior_mean), tf.stop_gradient(prior_log_std))
    kl_raw = c.kl_balance * reduce_mean(kl_prior) + (1.0 - c.kl_balance) * reduce_mean(kl_post)
    kl_loss = tf.maximum(kl_raw, to_tensor(c.free_bits))

    loss = recon_loss + c.reward_weight * reward_loss + c.kl_weight * kl_loss
    parts = {
        "recon": recon_loss, "reward": reward_loss, "kl": kl_loss, "kl_raw": kl_raw,
        "posterior": ModelState(h, z, mean, log_std),
    }
    return loss, parts


def train_worldmodel(wm: WorldModel, batch, rng) -> WMLosses:
    """One gradient step on the "wm." groups. Frozen groups are not updated but losses are still computed."""
    obs, _, _ = _batch_arrays(batch)
    B, L, _ = obs.shape
    noise = rng.standard_normal((L, B, wm.config.z_dim))

    _, grads, parts = forward_backward(
        wm.store, batch, lambda b: world_model_loss(wm, b, noise), prefix="wm.", has_aux=True,
    )
    if grads:
        apply_update(wm.store, clip_by_global_norm(grads, wm.config.grad_clip), wm.config.lr)

    c = wm.config
    recon = float(parts["recon"].numpy())
    reward = float(parts["reward"].numpy())
    kl = float(parts["kl"].numpy())
    return WMLosses(
        recon=recon,
        reward=reward,
        kl=kl,
        total=recon + c.reward_weight * reward + c.kl_weight * kl,
        kl_raw=float(parts["kl_raw"].numpy()),
        posterior=parts["posterior"].detach(),
    )


def imagine(wm: WorldModel, start: ModelState, policy: Callable, horizon: int, rng=None) -> Trajectory:
    """
    Roll the prior forward under policy(state, t) -> (B, A) actions. No observations are used.

    Without rng the prior means are followed.
    """
    if horizon < 1:
        raise ConfigError(f"Imagination horizon must be at least 1: {horizon}")

    state = start
    states = [start]
    actions = []
    for t in range(horizon):
        action = policy(state, t)
        noise = rng.standard_normal((start.batch_size, wm.config.z_dim)) if rng is not None else None
        state = img_step(wm, state, action, noise)
        states.append(state)
        actions.append(to_tensor(action))

    feats = tf.stack([s.feat for s in states[1:]])
    rewards = predict_reward(wm, feats)
    return Trajectory(states=states, actions=tf.stack(actions), rewards=rewards)


def flatten_states(states: ModelState) -> ModelState:
    """(B, L, .) states into (B*L, .)."""
    def flat(x):
        return tf.reshape(x, (-1, int(x.shape[-1])))
    return ModelState(flat(states.h), flat(states.z), flat(states.mean), flat(states.log_std))


def select_states(states: ModelState, index) -> ModelState:
    index = tf.constant(np.asarray(index, dtype=np.int64))
    return ModelState(*(tf.gather(x, index) for x in (states.h, states.z, states.mean, states.log_std)))
