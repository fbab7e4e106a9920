from dataclasses import dataclass

import numpy as np
import tensorflow as tf

from common.errors import *
from common.numerics import *

import logging
log = logging.getLogger('goalvae')


@dataclass
class GoalVAEConfig:
    codes: int = 8  # Number of categorical rows (K)
    classes: int = 16  # Classes per row (C)
    hidden: int = 128
    kl_weight: float = 1.0
    lr: float = 3e-4
    grad_clip: float = 100.0

    def __post_init__(self):
        if self.codes < 1 or self.classes < 2:
            raise ConfigError(f"Goal codes need at least 1 row and 2 classes, got {self.codes}x{self.classes}")


@dataclass
class VAELosses:
    recon: float
    kl: float
    total: float


class GoalVAE:
    """Categorical autoencoder of deterministic model states h. Parameters live under "vae."."""

    def __init__(self, store: ParamStore, config: GoalVAEConfig, h_dim: int, rng):
        self.store = store
        self.config = config
        self.h_dim = h_dim
        size = config.codes * config.classes
        self.encoder = Mlp(store, "vae.enc", [h_dim, config.hidden, size], rng)
        self.decoder = Mlp(store, "vae.dec", [size, config.hidden, h_dim], rng)

    @property
    def code_shape(self):
        return (self.config.codes, self.config.classes)


def code_logits(vae: GoalVAE, h):
    h = to_tensor(h)
    logits = vae.encoder(h)
    return tf.reshape(logits, (-1, vae.config.codes, vae.config.classes))


def sample_code(logits, rng=None) -> np.ndarray:
    """
    One-hot rows from (B, K, C) logits. Gumbel-max sampling with rng, argmax without.
    """
    logits = logits.numpy() if tf.is_tensor(logits) else np.asarray(logits, dtype=np.float64)
    if rng is not None:
        logits = logits + rng.gumbel(size=logits.shape)
    idx = np.argmax(logits, axis=-1)
    return np.eye(logits.shape[-1])[idx]


def vae_encode(vae: GoalVAE, h, rng=None):
    """
    Returns (code, logits) where code is the (B, K, C) one-hot sample (argmax without rng).
    Training passes gradients straight through the sample, see goal_vae_loss.
    """
    logits = code_logits(vae, h)
    return sample_code(logits, rng), logits


def validate_code(code, shape):
    code = code.numpy() if tf.is_tensor(code) else np.asarray(code, dtype=np.float64)
    if code.shape[-2:] != tuple(shape):
        raise CodeError(f"Goal code shape {code.shape[-2:]} does not match {tuple(shape)}")
    binary = np.all((code == 0.0) | (code == 1.0))
    if not binary or not np.all(code.sum(axis=-1) == 1.0):
        raise CodeError("Every goal code row must be one-hot")
    return code


def vae_decode(vae: GoalVAE, code, strict=True):
    """Decode (B, K, C) codes into (B, h_dim) goal vectors. strict rejects rows that are not one-hot."""
    if strict:
        validate_code(code, vae.code_shape)
    code = to_tensor(code)
    flat = tf.reshape(code, (-1, vae.config.codes * vae.config.classes))
    return vae.decoder(flat)


def categorical_kl_uniform(logits):
    """KL(q || uniform) per categorical row, averaged over rows."""
    log_q = log_softmax(logits)
    q = softmax(logits)
    kl = reduce_sum(q * log_q, axis=-1) + np.log(int(logits.shape[-1]))
    return reduce_mean(kl, axis=-1)


def goal_vae_loss(vae: GoalVAE, h, gumbel):
    """Summed squared reconstruction error of h plus the weighted KL to the uniform prior, batch averaged."""
    logits = code_logits(vae, h)
    idx = np.argmax(logits.numpy() + gumbel, axis=-1)
    one_hot = to_tensor(np.eye(vae.config.classes)[idx])
    code = straight_through(one_hot, softmax(logits))
    goal = vae_decode(vae, code, strict=False)

    recon = reduce_mean(reduce_sum(square(goal - to_tensor(h)), axis=-1))
    kl = reduce_mean(categorical_kl_uniform(logits))
    loss = recon + vae.config.kl_weight * kl
    return loss, {"recon": recon, "kl": kl}


def train_goalvae(vae: GoalVAE, h, rng) -> VAELosses:
    """One gradient step on the "vae." groups using a batch of (N, h_dim) states."""
    h = np.asarray(h.numpy() if tf.is_tensor(h) else h, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] == 0:
        raise EmptyBatch(f"Goal VAE batch must be a non-empty (N, h_dim) matrix, got shape {h.shape}")
    gumbel = rng.gumbel(size=(h.shape[0], vae.config.codes, vae.config.classes))

    _, grads, parts = forward_backward(
        vae.store, h, lambda b: goal_vae_loss(vae, b, gumbel), prefix="vae.", has_aux=True,
    )
    if grads:
        apply_update(vae.store, clip_by_global_norm(grads, vae.config.grad_clip), vae.config.lr)

    recon = float(parts["recon"].numpy())
    kl = float(parts["kl"].numpy())
    return VAELosses(recon=recon, kl=kl, total=recon + vae.config.kl_weight * kl)


def round_trip(vae: GoalVAE, h):
    """Decode of the greedy code of h."""
    code, _ = vae_encode(vae, h)
    return vae_decode(vae, code, strict=True)
