import struct
import contextvars
from pathlib import Path

import numpy as np
import tensorflow as tf

from common.errors import *

import logging
log = logging.getLogger('numerics')

"""
Parameter store, differentiable primitives and the adaptive-moment optimizer.

Gradients are recorded with tf.GradientTape in float64. All learnable weights live in named groups
of a ParamStore and the optimizer keeps its moment buffers keyed by the same names.
"""

DTYPE = tf.float64

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

CHECKPOINT_MAGIC = b"HGCP"
CHECKPOINT_VERSION = 1

# Primitive guards are switched on only while diagnosing a non-finite loss
_guards_on = contextvars.ContextVar("guards_on", default=False)


def seed_everything(seed: int):
    np.random.seed(seed)
    tf.random.set_seed(seed)
    tf.config.experimental.enable_op_determinism()


def to_tensor(x):
    return tf.convert_to_tensor(x, dtype=DTYPE)


#
# Parameter store
#

class ParamStore:
    """
    Named parameter groups with per-group trainable flag and optimizer moment buffers.

    Group names are dotted paths like "wm.post.0.w". Components are addressed by prefix ("wm.", "mgr." etc.)
    """

    def __init__(self):
        self.groups = {}  # name -> tf.Variable
        self.trainable = {}  # name -> bool
        self.moments = {}  # name -> (first moment, second moment)
        self.steps = {}  # name -> number of applied updates

    def add(self, name: str, value, trainable=True) -> tf.Variable:
        if name in self.groups:
            raise ConfigError(f"Duplicate parameter group '{name}'")
        value = np.array(value, dtype=np.float64)
        var = tf.Variable(value, dtype=DTYPE)
        self.groups[name] = var
        self.trainable[name] = bool(trainable)
        self.moments[name] = (np.zeros_like(value), np.zeros_like(value))
        self.steps[name] = 0
        return var

    def __getitem__(self, name) -> tf.Variable:
        return self.groups[name]

    def __contains__(self, name):
        return name in self.groups

    def __len__(self):
        return len(self.groups)

    def names(self, prefix="", trainable_only=False):
        return [
            n for n in self.groups
            if n.startswith(prefix) and (not trainable_only or self.trainable[n])
        ]

    def set_trainable(self, prefix: str, flag: bool):
        names = self.names(prefix)
        for n in names:
            self.trainable[n] = bool(flag)
        return names

    def get(self, name) -> np.ndarray:
        return self.groups[name].numpy().copy()

    def assign(self, name, value):
        var = self.groups[name]
        value = np.asarray(value, dtype=np.float64)
        if value.shape != tuple(var.shape):
            raise ShapeError(f"Group '{name}' has shape {tuple(var.shape)} but value has shape {value.shape}")
        var.assign(value)

    def snapshot(self, prefix="") -> dict:
        return {n: self.get(n) for n in self.names(prefix)}

    def group_bytes(self, prefix="") -> dict:
        """Raw bytes of each group, used to compare checkpoints bit for bit."""
        return {n: self.groups[n].numpy().astype("<f8").tobytes() for n in self.names(prefix)}

    def size(self, prefix=""):
        return int(sum(np.prod(self.groups[n].shape) for n in self.names(prefix)))


#
# Primitives
#

def guard(x, primitive: str):
    if _guards_on.get():
        if not np.all(np.isfinite(x.numpy())):
            raise NumericalDivergence(primitive)
    return x


def affine(x, w, b):
    return guard(tf.matmul(x, w) + b, "affine")


def tanh(x):
    return guard(tf.tanh(x), "tanh")


def elu(x):
    return guard(tf.nn.elu(x), "elu")


def exp(x):
    return guard(tf.exp(x), "exp")


def softmax(x):
    return guard(tf.nn.softmax(x, axis=-1), "softmax")


def log_softmax(x):
    return guard(tf.nn.log_softmax(x, axis=-1), "log_softmax")


def logarithm(x):
    return guard(tf.math.log(x), "log")


def square(x):
    return guard(tf.square(x), "square")


def reduce_sum(x, axis=None):
    return guard(tf.reduce_sum(x, axis=axis), "sum")


def reduce_mean(x, axis=None):
    return guard(tf.reduce_mean(x, axis=axis), "mean")


def gru(x, h, gates, candidate):
    """Gated recurrent cell: reset/update gates and a tanh candidate state."""
    g = gates(tf.concat([x, h], axis=-1))
    reset, update = tf.split(tf.sigmoid(g), 2, axis=-1)
    c = tf.tanh(candidate(tf.concat([x, reset * h], axis=-1)))
    return guard(update * h + (1.0 - update) * c, "gru")


def straight_through(one_hot, probs):
    """Forward value is the one-hot sample, backward pass is the identity through the probabilities."""
    return one_hot + probs - tf.stop_gradient(probs)


def scaled_tanh(x, low, high):
    """Smoothly squash x into [low, high]. Zero input maps to the midpoint."""
    return low + (high - low) * 0.5 * (tanh(x) + 1.0)


#
# Layers
#

def glorot(rng, fan_in, fan_out, scale=1.0):
    limit = scale * np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Dense:
    def __init__(self, store: ParamStore, name, n_in, n_out, rng, scale=1.0):
        self.name = name
        self.w = store.add(f"{name}.w", glorot(rng, n_in, n_out, scale))
        self.b = store.add(f"{name}.b", np.zeros(n_out))

    def __call__(self, x):
        return affine(x, self.w, self.b)


class Mlp:
    """Feed-forward network with ELU hidden activations and a linear output."""

    def __init__(self, store: ParamStore, name, sizes, rng, out_scale=1.0):
        self.name = name
        self.layers = []
        for i in range(len(sizes) - 1):
            scale = out_scale if i == len(sizes) - 2 else 1.0
            self.layers.append(Dense(store, f"{name}.{i}", sizes[i], sizes[i + 1], rng, scale=scale))

    def __call__(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = elu(x)
        return x


class GRUCell:
    def __init__(self, store: ParamStore, name, n_in, n_hidden, rng):
        self.name = name
        self.gates = Dense(store, f"{name}.gates", n_in + n_hidden, 2 * n_hidden, rng)
        self.candidate = Dense(store, f"{name}.cand", n_in + n_hidden, n_hidden, rng)

    def __call__(self, x, h):
        return gru(x, h, self.gates, self.candidate)


#
# Differentiation and optimization
#

def forward_backward(store: ParamStore, batch, loss_fn, prefix="", has_aux=False):
    """
    Evaluate loss_fn(batch) and its gradients with respect to the trainable groups under the prefix.

    Returns (loss, grads) or (loss, grads, aux) if loss_fn returns a (loss, aux) pair.
    Frozen groups get no entry in grads. Groups not touched by the loss get exact zeros.
    """
    names = store.names(prefix, trainable_only=True)
    variables = [store[n] for n in names]

    with tf.GradientTape(watch_accessed_variables=False) as tape:
        for v in variables:
            tape.watch(v)
        out = loss_fn(batch)
        loss, aux = out if has_aux else (out, None)

    loss_value = float(loss.numpy()) if tf.is_tensor(loss) else float(loss)
    if not np.isfinite(loss_value):
        _diagnose(loss_fn, batch)

    grads = {}
    if variables:
        grad_list = tape.gradient(loss, variables, unconnected_gradients=tf.UnconnectedGradients.ZERO)
        for name, g in zip(names, grad_list):
            g = tf.convert_to_tensor(g).numpy()
            if not np.all(np.isfinite(g)):
                raise NumericalDivergence("gradient", f"Group '{name}'")
            grads[name] = g

    if has_aux:
        return loss_value, grads, aux
    return loss_value, grads


def _diagnose(loss_fn, batch):
    """Re-run the loss with primitive guards so that the first non-finite primitive is named."""
    token = _guards_on.set(True)
    try:
        loss_fn(batch)
    finally:
        _guards_on.reset(token)
    raise NumericalDivergence("loss")


def clip_by_global_norm(grads: dict, max_norm):
    if not max_norm or not grads:
        return grads
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm <= max_norm:
        return grads
    factor = max_norm / norm
    return {n: g * factor for n, g in grads.items()}


def apply_update(store: ParamStore, grads: dict, step_size: float):
    """Adaptive-moment update of the groups present in grads. Other groups are not touched."""
    # Validate everything before mutating anything
    for name, g in grads.items():
        if name not in store.groups:
            raise ConfigError(f"Gradient for unknown group '{name}'")
        if not store.trainable[name]:
            raise ConfigError(f"Gradient for frozen group '{name}'")
        if np.shape(g) != tuple(store.groups[name].shape):
            raise ShapeError(f"Gradient shape {np.shape(g)} does not match group '{name}' {tuple(store.groups[name].shape)}")

    for name, g in grads.items():
        g = np.asarray(g, dtype=np.float64)
        m, v = store.moments[name]
        t = store.steps[name] + 1

        m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g
        v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * g * g
        m_hat = m / (1.0 - ADAM_BETA1 ** t)
        v_hat = v / (1.0 - ADAM_BETA2 ** t)

        # A zero gradient only decays the moments
        if np.any(g):
            var = store.groups[name]
            var.assign(var.numpy() - step_size * m_hat / (np.sqrt(v_hat) + ADAM_EPS))

        store.moments[name] = (m, v)
        store.steps[name] = t

    return store


def _loss_value(loss_fn, batch):
    loss = loss_fn(batch)
    value = float(loss.numpy()) if tf.is_tensor(loss) else float(loss)
    if not np.isfinite(value):
        _diagnose(loss_fn, batch)
    return value


def check_gradients(store: ParamStore, batch, loss_fn, eps=1e-5, prefix=""):
    """
    Compare analytic gradients with central finite differences over every trainable parameter.

    Returns max |analytic - numeric| / max(|analytic|, |numeric|, 1e-8). Parameter values are restored.
    """
    if eps <= 0:
        raise ConfigError(f"Finite difference step must be positive: {eps}")

    _, analytic = forward_backward(store, batch, loss_fn, prefix)

    worst = 0.0
    for name, grad in analytic.items():
        var = store[name]
        base = var.numpy().copy()
        flat = base.reshape(-1)
        grad = grad.reshape(-1)
        try:
            for i in range(flat.size):
                shifted = flat.copy()
                shifted[i] = flat[i] + eps
                var.assign(shifted.reshape(base.shape))
                loss_plus = _loss_value(loss_fn, batch)

                shifted[i] = flat[i] - eps
                var.assign(shifted.reshape(base.shape))
                loss_minus = _loss_value(loss_fn, batch)

                numeric = (loss_plus - loss_minus) / (2.0 * eps)
                err = abs(grad[i] - numeric) / max(abs(grad[i]), abs(numeric), 1e-8)
                worst = max(worst, err)
        finally:
            var.assign(base)

    return worst


#
# Checkpoints
#

def save_checkpoint(store: ParamStore, path, prefix=""):
    """
    Little-endian binary: magic, version u32, group count u32, then per group
    name length u32, utf-8 name, trainable u8, ndim u32, dims u32 each, raw f64 data.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = store.names(prefix)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(names)))
        for name in names:
            raw_name = name.encode("utf-8")
            arr = store.groups[name].numpy()
            f.write(struct.pack("<I", len(raw_name)))
            f.write(raw_name)
            f.write(struct.pack("<BI", int(store.trainable[name]), arr.ndim))
            if arr.ndim:
                f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype("<f8").tobytes())
    log.info(f"Saved {len(names)} parameter groups to {path}")
    return path


def read_checkpoint(path) -> dict:
    """Return {name: (array, trainable)} in file order."""
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ParseError(f"Not a checkpoint file: {path}")
    version, count = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise ParseError(f"Unsupported checkpoint version {version}")
    offset = 12
    groups = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", data, offset)
            offset += 4
            name = data[offset:offset + name_len].decode("utf-8")
            offset += name_len
            trainable, ndim = struct.unpack_from("<BI", data, offset)
            offset += 5
            shape = struct.unpack_from(f"<{ndim}I", data, offset) if ndim else ()
            offset += 4 * ndim
            n = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(data, dtype="<f8", count=n, offset=offset).reshape(shape).astype(np.float64)
            offset += 8 * n
            groups[name] = (arr, bool(trainable))
    except (struct.error, ValueError) as e:
        raise ParseError(f"Truncated checkpoint {path}: {e}")
    return groups


def load_checkpoint(store: ParamStore, path, prefix=""):
    """Assign checkpoint values into existing groups of the store. Trainable flags are restored too."""
    groups = read_checkpoint(path)
    for name in store.names(prefix):
        if name not in groups:
            raise ConfigError(f"Checkpoint {path} has no group '{name}'")
    for name, (arr, trainable) in groups.items():
        if not name.startswith(prefix):
            continue
        if name not in store:
            raise ConfigError(f"Checkpoint group '{name}' does not exist in the model")
        store.assign(name, arr)
        store.trainable[name] = trainable
    return store
