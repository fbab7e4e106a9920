import pytest
import numpy as np
import numpy.testing as npt

from common.errors import *
from common.numerics import *


def small_network(seed):
    rng = np.random.default_rng(seed)
    store = ParamStore()
    mlp = Mlp(store, "net.mlp", [3, 4, 4], rng)
    cell = GRUCell(store, "net.gru", 4, 3, rng)
    head = Dense(store, "net.head", 3, 5, rng)
    x = rng.standard_normal((2, 3))
    h0 = 0.5 * rng.standard_normal((2, 3))
    target = rng.standard_normal((2, 5))

    def loss_fn(batch):
        hidden = tanh(mlp(to_tensor(batch)))
        h = cell(hidden, to_tensor(h0))
        out = head(elu(h))
        fit = reduce_mean(square(out - target))
        probs = softmax(out)
        ent = reduce_mean(reduce_sum(probs * log_softmax(out), axis=-1))
        smooth = reduce_mean(logarithm(1.0 + exp(-square(out))))
        return fit + 0.1 * ent + 0.1 * smooth

    return store, x, loss_fn


@pytest.mark.parametrize("seed", range(20))
def test_gradients_match_finite_differences(seed):
    store, x, loss_fn = small_network(seed)
    before = store.snapshot()

    err = check_gradients(store, x, loss_fn)
    assert err < 1e-4

    # Parameters are restored
    for name, value in store.snapshot().items():
        npt.assert_array_equal(value, before[name])


def test_two_layer_network_gradients():
    rng = np.random.default_rng(5)
    store = ParamStore()
    net = Mlp(store, "net", [5, 6, 1], rng)
    x = rng.standard_normal((4, 5))

    err = check_gradients(store, x, lambda b: reduce_mean(square(net(to_tensor(b)) - 1.0)), eps=1e-5)
    assert err < 1e-4

    with pytest.raises(ConfigError):
        check_gradients(store, x, lambda b: reduce_mean(net(to_tensor(b))), eps=0.0)


def test_unconnected_groups_get_zero_gradients():
    rng = np.random.default_rng(0)
    store = ParamStore()
    used = Dense(store, "a.used", 2, 1, rng)
    Dense(store, "a.unused", 2, 1, rng)

    loss, grads = forward_backward(store, np.ones((1, 2)), lambda b: reduce_sum(used(to_tensor(b))))

    assert set(grads) == {"a.used.w", "a.used.b", "a.unused.w", "a.unused.b"}
    npt.assert_array_equal(grads["a.unused.w"], np.zeros((2, 1)))
    npt.assert_allclose(grads["a.used.w"], np.ones((2, 1)))


def test_frozen_groups_are_not_differentiated_or_updated():
    rng = np.random.default_rng(0)
    store = ParamStore()
    layer = Dense(store, "wm.layer", 2, 2, rng)
    store.set_trainable("wm.", False)
    before = store.group_bytes()

    loss, grads = forward_backward(store, np.ones((1, 2)), lambda b: reduce_sum(square(layer(to_tensor(b)))))
    assert grads == {}

    with pytest.raises(ConfigError):
        apply_update(store, {"wm.layer.w": np.ones((2, 2))}, 0.1)
    assert store.group_bytes() == before


def test_apply_update_validates_before_mutating():
    store = ParamStore()
    store.add("p.a", np.zeros(2))
    store.add("p.b", np.zeros(3))

    with pytest.raises(ShapeError):
        apply_update(store, {"p.a": np.ones(2), "p.b": np.ones(2)}, 0.1)
    npt.assert_array_equal(store.get("p.a"), np.zeros(2))

    with pytest.raises(ConfigError):
        apply_update(store, {"p.missing": np.ones(2)}, 0.1)


def test_adam_first_step_moves_by_step_size():
    store = ParamStore()
    store.add("p", np.array([1.0, -1.0]))

    apply_update(store, {"p": np.array([0.5, -2.0])}, 0.01)

    # Bias-corrected first step is step_size * sign(g) up to eps
    npt.assert_allclose(store.get("p"), [0.99, -0.99], atol=1e-6)
    assert store.steps["p"] == 1


def test_adam_minimizes_quadratic():
    store = ParamStore()
    store.add("x", np.array([3.0, -2.0]))

    for _ in range(500):
        _, grads = forward_backward(store, None, lambda _: reduce_sum(square(store["x"])))
        apply_update(store, grads, 0.05)

    npt.assert_allclose(store.get("x"), [0.0, 0.0], atol=1e-2)


def test_quadratic_bowl_decreases_monotonically():
    store = ParamStore()
    store.add("x", np.array([3.0, -2.5]))

    losses = []
    for _ in range(200):
        loss, grads = forward_backward(store, None, lambda _: reduce_sum(square(store["x"])))
        losses.append(loss)
        apply_update(store, grads, 1e-2)

    assert all(later < earlier for earlier, later in zip(losses[10:], losses[11:]))
    assert losses[-1] < losses[0]


def test_zero_gradient_only_decays_moments():
    store = ParamStore()
    store.add("p", np.array([1.0, -1.0]))
    store.add("q", np.array([0.5]))

    apply_update(store, {"p": np.array([0.5, -2.0]), "q": np.array([1.0])}, 0.01)
    before = store.group_bytes()
    m, v = store.moments["p"]

    apply_update(store, {"p": np.zeros(2)}, 0.01)

    assert store.group_bytes() == before
    npt.assert_allclose(store.moments["p"][0], 0.9 * m)
    npt.assert_allclose(store.moments["p"][1], 0.999 * v)
    assert store.steps["p"] == 2 and store.steps["q"] == 1


def test_straight_through_gradients_are_reported():
    rng = np.random.default_rng(3)
    store = ParamStore()
    layer = Dense(store, "net.logits", 3, 4, rng)
    x = rng.standard_normal((5, 3))
    target = rng.standard_normal((5, 4))

    def loss_fn(batch):
        probs = softmax(layer(to_tensor(batch)))
        one_hot = np.eye(4)[np.argmax(probs.numpy(), axis=-1)]
        return reduce_mean(square(straight_through(to_tensor(one_hot), probs) - target))

    before = store.group_bytes()
    err = check_gradients(store, x, loss_fn)

    # The estimator is biased: the error is only required to be a number
    assert np.isfinite(err) and err >= 0.0
    assert store.group_bytes() == before


def test_non_finite_loss_names_primitive():
    store = ParamStore()
    store.add("p", np.array([-1.0]))

    with pytest.raises(NumericalDivergence) as e:
        forward_backward(store, None, lambda _: reduce_sum(logarithm(store["p"])))
    assert e.value.primitive == "log"
    assert e.value.exit_code == 3


def test_clip_by_global_norm():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}

    clipped = clip_by_global_norm(grads, 1.0)
    npt.assert_allclose(clipped["a"], [0.6])
    npt.assert_allclose(clipped["b"], [0.8])

    assert clip_by_global_norm(grads, 10.0) is grads


def test_scaled_tanh_bounds():
    x = to_tensor(np.array([-100.0, 0.0, 100.0]))
    y = scaled_tanh(x, -5.0, 2.0).numpy()
    npt.assert_allclose(y, [-5.0, -1.5, 2.0])


def test_checkpoint_bytes(tmp_path):
    rng = np.random.default_rng(1)
    store = ParamStore()
    Mlp(store, "wm.enc", [3, 4, 2], rng)
    store.add("mgr.scalar", np.array(2.5), trainable=False)

    path = save_checkpoint(store, tmp_path / "model.hgcp")
    data = path.read_bytes()
    assert data[:4] == b"HGCP"
    assert int.from_bytes(data[4:8], "little") == 1
    assert int.from_bytes(data[8:12], "little") == len(store)

    groups = read_checkpoint(path)
    assert list(groups) == store.names()
    arr, trainable = groups["mgr.scalar"]
    assert arr.shape == () and trainable is False

    other = ParamStore()
    Mlp(other, "wm.enc", [3, 4, 2], np.random.default_rng(2))
    other.add("mgr.scalar", np.array(0.0))
    load_checkpoint(other, path)
    assert other.group_bytes() == store.group_bytes()
    assert other.trainable["mgr.scalar"] is False


def test_checkpoint_errors(tmp_path):
    store = ParamStore()
    store.add("wm.a", np.zeros(2))
    path = save_checkpoint(store, tmp_path / "a.hgcp")

    bad = tmp_path / "bad.hgcp"
    bad.write_bytes(b"NOPE" + path.read_bytes()[4:])
    with pytest.raises(ParseError):
        read_checkpoint(bad)

    truncated = tmp_path / "truncated.hgcp"
    truncated.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(ParseError):
        read_checkpoint(truncated)

    bigger = ParamStore()
    bigger.add("wm.a", np.zeros(2))
    bigger.add("wm.b", np.zeros(2))
    with pytest.raises(ConfigError):
        load_checkpoint(bigger, path)

    # Loading only a prefix that the checkpoint covers
    bigger.add("vae.x", np.zeros(1))
    with pytest.raises(ConfigError):
        load_checkpoint(bigger, path, prefix="vae.")


def test_duplicate_group():
    store = ParamStore()
    store.add("a", np.zeros(1))
    with pytest.raises(ConfigError):
        store.add("a", np.zeros(1))

    pass
