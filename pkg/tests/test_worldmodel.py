import pytest
import numpy as np
import numpy.testing as npt

from common.errors import *
from common.numerics import *
from common.worldmodel import *

OBS_SIZE = 7
ACTION_SIZE = 2


def tiny_model(seed=0, **kw):
    config = WorldModelConfig(**{"h_dim": 8, "z_dim": 4, "hidden": 16, "embed": 16, **kw})
    store = ParamStore()
    return WorldModel(store, config, OBS_SIZE, ACTION_SIZE, np.random.default_rng(seed))


def constant_batch(B=2, L=10, reward=0.7):
    obs = np.tile(np.linspace(-0.5, 0.5, OBS_SIZE), (B, L, 1))
    obs[..., -1] = reward
    obs[:, 0, -1] = 0.0
    return {
        "obs": obs,
        "actions": np.zeros((B, L, ACTION_SIZE)),
        "rewards": np.full((B, L), reward),
    }


def test_posterior_depends_on_previous_reward():
    wm = tiny_model()
    prev = initial_state(wm, 1)
    action = np.zeros((1, ACTION_SIZE))
    obs = np.random.default_rng(1).uniform(0, 1, (1, OBS_SIZE))

    shifted = obs.copy()
    shifted[0, -1] += 1e-4

    a = encode_posterior(wm, prev, action, obs)
    b = encode_posterior(wm, prev, action, shifted)
    sensitivity = np.abs(b.mean.numpy() - a.mean.numpy()).max() / 1e-4
    assert sensitivity > 0.0


def test_posterior_is_deterministic():
    wm = tiny_model()
    prev = initial_state(wm, 3)
    action = np.ones((3, ACTION_SIZE)) * 0.5
    obs = np.random.default_rng(2).uniform(0, 1, (3, OBS_SIZE))

    a = encode_posterior(wm, prev, action, obs, rng=np.random.default_rng(5))
    b = encode_posterior(wm, prev, action, obs, rng=np.random.default_rng(5))
    npt.assert_array_equal(a.z.numpy(), b.z.numpy())
    npt.assert_array_equal(a.h.numpy(), b.h.numpy())


def test_zero_weights_give_midpoint_log_std():
    wm = tiny_model()
    for name in wm.store.names("wm."):
        wm.store.assign(name, np.zeros(wm.store[name].shape))

    state = encode_posterior(wm, initial_state(wm, 2), np.zeros((2, 2)), np.ones((2, OBS_SIZE)))

    npt.assert_array_equal(state.mean.numpy(), 0.0)
    npt.assert_allclose(state.log_std.numpy(), -1.5)


def test_observation_size_checked():
    wm = tiny_model()
    with pytest.raises(ShapeError):
        encode_posterior(wm, initial_state(wm, 1), np.zeros((1, 2)), np.zeros((1, OBS_SIZE + 1)))


def test_prior_is_valid_and_deterministic():
    wm = tiny_model()
    state = encode_posterior(wm, initial_state(wm, 2), np.zeros((2, 2)), np.ones((2, OBS_SIZE)))
    action = np.array([[0.3, -0.2], [1.0, 1.0]])

    a = dynamics_prior(wm, state, action)
    b = dynamics_prior(wm, state, action)
    npt.assert_array_equal(a.mean.numpy(), b.mean.numpy())
    assert np.all(np.exp(a.log_std.numpy()) > 0)
    assert np.all(a.log_std.numpy() >= -5.0) and np.all(a.log_std.numpy() <= 2.0)


def test_losses_compose():
    wm = tiny_model()
    losses = train_worldmodel(wm, constant_batch(), np.random.default_rng(0))

    assert losses.total == losses.recon + 10.0 * losses.reward + 1.0 * losses.kl
    assert losses.kl >= 1.0  # Free-bits floor
    assert losses.kl_raw >= 0.0
    assert losses.posterior.h.shape == (2, 10, 8)


def test_frozen_model_is_not_updated():
    wm = tiny_model()
    wm.store.set_trainable("wm.", False)
    before = wm.store.group_bytes()

    losses = train_worldmodel(wm, constant_batch(), np.random.default_rng(0))

    assert np.isfinite(losses.total)
    assert wm.store.group_bytes() == before


def test_empty_batch():
    wm = tiny_model()
    batch = {"obs": np.zeros((0, 5, OBS_SIZE)), "actions": np.zeros((0, 5, 2)), "rewards": np.zeros((0, 5))}
    with pytest.raises(EmptyBatch):
        train_worldmodel(wm, batch, np.random.default_rng(0))


def test_imagine_one_step():
    wm = tiny_model()
    start = initial_state(wm, 4)

    traj = imagine(wm, start, lambda s, t: np.zeros((4, 2)), horizon=1)

    assert traj.horizon == 1
    assert tuple(traj.rewards.shape) == (1, 4)
    assert tuple(traj.feats.shape) == (2, 4, wm.feat_size)

    with pytest.raises(ConfigError):
        imagine(wm, start, lambda s, t: np.zeros((4, 2)), horizon=0)


def test_imagine_uses_no_environment_or_observations(monkeypatch):
    import common.envs
    import common.worldmodel

    calls = {"env": 0, "posterior": 0}

    def env_step(*args, **kwargs):
        calls["env"] += 1
        raise AssertionError("environment stepped during imagination")

    def posterior(*args, **kwargs):
        calls["posterior"] += 1
        raise AssertionError("observation encoded during imagination")

    monkeypatch.setattr(common.envs, "env_step", env_step)
    monkeypatch.setattr(common.worldmodel, "encode_posterior", posterior)

    wm = tiny_model()
    traj = common.worldmodel.imagine(wm, initial_state(wm, 2), lambda s, t: np.ones((2, 2)), 6, rng=np.random.default_rng(0))

    assert traj.horizon == 6
    assert calls == {"env": 0, "posterior": 0}


@pytest.mark.slow
def test_overfit_constant_sequence():
    wm = tiny_model(lr=1e-2, free_bits=0.0)
    batch = constant_batch()
    rng = np.random.default_rng(0)

    first = train_worldmodel(wm, batch, rng)
    for _ in range(500):
        last = train_worldmodel(wm, batch, rng)

    assert last.recon < 0.1 * first.recon
    assert last.kl_raw < 0.1

    # Reward head regresses to the constant, also in imagination
    posterior = last.posterior
    start = select_states(flatten_states(posterior), [5, 15])
    traj = imagine(wm, start, lambda s, t: np.zeros((2, 2)), horizon=15)
    npt.assert_allclose(traj.rewards.numpy(), 0.7, atol=0.1)

    feats = flatten_states(posterior).feat
    npt.assert_allclose(predict_reward(wm, feats).numpy(), 0.7, atol=0.05)

    pass
