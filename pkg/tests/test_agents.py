import pytest
import numpy as np
import numpy.testing as npt
import tensorflow as tf

from common.errors import *
from common.types import *
from common.numerics import to_tensor
from common.worldmodel import initial_state, encode_posterior
from common.agents import *
from inputs.collector import collect_episode

from conftest import tiny_agent, locomotion_spec


def random_latent(agent, batch=3, seed=0):
    rng = np.random.default_rng(seed)
    obs = rng.uniform(0, 1, (batch, agent.obs_size))
    return encode_posterior(agent.wm, initial_state(agent.wm, batch), np.zeros((batch, 2)), obs)


def test_config_defaults():
    assert AgentConfig().action_repeat == 1
    assert AgentConfig(kind="flat").action_repeat == 2
    assert AgentConfig(kind="flat", action_repeat=1).action_repeat == 1
    assert AgentConfig().goal_horizon == 8
    assert AgentConfig(goal_horizon=16, imag_horizon=15).manager_horizon == 32


@pytest.mark.parametrize("kw", [
    {"goal_horizon": 0},
    {"action_repeat": 0},
    {"imag_horizon": 0},
    {"ensemble_size": 1},
    {"discount": 0.0},
    {"kind": "ladder"},
])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        AgentConfig(**kw)


def test_effective_horizon():
    assert effective_horizon(12, 6) == 2
    assert effective_horizon(7, 1) == 7
    assert effective_horizon(3000, 8) == 375
    assert effective_horizon(5, 8) == 1
    with pytest.raises(ConfigError):
        effective_horizon(0, 8)


def test_parameter_groups():
    hier = tiny_agent("hierarchical")
    prefixes = {n.split(".")[0] for n in hier.store.names()}
    assert prefixes == {"wm", "vae", "mgr", "wrk"}
    assert len(hier.store.names("mgr.expl.")) > 0

    flat = tiny_agent("flat")
    prefixes = {n.split(".")[0] for n in flat.store.names()}
    assert prefixes == {"wm", "flat"}


@pytest.mark.parametrize("k, decisions", [(6, 2), (1, 12), (12, 1), (20, 1)])
def test_manager_schedule(k, decisions):
    agent = tiny_agent("hierarchical", goal_horizon=k)
    latent = random_latent(agent, batch=1)
    goal = None
    codes = 0
    for step in range(12):
        goal, code = manager_act(agent, latent, step, k, goal, greedy=True)
        codes += code is not None
        assert goal.shape == (1, agent.wm_config.h_dim)
    assert codes == decisions


def test_manager_keeps_goal_between_decisions():
    agent = tiny_agent("hierarchical", goal_horizon=4)
    latent = random_latent(agent, batch=1)
    goal, code = manager_act(agent, latent, 0, 4, None, rng=np.random.default_rng(0))
    assert code.shape == (1, 2, 4)

    kept, none = manager_act(agent, latent, 3, 4, goal)
    assert none is None
    assert kept is goal

    with pytest.raises(ProtocolError):
        manager_act(agent, latent, 3, 4, None)
    with pytest.raises(ConfigError):
        manager_act(agent, latent, -1, 4, goal)


def test_episode_manager_decisions():
    agent = tiny_agent("hierarchical", goal_horizon=6)
    ep = collect_episode(agent, locomotion_spec(1.0, episode_length=12), seed=0, greedy=True)
    assert ep.manager_decisions == 2
    assert ep.decisions == 12

    ep = collect_episode(agent, locomotion_spec(1.0, episode_length=13), seed=0, greedy=True)
    assert ep.manager_decisions == effective_horizon(13, 6)


def test_flat_action_repeat():
    agent = tiny_agent("flat")
    ep = collect_episode(agent, locomotion_spec(1.0, episode_length=12), seed=0, greedy=True)

    assert ep.decisions == 6
    # The action changes at most at every second step
    for t in range(0, 12, 2):
        npt.assert_array_equal(ep.actions[t], ep.actions[t + 1])


def test_hierarchy_with_unit_horizon_matches_flat_schedule():
    spec = locomotion_spec(1.0, episode_length=9)
    hier = collect_episode(tiny_agent("hierarchical", goal_horizon=1), spec, seed=0, greedy=True)
    flat = collect_episode(tiny_agent("flat", action_repeat=1), spec, seed=0, greedy=True)

    assert hier.decisions == flat.decisions == 9
    assert hier.manager_decisions == 9


def test_worker_actions_are_squashed_and_deterministic():
    agent = tiny_agent("hierarchical")
    latent = random_latent(agent, batch=5)
    goal = np.random.default_rng(1).standard_normal((5, agent.wm_config.h_dim)) * 10.0

    sampled = worker_act(agent, latent, goal, rng=np.random.default_rng(2)).numpy()
    assert np.all(np.abs(sampled) < 1.0)

    a = worker_act(agent, latent, goal, greedy=True).numpy()
    b = worker_act(agent, latent, goal, greedy=True).numpy()
    npt.assert_array_equal(a, b)

    other = worker_act(agent, latent, -goal, greedy=True).numpy()
    assert not np.array_equal(a, other)

    with pytest.raises(ShapeError):
        worker_act(agent, latent, np.zeros((5, agent.wm_config.h_dim + 1)))


def test_flat_actions():
    agent = tiny_agent("flat")
    latent = random_latent(agent, batch=4)
    sampled = flat_act(agent, latent, rng=np.random.default_rng(0)).numpy()
    assert np.all(np.abs(sampled) < 1.0)
    npt.assert_array_equal(flat_act(agent, latent, greedy=True).numpy(), flat_act(agent, latent).numpy())


def test_worker_intrinsic_reward():
    g = np.array([[1.0, -2.0, 0.5]])
    assert worker_intrinsic_reward(g, g).numpy()[0] == pytest.approx(1.0)
    assert worker_intrinsic_reward(np.array([[1.0, 0.0, 0.0]]), np.array([[0.0, 3.0, 0.0]])).numpy()[0] == 0.0
    assert worker_intrinsic_reward(2.0 * g, g).numpy()[0] == pytest.approx(0.5)
    assert worker_intrinsic_reward(np.zeros((1, 3)), np.zeros((1, 3))).numpy()[0] == 0.0

    rng = np.random.default_rng(0)
    h = rng.standard_normal((500, 3))
    goal = rng.standard_normal((500, 3))
    r = worker_intrinsic_reward(h, goal).numpy()
    assert np.all(r <= 1.0) and np.all(r >= -1.0)
    assert np.all(r < 1.0)


def test_identical_ensemble_has_no_disagreement():
    agent = tiny_agent("hierarchical")
    first = agent.ensemble[0]
    for member in agent.ensemble[1:]:
        for src, dst in zip(first.layers, member.layers):
            dst.w.assign(src.w)
            dst.b.assign(src.b)

    feat = random_latent(agent, batch=6).feat
    npt.assert_array_equal(exploration_reward(agent.ensemble, feat).numpy(), 0.0)


def test_exploration_reward_shape_and_sign():
    agent = tiny_agent("hierarchical")
    feats = tf.stack([random_latent(agent, batch=3, seed=s).feat for s in range(4)])
    r = exploration_reward(agent.ensemble, feats).numpy()
    assert r.shape == (4, 3)
    assert np.all(r >= 0.0)

    with pytest.raises(ConfigError):
        exploration_reward(agent.ensemble[:1], feats)


def test_ensemble_training_is_isolated():
    agent = tiny_agent("hierarchical")
    feat = random_latent(agent, batch=4).feat
    before = agent.store.group_bytes()

    train_ensemble(agent, feat, np.ones((4, agent.wm_config.h_dim)))

    after = agent.store.group_bytes()
    changed = {n for n in before if before[n] != after[n]}
    assert changed and all(n.startswith("mgr.expl.") for n in changed)


@pytest.mark.slow
def test_novelty_is_higher_on_unseen_states():
    agent = tiny_agent("hierarchical", ensemble_lr=1e-2)
    rng = np.random.default_rng(0)
    size = agent.wm.feat_size
    seen = to_tensor(rng.normal(0.0, 0.3, (32, size)))
    unseen = to_tensor(rng.normal(3.0, 0.3, (32, size)))
    target = np.tile(np.linspace(-1, 1, agent.wm_config.h_dim), (32, 1))

    for _ in range(300):
        train_ensemble(agent, seen, target)

    assert np.mean(exploration_reward(agent.ensemble, unseen).numpy()) > np.mean(exploration_reward(agent.ensemble, seen).numpy())

    pass
