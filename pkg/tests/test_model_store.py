import json

import pytest
import numpy as np

from common.errors import *
from common.types import *
from common.model_store import *

from conftest import tiny_agent


def test_agent_round_trip(tmp_path):
    agent = tiny_agent("hierarchical", seed=3, goal_horizon=4)
    path = save_agent(agent, tmp_path / "agent.hgcp", {"family": "locomotion", "pixels": 4})

    sidecar = read_sidecar(path)
    assert sidecar["family"] == "locomotion"
    assert sidecar["agent"]["goal_horizon"] == 4

    loaded = load_agent(path)
    assert loaded.kind == AgentKind.HIERARCHICAL
    assert loaded.config.goal_horizon == 4
    assert loaded.store.group_bytes() == agent.store.group_bytes()


def test_trainable_flags_survive(tmp_path):
    agent = tiny_agent("hierarchical")
    agent.store.set_trainable("wrk.", False)
    path = save_agent(agent, tmp_path / "agent.hgcp")

    loaded = load_agent(path)
    assert not any(loaded.store.trainable[n] for n in loaded.store.names("wrk."))
    assert all(loaded.store.trainable[n] for n in loaded.store.names("wm."))


def test_kind_mismatch(tmp_path):
    path = save_agent(tiny_agent("flat"), tmp_path / "flat.hgcp")
    with pytest.raises(ConfigError):
        load_agent(path, kind=AgentKind.HIERARCHICAL)


def test_missing_and_broken_files(tmp_path):
    with pytest.raises(ConfigError):
        load_agent(tmp_path / "nothing.hgcp")

    path = save_agent(tiny_agent("flat"), tmp_path / "agent.hgcp")
    sidecar_path(path).write_text("{\n  \"agent\": \n}")
    with pytest.raises(ParseError) as e:
        read_sidecar(path)
    assert e.value.line == 3

    sidecar_path(path).write_text(json.dumps({"agent": {"kind": "flat"}}))
    with pytest.raises(ConfigError):
        load_agent(path)

    pass
