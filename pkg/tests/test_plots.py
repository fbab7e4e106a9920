import pytest
import numpy as np
import pandas as pd

from common.errors import *
from common.arenas import get_arena
from common.scripted import ShortestPathAgent
from inputs.collector import collect_episode
from outputs.reports import write_csv, write_metrics, read_csv_checked
from outputs.plots import *

from conftest import navigation_spec


def metrics_file(path, returns):
    rows = [{"env_step": 100 * (i + 1), "status": "ok", "mean_return": r} for i, r in enumerate(returns)]
    return write_metrics(rows, path)


def test_identical_input_gives_identical_svg(tmp_path):
    a_csv = metrics_file(tmp_path / "a.csv", [1.0, 2.0, 2.5])
    b_csv = metrics_file(tmp_path / "b.csv", [0.5, 1.5, 3.0])

    first = emit_plots([a_csv, b_csv], tmp_path / "one.svg", title="Returns", threshold=2.0)
    second = emit_plots([a_csv, b_csv], tmp_path / "two.svg", title="Returns", threshold=2.0)

    data = first.read_bytes()
    assert data == second.read_bytes()
    assert data.lstrip().startswith(b"<?xml")
    assert b"Returns" in data


def test_two_points_make_one_line(tmp_path):
    csv = metrics_file(tmp_path / "m.csv", [1.0, 3.0])
    series = load_series([csv], "env_step", "mean_return")
    assert len(series) == 1
    label, xs, ys = series[0]
    assert label == "m"
    assert list(xs) == [100, 200]

    fig = generate_plot(series)
    lines = fig.axes[0].get_lines()
    assert len(lines) == 1
    assert len(lines[0].get_xdata()) == 2
    save_svg(fig, tmp_path / "m.svg")


def test_group_column_splits_series(tmp_path):
    df = pd.DataFrame({
        "agent": ["hierarchical"] * 2 + ["flat"] * 2,
        "v_target": [1.0, 2.0, 1.0, 2.0],
        "mean_return": [1.0, 2.0, 0.5, 0.25],
    })
    csv = write_csv(df, tmp_path / "ablation.csv", list(df.columns))

    series = load_series([csv], "v_target", "mean_return", labels=["run"], group="agent")

    assert [s[0] for s in series] == ["run agent=flat", "run agent=hierarchical"]

    with pytest.raises(ParseError):
        load_series([csv], "v_target", "mean_return", group="k")


def test_empty_series():
    with pytest.raises(ConfigError):
        generate_plot([])
    with pytest.raises(ConfigError):
        emit_plots([], "unused.svg")


def test_label_count(tmp_path):
    csv = metrics_file(tmp_path / "m.csv", [1.0])
    with pytest.raises(ConfigError):
        load_series([csv], "env_step", "mean_return", labels=["a", "b"])


def test_malformed_csv_reports_line(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("env_step,mean_return\n100,1.0\n200,oops\n")
    with pytest.raises(ParseError) as e:
        read_csv_checked(bad, required=["env_step", "mean_return"])
    assert e.value.line == 3

    ragged = tmp_path / "ragged.csv"
    ragged.write_text("env_step,mean_return\n100,1.0\n200,2.0,5\n")
    with pytest.raises(ParseError) as e:
        emit_plots([ragged], tmp_path / "r.svg")
    assert e.value.line == 3

    missing = tmp_path / "missing.csv"
    missing.write_text("step,value\n1,2\n")
    with pytest.raises(ParseError) as e:
        emit_plots([missing], tmp_path / "x.svg")
    assert e.value.line == 1

    with pytest.raises(ConfigError):
        emit_plots([tmp_path / "nothing.csv"], tmp_path / "x.svg")


def test_trajectory_plot(tmp_path):
    spec = navigation_spec("lmaze", episode_length=50)
    episodes = [collect_episode(ShortestPathAgent(), spec, seed=s) for s in range(2)]

    path = plot_trajectories(episodes, get_arena("lmaze"), tmp_path / "paths.svg", title="L-maze")

    assert path.is_file()
    image = arena_image(get_arena("lmaze"))
    assert image.shape == (8, 9, 3)
    assert np.all(image[1, 1] == 1.0)

    with pytest.raises(ConfigError):
        plot_trajectories([], get_arena("lmaze"), tmp_path / "none.svg")

    pass
