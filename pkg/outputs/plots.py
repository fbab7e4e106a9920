from pathlib import Path

import numpy as np
import pandas as pd

from common.errors import *
from common.arenas import Arena, PALETTE, FREE
from outputs.reports import read_csv_checked

import logging
log = logging.getLogger('plots')

logging.getLogger('PIL').setLevel(logging.WARNING)
logging.getLogger('matplotlib').setLevel(logging.WARNING)

SVG_HASH_SALT = "hierarchy-plots"


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    from matplotlib import pyplot as plt
    matplotlib.rcParams["svg.hashsalt"] = SVG_HASH_SALT
    matplotlib.rcParams["svg.fonttype"] = "none"  # Text as text, not as glyph paths
    return plt


def load_series(csv_paths, x, y, labels=None, group=None) -> list:
    """
    List of (label, x values, y values). With group, each distinct value of that column
    in a file becomes its own series.
    """
    labels = list(labels) if labels else [Path(p).stem for p in csv_paths]
    if len(labels) != len(csv_paths):
        raise ConfigError(f"{len(labels)} labels for {len(csv_paths)} CSV files")

    series = []
    for path, label in zip(csv_paths, labels):
        df = read_csv_checked(path, required=[x, y])
        if group is None:
            series.append((label, df[x].to_numpy(), df[y].to_numpy()))
            continue
        if group not in df.columns:
            raise ParseError(f"CSV file {path} lacks the group column '{group}'", line=1)
        for value, part in df.groupby(group, sort=True, dropna=False):
            series.append((f"{label} {group}={value}", part[x].to_numpy(), part[y].to_numpy()))
    return series


def generate_plot(series, title=None, xlabel=None, ylabel=None, threshold=None):
    """Line chart with one line per (label, x, y) series. Returns the figure."""
    if not series:
        raise ConfigError("Nothing to plot: the series list is empty")
    plt = _pyplot()

    fig, ax = plt.subplots(figsize=(8, 5))
    for label, xs, ys in series:
        ax.plot(xs, ys, lw=1.5, marker="o", markersize=3, label=label)

    if threshold is not None:
        ax.axhline(threshold, lw=1.0, ls="--", color="grey", label="threshold")

    if title:
        ax.set_title(title)
    ax.set_xlabel(xlabel or "")
    ax.set_ylabel(ylabel or "")
    ax.grid(True, lw=0.3)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    return fig


def save_svg(fig, out_path) -> Path:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    _pyplot().close(fig)
    return out_path


def emit_plots(csv_paths, out_path, x="env_step", y="mean_return", labels=None, group=None, title=None, threshold=None) -> Path:
    """Render the y column of every CSV over the shared x column into one SVG. Identical input gives identical bytes."""
    if not csv_paths:
        raise ConfigError("No CSV files to plot")
    series = load_series(csv_paths, x, y, labels=labels, group=group)
    fig = generate_plot(series, title=title, xlabel=x, ylabel=y, threshold=threshold)
    path = save_svg(fig, out_path)
    log.info(f"Plot with {len(series)} series written to {path}")
    return path


def arena_image(arena: Arena) -> np.ndarray:
    """RGB image of the map: wall colors from the palette and white free space."""
    image = np.ones(arena.walls.shape + (3,))
    walls = arena.walls != FREE
    image[walls] = PALETTE[arena.walls[walls]]
    return image


def plot_trajectories(episodes, arena: Arena, out_path, title=None) -> Path:
    """Top-down view of the arena with the recorded paths and the targets in effect."""
    if not episodes:
        raise ConfigError("No episodes to plot")
    plt = _pyplot()

    rows, cols = arena.shape
    fig, ax = plt.subplots(figsize=(6, 6 * rows / cols))
    ax.imshow(arena_image(arena), extent=(0, cols, rows, 0), interpolation="nearest")
    for i, ep in enumerate(episodes):
        ax.plot(ep.positions[:, 0], ep.positions[:, 1], lw=1.0, label=f"seed {ep.seed}")
        if ep.targets is not None:
            targets = np.unique(ep.targets, axis=0)
            ax.scatter(targets[:, 0], targets[:, 1], s=25, marker="*", color="green")
    ax.plot(*arena.spawn, marker="s", color="black", markersize=5)
    ax.set_xlim(0, cols)
    ax.set_ylim(rows, 0)
    ax.set_aspect("equal")
    if title:
        ax.set_title(title)
    ax.legend(loc="upper right", fontsize=7)
    fig.tight_layout()
    return save_svg(fig, out_path)
