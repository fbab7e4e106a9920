from pathlib import Path
import logging
import click

from service.App import *
from service.evaluator import *

"""
Zero-shot evaluation of a checkpoint (or a scripted baseline) on a speed sweep or the maze suite.
"""


@click.command()
@click.option('--config_file', '--config', '-c', 'config_file', type=click.Path(), default='', help='Configuration file name')
@click.option('--ckpt', type=click.Path(), default=None, help='Checkpoint file')
@click.option('--protocol', type=click.Choice(['speed', 'maze']), default=None, help='Evaluation protocol')
@click.option('--grid', default=None, help='Target speeds a:b:step for the speed protocol')
@click.option('--arenas', default=None, help='Comma separated arenas for the maze protocol')
@click.option('--episodes', type=int, default=None, help='Episodes per grid point or arena')
@click.option('--baseline', default=None, help='Scripted agent instead of a checkpoint: zero, full_throttle, random, speed_oracle, shortest_path')
@click.option('--out', 'out_file', type=click.Path(), default=None, help='Report CSV file')
@click.option('--trajectories', 'trajectories_dir', type=click.Path(), default=None, help='Folder for one top-down SVG per arena (maze protocol)')
def main(config_file, ckpt, protocol, grid, arenas, episodes, baseline, out_file, trajectories_dir):
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    with cli_errors():
        load_config(config_file)
        config = App.config
        section = config["eval"]
        if grid is not None:
            section["grid"] = grid
        if arenas is not None:
            section["arenas"] = [a for a in arenas.split(",") if a]
        if episodes is not None:
            section["episodes"] = episodes

        proto = protocol_from_config(config, protocol)
        if trajectories_dir and not isinstance(proto, MazeSuite):
            raise ConfigError("--trajectories needs the maze protocol")
        if baseline:
            report, recorded = run_baseline(baseline, proto, n_jobs=section.get("n_jobs", 1), progress=True)
            source = baseline
        else:
            if not ckpt:
                raise ConfigError("Either --ckpt or --baseline is required")
            report, recorded = run_zero_shot_eval(ckpt, proto, n_jobs=section.get("n_jobs", 1))
            source = ckpt

        print(f"Report for {source}:")
        print(report.to_string(index=False))

        if out_file:
            columns = SPEED_COLUMNS if isinstance(proto, SpeedSweep) else MAZE_COLUMNS
            path = write_csv(report, out_file, columns)
            print(f"Report written to {Path(path).resolve()}")

        if trajectories_dir:
            for path in plot_maze_trajectories(recorded, trajectories_dir):
                print(f"Trajectories written to {Path(path).resolve()}")


if __name__ == '__main__':
    main()
