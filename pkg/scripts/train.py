from pathlib import Path
import logging
import click

from service.App import *
from service.trainer import run_training

"""
Train a hierarchical or flat agent on the task distribution of the configuration.
The run folder receives the manifest, the metrics CSV and the checkpoints.
"""


@click.command()
@click.option('--config_file', '--config', '-c', 'config_file', type=click.Path(), default='', help='Configuration file name')
@click.option('--seed', type=int, default=None, help='Run seed (overrides the configuration)')
@click.option('--out', 'out_dir', type=click.Path(), default=None, help='Run folder (overrides the configuration)')
def main(config_file, seed, out_dir):
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    with cli_errors():
        load_config(config_file)
        config = App.config
        if seed is not None:
            config["seed"] = seed
        if out_dir is not None:
            config["out_dir"] = out_dir

        run = RunConfig.from_config(config)
        print(f"Training {run.agent.kind.value} agent on {run.task.family.value} for {run.train.total_steps} env steps. Output: {run.out_dir}")

        run_dir = run_training(run)

        print(f"Finished training. Results in {Path(run_dir).resolve()}")


if __name__ == '__main__':
    main()
