from pathlib import Path
import logging
import click

from service.App import *
from service.evaluator import *

"""
Goal horizon ablation: train one hierarchical agent per k (plus a flat baseline) on the locomotion band
and evaluate each over a speed sweep. Writes ablation.csv with one row per agent, k and target speed.
"""


@click.command()
@click.option('--config_file', '--config', '-c', 'config_file', type=click.Path(), default='', help='Configuration file name')
@click.option('--k', 'ks', default=None, help='Comma separated goal horizons, for example 1,2,4,8,16,32')
@click.option('--out', 'out_dir', type=click.Path(), default=None, help='Output folder')
def main(config_file, ks, out_dir):
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    with cli_errors():
        load_config(config_file)
        config = App.config
        section = config["ablation"]
        if ks is not None:
            try:
                section["k"] = [int(k) for k in ks.split(",") if k]
            except ValueError:
                raise ConfigError(f"Goal horizons must be integers: {ks}")

        run = RunConfig.from_config(config)
        sweep = SpeedSweep(
            grid=parse_grid(section["grid"]), episodes=int(section["episodes"]),
            body=run.task.body, pixels=run.task.pixels,
        )
        out_dir = Path(out_dir or Path(config["out_dir"]) / "ablation")
        print(f"Horizon ablation over k={section['k']} with {len(sweep.grid or default_grid(run.task.body))} target speeds. Output: {out_dir}")

        result = run_horizon_ablation(run, section["k"], sweep, out_dir, include_flat=section.get("include_flat", True))

        summary = result.groupby(["agent", "k"], dropna=False)[["mean_return", "mean_abs_speed_error"]].mean()
        print(summary.to_string())


if __name__ == '__main__':
    main()
