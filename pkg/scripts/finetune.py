from pathlib import Path
from dataclasses import replace
import logging
import click

from service.App import *
from service.trainer import *

"""
Fine-tune a pre-trained agent (or train one from scratch) on a navigation task with some components frozen,
and report the first env step where the smoothed evaluation return reaches the threshold.
"""


@click.command()
@click.option('--config_file', '--config', '-c', 'config_file', type=click.Path(), default='', help='Configuration file name')
@click.option('--ckpt', type=click.Path(), default=None, help='Checkpoint of the pre-trained agent')
@click.option('--regime', default=None, help='flat-scratch, flat-finetune, hier-scratch, wm-m, wm-m-v, wm-m-v-w')
@click.option('--freeze', default=None, help='Comma separated frozen components (subset of wm,mgr,vae,wrk). Overrides the regime mask')
@click.option('--task', default=None, help='Arena of the fine-tuning task')
@click.option('--threshold', default=None, help='Return threshold or auto')
@click.option('--max_steps', type=int, default=None, help='Env steps of fine-tuning')
@click.option('--out', 'out_dir', type=click.Path(), default=None, help='Output folder')
def main(config_file, ckpt, regime, freeze, task, threshold, max_steps, out_dir):
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    with cli_errors():
        load_config(config_file)
        config = App.config
        section = config["finetune"]
        for key, value in (("regime", regime), ("task", task), ("threshold", threshold), ("max_steps", max_steps)):
            if value is not None:
                section[key] = value

        run = RunConfig.from_config(config)
        reg = get_regime(section["regime"])
        mask = FreezeMask.from_names(freeze.split(",")) if freeze is not None else reg.mask()
        spec = TaskSpec(
            family=Family.NAVIGATION, arena=section["task"], reward_variant=section["reward_variant"],
            episode_length=section["episode_length"], pixels=run.task.pixels,
        )
        if reg.from_checkpoint and not ckpt:
            raise ConfigError(f"Regime {reg.name} needs a checkpoint (--ckpt)")
        agent = regime_agent(reg, ckpt, run, spec)
        out_dir = Path(out_dir or Path(config["out_dir"]) / f"finetune_{reg.name}_{spec.arena.value}")

        print(f"Fine-tuning regime {reg.name} on {spec.arena.value} for {section['max_steps']} env steps. Frozen: {mask.frozen_prefixes(agent.kind)}")

        train = replace(run.train, total_steps=int(section["max_steps"]), eval_every=int(section["eval_every"]))
        result = run_finetune(
            ckpt, mask, spec, section["threshold"], int(section["max_steps"]), int(section["eval_every"]),
            train=train, out_dir=out_dir, seed=run.seed, agent=agent, slack=section.get("slack", 0.2),
            stop_at_threshold=section.get("stop_at_threshold", False),
        )

        print(f"Threshold {result['threshold']:.3f} reached at env step {result['steps_to_threshold']}. Results in {out_dir.resolve()}")


if __name__ == '__main__':
    main()
