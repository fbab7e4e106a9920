import click

from service.App import *
from outputs.plots import emit_plots

"""
Render metric CSVs (training curves, speed sweeps, fine-tuning curves, horizon ablations) as one SVG line chart.
"""


@click.command()
@click.option('--csv', 'csv_files', multiple=True, type=click.Path(), help='CSV file (repeat for several series)')
@click.option('--out', 'out_file', type=click.Path(), required=True, help='Output SVG file')
@click.option('--x', 'x_column', default='env_step', help='Column of the x axis shared by all CSVs')
@click.option('--y', 'y_column', default='mean_return', help='Column of the y axis')
@click.option('--group', default=None, help='Column splitting one CSV into several series, for example agent or k')
@click.option('--label', 'labels', multiple=True, help='Legend label of each CSV')
@click.option('--title', default=None, help='Chart title')
def main(csv_files, out_file, x_column, y_column, group, labels, title):
    with cli_errors():
        path = emit_plots(list(csv_files), out_file, x=x_column, y=y_column, labels=list(labels) or None, group=group, title=title)
        print(f"Plot written to {path}")


if __name__ == '__main__':
    main()
