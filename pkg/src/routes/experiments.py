import logging
from pathlib import Path

import click
from pydantic import ValidationError

from src.conf.config import config as settings, load_sim_config
from src.schemas.sweep import SweepSpec
from src.services.exceptions import SimulationError
from src.services.harness import FIGURES, FLOAT_FORMAT, plot_data, run_montecarlo

logger = logging.getLogger(__name__)


@click.command("sweep")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="JSON file with one key per SimConfig field; replaces the config embedded in the sweep file.")
@click.option("--spec", "spec_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="JSON sweep spec: C_values, schemes, drops, include_broadcast.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True, help="Output directory.")
@click.option("--workers", type=click.IntRange(min=1), default=None, help="Process count, SIM_WORKERS by default.")
def sweep(config_path, spec_path, out_dir: str, workers: int | None):
    """
    Runs a Monte Carlo fronthaul sweep and writes drops.csv, metrics.csv and the results store.

    :param config_path: str | None: The simulation config file.
    :param spec_path: str | None: The sweep spec file; the default sweep when None.
    :param out_dir: str: Directory receiving the outputs.
    :param workers: int | None: Process count.
    """
    try:
        spec = SweepSpec() if spec_path is None else SweepSpec.model_validate_json(
            Path(spec_path).read_text(encoding="utf-8"))
        if config_path is not None:
            spec = SweepSpec.model_validate(spec.model_dump() | {"config": load_sim_config(config_path).model_dump()})
        metrics = run_montecarlo(spec, out_dir, workers or settings.SIM_WORKERS)
    except (SimulationError, ValidationError) as err:
        logger.error("sweep failed: %s", err)
        raise click.ClickException(str(err))
    incomplete = sum(not row.complete for row in metrics)
    click.echo(f"{len(metrics)} metric rows written to {out_dir}" +
               (f" ({incomplete} incomplete)" if incomplete else ""))


@click.command("plot-data")
@click.option("--sweep", "sweep_dir", type=click.Path(exists=True, file_okay=False), required=True,
              help="Directory written by the sweep command.")
@click.option("--figure", type=click.Choice([str(f) for f in FIGURES]), required=True, help="Figure number.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None, help="CSV file, stdout when omitted.")
def plot_data_command(sweep_dir: str, figure: str, out_path: str | None):
    """
    Emits the long-format CSV behind one figure of a sweep.

    :param sweep_dir: str: The sweep directory.
    :param figure: str: One of 2, 3, 4, 5.
    :param out_path: str | None: Target file.
    """
    try:
        frame = plot_data(sweep_dir, int(figure))
    except FileNotFoundError as err:
        raise click.ClickException(str(err))
    if out_path is None:
        click.echo(frame.to_csv(index=False, float_format=FLOAT_FORMAT), nl=False)
    else:
        frame.to_csv(out_path, index=False, float_format=FLOAT_FORMAT)
        logger.info("figure %s data written to %s", figure, out_path)
