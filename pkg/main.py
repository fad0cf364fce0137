import logging

import click

from src.conf.config import config
from src.routes import experiments, simulate


@click.group()
@click.option("--log-level", type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
              default=None, help="Overrides LOG_LEVEL.")
def cli(log_level: str | None):
    """Energy-efficiency simulator for IRS-assisted rate-splitting C-RAN."""
    logging.basicConfig(level=(log_level or config.LOG_LEVEL).upper(),
                        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s")


cli.add_command(simulate.run)
cli.add_command(simulate.validate)
cli.add_command(experiments.sweep)
cli.add_command(experiments.plot_data_command)


if __name__ == "__main__":
    cli()
