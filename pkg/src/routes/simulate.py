import logging
from pathlib import Path

import click
from pydantic import ValidationError

from src.conf.config import load_sim_config
from src.schemas.record import RecordSchema
from src.schemas.scheme import SchemeSpec
from src.services.exceptions import SimulationError
from src.services.harness import run_single
from src.services.orchestrate import SolutionRecord, audit_record

logger = logging.getLogger(__name__)


def _scheme(ctx, param, value):
    try:
        return SchemeSpec.from_tag(value)
    except ValueError as err:
        raise click.BadParameter(str(err))


@click.command("run")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="JSON file with one key per SimConfig field.")
@click.option("--scheme", required=True, callback=_scheme, help="Scheme tag, e.g. d-RS+IRS or s-TIN.")
@click.option("--fronthaul", "C_total", type=float, required=True, help="Total fronthaul capacity in Mbps, or inf.")
@click.option("--seed", type=click.IntRange(min=0), default=None, help="Base seed overriding the config file.")
@click.option("--drop", type=click.IntRange(min=0), default=0, show_default=True, help="Drop index of the seed.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None, help="Write the record as JSON.")
def run(config_path, scheme: SchemeSpec, C_total: float, seed: int | None, drop: int, out_path: str | None):
    """
    Optimizes one scheme on one drop and prints its energy efficiency.

    :param config_path: str | None: The simulation config file.
    :param scheme: SchemeSpec: The scheme parsed from its tag.
    :param C_total: float: The total fronthaul capacity in Mbps.
    :param seed: int | None: Base seed override.
    :param drop: int: Drop index combined with the seed.
    :param out_path: str | None: Record file to write.
    """
    try:
        config = load_sim_config(config_path, seed=seed)
        record = run_single(config, scheme, C_total, drop=drop)
    except (SimulationError, ValidationError) as err:
        logger.error("run failed: %s", err)
        raise click.ClickException(str(err))

    report = record.feasibility
    click.echo(f"scheme={record.scheme.tag} C_total={record.C_total:g} status={record.status}")
    click.echo(f"EE={record.EE:.6g} Mbit/J R_t={record.rates.total:.6g} Mbps P_total={record.powers.total:.6g} W")
    click.echo(f"LoSC={record.LoSC} common_proportion={record.common_proportion:.4f}")
    click.echo(f"feasible={report.overall_feasible}" +
               ("" if report.overall_feasible else f" failed={','.join(report.failed_checks())}"))
    if out_path is not None:
        Path(out_path).write_text(record.to_schema().model_dump_json(indent=2), encoding="utf-8")
        logger.info("record written to %s", out_path)


@click.command("validate")
@click.option("--record", "record_path", type=click.Path(exists=True, dir_okay=False), required=True,
              help="Record JSON written by run --out.")
def validate(record_path: str):
    """
    Re-audits a stored record against the exact constraints; exits with status 1 when infeasible.

    :param record_path: str: The record file.
    """
    try:
        body = RecordSchema.model_validate_json(Path(record_path).read_text(encoding="utf-8"))
        record = SolutionRecord.from_schema(body)
    except (SimulationError, ValidationError, ValueError) as err:
        logger.error("cannot read record %s: %s", record_path, err)
        raise click.ClickException(str(err))

    report = audit_record(record)
    for name, value in report.model_dump().items():
        if name.endswith("_violation"):
            click.echo(f"{name}={value:.3e}")
    if not report.overall_feasible:
        raise click.ClickException(f"record is infeasible: {', '.join(report.failed_checks())}")
    click.echo("record is feasible")
