from pathlib import Path
from typing import Any

from pydantic import ConfigDict, field_validator
from pydantic_settings import BaseSettings

from src.schemas.config import SimConfig

SOLVERS = ("CLARABEL", "SCS")
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


class Settings(BaseSettings):
    SIM_WORKERS: int = 1
    SOLVER: str = "CLARABEL"
    SOLVER_FALLBACK: str | None = "SCS"
    SOLVER_TOL: float = 1e-7
    SOLVER_MAX_ITERS: int = 200
    SOLVER_FEAS_TOL: float = 1e-6
    RESULTS_DB: str = "results.sqlite"
    LOG_LEVEL: str = "INFO"
    PROGRAM_DUMP_DIR: str | None = None

    @field_validator("SOLVER", "SOLVER_FALLBACK")
    @classmethod
    def validate_solver(cls, v: Any):
        if v is not None and v.upper() not in SOLVERS:
            raise ValueError(f"solver must be one of {', '.join(SOLVERS)}")
        return v.upper() if v is not None else v

    @field_validator("SIM_WORKERS")
    @classmethod
    def validate_workers(cls, v: Any):
        if v < 1:
            raise ValueError("SIM_WORKERS must be at least 1")
        return v

    @field_validator("LOG_LEVEL")
    @classmethod
    def validate_log_level(cls, v: Any):
        if v.upper() not in LOG_LEVELS:
            raise ValueError(f"unknown log level {v}")
        return v.upper()

    model_config = ConfigDict(extra='ignore', env_file=".env", env_file_encoding="utf-8")  # noqa


config = Settings()


def load_sim_config(path: str | Path | None = None, **overrides) -> SimConfig:
    """
    Reads a JSON simulation config and applies command-line overrides.

    :param path: str | Path | None: JSON file with one key per SimConfig field; defaults when None.
    :param overrides: Any: Field values replacing the file values; None entries are ignored.
    :return: SimConfig: The validated configuration.
    """
    base = SimConfig() if path is None else SimConfig.model_validate_json(Path(path).read_text(encoding="utf-8"))
    updates = {key: value for key, value in overrides.items() if value is not None}
    if not updates:
        return base
    return SimConfig.model_validate(base.model_dump() | updates)
