import math

from pydantic import BaseModel, ConfigDict, Field, field_validator

from src.schemas.config import SimConfig
from src.schemas.scheme import ALL_SCHEMES, SchemeSpec

DEFAULT_C_VALUES = (18.0, 24.0, 30.0, 36.0, 42.0, 48.0, 54.0, 60.0, 72.0, 90.0)


class SweepSpec(BaseModel):
    """A fronthaul sweep: capacities, schemes and drops, on top of a base SimConfig."""
    C_values: list[float] = Field(default_factory=lambda: list(DEFAULT_C_VALUES), min_length=1)
    schemes: list[str] = Field(default_factory=lambda: [s.tag for s in ALL_SCHEMES], min_length=1)
    drops: int = Field(30, ge=1)
    include_broadcast: bool = False
    redraw_factor: int = Field(5, ge=0)
    config: SimConfig = SimConfig()

    @field_validator("C_values")
    @classmethod
    def validate_c_values(cls, v: list[float]):
        if any(c <= 0 or math.isinf(c) or math.isnan(c) for c in v):
            raise ValueError("fronthaul capacities must be positive and finite, use include_broadcast for inf")
        if list(v) != sorted(v):
            raise ValueError("C_values must be sorted ascending")
        return v

    @field_validator("schemes")
    @classmethod
    def validate_schemes(cls, v: list[str]):
        tags = [SchemeSpec.from_tag(tag).tag for tag in v]
        if len(set(tags)) != len(tags):
            raise ValueError("schemes must not repeat")
        return tags

    @property
    def capacities(self) -> list[float]:
        return list(self.C_values) + ([math.inf] if self.include_broadcast else [])

    @property
    def scheme_specs(self) -> list[SchemeSpec]:
        return [SchemeSpec.from_tag(tag) for tag in self.schemes]

    @property
    def redraw_cap(self) -> int:
        return self.redraw_factor * self.drops


class DropRow(BaseModel):
    scheme: str
    C_total: float
    drop: int
    attempt: int = 0
    redraws: int = 0
    status: str
    ee: float
    rate_total: float
    rate_common: float
    p_tr: float
    p_fh: float
    p_total: float
    losc: int
    outer_iterations: int
    channel_hash: str

    model_config = ConfigDict(from_attributes=True)  # noqa


class MetricsRow(BaseModel):
    scheme: str
    C_total: float
    drops: int = Field(ge=0)
    ee_mean: float
    ee_stderr: float = Field(ge=0.0)
    losc_mean: float
    common_proportion: float = Field(ge=0.0, le=1.0)
    gain_dynamic: float | None = None
    gain_rs: float | None = None
    complete: bool = True
