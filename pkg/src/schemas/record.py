from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, computed_field


class FeasibilityReport(BaseModel):
    power_ok: bool
    power_violation: float = Field(ge=0.0)
    qos_ok: bool
    qos_violation: float = Field(ge=0.0)
    private_rate_ok: bool
    private_rate_violation: float = Field(ge=0.0)
    common_rate_ok: bool
    common_rate_violation: float = Field(ge=0.0)
    fronthaul_ok: bool
    fronthaul_violation: float = Field(ge=0.0)
    unit_modulus_ok: bool
    unit_modulus_violation: float = Field(ge=0.0)
    cmd_sets_ok: bool = True

    @computed_field
    @property
    def overall_feasible(self) -> bool:
        return all((self.power_ok, self.qos_ok, self.private_rate_ok, self.common_rate_ok, self.fronthaul_ok,
                    self.unit_modulus_ok, self.cmd_sets_ok))

    def failed_checks(self) -> list[str]:
        names = ("power", "qos", "private_rate", "common_rate", "fronthaul", "unit_modulus", "cmd_sets")
        return [name for name in names if not getattr(self, f"{name}_ok")]


class TraceRow(BaseModel):
    iter: int
    eta: float
    EE: float
    objective: float
    R_t: float
    P_total: float
    LoSC: int
    phase_status: str | None = None
    cmd_accepted: int = 0


class ComplexArray(BaseModel):
    re: list
    im: list

    @classmethod
    def from_array(cls, array) -> "ComplexArray":
        array = np.asarray(array, dtype=complex)
        return cls(re=array.real.tolist(), im=array.imag.tolist())

    def to_array(self) -> np.ndarray:
        return np.asarray(self.re, dtype=float) + 1j * np.asarray(self.im, dtype=float)


class RecordSchema(BaseModel):
    """File form of a SolutionRecord, including everything needed to re-audit it offline."""
    scheme: str
    C_total: float
    status: str
    config: dict[str, Any]
    C: list[float]
    regime: str
    h_direct: ComplexArray
    H_bs_irs: ComplexArray
    h_irs_user: ComplexArray
    noise_power: float
    w: ComplexArray
    v: ComplexArray
    phi: list[list[int]]
    Rp: list[float]
    Rc: list[float]
    EE: float
    load: list[float]
    LoSC: int
    common_proportion: float
    trace: list[TraceRow] = []
    feasibility: FeasibilityReport | None = None

    model_config = ConfigDict(from_attributes=True, ser_json_inf_nan="constants")
