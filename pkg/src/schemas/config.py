import math

from pydantic import BaseModel, ConfigDict, Field


def dbm_to_watts(value_dbm: float) -> float:
    return 10.0 ** ((value_dbm - 30.0) / 10.0)


class BeamformParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    rho_step: float = Field(1.0, gt=0.0, le=1.0)
    rho_floor: float = Field(0.125, gt=0.0, le=1.0)
    Z_max: int = Field(30, ge=1)
    dink_tol: float = Field(1e-7, ge=0.0)
    sca_tol: float = Field(1e-5, ge=0.0)
    step_tol: float = Field(1e-6, ge=0.0)
    repair_iters: int = Field(10, ge=1)
    qos_margin: float = Field(0.0, ge=0.0)
    power_margin: float = Field(1e-6, ge=0.0, lt=1.0)
    fronthaul_margin: float = Field(0.0, ge=0.0)
    t_floor: float = Field(1e-6, gt=0.0)


class PhaseParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    eta: float = Field(0.0, ge=0.0, le=1.0)
    rho_penalty: float = Field(0.9, ge=0.0, le=1.0)
    G: int = Field(25, ge=1)
    dc_iters: int = Field(5, ge=1)
    rank_tol: float = Field(1e-4, gt=0.0)


class OuterParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    max_iters: int = Field(12, ge=1)
    tol: float = Field(1e-4, ge=0.0)
    eta_start: float = Field(0.0, ge=0.0, le=1.0)
    eta_step: float = Field(0.25, gt=0.0, le=1.0)
    common_init_eps: float = Field(0.01, ge=0.0)
    static_layers: int = Field(2, ge=1)


class SimConfig(BaseModel):
    """
    Network, channel and algorithm parameters of one simulation.

    Power figures are given in dBm and converted by the ``*_watts`` properties;
    rates are in Mbps and the bandwidth in Hz.
    """
    model_config = ConfigDict(frozen=True, extra='forbid')

    N: int = Field(3, ge=1)
    L: int = Field(2, ge=1)
    K: int = Field(6, ge=1)
    R: int = Field(15, ge=1)
    B: float = Field(10e6, gt=0.0)
    noise_psd: float = -169.0
    area_half_width: float = Field(500.0, gt=0.0)
    r_min: float = Field(3.0, gt=0.0)
    P_max: float = 35.0
    P_circ: float = 37.0
    P_irs_elem: float = 10.0
    P_mbps: float = Field(0.3, ge=0.0)
    shadowing_sigma: float = Field(8.0, ge=0.0)
    seed: int = Field(0, ge=0)
    G: int = Field(25, ge=1)
    rho_penalty: float = Field(0.9, ge=0.0, le=1.0)
    eps_cmd: float = Field(-0.4, ge=-1.0)
    eps_thr: float = Field(-0.5, ge=-1.0)
    D: int = Field(6, ge=1)
    alpha: float | None = Field(None, gt=0.0)
    prune_eps: float = Field(1e-6, gt=0.0)

    beamform: BeamformParams = BeamformParams()
    phase: PhaseParams = PhaseParams()
    outer: OuterParams = OuterParams()

    def phase_params(self, eta: float) -> PhaseParams:
        return self.phase.model_copy(update={"eta": eta, "rho_penalty": self.rho_penalty, "G": self.G})

    @property
    def p_max_watts(self) -> float:
        return dbm_to_watts(self.P_max)

    @property
    def p_circ_watts(self) -> float:
        return dbm_to_watts(self.P_circ)

    @property
    def p_irs_watts(self) -> float:
        return dbm_to_watts(self.P_irs_elem)

    @property
    def noise_power_watts(self) -> float:
        return dbm_to_watts(self.noise_psd + 10.0 * math.log10(self.B))

    @property
    def bandwidth_mhz(self) -> float:
        return self.B / 1e6

    @property
    def alpha_value(self) -> float:
        return self.alpha if self.alpha is not None else 1e-4 * self.p_max_watts

    @property
    def transition_point(self) -> float:
        return self.N * self.K * self.r_min
