"""
Network geometry, channel realizations and fronthaul capacity allocation.

Channels are stored per link and exposed through the aggregate views used by
the optimization modules: ``h_agg[k]`` stacks the direct channels of user ``k``
over the BSs, ``H_bi`` stacks the BS-to-IRS channels, and ``H_composite[k]``
is ``H_bi @ diag(h_irs_user[k])``.
"""
import enum
import hashlib
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from src.schemas.config import SimConfig
from src.services.exceptions import InfeasibleAllocationError

logger = logging.getLogger(__name__)

UNIT_MODULUS_TOL = 1e-9


class Regime(str, enum.Enum):
    partially_connected = "partially_connected"
    fully_connected = "fully_connected"
    unlimited = "unlimited"


@dataclass(frozen=True)
class Topology:
    bs_positions: np.ndarray
    user_positions: np.ndarray
    irs_position: np.ndarray = field(default_factory=lambda: np.zeros(2))


@dataclass(frozen=True)
class ChannelSet:
    h_direct: np.ndarray      # (N, K, L)
    H_bs_irs: np.ndarray      # (N, L, R)
    h_irs_user: np.ndarray    # (K, R)
    noise_power: float

    @property
    def N(self) -> int:
        return self.h_direct.shape[0]

    @property
    def K(self) -> int:
        return self.h_direct.shape[1]

    @property
    def L(self) -> int:
        return self.h_direct.shape[2]

    @property
    def R(self) -> int:
        return self.h_irs_user.shape[1]

    @property
    def h_agg(self) -> np.ndarray:
        return np.transpose(self.h_direct, (1, 0, 2)).reshape(self.K, self.N * self.L)

    @property
    def H_bi(self) -> np.ndarray:
        return self.H_bs_irs.reshape(self.N * self.L, self.R)

    @property
    def H_composite(self) -> np.ndarray:
        return self.H_bi[None, :, :] * self.h_irs_user[:, None, :]

    def without_irs(self) -> "ChannelSet":
        return ChannelSet(self.h_direct, np.zeros_like(self.H_bs_irs), np.zeros_like(self.h_irs_user),
                          self.noise_power)

    def normalized(self) -> "ChannelSet":
        """Scales every channel by 1/sigma so that the noise power becomes one; SINRs are unchanged."""
        scale = 1.0 / math.sqrt(self.noise_power)
        return ChannelSet(self.h_direct * scale, self.H_bs_irs * scale, self.h_irs_user, 1.0)

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        for array in (self.h_direct, self.H_bs_irs, self.h_irs_user):
            digest.update(np.ascontiguousarray(array).tobytes())
        digest.update(np.float64(self.noise_power).tobytes())
        return digest.hexdigest()


@dataclass(frozen=True)
class PhaseShiftVector:
    v: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.v, dtype=complex)
        if v.ndim != 1:
            raise ValueError("phase-shift vector must be one-dimensional")
        if np.any(np.abs(np.abs(v) - 1.0) > UNIT_MODULUS_TOL):
            raise ValueError("phase shifts must have unit modulus")
        object.__setattr__(self, "v", v)

    @classmethod
    def ones(cls, R: int) -> "PhaseShiftVector":
        return cls(np.ones(R, dtype=complex))

    @classmethod
    def from_angles(cls, theta) -> "PhaseShiftVector":
        return cls(np.exp(1j * np.asarray(theta, dtype=float)))

    @classmethod
    def project(cls, x) -> "PhaseShiftVector":
        """Maps any complex vector to the unit circle element-wise; zero entries map to phase 0."""
        return cls(np.exp(1j * np.angle(np.asarray(x, dtype=complex))))

    @property
    def R(self) -> int:
        return self.v.shape[0]


@dataclass(frozen=True)
class FronthaulAllocation:
    C: np.ndarray
    regime: Regime

    @property
    def C_total(self) -> float:
        return float(np.sum(self.C))

    @property
    def unlimited(self) -> bool:
        return self.regime is Regime.unlimited


def path_loss_db(distance_m) -> np.ndarray:
    d_km = np.maximum(np.asarray(distance_m, dtype=float), 1.0) / 1000.0
    return 148.1 + 37.6 * np.log10(d_km)


def rayleigh(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def generate_topology(config: SimConfig, rng: np.random.Generator) -> Topology:
    """
    Draws BS and user positions uniformly in the square operation area.

    :param config: SimConfig: Network dimensions and area half width.
    :param rng: np.random.Generator: The stream owned by the current drop.
    :return: Topology: Positions in meters, IRS at the area center.
    """
    a = config.area_half_width
    bs_positions = rng.uniform(-a, a, size=(config.N, 2))
    user_positions = rng.uniform(-a, a, size=(config.K, 2))
    return Topology(bs_positions, user_positions, np.zeros(2))


def _link_amplitude(distance, config: SimConfig, rng: np.random.Generator) -> np.ndarray:
    distance = np.asarray(distance, dtype=float)
    shadowing = rng.normal(0.0, config.shadowing_sigma, size=distance.shape) if config.shadowing_sigma > 0 \
        else np.zeros(distance.shape)
    return 10.0 ** (-(path_loss_db(distance) + shadowing) / 20.0)


def generate_channels(topology: Topology, config: SimConfig, rng: np.random.Generator) -> ChannelSet:
    """
    Draws Rayleigh-faded channels with path loss and per-link log-normal shadowing.

    Draw order is fixed (direct, BS-IRS, IRS-user) so the result is a pure function of the topology,
    the config and the stream state.

    :param topology: Topology: Node positions.
    :param config: SimConfig: Antenna counts, IRS size, shadowing and noise settings.
    :param rng: np.random.Generator: The stream owned by the current drop.
    :return: ChannelSet: Channels in amplitude units, noise power in Watts.
    """
    N, K, L, R = config.N, config.K, config.L, config.R
    bs, users, irs = topology.bs_positions, topology.user_positions, topology.irs_position

    d_bu = np.linalg.norm(bs[:, None, :] - users[None, :, :], axis=-1)
    h_direct = rayleigh(rng, (N, K, L)) * _link_amplitude(d_bu, config, rng)[:, :, None]

    d_bi = np.linalg.norm(bs - irs[None, :], axis=-1)
    H_bs_irs = rayleigh(rng, (N, L, R)) * _link_amplitude(d_bi, config, rng)[:, None, None]

    d_iu = np.linalg.norm(users - irs[None, :], axis=-1)
    h_irs_user = rayleigh(rng, (K, R)) * _link_amplitude(d_iu, config, rng)[:, None]

    return ChannelSet(h_direct, H_bs_irs, h_irs_user, config.noise_power_watts)


def allocate_fronthaul(C_total: float, config: SimConfig) -> FronthaulAllocation:
    """
    Splits the total fronthaul capacity over the BSs.

    Below the transition point N*K*r_min the capacity is handed out in user slots of r_min, the remainder
    slots going to the lowest-index BSs; at or above it every BS gets C_total/N. An infinite total gives the
    unlimited (broadcast-channel) regime.

    :param C_total: float: Total fronthaul capacity in Mbps.
    :param config: SimConfig: Supplies N, K and r_min.
    :return: FronthaulAllocation: Per-BS capacities and the regime.
    """
    N, r_min = config.N, config.r_min
    if math.isinf(C_total) and C_total > 0:
        return FronthaulAllocation(np.full(N, math.inf), Regime.unlimited)
    if C_total < N * r_min - 1e-9:
        raise InfeasibleAllocationError(
            f"total fronthaul {C_total} Mbps cannot give every one of {N} BSs a {r_min} Mbps user")
    if C_total < config.transition_point - 1e-9:
        slots = int(math.floor(C_total / r_min + 1e-9))
        per_bs = np.full(N, slots // N)
        per_bs[: slots % N] += 1
        return FronthaulAllocation(per_bs * r_min, Regime.partially_connected)
    return FronthaulAllocation(np.full(N, C_total / N), Regime.fully_connected)


def effective_channel(channels: ChannelSet, v: PhaseShiftVector, k: int) -> np.ndarray:
    return channels.h_agg[k] + channels.H_composite[k] @ v.v


def effective_channels(channels: ChannelSet, v: PhaseShiftVector) -> np.ndarray:
    """All users' effective channels as a (K, N*L) array."""
    return channels.h_agg + np.einsum("kmr,r->km", channels.H_composite, v.v)
