"""
Exact evaluation of the rate-splitting system model.

Beamformers are stored as a (K, 2, N*L) complex array indexed by user, stream
(``Stream.PRIVATE`` / ``Stream.COMMON``) and stacked antenna; the per-BS block
of BS ``n`` occupies entries ``n*L:(n+1)*L``. Rates are in Mbps, powers in W.
"""
import enum
from dataclasses import dataclass

import numpy as np

from src.schemas.config import SimConfig
from src.schemas.record import FeasibilityReport
from src.services.scenario import ChannelSet, FronthaulAllocation, PhaseShiftVector, effective_channels

RATE_TOL = 1e-6
POWER_TOL = 1e-6
MODULUS_TOL = 1e-9


class Stream(enum.IntEnum):
    PRIVATE = 0
    COMMON = 1


@dataclass(frozen=True)
class BeamformerSet:
    w: np.ndarray
    N: int

    def __post_init__(self):
        w = np.asarray(self.w, dtype=complex)
        if w.ndim != 3 or w.shape[1] != 2 or w.shape[2] % self.N:
            raise ValueError(f"beamformer array of shape {w.shape} does not match N={self.N}")
        if not np.all(np.isfinite(w)):
            raise ValueError("beamformers must be finite")
        object.__setattr__(self, "w", w)

    @classmethod
    def zeros(cls, N: int, L: int, K: int) -> "BeamformerSet":
        return cls(np.zeros((K, 2, N * L), dtype=complex), N)

    @property
    def K(self) -> int:
        return self.w.shape[0]

    @property
    def L(self) -> int:
        return self.w.shape[2] // self.N

    @property
    def private(self) -> np.ndarray:
        return self.w[:, Stream.PRIVATE, :]

    @property
    def common(self) -> np.ndarray:
        return self.w[:, Stream.COMMON, :]

    def block(self, n: int, k: int, o: Stream) -> np.ndarray:
        return self.w[k, o, n * self.L:(n + 1) * self.L]

    def blocks(self) -> np.ndarray:
        """The same data viewed as (N, K, 2, L)."""
        return np.transpose(self.w.reshape(self.K, 2, self.N, self.L), (2, 0, 1, 3))

    def link_powers(self) -> np.ndarray:
        return np.sum(np.abs(self.blocks()) ** 2, axis=-1)

    def per_bs_power(self) -> np.ndarray:
        return self.link_powers().sum(axis=(1, 2))

    def total_power(self) -> float:
        return float(np.sum(np.abs(self.w) ** 2))

    def with_beam(self, k: int, o: Stream, beam) -> "BeamformerSet":
        w = self.w.copy()
        w[k, o] = beam
        return BeamformerSet(w, self.N)

    def pruned(self, prune_eps: float) -> "BeamformerSet":
        keep = self.link_powers() > prune_eps
        mask = np.repeat(np.transpose(keep, (1, 2, 0)), self.L, axis=-1)
        return BeamformerSet(np.where(mask, self.w, 0.0), self.N)

    def fitted_to_budget(self, p_max: float) -> "BeamformerSet":
        """Scales down the beams of every BS whose power exceeds ``p_max``."""
        scale = np.ones(self.N)
        power = self.per_bs_power()
        over = power > p_max
        scale[over] = np.sqrt(p_max / power[over])
        return BeamformerSet(self.w * np.repeat(scale, self.L)[None, None, :], self.N)


@dataclass(frozen=True)
class CmdSets:
    """
    Common-message decoding sets.

    ``phi[k]`` lists, in decoding order, the users whose common messages user ``k``
    decodes; ``M(k)`` is derived from it, so the duality between the two holds by
    construction.
    """
    phi: tuple[tuple[int, ...], ...]
    max_layers: int | None = None

    def __post_init__(self):
        phi = tuple(tuple(int(j) for j in order) for order in self.phi)
        K = len(phi)
        for k, order in enumerate(phi):
            if len(set(order)) != len(order) or any(j < 0 or j >= K for j in order):
                raise ValueError(f"decoding order of user {k} is not a permutation of a user subset: {order}")
            if self.max_layers is not None and len(order) > self.max_layers:
                raise ValueError(f"user {k} decodes {len(order)} layers, limit is {self.max_layers}")
        object.__setattr__(self, "phi", phi)

    @classmethod
    def tin(cls, K: int, max_layers: int | None = None) -> "CmdSets":
        return cls(tuple(() for _ in range(K)), max_layers)

    @classmethod
    def own(cls, K: int, max_layers: int | None = None) -> "CmdSets":
        return cls(tuple((k,) for k in range(K)), max_layers)

    @property
    def K(self) -> int:
        return len(self.phi)

    def M(self, k: int) -> tuple[int, ...]:
        return tuple(i for i in range(self.K) if k in self.phi[i])

    def phi_bar(self, k: int) -> tuple[int, ...]:
        return tuple(j for j in range(self.K) if j not in self.phi[k])

    def omega(self, i: int, k: int) -> tuple[int, ...]:
        """Common messages user ``i`` still has to decode after the one of user ``k``."""
        order = self.phi[i]
        if k not in order:
            return ()
        return order[order.index(k) + 1:]

    def membership(self) -> np.ndarray:
        """Boolean (K, K) matrix, entry [i, k] true when user i decodes the common message of user k."""
        mask = np.zeros((self.K, self.K), dtype=bool)
        for i, order in enumerate(self.phi):
            mask[i, list(order)] = True
        return mask

    def is_tin(self) -> bool:
        return all(len(order) == 0 for order in self.phi)

    def with_member(self, j: int, k: int, position: int) -> "CmdSets":
        """User ``j`` additionally decodes the common message of user ``k`` at ``position`` of its order."""
        if k in self.phi[j]:
            return self
        order = list(self.phi[j])
        order.insert(position, k)
        phi = list(self.phi)
        phi[j] = tuple(order)
        return CmdSets(tuple(phi), self.max_layers)


@dataclass(frozen=True)
class RateAllocation:
    Rp: np.ndarray
    Rc: np.ndarray

    def __post_init__(self):
        Rp = np.asarray(self.Rp, dtype=float)
        Rc = np.asarray(self.Rc, dtype=float)
        if np.any(Rp < 0) or np.any(Rc < 0):
            raise ValueError("rates must be nonnegative")
        object.__setattr__(self, "Rp", Rp)
        object.__setattr__(self, "Rc", Rc)

    @classmethod
    def zeros(cls, K: int) -> "RateAllocation":
        return cls(np.zeros(K), np.zeros(K))

    @property
    def per_user(self) -> np.ndarray:
        return self.Rp + self.Rc

    @property
    def total(self) -> float:
        return float(np.sum(self.Rp) + np.sum(self.Rc))

    @property
    def common_total(self) -> float:
        return float(np.sum(self.Rc))

    def stacked(self) -> np.ndarray:
        return np.stack([self.Rp, self.Rc], axis=1)


@dataclass(frozen=True)
class SinrSet:
    gamma_p: np.ndarray          # (K,)
    gamma_c: np.ndarray          # (K, K), [i, k]: user i decoding the common message of user k
    member: np.ndarray           # (K, K) bool, same indexing as gamma_c
    gamma_cross_p: np.ndarray    # (K, K), [i, k]: user i decoding the private message of user k

    def common_min(self) -> np.ndarray:
        """Worst member SINR of every common message, zero for empty groups."""
        masked = np.where(self.member, self.gamma_c, np.inf)
        worst = masked.min(axis=0)
        return np.where(np.isinf(worst), 0.0, worst)


@dataclass(frozen=True)
class PowerBreakdown:
    P_tr: float
    P_circ: float
    P_fh: float

    @property
    def total(self) -> float:
        return self.P_tr + self.P_circ + self.P_fh


def stream_gains(w: BeamformerSet, heff: np.ndarray) -> np.ndarray:
    """|h_i^H w_j^o|^2 as a (K_i, K_j, 2) array."""
    inner = np.einsum("im,jom->ijo", heff.conj(), w.w)
    return np.abs(inner) ** 2


def sinrs_from_gains(gains: np.ndarray, S: CmdSets, noise_power: float) -> SinrSet:
    K = gains.shape[0]
    gp, gc = gains[:, :, Stream.PRIVATE], gains[:, :, Stream.COMMON]
    member = S.membership()

    undecoded_common = np.sum(np.where(member, 0.0, gc), axis=1)
    private_total = gp.sum(axis=1)
    gamma_p = np.diag(gp) / (private_total - np.diag(gp) + undecoded_common + noise_power)

    gamma_cross_p = np.empty((K, K))
    for k in range(K):
        leak = np.sum(gc[:, list(S.phi_bar(k))], axis=1)
        gamma_cross_p[:, k] = gp[:, k] / (private_total - gp[:, k] + leak + noise_power)

    gamma_c = np.empty((K, K))
    for i in range(K):
        T_i = private_total[i] + noise_power
        for k in range(K):
            undecoded = undecoded_common[i] - (0.0 if member[i, k] else gc[i, k])
            residual = np.sum(gc[i, list(S.omega(i, k))])
            gamma_c[i, k] = gc[i, k] / (T_i + undecoded + residual)
    return SinrSet(gamma_p, gamma_c, member, gamma_cross_p)


def compute_sinrs(w: BeamformerSet, v: PhaseShiftVector, S: CmdSets, ch: ChannelSet) -> SinrSet:
    """
    Private, common and cross-private SINRs at phase shifts ``v``.

    For pairs where user i is not a member of user k's group, ``gamma_c[i, k]`` is the SINR user i would
    get decoding that message after all of its own layers.

    :param w: BeamformerSet: Private and common beams.
    :param v: PhaseShiftVector: IRS phase shifts.
    :param S: CmdSets: Decoding sets and orders.
    :param ch: ChannelSet: Channels and noise power.
    :return: SinrSet: All SINR values of the model.
    """
    return sinrs_from_gains(stream_gains(w, effective_channels(ch, v)), S, ch.noise_power)


def rates_from_sinrs(sinrs: SinrSet, bandwidth_hz: float) -> RateAllocation:
    b_mhz = bandwidth_hz / 1e6
    return RateAllocation(b_mhz * np.log2(1.0 + sinrs.gamma_p), b_mhz * np.log2(1.0 + sinrs.common_min()))


def achievable_rates(w: BeamformerSet, v: PhaseShiftVector, S: CmdSets, ch: ChannelSet,
                     B: float) -> RateAllocation:
    """
    Achievable private and common rates in Mbps for bandwidth ``B`` in Hz.

    A common rate is zero when nobody decodes the message or its beam is zero.
    """
    return rates_from_sinrs(compute_sinrs(w, v, S, ch), B)


def active_links(w: BeamformerSet, prune_eps: float) -> np.ndarray:
    return w.link_powers() > prune_eps


def fronthaul_load(w: BeamformerSet, rates: RateAllocation, prune_eps: float) -> np.ndarray:
    active = active_links(w, prune_eps)
    return active[:, :, Stream.PRIVATE] @ rates.Rp + active[:, :, Stream.COMMON] @ rates.Rc


def losc(w: BeamformerSet, prune_eps: float) -> int:
    """Number of BS-to-user links carrying any stream above ``prune_eps``."""
    return int(np.sum(np.any(active_links(w, prune_eps), axis=-1)))


def fixed_power(config: SimConfig, irs_enabled: bool = True) -> float:
    return config.p_circ_watts + (config.R * config.p_irs_watts if irs_enabled else 0.0)


def power_breakdown(w: BeamformerSet, rates: RateAllocation, config: SimConfig, prune_eps: float | None = None,
                    irs_enabled: bool = True) -> PowerBreakdown:
    """
    Transmit, fixed circuit and fronthaul power.

    :param w: BeamformerSet: The beams.
    :param rates: RateAllocation: Rates carried over the fronthaul.
    :param config: SimConfig: Power model constants.
    :param prune_eps: float | None: Link activity threshold, ``config.prune_eps`` when None.
    :param irs_enabled: bool: Whether the IRS elements draw power.
    :return: PowerBreakdown: The three power terms in Watts.
    """
    eps = config.prune_eps if prune_eps is None else prune_eps
    P_fh = config.P_mbps * float(np.sum(fronthaul_load(w, rates, eps)))
    return PowerBreakdown(w.total_power(), fixed_power(config, irs_enabled), P_fh)


def energy_efficiency(rates: RateAllocation, powers: PowerBreakdown) -> float:
    if powers.total <= 0:
        raise ValueError("total power must be positive")
    return rates.total / powers.total


def check_feasibility(w: BeamformerSet, v, rates: RateAllocation, S: CmdSets, ch: ChannelSet,
                      alloc: FronthaulAllocation, config: SimConfig) -> FeasibilityReport:
    """
    Audits a candidate solution against every constraint of the original problem.

    :param v: PhaseShiftVector | np.ndarray: Phase shifts; raw arrays are accepted so that modulus errors
        are reported instead of raised.
    :return: FeasibilityReport: Flags and worst violations, absolute tolerance 1e-6 on powers and rates.
    """
    v_raw = np.asarray(getattr(v, "v", v), dtype=complex)
    modulus_violation = float(np.max(np.abs(np.abs(v_raw) - 1.0), initial=0.0))

    heff = ch.h_agg + np.einsum("kmr,r->km", ch.H_composite, v_raw)
    achievable = rates_from_sinrs(sinrs_from_gains(stream_gains(w, heff), S, ch.noise_power), config.B)

    power_violation = float(np.max(w.per_bs_power() - config.p_max_watts, initial=0.0))
    qos_violation = float(np.max(config.r_min - rates.per_user, initial=0.0))
    private_violation = float(np.max(rates.Rp - achievable.Rp, initial=0.0))
    common_violation = float(np.max(rates.Rc - achievable.Rc, initial=0.0))
    fronthaul_violation = 0.0 if alloc.unlimited else \
        float(np.max(fronthaul_load(w, rates, config.prune_eps) - alloc.C, initial=0.0))
    cmd_ok = all(len(order) <= config.D for order in S.phi)

    return FeasibilityReport(
        power_ok=power_violation <= POWER_TOL, power_violation=power_violation,
        qos_ok=qos_violation <= RATE_TOL, qos_violation=qos_violation,
        private_rate_ok=private_violation <= RATE_TOL, private_rate_violation=private_violation,
        common_rate_ok=common_violation <= RATE_TOL, common_rate_violation=common_violation,
        fronthaul_ok=fronthaul_violation <= RATE_TOL, fronthaul_violation=fronthaul_violation,
        unit_modulus_ok=modulus_violation <= MODULUS_TOL, unit_modulus_violation=modulus_violation,
        cmd_sets_ok=cmd_ok,
    )
