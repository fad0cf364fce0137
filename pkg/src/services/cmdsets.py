"""
Dynamic common-message decoding sets.

Candidate pairs are ranked by how well user ``j`` would decode a message of
user ``k`` compared to the intended receiver. The strongest candidates are
tried one at a time against the exact model and kept only when the joiner
decodes well enough and the refreshed point stays feasible.
"""
import logging
from dataclasses import dataclass

import numpy as np

from src.schemas.config import SimConfig
from src.services.model import (BeamformerSet, CmdSets, RateAllocation, Stream, check_feasibility, compute_sinrs,
                                stream_gains)
from src.services.relax import LambdaPoint, lambda_from_beams
from src.services.scenario import ChannelSet, FronthaulAllocation, PhaseShiftVector, effective_channels

logger = logging.getLogger(__name__)

MASKED = -np.inf


@dataclass(frozen=True)
class GammaMatrices:
    """``Gp[j, k]`` and ``Gc[j, k]``: relative SINR of user j decoding user k's private or common message."""
    Gp: np.ndarray
    Gc: np.ndarray

    def stacked(self) -> np.ndarray:
        return np.stack([self.Gp, self.Gc])


@dataclass(frozen=True)
class CmdResult:
    S: CmdSets
    point: LambdaPoint
    accepted: int
    trials: int


def _ratio(numerator: np.ndarray, denominator: np.ndarray) -> np.ndarray:
    out = np.full(numerator.shape, MASKED)
    positive = denominator > 0
    np.divide(numerator, denominator, out=out, where=positive)
    return np.where(positive, out - 1.0, MASKED)


def compute_gamma(w: BeamformerSet, v: PhaseShiftVector, S: CmdSets, ch: ChannelSet) -> GammaMatrices:
    """
    Ratio-minus-one matrices, masked where user j already decodes user k's common message.

    :param w: BeamformerSet: Current beams.
    :param v: PhaseShiftVector: Current phases.
    :param S: CmdSets: Current decoding sets.
    :param ch: ChannelSet: Channels.
    :return: GammaMatrices: Masked entries hold ``-inf``; zero intended SINR masks the whole column.
    """
    sinrs = compute_sinrs(w, v, S, ch)
    K = S.K
    Gp = _ratio(sinrs.gamma_cross_p, np.broadcast_to(sinrs.gamma_p[None, :], (K, K)))
    Gc = _ratio(sinrs.gamma_c, np.broadcast_to(np.diag(sinrs.gamma_c)[None, :], (K, K)))
    member = S.membership()
    Gp[member] = MASKED
    Gc[member] = MASKED
    np.fill_diagonal(Gp, MASKED)
    return GammaMatrices(Gp, Gc)


def decoding_position(order: tuple[int, ...], k: int, powers: np.ndarray) -> int:
    """Index at which ``k`` enters ``order`` so that stronger common messages are decoded first."""
    for position, m in enumerate(order):
        if powers[k] > powers[m]:
            return position
    return len(order)


def _join(S: CmdSets, j: int, k: int, powers: np.ndarray) -> CmdSets:
    return S.with_member(j, k, decoding_position(S.phi[j], k, powers))


def allocate_cmd_sets(S: CmdSets, point: LambdaPoint, v: PhaseShiftVector, ch: ChannelSet,
                      alloc: FronthaulAllocation, config: SimConfig, support: np.ndarray | None = None) -> CmdResult:
    """
    Grows the decoding sets greedily from the ratio matrices.

    The largest unprocessed ratio above ``eps_cmd`` is tried: user j joins the group of user k (for a private
    candidate the private beam of k is folded into its common beam and k decodes its own common message).
    The trial is kept when user j's common SINR relative to user k's exceeds ``eps_thr`` and the refreshed
    point passes the exact audit; every tried entry is masked afterwards.

    :param S: CmdSets: Sets to grow; not modified.
    :param point: LambdaPoint: Current beamforming point.
    :param alloc: FronthaulAllocation: Used by the exact audit.
    :param support: np.ndarray | None: Locked support of static clustering, if any.
    :return: CmdResult: The grown sets, the refreshed point and trial counts.
    """
    gamma = compute_gamma(point.w, v, S, ch).stacked()
    accepted = trials = 0

    while True:
        flat = int(np.argmax(gamma))
        o, j, k = np.unravel_index(flat, gamma.shape)
        value = gamma[o, j, k]
        if not np.isfinite(value) or value <= config.eps_cmd:
            break
        gamma[o, j, k] = MASKED
        o = Stream(int(o))
        if j in S.M(k):
            continue
        joins_own = o == Stream.PRIVATE and k not in S.phi[k]
        if len(S.phi[j]) >= config.D or (joins_own and j != k and len(S.phi[k]) >= config.D):
            logger.debug("cmd trial o=%s j=%d k=%d gamma=%.4g verdict=layer_cap", o.name[0].lower(), j, k, value)
            continue
        trials += 1

        w_trial = point.w
        Rp, Rc = point.rates.Rp.copy(), point.rates.Rc.copy()
        if o == Stream.PRIVATE:
            w_trial = w_trial.with_beam(k, Stream.COMMON, w_trial.common[k] + w_trial.private[k])
            Rc[k], Rp[k] = Rp[k] + Rc[k], 0.0
        powers = received_common_powers(w_trial, v, ch)
        S_trial = _join(S, j, k, powers[j])
        if joins_own and k not in S_trial.phi[k]:
            S_trial = _join(S_trial, k, k, powers[k])

        sinrs = compute_sinrs(w_trial, v, S_trial, ch)
        own = sinrs.gamma_c[k, k]
        ratio = sinrs.gamma_c[j, k] / own - 1.0 if own > 0 else MASKED
        verdict = "rejected"
        if ratio > config.eps_thr:
            if o == Stream.PRIVATE:
                w_trial = w_trial.with_beam(k, Stream.PRIVATE, np.zeros(w_trial.w.shape[-1]))
            refreshed = lambda_from_beams(w_trial, RateAllocation(Rp, Rc), v, S_trial, ch, config, support)
            report = check_feasibility(refreshed.w, v, refreshed.rates, S_trial, ch, alloc, config)
            if report.overall_feasible:
                S, point = S_trial, refreshed
                accepted += 1
                verdict = "accepted"
        logger.debug("cmd trial o=%s j=%d k=%d gamma=%.4g verdict=%s", o.name[0].lower(), j, k, value, verdict)
    return CmdResult(S, point, accepted, trials)


def received_common_powers(w: BeamformerSet, v: PhaseShiftVector, ch: ChannelSet) -> np.ndarray:
    """``|h_i^H w_k^c|^2`` as a (K, K) array."""
    return stream_gains(w, effective_channels(ch, v))[:, :, Stream.COMMON]
