"""
Alternating optimization of beams, phase shifts and decoding sets for one
scheme on one drop, plus the static baselines the schemes fall back on.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from src.schemas.config import SimConfig
from src.schemas.record import ComplexArray, FeasibilityReport, RecordSchema, TraceRow
from src.schemas.scheme import SchemeSpec
from src.services.beamform import mrt_beams, solve_beamforming, static_clustering
from src.services.cmdsets import allocate_cmd_sets, compute_gamma, received_common_powers
from src.services.exceptions import InfeasibleDropError, SolverFailure
from src.services.model import (BeamformerSet, CmdSets, PowerBreakdown, RateAllocation, achievable_rates,
                                check_feasibility, energy_efficiency, fronthaul_load, losc, power_breakdown)
from src.services.phase import PhaseStatus, optimize_phase
from src.services.relax import LambdaPoint, lambda_from_beams, surrogate_objective
from src.services.scenario import ChannelSet, FronthaulAllocation, PhaseShiftVector, Regime

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class StaticBaseline:
    clusters: np.ndarray
    S: CmdSets


def static_baselines(ch: ChannelSet, alloc: FronthaulAllocation, config: SimConfig,
                     v: PhaseShiftVector | None = None) -> StaticBaseline:
    """
    Static clustering and static decoding sets.

    Every user decodes its own common message; in user order, the user overhearing user k's private
    message best (cross-SINR ratio under the initial MRT beams) also joins user k's group when the
    ratio exceeds ``eps_cmd`` and it decodes fewer than ``static_layers`` messages.

    :raise InfeasibleDropError: When the fronthaul slots cannot cover every user.
    """
    v = v or PhaseShiftVector.ones(ch.R)
    clusters = static_clustering(ch, alloc, config)
    layers = min(config.outer.static_layers, config.D)
    S = CmdSets.own(config.K, config.D)
    w = mrt_beams(ch, v, S, clusters, config, config.outer.common_init_eps)
    Gp = compute_gamma(w, v, S, ch).Gp
    powers = received_common_powers(w, v, ch)
    for k in range(config.K):
        column = np.where(np.arange(config.K) == k, -np.inf, Gp[:, k])
        j = int(np.argmax(column))
        if column[j] > config.eps_cmd and len(S.phi[j]) < layers:
            position = next((p for p, m in enumerate(S.phi[j]) if powers[j, k] > powers[j, m]), len(S.phi[j]))
            S = S.with_member(j, k, position)
    return StaticBaseline(clusters, S)


@dataclass
class SolutionRecord:
    scheme: SchemeSpec
    alloc: FronthaulAllocation
    channels: ChannelSet
    config: SimConfig
    w: BeamformerSet
    v: PhaseShiftVector
    S: CmdSets
    rates: RateAllocation
    EE: float
    powers: PowerBreakdown
    load: np.ndarray
    LoSC: int
    common_proportion: float
    feasibility: FeasibilityReport
    status: str = "converged"
    trace: list[TraceRow] = field(default_factory=list)
    outer_iterations: int = 0

    @property
    def C_total(self) -> float:
        return self.alloc.C_total

    def to_schema(self) -> RecordSchema:
        return RecordSchema(
            scheme=self.scheme.tag, C_total=self.C_total, status=self.status, config=self.config.model_dump(),
            C=[float(c) for c in self.alloc.C], regime=self.alloc.regime.value,
            h_direct=ComplexArray.from_array(self.channels.h_direct),
            H_bs_irs=ComplexArray.from_array(self.channels.H_bs_irs),
            h_irs_user=ComplexArray.from_array(self.channels.h_irs_user), noise_power=self.channels.noise_power,
            w=ComplexArray.from_array(self.w.w), v=ComplexArray.from_array(self.v.v),
            phi=[list(order) for order in self.S.phi], Rp=self.rates.Rp.tolist(), Rc=self.rates.Rc.tolist(),
            EE=self.EE, load=[float(x) for x in self.load], LoSC=self.LoSC,
            common_proportion=self.common_proportion, trace=self.trace, feasibility=self.feasibility,
        )

    @classmethod
    def from_schema(cls, body: RecordSchema) -> "SolutionRecord":
        """Rebuilds a record from its file form; the unit-modulus check is left to the audit."""
        config = SimConfig.model_validate(body.config)
        channels = ChannelSet(body.h_direct.to_array(), body.H_bs_irs.to_array(), body.h_irs_user.to_array(),
                              body.noise_power)
        alloc = FronthaulAllocation(np.asarray(body.C, dtype=float), Regime(body.regime))
        w = BeamformerSet(body.w.to_array(), config.N)
        v_raw = body.v.to_array()
        v = _UncheckedPhases(v_raw)
        rates = RateAllocation(np.asarray(body.Rp), np.asarray(body.Rc))
        scheme = SchemeSpec.from_tag(body.scheme)
        return cls(scheme, alloc, channels, config, w, v, CmdSets(tuple(tuple(o) for o in body.phi), config.D),
                   rates, body.EE, power_breakdown(w, rates, config, irs_enabled=scheme.irs),
                   np.asarray(body.load), body.LoSC, body.common_proportion, body.feasibility, body.status,
                   list(body.trace))


class _UncheckedPhases(PhaseShiftVector):
    """Phases read back from a file; modulus errors are reported by the audit rather than raised."""

    def __post_init__(self):
        object.__setattr__(self, "v", np.asarray(self.v, dtype=complex).reshape(-1))


def audit_record(record: SolutionRecord) -> FeasibilityReport:
    return check_feasibility(record.w, record.v.v, record.rates, record.S, record.channels, record.alloc,
                             record.config)


@dataclass(frozen=True)
class Snapshot:
    w: BeamformerSet
    v: PhaseShiftVector
    S: CmdSets
    rates: RateAllocation
    EE: float
    powers: PowerBreakdown
    feasibility: FeasibilityReport


def evaluate(point: LambdaPoint, v: PhaseShiftVector, S: CmdSets, ch: ChannelSet, alloc: FronthaulAllocation,
             config: SimConfig, irs_enabled: bool) -> Snapshot:
    """Exact quantities after hard-zeroing links below ``prune_eps``; rates are re-capped at the pruned beams."""
    w = point.w.pruned(config.prune_eps)
    achievable = achievable_rates(w, v, S, ch, config.B)
    rates = RateAllocation(np.minimum(point.rates.Rp, achievable.Rp), np.minimum(point.rates.Rc, achievable.Rc))
    powers = power_breakdown(w, rates, config, irs_enabled=irs_enabled)
    report = check_feasibility(w, v, rates, S, ch, alloc, config)
    return Snapshot(w, v, S, rates, energy_efficiency(rates, powers), powers, report)


def _improves(snapshot: Snapshot, best: Snapshot | None) -> bool:
    if best is None:
        return True
    if snapshot.feasibility.overall_feasible != best.feasibility.overall_feasible:
        return snapshot.feasibility.overall_feasible
    return snapshot.EE > best.EE


def _settled(objectives: list[float], tol: float, window: int) -> bool:
    """The last ``window`` relative changes of the surrogate efficiency are all within ``tol``."""
    if len(objectives) <= window:
        return False
    recent = objectives[-(window + 1):]
    return all(abs(b - a) <= tol * abs(a) for a, b in zip(recent, recent[1:]))


def _framed_objective(point: LambdaPoint, v: PhaseShiftVector, S: CmdSets, ch: ChannelSet, config: SimConfig,
                      frame: np.ndarray | None, irs_enabled: bool) -> float:
    return surrogate_objective(lambda_from_beams(point.w, point.rates, v, S, ch, config, frame), config,
                               irs_enabled)


def run_alternating(ch: ChannelSet, alloc: FronthaulAllocation, scheme: SchemeSpec, config: SimConfig,
                    seed: tuple[int, ...] = (0,)) -> SolutionRecord:
    """
    Alternates beamforming, phase design and CMD-set growth until the surrogate efficiency settles.

    The interference weight of the phase step starts at ``eta_start`` and grows by ``eta_step`` per
    iteration up to one. Once it reaches one, a CMD update lowering the surrogate efficiency is dropped.
    Each iteration is evaluated right after beamforming; the record keeps the best feasible evaluation.
    A phase solve without an optimal certificate leaves the phases unchanged and skips the CMD step.
    The loop stops once two consecutive relative changes of the surrogate efficiency are within
    ``outer.tol``; one suffices when beamforming is the only block that moves.

    :param ch: ChannelSet: Channels of the drop, reflected paths included.
    :param alloc: FronthaulAllocation: Per-BS fronthaul capacities.
    :param scheme: SchemeSpec: Clustering, RS, IRS and CMD modes.
    :param config: SimConfig: Model and algorithm settings.
    :param seed: tuple[int, ...]: Entropy prefix for the randomization streams, extended by the iteration.
    :return: SolutionRecord: The best evaluated solution with its iteration trace.
    :raise InfeasibleDropError: When the drop admits no starting point meeting every user's QoS, or no
        evaluated iterate passes the exact audit.
    """
    outer = config.outer
    ch_used = ch if scheme.irs else ch.without_irs()
    baseline = static_baselines(ch_used, alloc, config)
    support = None if scheme.dynamic_clustering else baseline.clusters
    S = baseline.S if scheme.uses_rs else CmdSets.tin(config.K, config.D)
    v = PhaseShiftVector.ones(ch.R)
    eta = outer.eta_start

    point: LambdaPoint | None = None
    frame: np.ndarray | None = support
    best: Snapshot | None = None
    trace: list[TraceRow] = []
    objectives: list[float] = []
    window = 2 if scheme.irs or (scheme.uses_rs and scheme.dynamic_cmd) else 1
    status = "max_iters"
    iteration = 0

    for iteration in range(1, outer.max_iters + 1):
        result = solve_beamforming(ch_used, v, S, alloc, config, init=point, support=support,
                                   irs_enabled=scheme.irs, init_support=None if support is not None else frame)
        point, objective = result.point, result.objective
        frame = support if support is not None else result.support
        snapshot = evaluate(point, v, S, ch_used, alloc, config, scheme.irs)
        if _improves(snapshot, best):
            best = snapshot

        phase_status, accepted = None, 0
        if scheme.irs:
            rng = np.random.default_rng(np.random.SeedSequence([*seed, iteration]))
            try:
                phase = optimize_phase(ch_used, point.w, point.t, v, S, config, eta, rng)
                phase_status = phase.status
            except SolverFailure as err:
                logger.warning("phase step failed at outer iter=%d, keeping the phases: %s", iteration, err)
                phase_status = PhaseStatus.failed
            if phase_status.valid:
                v = phase.v
                point = lambda_from_beams(point.w, point.rates, v, S, ch_used, config, support)
        if scheme.uses_rs and scheme.dynamic_cmd and (phase_status is None or phase_status.valid):
            cmd = allocate_cmd_sets(S, point, v, ch_used, alloc, config, support)
            lowered = (_framed_objective(cmd.point, v, cmd.S, ch_used, config, frame, scheme.irs)
                       < _framed_objective(point, v, S, ch_used, config, frame, scheme.irs))
            if cmd.accepted and not (eta >= 1.0 and lowered):
                S, point, accepted = cmd.S, cmd.point, cmd.accepted

        R_t = snapshot.rates.total
        trace.append(TraceRow(iter=iteration, eta=eta, EE=snapshot.EE, objective=objective, R_t=R_t,
                              P_total=snapshot.powers.total, LoSC=losc(snapshot.w, config.prune_eps),
                              phase_status=phase_status.value if phase_status else None, cmd_accepted=accepted))
        logger.info("outer iter=%d eta=%.2f EE=%.6g R_t=%.6g P_total=%.6g LoSC=%d", iteration, eta, snapshot.EE,
                    R_t, snapshot.powers.total, trace[-1].LoSC)

        objectives.append(objective)
        if _settled(objectives, outer.tol, window) or phase_status is PhaseStatus.kept_previous:
            status = "converged"
            break
        eta = min(eta + outer.eta_step, 1.0)

    if not best.feasibility.overall_feasible:
        failed = ", ".join(best.feasibility.failed_checks())
        logger.warning("scheme %s C=%s ended without a feasible evaluation: %s", scheme.tag, alloc.C_total, failed)
        raise InfeasibleDropError(f"no iterate of {scheme.tag} passed the audit ({failed})")
    rates = best.rates
    return SolutionRecord(
        scheme=scheme, alloc=alloc, channels=ch_used, config=config, w=best.w, v=best.v, S=best.S, rates=rates,
        EE=best.EE, powers=best.powers, load=fronthaul_load(best.w, rates, config.prune_eps),
        LoSC=losc(best.w, config.prune_eps),
        common_proportion=rates.common_total / rates.total if rates.total > 0 else 0.0,
        feasibility=best.feasibility, status=status, trace=trace, outer_iterations=iteration,
    )

