"""
Beamforming for fixed phase shifts and decoding sets: Dinkelbach iterations on
the convex inner approximation, with a QoS repair pass for bad starting points
and a final locked-support pass that makes the fronthaul load exact.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from src.schemas.config import BeamformParams, SimConfig
from src.services import conic
from src.services.exceptions import InfeasibleDropError
from src.services.model import (RATE_TOL, BeamformerSet, CmdSets, RateAllocation, Stream, achievable_rates,
                                fronthaul_load)
from src.services.relax import (LambdaPoint, SurrogateContext, build_subproblem, lambda_from_beams,
                                surrogate_objective)
from src.services.scenario import ChannelSet, FronthaulAllocation, PhaseShiftVector, Regime, effective_channels

logger = logging.getLogger(__name__)

INIT_POWER_SHARE = 0.9
LOCK_THRESHOLD = 0.5


@dataclass
class BeamformResult:
    point: LambdaPoint
    objective: float
    history: list[float] = field(default_factory=list)
    status: str = "converged"
    support: np.ndarray | None = None


def unlimited_allocation(config: SimConfig) -> FronthaulAllocation:
    return FronthaulAllocation(np.full(config.N, math.inf), Regime.unlimited)


def bs_slots(alloc: FronthaulAllocation, config: SimConfig) -> np.ndarray:
    """Users each BS can carry at the minimum rate, capped at K."""
    if alloc.unlimited:
        return np.full(config.N, config.K)
    slots = np.floor(np.asarray(alloc.C, dtype=float) / config.r_min + 1e-9)
    return np.minimum(slots, config.K).astype(int)


def static_clustering(ch: ChannelSet, alloc: FronthaulAllocation, config: SimConfig) -> np.ndarray:
    """
    Assigns users to BSs by channel strength within the fronthaul slots.

    Users are first covered one by one, strongest first, each by its best BS with a free slot; the remaining
    slots then go to the strongest (BS, user) pairs.

    :param ch: ChannelSet: Direct channels are used for the link gains.
    :param alloc: FronthaulAllocation: Per-BS capacities.
    :param config: SimConfig: Supplies r_min.
    :return: np.ndarray: Boolean (N, K) support.
    """
    gains = np.sum(np.abs(ch.h_direct) ** 2, axis=-1)
    N, K = gains.shape
    free = bs_slots(alloc, config).copy()
    support = np.zeros((N, K), dtype=bool)

    for k in sorted(range(K), key=lambda u: (-gains[:, u].max(), u)):
        candidates = [n for n in np.argsort(-gains[:, k], kind="stable") if free[n] > 0]
        if not candidates:
            raise InfeasibleDropError(f"no BS has a free fronthaul slot for user {k}")
        support[candidates[0], k] = True
        free[candidates[0]] -= 1

    pairs = sorted(((n, k) for n in range(N) for k in range(K) if not support[n, k]),
                   key=lambda nk: (-gains[nk], nk[1], nk[0]))
    for n, k in pairs:
        if free[n] > 0:
            support[n, k] = True
            free[n] -= 1
    return support


def mrt_beams(ch: ChannelSet, v: PhaseShiftVector, S: CmdSets, support: np.ndarray, config: SimConfig,
              common_eps: float) -> BeamformerSet:
    """Per-link MRT on ``support``, every BS splitting 90% of its budget equally over its users."""
    N, L = config.N, config.L
    heff = effective_channels(ch, v)
    w = np.zeros((config.K, 2, N * L), dtype=complex)
    for n in range(N):
        served = np.flatnonzero(support[n])
        if not len(served):
            continue
        amplitude = math.sqrt(INIT_POWER_SHARE * config.p_max_watts / len(served))
        for k in served:
            block = heff[k, n * L:(n + 1) * L]
            norm = np.linalg.norm(block)
            if norm > 0:
                w[k, Stream.PRIVATE, n * L:(n + 1) * L] = amplitude * block / norm
    for k in range(config.K):
        if S.M(k):
            w[k, Stream.COMMON] = common_eps * w[k, Stream.PRIVATE]
    return BeamformerSet(w, N)


def meets_qos(point: LambdaPoint, config: SimConfig) -> bool:
    return bool(np.all(point.rates.per_user >= config.r_min - 0.5 * RATE_TOL))


def _capped_rates(achievable: RateAllocation, cap: np.ndarray) -> RateAllocation:
    Rp = np.minimum(achievable.Rp, cap)
    Rc = np.minimum(achievable.Rc, np.maximum(cap - Rp, 0.0))
    return RateAllocation(Rp, Rc)


def initialize_lambda(ch: ChannelSet, v: PhaseShiftVector, S: CmdSets, config: SimConfig,
                      alloc: FronthaulAllocation | None = None, support: np.ndarray | None = None,
                      irs_enabled: bool = True) -> LambdaPoint:
    """
    Feasible starting point from MRT beams.

    Beams follow the static clustering so that every BS carries no more users than its fronthaul slots;
    rates are the achievable ones capped by the per-user share of every serving BS. A repair pass runs
    when some user misses r_min.

    :param support: np.ndarray | None: Locked (N, K) support of a static scheme, None for dynamic clustering.
    :raise InfeasibleDropError: When the repair pass cannot reach r_min for every user.
    """
    alloc = alloc or unlimited_allocation(config)
    cluster = static_clustering(ch, alloc, config) if support is None else support
    w = mrt_beams(ch, v, S, cluster, config, config.outer.common_init_eps)

    served = cluster.sum(axis=1)
    if alloc.unlimited:
        cap = np.full(config.K, math.inf)
    else:
        share = np.where(served > 0, np.asarray(alloc.C, dtype=float) / np.maximum(served, 1), math.inf)
        cap = np.array([share[cluster[:, k]].min() if cluster[:, k].any() else 0.0 for k in range(config.K)])
    rates = _capped_rates(achievable_rates(w, v, S, ch, config.B), cap)

    point = lambda_from_beams(w, rates, v, S, ch, config, support)
    if meets_qos(point, config):
        return point
    logger.debug("initial point misses r_min (worst user %.4g Mbps), repairing", point.rates.per_user.min())
    return repair_lambda(point, v, S, ch, alloc, config, support, irs_enabled)


def repair_lambda(point: LambdaPoint, v: PhaseShiftVector, S: CmdSets, ch: ChannelSet, alloc: FronthaulAllocation,
                  config: SimConfig, support: np.ndarray | None = None, irs_enabled: bool = True) -> LambdaPoint:
    """Raises the worst user's rate towards r_min with the surrogate constraint set."""
    alpha = config.alpha_value
    for iteration in range(config.beamform.repair_iters):
        ctx = SurrogateContext(point, alpha, 0.0, support, irs_enabled, repair=True)
        program, layout = build_subproblem(ctx, v, S, ch, alloc, config)
        solution = conic.solve(program)
        if not solution.optimal:
            raise InfeasibleDropError(f"repair solve ended with status {solution.status.value}")
        raw = layout.read(solution.x)
        point = lambda_from_beams(raw.w, raw.rates, v, S, ch, config, support)
        tau = float(solution.x[layout.tau])
        logger.debug("repair iter=%d tau=%.6g worst=%.6g", iteration, tau, point.rates.per_user.min())
        if meets_qos(point, config):
            return point
    raise InfeasibleDropError(
        f"rate repair left the worst user at {point.rates.per_user.min():.4g} Mbps, below r_min={config.r_min}")


def _mixed(current: LambdaPoint, candidate: LambdaPoint, rho: float, v, S, ch, config, support) -> LambdaPoint:
    w = BeamformerSet(current.w.w + rho * (candidate.w.w - current.w.w), current.w.N)
    R = current.rates.stacked() + rho * (candidate.rates.stacked() - current.rates.stacked())
    return lambda_from_beams(w, RateAllocation(R[:, 0], R[:, 1]), v, S, ch, config, support)


def dinkelbach(point: LambdaPoint, v: PhaseShiftVector, S: CmdSets, ch: ChannelSet, alloc: FronthaulAllocation,
               config: SimConfig, params: BeamformParams, support: np.ndarray | None = None,
               irs_enabled: bool = True) -> BeamformResult:
    """
    Runs the Dinkelbach loop from a point feasible for its own surrogates.

    Every iterate is rebuilt with :func:`lambda_from_beams`, so ``lambda`` is the surrogate efficiency of a
    point that satisfies the exact power, SINR and rate constraints. A regressing step is retried with the
    step size halved down to ``rho_floor``; the best iterate is returned.
    """
    alpha = config.alpha_value
    current = point
    objective = surrogate_objective(current, config, irs_enabled)
    best = BeamformResult(current, objective, [objective], "max_iters", support)
    rho = params.rho_step
    stalls = 0

    for z in range(1, params.Z_max + 1):
        lam = objective
        ctx = SurrogateContext(current, alpha, lam, support, irs_enabled)
        program, layout = build_subproblem(ctx, v, S, ch, alloc, config)
        solution = conic.solve(program)
        if not solution.optimal:
            logger.warning("sca iter=%d lambda=%.6g status=%s, keeping the best iterate", z, lam,
                           solution.status.value)
            best.status = "solver_failure"
            break
        raw = layout.read(solution.x)
        full_step = lambda_from_beams(raw.w, raw.rates, v, S, ch, config, support)
        candidate = full_step
        if rho < 1.0:
            mixed = _mixed(current, full_step, rho, v, S, ch, config, support)
            candidate = mixed if meets_qos(mixed, config) else candidate
        new_objective = surrogate_objective(candidate, config, irs_enabled)

        while new_objective < lam * (1.0 - params.dink_tol) and rho > params.rho_floor:
            rho = max(rho / 2.0, params.rho_floor)
            mixed = _mixed(current, full_step, rho, v, S, ch, config, support)
            if meets_qos(mixed, config):
                candidate, new_objective = mixed, surrogate_objective(mixed, config, irs_enabled)
        logger.info("sca iter=%d lambda=%.8g objective=%.8g residual=%.3g rho=%.4g status=%s", z, lam,
                    new_objective, solution.residual, rho, solution.status.value)
        if new_objective < lam * (1.0 - params.dink_tol) or not meets_qos(candidate, config):
            best.status = "converged"
            break

        step = np.linalg.norm(candidate.w.w - current.w.w) / (1.0 + np.linalg.norm(current.w.w))
        relative = abs(new_objective - lam) / max(abs(lam), 1e-12)
        current, objective = candidate, new_objective
        best.history.append(objective)
        if objective > best.objective:
            best.point, best.objective = current, objective

        stalls = stalls + 1 if relative < params.sca_tol else 0
        dinkelbach_value = -solution.objective
        if (stalls >= 2 and step < params.step_tol) or dinkelbach_value <= params.dink_tol * max(lam, 1.0):
            best.status = "converged"
            break
    return best


def lock_support(point: LambdaPoint, alloc: FronthaulAllocation, config: SimConfig) -> np.ndarray:
    """Links with a smooth indicator of at least one half, trimmed to the fronthaul slots of each BS."""
    strength = point.d.max(axis=-1)
    powers = point.w.link_powers().sum(axis=-1)
    support = strength >= LOCK_THRESHOLD
    for k in np.flatnonzero(~support.any(axis=0)):
        support[int(np.argmax(powers[:, k])), k] = True

    slots = bs_slots(alloc, config)
    for n in range(config.N):
        while support[n].sum() > slots[n]:
            removable = [k for k in np.flatnonzero(support[n]) if support[:, k].sum() > 1]
            if not removable:
                break
            support[n, min(removable, key=lambda k: powers[n, k])] = False
    return support


def carry_locked(init: LambdaPoint, init_support: np.ndarray, v: PhaseShiftVector, S: CmdSets, ch: ChannelSet,
                 alloc: FronthaulAllocation, config: SimConfig, irs_enabled: bool = True) -> BeamformResult | None:
    """The warm start re-evaluated on its own locked support, or None when it no longer meets QoS or fronthaul."""
    start = lambda_from_beams(init.w, init.rates, v, S, ch, config, init_support)
    load = fronthaul_load(start.w, start.rates, config.prune_eps)
    if not meets_qos(start, config) or np.any(load > np.asarray(alloc.C) + RATE_TOL):
        return None
    objective = surrogate_objective(start, config, irs_enabled)
    return BeamformResult(start, objective, [objective], "carried", init_support)


def solve_beamforming(ch: ChannelSet, v: PhaseShiftVector, S: CmdSets, alloc: FronthaulAllocation,
                      config: SimConfig, params: BeamformParams | None = None, init: LambdaPoint | None = None,
                      support: np.ndarray | None = None, irs_enabled: bool = True,
                      init_support: np.ndarray | None = None) -> BeamformResult:
    """
    Energy-efficient beamformers and rates for fixed phase shifts and decoding sets.

    With dynamic clustering under finite fronthaul the result is a locked-support point. When the warm start
    carries its own locked support, that point competes with the fresh locked-support pass, so the returned
    surrogate efficiency never falls below the warm start's.

    :param ch: ChannelSet: Channels of the drop.
    :param v: PhaseShiftVector: Fixed phase shifts.
    :param S: CmdSets: Fixed decoding sets.
    :param alloc: FronthaulAllocation: Per-BS fronthaul capacities.
    :param config: SimConfig: Model constants.
    :param params: BeamformParams | None: Loop settings, ``config.beamform`` when None.
    :param init: LambdaPoint | None: Warm start; MRT initialization when None.
    :param support: np.ndarray | None: Locked (N, K) support of static clustering, None for dynamic.
    :param irs_enabled: bool: Whether the IRS power is charged.
    :param init_support: np.ndarray | None: Locked support the warm start was produced on, if any.
    :return: BeamformResult: The best point with its surrogate efficiency and the per-iteration history.
    """
    params = params or config.beamform
    if init is None:
        point = initialize_lambda(ch, v, S, config, alloc, support, irs_enabled)
    else:
        point = lambda_from_beams(init.w, init.rates, v, S, ch, config, support)
        if not meets_qos(point, config):
            point = repair_lambda(point, v, S, ch, alloc, config, support, irs_enabled)

    result = dinkelbach(point, v, S, ch, alloc, config, params, support, irs_enabled)
    if support is not None or alloc.unlimited:
        return result

    carried = None
    if init is not None and init_support is not None:
        carried = carry_locked(init, init_support, v, S, ch, alloc, config, irs_enabled)

    locked = lock_support(result.point, alloc, config)
    per_user = np.maximum(result.point.rates.per_user, 1e-12)
    scale = np.minimum(config.r_min / per_user, 1.0)
    rates = RateAllocation(result.point.rates.Rp * scale, result.point.rates.Rc * scale)
    try:
        start = lambda_from_beams(result.point.w, rates, v, S, ch, config, locked)
        if not meets_qos(start, config):
            start = repair_lambda(start, v, S, ch, alloc, config, locked, irs_enabled)
        polished = dinkelbach(start, v, S, ch, alloc, config, params, locked, irs_enabled)
    except InfeasibleDropError as err:
        if carried is not None:
            logger.warning("locked-support pass failed (%s), keeping the warm start", err)
            return carried
        logger.warning("locked-support pass failed (%s), keeping the unlocked point", err)
        result.status = "unlocked"
        return result
    if carried is not None and carried.objective > polished.objective:
        logger.debug("locked-support pass reached %.8g below the warm start %.8g", polished.objective,
                     carried.objective)
        return carried
    return polished
