"""
Convex surrogates of the beamforming problem and the subproblem builder.

The builder works on noise-normalized channels. A stream is *live* in a
subproblem when its SINR auxiliary at the expansion point is positive; dead
streams have their beam, rate and auxiliaries fixed to zero. Under a locked
(static) support, links inside the support carry ``d = 1`` and links outside
it carry no beam at all.
"""
import math
from dataclasses import dataclass

import numpy as np

from src.schemas.config import SimConfig
from src.services.conic import ConvexProgram, ProgramBuilder, affine, complex_rows
from src.services.model import (BeamformerSet, CmdSets, RateAllocation, Stream, compute_sinrs, fixed_power,
                                rates_from_sinrs)
from src.services.scenario import ChannelSet, FronthaulAllocation, PhaseShiftVector, effective_channels

LN2 = math.log(2.0)


def f_alpha(x, alpha: float):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("f_alpha is defined for nonnegative arguments only")
    return (2.0 / np.pi) * np.arctan(x / alpha)


def f_alpha_grad(x, alpha: float):
    x = np.asarray(x, dtype=float)
    return (2.0 / np.pi) * alpha / (alpha ** 2 + x ** 2)


def taylor_qol_lower(h_eff, w_tilde, t_tilde: float, w, t: float) -> float:
    """
    Affine lower bound of ``|h^H w|^2 / t`` around ``(w_tilde, t_tilde)``.

    :return: float: ``2 Re{w~^H h h^H w}/t~ - |h^H w~|^2 t/t~^2``.
    """
    if t_tilde <= 0:
        raise ValueError("expansion SINR must be positive")
    c_tilde = np.vdot(h_eff, w_tilde)
    c = np.vdot(h_eff, w)
    return float(2.0 * np.real(np.conj(c_tilde) * c) / t_tilde - abs(c_tilde) ** 2 * t / t_tilde ** 2)


def bilinear_upper(d, q, d_tilde, q_tilde) -> float:
    """
    Convex upper bound of ``sum_o d_o q_o``, tight at the expansion point.

    ``d q = (d+q)^2/2 - d^2/2 - q^2/2``; the concave part is replaced by its tangent plane.
    """
    d, q, d_tilde, q_tilde = (np.asarray(a, dtype=float) for a in (d, q, d_tilde, q_tilde))
    g = (0.5 * (d + q) ** 2 - 0.5 * d_tilde ** 2 - 0.5 * q_tilde ** 2
         - d_tilde * (d - d_tilde) - q_tilde * (q - q_tilde))
    return float(np.sum(g))


def linearize_f_alpha(w_tilde_norm_sq, w_norm_sq, alpha: float):
    return f_alpha(w_tilde_norm_sq, alpha) + f_alpha_grad(w_tilde_norm_sq, alpha) * (
        np.asarray(w_norm_sq, dtype=float) - w_tilde_norm_sq)


def linearize_log(t, t_tilde):
    t_tilde = np.asarray(t_tilde, dtype=float)
    return np.log2(1.0 + t_tilde) + (np.asarray(t, dtype=float) - t_tilde) / ((1.0 + t_tilde) * LN2)


@dataclass(frozen=True)
class LambdaPoint:
    w: BeamformerSet
    t: np.ndarray        # (K, 2)
    d: np.ndarray        # (N, K, 2)
    q: np.ndarray        # (K, 2)
    rates: RateAllocation

    @property
    def live(self) -> np.ndarray:
        return self.t > 0


@dataclass(frozen=True)
class SurrogateContext:
    point: LambdaPoint
    alpha: float
    lambda_dink: float = 0.0
    support: np.ndarray | None = None
    irs_enabled: bool = True
    repair: bool = False


def lambda_from_beams(w: BeamformerSet, rates: RateAllocation, v: PhaseShiftVector, S: CmdSets, ch: ChannelSet,
                      config: SimConfig, support: np.ndarray | None = None) -> LambdaPoint:
    """
    Builds a point that is feasible for the convex surrogates around itself.

    Beams are fitted to the per-BS budget, rates are capped at what the beams achieve, SINR auxiliaries are
    set to the smallest value supporting each rate (floored for live streams), and streams whose SINR is
    below the floor are switched off. ``d`` is ``f_alpha`` of the link powers, or the support indicator
    when the support is locked.
    """
    params = config.beamform
    b_mhz = config.bandwidth_mhz
    w = w.fitted_to_budget(config.p_max_watts)
    if support is not None:
        w = BeamformerSet(w.w * np.repeat(support.T[:, None, :], w.L, axis=-1), w.N)

    sinrs = compute_sinrs(w, v, S, ch)
    gamma = np.stack([sinrs.gamma_p, sinrs.common_min()], axis=1)
    live = gamma > params.t_floor
    live[:, Stream.COMMON] &= np.array([len(S.M(k)) > 0 for k in range(S.K)])

    achievable = rates_from_sinrs(sinrs, config.B).stacked()
    R = np.where(live, np.minimum(rates.stacked(), achievable), 0.0)
    t_needed = np.exp2(R / b_mhz) - 1.0
    t = np.where(live, np.minimum(gamma, np.maximum(t_needed, params.t_floor)), 0.0)

    dead = ~live
    if dead.any():
        beams = w.w.copy()
        beams[dead] = 0.0
        w = BeamformerSet(beams, w.N)

    powers = w.link_powers()
    if support is None:
        d = f_alpha(powers, config.alpha_value)
    else:
        d = np.repeat(support[:, :, None], 2, axis=2).astype(float)
    d = np.where(live[None, :, :], d, 0.0)
    q = np.log2(1.0 + t)
    return LambdaPoint(w, t, d, q, RateAllocation(R[:, 0], R[:, 1]))


def surrogate_objective(point: LambdaPoint, config: SimConfig, irs_enabled: bool = True) -> float:
    """Surrogate energy efficiency: rates over transmit, fixed and bilinear-surrogate fronthaul power."""
    fronthaul = config.P_mbps * config.bandwidth_mhz * float(np.sum(point.d * point.q[None, :, :]))
    power = point.w.total_power() + fixed_power(config, irs_enabled) + fronthaul
    return point.rates.total / power


@dataclass(frozen=True)
class SubproblemLayout:
    w: np.ndarray      # (K, 2, 2*N*L): real parts then imaginary parts
    t: np.ndarray
    R: np.ndarray
    d: np.ndarray
    q: np.ndarray
    N: int
    u: int | None = None
    tau: int | None = None

    def beam_cols(self, k: int, o: int) -> np.ndarray:
        return self.w[k, o]

    def block_cols(self, n: int, k: int, o: int, L: int) -> np.ndarray:
        NL = self.w.shape[-1] // 2
        cols = self.w[k, o]
        return np.concatenate([cols[n * L:(n + 1) * L], cols[NL + n * L:NL + (n + 1) * L]])

    def read(self, x: np.ndarray) -> LambdaPoint:
        NL = self.w.shape[-1] // 2
        raw = x[self.w]
        w = BeamformerSet(raw[..., :NL] + 1j * raw[..., NL:], self.N)
        R = np.maximum(x[self.R], 0.0)
        return LambdaPoint(w, np.maximum(x[self.t], 0.0), np.clip(x[self.d], 0.0, 1.0), np.maximum(x[self.q], 0.0),
                           RateAllocation(R[:, 0], R[:, 1]))


def _interference_rows(h_row: np.ndarray, layout: SubproblemLayout, beams: list[tuple[int, int]]):
    """Columns and block-diagonal rows whose squared norm is the received power of ``beams``."""
    if not beams:
        return None, None
    g = h_row.conj()
    rows = complex_rows(g)
    cols = np.concatenate([layout.beam_cols(j, o) for j, o in beams])
    width = rows.shape[1]
    A = np.zeros((2 * len(beams), width * len(beams)))
    for slot in range(len(beams)):
        A[2 * slot:2 * slot + 2, slot * width:(slot + 1) * width] = rows
    return cols, A


def _sinr_constraint(builder: ProgramBuilder, layout: SubproblemLayout, h_row, w_tilde, t_tilde: float,
                     signal: tuple[int, int], interferers: list[tuple[int, int]], label: str):
    c_tilde = np.vdot(h_row, w_tilde)
    gain_row = complex_rows(np.conj(c_tilde) * h_row.conj())[0]
    k, o = signal
    # interference + 1 <= 2 Re{c~* h^H w}/t~ - |c~|^2 t / t~^2
    rhs = affine((layout.beam_cols(k, o), 2.0 * gain_row / t_tilde),
                 (layout.t[k, o], -abs(c_tilde) ** 2 / t_tilde ** 2), const=-1.0)
    cols, A = _interference_rows(h_row, layout, interferers)
    if cols is None:
        builder.add_linear(affine((rhs.idx, -rhs.val), const=-rhs.const), label=label)
    else:
        builder.add_quadratic(cols, A, np.zeros(A.shape[0]), rhs, label=label)


def build_subproblem(ctx: SurrogateContext, v: PhaseShiftVector, S: CmdSets, ch: ChannelSet,
                     alloc: FronthaulAllocation, config: SimConfig) -> tuple[ConvexProgram, SubproblemLayout]:
    """
    Assembles the convex inner approximation around ``ctx.point``.

    In Dinkelbach mode the objective minimized is ``-(R_t - lambda (P_tr + P_fixed + P_fh~))`` with the power
    moved into an epigraph variable ``u``; in repair mode it is ``-tau`` where every user gets
    ``r_min + tau``.

    :return: tuple[ConvexProgram, SubproblemLayout]: The program and the map back to a LambdaPoint.
    """
    point = ctx.point
    N, L, K = config.N, config.L, config.K
    if point.w.w.shape != (K, 2, N * L) or S.K != K or ch.K != K or ch.N != N or len(alloc.C) != N:
        raise ValueError("subproblem inputs have inconsistent dimensions")
    params = config.beamform
    b_mhz = config.bandwidth_mhz
    heff = effective_channels(ch.normalized(), v)
    live = point.live
    links = np.ones((N, K), dtype=bool) if ctx.support is None else ctx.support
    locked = ctx.support is not None

    builder = ProgramBuilder()
    w_idx = builder.variables("w", (K, 2, 2 * N * L))
    t_idx = builder.variables("t", (K, 2), lower=0.0)
    R_idx = builder.variables("R", (K, 2), lower=0.0)
    d_idx = builder.variables("d", (N, K, 2), lower=0.0, upper=1.0)
    q_idx = builder.variables("q", (K, 2), lower=0.0)
    u_idx = None if ctx.repair else int(builder.variables("u", (1,), lower=0.0)[0])
    tau_idx = int(builder.variables("tau", (1,), lower=-config.r_min - params.qos_margin, upper=0.0)[0]) \
        if ctx.repair else None
    layout = SubproblemLayout(w_idx, t_idx, R_idx, d_idx, q_idx, N, u_idx, tau_idx)

    carrying = np.zeros((N, K, 2), dtype=bool)
    for k in range(K):
        for o in Stream:
            if not live[k, o]:
                builder.fix(w_idx[k, o])
                builder.fix([t_idx[k, o], R_idx[k, o], q_idx[k, o]])
                builder.fix(d_idx[:, k, o])
                continue
            for n in range(N):
                if links[n, k]:
                    carrying[n, k, o] = True
                    if locked:
                        builder.fix(d_idx[n, k, o], 1.0)
                else:
                    builder.fix(layout.block_cols(n, k, o, L))
                    builder.fix(d_idx[n, k, o])

    power_budget = config.p_max_watts * (1.0 - params.power_margin)
    for n in range(N):
        cols = np.concatenate([layout.block_cols(n, k, o, L) for k in range(K) for o in Stream if carrying[n, k, o]]
                              or [np.zeros(0, dtype=int)])
        if len(cols):
            builder.add_quadratic(cols, np.eye(len(cols)), np.zeros(len(cols)), affine(const=power_budget),
                                  label=f"power[{n}]")

    for k in range(K):
        shortfall = config.r_min + params.qos_margin
        parts = [(R_idx[k], -1.0)] + ([(tau_idx, 1.0)] if ctx.repair else [])
        builder.add_linear(affine(*parts, const=shortfall), label=f"qos[{k}]")

    live_beams = [(j, o) for j in range(K) for o in Stream if live[j, o]]
    for k in range(K):
        for o in Stream:
            if not live[k, o]:
                continue
            builder.add_log(R_idx[k, o], t_idx[k, o], b_mhz, label=f"rate[{k},{o.name.lower()}]")
            t_tilde = point.t[k, o]
            slope = 1.0 / ((1.0 + t_tilde) * LN2)
            builder.add_linear(affine((t_idx[k, o], slope), (q_idx[k, o], -1.0),
                                      const=math.log2(1.0 + t_tilde) - slope * t_tilde),
                               label=f"log_lin[{k},{o.name.lower()}]")

    w_tilde = point.w
    for k in range(K):
        if live[k, Stream.PRIVATE]:
            interferers = [(j, o) for j, o in live_beams
                           if (o == Stream.PRIVATE and j != k) or (o == Stream.COMMON and j not in S.phi[k])]
            _sinr_constraint(builder, layout, heff[k], w_tilde.private[k], point.t[k, Stream.PRIVATE],
                             (k, Stream.PRIVATE), interferers, f"sinr_p[{k}]")
        if live[k, Stream.COMMON]:
            for i in S.M(k):
                omega = S.omega(i, k)
                interferers = [(j, o) for j, o in live_beams
                               if o == Stream.PRIVATE or j not in S.phi[i] or j in omega]
                _sinr_constraint(builder, layout, heff[i], w_tilde.common[k], point.t[k, Stream.COMMON],
                                 (k, Stream.COMMON), interferers, f"sinr_c[{i},{k}]")

    alpha = ctx.alpha
    link_powers = w_tilde.link_powers()
    if not locked:
        for n, k, o in zip(*np.nonzero(carrying)):
            x_tilde = link_powers[n, k, o]
            slope = float(f_alpha_grad(x_tilde, alpha))
            cols = layout.block_cols(n, k, o, L)
            rhs = affine((d_idx[n, k, o], 1.0), const=-float(f_alpha(x_tilde, alpha)) + slope * x_tilde)
            builder.add_quadratic(cols, math.sqrt(slope) * np.eye(len(cols)), np.zeros(len(cols)), rhs,
                                  label=f"indicator[{n},{k},{o}]")

    def bilinear_terms(selection):
        """Rows of 0.5 (d+q)^2 and the linear part of the bilinear bound over ``selection`` links."""
        A = np.zeros((len(selection), 2 * len(selection)))
        cols, lin_idx, lin_val, const = [], [], [], 0.0
        for row, (n, k, o) in enumerate(selection):
            A[row, 2 * row:2 * row + 2] = math.sqrt(0.5)
            cols.extend([d_idx[n, k, o], q_idx[k, o]])
            d_t, q_t = point.d[n, k, o], point.q[k, o]
            lin_idx.extend([d_idx[n, k, o], q_idx[k, o]])
            lin_val.extend([d_t, q_t])
            const -= 0.5 * (d_t ** 2 + q_t ** 2)
        return np.asarray(cols, dtype=int), A, np.asarray(lin_idx, dtype=int), np.asarray(lin_val), const

    if not alloc.unlimited:
        for n in range(N):
            selection = [(n, k, o) for k in range(K) for o in Stream if carrying[n, k, o]]
            if not selection:
                continue
            capacity = (alloc.C[n] - params.fronthaul_margin) / b_mhz
            if locked:
                # d is pinned to one, so the load is linear in q
                q_cols = [q_idx[k, o] for _, k, o in selection]
                builder.add_linear(affine((q_cols, 1.0), const=-capacity), label=f"fronthaul[{n}]")
                continue
            cols, A, lin_idx, lin_val, const = bilinear_terms(selection)
            builder.add_quadratic(cols, A, np.zeros(A.shape[0]),
                                  affine((lin_idx, lin_val), const=capacity + const), label=f"fronthaul[{n}]")

    if ctx.repair:
        return builder.build(affine((tau_idx, -1.0))), layout

    kappa = config.P_mbps * b_mhz
    selection = [tuple(s) for s in zip(*np.nonzero(carrying))]
    beam_cols = np.concatenate([w_idx[j, o] for j, o in live_beams] or [np.zeros(0, dtype=int)])
    if locked:
        q_cols = [q_idx[k, o] for _, k, o in selection]
        rhs = affine((u_idx, 1.0), (q_cols, -kappa))
        builder.add_quadratic(beam_cols, np.eye(len(beam_cols)), np.zeros(len(beam_cols)), rhs,
                              label="power_epigraph")
    else:
        link_cols, A_links, lin_idx, lin_val, const = bilinear_terms(selection)
        cols = np.concatenate([beam_cols, link_cols]).astype(int)
        A = np.zeros((len(beam_cols) + A_links.shape[0], len(cols)))
        A[:len(beam_cols), :len(beam_cols)] = np.eye(len(beam_cols))
        A[len(beam_cols):, len(beam_cols):] = math.sqrt(kappa) * A_links
        rhs = affine((u_idx, 1.0), (lin_idx, kappa * lin_val), const=kappa * const)
        builder.add_quadratic(cols, A, np.zeros(A.shape[0]), rhs, label="power_epigraph")

    lam = ctx.lambda_dink
    objective = affine((R_idx.reshape(-1), -1.0), (u_idx, lam), const=lam * fixed_power(config, ctx.irs_enabled))
    return builder.build(objective), layout
