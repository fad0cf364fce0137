"""
IRS phase-shift design for fixed beamformers.

The received power of every stream is quadratic in the phase vector; lifting
``v~ = [v; 1]`` to ``V = v~ v~^H`` turns the SINR constraints into linear matrix
inequalities. The rank-one requirement is handled by a difference-of-convex
penalty (nuclear minus spectral norm, the latter linearized at the previous
iterate), and a unit-modulus vector is recovered by Gaussian randomization.
"""
import enum
import logging
from dataclasses import dataclass

import numpy as np

from src.schemas.config import PhaseParams, SimConfig
from src.services import conic
from src.services.conic import ProgramBuilder, affine, hermitian_from_lifted, hermitian_lift
from src.services.exceptions import SolverFailure
from src.services.model import BeamformerSet, CmdSets, Stream, achievable_rates, compute_sinrs
from src.services.scenario import ChannelSet, PhaseShiftVector

logger = logging.getLogger(__name__)

FEASIBILITY_RTOL = 1e-9
EIGEN_RTOL = 1e-12


class PhaseStatus(str, enum.Enum):
    accepted = "accepted"
    fallback = "fallback"
    kept_previous = "kept_previous"
    failed = "failed"

    @property
    def valid(self) -> bool:
        return self in (PhaseStatus.accepted, PhaseStatus.fallback)


@dataclass(frozen=True)
class LiftedData:
    """
    Lifted received-power data, indexed ``[k, j, o]`` for user ``k`` receiving stream ``o`` of user ``j``.

    ``b`` is the direct-path term, ``a`` the per-element IRS term and ``M`` the Hermitian matrix of order
    R+1 with ``v~^H M v~ + |b|^2`` equal to the received power for ``v~ = [v; 1]``.
    """
    b: np.ndarray    # (K, K, 2)
    a: np.ndarray    # (K, K, 2, R)
    M: np.ndarray    # (K, K, 2, R+1, R+1)
    noise_power: float

    @property
    def K(self) -> int:
        return self.b.shape[0]

    @property
    def R(self) -> int:
        return self.a.shape[-1]

    def received_power(self, v_tilde: np.ndarray) -> np.ndarray:
        """Received powers ``(K, K, 2)`` for a lifted vector ``v~``, evaluated through ``M``."""
        quad = np.einsum("r,kjors,s->kjo", v_tilde.conj(), self.M, v_tilde).real
        return quad + np.abs(self.b) ** 2


@dataclass(frozen=True)
class PhaseSdpResult:
    V: np.ndarray
    zeta: np.ndarray    # (K, 2)
    gap: float
    iterations: int


@dataclass(frozen=True)
class PhaseResult:
    v: PhaseShiftVector
    status: PhaseStatus
    V: np.ndarray
    gap: float
    feasible: int


def build_lifted(ch: ChannelSet, w: BeamformerSet) -> LiftedData:
    b = np.einsum("km,jom->kjo", ch.h_agg.conj(), w.w)
    a = np.einsum("kmr,jom->kjor", ch.H_composite.conj(), w.w)
    R = ch.R
    M = np.zeros(a.shape[:3] + (R + 1, R + 1), dtype=complex)
    M[..., :R, :R] = a[..., :, None] * a[..., None, :].conj()
    M[..., :R, R] = a * b[..., None].conj()
    M[..., R, :R] = b[..., None] * a.conj()
    return LiftedData(b, a, M, ch.noise_power)


def lift_vector(v: PhaseShiftVector) -> np.ndarray:
    return np.concatenate([v.v, [1.0 + 0.0j]])


def rank_one_gap(V: np.ndarray) -> float:
    """Nuclear minus spectral norm of a PSD matrix, relative to the nuclear norm."""
    eigenvalues = np.clip(np.linalg.eigvalsh(V), 0.0, None)
    nuclear = float(eigenvalues.sum())
    if nuclear <= 0:
        return 0.0
    return (nuclear - float(eigenvalues[-1])) / nuclear


def leading_eigenvector(V: np.ndarray) -> np.ndarray:
    _, vectors = np.linalg.eigh(V)
    return vectors[:, -1]


def _interferers(S: CmdSets, k: int, o: Stream, i: int | None = None) -> list[tuple[int, Stream]]:
    K = S.K
    if o == Stream.PRIVATE:
        return [(j, Stream.PRIVATE) for j in range(K) if j != k] + [(l, Stream.COMMON) for l in S.phi_bar(k)]
    omega = S.omega(i, k)
    return ([(j, Stream.PRIVATE) for j in range(K)] + [(l, Stream.COMMON) for l in S.phi_bar(i)]
            + [(m, Stream.COMMON) for m in omega])


def solve_phase_sdp(ld: LiftedData, t: np.ndarray, S: CmdSets, params: PhaseParams,
                    V0: np.ndarray) -> PhaseSdpResult:
    """
    Lifted phase design with SINR residuals and a linearized rank-one penalty.

    Each pass maximizes ``rho * sum(zeta) - (1 - rho) (tr V - Re u^H V u)`` with ``u`` the leading
    eigenvector of the previous iterate, subject to the residual SINR constraints at targets ``eta * t``,
    a unit diagonal and ``V >= 0``. Passes stop once the relative rank gap is below ``rank_tol``.

    :param ld: LiftedData: Lifted data of the current beamformers.
    :param t: np.ndarray: SINR targets (K, 2); zero marks a stream that is switched off.
    :param S: CmdSets: Decoding sets.
    :param params: PhaseParams: eta, rho_penalty, dc_iters and rank_tol.
    :param V0: np.ndarray: PSD starting matrix with unit diagonal.
    :return: PhaseSdpResult: The last iterate, its residuals and rank gap.
    :raise SolverFailure: When a pass ends without an optimal certificate.
    """
    m = ld.R + 1
    eta, rho = params.eta, params.rho_penalty
    V = V0
    zeta = np.zeros((ld.K, 2))
    gap = rank_one_gap(V)

    for iteration in range(1, params.dc_iters + 1):
        builder = ProgramBuilder()
        zeta_idx = builder.variables("zeta", (ld.K, 2))
        block = builder.psd_block(2 * m)

        for k in range(ld.K):
            for o in Stream:
                if t[k, o] <= 0 or (o == Stream.COMMON and not S.M(k)):
                    builder.fix(zeta_idx[k, o])
        for k in range(ld.K):
            for o in Stream:
                if t[k, o] <= 0:
                    continue
                receivers = [k] if o == Stream.PRIVATE else list(S.M(k))
                for i in receivers:
                    interferers = _interferers(S, k, o, i)
                    target = eta * t[k, o]
                    matrix = -ld.M[i, k, o] + target * sum((ld.M[i, j, s] for j, s in interferers),
                                                           np.zeros((m, m), dtype=complex))
                    const = -abs(ld.b[i, k, o]) ** 2 + target * (
                        sum(abs(ld.b[i, j, s]) ** 2 for j, s in interferers) + ld.noise_power)
                    builder.add_linear(affine((zeta_idx[k, o], 1.0), const=const,
                                              blocks=((block, hermitian_lift(matrix)),)),
                                       label=f"residual[{i},{k},{o.name.lower()}]")
        for r in range(m):
            E = np.zeros((m, m))
            E[r, r] = 1.0
            builder.add_linear(affine(const=-1.0, blocks=((block, hermitian_lift(E)),)), equality=True,
                               label=f"diag[{r}]")

        u = leading_eigenvector(V)
        penalty = np.eye(m) - np.outer(u, u.conj())
        objective = affine((zeta_idx.reshape(-1), -rho), blocks=((block, (1.0 - rho) * hermitian_lift(penalty)),))
        solution = conic.solve(builder.build(objective))
        if not solution.optimal:
            raise SolverFailure(f"phase SDP pass {iteration} ended with status {solution.status.value} "
                                f"(residual {solution.residual:.3g}, {solution.message})", solution)

        V = hermitian_from_lifted(solution.mats[block])
        zeta = solution.x[zeta_idx]
        gap = rank_one_gap(V)
        logger.debug("phase dc_iter=%d gap=%.3g objective=%.6g", iteration, gap, -solution.objective)
        if gap <= params.rank_tol:
            break
    return PhaseSdpResult(V, zeta, gap, iteration)


def phases_from_lifted(x: np.ndarray) -> PhaseShiftVector:
    """Unit-modulus phases of ``x[:R] / x[R]``."""
    x = np.asarray(x, dtype=complex)
    anchor = x[-1]
    ratio = x[:-1] / anchor if abs(anchor) > 0 else x[:-1]
    return PhaseShiftVector.project(ratio)


def meets_targets(w: BeamformerSet, v: PhaseShiftVector, S: CmdSets, ch: ChannelSet, t: np.ndarray) -> bool:
    """Exact private and per-member common SINRs reach the targets ``t``."""
    sinrs = compute_sinrs(w, v, S, ch)
    slack = 1.0 - FEASIBILITY_RTOL
    for k in range(S.K):
        if t[k, Stream.PRIVATE] > 0 and sinrs.gamma_p[k] < slack * t[k, Stream.PRIVATE]:
            return False
        if t[k, Stream.COMMON] > 0 and any(sinrs.gamma_c[i, k] < slack * t[k, Stream.COMMON] for i in S.M(k)):
            return False
    return True


def randomize_and_select(V: np.ndarray, t: np.ndarray, S: CmdSets, ch: ChannelSet, w: BeamformerSet,
                         params: PhaseParams, rng: np.random.Generator, v_prev: PhaseShiftVector,
                         bandwidth: float) -> tuple[PhaseShiftVector, PhaseStatus, int]:
    """
    Draws ``G`` rank-one candidates from ``V`` and keeps the feasible one with the highest total rate.

    Without a feasible candidate the leading eigenvector is used when ``eta < 1``; with ``eta = 1`` the
    previous phases are kept.

    :return: tuple[PhaseShiftVector, PhaseStatus, int]: Selected phases, how they were chosen and the number
        of feasible candidates.
    """
    eigenvalues, vectors = np.linalg.eigh(V)
    eigenvalues = np.where(eigenvalues > EIGEN_RTOL * max(eigenvalues[-1], 0.0), eigenvalues, 0.0)
    root = vectors * np.sqrt(eigenvalues)[None, :]
    best, best_rate, feasible = None, -np.inf, 0
    for _ in range(params.G):
        z = (rng.standard_normal(V.shape[0]) + 1j * rng.standard_normal(V.shape[0])) / np.sqrt(2.0)
        candidate = phases_from_lifted(root @ z)
        if not meets_targets(w, candidate, S, ch, t):
            continue
        feasible += 1
        rate = achievable_rates(w, candidate, S, ch, bandwidth).total
        if rate > best_rate:
            best, best_rate = candidate, rate

    if best is not None:
        status = PhaseStatus.accepted
    elif params.eta < 1.0:
        best, status = phases_from_lifted(vectors[:, -1]), PhaseStatus.fallback
    else:
        best, status = v_prev, PhaseStatus.kept_previous
    logger.info("phase select status=%s feasible=%d/%d", status.value, feasible, params.G)
    return best, status, feasible


def optimize_phase(ch: ChannelSet, w: BeamformerSet, t: np.ndarray, v_prev: PhaseShiftVector, S: CmdSets,
                   config: SimConfig, eta: float, rng: np.random.Generator) -> PhaseResult:
    """
    Phase update for fixed beams: lifted SDP started from the previous phases, then randomization.

    :param t: np.ndarray: SINR targets (K, 2) of the current beamforming point.
    :param eta: float: Weight of the interference terms in the residual constraints.
    :param rng: np.random.Generator: Stream for the randomization candidates.
    """
    params = config.phase_params(eta)
    normalized = ch.normalized()
    ld = build_lifted(normalized, w)
    v_tilde = lift_vector(v_prev)
    sdp = solve_phase_sdp(ld, t, S, params, np.outer(v_tilde, v_tilde.conj()))
    v, status, feasible = randomize_and_select(sdp.V, t, S, ch, w, params, rng, v_prev, config.B)
    return PhaseResult(v, status, sdp.V, sdp.gap, feasible)
