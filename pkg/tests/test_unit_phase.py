import math
import unittest

import numpy as np

from src.schemas.config import BeamformParams, PhaseParams, SimConfig
from src.services.beamform import solve_beamforming, unlimited_allocation
from src.services.model import BeamformerSet, CmdSets, Stream, achievable_rates, compute_sinrs, stream_gains
from src.services.phase import (PhaseStatus, build_lifted, lift_vector, meets_targets, optimize_phase,
                                phases_from_lifted, randomize_and_select, rank_one_gap, solve_phase_sdp)
from src.services.relax import lambda_from_beams, surrogate_objective
from src.services.scenario import ChannelSet, PhaseShiftVector, effective_channels


def random_network(K=2, N=1, L=2, R=3, seed=0):
    rng = np.random.default_rng(seed)

    def cn(*shape):
        return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)

    ch = ChannelSet(2.0 * cn(N, K, L), cn(N, L, R), cn(K, R), 1.0)
    w = BeamformerSet(0.5 * cn(K, 2, N * L), N)
    return ch, w


class TestLifting(unittest.TestCase):

    def setUp(self) -> None:
        self.ch, self.w = random_network()
        self.v = PhaseShiftVector.from_angles([0.3, -1.2, 2.5])

    def test_received_power_matches_exact_gains(self):
        ld = build_lifted(self.ch, self.w)
        exact = stream_gains(self.w, effective_channels(self.ch, self.v))
        np.testing.assert_allclose(ld.received_power(lift_vector(self.v)), exact)

    def test_lifted_matrices_are_hermitian(self):
        ld = build_lifted(self.ch, self.w)
        np.testing.assert_allclose(ld.M, np.conj(np.swapaxes(ld.M, -1, -2)))

    def test_rank_one_gap(self):
        x = lift_vector(self.v)
        self.assertAlmostEqual(rank_one_gap(np.outer(x, x.conj())), 0.0)
        self.assertAlmostEqual(rank_one_gap(np.eye(4)), 0.75)
        self.assertEqual(rank_one_gap(np.zeros((3, 3))), 0.0)

    def test_phases_from_lifted_removes_common_phase(self):
        x = lift_vector(self.v) * np.exp(1j * 0.7) * 3.0
        np.testing.assert_allclose(phases_from_lifted(x).v, self.v.v)

    def test_status_validity(self):
        self.assertTrue(PhaseStatus.accepted.valid)
        self.assertTrue(PhaseStatus.fallback.valid)
        self.assertFalse(PhaseStatus.kept_previous.valid)
        self.assertFalse(PhaseStatus.failed.valid)


class TestRandomization(unittest.TestCase):

    def setUp(self) -> None:
        self.ch, self.w = random_network()
        self.S = CmdSets.own(2)
        self.v_star = PhaseShiftVector.from_angles([1.0, 2.0, -0.5])
        x = lift_vector(self.v_star)
        self.V = np.outer(x, x.conj())
        self.v_prev = PhaseShiftVector.ones(3)

    def test_rank_one_matrix_gives_its_phases(self):
        params = PhaseParams(eta=1.0, G=5)
        v, status, feasible = randomize_and_select(self.V, np.zeros((2, 2)), self.S, self.ch, self.w, params,
                                                   np.random.default_rng(1), self.v_prev, 1e6)
        self.assertEqual(status, PhaseStatus.accepted)
        self.assertEqual(feasible, 5)
        np.testing.assert_allclose(v.v, self.v_star.v, atol=1e-5)

    def test_unreachable_targets_keep_previous_at_full_weight(self):
        params = PhaseParams(eta=1.0, G=5)
        v, status, feasible = randomize_and_select(self.V, np.full((2, 2), 1e9), self.S, self.ch, self.w, params,
                                                   np.random.default_rng(1), self.v_prev, 1e6)
        self.assertEqual(status, PhaseStatus.kept_previous)
        self.assertEqual(feasible, 0)
        self.assertIs(v, self.v_prev)

    def test_unreachable_targets_fall_back_below_full_weight(self):
        params = PhaseParams(eta=0.5, G=5)
        v, status, _ = randomize_and_select(self.V, np.full((2, 2), 1e9), self.S, self.ch, self.w, params,
                                            np.random.default_rng(1), self.v_prev, 1e6)
        self.assertEqual(status, PhaseStatus.fallback)
        np.testing.assert_allclose(v.v, self.v_star.v)

    def test_meets_targets(self):
        sinrs = compute_sinrs(self.w, self.v_star, self.S, self.ch)
        t = np.stack([sinrs.gamma_p, sinrs.common_min()], axis=1)
        self.assertTrue(meets_targets(self.w, self.v_star, self.S, self.ch, t))
        self.assertFalse(meets_targets(self.w, self.v_star, self.S, self.ch, 1.01 * t))


class TestOptimizePhase(unittest.TestCase):

    def test_returns_unit_modulus_phases_meeting_targets(self):
        ch, w = random_network(seed=3)
        config = SimConfig(N=1, L=2, K=2, R=3, B=1e6, G=10)
        S = CmdSets.own(2)
        v_prev = PhaseShiftVector.ones(3)
        sinrs = compute_sinrs(w, v_prev, S, ch)
        t = 0.5 * np.stack([sinrs.gamma_p, sinrs.common_min()], axis=1)
        result = optimize_phase(ch, w, t, v_prev, S, config, 1.0, np.random.default_rng(0))
        np.testing.assert_allclose(np.abs(result.v.v), 1.0)
        self.assertLessEqual(result.feasible, config.G)
        if result.status is PhaseStatus.accepted:
            self.assertTrue(meets_targets(w, result.v, S, ch, t))
        else:
            self.assertIs(result.v, v_prev)


class TestRankOneIdentity(unittest.TestCase):

    def setUp(self) -> None:
        self.rng = np.random.default_rng(5)

    def vector(self, m=5):
        return self.rng.standard_normal(m) + 1j * self.rng.standard_normal(m)

    def test_rank_one_matrices_have_no_gap(self):
        for _ in range(100):
            x = self.vector()
            V = float(self.rng.uniform(0.1, 10.0)) * np.outer(x, x.conj())
            self.assertLessEqual(rank_one_gap(V), 1e-10)

    def test_rank_two_matrices_have_a_gap(self):
        for _ in range(100):
            x, y = self.vector(), self.vector()
            V = np.outer(x, x.conj()) + float(self.rng.uniform(0.1, 1.0)) * np.outer(y, y.conj())
            eigenvalues = np.linalg.eigvalsh(V)
            self.assertGreater(rank_one_gap(V), 0.0)
            self.assertAlmostEqual(rank_one_gap(V), eigenvalues[-2] / eigenvalues[-2:].sum())


class TestRandomizationRecovery(unittest.TestCase):

    def test_rank_one_matrices_give_back_their_phases(self):
        ch, w = random_network(R=4, seed=8)
        rng = np.random.default_rng(9)
        params = PhaseParams(eta=1.0, G=3)
        for _ in range(50):
            v_star = PhaseShiftVector.from_angles(rng.uniform(-np.pi, np.pi, 4))
            x = lift_vector(v_star) * np.exp(1j * rng.uniform(-np.pi, np.pi)) * rng.uniform(0.5, 2.0)
            v, status, _ = randomize_and_select(np.outer(x, x.conj()), np.zeros((2, 2)), CmdSets.own(2), ch, w,
                                                params, rng, PhaseShiftVector.ones(4), 1e6)
            self.assertEqual(status, PhaseStatus.accepted)
            np.testing.assert_allclose(v.v, v_star.v, rtol=0.0, atol=1e-8)


class TestPhaseSdp(unittest.TestCase):

    def setUp(self) -> None:
        self.ch, self.w = random_network(seed=6)
        self.ld = build_lifted(self.ch, self.w)
        self.S = CmdSets.own(2)
        rng = np.random.default_rng(7)
        y = rng.standard_normal((4, 2)) + 1j * rng.standard_normal((4, 2))
        V0 = y @ y.conj().T
        scale = 1.0 / np.sqrt(np.diag(V0).real)
        self.V0 = V0 * np.outer(scale, scale)

    def test_zero_weight_residuals_equal_the_received_signal(self):
        result = solve_phase_sdp(self.ld, np.ones((2, 2)), self.S, PhaseParams(eta=0.0, dc_iters=2), self.V0)
        for k in range(2):
            for o in Stream:
                signal = np.einsum("rs,sr->", self.ld.M[k, k, o], result.V).real + abs(self.ld.b[k, k, o]) ** 2
                self.assertAlmostEqual(result.zeta[k, o], signal, delta=1e-5 * max(1.0, signal))
        np.testing.assert_allclose(np.diag(result.V).real, 1.0, atol=1e-6)

    def test_without_targets_the_penalty_drives_rank_one(self):
        self.assertGreater(rank_one_gap(self.V0), 1e-2)
        result = solve_phase_sdp(self.ld, np.zeros((2, 2)), self.S, PhaseParams(eta=1.0), self.V0)
        np.testing.assert_allclose(result.zeta, 0.0, atol=1e-7)
        self.assertLessEqual(result.gap, 1e-3)


class TestFullWeightStep(unittest.TestCase):

    def test_accepted_phases_keep_the_surrogate_efficiency(self):
        config = SimConfig(N=2, L=2, K=3, R=2, B=1e6, r_min=0.5, D=3, G=10, beamform=BeamformParams(Z_max=4))
        rng = np.random.default_rng(12)

        def cn(*shape):
            return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)

        ch = ChannelSet(3.0 * cn(2, 3, 2), 0.5 * cn(2, 2, 2), cn(3, 2), 1.0)
        S, v = CmdSets.own(3), PhaseShiftVector.ones(2)
        alloc = unlimited_allocation(config)
        point = solve_beamforming(ch, v, S, alloc, config).point
        before = surrogate_objective(point, config)
        result = optimize_phase(ch, point.w, point.t, v, S, config, 1.0, np.random.default_rng(0))
        after = surrogate_objective(lambda_from_beams(point.w, point.rates, result.v, S, ch, config), config)
        self.assertGreaterEqual(after, before * (1.0 - 1e-7))
        exact = achievable_rates(point.w, result.v, S, ch, config.B)
        self.assertTrue(np.all(exact.Rp >= point.rates.Rp * (1.0 - 1e-6)))
