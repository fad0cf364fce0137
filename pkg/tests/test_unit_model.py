import math
import unittest

import numpy as np

from src.schemas.config import SimConfig
from src.services.model import (BeamformerSet, CmdSets, PowerBreakdown, RateAllocation, Stream, achievable_rates,
                                check_feasibility, compute_sinrs, energy_efficiency, fixed_power, fronthaul_load,
                                losc, power_breakdown)
from src.services.scenario import ChannelSet, FronthaulAllocation, PhaseShiftVector, Regime, effective_channels


def two_user_channels() -> ChannelSet:
    """One single-antenna BS, users with gains 1 and 4, IRS channels switched off."""
    h_direct = np.array([[[1.0], [2.0]]], dtype=complex)
    return ChannelSet(h_direct, np.zeros((1, 1, 1), dtype=complex), np.zeros((2, 1), dtype=complex), 1.0)


class TestCmdSets(unittest.TestCase):

    def test_own_sets(self):
        S = CmdSets.own(3)
        self.assertEqual(S.phi, ((0,), (1,), (2,)))
        self.assertEqual(S.M(1), (1,))
        self.assertEqual(S.phi_bar(0), (1, 2))

    def test_with_member_and_omega(self):
        S = CmdSets.own(3).with_member(0, 2, 0)
        self.assertEqual(S.phi[0], (2, 0))
        self.assertEqual(S.M(2), (0, 2))
        self.assertEqual(S.omega(0, 2), (0,))
        self.assertEqual(S.omega(0, 1), ())
        self.assertTrue(S.membership()[0, 2])

    def test_with_member_is_idempotent(self):
        S = CmdSets.own(2)
        self.assertIs(S.with_member(0, 0, 0), S)

    def test_rejects_repeated_users(self):
        with self.assertRaises(ValueError):
            CmdSets(((0, 0), (1,)))

    def test_layer_limit(self):
        with self.assertRaises(ValueError):
            CmdSets(((0, 1), (1,)), max_layers=1)

    def test_tin(self):
        self.assertTrue(CmdSets.tin(4).is_tin())


class TestExactModel(unittest.TestCase):

    def setUp(self) -> None:
        self.ch = two_user_channels()
        self.v = PhaseShiftVector.ones(1)
        self.config = SimConfig(N=1, L=1, K=2, R=1, B=1e6, r_min=0.1, D=2)
        w = np.zeros((2, 2, 1), dtype=complex)
        w[0, Stream.PRIVATE] = 1.0
        w[1, Stream.PRIVATE] = 1.0
        w[0, Stream.COMMON] = 1.0
        self.w = BeamformerSet(w, 1)
        self.S = CmdSets.own(2)
        self.alloc = FronthaulAllocation(np.array([10.0]), Regime.partially_connected)

    def test_tin_sinrs(self):
        w = BeamformerSet(np.where(np.arange(2)[None, :, None] == Stream.PRIVATE, self.w.w, 0.0), 1)
        sinrs = compute_sinrs(w, self.v, CmdSets.tin(2), self.ch)
        np.testing.assert_allclose(sinrs.gamma_p, [0.5, 0.8])

    def test_rate_split_sinrs(self):
        sinrs = compute_sinrs(self.w, self.v, self.S, self.ch)
        np.testing.assert_allclose(sinrs.gamma_p, [0.5, 4.0 / 9.0])
        self.assertAlmostEqual(sinrs.gamma_c[0, 0], 1.0 / 3.0)
        np.testing.assert_allclose(sinrs.common_min(), [1.0 / 3.0, 0.0])

    def test_achievable_rates(self):
        rates = achievable_rates(self.w, self.v, self.S, self.ch, self.config.B)
        np.testing.assert_allclose(rates.Rp, [math.log2(1.5), math.log2(13.0 / 9.0)])
        np.testing.assert_allclose(rates.Rc, [math.log2(4.0 / 3.0), 0.0])
        self.assertAlmostEqual(rates.per_user[0], 1.0)

    def test_fronthaul_load_and_losc(self):
        rates = RateAllocation(np.array([0.5, 0.4]), np.array([0.2, 0.0]))
        np.testing.assert_allclose(fronthaul_load(self.w, rates, 1e-6), [1.1])
        self.assertEqual(losc(self.w, 1e-6), 2)
        self.assertEqual(losc(self.w.pruned(2.0), 1e-6), 0)

    def test_power_breakdown(self):
        rates = RateAllocation(np.array([0.5, 0.4]), np.array([0.2, 0.0]))
        powers = power_breakdown(self.w, rates, self.config)
        self.assertAlmostEqual(powers.P_tr, 3.0)
        self.assertAlmostEqual(powers.P_fh, self.config.P_mbps * 1.1)
        self.assertAlmostEqual(powers.P_circ, fixed_power(self.config))
        self.assertLess(fixed_power(self.config, irs_enabled=False), fixed_power(self.config))

    def test_energy_efficiency(self):
        rates = RateAllocation(np.array([1.0, 1.0]), np.array([0.0, 0.0]))
        self.assertAlmostEqual(energy_efficiency(rates, PowerBreakdown(1.0, 2.0, 1.0)), 0.5)
        with self.assertRaises(ValueError):
            energy_efficiency(rates, PowerBreakdown(0.0, 0.0, 0.0))

    def test_achievable_point_is_feasible(self):
        rates = achievable_rates(self.w, self.v, self.S, self.ch, self.config.B)
        report = check_feasibility(self.w, self.v, rates, self.S, self.ch, self.alloc, self.config)
        self.assertTrue(report.overall_feasible)
        self.assertEqual(report.failed_checks(), [])

    def test_rate_above_achievable_is_reported(self):
        rates = achievable_rates(self.w, self.v, self.S, self.ch, self.config.B)
        rates = RateAllocation(rates.Rp + np.array([0.1, 0.0]), rates.Rc)
        report = check_feasibility(self.w, self.v, rates, self.S, self.ch, self.alloc, self.config)
        self.assertFalse(report.private_rate_ok)
        self.assertAlmostEqual(report.private_rate_violation, 0.1)

    def test_fronthaul_and_modulus_violations(self):
        rates = achievable_rates(self.w, self.v, self.S, self.ch, self.config.B)
        tight = FronthaulAllocation(np.array([0.5]), Regime.partially_connected)
        report = check_feasibility(self.w, np.array([0.5 + 0j]), rates, self.S, self.ch, tight, self.config)
        self.assertEqual(set(report.failed_checks()), {"fronthaul", "unit_modulus"})
        self.assertAlmostEqual(report.unit_modulus_violation, 0.5)

    def test_unlimited_fronthaul_never_binds(self):
        rates = achievable_rates(self.w, self.v, self.S, self.ch, self.config.B)
        unlimited = FronthaulAllocation(np.array([math.inf]), Regime.unlimited)
        report = check_feasibility(self.w, self.v, rates, self.S, self.ch, unlimited, self.config)
        self.assertTrue(report.fronthaul_ok)

    def test_power_violation(self):
        big = BeamformerSet(self.w.w * 10.0, 1)
        report = check_feasibility(big, self.v, RateAllocation.zeros(2), self.S, self.ch, self.alloc, self.config)
        self.assertFalse(report.power_ok)
        self.assertFalse(report.qos_ok)


def successive_decoding_sinrs(w: BeamformerSet, heff: np.ndarray, S: CmdSets, noise: float):
    """Reference SINRs from an explicit walk through each user's successive cancellation."""
    K = w.K
    gamma_p, gamma_c = np.empty(K), np.full((K, K), np.nan)
    for i in range(K):
        received = {(j, o): abs(np.vdot(heff[i], w.w[j, o])) ** 2 for j in range(K) for o in Stream}
        remaining = set(received)
        for k in S.phi[i]:
            remaining.discard((k, Stream.COMMON))
            gamma_c[i, k] = received[(k, Stream.COMMON)] / (sum(received[s] for s in remaining) + noise)
        for k in range(K):
            if k not in S.phi[i]:
                others = remaining - {(k, Stream.COMMON)}
                gamma_c[i, k] = received[(k, Stream.COMMON)] / (sum(received[s] for s in others) + noise)
        remaining.discard((i, Stream.PRIVATE))
        gamma_p[i] = received[(i, Stream.PRIVATE)] / (sum(received[s] for s in remaining) + noise)
    return gamma_p, gamma_c


class TestSinrOracle(unittest.TestCase):

    def setUp(self) -> None:
        rng = np.random.default_rng(17)

        def cn(*shape):
            return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)

        self.ch = ChannelSet(cn(2, 3, 2), 0.3 * cn(2, 2, 4), cn(3, 4), 0.2)
        self.v = PhaseShiftVector(np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, 4)))
        self.w = BeamformerSet(cn(3, 2, 4), 2)
        self.S = CmdSets(((0, 2), (1, 0), (2,)))
        self.heff = effective_channels(self.ch, self.v)

    def test_matches_successive_cancellation_walk(self):
        sinrs = compute_sinrs(self.w, self.v, self.S, self.ch)
        gamma_p, gamma_c = successive_decoding_sinrs(self.w, self.heff, self.S, self.ch.noise_power)
        np.testing.assert_allclose(sinrs.gamma_p, gamma_p, rtol=1e-10)
        np.testing.assert_allclose(sinrs.gamma_c, gamma_c, rtol=1e-10)

    def test_tin_matches_the_walk(self):
        S = CmdSets.tin(3)
        sinrs = compute_sinrs(self.w, self.v, S, self.ch)
        gamma_p, _ = successive_decoding_sinrs(self.w, self.heff, S, self.ch.noise_power)
        np.testing.assert_allclose(sinrs.gamma_p, gamma_p, rtol=1e-10)

    def test_stronger_private_beam_helps_its_user_only(self):
        before = compute_sinrs(self.w, self.v, self.S, self.ch)
        w = self.w.w.copy()
        w[1, Stream.PRIVATE] *= 2.0
        after = compute_sinrs(BeamformerSet(w, 2), self.v, self.S, self.ch)
        self.assertGreater(after.gamma_p[1], before.gamma_p[1])
        self.assertTrue(np.all(np.delete(after.gamma_p, 1) < np.delete(before.gamma_p, 1)))

    def test_more_noise_lowers_every_sinr(self):
        before = compute_sinrs(self.w, self.v, self.S, self.ch)
        noisy = ChannelSet(self.ch.h_direct, self.ch.H_bs_irs, self.ch.h_irs_user, 2.0 * self.ch.noise_power)
        after = compute_sinrs(self.w, self.v, self.S, noisy)
        self.assertTrue(np.all(after.gamma_p < before.gamma_p))
        self.assertTrue(np.all(after.gamma_c < before.gamma_c))

    def test_cancelled_common_beam_does_not_affect_later_layers(self):
        before = compute_sinrs(self.w, self.v, self.S, self.ch)
        w = self.w.w.copy()
        w[0, Stream.COMMON] *= 5.0
        after = compute_sinrs(BeamformerSet(w, 2), self.v, self.S, self.ch)
        self.assertAlmostEqual(after.gamma_c[0, 2], before.gamma_c[0, 2])
        self.assertAlmostEqual(after.gamma_p[0], before.gamma_p[0])
        self.assertLess(after.gamma_c[2, 2], before.gamma_c[2, 2])
