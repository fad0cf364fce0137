import math
import unittest

import numpy as np

from src.schemas.config import SimConfig
from src.services.exceptions import InfeasibleAllocationError
from src.services.scenario import (PhaseShiftVector, Regime, allocate_fronthaul, effective_channel,
                                   effective_channels, generate_channels, generate_topology, path_loss_db)


class TestFronthaulAllocation(unittest.TestCase):

    def setUp(self) -> None:
        self.config = SimConfig()

    def test_minimum_capacity_gives_one_slot_per_user_pair(self):
        alloc = allocate_fronthaul(18.0, self.config)
        self.assertEqual(alloc.regime, Regime.partially_connected)
        np.testing.assert_allclose(alloc.C, [6.0, 6.0, 6.0])

    def test_remainder_slots_go_to_first_bss(self):
        alloc = allocate_fronthaul(24.0, self.config)
        np.testing.assert_allclose(alloc.C, [9.0, 9.0, 6.0])
        self.assertAlmostEqual(alloc.C_total, 24.0)

    def test_partial_slots_are_floored(self):
        alloc = allocate_fronthaul(20.0, self.config)
        np.testing.assert_allclose(alloc.C, [6.0, 6.0, 6.0])

    def test_at_transition_point_split_is_equal(self):
        alloc = allocate_fronthaul(54.0, self.config)
        self.assertEqual(alloc.regime, Regime.fully_connected)
        np.testing.assert_allclose(alloc.C, [18.0, 18.0, 18.0])

    def test_above_transition_point_split_is_equal(self):
        alloc = allocate_fronthaul(90.0, self.config)
        np.testing.assert_allclose(alloc.C, [30.0, 30.0, 30.0])

    def test_below_minimum_raises(self):
        with self.assertRaises(InfeasibleAllocationError):
            allocate_fronthaul(8.0, self.config)

    def test_infinite_capacity_is_unlimited(self):
        alloc = allocate_fronthaul(math.inf, self.config)
        self.assertTrue(alloc.unlimited)
        self.assertTrue(np.all(np.isinf(alloc.C)))


class TestChannels(unittest.TestCase):

    def setUp(self) -> None:
        self.config = SimConfig(N=2, L=2, K=3, R=4)

    def draw(self, seed):
        rng = np.random.default_rng(seed)
        return generate_channels(generate_topology(self.config, rng), self.config, rng)

    def test_shapes(self):
        ch = self.draw(1)
        self.assertEqual(ch.h_direct.shape, (2, 3, 2))
        self.assertEqual(ch.H_bs_irs.shape, (2, 2, 4))
        self.assertEqual(ch.h_irs_user.shape, (3, 4))
        self.assertEqual(ch.h_agg.shape, (3, 4))
        self.assertEqual(ch.H_composite.shape, (3, 4, 4))

    def test_same_stream_same_channels(self):
        self.assertEqual(self.draw(5).fingerprint(), self.draw(5).fingerprint())
        self.assertNotEqual(self.draw(5).fingerprint(), self.draw(6).fingerprint())

    def test_normalization_keeps_snr(self):
        ch = self.draw(2)
        norm = ch.normalized()
        self.assertEqual(norm.noise_power, 1.0)
        np.testing.assert_allclose(np.abs(norm.h_agg) ** 2, np.abs(ch.h_agg) ** 2 / ch.noise_power)

    def test_without_irs_leaves_direct_channel(self):
        ch = self.draw(3)
        v = PhaseShiftVector.from_angles(np.linspace(0, 1, ch.R))
        np.testing.assert_allclose(effective_channels(ch.without_irs(), v), ch.h_agg)

    def test_effective_channel_matches_batch(self):
        ch = self.draw(4)
        v = PhaseShiftVector.from_angles(np.arange(ch.R))
        batch = effective_channels(ch, v)
        for k in range(ch.K):
            np.testing.assert_allclose(effective_channel(ch, v, k), batch[k])

    def test_path_loss_grows_with_distance(self):
        self.assertAlmostEqual(float(path_loss_db(1000.0)), 148.1)
        self.assertLess(float(path_loss_db(100.0)), float(path_loss_db(200.0)))


class TestPhaseShiftVector(unittest.TestCase):

    def test_rejects_non_unit_modulus(self):
        with self.assertRaises(ValueError):
            PhaseShiftVector(np.array([1.0, 0.5]))

    def test_project_lands_on_unit_circle(self):
        v = PhaseShiftVector.project(np.array([2.0, -3j, 0.0]))
        np.testing.assert_allclose(np.abs(v.v), 1.0)
        self.assertAlmostEqual(v.v[2], 1.0)
