"""
End-to-end checks on full-size drops and sweeps. Every test here takes minutes to hours, so the whole module
is marked ``slow``; run it with ``pytest -m slow``.
"""
import itertools
import math
import tempfile
import unittest

import numpy as np
import pytest

from src.schemas.config import OuterParams, SimConfig
from src.schemas.scheme import SchemeSpec
from src.schemas.sweep import SweepSpec
from src.services.exceptions import InfeasibleDropError
from src.services.harness import draw_channels, run_montecarlo
from src.services.model import fixed_power
from src.services.orchestrate import SolutionRecord, audit_record, run_alternating
from src.services.scenario import (ChannelSet, FronthaulAllocation, PhaseShiftVector, allocate_fronthaul,
                                   effective_channels)

pytestmark = pytest.mark.slow


def solve_drop(config: SimConfig, alloc: FronthaulAllocation, scheme: SchemeSpec, drop: int,
               attempts: int = 5) -> SolutionRecord:
    for attempt in range(attempts):
        ch = draw_channels(config, drop, attempt)
        try:
            return run_alternating(ch, alloc, scheme, config, seed=(config.seed, drop, attempt))
        except InfeasibleDropError:
            continue
    raise AssertionError(f"drop {drop} stayed infeasible over {attempts} draws")


def unit(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x)


def sampled_tin_efficiency(ch: ChannelSet, config: SimConfig) -> tuple[float, int]:
    """
    Best exact efficiency of two single-BS TIN users over a grid of phases, beam directions and powers.

    Directions blend each user's matched and zero-forcing beams; powers run over a geometric grid within
    the BS budget. Returns the best QoS-feasible efficiency and the number of evaluated samples.
    """
    angles = np.linspace(0.0, 2.0 * np.pi, 8, endpoint=False)
    blends = np.linspace(0.0, 1.0, 6)
    levels = np.geomspace(config.p_max_watts / 1000.0, config.p_max_watts, 12)
    p1, p2 = (a.reshape(-1) for a in np.meshgrid(levels, levels, indexing="ij"))
    within = p1 + p2 <= config.p_max_watts
    p1, p2 = p1[within], p2[within]
    fixed = fixed_power(config, irs_enabled=True)
    best, samples = -np.inf, 0

    for phases in itertools.product(angles, repeat=config.R):
        h = effective_channels(ch, PhaseShiftVector.from_angles(list(phases)))
        matched = [unit(h[k]) for k in range(2)]
        forcing = [unit(h[k] - np.vdot(h[1 - k], h[k]) / np.vdot(h[1 - k], h[1 - k]) * h[1 - k]) for k in range(2)]
        for b1, b2 in itertools.product(blends, repeat=2):
            u = [unit((1.0 - b) * matched[k] + b * forcing[k]) for k, b in enumerate((b1, b2))]
            G = np.array([[abs(np.vdot(h[i], u[j])) ** 2 for j in range(2)] for i in range(2)])
            sinr1 = p1 * G[0, 0] / (p2 * G[0, 1] + ch.noise_power)
            sinr2 = p2 * G[1, 1] / (p1 * G[1, 0] + ch.noise_power)
            r1 = config.bandwidth_mhz * np.log2(1.0 + sinr1)
            r2 = config.bandwidth_mhz * np.log2(1.0 + sinr2)
            total = r1 + r2
            ee = total / (p1 + p2 + fixed + config.P_mbps * total)
            feasible = (r1 >= config.r_min) & (r2 >= config.r_min)
            samples += len(ee)
            if feasible.any():
                best = max(best, float(np.max(ee[feasible])))
    return best, samples


class TestMonotoneConvergence(unittest.TestCase):

    def test_objective_never_drops_at_full_interference_weight(self):
        config = SimConfig(seed=11, outer=OuterParams(eta_start=1.0))
        alloc = allocate_fronthaul(54.0, config)
        scheme = SchemeSpec.from_tag("d-RS+IRS")
        for drop in range(20):
            with self.subTest(drop=drop):
                record = solve_drop(config, alloc, scheme, drop)
                objectives = [row.objective for row in record.trace]
                for before, after in zip(objectives, objectives[1:]):
                    self.assertGreaterEqual(after, before * (1.0 - 1e-7))
                report = audit_record(record)
                self.assertTrue(report.overall_feasible, report.failed_checks())
                self.assertLessEqual(float(np.max(record.load - alloc.C)), 1e-6)
                np.testing.assert_allclose(np.abs(record.v.v), 1.0, atol=1e-6)


class TestSmallInstanceOracle(unittest.TestCase):

    def test_tin_efficiency_matches_a_sampled_search(self):
        config = SimConfig(N=1, L=2, K=2, R=2, D=2, seed=5)
        alloc = allocate_fronthaul(math.inf, config)
        scheme = SchemeSpec.from_tag("d-TIN+IRS")
        for attempt in range(5):
            ch = draw_channels(config, 0, attempt)
            try:
                record = run_alternating(ch, alloc, scheme, config, seed=(config.seed, 0, attempt))
            except InfeasibleDropError:
                continue
            break
        else:
            self.fail("no feasible draw for the small instance")
        best, samples = sampled_tin_efficiency(ch, config)
        self.assertGreaterEqual(samples, 100_000)
        self.assertTrue(np.isfinite(best))
        self.assertGreaterEqual(record.EE, 0.95 * best)


class TestSweepTrends(unittest.TestCase):

    @classmethod
    def setUpClass(cls) -> None:
        spec = SweepSpec(C_values=[18.0, 36.0, 54.0, 72.0, 90.0], schemes=["d-RS+IRS", "s-RS+IRS", "d-RS", "s-RS"],
                         drops=30, config=SimConfig(seed=2))
        with tempfile.TemporaryDirectory() as tmp:
            metrics = run_montecarlo(spec, tmp)
        cls.metrics = {(m.scheme, m.C_total): m for m in metrics}
        cls.capacities = spec.C_values

    def series(self, scheme: str, field: str) -> list[float]:
        return [getattr(self.metrics[(scheme, C)], field) for C in self.capacities]

    def test_efficiency_grows_with_fronthaul(self):
        for scheme in ("d-RS+IRS", "s-RS+IRS", "d-RS", "s-RS"):
            ee = self.series(scheme, "ee_mean")
            with self.subTest(scheme=scheme):
                self.assertTrue(all(b >= a * (1.0 - 1e-3) for a, b in zip(ee, ee[1:])), ee)

    def test_dynamic_beats_static_with_irs(self):
        dynamic, static = self.series("d-RS+IRS", "ee_mean"), self.series("s-RS+IRS", "ee_mean")
        self.assertTrue(all(d >= s for d, s in zip(dynamic, static)))
        gap_irs = dynamic[-1] - static[-1]
        gap_plain = self.metrics[("d-RS", 90.0)].ee_mean - self.metrics[("s-RS", 90.0)].ee_mean
        self.assertGreater(gap_irs, gap_plain)

    def test_irs_widens_the_dynamic_gain_at_its_peak(self):
        gains = self.series("d-RS+IRS", "gain_dynamic")
        peak = int(np.argmax(gains))
        self.assertGreater(gains[peak], self.series("d-RS", "gain_dynamic")[peak])

    def test_irs_needs_fewer_links_at_low_fronthaul(self):
        for C in (18.0, 36.0):
            with self.subTest(C=C):
                self.assertLessEqual(self.metrics[("d-RS+IRS", C)].losc_mean, self.metrics[("d-RS", C)].losc_mean)

    def test_common_rate_share_peaks_above_the_transition_point(self):
        share = self.series("d-RS+IRS", "common_proportion")
        inner = [i for i, C in enumerate(self.capacities) if 54.0 < C < 90.0]
        self.assertTrue(any(share[i] > share[i - 1] and share[i] > share[i + 1] for i in inner), share)
