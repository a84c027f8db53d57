#!/usr/bin/env python
"""
Tests for orbital counting, exponent fits, exact Poincare sets of pure
Schottky products and growth of Cayley graphs.

Run with:
    python -m unittest test.test_poincare
"""

import logging
import math
import unittest

from core.actions import TranslationLattice, pure_schottky_tree
from core.errors import WorkbenchError
from core.group_actions import Factor, orbit_enumerate
from core.poincare import (
    UNDECIDED,
    ball_sizes,
    build_profile,
    exponent_estimate,
    factor_series,
    growth_rate,
    modified_exponent,
    parabolic_bound_check,
    profile_from_action,
    schottky_poincare_set,
)
from core.rtree import CountingSpec

logging.basicConfig(level=logging.WARNING, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')


class TestProfiles(unittest.TestCase):
    """Counting functions and partial series of orbit samples."""

    def test_counting_and_series(self):
        profile = build_profile([0.0, 1.0, 1.0, 2.5])
        self.assertEqual(profile.counting(0.5), 1)
        self.assertEqual(profile.counting(1.0), 3)
        self.assertEqual(profile.counting(10.0), 4)
        self.assertAlmostEqual(profile.poincare_series(1.0), 1.0 + 2.0 / math.e + math.exp(-2.5), delta=1e-12)

    def test_identity_required(self):
        with self.assertRaises(WorkbenchError) as ctx:
            build_profile([1.0, 2.0])
        self.assertEqual(ctx.exception.code, "EMPTY_ORBIT")
        with self.assertRaises(WorkbenchError):
            build_profile([])

    def test_bounded_orbit_has_no_exponent(self):
        with self.assertRaises(WorkbenchError) as ctx:
            exponent_estimate(build_profile([0.0, 1.0, 1.0, 1.0], 10.0))
        self.assertEqual(ctx.exception.code, "INSUFFICIENT_RANGE")

    def test_free_group_exponent(self):
        action = pure_schottky_tree([Factor.cyclic(1.0), Factor.cyclic(1.0)])
        profile = profile_from_action(action, 9.0)
        self.assertEqual(profile.counting(9.0), 2 * 3 ** 9 - 1)
        fit = exponent_estimate(profile)
        self.assertAlmostEqual(fit["delta_hat"], math.log(3.0), delta=0.01)
        self.assertLessEqual(fit["low"], fit["delta_hat"])


class TestModifiedExponent(unittest.TestCase):
    """Separated nets of an orbit sample."""

    def setUp(self):
        self.action = pure_schottky_tree([Factor.cyclic(1.0), Factor.cyclic(1.0)])
        self.orbit = orbit_enumerate(self.action, max_norm=5.0)

    def test_unit_separation_keeps_every_point(self):
        net = modified_exponent(self.orbit, 1.0, self.action.distance, window=1.0)
        self.assertEqual(len(net.elements), len(self.orbit))

    def test_net_is_separated(self):
        net = modified_exponent(self.orbit, 2.5, self.action.distance, window=1.0)
        self.assertLess(len(net.elements), len(self.orbit))
        for i, g in enumerate(net.elements[:40]):
            for h in net.elements[i + 1:40]:
                self.assertGreaterEqual(self.action.distance(g, h), 2.5 - 1e-12)

    def test_invalid_radius(self):
        with self.assertRaises(WorkbenchError) as ctx:
            modified_exponent(self.orbit, 0.0, self.action.distance)
        self.assertEqual(ctx.exception.code, "OUT_OF_RANGE")
        with self.assertRaises(WorkbenchError):
            modified_exponent([], 1.0, self.action.distance)


class TestSchottkyPoincareSet(unittest.TestCase):
    """Exact exponents from the spectral radius criterion."""

    def test_free_groups(self):
        for rank, expected in ((2, 3.0), (3, 5.0), (4, 7.0)):
            result = schottky_poincare_set([Factor.cyclic(1.0)] * rank)
            self.assertAlmostEqual(result["delta"], math.log(expected), delta=1e-10)
            self.assertIs(result["divergence_type"], True)
            self.assertTrue(result["poincare_set"].endswith("]"))

    def test_modular_group_shape(self):
        result = schottky_poincare_set([Factor.cyclic(1.0), Factor.finite(2, 1.0)])
        self.assertAlmostEqual(result["delta"], math.log(2.0), delta=1e-10)

    def test_translation_scales_exponent(self):
        result = schottky_poincare_set([Factor.cyclic(2.0), Factor.cyclic(2.0)])
        self.assertAlmostEqual(result["delta"], 0.5 * math.log(3.0), delta=1e-10)

    def test_single_factor(self):
        result = schottky_poincare_set([Factor.cyclic(1.0)])
        self.assertEqual(result["delta"], 0.0)

    def test_empty(self):
        with self.assertRaises(WorkbenchError) as ctx:
            schottky_poincare_set([])
        self.assertEqual(ctx.exception.code, "EMPTY_FACTOR")

    def test_counting_factor_series(self):
        spec = CountingSpec((1.0,), (2,), ("arithmetic", 1.0, 2))
        series = factor_series(Factor.counting_group(spec))
        self.assertAlmostEqual(series.delta, math.log(2.0), delta=1e-12)
        self.assertTrue(series.divergent)
        self.assertTrue(math.isinf(series.q(0.5)))
        self.assertNotEqual(series.divergent, UNDECIDED)

    def test_cyclic_series_closed_form(self):
        series = factor_series(Factor.cyclic(1.0))
        self.assertAlmostEqual(series.q(math.log(3.0)), 1.0, delta=1e-12)


class TestGrowth(unittest.TestCase):
    """Ball sizes of Cayley graphs and the parabolic lower bound."""

    def test_ball_sizes(self):
        self.assertEqual(ball_sizes({"group": "Z^d", "rank": 1}, 3), [1, 3, 5, 7])
        self.assertEqual(ball_sizes({"group": "Z^d", "rank": 2}, 2), [1, 5, 13])
        self.assertEqual(ball_sizes({"group": "heisenberg"}, 1), [1, 5])

    def test_lattice_growth_degree(self):
        for rank in (1, 2):
            fit = growth_rate({"group": "Z^d", "rank": rank}, 20)
            self.assertAlmostEqual(fit["alpha_hat"], float(rank), delta=0.05)

    def test_radius_too_small(self):
        with self.assertRaises(WorkbenchError):
            growth_rate({"group": "Z^d", "rank": 1}, 4)

    def test_unknown_group(self):
        with self.assertRaises(WorkbenchError):
            ball_sizes({"group": "baumslag-solitar"}, 2)

    def test_mismatched_group(self):
        with self.assertRaises(WorkbenchError) as ctx:
            parabolic_bound_check(TranslationLattice(2), {"group": "Z^d", "rank": 1}, 8.0)
        self.assertEqual(ctx.exception.code, "MISMATCHED_GROUP")


if __name__ == "__main__":
    unittest.main()
