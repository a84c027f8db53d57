#!/usr/bin/env python
"""
Tests for Patterson weights, atomic measures, exact cylinder measures on
Schottky trees, the shadow lemma, the global measure formula and the
doubling / exact-dimensionality verdicts.

Run with:
    python -m unittest test.test_measures
"""

import logging
import math
import unittest
from itertools import cycle

import numpy as np

from core.actions import geometric_product, pure_schottky_tree
from core.errors import WorkbenchError
from core.group_actions import Factor, Word, orbit_enumerate
from core.measures import (
    NO,
    YES,
    CuspLaw,
    cusp_tail_sums,
    cylinder_measure,
    doubling_and_dimension_tests,
    geometric_cylinder_measure,
    global_formula_verify,
    global_measure_context,
    global_measure_m,
    limit_point_samples,
    mu_s,
    patterson_weight,
    schottky_cylinder_measure,
    shadow_lemma_check,
)
from core.rtree import CountingSpec, RTree

logging.basicConfig(level=logging.WARNING, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')


class TestPattersonWeight(unittest.TestCase):
    """Slowly increasing weights for convergence-type orbits."""

    def test_divergence_type_gives_unit_weight(self):
        k = patterson_weight(math.log(3.0), lambda u: u * math.log(3.0), divergent=True)
        self.assertEqual(k(100.0), 1.0)
        self.assertEqual(k.log_k(50.0), 0.0)

    def test_convergence_type_weight_is_slowly_increasing(self):
        log_counting = lambda u: u - 2.0 * math.log(max(u, 1.0))
        k = patterson_weight(1.0, log_counting, divergent=False)
        self.assertEqual(k.log_k(0.0), 0.0)
        self.assertTrue(np.all(np.diff(k.slopes) <= 0.0))
        self.assertLessEqual(k.grid_violation(500, np.random.default_rng(8)), 1e-9)

    def test_infinite_exponent(self):
        with self.assertRaises(WorkbenchError) as ctx:
            patterson_weight(math.inf, lambda u: u)
        self.assertEqual(ctx.exception.code, "DELTA_INFINITE")


class TestAtomicMeasures(unittest.TestCase):
    """mu_s on enumerated orbits."""

    def setUp(self):
        action = pure_schottky_tree([Factor.cyclic(1.0), Factor.cyclic(1.0)])
        self.orbit = orbit_enumerate(action, max_norm=4.0)

    def test_normalized(self):
        measure = mu_s(self.orbit, 1.5)
        self.assertAlmostEqual(measure.total, 1.0, delta=1e-12)
        weights = dict((str(g), w) for g, w in measure.atoms)
        self.assertAlmostEqual(weights["(0,1)"] / weights["e"], math.exp(-1.5), delta=1e-12)

    def test_series_must_converge(self):
        with self.assertRaises(WorkbenchError) as ctx:
            mu_s(self.orbit, 1.0, delta=math.log(3.0))
        self.assertEqual(ctx.exception.code, "SERIES_DIVERGES")
        with self.assertRaises(WorkbenchError):
            mu_s([], 2.0)


class TestCylinderMeasure(unittest.TestCase):
    """The exact conformal measure of the free group on its tree."""

    def setUp(self):
        self.action = pure_schottky_tree([Factor.cyclic(1.0), Factor.cyclic(1.0)])
        self.measure = schottky_cylinder_measure(self.action)

    def test_exponent_and_weights(self):
        self.assertAlmostEqual(self.measure.delta, math.log(3.0), delta=1e-10)
        np.testing.assert_allclose(self.measure.c, [0.5, 0.5], atol=1e-9)
        self.assertAlmostEqual(self.measure.cylinder_mass(Word(((0, 1),))), 1.0 / 6.0, delta=1e-9)

    def test_first_syllables_cover_the_boundary(self):
        total = 0.0
        for a in (0, 1):
            for x in Factor.cyclic(1.0).elements(max_norm=40.0):
                total += self.measure.cylinder_mass(Word(((a, x),)))
        self.assertAlmostEqual(total, 1.0, delta=1e-9)

    def test_conformality(self):
        pairs = [(Word(((0, 1),)), Word(((1, 1),))), (Word(((1, -1), (0, 2))), Word(((1, 2), (0, 1))))]
        self.assertLessEqual(self.measure.conformality_residual(pairs), 1e-12)

    def test_shadow_lemma(self):
        report = shadow_lemma_check(self.measure, self.action, 0.0, 4.0)
        self.assertTrue(report["passed"])
        self.assertGreaterEqual(report["spread"], 1.0)
        self.assertEqual(report["count"], 2 * 3 ** 4 - 2)

    def test_level_cylinder_masses(self):
        # the Cayley cylinder of a reduced word of length n is the shadow of g o
        for n in range(1, 11):
            words = [Word(((0, n),)), Word(tuple((i % 2, 1 if i % 2 == 0 else -1) for i in range(n)))]
            if n >= 2:
                words.append(Word(((1, -(n - 1)), (0, 1))))
            expected = 1.0 / (4.0 * 3 ** (n - 1))
            for g in words:
                self.assertAlmostEqual(self.measure.shadow_mass(g, 0.0), expected, delta=1e-12 * expected)

    def test_requires_divergence_type_product(self):
        with self.assertRaises(WorkbenchError) as ctx:
            schottky_cylinder_measure(pure_schottky_tree([Factor.cyclic(1.0)]))
        self.assertEqual(ctx.exception.code, "NOT_DIVERGENCE_TYPE")


class TestGeometricProductMeasure(unittest.TestCase):
    """Cylinder measures weighted by the geometric-product norm."""

    def setUp(self):
        # tripod with legs of length 1 and a Z/2 fixing each leaf
        tree = RTree.from_edges([("o", "p0", 1.0), ("o", "p1", 1.0), ("o", "p2", 1.0)], root="o")
        self.action = geometric_product(tree, ["p0", "p1", "p2"], [Factor.finite(2)] * 3, o="o")
        self.measure = geometric_cylinder_measure(self.action)

    def test_exponent_and_weights(self):
        self.assertAlmostEqual(self.measure.delta, 0.5 * math.log(2.0), delta=1e-10)
        np.testing.assert_allclose(self.measure.h, [math.sqrt(2.0) / 3.0] * 3, atol=1e-9)
        np.testing.assert_allclose(self.measure.c, [2.0 / 3.0] * 3, atol=1e-9)
        self.assertEqual(cylinder_measure(self.action).delta, self.measure.delta)

    def test_level_masses(self):
        for n in range(1, 9):
            g = Word(tuple((i % 3, 1) for i in range(n)))
            self.assertAlmostEqual(self.action.norm(g), 2.0 * n, delta=1e-12)
            self.assertAlmostEqual(self.measure.cylinder_mass(g), (1.0 / 3.0) * 0.5 ** (n - 1), delta=1e-9)

    def test_additivity(self):
        for g in (Word(()), Word(((0, 1),)), Word(((0, 1), (2, 1)))):
            self.assertLessEqual(self.measure.additivity_residual(g), 1e-9)

    def test_balls_along_a_ray(self):
        letters = [(0, 1), (1, 1), (2, 1)]
        for t, expected in ((0.5, 1.0 / 3.0), (1.5, 1.0 / 3.0), (2.5, 1.0 / 6.0)):
            self.assertAlmostEqual(self.measure.ray_mass(cycle(letters), t), expected, delta=1e-9)

    def test_shadow_of_a_reflection(self):
        self.assertAlmostEqual(self.measure.shadow_mass(Word(((0, 1),)), 0.0), 1.0 / 3.0, delta=1e-9)

    def test_infinite_point_stabilizer(self):
        tree = RTree.from_edges([("o", "p", 1.0)], root="o")
        action = geometric_product(tree, ["o", "p"], [Factor.finite(2), Factor.cyclic(1.0)])
        with self.assertRaises(WorkbenchError) as ctx:
            geometric_cylinder_measure(action)
        self.assertEqual(ctx.exception.code, "NOT_DIVERGENCE_TYPE")

    def test_segment_with_cusp_and_loxodromic(self):
        tree = RTree.from_edges([("o", "p", 0.5), ("o", "q", 0.5)], root="o")
        spec = CountingSpec((1.0,), (2,), ("arithmetic", 1.0, 2))
        action = geometric_product(tree, ["p", "q"], [Factor.counting_group(spec), Factor.cyclic(1.0)],
                                   o="o", attached=[True, True])
        measure = cylinder_measure(action)
        # u = e^{-delta} solves Q_p(u) Q_q(u) u^2 = 1 with Q_p = u / (1 - 2u), Q_q = 2u / (1 - u)
        u = math.exp(-measure.delta)
        self.assertAlmostEqual(2 * u ** 4 - 2 * u ** 2 + 3 * u - 1, 0.0, delta=1e-8)
        self.assertGreater(measure.delta, math.log(2.0))
        ctx = global_measure_context(measure, t0=0.5, theta=0.0)
        self.assertEqual(list(ctx.cusps), [0])
        eta = action.product.boundary([(1, 1)], end=(0, "inf"))
        self.assertEqual(ctx.b(eta, 2.0), 0.0)
        self.assertAlmostEqual(ctx.b(eta, 5.0), 2.0, delta=1e-12)
        self.assertGreater(measure.ball_mass(eta, 4.0), 0.0)


class TestGlobalMeasureFormula(unittest.TestCase):
    """Ball measures against the three-case proxy m(eta, t)."""

    def test_free_group_without_cusps(self):
        action = pure_schottky_tree([Factor.cyclic(1.0), Factor.cyclic(1.0)])
        measure = schottky_cylinder_measure(action)
        samples = limit_point_samples(action, 10.0, 6, np.random.default_rng(2))
        ctx = global_measure_context(measure, samples, t_max=8.0)
        self.assertAlmostEqual(global_measure_m(ctx, samples[0], 2.0), math.exp(-2.0 * measure.delta), delta=1e-12)
        report = global_formula_verify(measure, ctx, samples, 8.0, depth=10.0)
        self.assertTrue(report["passed"])

    def test_undersampled_rays(self):
        action = pure_schottky_tree([Factor.cyclic(1.0), Factor.cyclic(1.0)])
        measure = schottky_cylinder_measure(action)
        samples = limit_point_samples(action, 4.0, 2)
        ctx = global_measure_context(measure, samples, t_max=4.0)
        with self.assertRaises(WorkbenchError) as err:
            global_formula_verify(measure, ctx, samples, 8.0, depth=4.0)
        self.assertEqual(err.exception.code, "SANDWICH_FAIL")
        with self.assertRaises(WorkbenchError):
            global_measure_m(ctx, Word(((0, 1),)), 1.0)

    def test_cusp_excursion(self):
        spec = CountingSpec((1.0,), (2,), ("arithmetic", 1.0, 2))
        action = pure_schottky_tree([Factor.cyclic(1.0), Factor.counting_group(spec)])
        measure = schottky_cylinder_measure(action)
        self.assertGreater(measure.delta, math.log(2.0))
        ctx = global_measure_context(measure, t0=0.5, theta=0.0)
        eta = action.product.boundary([(0, 1)], end=(1, "inf"))
        self.assertEqual(ctx.b(eta, 1.0), 0.0)
        self.assertAlmostEqual(ctx.b(eta, 5.0), 3.5, delta=1e-12)

    def test_cusp_tail_identity(self):
        spec = CountingSpec((1.0,), (2,), ("arithmetic", 1.0, 2))
        sums = cusp_tail_sums(spec, 1.0, 3.0)
        self.assertLessEqual(sums["residual"], 1e-9 * max(1.0, sums["check"]))
        self.assertEqual(sums["N"], 4.0)
        at_level = cusp_tail_sums(spec, 1.0, math.exp(1.0))
        self.assertLessEqual(at_level["residual"], 1e-9 * max(1.0, at_level["check"]))
        with self.assertRaises(WorkbenchError):
            cusp_tail_sums(spec, 1.0, 0.0)


class TestDoublingAndDimension(unittest.TestCase):
    """Tri-state verdicts from cusp counting laws."""

    def test_subcritical_power_law(self):
        result = doubling_and_dimension_tests([CuspLaw("power", 1.0)], 1.0)
        self.assertEqual(result["doubling"]["verdict"], YES)
        self.assertEqual(result["exact_dimensional"]["verdict"], YES)

    def test_step_law_is_not_doubling(self):
        result = doubling_and_dimension_tests([CuspLaw("steps", 1.0, base=2.0)], 1.0)
        self.assertEqual(result["doubling"]["verdict"], NO)

    def test_critical_power_law_is_not_exact_dimensional(self):
        result = doubling_and_dimension_tests([CuspLaw("power", 2.0, 1.5)], 1.0)
        self.assertEqual(result["exact_dimensional"]["verdict"], NO)

    def test_squared_log_critical_law(self):
        # N_p(R) = R^{2 delta} / log^2 R: Sigma_delta converges, the dimension series does not
        for delta in (0.75, 1.0):
            law = CuspLaw("power", 2.0 * delta, 2.0)
            self.assertTrue(law.poincare_series_converges(delta))
            self.assertFalse(law.dimension_series_converges(delta))
            result = doubling_and_dimension_tests([law], delta)
            self.assertEqual(result["exact_dimensional"]["verdict"], NO)

    def test_convergence_type_is_not_doubling(self):
        result = doubling_and_dimension_tests([CuspLaw("power", 1.0)], 1.0, divergence_type=False)
        self.assertEqual(result["doubling"]["verdict"], NO)

    def test_counting_law_exponents(self):
        law = CuspLaw.from_dict({"kind": "counting", "spec": {"lambdas": [1.0], "mults": [2], "tail": ["arithmetic", 1.0, 2]}})
        self.assertEqual(law.doubling_exponents(), (2.0 * math.log(2.0), 2.0 * math.log(2.0)))

    def test_unknown_law(self):
        with self.assertRaises(WorkbenchError):
            CuspLaw("exotic").doubling_exponents()


if __name__ == "__main__":
    unittest.main()
