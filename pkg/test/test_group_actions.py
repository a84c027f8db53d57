#!/usr/bin/env python
"""
Tests for free products of factor groups, orbit enumeration, isometry
classification, coding of limit points and Edelstein-type isometries.

Run with:
    python -m unittest test.test_group_actions
"""

import logging
import math
import unittest

import numpy as np

from core.actions import LorentzWordAction, geometric_product, orbit_tree, pure_schottky_tree
from core.errors import WorkbenchError
from core.group_actions import (
    Cylinder,
    EdelsteinSpec,
    Factor,
    FreeProduct,
    Word,
    classify_isometry,
    coding_limit_point,
    cyclic_reduction,
    edelstein_comparison_sum,
    edelstein_displacement,
    edelstein_exactness,
    orbit_enumerate,
)
from core.hyperbolic_models import Similarity, lorentz_boost, poincare_extension, spatial_rotation
from core.rtree import RTree, max_four_point_defect

logging.basicConfig(level=logging.WARNING, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')


class TestFactors(unittest.TestCase):
    """Factor validation and the factor group law."""

    def test_finite_factor_needs_order_two(self):
        with self.assertRaises(WorkbenchError) as ctx:
            Factor.finite(1)
        self.assertEqual(ctx.exception.code, "BAD_FACTOR")

    def test_norms_must_be_tree_geometric(self):
        with self.assertRaises(WorkbenchError) as ctx:
            Factor.finite(4, norms=[1.0, 5.0, 1.0])
        self.assertEqual(ctx.exception.code, "BAD_FACTOR")

    def test_norms_must_be_symmetric(self):
        with self.assertRaises(WorkbenchError):
            Factor.finite(3, norms=[1.0, 2.0])

    def test_cyclic_elements_in_index_order(self):
        self.assertEqual(Factor.cyclic(1.0).elements(max_norm=2.0), [1, -1, 2, -2])
        self.assertEqual(Factor.cyclic(0.5).elements(max_norm=1.0), [1, -1, 2, -2])

    def test_dict_round_trip(self):
        f = Factor.finite(3, 2.0)
        copy = Factor.from_dict(f.to_dict())
        self.assertEqual(copy.norms, (2.0, 2.0))
        self.assertEqual(copy.to_dict(), f.to_dict())


class TestFreeProduct(unittest.TestCase):
    """Normal forms, norms and Gromov products in a pure Schottky product."""

    def setUp(self):
        self.product = FreeProduct([Factor.cyclic(1.0), Factor.finite(3, 1.0)])

    def test_empty_product(self):
        with self.assertRaises(WorkbenchError) as ctx:
            FreeProduct([])
        self.assertEqual(ctx.exception.code, "EMPTY_FACTOR")

    def test_reduce_merges_and_cancels(self):
        self.assertEqual(self.product.reduce([(0, 1), (0, -1)]), Word())
        self.assertEqual(self.product.reduce([(0, 1), (0, 2), (1, 2), (1, 1)]), Word(((0, 3),)))
        self.assertEqual(self.product.reduce([(1, 3), (0, 1)]), Word(((0, 1),)))
        with self.assertRaises(WorkbenchError):
            self.product.reduce([(2, 1)])

    def test_inverse_and_norm(self):
        g = self.product.reduce([(0, 2), (1, 1), (0, -1)])
        self.assertEqual(self.product.multiply(g, self.product.inverse(g)), Word())
        self.assertEqual(self.product.norm(g), 4.0)
        h = self.product.reduce([(1, 2)])
        self.assertEqual(self.product.norm(self.product.multiply(g, h)), 5.0)

    def test_gromov_product_within_a_factor(self):
        self.assertEqual(self.product.gromov_product(Word(((0, 2),)), Word(((0, 3),))), 2.0)
        self.assertEqual(self.product.gromov_product(Word(((0, 2),)), Word(((0, -1),))), 0.0)
        g = Word(((0, 1), (1, 1)))
        self.assertEqual(self.product.gromov_product(g, Word(((0, 1), (1, 2)))), 1.5)

    def test_boundary_points(self):
        xi = self.product.boundary([(0, 1)], [(1, 1), (0, 1)])
        self.assertTrue(math.isinf(self.product.gromov_product(xi, xi)))
        self.assertTrue(self.product.boundary_equal(xi, self.product.act_boundary(Word(), xi)))
        end = self.product.boundary([(1, 1)], end=(0, "+inf"))
        self.assertEqual(self.product.gromov_product(end, Word(((1, 1), (0, 3)))), 4.0)

    def test_cyclic_reduction(self):
        g = self.product.reduce([(1, 1), (0, 2), (1, 2)])
        c, h = cyclic_reduction(self.product, g)
        self.assertEqual(c, Word(((0, 2),)))
        self.assertEqual(h, Word(((1, 1),)))


class TestCylinders(unittest.TestCase):
    """Cylinders W_g of boundary words."""

    def setUp(self):
        self.product = FreeProduct([Factor.cyclic(1.0), Factor.cyclic(1.0)])

    def test_diameter_of_free_group_cylinder(self):
        for letters in (((0, 1),), ((0, 1), (1, -1)), ((1, 2), (0, 1), (1, 1))):
            g = Word(letters)
            self.assertAlmostEqual(Cylinder(self.product, g).diameter(), math.exp(-self.product.norm(g)), delta=1e-15)

    def test_nesting_and_disjointness(self):
        outer = Cylinder(self.product, Word(((0, 1),)))
        inner = Cylinder(self.product, Word(((0, 1), (1, 1))))
        other = Cylinder(self.product, Word(((0, -1),)))
        self.assertTrue(inner.is_subset_of(outer))
        self.assertTrue(outer.is_disjoint_from(other))
        self.assertFalse(inner.is_disjoint_from(outer))
        xi = self.product.boundary([(0, 1), (1, 1)], [(0, 1), (1, 1)])
        self.assertTrue(inner.contains(xi))
        self.assertFalse(other.contains(xi))


class TestOrbitEnumeration(unittest.TestCase):
    """Orbit points of word actions within norm and length cutoffs."""

    def setUp(self):
        self.free_group = pure_schottky_tree([Factor.cyclic(1.0), Factor.cyclic(1.0)])

    def test_free_group_ball_sizes(self):
        self.assertEqual(len(orbit_enumerate(self.free_group, max_norm=2.0)), 1 + 4 + 12)
        self.assertEqual(len(orbit_enumerate(self.free_group, max_norm=3.0)), 1 + 4 + 12 + 36)
        self.assertEqual(len(orbit_enumerate(self.free_group, max_length=2)), 17)

    def test_order_is_deterministic(self):
        orbit = orbit_enumerate(self.free_group, max_length=1)
        self.assertEqual([str(g) for g, _ in orbit], ["e", "(0,1)", "(0,-1)", "(1,1)", "(1,-1)"])
        self.assertEqual(orbit, orbit_enumerate(self.free_group, max_length=1))

    def test_cutoffs_required(self):
        with self.assertRaises(WorkbenchError) as ctx:
            orbit_enumerate(self.free_group)
        self.assertEqual(ctx.exception.code, "OUT_OF_RANGE")
        with self.assertRaises(WorkbenchError):
            orbit_enumerate(self.free_group, max_norm=-1.0)

    def test_budget(self):
        with self.assertRaises(WorkbenchError) as ctx:
            orbit_enumerate(self.free_group, max_norm=6.0, budget=100)
        self.assertEqual(ctx.exception.code, "BUDGET_EXCEEDED")


class TestGeometricProduct(unittest.TestCase):
    """Orbit norms of geometric products over a segment."""

    def setUp(self):
        self.segment = RTree.from_edges([(0, 1, 1.0)], root=0)
        self.action = geometric_product(self.segment, [0, 1], [Factor.finite(2), Factor.finite(2)], o=0)

    def test_norms(self):
        self.assertEqual(self.action.norm(Word()), 0.0)
        self.assertAlmostEqual(self.action.norm(Word(((0, 1), (1, 1)))), 2.0, delta=1e-12)
        # a single letter travels to its point and back
        self.assertAlmostEqual(self.action.norm(Word(((1, 1),))), 2.0, delta=1e-12)
        self.assertEqual(self.action.norm(Word(((0, 1),))), 0.0)
        self.assertAlmostEqual(self.action.distance(Word(((1, 1),)), Word(((0, 1), (1, 1)))), 4.0, delta=1e-12)

    def test_attached_factor_trees_add_letter_norms(self):
        action = geometric_product(self.segment, [0, 1], [Factor.finite(2), Factor.finite(2)], o=0,
                                   attached=[True, True])
        self.assertAlmostEqual(action.norm(Word(((0, 1), (1, 1)))), 4.0, delta=1e-12)
        self.assertAlmostEqual(action.norm(Word(((0, 1),))), 1.0, delta=1e-12)

    def test_invalid_inputs(self):
        with self.assertRaises(WorkbenchError) as ctx:
            geometric_product(self.segment, [0, 7], [Factor.finite(2), Factor.finite(2)])
        self.assertEqual(ctx.exception.code, "P_NOT_IN_Y")
        spec = {"kind": "counting", "spec": {"lambdas": [1.0], "mults": [2], "tail": ["arithmetic", 1.0, 2]}}
        with self.assertRaises(WorkbenchError) as ctx:
            geometric_product(self.segment, [0, 1], [Factor.finite(2), spec])
        self.assertEqual(ctx.exception.code, "BAD_FACTOR")

    def test_orbit_tree_keeps_distinct_points(self):
        # the factor at o fixes it, so four distinct points lie on a line of length 6
        tree = orbit_tree(self.action, max_length=3)
        words = [v for v in tree.vertices if not str(v).startswith("s")]
        self.assertIn("e", words)
        self.assertEqual(len(words), 4)
        self.assertAlmostEqual(max(tree.distance(u, v) for u in words for v in words), 6.0, delta=1e-9)


class TestOrbitTree(unittest.TestCase):
    """Truncated orbits of tree products realized as R-trees."""

    def setUp(self):
        self.rng = np.random.default_rng(4)
        self.free_group = pure_schottky_tree([Factor.cyclic(1.0), Factor.cyclic(1.0)])

    def test_orbit_points_are_vertices(self):
        tree = orbit_tree(self.free_group, max_norm=3.0)
        orbit = orbit_enumerate(self.free_group, max_norm=3.0)
        self.assertEqual(len([v for v in tree.vertices if not str(v).startswith("s")]), len(orbit))
        for g, _ in orbit[:12]:
            for h, _ in orbit[-12:]:
                self.assertAlmostEqual(tree.distance(str(g), str(h)), self.free_group.distance(g, h), delta=1e-9)

    def test_random_points_have_zero_defect(self):
        trees = [
            orbit_tree(self.free_group, max_norm=2.0),
            orbit_tree(pure_schottky_tree([Factor.finite(3), Factor.cyclic(0.5)]), max_norm=2.0),
        ]
        for tree in trees:
            points = [tree.random_point(self.rng) for _ in range(25)]
            D = np.array([[tree.distance(p, q) for q in points] for p in points])
            self.assertLessEqual(max_four_point_defect(D, self.rng), 1e-9 * max(1.0, D.max()))


class TestClassification(unittest.TestCase):
    """Elliptic, parabolic and loxodromic isometries with their evidence."""

    def test_model_isometries(self):
        boost = classify_isometry(lorentz_boost(1, 1.3, 2))
        self.assertEqual(boost.kind, "loxodromic")
        self.assertAlmostEqual(boost.translation_length, 1.3, delta=1e-9)
        self.assertTrue(boost.evidence["witness_holds"])
        self.assertEqual(classify_isometry(spatial_rotation(1, 2, 0.7, 2)).kind, "elliptic")
        self.assertEqual(classify_isometry(poincare_extension(Similarity.translation_by([1.0]))).kind, "parabolic")

    def test_dilation_translation_length(self):
        verdict = classify_isometry(poincare_extension(Similarity.dilation(3.0, 1)))
        self.assertEqual(verdict.kind, "loxodromic")
        self.assertAlmostEqual(verdict.translation_length, math.log(3.0), delta=1e-9)

    def test_schottky_words(self):
        action = pure_schottky_tree([Factor.cyclic(1.0), Factor.finite(3, 1.0)])
        verdict = classify_isometry(Word(((0, 1), (1, 1))), action)
        self.assertEqual(verdict.kind, "loxodromic")
        self.assertEqual(verdict.translation_length, 2.0)
        self.assertEqual(classify_isometry(Word(((1, 1),)), action).kind, "elliptic")
        conjugate = classify_isometry(Word(((1, 1), (0, 2), (1, 2))), action)
        self.assertEqual(conjugate.translation_length, 2.0)
        self.assertEqual(conjugate.bound, 2.0)
        self.assertTrue(conjugate.evidence["witness_holds"])

    def test_word_without_action(self):
        with self.assertRaises(WorkbenchError):
            classify_isometry(Word(((0, 1),)))


class TestCoding(unittest.TestCase):
    """Limit points coded by reduced addresses."""

    def setUp(self):
        self.action = pure_schottky_tree([Factor.cyclic(1.0), Factor.cyclic(1.0)])

    def test_constant_is_one_for_free_group(self):
        address = [(0, 1), (1, 1), (0, -1), (1, 1), (0, 1)]
        for depth in range(1, 6):
            coded = coding_limit_point(self.action, address, depth)
            self.assertAlmostEqual(coded.radius, math.exp(-depth), delta=1e-15)
            self.assertAlmostEqual(coded.constant, 1.0, delta=1e-12)

    def test_address_must_be_reduced(self):
        with self.assertRaises(WorkbenchError) as ctx:
            coding_limit_point(self.action, [(0, 1), (0, 1)], 2)
        self.assertEqual(ctx.exception.code, "BAD_FACTOR")
        with self.assertRaises(WorkbenchError) as ctx:
            coding_limit_point(self.action, [(0, 1)], 3)
        self.assertEqual(ctx.exception.code, "OUT_OF_RANGE")

    def test_requires_strong_separation(self):
        action = LorentzWordAction([lorentz_boost(1, 2.0, 2)])
        with self.assertRaises(WorkbenchError) as ctx:
            coding_limit_point(action, [(0, 1)], 1)
        self.assertEqual(ctx.exception.code, "NOT_SEPARATED")


class TestEdelstein(unittest.TestCase):
    """Displacements of Edelstein-type isometries along n = 2^k and n = k!."""

    def test_geometric_comparison_sum_is_one_third(self):
        spec = EdelsteinSpec("geometric", 60)
        for k in range(0, 11):
            self.assertAlmostEqual(edelstein_comparison_sum(spec, 2 ** k), 1.0 / 3.0, delta=1e-12)

    def test_factorial_family_decreases(self):
        spec = EdelsteinSpec("factorial")
        sums = [edelstein_comparison_sum(spec, math.factorial(k)) for k in range(3, 9)]
        for a, b in zip(sums, sums[1:]):
            self.assertLess(b, a)

    def test_displacement_with_tail(self):
        spec = EdelsteinSpec("geometric", 60)
        result = edelstein_displacement(spec, 2 ** 5)
        self.assertGreater(result["value"], 4.0)
        self.assertLess(result["tail"], 1e-12)

    def test_tail_too_large(self):
        with self.assertRaises(WorkbenchError) as ctx:
            edelstein_displacement(EdelsteinSpec("geometric", 5), 2 ** 10)
        self.assertEqual(ctx.exception.code, "TAIL_TOO_LARGE")

    def test_poincare_extension_matches_closed_form(self):
        spec = EdelsteinSpec("geometric", 60)
        for n in (1, 3, 8):
            self.assertLessEqual(edelstein_exactness(spec, n, K=8), 1e-9)

    def test_invalid_spec(self):
        with self.assertRaises(WorkbenchError):
            EdelsteinSpec("harmonic")
        with self.assertRaises(WorkbenchError):
            EdelsteinSpec("explicit", a_values=(0.5,), b_values=())


if __name__ == "__main__":
    unittest.main()
