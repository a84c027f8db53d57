#!/usr/bin/env python
"""
Tests for partition structures and the Ahlfors-regular measure extracted
from an s-thick structure.

Run with:
    python -m unittest test.test_partition_structures
"""

import logging
import math
import unittest
from fractions import Fraction

from core.actions import pure_schottky_tree
from core.errors import WorkbenchError
from core.group_actions import Factor
from core.partition_structures import (
    THICKNESS,
    PartitionStructure,
    ahlfors_check,
    free_group_structure,
    schottky_structure,
    thick_substructure_measure,
    uniform_structure,
    validate,
)

logging.basicConfig(level=logging.WARNING, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')


class TestValidation(unittest.TestCase):
    """Nesting, separation, ratio and thickness clauses."""

    def test_binary_halving_is_one_thick(self):
        structure = uniform_structure(2, Fraction(1, 2), 4, s=1)
        report = validate(structure)
        self.assertTrue(report["valid"])
        self.assertIn(THICKNESS, report["clauses"])
        self.assertEqual(report["nodes"], 31)

    def test_thin_structure_fails_thickness(self):
        report = validate(uniform_structure(2, Fraction(1, 3), 3, s=1))
        self.assertFalse(report["valid"])
        self.assertEqual(report["violation"]["clause"], THICKNESS)
        self.assertEqual(report["violation"]["node"], [])

    def test_free_group_cylinders(self):
        structure = free_group_structure(2, 5, s=math.log(3.0))
        self.assertTrue(validate(structure)["valid"])
        self.assertEqual(len(structure.children[()]), 4)
        self.assertEqual(len(structure.children[(0,)]), 3)

    def test_schottky_cylinders_nest(self):
        action = pure_schottky_tree([Factor.finite(3, 1.0), Factor.finite(3, 1.0)])
        structure = schottky_structure(action, 3)
        self.assertTrue(validate(structure)["valid"])
        self.assertEqual(len(structure.children[()]), 4)

    def test_schottky_needs_finite_factors(self):
        action = pure_schottky_tree([Factor.cyclic(1.0), Factor.finite(2, 1.0)])
        with self.assertRaises(WorkbenchError) as ctx:
            schottky_structure(action, 2)
        self.assertEqual(ctx.exception.code, "BAD_FACTOR")

    def test_parameters_in_range(self):
        with self.assertRaises(WorkbenchError):
            PartitionStructure({(): 1.0}, {}, 1.5, 0.5)

    def test_dict_round_trip(self):
        structure = uniform_structure(3, Fraction(1, 3), 2, s=1)
        copy = PartitionStructure.from_dict(structure.to_dict())
        self.assertEqual(copy.D, structure.D)
        self.assertEqual(copy.kappa, Fraction(1, 3))


class TestThickSubstructure(unittest.TestCase):
    """Regular measures on retained subtrees."""

    def setUp(self):
        self.structure = uniform_structure(2, Fraction(1, 2), 4, s=1)

    def test_exact_weights(self):
        measure = thick_substructure_measure(self.structure, 1)
        self.assertEqual(measure.c, Fraction(1, 2))
        self.assertEqual(measure.total, Fraction(1, 2))
        self.assertEqual(measure.weights[(0, 1)], Fraction(1, 8))
        self.assertIsNone(measure.regularity_violation())
        self.assertEqual(measure.consistency_residual(), 0.0)
        self.assertEqual(len(measure.leaves()), 16)

    def test_not_thick(self):
        with self.assertRaises(WorkbenchError) as ctx:
            thick_substructure_measure(uniform_structure(2, Fraction(1, 3), 3), 1)
        self.assertEqual(ctx.exception.code, "NOT_THICK")

    def test_ahlfors_constants(self):
        report = ahlfors_check(thick_substructure_measure(self.structure, 1))
        self.assertTrue(report["passed"])
        self.assertTrue(report["ball_sandwich"])
        self.assertEqual(report["k"], 2)
        self.assertAlmostEqual(report["C1"], 0.25, delta=1e-12)
        self.assertLessEqual(report["C2"], report["C2_envelope"])
        self.assertEqual(report["hausdorff_dimension_lower_bound"], 1.0)

    def test_free_group_at_its_exponent(self):
        structure = free_group_structure(2, 6)
        measure = thick_substructure_measure(structure, math.log(3.0))
        self.assertLessEqual(measure.consistency_residual(), 1e-12)
        self.assertTrue(measure.leaves())


if __name__ == "__main__":
    unittest.main()
