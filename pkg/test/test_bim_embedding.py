#!/usr/bin/env python
"""
Tests for the BIM embedding of tree configurations into the hyperboloid.

Run with:
    python -m unittest test.test_bim_embedding
"""

import logging
import math
import unittest

import numpy as np
from numpy.testing import assert_allclose

from core.actions import pure_schottky_tree
from core.bim_embedding import (
    BimConfig,
    bim_translation_length,
    build_form,
    embed,
    represent_isometry,
)
from core.errors import WorkbenchError
from core.group_actions import Factor, Word, orbit_enumerate
from core.hyperbolic_models import dist
from core.rtree import random_tree, star_tree

logging.basicConfig(level=logging.WARNING, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')


class TestBimForm(unittest.TestCase):
    """Signature and failure modes of the form B = -lambda^d."""

    def test_signature_of_random_tree(self):
        rng = np.random.default_rng(21)
        tree = random_tree(9, rng)
        cfg = BimConfig.from_tree(tree, tree.vertices, 1.5)
        form = build_form(cfg)
        self.assertEqual(form.signature, (len(cfg.ids) - 1, 1))
        self.assertGreater(form.min_abs_eigenvalue, 0.0)

    def test_rejects_non_tree_metric(self):
        D = [[0, 1, 2, 1], [1, 0, 1, 2], [2, 1, 0, 1], [1, 2, 1, 0]]
        with self.assertRaises(WorkbenchError) as ctx:
            build_form(BimConfig(2.0, list("abcd"), D))
        self.assertEqual(ctx.exception.code, "NOT_TREE_METRIC")

    def test_overflow_guard(self):
        tree = star_tree([400.0, 400.0])
        with self.assertRaises(WorkbenchError) as ctx:
            build_form(BimConfig.from_tree(tree, ["p0", "p1"], math.e))
        self.assertEqual(ctx.exception.code, "OVERFLOW")

    def test_lambda_must_exceed_one(self):
        with self.assertRaises(WorkbenchError):
            BimConfig(1.0, ["a"], [[0.0]])


class TestEmbedding(unittest.TestCase):
    """cosh d(Psi(v), Psi(w)) = lambda^d(v, w)."""

    def setUp(self):
        self.tree = star_tree([1.0, 1.0, 1.0])
        self.points = ["c", "p0", "p1", "p2"]
        self.cfg = BimConfig.from_tree(self.tree, self.points, math.e)

    def test_cosh_identity(self):
        embedding = embed(self.cfg)
        self.assertLessEqual(embedding.residual, 1e-8)
        points = embedding.points
        for i, v in enumerate(self.points):
            for j, w in enumerate(self.points):
                expected = math.acosh(math.e ** self.tree.distance(v, w))
                self.assertAlmostEqual(dist(points[i], points[j]), expected, delta=1e-8)

    def test_first_point_is_the_origin(self):
        embedding = embed(self.cfg)
        assert_allclose(embedding.point("c"), [1.0, 0.0, 0.0, 0.0], atol=1e-9)

    def test_orbit_configuration(self):
        action = pure_schottky_tree([Factor.cyclic(1.0), Factor.cyclic(1.0)])
        elements = [g for g, _ in orbit_enumerate(action, max_length=2)][:10]
        embedding = embed(BimConfig.from_action(action, elements, 1.5))
        self.assertEqual(embedding.coords.shape, (10, 10))
        self.assertLessEqual(embedding.residual, 1e-8)


class TestRepresentation(unittest.TestCase):
    """Tree isometries become Lorentz maps."""

    def setUp(self):
        self.tree = star_tree([1.0, 1.0, 1.0])
        self.points = ["c", "p0", "p1", "p2"]
        self.cfg = BimConfig.from_tree(self.tree, self.points, 2.0)

    def test_rotation_of_the_star(self):
        sigma = {"c": "c", "p0": "p1", "p1": "p2", "p2": "p0"}
        embedding = embed(self.cfg)
        M = represent_isometry(self.cfg, sigma, embedding)
        for v, w in sigma.items():
            assert_allclose(M.matrix @ embedding.point(v), embedding.point(w), atol=1e-7)

    def test_partial_map(self):
        embedding = embed(self.cfg)
        M = represent_isometry(self.cfg, {"c": "c", "p0": "p2"}, embedding)
        assert_allclose(M.matrix @ embedding.point("p0"), embedding.point("p2"), atol=1e-7)

    def test_not_an_isometry(self):
        cfg = BimConfig.from_tree(star_tree([1.0, 2.0, 3.0]), ["c", "p0", "p1"], 2.0)
        with self.assertRaises(WorkbenchError) as ctx:
            represent_isometry(cfg, {"c": "c", "p0": "p1"})
        self.assertEqual(ctx.exception.code, "NOT_ISOMETRY")


class TestTranslationLength(unittest.TestCase):
    """Model translation length is log(lambda) times the tree translation length."""

    def test_free_group_word(self):
        action = pure_schottky_tree([Factor.cyclic(1.0), Factor.cyclic(1.0)])
        word = Word(((0, 1), (1, 1)))
        self.assertAlmostEqual(bim_translation_length(action, word, math.e), 2.0, delta=1e-9)
        self.assertAlmostEqual(bim_translation_length(action, word, 2.0), 2.0 * math.log(2.0), delta=1e-9)


if __name__ == "__main__":
    unittest.main()
