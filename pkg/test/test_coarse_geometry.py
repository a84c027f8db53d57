#!/usr/bin/env python
"""
Tests for Gromov products, boundary metrics, Busemann functions and
polar coordinates.

Run with:
    python -m unittest test.test_coarse_geometry
"""

import logging
import math
import unittest

import numpy as np

from core.coarse_geometry import (
    BoundaryPoint,
    GromovContext,
    busemann,
    distance_to_axis,
    gromov_inequality_defect,
    gromov_product,
    hamenstadt_dist,
    metric_derivative,
    model_context,
    polar_coords,
    strong_hyperbolicity_slack,
    visual_dist,
)
from core.errors import WorkbenchError
from core.hyperbolic_models import (
    BALL,
    HALFSPACE,
    HYPERBOLOID,
    ModelPoint,
    Similarity,
    origin,
    poincare_extension,
    random_point,
)
from core.rtree import star_tree

logging.basicConfig(level=logging.WARNING, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')


class TestGromovProducts(unittest.TestCase):
    """Gromov products in the models and on trees."""

    def setUp(self):
        self.rng = np.random.default_rng(3)
        self.ctx = model_context(HYPERBOLOID, 3)

    def test_interior_product_matches_distances(self):
        x, y = random_point(HYPERBOLOID, 3, self.rng), random_point(HYPERBOLOID, 3, self.rng)
        o = origin(HYPERBOLOID, 3)
        space = self.ctx.space
        expected = 0.5 * (space.distance(o, x) + space.distance(o, y) - space.distance(x, y))
        self.assertAlmostEqual(gromov_product(self.ctx, x, y), expected, delta=1e-12)

    def test_visual_distance_between_boundary_points(self):
        ctx = model_context(BALL, 2)
        xi = BoundaryPoint.in_model(BALL, [1.0, 0.0])
        eta = BoundaryPoint.in_model(BALL, [0.0, 1.0])
        self.assertAlmostEqual(visual_dist(ctx, xi, eta), math.sqrt(2.0) / 2.0, delta=1e-12)
        self.assertEqual(visual_dist(ctx, xi, xi), 0.0)
        self.assertTrue(math.isinf(gromov_product(ctx, xi, xi)))

    def test_base_must_be_interior(self):
        xi = BoundaryPoint.in_model(BALL, [1.0, 0.0])
        with self.assertRaises(WorkbenchError):
            gromov_product(model_context(BALL, 2), xi, xi, xi)

    def test_strong_hyperbolicity(self):
        for model in (HYPERBOLOID, BALL, HALFSPACE):
            ctx = model_context(model, 4)
            for _ in range(300):
                x, y, z, w = (random_point(model, 4, self.rng) for _ in range(4))
                self.assertGreaterEqual(strong_hyperbolicity_slack(ctx, x, y, z, w), -1e-9)

    def test_tree_has_zero_gromov_defect(self):
        tree = star_tree([1.0, 2.0, 0.5, 1.5])
        ctx = GromovContext(tree, "c")
        for _ in range(100):
            x, y, z, w = (tree.random_point(self.rng) for _ in range(4))
            self.assertLessEqual(gromov_inequality_defect(ctx, x, y, z, w), 1e-12)


class TestBoundaryFunctions(unittest.TestCase):
    """Busemann cocycle, Hamenstadt metric, polar coordinates."""

    def setUp(self):
        self.ctx = model_context(HALFSPACE, 2)
        self.zero = BoundaryPoint.in_model(HALFSPACE, [0.0])
        self.infinity = BoundaryPoint.infinity()

    def test_busemann_at_infinity(self):
        a, b = ModelPoint(HALFSPACE, [1.0, 0.0]), ModelPoint(HALFSPACE, [math.e, 0.0])
        self.assertAlmostEqual(busemann(self.ctx, self.infinity, a, b), 1.0, delta=1e-12)

    def test_busemann_cocycle(self):
        rng = np.random.default_rng(5)
        xi = BoundaryPoint.in_model(HALFSPACE, [0.3])
        for _ in range(50):
            x, y, z = (random_point(HALFSPACE, 2, rng) for _ in range(3))
            total = busemann(self.ctx, xi, x, y) + busemann(self.ctx, xi, y, z)
            self.assertAlmostEqual(busemann(self.ctx, xi, x, z), total, delta=1e-9)

    def test_hamenstadt_is_proportional_to_euclidean(self):
        a, b, c = (BoundaryPoint.in_model(HALFSPACE, [v]) for v in (0.0, 1.0, 3.0))
        ratio = hamenstadt_dist(self.ctx, self.infinity, a, b) / hamenstadt_dist(self.ctx, self.infinity, a, c)
        self.assertAlmostEqual(ratio, 1.0 / 3.0, delta=1e-9)

    def test_hamenstadt_undefined_at_xi(self):
        with self.assertRaises(WorkbenchError) as ctx:
            hamenstadt_dist(self.ctx, self.infinity, self.infinity, self.zero)
        self.assertEqual(ctx.exception.code, "EQUALS_XI")

    def test_polar_coordinates(self):
        r, theta = polar_coords(self.ctx, self.zero, self.infinity, ModelPoint(HALFSPACE, [math.e, 0.0]))
        self.assertAlmostEqual(r, 1.0, delta=1e-12)
        self.assertAlmostEqual(theta, 0.0, delta=1e-12)
        r, theta = polar_coords(self.ctx, self.zero, self.infinity, ModelPoint(HALFSPACE, [0.5, math.sqrt(3.0) / 2.0]))
        self.assertAlmostEqual(r, 0.0, delta=1e-12)
        self.assertAlmostEqual(theta, math.log(2.0), delta=1e-12)

    def test_polar_coordinates_need_distinct_points(self):
        with self.assertRaises(WorkbenchError):
            polar_coords(self.ctx, self.zero, self.zero, ModelPoint(HALFSPACE, [1.0, 0.0]))

    def test_distance_to_axis(self):
        self.assertAlmostEqual(distance_to_axis(self.ctx, self.zero, self.infinity, ModelPoint(HALFSPACE, [2.0, 0.0])), 0.0, delta=1e-7)
        d = distance_to_axis(self.ctx, self.zero, self.infinity, ModelPoint(HALFSPACE, [1.0, 1.0]))
        self.assertAlmostEqual(d, math.asinh(1.0), delta=1e-9)

    def test_metric_derivative_of_dilation(self):
        g = poincare_extension(Similarity.dilation(2.0, 1))
        self.assertAlmostEqual(metric_derivative(self.ctx, g, self.infinity), 0.5, delta=1e-12)


if __name__ == "__main__":
    unittest.main()
