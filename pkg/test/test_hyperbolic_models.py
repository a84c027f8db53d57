#!/usr/bin/env python
"""
Tests for the hyperboloid, ball and half-space models.

Run with:
    python -m unittest test.test_hyperbolic_models
"""

import logging
import math
import unittest

import numpy as np
from numpy.testing import assert_allclose

from core.errors import WorkbenchError
from core.hyperbolic_models import (
    BALL,
    HALFSPACE,
    HYPERBOLOID,
    MODELS,
    LorentzMap,
    ModelPoint,
    Similarity,
    busemann_halfspace,
    convert,
    dist,
    geodesic_point,
    lorentz_boost,
    origin,
    poincare_extension,
    quadratic,
    random_point,
    spatial_rotation,
)

logging.basicConfig(level=logging.WARNING, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')


class TestModelPoint(unittest.TestCase):
    """Validation and normalization of model points."""

    def test_hyperboloid_point_is_normalized(self):
        p = ModelPoint(HYPERBOLOID, [2.0, 0.0, 0.0])
        self.assertAlmostEqual(quadratic(p.coords), -1.0, places=12)
        self.assertGreater(p.coords[0], 0.0)

    def test_invalid_points(self):
        with self.assertRaises(WorkbenchError) as ctx:
            ModelPoint(BALL, [0.8, 0.6])
        self.assertEqual(ctx.exception.code, "INVALID_POINT")
        with self.assertRaises(WorkbenchError):
            ModelPoint(HALFSPACE, [0.0, 1.0])
        with self.assertRaises(WorkbenchError):
            ModelPoint(HYPERBOLOID, [0.0, 1.0, 0.0])

    def test_dimension_below_two(self):
        for model, coords in ((HALFSPACE, [1.0]), (BALL, [0.5]), (HYPERBOLOID, [1.0, 0.0])):
            with self.assertRaises(WorkbenchError) as ctx:
                ModelPoint(model, coords)
            self.assertEqual(ctx.exception.code, "OUT_OF_RANGE")

    def test_unknown_model(self):
        with self.assertRaises(WorkbenchError):
            ModelPoint("klein-bottle", [0.1])

    def test_dict_round_trip(self):
        p = ModelPoint(HALFSPACE, [1.5, -0.25])
        self.assertTrue(ModelPoint.from_dict(p.to_dict()).is_close(p))


class TestDistances(unittest.TestCase):
    """Closed-form distances and the metric axioms."""

    def setUp(self):
        self.rng = np.random.default_rng(7)

    def test_worked_numbers(self):
        self.assertAlmostEqual(dist(origin(BALL, 2), ModelPoint(BALL, [0.6, 0.0])), math.log(2.0), delta=1e-12)
        a, b = ModelPoint(HALFSPACE, [1.0, 0.0]), ModelPoint(HALFSPACE, [math.e, 0.0])
        self.assertAlmostEqual(dist(a, b), 1.0, delta=1e-12)
        self.assertAlmostEqual(busemann_halfspace(a, b), 1.0, delta=1e-12)

    def test_model_mismatch(self):
        with self.assertRaises(WorkbenchError) as ctx:
            dist(origin(BALL, 2), origin(HALFSPACE, 2))
        self.assertEqual(ctx.exception.code, "MODEL_MISMATCH")

    def test_metric_axioms(self):
        for model in MODELS:
            for _ in range(200):
                x, y, z = (random_point(model, 3, self.rng) for _ in range(3))
                self.assertEqual(dist(x, x), 0.0)
                self.assertAlmostEqual(dist(x, y), dist(y, x), delta=1e-9)
                self.assertLessEqual(dist(x, y), dist(x, z) + dist(z, y) + 1e-9)

    def test_conversion_is_isometric(self):
        for _ in range(200):
            x, y = (random_point(HYPERBOLOID, 4, self.rng) for _ in range(2))
            d = dist(x, y)
            for model in (BALL, HALFSPACE):
                self.assertAlmostEqual(dist(convert(x, model), convert(y, model)), d, delta=1e-9 * max(1.0, d))
                assert_allclose(convert(convert(x, model), HYPERBOLOID).coords, x.coords, atol=1e-9 * np.abs(x.coords).max())

    def test_small_distances_are_stable(self):
        x = ModelPoint(HALFSPACE, [1.0, 0.0])
        y = ModelPoint(HALFSPACE, [1.0, 1e-10])
        self.assertAlmostEqual(dist(x, y), 1e-10, delta=1e-18)

    def test_geodesic_point(self):
        x, y = random_point(BALL, 3, self.rng), random_point(BALL, 3, self.rng)
        d = dist(x, y)
        m = geodesic_point(x, y, 0.3 * d)
        self.assertAlmostEqual(dist(x, m), 0.3 * d, delta=1e-9)
        self.assertAlmostEqual(dist(m, y), 0.7 * d, delta=1e-9)
        with self.assertRaises(WorkbenchError):
            geodesic_point(x, y, 2.0 * d + 1.0)


class TestIsometries(unittest.TestCase):
    """Lorentz maps and Poincare extensions."""

    def setUp(self):
        self.rng = np.random.default_rng(11)

    def test_boost_moves_origin_by_rapidity(self):
        g = lorentz_boost(1, 1.25, 3)
        self.assertAlmostEqual(dist(origin(HYPERBOLOID, 3), g(origin(HYPERBOLOID, 3))), 1.25, delta=1e-12)

    def test_boost_axis_range(self):
        with self.assertRaises(WorkbenchError):
            lorentz_boost(0, 1.0, 2)
        with self.assertRaises(WorkbenchError):
            lorentz_boost(3, 1.0, 2)

    def test_isometries_preserve_distance_in_every_model(self):
        g = lorentz_boost(2, 0.8, 3).compose(spatial_rotation(1, 3, 0.4, 3))
        for model in MODELS:
            x, y = random_point(model, 3, self.rng), random_point(model, 3, self.rng)
            self.assertAlmostEqual(dist(g(x), g(y)), dist(x, y), delta=1e-9)
            self.assertTrue(g.inverse()(g(x)).is_close(x, 1e-9))

    def test_rotation_fixes_origin(self):
        r = spatial_rotation(1, 2, 0.7, 2)
        self.assertTrue(r(origin(BALL, 2)).is_close(origin(BALL, 2)))

    def test_power(self):
        g = lorentz_boost(1, 0.5, 2)
        assert_allclose(g.power(3).matrix, lorentz_boost(1, 1.5, 2).matrix, atol=1e-12)
        assert_allclose(g.power(-1).matrix, g.inverse().matrix, atol=1e-12)

    def test_not_an_isometry(self):
        with self.assertRaises(WorkbenchError):
            LorentzMap(np.diag([2.0, 1.0, 1.0]))

    def test_poincare_extension_of_dilation(self):
        g = poincare_extension(Similarity.dilation(math.e, 1))
        x = ModelPoint(HALFSPACE, [1.0, 0.5])
        image = g(x)
        assert_allclose(image.coords, [math.e, 0.5 * math.e], atol=1e-12)
        self.assertAlmostEqual(dist(origin(HALFSPACE, 2), g(origin(HALFSPACE, 2))), 1.0, delta=1e-12)

    def test_poincare_extension_agrees_with_lorentz_map(self):
        g = poincare_extension(Similarity.translation_by([0.75, -0.5]))
        L = g.as_lorentz_map()
        x = random_point(HALFSPACE, 3, self.rng)
        self.assertTrue(L(x).is_close(g(x), 1e-9))
        self.assertEqual(g.apply_boundary(HALFSPACE, None), None)
        assert_allclose(g.apply_boundary(HALFSPACE, np.array([1.0, 1.0])), [1.75, 0.5], atol=1e-12)

    def test_power_of_extension(self):
        g = poincare_extension(Similarity.translation_by([0.5]))
        x = ModelPoint(HALFSPACE, [1.0, 0.0])
        assert_allclose(g.power(4)(x).coords, [1.0, 2.0], atol=1e-12)


if __name__ == "__main__":
    unittest.main()
