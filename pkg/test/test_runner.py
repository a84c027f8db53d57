#!/usr/bin/env python
"""
Tests for experiment config validation, the experiment catalog and
deterministic runs.

Run with:
    python -m unittest test.test_runner
"""

import json
import logging
import os
import shutil
import tempfile
import unittest

from core.errors import ConfigError
from core.experiment_tracker import load_report
from core.runner import (
    EXIT_CONFIG,
    EXIT_PASS,
    ExperimentRunner,
    list_experiments,
    load_experiment,
    run_experiment,
    validate_experiment,
)

logging.basicConfig(level=logging.WARNING, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')


def _write(directory, name, config):
    path = os.path.join(directory, name)
    with open(path, "w") as f:
        if isinstance(config, str):
            f.write(config)
        else:
            json.dump(config, f)
    return path


class TestValidation(unittest.TestCase):
    """Invalid configs are rejected naming the field."""

    def setUp(self):
        self.base = {"name": "demo", "kind": "model-check", "study": "worked", "params": {}}

    def assertField(self, config, field):
        with self.assertRaises(ConfigError) as ctx:
            validate_experiment(config)
        self.assertEqual(ctx.exception.field, field)
        self.assertEqual(ctx.exception.exit_code, 2)

    def test_valid(self):
        self.assertIs(validate_experiment(self.base), self.base)

    def test_unknown_kind_and_study(self):
        self.assertField(dict(self.base, kind="fractal"), "kind")
        self.assertField(dict(self.base, study="nope"), "study")

    def test_cutoffs_must_be_positive(self):
        self.assertField(dict(self.base, params={"rho_max": 0}), "params.rho_max")
        self.assertField(dict(self.base, params={"depth": True}), "params.depth")

    def test_seed_and_tolerances(self):
        self.assertField(dict(self.base, seed=-1), "seed")
        self.assertField(dict(self.base, tolerances={"exact": -1e-9}), "tolerances.exact")
        self.assertField(dict(self.base, tolerances={"loose": 1e-3}), "tolerances.loose")

    def test_assertions_are_names(self):
        self.assertField(dict(self.base, assertions=[1, 2]), "assertions")

    def test_not_an_object(self):
        with self.assertRaises(ConfigError):
            validate_experiment([1, 2, 3])


class TestLoading(unittest.TestCase):
    """Reading configs from disk and listing the bundled catalog."""

    def setUp(self):
        self.dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.dir)

    def test_malformed_json(self):
        path = _write(self.dir, "broken.json", "{\"kind\": ")
        with self.assertRaises(ConfigError) as ctx:
            load_experiment(path)
        self.assertEqual(ctx.exception.field, "json")

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            load_experiment(os.path.join(self.dir, "absent.json"))

    def test_name_defaults_to_file_stem(self):
        path = _write(self.dir, "stem_name.json", {"kind": "model-check", "study": "worked"})
        self.assertEqual(load_experiment(path)["name"], "stem_name")

    def test_bundled_catalog(self):
        catalog = list_experiments()
        names = [entry["name"] for entry in catalog]
        self.assertEqual(names, sorted(names))
        self.assertIn("worked_numbers", names)
        self.assertIn("f2_poincare", names)

    def test_filter_by_kind_or_name(self):
        kinds = {entry["kind"] for entry in list_experiments("poincare")}
        self.assertTrue(kinds)
        for entry in list_experiments("model-check"):
            self.assertEqual(entry["kind"], "model-check")
        self.assertEqual([e["name"] for e in list_experiments("worked")], ["worked_numbers"])
        self.assertEqual(list_experiments("no-such-experiment"), [])

    def test_invalid_configs_are_skipped(self):
        _write(self.dir, "good.json", {"kind": "model-check", "study": "worked"})
        _write(self.dir, "bad.json", {"kind": "model-check", "study": "nope"})
        self.assertEqual([e["name"] for e in list_experiments(directory=self.dir)], ["good"])


class TestRuns(unittest.TestCase):
    """Reports and sweeps are reproducible."""

    def setUp(self):
        self.dir = tempfile.mkdtemp()
        self.sweep = {
            "name": "small_exactness", "kind": "model-check", "study": "exactness", "seed": 3,
            "params": {"models": ["ball", "halfspace"], "dimensions": [2, 3], "pairs_per_point": 20, "radius": 2.0},
        }

    def tearDown(self):
        shutil.rmtree(self.dir)

    def _read(self, *parts):
        with open(os.path.join(self.dir, *parts)) as f:
            return f.read()

    def test_worked_numbers(self):
        path = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
                            "config", "experiments", "worked_numbers.json")
        self.assertEqual(run_experiment(path, os.path.join(self.dir, "a")), EXIT_PASS)
        report = load_report(os.path.join(self.dir, "a", "report.json"))
        self.assertTrue(report["summary"]["passed"])
        self.assertIn("halfspace_distance", report["checks"])
        run_experiment(path, os.path.join(self.dir, "b"))
        self.assertEqual(self._read("a", "report.json"), self._read("b", "report.json"))
        self.assertEqual(self._read("a", "data.csv"), self._read("b", "data.csv"))

    def test_parallel_sweep_matches_serial(self):
        validate_experiment(self.sweep)
        ExperimentRunner(self.sweep, os.path.join(self.dir, "serial"), jobs=1).run()
        ExperimentRunner(self.sweep, os.path.join(self.dir, "parallel"), jobs=2).run()
        self.assertEqual(self._read("serial", "data.csv"), self._read("parallel", "data.csv"))
        self.assertEqual(self._read("serial", "report.json"), self._read("parallel", "report.json"))
        header = self._read("serial", "data.csv").splitlines()[0].split(",")
        self.assertEqual(header[:3], ["model", "n", "pairs"])

    def test_seed_override(self):
        runner = ExperimentRunner(self.sweep, self.dir, seed=11)
        self.assertEqual(runner.seed, 11)
        with self.assertRaises(ConfigError):
            ExperimentRunner(self.sweep, self.dir, jobs=0)

    def test_bad_parameters_exit_with_config_code(self):
        config = dict(self.sweep, params={"models": ["klein"], "dimensions": [2]})
        self.assertEqual(ExperimentRunner(config, os.path.join(self.dir, "x")).run(), EXIT_CONFIG)
        report = load_report(os.path.join(self.dir, "x", "report.json"))
        self.assertEqual(report["errors"][0]["code"], "CONFIG_INVALID")

    def test_orbit_trees_have_zero_defect(self):
        config = {
            "name": "orbit_trees", "kind": "tree-build", "study": "zero_defect", "seed": 1,
            "params": {
                "constructions": ["schottky", "geometric"],
                "schottky": {"factors": [{"kind": "cyclic", "translation": 1.0}, {"kind": "finite", "order": 3}],
                             "max_norm": 3.0, "sample_points": 20},
                "geometric": {
                    "tree": {"root": 0, "vertices": [0, 1], "edges": [{"a": 0, "b": 1, "len": 1.0}]},
                    "points": [0, 1], "groups": [{"kind": "finite", "order": 2}, {"kind": "finite", "order": 2}],
                    "o": 0, "max_length": 4, "sample_points": 20,
                },
            },
        }
        self.assertEqual(ExperimentRunner(config, os.path.join(self.dir, "t")).run(), EXIT_PASS)
        report = load_report(os.path.join(self.dir, "t", "report.json"))
        for name in ("schottky_four_point", "schottky_orbit_realization", "geometric_four_point", "geometric_orbit_realization"):
            self.assertIn(name, report["checks"])

    def test_missing_parameter(self):
        config = {"name": "trees", "kind": "tree-build", "study": "zero_defect", "params": {}}
        self.assertEqual(ExperimentRunner(config, os.path.join(self.dir, "y")).run(), EXIT_CONFIG)


if __name__ == "__main__":
    unittest.main()
