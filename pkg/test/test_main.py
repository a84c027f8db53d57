#!/usr/bin/env python
"""
Tests for the command line entry point.

Run with:
    python -m unittest test.test_main
"""

import io
import json
import logging
import os
import shutil
import tempfile
import unittest
from contextlib import redirect_stdout

from main import build_parser, main

logging.basicConfig(level=logging.WARNING, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')


class TestMain(unittest.TestCase):
    """Subcommands and exit codes."""

    def setUp(self):
        self.dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.dir)

    def test_parser(self):
        args = build_parser().parse_args(["run", "--config", "x.json", "--seed", "4", "--jobs", "2"])
        self.assertEqual((args.command, args.config, args.seed, args.jobs), ("run", "x.json", 4, 2))
        args = build_parser().parse_args(["list-experiments", "bim"])
        self.assertEqual(args.filter, "bim")

    def test_run_requires_config(self):
        with self.assertRaises(SystemExit):
            build_parser().parse_args(["run"])

    def test_list_experiments(self):
        out = io.StringIO()
        with redirect_stdout(out):
            code = main(["list-experiments", "model-check"])
        self.assertEqual(code, 0)
        self.assertIn("worked_numbers", out.getvalue())
        self.assertIn("model_exactness", out.getvalue())

    def test_list_without_matches(self):
        with redirect_stdout(io.StringIO()):
            self.assertEqual(main(["list-experiments", "no-such-experiment"]), 0)

    def test_invalid_config_exits_two(self):
        path = os.path.join(self.dir, "bad.json")
        with open(path, "w") as f:
            json.dump({"name": "bad", "kind": "model-check", "study": "unknown"}, f)
        self.assertEqual(main(["run", "--config", path, "--out", self.dir]), 2)
        self.assertEqual(main(["run", "--config", os.path.join(self.dir, "absent.json")]), 2)

    def test_run_writes_report(self):
        path = os.path.join(self.dir, "worked.json")
        with open(path, "w") as f:
            json.dump({"name": "worked", "kind": "model-check", "study": "worked", "seed": 0}, f)
        out = os.path.join(self.dir, "out")
        self.assertEqual(main(["run", "--config", path, "--out", out]), 0)
        self.assertTrue(os.path.exists(os.path.join(out, "report.json")))
        self.assertTrue(os.path.exists(os.path.join(out, "data.csv")))


if __name__ == "__main__":
    unittest.main()
