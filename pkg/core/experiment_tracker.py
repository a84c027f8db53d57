import json
import logging
import math
import os
from typing import Any, Dict, List, Optional

import numpy as np

logger = logging.getLogger(__name__)


def _normalize(value: Any) -> Any:
    """
    JSON-ready copy of a report value: floats rounded to 12 significant
    digits, non-finite floats as strings, numpy scalars and arrays unwrapped.
    """
    if isinstance(value, dict):
        return {str(k): _normalize(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_normalize(v) for v in value]
    if isinstance(value, np.ndarray):
        return _normalize(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return float(f"{value:.12g}")
    if value is None or isinstance(value, str):
        return value
    if hasattr(value, "to_dict"):
        return _normalize(value.to_dict())
    return str(value)


class ExperimentTracker:
    """
    Record the checks and fitted constants of one experiment run and write
    them to report.json.
    """

    def __init__(self, name: str, kind: str, seed: int, assertions: Optional[List[str]] = None):
        """
        Initialize the tracker.

        Args:
            name: Experiment name
            kind: Experiment kind
            seed: Random seed of the run
            assertions: Names of the checks that decide the exit code (all checks if None)
        """
        self.name = name
        self.kind = kind
        self.seed = seed
        self.assertions = assertions
        self.checks: Dict[str, Dict[str, Any]] = {}
        self.constants: Dict[str, Any] = {}
        self.errors: List[Dict[str, Any]] = []

    def record_check(self, name: str, value: Any, passed: bool, bound: Any = None, **extra: Any) -> bool:
        """
        Log a named check.

        Args:
            name: Check name
            value: Measured value
            passed: Whether the check holds
            bound: Bound or expected value it was compared with

        Returns:
            bool: passed
        """
        entry = {"value": value, "bound": bound, "passed": bool(passed)}
        entry.update(extra)
        self.checks[name] = entry
        if passed:
            logger.info(f"[{self.name}] check {name}: {value} (bound {bound}) passed")
        else:
            logger.warning(f"[{self.name}] check {name}: {value} (bound {bound}) FAILED")
        return bool(passed)

    def check_close(self, name: str, value: float, expected: float, tol: float) -> bool:
        return self.record_check(name, value, abs(value - expected) <= tol, expected, tolerance=tol)

    def check_at_most(self, name: str, value: float, bound: float) -> bool:
        return self.record_check(name, value, value <= bound, bound)

    def check_at_least(self, name: str, value: float, bound: float) -> bool:
        return self.record_check(name, value, value >= bound, bound)

    def record_constant(self, name: str, value: Any):
        self.constants[name] = value
        logger.info(f"[{self.name}] {name} = {value}")

    def record_error(self, error: Exception):
        entry = error.to_dict() if hasattr(error, "to_dict") else {"code": type(error).__name__, "message": str(error)}
        self.errors.append(entry)

    @property
    def asserted(self) -> Dict[str, Dict[str, Any]]:
        if self.assertions is None:
            return self.checks
        return {name: self.checks.get(name, {"passed": False, "missing": True}) for name in self.assertions}

    @property
    def passed(self) -> bool:
        return not self.errors and all(entry["passed"] for entry in self.asserted.values())

    def get_summary(self) -> Dict[str, Any]:
        """
        Summarize the run.

        Returns:
            dict: Counts of checks, failures and errors
        """
        failed = sorted(name for name, entry in self.asserted.items() if not entry["passed"])
        return {
            "total_checks": len(self.checks),
            "asserted": len(self.asserted),
            "failed": failed,
            "errors": len(self.errors),
            "passed": self.passed,
        }

    def to_dict(self) -> Dict[str, Any]:
        return _normalize({
            "experiment": self.name,
            "kind": self.kind,
            "seed": self.seed,
            "checks": self.checks,
            "constants": self.constants,
            "errors": self.errors,
            "summary": self.get_summary(),
        })

    def save_report(self, out_dir: str, filename: str = "report.json") -> str:
        """
        Write the report with sorted keys so that identical runs give
        byte-identical files.

        Returns:
            str: Path of the report
        """
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, filename)
        try:
            with open(path, "w") as f:
                json.dump(self.to_dict(), f, indent=2, sort_keys=True)
                f.write("\n")
        except OSError as e:
            logger.exception(f"Error saving report to {path}: {e}")
            raise
        logger.info(f"Report written to {path}")
        return path


def load_report(path: str) -> Dict[str, Any]:
    """Read a report.json written by ExperimentTracker.save_report."""
    with open(path, "r") as f:
        return json.load(f)
