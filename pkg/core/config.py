"""
Configuration file for the hyperbolic geometry workbench.

This file contains all tolerances, cutoffs and defaults used by the
workbench modules. Every value can be overridden from the environment (or a
.env file) with a WORKBENCH_ prefixed variable.
"""

import math
import os
from typing import Dict, Any

from dotenv import load_dotenv

load_dotenv()


def _env_float(name: str, default: float) -> float:
    return float(os.getenv(f"WORKBENCH_{name}", default))


def _env_int(name: str, default: int) -> int:
    return int(os.getenv(f"WORKBENCH_{name}", default))


def _env_grid(name: str, default: str):
    raw = os.getenv(f"WORKBENCH_{name}", default)
    return [float(v) for v in raw.split(",") if v.strip()]


def validate_config(config: Dict[str, Any], section: str):
    """
    Validate a configuration dictionary.

    Args:
        config: The configuration dictionary to validate
        section: The name of the configuration section (for error messages)

    Raises:
        ValueError: If any required keys are missing or have invalid values
    """
    required_keys = {
        "TOLERANCE_PARAMS": ["exact", "fit", "tree", "bim", "equivariance"],
        "MODEL_PARAMS": ["max_dimension"],
        "GROUP_PARAMS": ["word_budget", "n_max", "edelstein_tail_tolerance"],
        "BIM_PARAMS": ["default_lambda", "overflow_guard"],
        "POINCARE_PARAMS": [
            "fit_window",
            "bracket_low",
            "bracket_high",
            "root_tolerance",
            "growth_radius",
            "growth_budget",
        ],
        "MEASURE_PARAMS": [
            "shadow_spread_bound",
            "sigma_cap",
            "constant_cap",
            "theta_grid",
            "t0_grid",
            "patterson_schedule_bound",
            "patterson_margin",
        ],
        "PARTITION_PARAMS": ["depth_cap"],
        "RUNNER_PARAMS": ["experiments_dir", "out_dir", "seed", "jobs"],
    }

    for key in required_keys[section]:
        if key not in config:
            raise ValueError(f"Missing required key '{key}' in {section} configuration")

    if section == "TOLERANCE_PARAMS":
        for key in required_keys[section]:
            if config[key] <= 0 or config[key] >= 1:
                raise ValueError(f"{key} tolerance must be between 0 and 1 (got {config[key]})")

    elif section == "MODEL_PARAMS":
        if config["max_dimension"] < 2:
            raise ValueError(f"max_dimension must be at least 2 (got {config['max_dimension']})")

    elif section == "GROUP_PARAMS":
        if config["word_budget"] < 1:
            raise ValueError(f"word_budget must be positive (got {config['word_budget']})")
        if config["n_max"] < 8:
            raise ValueError(f"n_max must be at least 8 (got {config['n_max']})")

    elif section == "BIM_PARAMS":
        if config["default_lambda"] <= 1:
            raise ValueError(f"default_lambda must be greater than 1 (got {config['default_lambda']})")

    elif section == "POINCARE_PARAMS":
        if config["fit_window"] <= 0 or config["fit_window"] > 1:
            raise ValueError(f"fit_window must be in (0, 1] (got {config['fit_window']})")
        if config["bracket_low"] <= 0 or config["bracket_low"] >= config["bracket_high"]:
            raise ValueError(
                f"bracket must satisfy 0 < low < high (got [{config['bracket_low']}, {config['bracket_high']}])"
            )

    elif section == "MEASURE_PARAMS":
        if config["shadow_spread_bound"] < 1:
            raise ValueError(f"shadow_spread_bound must be at least 1 (got {config['shadow_spread_bound']})")
        if not config["theta_grid"] or not config["t0_grid"]:
            raise ValueError("theta_grid and t0_grid must be non-empty")

    elif section == "PARTITION_PARAMS":
        if config["depth_cap"] < 1:
            raise ValueError(f"depth_cap must be positive (got {config['depth_cap']})")

    elif section == "RUNNER_PARAMS":
        if config["jobs"] < 1:
            raise ValueError(f"jobs must be positive (got {config['jobs']})")


# Equality tolerances
TOLERANCE_PARAMS = {
    "exact": _env_float("TOL_EXACT", 1e-9),          # closed-form identities in the models
    "fit": _env_float("TOL_FIT", 1e-6),              # fitted asymptotics, dynamical derivatives
    "tree": _env_float("TOL_TREE", 1e-12),           # four-point defect on trees
    "bim": _env_float("TOL_BIM", 1e-8),              # cosh d = lambda^d residual
    "equivariance": _env_float("TOL_EQUIVARIANCE", 1e-7),
}

# Hyperbolic model parameters
MODEL_PARAMS = {
    "max_dimension": _env_int("MAX_DIMENSION", 64),
}

# Group action parameters
GROUP_PARAMS = {
    "word_budget": _env_int("WORD_BUDGET", 2_000_000),   # cap on enumerated orbit points
    "n_max": _env_int("N_MAX", 32),                      # iteration budget for derivatives/classification
    "edelstein_tail_tolerance": _env_float("EDELSTEIN_TAIL_TOLERANCE", 1e-9),
}

# BIM embedding parameters
BIM_PARAMS = {
    "default_lambda": _env_float("BIM_LAMBDA", math.e),
    "overflow_guard": _env_float("BIM_OVERFLOW_GUARD", 1e300),
}

# Poincare exponent parameters
POINCARE_PARAMS = {
    "fit_window": _env_float("FIT_WINDOW", 0.5),         # upper share of the rho range used by fits
    "bracket_low": _env_float("BRACKET_LOW", 1e-6),
    "bracket_high": _env_float("BRACKET_HIGH", 50.0),
    "root_tolerance": _env_float("ROOT_TOLERANCE", 1e-12),
    "growth_radius": _env_int("GROWTH_RADIUS", 20),
    "growth_budget": _env_int("GROWTH_BUDGET", 5_000_000),
}

# Measure parameters
MEASURE_PARAMS = {
    "shadow_spread_bound": _env_float("SHADOW_SPREAD_BOUND", 100.0),
    "sigma_cap": _env_float("SIGMA_CAP", 3.0),
    "constant_cap": _env_float("CONSTANT_CAP", 100.0),
    "theta_grid": _env_grid("THETA_GRID", "0,0.5,1,1.5,2,3"),
    "t0_grid": _env_grid("T0_GRID", "0,0.5,1,2,3"),
    "patterson_schedule_bound": _env_float("PATTERSON_SCHEDULE_BOUND", 1e6),
    "patterson_margin": _env_float("PATTERSON_MARGIN", 0.05),
}

# Partition structure parameters
PARTITION_PARAMS = {
    "depth_cap": _env_int("DEPTH_CAP", 12),
}

# Experiment runner parameters
RUNNER_PARAMS = {
    "experiments_dir": os.getenv(
        "WORKBENCH_EXPERIMENTS_DIR",
        os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "config", "experiments"),
    ),
    "out_dir": os.getenv("WORKBENCH_OUT_DIR", "results"),
    "seed": _env_int("SEED", 0),
    "jobs": _env_int("JOBS", 1),
}

# Logging configuration
LOGGING_CONFIG = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "standard": {
            "format": "%(asctime)s [%(levelname)s] %(name)s: %(message)s"
        },
    },
    "handlers": {
        "default": {
            "level": os.getenv("WORKBENCH_LOG_LEVEL", "INFO"),
            "formatter": "standard",
            "class": "logging.StreamHandler",
            "stream": "ext://sys.stdout",
        },
        "file": {
            "level": "DEBUG",
            "formatter": "standard",
            "class": "logging.FileHandler",
            "filename": os.getenv("WORKBENCH_LOG_FILE", "workbench.log"),
            "mode": "a",
        },
    },
    "loggers": {
        "": {
            "handlers": ["default", "file"],
            "level": "DEBUG",
            "propagate": True
        },
    }
}

# Validate configurations
validate_config(TOLERANCE_PARAMS, "TOLERANCE_PARAMS")
validate_config(MODEL_PARAMS, "MODEL_PARAMS")
validate_config(GROUP_PARAMS, "GROUP_PARAMS")
validate_config(BIM_PARAMS, "BIM_PARAMS")
validate_config(POINCARE_PARAMS, "POINCARE_PARAMS")
validate_config(MEASURE_PARAMS, "MEASURE_PARAMS")
validate_config(PARTITION_PARAMS, "PARTITION_PARAMS")
validate_config(RUNNER_PARAMS, "RUNNER_PARAMS")
