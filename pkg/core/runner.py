"""
Experiment runner for the workbench.

An experiment is a JSON file naming a kind, a study and its parameters:

    {
        "name": "f2_poincare",
        "kind": "poincare",
        "study": "schottky_exponent",
        "description": "Exact and fitted exponent of Z * Z",
        "seed": 0,
        "params": {...},
        "tolerances": {"exact": 1e-10},
        "assertions": ["delta_exact", "fit_within_5pct"]
    }

Running it writes report.json (checks, fitted constants, errors) and
data.csv (the raw sweep) to the output directory. Independent sweep points
can be spread over a process pool; results are merged in submission order
so reports do not depend on the number of jobs.
"""

import glob
import json
import logging
import math
from fractions import Fraction
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .actions import build_action, geometric_product, orbit_tree, pure_schottky_tree
from .bim_embedding import BimConfig, bim_translation_length, build_form, embed, represent_isometry
from .coarse_geometry import (
    BoundaryPoint,
    GromovContext,
    busemann,
    hamenstadt_dist,
    model_context,
    polar_coords,
    strong_hyperbolicity_slack,
)
from .config import MEASURE_PARAMS, RUNNER_PARAMS, TOLERANCE_PARAMS
from .errors import ConfigError, WorkbenchError
from .experiment_tracker import ExperimentTracker
from .group_actions import (
    CYCLIC,
    FINITE,
    EdelsteinSpec,
    Factor,
    Word,
    classify_isometry,
    coding_limit_point,
    edelstein_comparison_sum,
    edelstein_displacement,
    edelstein_exactness,
    orbit_enumerate,
)
from .hyperbolic_models import (
    BALL,
    HALFSPACE,
    MODELS,
    ModelPoint,
    Similarity,
    busemann_halfspace,
    convert,
    dist,
    lorentz_boost,
    origin,
    poincare_extension,
    random_point,
    spatial_rotation,
)
from .measures import (
    CuspLaw,
    cusp_tail_sums,
    cylinder_measure,
    doubling_and_dimension_tests,
    global_formula_verify,
    global_measure_context,
    limit_point_samples,
    schottky_cylinder_measure,
    shadow_lemma_check,
    trace,
)
from .partition_structures import (
    ahlfors_check,
    free_group_structure,
    schottky_structure,
    thick_substructure_measure,
    uniform_structure,
    validate,
)
from .poincare import (
    exponent_estimate,
    growth_rate,
    parabolic_bound_check,
    profile_from_action,
    schottky_poincare_set,
)
from .rtree import (
    RTree,
    StaplePlan,
    UltrametricSpace,
    cone_build,
    max_four_point_defect,
    random_tree,
    staple_bruteforce_distance,
    staple_build,
    staple_recipe_distance,
    star_tree,
)
from .visualization import PlotDataWriter, merge_rows

logger = logging.getLogger(__name__)

EXIT_PASS = 0
EXIT_ASSERTION = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

# kind -> study -> handler method
STUDIES = {
    "model-check": {"exactness": "_model_exactness", "worked": "_model_worked"},
    "tree-build": {"zero_defect": "_tree_zero_defect"},
    "bim": {"identity": "_bim_identity"},
    "poincare": {"schottky_exponent": "_poincare_exponent", "growth": "_poincare_growth"},
    "measure": {
        "schottky_measure": "_measure_schottky",
        "global_formula": "_measure_global_formula",
        "doubling_dimension": "_measure_doubling",
    },
    "partition": {"thick_measure": "_partition_thick"},
    "group": {"edelstein": "_group_edelstein", "classification": "_group_classification"},
}

CUTOFF_KEYS = ("rho_max", "depth", "n_max", "t_max", "radius", "levels", "max_length", "samples", "pairs_per_point")


# ----------------------------------------------------------------------
# configs


def _number(value: Any) -> float:
    """JSON number, or the string "e" for Euler's number."""
    if value == "e":
        return math.e
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}")
    return float(value)


def validate_experiment(config: Any, source: str = "<config>") -> Dict[str, Any]:
    """
    Validate an experiment config.

    Args:
        config: Parsed JSON object
        source: Where the config came from (for messages)

    Returns:
        Dict[str, Any]: The config

    Raises:
        ConfigError: naming the offending field
    """
    if not isinstance(config, dict):
        raise ConfigError(f"{source}: experiment config must be a JSON object")
    name = config.get("name")
    if not isinstance(name, str) or not name:
        raise ConfigError(f"{source}: name must be a non-empty string", "name")
    kind = config.get("kind")
    if kind not in STUDIES:
        raise ConfigError(f"{source}: unknown experiment kind {kind!r} (expected one of {sorted(STUDIES)})", "kind")
    study = config.get("study")
    if study not in STUDIES[kind]:
        raise ConfigError(f"{source}: unknown study {study!r} for kind {kind} (expected one of {sorted(STUDIES[kind])})", "study")
    params = config.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError(f"{source}: params must be an object", "params")
    for key in CUTOFF_KEYS:
        if key in params:
            value = params[key]
            if isinstance(value, bool) or not isinstance(value, (int, float)) or value <= 0:
                raise ConfigError(f"{source}: cutoff {key} must be a positive number (got {value!r})", f"params.{key}")
    seed = config.get("seed")
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int) or seed < 0):
        raise ConfigError(f"{source}: seed must be a nonnegative integer (got {seed!r})", "seed")
    tolerances = config.get("tolerances", {})
    if not isinstance(tolerances, dict):
        raise ConfigError(f"{source}: tolerances must be an object", "tolerances")
    for key, value in tolerances.items():
        if key not in TOLERANCE_PARAMS:
            raise ConfigError(f"{source}: unknown tolerance {key!r}", f"tolerances.{key}")
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value <= 0:
            raise ConfigError(f"{source}: tolerance {key} must be positive (got {value!r})", f"tolerances.{key}")
    assertions = config.get("assertions")
    if assertions is not None and (not isinstance(assertions, list) or not all(isinstance(a, str) for a in assertions)):
        raise ConfigError(f"{source}: assertions must be a list of check names", "assertions")
    return config


def load_experiment(path: str) -> Dict[str, Any]:
    """
    Read and validate an experiment config; the name defaults to the file stem.

    Raises:
        ConfigError: unreadable file, malformed JSON or invalid fields
    """
    try:
        with open(path, "r") as f:
            config = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: malformed JSON ({e.msg} at line {e.lineno}, column {e.colno})", "json")
    except OSError as e:
        raise ConfigError(f"cannot read experiment config {path}: {e}", "config")
    if isinstance(config, dict):
        config.setdefault("name", os.path.splitext(os.path.basename(path))[0])
    return validate_experiment(config, path)


def list_experiments(filter: Optional[str] = None, directory: Optional[str] = None) -> List[Dict[str, Any]]:
    """
    Catalog of bundled experiment configs.

    Args:
        filter: Keep configs whose kind equals the filter or whose name contains it
        directory: Config directory (defaults to RUNNER_PARAMS["experiments_dir"])

    Returns:
        List[Dict[str, Any]]: name, kind, study, description and path, sorted by name
    """
    directory = RUNNER_PARAMS["experiments_dir"] if directory is None else directory
    catalog = []
    for path in sorted(glob.glob(os.path.join(directory, "*.json"))):
        try:
            config = load_experiment(path)
        except ConfigError as e:
            logger.warning(f"Skipping invalid experiment config: {e}")
            continue
        entry = {
            "name": config["name"],
            "kind": config["kind"],
            "study": config["study"],
            "description": config.get("description", ""),
            "path": path,
        }
        if filter:
            needle = filter.lower()
            if entry["kind"] != needle and needle not in entry["name"].lower():
                continue
        catalog.append(entry)
    return sorted(catalog, key=lambda entry: entry["name"])


# ----------------------------------------------------------------------
# sweep points (module level so that a process pool can run them)


def _model_sweep_point(task: Dict[str, Any]) -> Dict[str, Any]:
    """Metric axioms, conversions and strong hyperbolicity on random points of one model."""
    model, n = task["model"], task["n"]
    rng = np.random.default_rng([task["seed"], task["index"]])
    ctx = model_context(model, n)
    others = [m for m in MODELS if m != model]
    worst = {"self_distance": 0.0, "symmetry": 0.0, "triangle": 0.0, "conversion": 0.0, "round_trip": 0.0, "isometry": 0.0}
    min_slack = math.inf
    for _ in range(task["pairs"]):
        x, y, z, w = (random_point(model, n, rng, task["radius"]) for _ in range(4))
        dxy = dist(x, y)
        scale = max(1.0, dxy)
        worst["self_distance"] = max(worst["self_distance"], dist(x, x))
        worst["symmetry"] = max(worst["symmetry"], abs(dxy - dist(y, x)))
        worst["triangle"] = max(worst["triangle"], (dxy - dist(x, z) - dist(z, y)) / scale)
        for m in others:
            worst["conversion"] = max(worst["conversion"], abs(dist(convert(x, m), convert(y, m)) - dxy) / scale)
            back = convert(convert(x, m), model)
            spread = max(1.0, float(np.max(np.abs(x.coords))))
            worst["round_trip"] = max(worst["round_trip"], float(np.max(np.abs(back.coords - x.coords))) / spread)
        g = lorentz_boost(int(rng.integers(1, n + 1)), float(rng.uniform(-1.0, 1.0)), n)
        worst["isometry"] = max(worst["isometry"], abs(dist(g(x), g(y)) - dxy) / scale)
        min_slack = min(min_slack, strong_hyperbolicity_slack(ctx, x, y, z, w))
    row = {"model": model, "n": n, "pairs": task["pairs"]}
    row.update({f"max_{key}": value for key, value in worst.items()})
    row["min_strong_slack"] = min_slack
    logger.debug(f"Model sweep {model}^{n}: {row}")
    return row


def _random_ultrametric(m: int, rng: np.random.Generator) -> UltrametricSpace:
    """Random dendrogram: merge two random clusters at increasing levels."""
    clusters = [[i] for i in range(m)]
    D = np.zeros((m, m))
    level = float(rng.uniform(0.1, 0.5))
    while len(clusters) > 1:
        i, j = sorted(int(v) for v in rng.choice(len(clusters), 2, replace=False))
        for a in clusters[i]:
            for b in clusters[j]:
                D[a, b] = D[b, a] = level
        clusters[i] = clusters[i] + clusters[j]
        clusters.pop(j)
        level *= float(rng.uniform(1.2, 2.0))
    return UltrametricSpace([f"z{i}" for i in range(m)], D)


def _tree_construction(task: Dict[str, Any]) -> Dict[str, Any]:
    """Four-point defect of one tree construction plus its exact identity residual."""
    name, params = task["construction"], task["params"]
    rng = np.random.default_rng([task["seed"], task["index"]])
    residual = None
    if name == "cone":
        Z = _random_ultrametric(int(params.get("points", 12)), rng)
        cone = cone_build(Z)
        ctx = GromovContext(cone.tree, cone.basepoint())
        residual = 0.0
        for i, z1 in enumerate(Z.ids):
            for z2 in Z.ids[i + 1:]:
                value = hamenstadt_dist(ctx, cone.infinity, cone.iota(z1), cone.iota(z2))
                residual = max(residual, abs(value - Z.dist(z1, z2)) / Z.dist(z1, z2))
        points = [cone.tree.random_point(rng) for _ in range(int(params.get("sample_points", 40)))]
        distance = cone.tree.distance
    elif name == "stapled":
        plan = StaplePlan.from_dict(params["plan"])
        stapled = staple_build(plan)
        residual = 0.0
        pairs = [(v, x) for v, piece in plan.pieces.items() for x in piece.vertices]
        for v, x in pairs:
            for w, y in pairs:
                brute = staple_bruteforce_distance(plan, v, x, w, y)
                residual = max(
                    residual,
                    abs(staple_recipe_distance(plan, v, x, w, y) - brute),
                    abs(stapled.distance(v, x, w, y) - brute),
                )
        points = stapled.tree.vertices + [
            stapled.tree.random_point(rng) for _ in range(int(params.get("sample_points", 20)))
        ]
        distance = stapled.tree.distance
    elif name in ("schottky", "geometric"):
        if name == "schottky":
            action = pure_schottky_tree(params["factors"])
        else:
            action = geometric_product(RTree.from_dict(params["tree"]), params["points"], params["groups"],
                                       params.get("o"), params.get("attached"))
        max_norm = params.get("max_norm")
        max_length = params.get("max_length", 4 if max_norm is None else None)
        tree = orbit_tree(action, max_norm, max_length)
        residual = 0.0
        words = [g for g, _ in orbit_enumerate(action, max_norm, max_length) if str(g) in tree.graph]
        for i, g in enumerate(words):
            for h in words[i + 1:]:
                residual = max(residual, abs(tree.distance(str(g), str(h)) - action.distance(g, h)))
        points = tree.vertices + [tree.random_point(rng) for _ in range(int(params.get("sample_points", 40)))]
        distance = tree.distance
    else:
        raise ConfigError(f"unknown tree construction {name!r}", "params.constructions")
    D = np.array([[distance(p, q) for q in points] for p in points])
    defect = max_four_point_defect(D, rng, int(task["samples"]))
    return {
        "construction": name,
        "points": len(points),
        "max_defect": defect,
        "scale": max(1.0, float(D.max())),
        "identity_residual": residual,
    }


def _bim_case(task: Dict[str, Any]) -> Dict[str, Any]:
    """Embed one configuration at one lambda and measure its residuals."""
    source, params, lam = task["source"], task["params"], task["lambda"]
    rng = np.random.default_rng([task["seed"], task["index"]])
    mapping, action, generator = None, None, None
    if source == "tripod":
        legs = [float(v) for v in params.get("legs", [1.0, 1.0, 1.0])]
        points = ["c"] + [f"p{i}" for i in range(len(legs))]
        cfg = BimConfig.from_tree(star_tree(legs), points, lam)
        if len(set(legs)) == 1:
            mapping = {"c": "c", **{f"p{i}": f"p{(i + 1) % len(legs)}" for i in range(len(legs))}}
    elif source == "cayley_ball":
        action = pure_schottky_tree(params["factors"])
        orbit = orbit_enumerate(action, max_length=int(params.get("max_length", 2)))[: int(params.get("size", 10))]
        elements = [g for g, _ in orbit]
        cfg = BimConfig.from_action(action, elements, lam)
        generator = action.product.reduce([tuple(letter) for letter in params.get("generator", [[0, 1]])])
        members = set(elements)
        mapping = {}
        for g in elements:
            image = action.product.multiply(generator, g)
            if image in members:
                mapping[g] = image
    elif source == "random_tree":
        tree = random_tree(int(params.get("vertices", 20)), rng, params.get("low", 0.2), params.get("high", 1.0))
        cfg = BimConfig.from_tree(tree, tree.vertices, lam)
    else:
        raise ConfigError(f"unknown BIM source {source!r}", "params.configurations")

    form = build_form(cfg)
    embedding = embed(cfg, form)
    positive, negative = form.signature
    row = {
        "source": source,
        "lambda": lam,
        "points": len(cfg.ids),
        "residual": embedding.residual,
        "positive": positive,
        "negative": negative,
        "min_abs_eigenvalue": form.min_abs_eigenvalue,
        "equivariance": None,
        "translation_length": None,
        "translation_expected": None,
    }
    if mapping:
        M = represent_isometry(cfg, mapping, embedding).matrix
        worst = 0.0
        for v, image in mapping.items():
            target = embedding.point(image)
            worst = max(worst, float(np.max(np.abs(M @ embedding.point(v) - target))) / max(1.0, float(np.max(np.abs(target)))))
        row["equivariance"] = worst
    if action is not None:
        ell = action.norm(action.product.power(generator, 2)) - action.norm(generator)
        row["translation_length"] = bim_translation_length(action, generator, lam)
        row["translation_expected"] = ell * math.log(lam)
    return row


def _poincare_case(task: Dict[str, Any]) -> Tuple[Dict[str, Any], List[Dict[str, Any]]]:
    """Exact exponent of one Schottky product and, if asked, the enumeration fit."""
    factors = [Factor.from_dict(f) for f in task["factors"]]
    report = schottky_poincare_set(factors)
    row = {
        "label": " * ".join(f.label for f in factors),
        "delta": report["delta"],
        "expected": task.get("expected"),
        "divergence_type": str(report["divergence_type"]),
        "criterion_at_root": report["criterion_at_root"],
        "poincare_set": report["poincare_set"],
        "delta_hat": None,
        "band": None,
        "orbit_points": None,
    }
    counting_rows = []
    if task.get("rho_max"):
        profile = profile_from_action(pure_schottky_tree(factors), float(task["rho_max"]))
        fit = exponent_estimate(profile, task.get("window"))
        row.update(delta_hat=fit["delta_hat"], band=fit["band"], orbit_points=int(profile.norms.size))
        for rho in np.unique(profile.norms):
            N = profile.counting(rho)
            counting_rows.append({"rho": float(rho), "N": N, "log_N": math.log(N)})
    return row, counting_rows


def _growth_case(task: Dict[str, Any]) -> Dict[str, Any]:
    fit = growth_rate(task["cayley"], task.get("radius"))
    low, high = task["expected_range"]
    return {
        "group": fit["group"],
        "alpha_hat": fit["alpha_hat"],
        "band": fit["band"],
        "expected_low": float(low),
        "expected_high": float(high),
        "ball_size": fit["ball_sizes"][-1],
    }


def _parabolic_case(task: Dict[str, Any]) -> Dict[str, Any]:
    action = build_action(task["action"])
    return parabolic_bound_check(action, task["cayley"], float(task["rho_max"]), task.get("radius"))


def _edelstein_row(task: Dict[str, Any]) -> Dict[str, Any]:
    spec = EdelsteinSpec.from_dict(task["spec"])
    n = task["n"]
    displacement = edelstein_displacement(spec, n)
    return {
        "k": task["k"],
        "n": n,
        "displacement": displacement["value"],
        "tail_bound": displacement["tail"],
        "comparison_sum": edelstein_comparison_sum(spec, n),
        "exactness": edelstein_exactness(spec, n),
    }


def _model_isometry(case: Dict[str, Any]) -> Any:
    kind = case["type"]
    if kind == "boost":
        return lorentz_boost(int(case.get("axis", 1)), float(case["rapidity"]), int(case.get("n", 2)))
    if kind == "rotation":
        return spatial_rotation(int(case.get("i", 1)), int(case.get("j", 2)), float(case["angle"]), int(case.get("n", 2)))
    if kind == "translation":
        return poincare_extension(Similarity.translation_by(case["vector"]))
    if kind == "dilation":
        return poincare_extension(Similarity.dilation(float(case["scale"]), int(case.get("boundary_dim", 1))))
    raise ConfigError(f"unknown isometry type {kind!r}", "params.cases")


def _classification_case(task: Dict[str, Any]) -> Dict[str, Any]:
    case = task["case"]
    if case["type"] == "word":
        action = build_action(case["action"])
        g = action.product.reduce([tuple(letter) for letter in case["word"]])
        result = classify_isometry(g, action, task.get("n_max"))
    else:
        result = classify_isometry(_model_isometry(case), None, task.get("n_max"))
    return {
        "case": case.get("label", case["type"]),
        "kind": result.kind,
        "expected": case["expect"],
        "translation_length": result.translation_length,
        "expected_length": case.get("translation_length"),
        "witness_holds": result.evidence.get("witness_holds"),
    }


# ----------------------------------------------------------------------
# runner


def _random_cayley_word(action: Any, length: int, rng: np.random.Generator) -> Word:
    """Reduced word of the given length in the generators of the factors (+-1 for Z, 1..N-1 for Z/N)."""
    factors = action.product.factors
    letters: List[Tuple[int, int]] = []
    while len(letters) < length:
        a = int(rng.integers(len(factors)))
        f = factors[a]
        if f.kind == CYCLIC:
            x = int(rng.choice([1, -1]))
            if letters and letters[-1] == (a, -x):
                continue
        elif f.kind == FINITE:
            if letters and letters[-1][0] == a:
                continue
            x = int(rng.integers(1, f.order))
        else:
            raise WorkbenchError("BAD_FACTOR", "Cayley words are drawn from cyclic and finite factors")
        letters.append((a, x))
    return action.product.reduce(letters)


class ExperimentRunner:
    """
    Run one validated experiment config and write its report and sweep.
    """

    def __init__(self, config: Dict[str, Any], out_dir: Optional[str] = None,
                 seed: Optional[int] = None, jobs: Optional[int] = None):
        """
        Initialize the runner.

        Args:
            config: Validated experiment config
            out_dir: Output directory (defaults to <RUNNER_PARAMS out_dir>/<name>)
            seed: Overrides the config seed
            jobs: Worker processes for independent sweep points

        Raises:
            ConfigError: if seed or jobs are invalid
        """
        self.config = config
        self.name = config["name"]
        self.kind = config["kind"]
        self.study = config["study"]
        self.params = config.get("params", {})
        self.seed = config.get("seed", RUNNER_PARAMS["seed"]) if seed is None else seed
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a nonnegative integer (got {self.seed!r})", "seed")
        self.jobs = RUNNER_PARAMS["jobs"] if jobs is None else jobs
        if self.jobs < 1:
            raise ConfigError(f"jobs must be positive (got {self.jobs})", "jobs")
        self.out_dir = out_dir or os.path.join(RUNNER_PARAMS["out_dir"], self.name)
        self.tol = dict(TOLERANCE_PARAMS)
        self.tol.update(config.get("tolerances", {}))
        self.rng = np.random.default_rng(self.seed)

    def _map(self, fn: Callable[[Dict[str, Any]], Any], tasks: Sequence[Dict[str, Any]]) -> List[Any]:
        """Run independent sweep points, in a process pool when jobs > 1; results keep task order."""
        if self.jobs <= 1 or len(tasks) <= 1:
            return [fn(task) for task in tasks]
        logger.info(f"[{self.name}] Dispatching {len(tasks)} sweep points to {self.jobs} workers")
        with ProcessPoolExecutor(max_workers=self.jobs) as pool:
            return list(pool.map(fn, tasks))

    def run(self) -> int:
        """
        Run the study, write report.json and data.csv.

        Returns:
            int: 0 if every asserted check passed, 1 on an assertion failure,
                2 on a config error, 3 on a numerical failure
        """
        tracker = ExperimentTracker(self.name, self.kind, self.seed, self.config.get("assertions"))
        handler = getattr(self, STUDIES[self.kind][self.study])
        logger.info(f"Running experiment {self.name} ({self.kind}/{self.study}, seed {self.seed}, jobs {self.jobs})")
        writer = PlotDataWriter(self.out_dir)
        try:
            rows, traces = handler(tracker, self.params)
        except ConfigError as e:
            logger.error(f"[{self.name}] Invalid parameters: {e}")
            tracker.record_error(e)
            tracker.save_report(self.out_dir)
            return EXIT_CONFIG
        except KeyError as e:
            error = ConfigError(f"missing parameter {e.args[0]!r}", f"params.{e.args[0]}")
            logger.error(f"[{self.name}] {error}")
            tracker.record_error(error)
            tracker.save_report(self.out_dir)
            return EXIT_CONFIG
        except WorkbenchError as e:
            logger.exception(f"[{self.name}] Numerical failure: {e}")
            tracker.record_error(e)
            tracker.save_report(self.out_dir)
            return EXIT_NUMERICAL

        writer.write_sweep(rows)
        if traces:
            writer.write_traces(traces)
        tracker.save_report(self.out_dir)
        summary = tracker.get_summary()
        if tracker.passed:
            logger.info(f"Experiment {self.name} passed ({summary['asserted']} asserted checks)")
            return EXIT_PASS
        logger.warning(f"Experiment {self.name} failed checks: {', '.join(summary['failed'])}")
        return EXIT_ASSERTION

    # ------------------------------------------------------------------
    # model-check

    def _model_exactness(self, tracker: ExperimentTracker, params: Dict[str, Any]):
        models = params.get("models", list(MODELS))
        dims = params.get("dimensions", list(range(2, 9)))
        tasks = []
        for model in models:
            if model not in MODELS:
                raise ConfigError(f"unknown model {model!r}", "params.models")
            for n in dims:
                tasks.append({
                    "model": model, "n": int(n), "pairs": int(params.get("pairs_per_point", 1500)),
                    "radius": float(params.get("radius", 3.0)), "seed": self.seed, "index": len(tasks),
                })
        rows = merge_rows([[row] for row in self._map(_model_sweep_point, tasks)])
        frame = pd.DataFrame(rows)
        tol = self.tol["exact"]
        tracker.record_constant("pairs_per_model", int(frame.groupby("model")["pairs"].sum().min()))
        tracker.check_at_most("self_distance", float(frame["max_self_distance"].max()), tol)
        tracker.check_at_most("symmetry", float(frame["max_symmetry"].max()), tol)
        tracker.check_at_most("triangle", float(frame["max_triangle"].max()), tol)
        tracker.check_at_most("conversion_isometry", float(frame["max_conversion"].max()), tol)
        tracker.check_at_most("round_trip", float(frame["max_round_trip"].max()), tol)
        tracker.check_at_most("isometry_invariance", float(frame["max_isometry"].max()), tol)
        tracker.check_at_least("strong_hyperbolicity", float(frame["min_strong_slack"].min()), -tol)
        return rows, {}

    def _model_worked(self, tracker: ExperimentTracker, params: Dict[str, Any]):
        tol = float(params.get("tolerance", 1e-12))
        ctx = model_context(HALFSPACE, 2)
        zero, infinity = BoundaryPoint.in_model(HALFSPACE, [0.0]), BoundaryPoint.infinity()
        a, b = ModelPoint(HALFSPACE, [1.0, 0.0]), ModelPoint(HALFSPACE, [math.e, 0.0])
        tilted = ModelPoint(HALFSPACE, [0.5, math.sqrt(3.0) / 2.0])
        r_b, theta_b = polar_coords(ctx, zero, infinity, b)
        r_t, theta_t = polar_coords(ctx, zero, infinity, tilted)
        values = [
            ("ball_distance", dist(origin(BALL, 2), ModelPoint(BALL, [0.6, 0.0])), math.log(2.0)),
            ("halfspace_distance", dist(a, b), 1.0),
            ("busemann_at_infinity", busemann_halfspace(a, b), 1.0),
            ("busemann_cocycle", busemann(ctx, infinity, a, b), 1.0),
            ("polar_r", r_b, 1.0),
            ("polar_theta", theta_b, 0.0),
            ("polar_r_tilted", r_t, 0.0),
            ("polar_theta_tilted", theta_t, math.log(2.0)),
        ]
        rows = []
        for name, value, expected in values:
            tracker.check_close(name, value, expected, tol)
            rows.append({"quantity": name, "value": value, "expected": expected, "error": abs(value - expected)})
        return rows, {}

    # ------------------------------------------------------------------
    # tree-build

    def _tree_zero_defect(self, tracker: ExperimentTracker, params: Dict[str, Any]):
        constructions = params["constructions"]
        tasks = [
            {"construction": name, "params": params.get(name, {}), "seed": self.seed, "index": i,
             "samples": int(params.get("samples", 10_000))}
            for i, name in enumerate(constructions)
        ]
        rows = self._map(_tree_construction, tasks)
        for row in rows:
            name = row["construction"]
            tracker.check_at_most(f"{name}_four_point", row["max_defect"], self.tol["tree"] * row["scale"])
            if row["identity_residual"] is not None:
                label = {"cone": "cone_boundary_identity", "stapled": "stapled_distance_recipe"}.get(
                    name, f"{name}_orbit_realization")
                tracker.check_at_most(label, row["identity_residual"], self.tol["exact"])
        return rows, {}

    # ------------------------------------------------------------------
    # bim

    def _bim_identity(self, tracker: ExperimentTracker, params: Dict[str, Any]):
        lambdas = [_number(v) for v in params.get("lambdas", ["e"])]
        tasks = []
        for conf in params["configurations"]:
            for lam in lambdas:
                tasks.append({"source": conf["source"], "params": conf, "lambda": lam, "seed": self.seed, "index": len(tasks)})
        rows = self._map(_bim_case, tasks)
        frame = pd.DataFrame(rows)
        tracker.check_at_most("cosh_identity", float(frame["residual"].max()), self.tol["bim"])
        signature_ok = bool(((frame["negative"] == 1) & (frame["positive"] == frame["points"] - 1)).all())
        tracker.record_check("signature", signature_ok, signature_ok, "(m-1, 1)")
        equivariance = frame["equivariance"].dropna()
        if len(equivariance):
            tracker.check_at_most("equivariance", float(equivariance.max()), self.tol["equivariance"])
        lengths = frame.dropna(subset=["translation_length"])
        if len(lengths):
            gap = float((lengths["translation_length"] - lengths["translation_expected"]).abs().max())
            tracker.check_at_most("translation_length", gap, self.tol["fit"])
        return rows, {}

    # ------------------------------------------------------------------
    # poincare

    def _poincare_exponent(self, tracker: ExperimentTracker, params: Dict[str, Any]):
        cases = params["cases"]
        tasks = [dict(case, index=i) for i, case in enumerate(cases)]
        results = self._map(_poincare_case, tasks)
        rows = [row for row, _ in results]
        traces = {}
        for i, (row, counting_rows) in enumerate(results):
            prefix = f"case{i}"
            if row["expected"] is not None:
                tracker.check_close(f"{prefix}_delta_exact", row["delta"], float(row["expected"]), self.tol["exact"])
            tracker.record_constant(f"{prefix}_delta", row["delta"])
            tracker.record_constant(f"{prefix}_poincare_set", row["poincare_set"])
            if "divergence_type" in cases[i]:
                expected = str(cases[i]["divergence_type"])
                tracker.record_check(f"{prefix}_divergence_type", row["divergence_type"], row["divergence_type"] == expected, expected)
            if row["delta_hat"] is not None:
                relative = abs(row["delta_hat"] - row["delta"]) / row["delta"]
                tracker.check_at_most(f"{prefix}_fit_within_5pct", relative, float(params.get("fit_tolerance", 0.05)))
                tracker.record_check(
                    f"{prefix}_band_covers", row["band"],
                    abs(row["delta_hat"] - row["delta"]) <= row["band"], abs(row["delta_hat"] - row["delta"]),
                )
                traces[prefix] = pd.DataFrame(counting_rows)
        return rows, {key: frame for key, frame in traces.items() if not frame.empty}

    def _poincare_growth(self, tracker: ExperimentTracker, params: Dict[str, Any]):
        growth_tasks = [dict(case, index=i) for i, case in enumerate(params.get("growth", []))]
        bound_tasks = [dict(case, index=i) for i, case in enumerate(params.get("parabolic", []))]
        rows = []
        for row in self._map(_growth_case, growth_tasks):
            inside = row["expected_low"] <= row["alpha_hat"] <= row["expected_high"]
            tracker.record_check(f"growth_{row['group']}", row["alpha_hat"], inside, [row["expected_low"], row["expected_high"]])
            rows.append(dict(row, check="growth"))
        for report in self._map(_parabolic_case, bound_tasks):
            tracker.record_check(
                f"parabolic_bound_{report['group']}", report["delta_hat"], report["passed"], 0.5 * report["alpha_hat"]
            )
            rows.append({
                "group": report["group"], "alpha_hat": report["alpha_hat"], "band": report["alpha_band"],
                "delta_hat": report["delta_hat"], "delta_band": report["delta_band"], "check": "parabolic_bound",
            })
        return rows, {}

    # ------------------------------------------------------------------
    # measure

    def _measure_schottky(self, tracker: ExperimentTracker, params: Dict[str, Any]):
        action = pure_schottky_tree(params["factors"])
        measure = schottky_cylinder_measure(action)
        tracker.record_constant("delta", measure.delta)
        tracker.record_constant("perron_weights", measure.c.tolist())
        first = float(params.get("first_level_mass", 0.25))
        rows, worst = [], 0.0
        for n in range(1, int(params.get("levels", 10)) + 1):
            g = _random_cayley_word(action, n, self.rng)
            mass = measure.shadow_mass(g, 0.0)
            expected = first * math.exp(-measure.delta * (n - 1))
            worst = max(worst, abs(mass - expected) / expected)
            rows.append({"level": n, "word": str(g), "norm": action.norm(g), "mass": mass, "expected": expected})
        tracker.check_at_most("cylinder_masses", worst, self.tol["exact"])

        shadow = shadow_lemma_check(measure, action, float(params.get("sigma", 1.0)), float(params.get("rho_max", 6.0)))
        tracker.check_at_most("shadow_spread", shadow["spread"], float(params.get("spread_bound", 3.0)))
        tracker.record_constant("shadow_ratio_range", [shadow["min_ratio"], shadow["max_ratio"]])

        pairs = [
            (_random_cayley_word(action, int(self.rng.integers(1, 4)), self.rng),
             _random_cayley_word(action, int(self.rng.integers(1, 5)), self.rng))
            for _ in range(int(params.get("conformality_pairs", 200)))
        ]
        tracker.check_at_most("conformality", measure.conformality_residual(pairs), self.tol["exact"])
        return rows, {"atoms": measure.to_frame(float(params.get("atoms_norm", 4.0)))}

    def _measure_global_formula(self, tracker: ExperimentTracker, params: Dict[str, Any]):
        if "geometric" in params:
            spec = params["geometric"]
            action = geometric_product(RTree.from_dict(spec["tree"]), spec["points"], spec["groups"],
                                       spec.get("o"), spec.get("attached"))
        else:
            action = pure_schottky_tree(params["factors"])
        measure = cylinder_measure(action)
        t_max = float(params.get("t_max", 15.0))
        depth = float(params.get("depth", t_max + 5.0))
        samples = limit_point_samples(action, depth, int(params.get("samples", 20)), self.rng)
        ctx = global_measure_context(measure, samples, t_max, params.get("t0"), params.get("theta"))
        tracker.record_constant("action", action.label)
        tracker.record_constant("delta", measure.delta)
        tracker.record_constant("t0", ctx.t0)
        tracker.record_constant("theta", ctx.theta)

        report = global_formula_verify(measure, ctx, samples, t_max, depth, float(params.get("t_step", 0.5)))
        tracker.record_check("sandwich", report["constant"], report["passed"], MEASURE_PARAMS["constant_cap"], witness=report["worst"])
        tracker.check_at_most("sigma_hat", report["sigma_hat"], float(params.get("sigma_bound", MEASURE_PARAMS["sigma_cap"])))
        tracker.check_at_most("constant", report["constant"], float(params.get("constant_bound", MEASURE_PARAMS["constant_cap"])))

        worst = 0.0
        for a, spec in sorted(ctx.cusps.items()):
            for R in params.get("tail_radii", [2.0, 5.0, 10.0]):
                sums = cusp_tail_sums(spec, measure.delta, float(R))
                worst = max(worst, sums["residual"] / max(1.0, sums["check"]))
        if ctx.cusps:
            tracker.check_at_most("cusp_tail_identity", worst, self.tol["fit"])

        frames = []
        for i, eta in enumerate(samples[: int(params.get("trace_samples", 3))]):
            frame = trace(ctx, eta, t_max)
            frame.insert(0, "sample", i)
            frames.append(frame)
        rows = pd.concat(frames, ignore_index=True)
        return rows, {}

    def _measure_doubling(self, tracker: ExperimentTracker, params: Dict[str, Any]):
        if "delta" in params:
            delta = _number(params["delta"])
            divergent = bool(params.get("divergence_type", True))
        else:
            report = schottky_poincare_set([Factor.from_dict(f) for f in params["factors"]])
            delta, divergent = report["delta"], report["divergence_type"] is True
        tracker.record_constant("delta", delta)
        rows = []
        for i, entry in enumerate(params["laws"]):
            label = entry.get("label", f"law{i}")
            law = CuspLaw.from_dict(entry["law"])
            verdicts = doubling_and_dimension_tests([law], delta, divergent)
            lower, upper = law.doubling_exponents()
            row = {
                "law": label,
                "kind": law.kind,
                "dexp_lower": lower,
                "dexp_upper": upper,
                "doubling": verdicts["doubling"]["verdict"],
                "exact_dimensional": verdicts["exact_dimensional"]["verdict"],
                "partial_series": law.partial_series(delta),
            }
            rows.append(row)
            for key, expected in sorted(entry.get("expect", {}).items()):
                tracker.record_check(f"{label}_{key}", row[key], row[key] == expected, expected)
        return rows, {}

    # ------------------------------------------------------------------
    # partition

    def _build_structure(self, source: Dict[str, Any], s: float):
        kind = source.get("kind")
        depth = int(source.get("depth", 8))
        if kind == "free_group":
            return free_group_structure(int(source.get("rank", 2)), depth, s)
        if kind == "uniform":
            ratio = source["ratio"]
            ratio = Fraction(ratio) if isinstance(ratio, str) else float(ratio)
            return uniform_structure(int(source["branching"]), ratio, depth, s)
        if kind == "schottky":
            return schottky_structure(pure_schottky_tree(source["factors"]), depth, s)
        raise ConfigError(f"unknown partition structure kind {kind!r}", "params.structure.kind")

    def _partition_thick(self, tracker: ExperimentTracker, params: Dict[str, Any]):
        s = float(params["s"])
        structure = self._build_structure(params["structure"], s)
        validity = validate(structure)
        tracker.record_check("structure_valid", validity["valid"], validity["valid"], True, violation=validity.get("violation"))
        measure = thick_substructure_measure(structure, s)
        violation = measure.regularity_violation()
        tracker.record_check(
            "regularity", None if violation is None else list(violation), violation is None, "c D^s <= mu < D^s"
        )
        tracker.check_at_most("consistency", measure.consistency_residual(), self.tol["exact"])
        report = ahlfors_check(measure, structure, strict=False)
        tracker.check_at_least("ahlfors_lower", report["C1"], report["C1_envelope"] * (1 - self.tol["exact"]))
        tracker.check_at_most("ahlfors_upper", report["C2"], report["C2_envelope"] * (1 + self.tol["exact"]))
        tracker.record_check("ball_sandwich", report["ball_sandwich"], report["ball_sandwich"], True)
        tracker.record_constant("c", float(measure.c))
        tracker.record_constant("hausdorff_dimension_lower_bound", report["hausdorff_dimension_lower_bound"])

        levels: Dict[int, Dict[str, Any]] = {}
        for w, weight in measure.weights.items():
            ratio = float(weight) / float(structure.D[w]) ** s
            entry = levels.setdefault(len(w), {"depth": len(w), "nodes": 0, "min_ratio": math.inf, "max_ratio": 0.0})
            entry["nodes"] += 1
            entry["min_ratio"] = min(entry["min_ratio"], ratio)
            entry["max_ratio"] = max(entry["max_ratio"], ratio)
        rows = [levels[d] for d in sorted(levels)]
        return rows, {}

    # ------------------------------------------------------------------
    # group

    def _group_edelstein(self, tracker: ExperimentTracker, params: Dict[str, Any]):
        spec_data = params["spec"]
        spec = EdelsteinSpec.from_dict(spec_data)
        ks = [int(k) for k in params["ks"]]
        if spec.family == "geometric":
            ns = [2 ** k for k in ks]
        elif spec.family == "factorial":
            ns = [math.factorial(k) for k in ks]
        else:
            ns = [int(n) for n in params["ns"]]
        tasks = [{"spec": spec_data, "k": k, "n": n} for k, n in zip(ks, ns)]
        rows = self._map(_edelstein_row, tasks)
        tracker.check_at_most("exactness", max(row["exactness"] for row in rows), self.tol["exact"])

        if spec.family == "geometric":
            worst_tail, worst_comparison = 0.0, 0.0
            for row in rows:
                closed = sum(4.0 * spec.b ** 2 * math.sin(math.pi * 2.0 ** -m) ** 2 for m in range(1, spec.K - row["k"] + 1))
                worst_tail = max(worst_tail, abs(row["displacement"] - closed))
                worst_comparison = max(worst_comparison, abs(row["comparison_sum"] - spec.b ** 2 / 3.0))
            tracker.check_at_most("closed_tail_sum", worst_tail, self.tol["exact"])
            tracker.check_at_most("comparison_one_third", worst_comparison, self.tol["exact"])
        elif spec.family == "factorial":
            values = [row["displacement"] for row in rows]
            decreasing = all(b < a for a, b in zip(values, values[1:]))
            tracker.record_check("strictly_decreasing", decreasing, decreasing, True)
            tracker.check_at_most("final_displacement", values[-1], float(params.get("final_bound", 0.5)))
        return rows, {}

    def _group_classification(self, tracker: ExperimentTracker, params: Dict[str, Any]):
        tasks = [{"case": case, "n_max": params.get("n_max")} for case in params.get("cases", [])]
        rows = []
        for row in self._map(_classification_case, tasks):
            label = row["case"]
            tracker.record_check(f"{label}_kind", row["kind"], row["kind"] == row["expected"], row["expected"])
            if row["expected_length"] is not None:
                tracker.check_close(f"{label}_translation_length", row["translation_length"], float(row["expected_length"]), self.tol["fit"])
            if row["witness_holds"] is not None:
                tracker.record_check(f"{label}_witness", row["witness_holds"], bool(row["witness_holds"]), True)
            rows.append(dict(row, study="classification"))

        coding = params.get("coding")
        if coding:
            action = build_action(coding["action"])
            address = [tuple(letter) for letter in coding["address"]]
            constants = []
            for depth in coding.get("depths", list(range(1, len(address) + 1))):
                point = coding_limit_point(action, address, int(depth))
                constants.append(point.constant)
                rows.append({"case": f"coding_depth_{depth}", "kind": "coding", "translation_length": point.radius,
                             "expected_length": None, "study": "coding", "constant": point.constant})
            spread = max(constants) / min(constants)
            tracker.check_at_most("coding_constant_spread", spread, MEASURE_PARAMS["constant_cap"])
        return rows, {}


def run_experiment(path: str, out_dir: Optional[str] = None, seed: Optional[int] = None,
                   jobs: Optional[int] = None) -> int:
    """
    Load, validate and run an experiment config.

    Returns:
        int: Process exit code

    Raises:
        ConfigError: if the config is invalid
    """
    config = load_experiment(path)
    return ExperimentRunner(config, out_dir, seed, jobs).run()
