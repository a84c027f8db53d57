"""
Poincare series and orbital counting of enumerated orbits, exponent fits,
modified exponents over separated nets, exact Poincare sets of pure Schottky
products and polynomial growth of nilpotent Cayley graphs.
"""

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import brentq

from .config import POINCARE_PARAMS, TOLERANCE_PARAMS
from .errors import WorkbenchError
from .group_actions import COUNTING, CYCLIC, FINITE, Factor, orbit_enumerate

logger = logging.getLogger(__name__)

UNDECIDED = "UNDECIDED"


@dataclass
class PoincareProfile:
    """Sorted orbit norms up to a cutoff rho_max."""

    norms: np.ndarray
    rho_max: float
    label: str = ""

    def counting(self, rho: float) -> int:
        """N(rho), the number of orbit points with norm <= rho."""
        return int(np.searchsorted(self.norms, rho + 1e-12, side="right"))

    def poincare_series(self, s: float) -> float:
        """Partial Poincare series sum of e^{-s ||g||} over the stored norms."""
        return float(np.sum(np.exp(-s * self.norms)))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "label": self.label,
            "rho_max": self.rho_max,
            "size": int(self.norms.size),
            "max_norm": float(self.norms[-1]),
        }


@dataclass
class NetProfile:
    """Maximal rho-separated subset of an orbit sample with its exponent."""

    rho: float
    elements: List[Any]
    norms: np.ndarray
    delta: float
    band: float

    def to_dict(self) -> Dict[str, Any]:
        return {"rho": self.rho, "size": len(self.elements), "delta": self.delta, "band": self.band}


def build_profile(orbit: Iterable[Any], rho_max: Optional[float] = None, label: str = "") -> PoincareProfile:
    """
    Build a profile from an orbit stream.

    Args:
        orbit: (element, norm) pairs or bare norms; the identity must be present
        rho_max: Cutoff; defaults to the largest norm

    Raises:
        WorkbenchError: EMPTY_ORBIT, OUT_OF_RANGE
    """
    norms = np.array([item[1] if isinstance(item, tuple) else item for item in orbit], dtype=float)
    if norms.size == 0:
        raise WorkbenchError("EMPTY_ORBIT", "orbit stream is empty")
    if np.any(norms < -TOLERANCE_PARAMS["exact"]):
        raise WorkbenchError("OUT_OF_RANGE", "orbit norms must be nonnegative")
    norms = np.sort(np.maximum(norms, 0.0))
    if norms[0] > TOLERANCE_PARAMS["exact"]:
        raise WorkbenchError("EMPTY_ORBIT", "orbit stream does not contain the identity")
    rho_max = float(norms[-1]) if rho_max is None else float(rho_max)
    norms = norms[norms <= rho_max + 1e-12]
    logger.debug(f"Profile {label or '<orbit>'}: {norms.size} points up to rho = {rho_max:.4g}")
    return PoincareProfile(norms, rho_max, label)


def profile_from_action(action: Any, rho_max: float, budget: Optional[int] = None) -> PoincareProfile:
    """Enumerate the orbit of an action up to norm rho_max and profile it."""
    orbit = orbit_enumerate(action, max_norm=rho_max, budget=budget)
    return build_profile(orbit, rho_max, getattr(action, "label", ""))


def counting(profile: PoincareProfile, rho: float) -> int:
    return profile.counting(rho)


def poincare_series(profile: PoincareProfile, s: float) -> float:
    return profile.poincare_series(s)


def _slope_fit(x: np.ndarray, y: np.ndarray) -> Tuple[float, float]:
    """Least-squares slope and its standard error."""
    A = np.vstack([x, np.ones_like(x)]).T
    coef, _, _, _ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    dof = max(len(x) - 2, 1)
    sigma2 = float(resid @ resid) / dof
    spread = float(np.sum((x - x.mean()) ** 2))
    stderr = math.sqrt(sigma2 / spread) if spread > 0 else math.inf
    return float(coef[0]), stderr


def exponent_estimate(profile: PoincareProfile, window: Optional[float] = None) -> Dict[str, Any]:
    """
    Slope of log N(rho) against rho over the upper part of the range,
    sampled at the jumps of N.

    The band is twice the standard error plus the drift between the fit on
    the window and the fit on its upper half.

    Returns:
        Dict[str, Any]: delta_hat, band, low, high, points, window

    Raises:
        WorkbenchError: INSUFFICIENT_RANGE
    """
    window = POINCARE_PARAMS["fit_window"] if window is None else window
    lower = profile.rho_max * (1.0 - window)
    jumps = np.unique(profile.norms)
    rhos = jumps[jumps >= lower]
    if rhos.size < 4 or rhos[-1] - rhos[0] <= 0:
        raise WorkbenchError(
            "INSUFFICIENT_RANGE",
            f"only {rhos.size} distinct norms in [{lower:.4g}, {profile.rho_max:.4g}]; the orbit looks bounded",
            {"points": int(rhos.size), "rho_max": profile.rho_max},
        )
    logN = np.log([profile.counting(r) for r in rhos])
    slope, stderr = _slope_fit(rhos, logN)
    upper = rhos >= profile.rho_max * (1.0 - 0.5 * window)
    drift = 0.0
    if np.count_nonzero(upper) >= 4:
        upper_slope, _ = _slope_fit(rhos[upper], logN[upper])
        drift = abs(upper_slope - slope)
    band = 2.0 * stderr + drift
    logger.info(f"Exponent fit {profile.label or '<orbit>'}: {slope:.6f} +/- {band:.6f} from {rhos.size} jumps")
    return {
        "delta_hat": slope,
        "band": band,
        "low": slope - band,
        "high": slope + band,
        "points": int(rhos.size),
        "window": [float(rhos[0]), float(profile.rho_max)],
    }


def modified_exponent(orbit: Sequence[Tuple[Any, float]], rho: float,
                      distance: Callable[[Any, Any], float], window: Optional[float] = None) -> NetProfile:
    """
    Greedy maximal rho-separated net of an orbit sample, scanned in norm
    order, with the exponent of its counting function.

    Args:
        orbit: (element, norm) pairs
        rho: Separation radius
        distance: d(g o, h o) for two elements

    Raises:
        WorkbenchError: EMPTY, OUT_OF_RANGE, INSUFFICIENT_RANGE
    """
    if not orbit:
        raise WorkbenchError("EMPTY", "orbit sample is empty")
    if not rho > 0:
        raise WorkbenchError("OUT_OF_RANGE", f"separation radius must be positive (got {rho})")
    ordered = sorted(orbit, key=lambda item: item[1])
    net: List[Tuple[Any, float]] = []
    for g, norm in ordered:
        if all(distance(g, h) >= rho - 1e-12 for h, _ in net):
            net.append((g, norm))
    norms = np.array([n for _, n in net])
    if len(net) == 1:
        return NetProfile(rho, [net[0][0]], norms, 0.0, 0.0)
    rho_max = max(n for _, n in orbit)
    fit = exponent_estimate(build_profile(norms, rho_max), window)
    logger.info(f"Net at rho = {rho}: {len(net)} of {len(orbit)} points, exponent {fit['delta_hat']:.4f}")
    return NetProfile(rho, [g for g, _ in net], norms, fit["delta_hat"], fit["band"])


# ----------------------------------------------------------------------
# Schottky products


@dataclass
class FactorSeries:
    """
    Closed form of Sigma_s(H) - 1 for one factor, with its exponent and
    whether the series diverges there.
    """

    label: str
    delta: float
    divergent: Union[bool, str]
    q: Callable[[float], float] = field(repr=False)

    def to_dict(self) -> Dict[str, Any]:
        return {"label": self.label, "delta": self.delta, "divergence_type": self.divergent}


def _counting_series(spec) -> FactorSeries:
    listed = list(zip(spec.lambdas, spec.mults))
    log_total = sum(math.log(n) for _, n in listed)

    def listed_sum(s: float) -> float:
        total, below = 0.0, 1
        for lam, n in listed:
            total += below * (n - 1) * math.exp(-s * lam)
            below *= n
        return total

    if spec.tail is None:
        return FactorSeries("counting", 0.0, False, listed_sum)

    kind, rate, N = spec.tail
    last = spec.lambdas[-1] if spec.lambdas else 0.0
    if kind == "arithmetic":
        delta = math.log(N) / rate

        def q(s: float) -> float:
            ratio = math.log(N) - s * rate
            if ratio >= 0:
                return math.inf
            head = math.log(N - 1) + log_total - s * last - s * rate
            return listed_sum(s) + math.exp(head) / -math.expm1(ratio)

        return FactorSeries("counting", delta, True, q)

    def q_geometric(s: float) -> float:
        if s <= 0:
            return math.inf
        total, lam, log_below = listed_sum(s), last, log_total
        prev = None
        for _ in range(100_000):
            lam *= rate
            log_term = math.log(N - 1) + log_below - s * lam
            term = math.exp(log_term) if log_term > -745 else 0.0
            total += term
            if prev is not None and term <= 0.5 * prev and term <= 1e-18 * max(total, 1.0):
                return total + term
            prev, log_below = term, log_below + math.log(N)
        raise WorkbenchError("FACTOR_SERIES_UNKNOWN", f"geometric tail series did not settle at s = {s}")

    return FactorSeries("counting", 0.0, True, q_geometric)


def factor_series(factor: Factor) -> FactorSeries:
    """
    Sigma_s(H) - 1 in closed form: 2 e^{-sr} / (1 - e^{-sr}) for Z, the
    finite sum for Z/N, level counts with a closed or certified tail for
    counting factors.

    Raises:
        WorkbenchError: FACTOR_SERIES_UNKNOWN
    """
    if not isinstance(factor, Factor):
        raise WorkbenchError("FACTOR_SERIES_UNKNOWN", f"no closed-form series for {factor!r}")
    if factor.kind == CYCLIC:
        r = factor.translation

        def q(s: float) -> float:
            return math.inf if s <= 0 else 2.0 * math.exp(-s * r) / -math.expm1(-s * r)

        return FactorSeries("Z", 0.0, True, q)
    if factor.kind == FINITE:
        norms = np.array(factor.norms)
        return FactorSeries(factor.label, 0.0, False, lambda s: float(np.sum(np.exp(-s * norms))))
    if factor.kind == COUNTING:
        return _counting_series(factor.spec)
    raise WorkbenchError("FACTOR_SERIES_UNKNOWN", f"no closed-form series for factor kind {factor.kind}")


def transfer_matrix(series: Sequence[FactorSeries], s: float, D: Optional[np.ndarray] = None) -> np.ndarray:
    """
    M_s(a, b) = (Sigma_s(H_b) - 1) e^{-s D(a, b)} for a != b, zero on the
    diagonal; D holds the distances between the points the factors are
    attached at (all zero for a pure Schottky product).
    """
    q = np.array([f.q(s) for f in series])
    M = np.tile(q, (len(q), 1))
    if D is not None:
        M = M * np.exp(-s * np.asarray(D, dtype=float))
    np.fill_diagonal(M, 0.0)
    return M


def _criterion(series: Sequence[FactorSeries], s: float, D: Optional[np.ndarray] = None) -> float:
    """Spectral radius of the transfer matrix at s."""
    q = np.array([f.q(s) for f in series])
    if np.any(np.isinf(q)):
        return math.inf
    return float(np.max(np.abs(np.linalg.eigvals(transfer_matrix(series, s, D)))))


def _poincare_set(series: Sequence[FactorSeries], D: Optional[np.ndarray], label: str) -> Dict[str, Any]:
    if any(math.isinf(f.delta) for f in series):
        logger.info(f"{label}: a factor diverges at every s, delta = inf")
        return {
            "delta": math.inf,
            "divergence_type": True,
            "criterion_at_root": None,
            "poincare_set": "[0, inf)",
            "factors": [f.to_dict() for f in series],
        }
    if len(series) == 1:
        delta, divergent, value = series[0].delta, series[0].divergent, None
    else:
        s_min = max(f.delta for f in series)
        lo = s_min + POINCARE_PARAMS["bracket_low"]
        hi = POINCARE_PARAMS["bracket_high"]

        def excess(s: float) -> float:
            return _criterion(series, s, D) - 1.0

        if excess(hi) >= 0:
            raise WorkbenchError("INCONCLUSIVE", f"criterion still >= 1 at s = {hi}")
        if excess(lo) > 0:
            delta = brentq(excess, lo, hi, xtol=POINCARE_PARAMS["root_tolerance"], rtol=4 * np.finfo(float).eps)
            value = _criterion(series, delta, D)
            divergent = abs(value - 1.0) <= TOLERANCE_PARAMS["fit"]
        else:
            delta = s_min
            try:
                value = _criterion(series, s_min, D)
            except WorkbenchError:
                value = None
            if value is None or math.isinf(value):
                divergent = UNDECIDED
            else:
                divergent = abs(value - 1.0) <= TOLERANCE_PARAMS["fit"]

    closed = "]" if divergent is True else ")"
    logger.info(f"{label}: delta = {delta:.12f}, divergence type {divergent}")
    return {
        "delta": float(delta),
        "divergence_type": divergent,
        "criterion_at_root": value,
        "poincare_set": f"[0, {delta:.12g}{closed}" if divergent is not UNDECIDED else UNDECIDED,
        "factors": [f.to_dict() for f in series],
    }


def schottky_poincare_set(factors: Sequence[Factor]) -> Dict[str, Any]:
    """
    Exact Poincare exponent and set of a pure Schottky product: delta is
    the root of spectral radius = 1, and the product is of divergence type
    when the criterion equals 1 at delta.

    Returns:
        Dict[str, Any]: delta, divergence_type, criterion_at_root,
            poincare_set, factors

    Raises:
        WorkbenchError: EMPTY_FACTOR, FACTOR_SERIES_UNKNOWN, INCONCLUSIVE
    """
    if not factors:
        raise WorkbenchError("EMPTY_FACTOR", "a Schottky product needs at least one factor")
    series = [factor_series(f) for f in factors]
    return _poincare_set(series, None, "Schottky product of " + " * ".join(f.label for f in series))


def point_series(factor: Factor) -> FactorSeries:
    """Sigma_s(Gamma_p) - 1 for a group fixing its point: every element costs nothing."""
    if factor.kind == FINITE:
        return FactorSeries(factor.label, 0.0, False, lambda s: float(factor.order - 1))
    return FactorSeries(factor.label, math.inf, True, lambda s: math.inf)


def geometric_poincare_set(factors: Sequence[Factor], attached: Sequence[bool], D: np.ndarray) -> Dict[str, Any]:
    """
    Exact Poincare exponent of a geometric product: the transfer matrix
    carries e^{-s d(p_a, p_b)} between consecutive points, groups fixing
    their point contribute |Gamma_p| - 1 and attached factor trees their
    own series. An infinite group fixing a point gives delta = inf.

    Raises:
        WorkbenchError: EMPTY_FACTOR, FACTOR_SERIES_UNKNOWN, INCONCLUSIVE
    """
    if not factors:
        raise WorkbenchError("EMPTY_FACTOR", "a geometric product needs at least one group")
    series = [factor_series(f) if on_tree else point_series(f) for f, on_tree in zip(factors, attached)]
    return _poincare_set(series, D, "Geometric product of " + ", ".join(f.label for f in series))


# ----------------------------------------------------------------------
# growth of finitely generated groups


def _cayley_rule(cayley: Dict[str, Any]) -> Tuple[str, Any, List[Any], Callable[[Any, Any], Any]]:
    group = cayley.get("group")
    if group == "Z^d":
        d = int(cayley.get("rank", 1))
        if d < 1:
            raise WorkbenchError("OUT_OF_RANGE", "lattice rank must be positive")
        gens = []
        for i in range(d):
            for sign in (1, -1):
                gens.append(tuple(sign if j == i else 0 for j in range(d)))
        return f"Z^{d}", (0,) * d, gens, lambda x, y: tuple(a + b for a, b in zip(x, y))
    if group == "heisenberg":
        gens = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0)]

        def mul(x, y):
            return (x[0] + y[0], x[1] + y[1], x[2] + y[2] + x[0] * y[1])

        return "heisenberg", (0, 0, 0), gens, mul
    if group in ("trivial", "torsion"):
        return group, (), [], lambda x, y: x
    raise WorkbenchError("OUT_OF_RANGE", f"unsupported Cayley group '{group}'")


def ball_sizes(cayley: Dict[str, Any], radius: int, budget: Optional[int] = None) -> List[int]:
    """|B(R)| for R = 0..radius by breadth-first search in the Cayley graph."""
    budget = POINCARE_PARAMS["growth_budget"] if budget is None else budget
    _, e, gens, mul = _cayley_rule(cayley)
    seen = {e}
    frontier = deque([e])
    sizes = [1]
    for _ in range(radius):
        nxt = deque()
        for x in frontier:
            for g in gens:
                y = mul(x, g)
                if y not in seen:
                    seen.add(y)
                    nxt.append(y)
        if len(seen) > budget:
            raise WorkbenchError("BUDGET_EXCEEDED", f"Cayley ball exceeds {budget} elements", {"budget": budget})
        sizes.append(len(seen))
        frontier = nxt
    return sizes


def growth_rate(cayley: Dict[str, Any], radius: Optional[int] = None, budget: Optional[int] = None) -> Dict[str, Any]:
    """
    Polynomial growth degree from BFS ball sizes: least squares of log|B(R)|
    on (log R, 1, 1/R) over R in [radius / 2, radius].

    Raises:
        WorkbenchError: BUDGET_EXCEEDED, OUT_OF_RANGE
    """
    radius = POINCARE_PARAMS["growth_radius"] if radius is None else int(radius)
    if radius < 8:
        raise WorkbenchError("OUT_OF_RANGE", f"growth radius must be at least 8 (got {radius})")
    label = _cayley_rule(cayley)[0]
    sizes = ball_sizes(cayley, radius, budget)
    R = np.arange(radius // 2, radius + 1, dtype=float)
    y = np.log(np.array(sizes, dtype=float)[R.astype(int)])
    A = np.vstack([np.log(R), np.ones_like(R), 1.0 / R]).T
    coef, _, _, _ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    dof = max(len(R) - 3, 1)
    cov = (float(resid @ resid) / dof) * np.linalg.pinv(A.T @ A)
    band = 2.0 * math.sqrt(max(cov[0, 0], 0.0))
    logger.info(f"Growth of {label}: alpha = {coef[0]:.4f} +/- {band:.4f} (|B({radius})| = {sizes[-1]})")
    return {"group": label, "alpha_hat": float(coef[0]), "band": band, "ball_sizes": sizes}


def parabolic_bound_check(action: Any, cayley: Dict[str, Any], rho_max: float,
                          radius: Optional[int] = None) -> Dict[str, Any]:
    """
    Check delta >= alpha / 2 for a parabolic action against the growth of
    the same group.

    Raises:
        WorkbenchError: MISMATCHED_GROUP
    """
    label = _cayley_rule(cayley)[0]
    expected = "torsion" if getattr(action, "label", None) == "counting" else getattr(action, "label", None)
    if not (label == expected or (expected == "torsion" and label == "trivial")):
        raise WorkbenchError(
            "MISMATCHED_GROUP", f"action on {action.label!r} cannot be compared with Cayley group {label!r}",
            {"action": getattr(action, "label", None), "cayley": label},
        )
    fit = exponent_estimate(profile_from_action(action, rho_max))
    if label in ("trivial", "torsion"):
        growth = {"group": label, "alpha_hat": 0.0, "band": 0.0}
    else:
        growth = growth_rate(cayley, radius)
    passed = fit["delta_hat"] + fit["band"] >= 0.5 * growth["alpha_hat"] - growth["band"]
    report = {
        "group": label,
        "delta_hat": fit["delta_hat"],
        "delta_band": fit["band"],
        "alpha_hat": growth["alpha_hat"],
        "alpha_band": growth["band"],
        "passed": bool(passed),
    }
    if passed:
        logger.info(f"Parabolic bound holds for {label}: {fit['delta_hat']:.4f} >= {0.5 * growth['alpha_hat']:.4f}")
    else:
        logger.warning(f"Parabolic bound violated for {label}: {report}")
    return report
