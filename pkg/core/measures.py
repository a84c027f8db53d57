"""
Boundary measures of tree actions: Patterson's weighting function, the
atomic measures mu_s on orbits, exact Patterson-Sullivan measures on pure
Schottky trees and geometric products of divergence type, the shadow
lemma, the global measure formula for cusped products, and doubling /
exact-dimensionality verdicts from cusp counting laws.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from .actions import GeometricProduct, SchottkyTree
from .config import MEASURE_PARAMS, TOLERANCE_PARAMS
from .errors import WorkbenchError
from .group_actions import (
    COUNTING,
    CYCLIC,
    FINITE,
    INF_END,
    BoundaryWord,
    Factor,
    Word,
    orbit_enumerate,
)
from .poincare import (
    PoincareProfile,
    factor_series,
    geometric_poincare_set,
    point_series,
    schottky_poincare_set,
    transfer_matrix,
)
from .rtree import CountingSpec

logger = logging.getLogger(__name__)

YES = "YES"
NO = "NO"
UNDECIDED = "UNDECIDED"


# ----------------------------------------------------------------------
# Patterson's function


@dataclass
class PattersonWeight:
    """
    k(x) = exp(K(log x)) with K piecewise linear, K(0) = 0 and decreasing
    slopes, so that k(xy) <= x^{eps(y)} k(y) with eps(y) the slope at log y.
    """

    breaks: np.ndarray
    slopes: np.ndarray
    values: np.ndarray
    certified: bool
    certified_radius: float
    epsilon0: float

    def _interval(self, u: float) -> int:
        return int(np.searchsorted(self.breaks, u, side="right")) - 1

    def log_k(self, u: float) -> float:
        if u <= 0:
            return 0.0
        i = self._interval(u)
        return float(self.values[i] + self.slopes[i] * (u - self.breaks[i]))

    def __call__(self, x: float) -> float:
        return math.exp(self.log_k(math.log(x))) if x > 1 else 1.0

    def epsilon(self, y: float) -> float:
        u = math.log(y) if y > 0 else 0.0
        return float(self.slopes[max(self._interval(max(u, 0.0)), 0)])

    def grid_violation(self, pairs: int = 1000, rng: Optional[np.random.Generator] = None) -> float:
        """Largest log k(xy) - log k(y) - eps(y) log x over sampled x > 1, y > 0."""
        rng = np.random.default_rng(0) if rng is None else rng
        top = max(float(self.breaks[-1]) * 1.5, 10.0)
        worst = -math.inf
        for _ in range(pairs):
            lx, ly = rng.uniform(0.0, top), rng.uniform(-2.0, top)
            gap = self.log_k(lx + ly) - self.log_k(ly) - self.epsilon(math.exp(ly)) * lx
            worst = max(worst, gap)
        return worst

    def series(self, norms: Sequence[float], s: float) -> float:
        """Sum of k(e^{||g||}) e^{-s ||g||} over the given norms."""
        return float(sum(math.exp(self.log_k(n) - s * n) for n in norms))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "breaks": self.breaks.tolist(),
            "slopes": self.slopes.tolist(),
            "certified": self.certified,
            "certified_radius": self.certified_radius,
            "epsilon0": self.epsilon0,
        }


def _log_shell(log_counting: Callable[[float], float], u: float, delta: float) -> float:
    """Lower bound of log of the sum of e^{-delta ||g||} over u < ||g|| <= u + 1."""
    l0, l1 = log_counting(u), log_counting(u + 1.0)
    if not l1 > l0:
        return -math.inf
    return l1 + math.log1p(-math.exp(l0 - l1)) - delta * (u + 1.0)


def _infer_divergent(log_counting: Callable[[float], float], delta: float, top: float) -> bool:
    """Shell sums over [top/2, top] against [top/4, top/2]: linear growth or slower decay means divergence."""
    def block(a: float, b: float) -> float:
        terms = [_log_shell(log_counting, u, delta) for u in np.arange(a, b, 1.0)]
        return float(logsumexp(terms)) if terms else -math.inf

    first, second = block(top / 4, top / 2), block(top / 2, top)
    return second >= first + math.log(0.9)


def patterson_weight(delta: float, log_counting: Optional[Callable[[float], float]] = None,
                     profile: Optional[PoincareProfile] = None, divergent: Optional[bool] = None,
                     bound: Optional[float] = None, margin: Optional[float] = None,
                     max_shells: int = 200_000) -> PattersonWeight:
    """
    Patterson's slowly increasing weight k for an orbit of exponent delta.

    Divergence-type inputs get k = 1. Otherwise K grows with slope
    margin / 2 until the weighted series at s = delta certifiably exceeds
    `bound`, after which the slopes halve on blocks of doubling length.

    Args:
        delta: Poincare exponent
        log_counting: rho -> log N(rho), closed form of the orbital counting
        profile: Enumerated orbit used when no closed form is given
        divergent: Divergence type if known; inferred from shell sums otherwise

    Raises:
        WorkbenchError: DELTA_INFINITE
    """
    if delta is None or not math.isfinite(delta):
        raise WorkbenchError("DELTA_INFINITE", f"Patterson's construction needs a finite exponent (got {delta})")
    bound = MEASURE_PARAMS["patterson_schedule_bound"] if bound is None else bound
    margin = MEASURE_PARAMS["patterson_margin"] if margin is None else margin
    if log_counting is None:
        if profile is None:
            raise WorkbenchError("EMPTY_ORBIT", "need a counting function or an orbit profile")
        top_norm = profile.rho_max
        log_counting = lambda rho: math.log(max(profile.counting(min(rho, top_norm)), 1))
        top = top_norm
    else:
        top = 64.0
    if divergent is None:
        divergent = _infer_divergent(log_counting, delta, top)

    if divergent:
        logger.info(f"Divergence-type input at delta = {delta:.6f}: k = 1")
        return PattersonWeight(np.array([0.0]), np.array([0.0]), np.array([0.0]), True, 0.0, 0.0)

    eps0 = 0.5 * margin
    total, K, u = -math.inf, 0.0, 0.0
    limit = min(float(max_shells), top if profile is not None else float(max_shells))
    while u < limit and total < math.log(bound):
        total = np.logaddexp(total, _log_shell(log_counting, u, delta) + K)
        K += eps0
        u += 1.0
    certified = total >= math.log(bound)
    breaks, slopes = [0.0], [eps0]
    start, length, slope = u, max(u, 1.0), eps0
    for _ in range(30):
        slope *= 0.5
        breaks.append(start)
        slopes.append(slope)
        start += length
        length *= 2.0
    breaks.append(start)
    slopes.append(0.0)
    breaks_arr, slopes_arr = np.array(breaks), np.array(slopes)
    values = np.concatenate([[0.0], np.cumsum(slopes_arr[:-1] * np.diff(breaks_arr))])
    if certified:
        logger.info(f"Patterson weight: series at delta exceeds {bound:.0e} by rho = {u:.0f}")
    else:
        logger.warning(f"Patterson weight: series at delta stays below {bound:.0e} up to rho = {u:.0f}")
    return PattersonWeight(breaks_arr, slopes_arr, values, bool(certified), float(u), eps0)


# ----------------------------------------------------------------------
# atomic measures


@dataclass
class AtomicMeasure:
    """Finitely many atoms (support, weight) with positive weights."""

    atoms: List[Tuple[Any, float]]

    @property
    def total(self) -> float:
        return float(sum(w for _, w in self.atoms))

    def mass(self, predicate: Callable[[Any], bool]) -> float:
        return float(sum(w for x, w in self.atoms if predicate(x)))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"support": [str(x) for x, _ in self.atoms], "weight": [w for _, w in self.atoms]})


def mu_s(orbit: Sequence[Tuple[Any, float]], s: float, k: Optional[PattersonWeight] = None,
         delta: Optional[float] = None) -> AtomicMeasure:
    """
    mu_s = sum k(e^{||g||}) e^{-s ||g||} delta_{g o}, normalized.

    Raises:
        WorkbenchError: SERIES_DIVERGES if s <= delta, EMPTY_ORBIT
    """
    if not orbit:
        raise WorkbenchError("EMPTY_ORBIT", "mu_s needs at least one orbit point")
    if delta is not None and s <= delta:
        raise WorkbenchError("SERIES_DIVERGES", f"s = {s} is not above the exponent {delta}")
    logs = np.array([(k.log_k(n) if k is not None else 0.0) - s * n for _, n in orbit])
    weights = np.exp(logs - logsumexp(logs))
    return AtomicMeasure([(g, float(w)) for (g, _), w in zip(orbit, weights)])


def extrapolation_report(orbit: Sequence[Tuple[Any, float]], delta: float, k: Optional[PattersonWeight] = None,
                         steps: int = 6) -> List[Dict[str, float]]:
    """mu_s at s = delta + 2^-j: series value and the mass beyond half the orbit radius."""
    rho_max = max(n for _, n in orbit)
    rows = []
    for j in range(1, steps + 1):
        s = delta + 2.0 ** -j
        measure = mu_s(orbit, s, k)
        norms = np.array([n for _, n in orbit])
        weights = np.array([w for _, w in measure.atoms])
        rows.append({
            "s": s,
            "series": k.series(norms, s) if k is not None else float(np.sum(np.exp(-s * norms))),
            "outer_mass": float(weights[norms > 0.5 * rho_max].sum()),
            "mean_norm": float(weights @ norms),
        })
    return rows


# ----------------------------------------------------------------------
# Patterson-Sullivan measures on Schottky trees and geometric products


class CylinderMeasure:
    """
    The delta-conformal measure of a tree product of divergence type:
    mu(W_g) = e^{-delta ||g||} c_a for g ending in factor a.

    h is the Perron vector of the transfer matrix
    M(a, b) = (Sigma_delta(H_b) - 1) e^{-delta d(p_a, p_b)}, normalized by
    sum_b (Sigma_delta(H_b) - 1) e^{-delta d(o, p_b)} h_b = 1, and
    c_a = e^{delta d(p_a, o)} h_a. On a pure Schottky tree every distance
    vanishes and c = h.
    """

    def __init__(self, action: Any, delta: float, q: np.ndarray, h: np.ndarray, D: Optional[np.ndarray] = None):
        self.action = action
        self.product = action.product
        self.delta = delta
        self.q = q
        self.h = h
        self.D = np.zeros((len(q) + 1, len(q) + 1)) if D is None else np.asarray(D, dtype=float)
        self.attached = tuple(getattr(action, "attached", (True,) * len(q)))
        self.c = h * np.exp(delta * self.D[: len(q), len(q)])
        self._series = [factor_series(f) if on_tree else None for f, on_tree in zip(self.product.factors, self.attached)]

    @property
    def _o(self) -> int:
        return len(self.q)

    def cylinder_mass(self, g: Word) -> float:
        if not g.letters:
            return 1.0
        return math.exp(-self.delta * self.action.norm(g)) * float(self.c[g.letters[-1][0]])

    def _letter_norm(self, a: int, x: Any) -> float:
        return self.product.factors[a].norm(x) if self.attached[a] else 0.0

    def _branch_sum(self, a: int, x: Any, tau: float) -> float:
        """Sum of e^{-delta ||y||} over y != e in H_a with <x|y> >= tau; x may be an end."""
        f = self.product.factors[a]
        tol = TOLERANCE_PARAMS["exact"]
        if f.kind == CYCLIC:
            r = f.translation
            m0 = max(1, math.ceil(tau / r - tol))
            return math.exp(-self.delta * m0 * r) / -math.expm1(-self.delta * r)
        if f.kind == FINITE:
            return float(sum(math.exp(-self.delta * f.norm(y)) for y in f.elements() if f.product(x, y) >= tau - tol))
        if isinstance(x, str):
            cutoff = 2.0 * tau
            return self._series[a].q(self.delta) - self._counting_below(f, cutoff)
        lam = f.norm(x)
        total = sum(math.exp(-self.delta * f.norm(y)) for y in f.elements(lam) if f.product(x, y) >= tau - tol)
        if tau <= 0.5 * lam + tol:
            total += self._series[a].q(self.delta) - self._counting_below(f, lam + tol)
        return float(total)

    def _counting_below(self, f: Factor, cutoff: float) -> float:
        """Sum of e^{-delta ||y||} over nontrivial y with ||y|| < cutoff (<= for the closed variant)."""
        total, below, i = 0.0, 1, 0
        spec = f.spec
        while True:
            try:
                lam, n = spec.level(i)
            except WorkbenchError:
                return total
            if lam >= cutoff:
                return total
            total += below * (n - 1) * math.exp(-self.delta * lam)
            below *= n
            i += 1

    def _fork_sum(self, prev: int, target: int, tau: float) -> float:
        """
        Mass, after a prefix of weight 1 ending at p_prev, of the points
        whose next point p_b leaves [p_prev, target] at distance >= tau.
        """
        tol = TOLERANCE_PARAMS["exact"]
        D = self.D
        total = 0.0
        for b in range(len(self.q)):
            if b == prev:
                continue
            overlap = 0.5 * (D[prev, target] + D[prev, b] - D[target, b])
            if overlap >= tau - tol:
                total += self.q[b] * math.exp(-self.delta * D[prev, b]) * self.h[b]
        return float(total)

    def ray_mass(self, letters: Iterator[Tuple[int, Any]], t: float, home: bool = False) -> float:
        """
        mu of the boundary points xi with <xi | ray>_o >= t, for the ray
        from o through the points of the given letters; with `home` the ray
        returns from the last point towards the image of o.
        """
        if t <= 0:
            return 1.0
        tol = TOLERANCE_PARAMS["exact"]
        T, prev = 0.0, self._o
        for a, x in letters:
            dy = self.D[prev, a]
            if dy > 0 and t <= T + dy + tol:
                return math.exp(-self.delta * T) * self._fork_sum(prev, a, t - T)
            T += dy
            if isinstance(x, str) or (self.attached[a] and T + self.product.factors[a].norm(x) >= t - tol):
                branch = self._branch_sum(a, x, t - T)
                return float(self.h[a]) * math.exp(-self.delta * T) * branch
            T += self._letter_norm(a, x)
            prev = a
        if home and prev != self._o:
            dy = self.D[prev, self._o]
            if t <= T + dy + tol:
                return math.exp(-self.delta * T) * self._fork_sum(prev, self._o, t - T)
            T += dy
        raise WorkbenchError("OUT_OF_RANGE", f"ray of length {T} does not reach distance {t}")

    def shadow_mass(self, g: Word, sigma: float = 0.0) -> float:
        """mu(Shad_o(g o, sigma)) = mu{xi : <g o | xi>_o >= ||g|| - sigma}."""
        return self.ray_mass(iter(g.letters), self.action.norm(g) - sigma, home=True)

    def ball_mass(self, eta: Any, t: float) -> float:
        """mu(B(eta, e^{-t})) in the visual metric based at o."""
        return self.ray_mass(self.action._unwrap(eta).stream(), t)

    def conformality_residual(self, pairs: Sequence[Tuple[Word, Word]]) -> float:
        """max |mu(gamma W_g) / mu(W_g) - e^{-delta (||gamma g|| - ||g||)}| over pairs keeping the last letter of g."""
        worst = 0.0
        norm = self.action.norm
        for gamma, g in pairs:
            image = self.product.multiply(gamma, g)
            if not g.letters or not image.letters or image.letters[-1] != g.letters[-1]:
                continue
            ratio = self.cylinder_mass(image) / self.cylinder_mass(g)
            expected = math.exp(-self.delta * (norm(image) - norm(g)))
            worst = max(worst, abs(ratio - expected))
        return worst

    def additivity_residual(self, g: Word) -> float:
        """|mu(W_g) - sum of mu(W_{g y})| over one-letter extensions, finite factors only."""
        last = g.letters[-1][0] if g.letters else None
        children = 0.0
        for b, f in enumerate(self.product.factors):
            if b == last:
                continue
            if f.kind != FINITE:
                raise WorkbenchError("OUT_OF_RANGE", "additivity is enumerated over finite factors only")
            children += sum(self.cylinder_mass(self.product.multiply(g, Word(((b, y),)))) for y in f.elements())
        return abs(self.cylinder_mass(g) - children)

    def to_frame(self, max_norm: float) -> pd.DataFrame:
        orbit = orbit_enumerate(self.action, max_norm=max_norm)
        return pd.DataFrame({
            "support": [str(g) for g, _ in orbit],
            "norm": [n for _, n in orbit],
            "weight": [self.cylinder_mass(g) for g, _ in orbit],
        })

    def to_dict(self) -> Dict[str, Any]:
        return {"delta": self.delta, "q": self.q.tolist(), "h": self.h.tolist(), "c": self.c.tolist()}


def _perron_measure(action: Any, report: Dict[str, Any], D: np.ndarray) -> CylinderMeasure:
    if report["divergence_type"] is not True or len(action.factors) < 2 or not 0 < report["delta"] < math.inf:
        raise WorkbenchError(
            "NOT_DIVERGENCE_TYPE", f"{action.label} is not certified of divergence type with 0 < delta < inf",
            {"divergence_type": report["divergence_type"], "delta": report["delta"]},
        )
    delta = report["delta"]
    m = len(action.factors)
    series = [factor_series(f) if on_tree else point_series(f) for f, on_tree in zip(action.factors, action.attached)]
    q = np.array([f.q(delta) for f in series])
    w, V = np.linalg.eig(transfer_matrix(series, delta, D[:m, :m]))
    h = np.abs(np.real(V[:, int(np.argmax(np.real(w)))]))
    h = h / float((q * np.exp(-delta * D[m, :m])) @ h)
    measure = CylinderMeasure(action, delta, q, h, D)
    logger.info(f"Cylinder measure on {action.label}: delta = {delta:.10f}, weights {np.round(measure.c, 6).tolist()}")
    return measure


def schottky_cylinder_measure(action: SchottkyTree) -> CylinderMeasure:
    """
    Exact Patterson-Sullivan measure of a pure Schottky tree.

    Raises:
        WorkbenchError: NOT_DIVERGENCE_TYPE, FACTOR_SERIES_UNKNOWN
    """
    return _perron_measure(action, schottky_poincare_set(action.factors), action.point_distances())


def geometric_cylinder_measure(action: GeometricProduct) -> CylinderMeasure:
    """
    Exact Patterson-Sullivan measure of a geometric product, weighting each
    cylinder by e^{-delta ||g||} with the geometric-product norm.

    Raises:
        WorkbenchError: NOT_DIVERGENCE_TYPE (also for delta = 0 or inf),
            FACTOR_SERIES_UNKNOWN
    """
    D = action.point_distances()
    m = len(action.factors)
    return _perron_measure(action, geometric_poincare_set(action.factors, action.attached, D[:m, :m]), D)


def cylinder_measure(action: Any) -> CylinderMeasure:
    if isinstance(action, GeometricProduct):
        return geometric_cylinder_measure(action)
    return schottky_cylinder_measure(action)


def shadow_lemma_check(measure: Any, action: SchottkyTree, sigma: float, rho_max: float,
                       delta: Optional[float] = None) -> Dict[str, Any]:
    """
    Ratios mu(Shad(g o, sigma)) e^{delta ||g||} over the orbit ball of radius
    rho_max; passes when max / min stays below the configured spread bound.

    Raises:
        WorkbenchError: EMPTY_SHADOW
    """
    delta = getattr(measure, "delta", None) if delta is None else delta
    if delta is None:
        raise WorkbenchError("DELTA_INFINITE", "the exponent of the measure is unknown")
    orbit = [(g, n) for g, n in orbit_enumerate(action, max_norm=rho_max) if g.letters]
    if not orbit:
        raise WorkbenchError("EMPTY_SHADOW", f"no nontrivial orbit points up to rho = {rho_max}")
    ratios = []
    for g, n in orbit:
        if isinstance(measure, CylinderMeasure):
            m = measure.shadow_mass(g, sigma)
        else:
            m = measure.mass(lambda xi: action.gromov_product(g, xi) >= n - sigma - TOLERANCE_PARAMS["exact"])
        ratios.append(m * math.exp(delta * n))
    ratios = np.array(ratios)
    low, high = float(ratios.min()), float(ratios.max())
    infinite = low <= 0.0
    spread = math.inf if infinite else high / low
    passed = not infinite and spread <= MEASURE_PARAMS["shadow_spread_bound"]
    worst = orbit[int(np.argmin(ratios))][0]
    report = {
        "passed": bool(passed),
        "spread": spread,
        "min_ratio": low,
        "max_ratio": high,
        "infinite": infinite,
        "count": len(orbit),
        "worst": str(worst),
    }
    if passed:
        logger.info(f"Shadow lemma on {action.label} (sigma = {sigma}): spread {spread:.4f}")
    else:
        logger.warning(f"Shadow lemma fails on {action.label}: {report}")
    return report


# ----------------------------------------------------------------------
# global measure formula


def cusp_tail_sums(spec: CountingSpec, delta: float, R: float, levels: int = 4000) -> Dict[str, float]:
    """
    I_p(R) = sum over ||h||_p > R of ||h||_p^{-2 delta} and
    N_p(R) = #{||h||_p <= R} for the parabolic group of a counting spec,
    with ||h||_p = e^{||h|| / 2}; `check` is the direct sum of
    (R v ||h||_p)^{-2 delta} that I_p(R) + R^{-2 delta} N_p(R) must match.
    """
    if R <= 0:
        raise WorkbenchError("OUT_OF_RANGE", f"R must be positive (got {R})")
    cutoff = 2.0 * math.log(R)
    N = (spec.counting(cutoff) if cutoff >= 0 else 0)
    I = 1.0 if R < 1.0 else 0.0
    check = R ** (-2.0 * delta) if R >= 1.0 else 1.0
    log_below, i = 0.0, 0
    while True:
        try:
            lam, n = spec.level(i)
        except WorkbenchError:
            break
        log_count = log_below + math.log(n - 1)
        term = math.exp(log_count - delta * lam)
        if lam > cutoff:
            I += term
            check += term
        else:
            check += math.exp(log_count - 2.0 * delta * math.log(R))
        if spec.tail is not None and i >= len(spec.lambdas) and lam > cutoff:
            kind, rate, tail_n = spec.tail
            if kind == "arithmetic":
                ratio = tail_n * math.exp(-delta * rate)
                if ratio >= 1:
                    I, check = math.inf, math.inf
                else:
                    rest = term * ratio / (1.0 - ratio)
                    I += rest
                    check += rest
                break
            if term <= 1e-18 * max(I, 1e-300) or i > levels:
                break
        log_below += math.log(n)
        i += 1
    return {"I": I, "N": float(N), "check": check, "residual": abs(I + R ** (-2.0 * delta) * N - check)}


@dataclass
class Excursion:
    """Where eta_t sits relative to the horoball catalog."""

    inside: bool
    t_xi: float = 0.0
    product: float = math.inf
    factor: Optional[int] = None
    prefix: Tuple = ()


@dataclass
class GlobalMeasureContext:
    """
    Cusp data of a Schottky tree or geometric product whose counting
    factors carry the parabolic points p_a = (a, inf); horoballs H_{g p_a}
    are the parts of the cone of g's a-letters above height t0.
    """

    measure: CylinderMeasure
    t0: float
    theta: float
    cusps: Dict[int, CountingSpec] = field(default_factory=dict)
    point_masses: Dict[int, float] = field(default_factory=dict)

    @property
    def delta(self) -> float:
        return self.measure.delta

    def locate(self, eta: BoundaryWord, t: float) -> Excursion:
        measure = self.measure
        T, prev = 0.0, measure._o
        prefix: List = []
        for a, x in eta.stream():
            T += measure.D[prev, a]
            if t <= T:
                return Excursion(False)
            cusp = a in self.cusps
            if isinstance(x, str):
                if cusp and x == INF_END and t > T + self.t0:
                    return Excursion(True, T + self.t0, math.inf, a, tuple(prefix))
                return Excursion(False)
            n = measure._letter_norm(a, x)
            if t <= T + n:
                if cusp and min(t - T, T + n - t) > self.t0:
                    return Excursion(True, T + self.t0, T + 0.5 * n, a, tuple(prefix))
                return Excursion(False)
            T += n
            prev = a
            prefix.append((a, x))
        return Excursion(False)

    def _I(self, a: int, R: float) -> float:
        return cusp_tail_sums(self.cusps[a], self.delta, R)["I"]

    def _N(self, a: int, R: float) -> float:
        return float(self.cusps[a].counting(2.0 * math.log(R))) if R >= 1.0 else 0.0

    def m(self, eta: BoundaryWord, t: float) -> float:
        """Three-case ball-measure proxy m(eta, t)."""
        if t <= 0:
            return 1.0
        where = self.locate(eta, t)
        if not where.inside:
            return math.exp(-self.delta * t)
        a, t_xi, prod = where.factor, where.t_xi, where.product
        if t <= prod:
            return math.exp(-self.delta * t_xi) * (
                self._I(a, math.exp(t - t_xi - self.theta)) + self.point_masses.get(a, 0.0)
            )
        return math.exp(-self.delta * (2.0 * prod - t_xi)) * self._N(a, math.exp(2.0 * prod - t - t_xi - self.theta))

    def b(self, eta: BoundaryWord, t: float) -> float:
        """Cusp excursion b(eta, t) = min(t, 2<xi|eta> - t) - t_xi inside H_xi, else 0."""
        where = self.locate(eta, t)
        if not where.inside:
            return 0.0
        return min(t, 2.0 * where.product - t) - where.t_xi


def excursion_b(ctx: GlobalMeasureContext, eta: BoundaryWord, t: float) -> float:
    return ctx.b(eta, t)


def global_measure_m(ctx: GlobalMeasureContext, eta: Any, t: float) -> float:
    """
    Raises:
        WorkbenchError: NOT_LIMIT_POINT
    """
    eta = ctx.measure.action._unwrap(eta)
    if not isinstance(eta, BoundaryWord):
        raise WorkbenchError("NOT_LIMIT_POINT", f"{eta} is not a boundary point of the tree")
    return ctx.m(eta, t)


def near_monotonicity(ctx: GlobalMeasureContext, samples: Sequence[BoundaryWord], t_grid: Sequence[float]) -> float:
    """Smallest C with m(eta, t2) <= C m(eta, t1) for t1 < t2 on the grid."""
    worst = 1.0
    for eta in samples:
        values = [ctx.m(eta, t) for t in t_grid]
        running_min = math.inf
        for v in values:
            running_min = min(running_min, v)
            worst = max(worst, v / running_min)
    return worst


def global_measure_context(measure: CylinderMeasure, samples: Sequence[BoundaryWord] = (),
                           t_max: float = 10.0, t0: Optional[float] = None,
                           theta: Optional[float] = None) -> GlobalMeasureContext:
    """
    Collect the cusps (infinite counting factors) of the measure's action.
    t0 is the first positive grid value (horoballs in distinct cone
    branches are disjoint for any t0 > 0); theta is the first grid value
    whose near-monotonicity constant stays below the constant cap.
    """
    cusps = {
        a: f.spec for a, f in enumerate(measure.product.factors)
        if f.kind == COUNTING and f.spec.infinite
    }
    masses = {}
    for a, spec in cusps.items():
        delta_p = factor_series(measure.product.factors[a]).delta
        if delta_p >= measure.delta:
            masses[a] = math.nan
            logger.warning(f"Cusp {a} has exponent {delta_p:.4f} >= delta; its atom stays symbolic")
        else:
            masses[a] = 0.0
    if t0 is None:
        t0 = next(v for v in MEASURE_PARAMS["t0_grid"] if v > 0)
    ctx = GlobalMeasureContext(measure, t0, 0.0, cusps, masses)
    if theta is not None:
        ctx.theta = theta
        return ctx
    grid = list(np.arange(0.25, t_max, 0.25))
    for value in MEASURE_PARAMS["theta_grid"]:
        ctx.theta = value
        constant = near_monotonicity(ctx, samples, grid) if samples else 1.0
        if constant <= MEASURE_PARAMS["constant_cap"]:
            logger.info(f"Global measure context: t0 = {t0}, theta = {value} (monotonicity constant {constant:.3f})")
            return ctx
    logger.warning(f"No theta on the grid gives near-monotonicity below {MEASURE_PARAMS['constant_cap']}")
    return ctx


def limit_point_samples(action: Any, depth: float, count: int,
                        rng: Optional[np.random.Generator] = None, max_level: int = 8) -> List[BoundaryWord]:
    """Random limit points whose rays are random up to distance `depth` from o."""
    rng = np.random.default_rng(0) if rng is None else rng
    factors = action.factors
    attached = getattr(action, "attached", (True,) * len(factors))
    D = action.point_distances()
    out = []
    for _ in range(count):
        letters: List = []
        path, last = 0.0, None
        while path < depth:
            a = int(rng.choice([b for b in range(len(factors)) if b != last]))
            f = factors[a]
            if f.kind == CYCLIC:
                x = int(rng.integers(1, 4)) * int(rng.choice([1, -1]))
            elif f.kind == FINITE:
                x = int(rng.integers(1, f.order))
            else:
                top = max_level - 1 if f.spec.infinite else min(max_level, len(f.spec.lambdas)) - 1
                cap = f.spec.level(top)[0]
                options = f.elements(cap)
                x = options[int(rng.integers(len(options)))]
            letters.append((a, x))
            path += D[len(factors) if last is None else last, a] + (f.norm(x) if attached[a] else 0.0)
            last = a
        out.append(action.product.some_boundary_point(Word(tuple(letters))))
    return out


def global_formula_verify(measure: CylinderMeasure, ctx: GlobalMeasureContext, samples: Sequence[BoundaryWord],
                          t_max: float, depth: Optional[float] = None, t_step: float = 0.5) -> Dict[str, Any]:
    """
    Smallest slack sigma on a 0.25 grid and constant C with
    m(eta, t + sigma) / C <= mu(B(eta, e^-t)) <= C m(eta, t - sigma)
    over all samples and t <= t_max.

    Raises:
        WorkbenchError: SANDWICH_FAIL when t_max exceeds the sampled depth
    """
    if depth is not None and t_max > depth:
        raise WorkbenchError(
            "SANDWICH_FAIL", f"t_max = {t_max} exceeds the sampled depth {depth}",
            {"undersampled": True, "t_max": t_max, "depth": depth},
        )
    if not samples:
        raise WorkbenchError("EMPTY", "no limit point samples")
    ts = np.arange(t_step, t_max + 1e-9, t_step)
    balls = [[measure.ball_mass(eta, t) for t in ts] for eta in samples]
    cap = MEASURE_PARAMS["constant_cap"]
    best = None
    for sigma in np.arange(0.0, MEASURE_PARAMS["sigma_cap"] + 1e-9, 0.25):
        constant, worst = 1.0, None
        for i, eta in enumerate(samples):
            for j, t in enumerate(ts):
                mu = balls[i][j]
                upper = ctx.m(eta, max(t - sigma, 0.0))
                lower = ctx.m(eta, t + sigma)
                c = max(mu / upper if upper > 0 else math.inf, lower / mu if mu > 0 else math.inf)
                if c > constant:
                    constant, worst = c, (str(eta), float(t))
        if best is None or constant < best[1]:
            best = (float(sigma), constant, worst)
        if constant <= cap:
            break
    sigma_hat, c_hat, worst = best
    passed = c_hat <= cap and sigma_hat <= MEASURE_PARAMS["sigma_cap"]
    report = {
        "passed": bool(passed),
        "sigma_hat": sigma_hat,
        "constant": c_hat,
        "worst": worst,
        "samples": len(samples),
        "t_max": float(t_max),
        "theta": ctx.theta,
        "t0": ctx.t0,
    }
    if passed:
        logger.info(f"Global measure formula holds with sigma = {sigma_hat}, C = {c_hat:.3f}")
    else:
        report["code"] = "SANDWICH_FAIL"
        logger.warning(f"Global measure formula sandwich fails: {report}")
    return report


def trace(ctx: GlobalMeasureContext, eta: BoundaryWord, t_max: float, t_step: float = 0.1) -> pd.DataFrame:
    """t, b(eta, t), log m(eta, t) and log mu(B(eta, e^-t)) along one ray."""
    ts = np.arange(0.0, t_max + 1e-9, t_step)
    return pd.DataFrame({
        "t": ts,
        "b": [ctx.b(eta, t) for t in ts],
        "log_m": [math.log(ctx.m(eta, t)) for t in ts],
        "log_mu": [math.log(ctx.measure.ball_mass(eta, t)) for t in ts],
    })


# ----------------------------------------------------------------------
# doubling and exact dimension


@dataclass(frozen=True)
class CuspLaw:
    """
    Closed-form cusp counting law N_p(R):

    power:    R^p / log(R)^q
    steps:    R_n^p on [R_n, R_{n+1}) with R_n = exp(base^n)
    counting: N_p(R) = f(2 log R) for a CountingSpec f
    """

    kind: str
    exponent: float = 0.0
    log_power: float = 0.0
    base: float = 2.0
    spec: Optional[CountingSpec] = None

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CuspLaw":
        if data.get("kind") == "counting":
            return cls("counting", spec=CountingSpec.from_dict(data["spec"]))
        return cls(data.get("kind"), float(data.get("exponent", 0.0)), float(data.get("log_power", 0.0)),
                   float(data.get("base", 2.0)))

    def log_counting(self, u: float) -> float:
        """log N_p(e^u)."""
        if self.kind == "power":
            v = max(u, 1.0)
            return self.exponent * v - self.log_power * math.log(v)
        if self.kind == "steps":
            v = max(u, 1.0)
            n = math.floor(math.log(v) / math.log(self.base) + 1e-12)
            return self.exponent * self.base ** n
        if self.kind == "counting":
            return math.log(self.spec.counting(2.0 * u)) if u >= 0 else -math.inf
        raise WorkbenchError("TAIL_UNKNOWN", f"no tail law for cusp kind {self.kind!r}")

    def doubling_exponents(self) -> Tuple[float, float]:
        """(lower, upper) doubling exponents."""
        if self.kind == "power":
            return self.exponent, self.exponent
        if self.kind == "steps":
            return 0.0, math.inf
        if self.kind == "counting":
            if self.spec.tail is None:
                return 0.0, 0.0
            kind, rate, n = self.spec.tail
            if kind == "arithmetic":
                p = 2.0 * math.log(n) / rate
                return p, p
            return 0.0, 0.0
        raise WorkbenchError("TAIL_UNKNOWN", f"no tail law for cusp kind {self.kind!r}")

    def _series_verdict(self, delta: float, weight: int) -> bool:
        """Convergence of sum e^{-2 delta k} k^weight N_p(e^k)."""
        lower, upper = self.doubling_exponents()
        if self.kind == "power":
            p, q = self.exponent, self.log_power
            if abs(p - 2 * delta) > TOLERANCE_PARAMS["fit"]:
                return p < 2 * delta
            return q - weight > 1
        if self.kind == "steps":
            return self.exponent < 2 * delta
        if self.kind == "counting":
            if self.spec.tail is None or self.spec.tail[0] == "geometric":
                return True
            return upper < 2 * delta - TOLERANCE_PARAMS["fit"]
        raise WorkbenchError("TAIL_UNKNOWN", f"no tail law for cusp kind {self.kind!r}")

    def dimension_series_converges(self, delta: float) -> bool:
        return self._series_verdict(delta, 1)

    def poincare_series_converges(self, delta: float) -> bool:
        return self._series_verdict(delta, 0)

    def partial_series(self, delta: float, terms: int = 200) -> float:
        logs = [-2 * delta * k + math.log(k) + self.log_counting(float(k)) for k in range(1, terms + 1)]
        return float(np.exp(logsumexp(logs)))

    def comparison_ratio(self, delta: float, u: float, span: int = 2000) -> float:
        """R^{2 delta} I_p(R) / N_p(R) at R = e^u from unit shells."""
        shells = [_log_shell(self.log_counting, u + k, 2 * delta) for k in range(span)]
        log_I = float(logsumexp(shells))
        return math.exp(log_I + 2 * delta * u - self.log_counting(u))


def doubling_and_dimension_tests(laws: Sequence[CuspLaw], delta: float, divergence_type: bool = True) -> Dict[str, Any]:
    """
    Tri-state verdicts: doubling from the doubling exponents of every cusp
    (lower > 0 and upper < 2 delta gives YES; lower <= 0 or upper > 2 delta
    gives NO; the boundary case compares I_p with R^{-2 delta} N_p), exact
    dimensionality from the series sum e^{-2 delta k} k N_p(e^k).

    Raises:
        WorkbenchError: TAIL_UNKNOWN
    """
    doubling, d_witness = YES, []
    exact, e_witness = YES, []
    if not divergence_type:
        doubling = NO
        d_witness.append({"reason": "not of divergence type"})
    for i, law in enumerate(laws):
        lower, upper = law.doubling_exponents()
        entry = {"cusp": i, "dexp_lower": lower, "dexp_upper": upper, "two_delta": 2 * delta}
        if lower <= 0 or upper > 2 * delta + TOLERANCE_PARAMS["fit"]:
            doubling = NO
            entry["reason"] = "doubling exponents outside (0, 2 delta]"
        elif upper >= 2 * delta - TOLERANCE_PARAMS["fit"]:
            ratios = [law.comparison_ratio(delta, u) for u in (10.0, 20.0, 40.0, 80.0)]
            entry["comparison_ratios"] = ratios
            if ratios[-1] > 4.0 * ratios[0]:
                doubling = NO
                entry["reason"] = "I_p(R) not comparable to R^{-2 delta} N_p(R)"
            elif doubling == YES:
                doubling = UNDECIDED
        d_witness.append(entry)

        converges = law.dimension_series_converges(delta)
        e_entry = {"cusp": i, "series_converges": converges, "partial_sum": law.partial_series(delta)}
        if not converges:
            if law.poincare_series_converges(delta) and divergence_type:
                exact = NO
                e_entry["reason"] = "dimension series diverges while Sigma_delta of the cusp converges"
            elif exact == YES:
                exact = UNDECIDED
        e_witness.append(e_entry)
    logger.info(f"Doubling {doubling}, exact dimensional {exact} for {len(laws)} cusps at delta = {delta:.4f}")
    return {
        "doubling": {"verdict": doubling, "witness": d_witness},
        "exact_dimensional": {"verdict": exact, "witness": e_witness},
    }
