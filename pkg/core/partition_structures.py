"""
Partition structures on boundary spaces and the extraction of an Ahlfors
s-regular measure from an s-thick structure.
"""

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from .config import PARTITION_PARAMS
from .errors import WorkbenchError
from .group_actions import FINITE, Cylinder, Word

logger = logging.getLogger(__name__)

Address = Tuple[int, ...]
Number = Union[float, Fraction]

NESTING = "nesting"
SEPARATION = "separation"
RATIO = "ratio"
THICKNESS = "thickness"


def _power(x: Number, s: Number) -> Number:
    """x^s, exact for rational x and integral s."""
    if isinstance(x, Fraction) and float(s).is_integer():
        return x ** int(s)
    return float(x) ** float(s)


def _leq(a: Number, b: Number) -> bool:
    if isinstance(a, Fraction) and isinstance(b, Fraction):
        return a <= b
    a, b = float(a), float(b)
    return a <= b + 1e-12 * max(1.0, abs(b))


def _lt(a: Number, b: Number) -> bool:
    if isinstance(a, Fraction) and isinstance(b, Fraction):
        return a < b
    return float(a) < float(b)


@dataclass
class PartitionStructure:
    """
    Nodes are addresses (tuples of child indices). D[w] is the diameter of
    P_w and sep[w] the distance from P_w to the complement of its parent's
    set; children are listed in their T(w) order.
    """

    D: Dict[Address, Number]
    sep: Dict[Address, Number]
    kappa: Number
    lam: Number
    s: Optional[Number] = None
    sets: Optional[Dict[Address, Any]] = None
    children: Dict[Address, List[Address]] = field(default_factory=dict)

    def __post_init__(self):
        if not 0 < float(self.kappa) < 1 or not 0 < float(self.lam) < 1:
            raise WorkbenchError("OUT_OF_RANGE", f"kappa and lambda must lie in (0, 1) (got {self.kappa}, {self.lam})")
        if () not in self.D:
            raise WorkbenchError("OUT_OF_RANGE", "structure has no root node")
        if not self.children:
            for w in sorted(self.D, key=lambda a: (len(a), a)):
                self.children.setdefault(w, [])
                if w:
                    self.children.setdefault(w[:-1], []).append(w)

    @property
    def depth(self) -> int:
        return max(len(w) for w in self.D)

    def to_dict(self) -> Dict[str, Any]:
        enc = lambda v: str(v) if isinstance(v, Fraction) else v
        return {
            "kappa": enc(self.kappa),
            "lambda": enc(self.lam),
            "s": enc(self.s),
            "nodes": [
                {"address": list(w), "D": enc(self.D[w]), "sep": enc(self.sep.get(w))}
                for w in sorted(self.D, key=lambda a: (len(a), a))
            ],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PartitionStructure":
        dec = lambda v: Fraction(v) if isinstance(v, str) else v
        D, sep = {}, {}
        for node in data["nodes"]:
            w = tuple(node["address"])
            D[w] = dec(node["D"])
            if node.get("sep") is not None:
                sep[w] = dec(node["sep"])
        return cls(D, sep, dec(data["kappa"]), dec(data["lambda"]), dec(data.get("s")))


def uniform_structure(branching: int, ratio: Number, depth: int, s: Optional[Number] = None) -> PartitionStructure:
    """
    Symbolic structure with `branching` children per node, D_w = ratio^|w|
    and the ultrametric separation D_{parent}.
    """
    if branching < 1 or depth < 0:
        raise WorkbenchError("OUT_OF_RANGE", "branching must be positive and depth nonnegative")
    D: Dict[Address, Number] = {(): ratio ** 0 if isinstance(ratio, Fraction) else 1.0}
    sep: Dict[Address, Number] = {}
    frontier: List[Address] = [()]
    for _ in range(depth):
        nxt = []
        for w in frontier:
            for a in range(branching):
                child = w + (a,)
                D[child] = D[w] * ratio
                if w:
                    sep[child] = D[w[:-1]]
                nxt.append(child)
        frontier = nxt
    return PartitionStructure(D, sep, ratio, ratio, s)


def free_group_structure(rank: int, depth: int, s: Optional[float] = None) -> PartitionStructure:
    """
    Cylinders of reduced words in the free group of the given rank on its
    Cayley tree: D_w = e^{-|w|}, separation e D_w, kappa = lambda = e^-1.
    Generator 2i is x_i, 2i + 1 its inverse.
    """
    if rank < 1:
        raise WorkbenchError("OUT_OF_RANGE", "rank must be positive")
    D: Dict[Address, Number] = {(): 1.0}
    sep: Dict[Address, Number] = {}
    frontier: List[Address] = [()]
    for n in range(1, depth + 1):
        nxt = []
        for w in frontier:
            for a in range(2 * rank):
                if w and a == w[-1] ^ 1:
                    continue
                child = w + (a,)
                D[child] = math.exp(-n)
                if w:
                    sep[child] = math.exp(-(n - 2))
                nxt.append(child)
        frontier = nxt
    inv_e = math.exp(-1.0)
    return PartitionStructure(D, sep, inv_e, inv_e, s)


def schottky_structure(action: Any, depth: int, s: Optional[float] = None,
                       kappa: Optional[float] = None, lam: Optional[float] = None) -> PartitionStructure:
    """
    Cylinders W_g of a pure Schottky tree with finite factors. Children of
    W_g are the W_{g(b,y)} in enumeration order; D is the exact visual
    diameter. kappa and lambda default to the extreme ratios observed.

    Raises:
        WorkbenchError: BAD_FACTOR if some factor is not finite
    """
    product = action.product
    if any(f.kind != FINITE for f in product.factors):
        raise WorkbenchError("BAD_FACTOR", "Schottky partition structures need finite factors")
    depth = min(depth, PARTITION_PARAMS["depth_cap"])
    words: Dict[Address, Word] = {(): Word()}
    D: Dict[Address, Number] = {(): Cylinder(product, Word()).diameter()}
    sep: Dict[Address, Number] = {}
    sets: Dict[Address, Cylinder] = {(): Cylinder(product, Word())}
    frontier: List[Address] = [()]
    for _ in range(depth):
        nxt = []
        for w in frontier:
            g = words[w]
            last = g.letters[-1][0] if g.letters else None
            letters = [(b, y) for b, f in enumerate(product.factors) if b != last for y in f.elements(max_length=1)]
            for i, letter in enumerate(letters):
                child = w + (i,)
                words[child] = Word(g.letters + (letter,))
                sets[child] = Cylinder(product, words[child])
                D[child] = sets[child].diameter()
                if g.letters:
                    a, x = g.letters[-1]
                    branch = max([product.factors[a].product(x, y) for y in product.factors[a].elements(max_length=1) if y != x] + [0.0])
                    sep[child] = math.exp(-(product.norm(g.prefix(len(g) - 1)) + branch))
                nxt.append(child)
        frontier = nxt
    ratios = [float(D[w]) / float(D[w[:-1]]) for w in D if w]
    gaps = [float(sep[w]) / float(D[w[:-1]]) for w in sep]
    kappa = min(ratios + gaps) if kappa is None else kappa
    lam = max(ratios) if lam is None else lam
    logger.info(f"Schottky partition structure of {action.label}: {len(D)} cylinders, kappa {kappa:.4g}, lambda {lam:.4g}")
    return PartitionStructure(D, sep, kappa, lam, s, sets)


def validate(structure: PartitionStructure) -> Dict[str, Any]:
    """
    Check nesting and disjointness, separation >= kappa D_w, ratio bounds
    kappa D_w <= D_wa <= lambda D_w and, when s is declared, thickness
    sum_a D_wa^s >= D_w^s at every node.

    Returns:
        Dict[str, Any]: valid, clauses, nodes, violation (first failing node and clause)
    """
    clauses = [NESTING, SEPARATION, RATIO] + ([THICKNESS] if structure.s is not None else [])
    kappa, lam = structure.kappa, structure.lam

    def fail(node: Address, clause: str, detail: str) -> Dict[str, Any]:
        logger.warning(f"Partition structure violates {clause} at {node}: {detail}")
        return {"valid": False, "clauses": clauses, "violation": {"node": list(node), "clause": clause, "detail": detail}}

    for w in sorted(structure.D, key=lambda a: (len(a), a)):
        kids = structure.children.get(w, [])
        for child in kids:
            if len(child) != len(w) + 1 or child[:-1] != w:
                return fail(child, NESTING, f"address does not extend {w}")
        if structure.sets is not None:
            for child in kids:
                if not structure.sets[child].is_subset_of(structure.sets[w]):
                    return fail(child, NESTING, "child set not contained in the parent set")
            for i, x in enumerate(kids):
                for y in kids[i + 1:]:
                    if not structure.sets[x].is_disjoint_from(structure.sets[y]):
                        return fail(x, NESTING, f"sibling sets {x} and {y} intersect")
        for child in kids:
            if w and child in structure.sep and not _leq(kappa * structure.D[w], structure.sep[child]):
                return fail(child, SEPARATION, f"separation {structure.sep[child]} < kappa D = {kappa * structure.D[w]}")
            if not (_leq(kappa * structure.D[w], structure.D[child]) and _leq(structure.D[child], lam * structure.D[w])):
                return fail(child, RATIO, f"D = {structure.D[child]} outside [{kappa * structure.D[w]}, {lam * structure.D[w]}]")
        if structure.s is not None and kids:
            total = sum(_power(structure.D[c], structure.s) for c in kids)
            if not _leq(_power(structure.D[w], structure.s), total):
                return fail(w, THICKNESS, f"sum of children D^s = {float(total):.6g} < D^s")
    logger.info(f"Partition structure of depth {structure.depth} is valid ({', '.join(clauses)})")
    return {"valid": True, "clauses": clauses, "violation": None, "nodes": len(structure.D)}


@dataclass
class SubstructureMeasure:
    """Node weights mu_n(w) of the retained subtree, consistent over children."""

    structure: PartitionStructure
    s: Number
    c: Number
    weights: Dict[Address, Number]
    retained: Dict[Address, int]

    @property
    def total(self) -> Number:
        return self.weights[()]

    def probability(self, w: Address) -> float:
        return float(self.weights.get(w, 0) / self.total)

    def leaves(self) -> List[Address]:
        return [w for w in self.weights if self.retained.get(w, 0) == 0]

    def regularity_violation(self) -> Optional[Address]:
        """First retained node with mu(w) outside [c D_w^s, D_w^s)."""
        for w in sorted(self.weights, key=lambda a: (len(a), a)):
            Ds = _power(self.structure.D[w], self.s)
            if not (_leq(self.c * Ds, self.weights[w]) and _lt(self.weights[w], Ds)):
                return w
        return None

    def consistency_residual(self) -> float:
        worst = 0.0
        for w, n in self.retained.items():
            if n:
                kids = self.structure.children[w][:n]
                worst = max(worst, abs(float(self.weights[w] - sum(self.weights[c] for c in kids))))
        return worst

    def to_dict(self) -> Dict[str, Any]:
        return {
            "s": float(self.s),
            "c": float(self.c),
            "nodes": [
                {"address": list(w), "weight": str(v) if isinstance(v, Fraction) else v, "retained": self.retained.get(w, 0)}
                for w, v in sorted(self.weights.items(), key=lambda item: (len(item[0]), item[0]))
            ],
        }


def thick_substructure_measure(structure: PartitionStructure, s: Number,
                               depth: Optional[int] = None) -> SubstructureMeasure:
    """
    Regular substructure of an s-thick structure: mu(root) = c D^s with
    c = 1 - lambda^s; each retained node keeps its first N_w children, N_w
    the least index with sum_{a <= N_w} D_wa^s > mu(w), and splits its
    weight in proportion to D_wa^s.

    Raises:
        WorkbenchError: NOT_THICK
    """
    depth = min(structure.depth, PARTITION_PARAMS["depth_cap"] if depth is None else depth)
    c = 1 - _power(structure.lam, s)
    weights: Dict[Address, Number] = {(): c * _power(structure.D[()], s)}
    retained: Dict[Address, int] = {}
    frontier = [()]
    for _ in range(depth):
        nxt = []
        for w in frontier:
            kids = structure.children.get(w, [])
            if not kids:
                retained[w] = 0
                continue
            powers = [_power(structure.D[k], s) for k in kids]
            if not _leq(_power(structure.D[w], s), sum(powers)):
                raise WorkbenchError(
                    "NOT_THICK", f"node {w} is not {s}-thick",
                    {"node": list(w), "children_sum": float(sum(powers)), "parent": float(_power(structure.D[w], s))},
                )
            running, n = 0, 0
            while n < len(kids) and not _lt(weights[w], running):
                running += powers[n]
                n += 1
            retained[w] = n
            for k, p in zip(kids[:n], powers[:n]):
                weights[k] = p * weights[w] / running
                nxt.append(k)
        frontier = nxt
    for w in frontier:
        retained.setdefault(w, 0)
    logger.info(f"Thick substructure at s = {float(s):.4f}: {len(weights)} retained nodes, c = {float(c):.6f}")
    return SubstructureMeasure(structure, s, c, weights, retained)


def _ball_node(structure: PartitionStructure, path: Sequence[Address], r: float) -> Optional[int]:
    """Depth m of the ball B(z, r) = P_m in the ultrametric dist = D of the common node."""
    for m, w in enumerate(path):
        if float(structure.D[w]) < r:
            return m
    return None


def ahlfors_check(measure: SubstructureMeasure, structure: Optional[PartitionStructure] = None,
                  s: Optional[Number] = None, radii_per_octave: int = 4, strict: bool = True) -> Dict[str, Any]:
    """
    Measured constants C1 <= mu(B(z, r)) / r^s <= C2 over retained leaves z
    and radii r <= kappa D_root, against the envelope
    C1 >= (1 - lambda^s) kappa^{s(k-1)}, C2 <= kappa^{-2s}, k = ceil(log kappa^2 / log lambda).
    Balls are taken in the ultrametric where two points are at distance
    D of their last common node; mu carries its unnormalized weights.

    Raises:
        WorkbenchError: BOUND_FAIL (strict mode)
    """
    structure = measure.structure if structure is None else structure
    s = measure.s if s is None else s
    kappa, lam, sf = float(structure.kappa), float(structure.lam), float(s)
    k = math.ceil(math.log(kappa ** 2) / math.log(lam) - 1e-12)
    lower_env = (1 - lam ** sf) * kappa ** (sf * (k - 1))
    upper_env = kappa ** (-2 * sf)
    step = 2.0 ** (-1.0 / radii_per_octave)
    c1, c2, witness = math.inf, 0.0, None
    sandwich_ok = True
    for leaf in measure.leaves():
        path = [leaf[:i] for i in range(len(leaf) + 1)]
        r = kappa * float(structure.D[()])
        while True:
            m = _ball_node(structure, path, r)
            if m is None:
                break
            ratio = float(measure.weights[path[m]]) / r ** sf
            if ratio < c1:
                c1, witness = ratio, {"z": list(leaf), "r": r, "node": list(path[m])}
            c2 = max(c2, ratio)
            inside = [i for i, w in enumerate(path) if r < kappa * float(structure.D[w])]
            n = max(inside) if inside else 0
            if not n <= m <= n + k:
                sandwich_ok = False
            r *= step
    report = {
        "passed": True,
        "C1": c1,
        "C2": c2,
        "C1_envelope": lower_env,
        "C2_envelope": upper_env,
        "k": k,
        "ball_sandwich": sandwich_ok,
        "hausdorff_dimension_lower_bound": sf,
        "witness": witness,
    }
    ok = c1 >= lower_env * (1 - 1e-9) and c2 <= upper_env * (1 + 1e-9) and sandwich_ok
    report["passed"] = bool(ok)
    if not ok:
        report["hausdorff_dimension_lower_bound"] = None
        logger.warning(f"Ahlfors bounds fail at s = {sf}: {report}")
        if strict:
            raise WorkbenchError("BOUND_FAIL", f"Ahlfors constants outside the envelope at s = {sf}", report)
    else:
        logger.info(f"Ahlfors {sf}-regular: C1 = {c1:.6f}, C2 = {c2:.6f}; HD >= {sf}")
    return report
