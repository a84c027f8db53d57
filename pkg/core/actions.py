"""
Group actions on trees and models used throughout the workbench:

    SchottkyTree        pure Schottky product of factor trees
    GeometricProduct    geometric product over points of a tree
    CountingParabolic   parabolic group with a prescribed orbital counting function
    TranslationLattice  Z^d acting by Poincare-extended translations
    LorentzWordAction   free group generated by hyperboloid isometries
"""

import logging
import math
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .coarse_geometry import BoundaryPoint
from .config import GROUP_PARAMS, TOLERANCE_PARAMS
from .errors import ConfigError, WorkbenchError
from .group_actions import (
    CYCLIC,
    FINITE,
    BoundaryWord,
    Factor,
    FreeProduct,
    Word,
    WordAction,
    orbit_enumerate,
)
from .hyperbolic_models import (
    HALFSPACE,
    LorentzMap,
    PoincareExtension,
    Similarity,
    acosh1p,
    origin,
    poincare_extension,
)
from .rtree import ConeTree, CountingSpec, RTree, TreePoint, UltrametricSpace, cone_build, tree_from_metric

logger = logging.getLogger(__name__)


class _WordSpace:
    """Space interface on the orbit tree of a word action, basepoint o = e."""

    product: FreeProduct

    @property
    def basepoint(self) -> Word:
        return Word()

    @staticmethod
    def _unwrap(x: Any) -> Any:
        return x.data if isinstance(x, BoundaryPoint) and x.kind == "tree" else x

    def is_boundary(self, x: Any) -> bool:
        return isinstance(self._unwrap(x), BoundaryWord)

    def boundary_equal(self, xi: Any, eta: Any) -> bool:
        return self.product.boundary_equal(self._unwrap(xi), self._unwrap(eta))

    def distance(self, g: Word, h: Word) -> float:
        return self.norm(self.product.multiply(self.product.inverse(g), h))

    def act(self, g: Word, x: Any) -> Any:
        x = self._unwrap(x)
        image = self.product.act(g, x)
        return BoundaryPoint("tree", image) if isinstance(image, BoundaryWord) else image

    def inverse(self, g: Word) -> Word:
        return self.product.inverse(g)

    def power(self, g: Word, k: int) -> Word:
        return self.product.power(g, k)


class SchottkyTree(_WordSpace, WordAction):
    """
    Pure Schottky product of factor actions on trees: the tree obtained by
    stapling copies of the factor trees at the orbit points, with
    ||h_1...h_n|| = ||h_1|| + ... + ||h_n||.
    """

    strongly_separated = True

    def __init__(self, factors: Sequence[Factor]):
        self.product = FreeProduct(factors)
        self.factors = self.product.factors
        self.attached = (True,) * len(self.factors)
        self.label = " * ".join(f.label for f in self.factors)

    def point_distances(self) -> np.ndarray:
        """Every factor tree is stapled at o."""
        return np.zeros((len(self.factors) + 1, len(self.factors) + 1))

    def _initial(self) -> float:
        return 0.0

    def _extend(self, state: float, a: int, x: Any) -> Tuple[float, float]:
        value = state + self.product.factors[a].norm(x)
        return value, value

    def norm(self, g: Word) -> float:
        return self.product.norm(g)

    def gromov_product(self, x: Any, y: Any, z: Any = None) -> float:
        """<x|y>_z for words and boundary words, z a word."""
        z = self.basepoint if z is None else self._unwrap(z)
        if isinstance(z, BoundaryWord):
            raise WorkbenchError("SPACE_MISMATCH", "the base of a Gromov product must be an interior point")
        x, y = self._unwrap(x), self._unwrap(y)
        if z.letters:
            back = self.product.inverse(z)
            x, y = self.product.act(back, x), self.product.act(back, y)
        return self.product.gromov_product(x, y)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": "schottky", "factors": [f.to_dict() for f in self.factors]}


def pure_schottky_tree(factors: Sequence[Union[Factor, Dict[str, Any]]]) -> SchottkyTree:
    """
    Build the pure Schottky product of the given factors.

    Raises:
        WorkbenchError: EMPTY_FACTOR, BAD_FACTOR
    """
    if not factors:
        raise WorkbenchError("EMPTY_FACTOR", "a Schottky product needs at least one factor")
    parsed = [f if isinstance(f, Factor) else Factor.from_dict(f) for f in factors]
    action = SchottkyTree(parsed)
    logger.debug(f"Pure Schottky product {action.label}")
    return action


class GeometricProduct(_WordSpace, WordAction):
    """
    Geometric product of groups Gamma_p at points p of a tree Y. A group
    either fixes its point, or acts on its own factor tree stapled to Y at
    p (attached), in which case the orbit path crosses that tree too:

        ||gamma_1...gamma_n|| = d(o, p_1) + sum d(p_i, p_{i+1}) + d(p_n, o)
                                + sum over attached letters of ||gamma_i||

    A pure Schottky product is the geometric product over a single point
    with every factor attached.
    """

    def __init__(self, tree: RTree, points: Sequence[Any], groups: Sequence[Factor], o: Any = None,
                 attached: Optional[Sequence[bool]] = None):
        if not points:
            raise WorkbenchError("EMPTY_FACTOR", "a geometric product needs at least one point")
        if len(points) != len(groups):
            raise WorkbenchError("BAD_FACTOR", f"{len(points)} points but {len(groups)} groups")
        attached = [False] * len(groups) if attached is None else [bool(v) for v in attached]
        if len(attached) != len(groups):
            raise WorkbenchError("BAD_FACTOR", f"{len(groups)} groups but {len(attached)} attachment flags")
        self.tree = tree
        try:
            self.points = [tree.point(p) for p in points]
            self.o = tree.point(tree.root if o is None else o)
        except WorkbenchError as exc:
            raise WorkbenchError("P_NOT_IN_Y", str(exc), {"points": [str(p) for p in points]})
        for group, on_tree in zip(groups, attached):
            if group.kind not in (CYCLIC, FINITE) and not on_tree:
                raise WorkbenchError("BAD_FACTOR", f"only finite or cyclic groups can fix a point (got {group.kind})")
        self.product = FreeProduct(groups)
        self.factors = self.product.factors
        self.attached = tuple(attached)
        self.label = "geometric(" + ", ".join(
            g.label + ("~" if on_tree else "") for g, on_tree in zip(groups, attached)
        ) + ")"
        m = len(self.points)
        self._d = [[tree.distance(self.points[i], self.points[j]) for j in range(m)] for i in range(m)]
        self._do = [tree.distance(self.o, p) for p in self.points]

    def point_distances(self) -> np.ndarray:
        """Distances between p_1..p_m and o (last row and column)."""
        m = len(self.points)
        D = np.zeros((m + 1, m + 1))
        D[:m, :m] = self._d
        D[:m, m] = D[m, :m] = self._do
        return D

    def _letter(self, a: int, x: Any) -> float:
        return self.product.factors[a].norm(x) if self.attached[a] else 0.0

    def _initial(self) -> Tuple[Optional[int], float]:
        return None, 0.0

    def _extend(self, state: Tuple[Optional[int], float], a: int, x: Any) -> Tuple[Tuple[int, float], float]:
        last, path = state
        path += (self._do[a] if last is None else self._d[last][a]) + self._letter(a, x)
        return (a, path), path + self._do[a]

    def _candidates(self, a: int, norm: float, length: int, max_norm: Optional[float],
                    max_length: Optional[int]) -> List[Any]:
        factor = self.product.factors[a]
        remaining = None if max_length is None else max_length - length
        if self.attached[a]:
            return factor.elements(None if max_norm is None else max_norm - norm, remaining)
        if factor.kind == CYCLIC and max_length is None:
            raise WorkbenchError("OUT_OF_RANGE", "geometric products with Z factors need a length cutoff")
        return factor.elements(None, remaining)

    def gromov_product(self, x: Any, y: Any, z: Any = None) -> float:
        z = self.basepoint if z is None else z
        if self.is_boundary(x) or self.is_boundary(y) or self.is_boundary(z):
            raise WorkbenchError("SPACE_MISMATCH", "geometric products support interior orbit points only")
        return 0.5 * (self.distance(z, x) + self.distance(z, y) - self.distance(x, y))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": "geometric",
            "tree": self.tree.to_dict(),
            "points": [p.to_dict() for p in self.points],
            "groups": [f.to_dict() for f in self.factors],
            "attached": list(self.attached),
        }


def geometric_product(tree: RTree, points: Sequence[Any], groups: Sequence[Union[Factor, Dict[str, Any]]],
                      o: Any = None, attached: Optional[Sequence[bool]] = None) -> GeometricProduct:
    """
    Raises:
        WorkbenchError: P_NOT_IN_Y if a point is not in the tree, BAD_FACTOR
    """
    parsed = [g if isinstance(g, Factor) else Factor.from_dict(g) for g in groups]
    return GeometricProduct(tree, points, parsed, o, attached)


def orbit_tree(action: WordAction, max_norm: Optional[float] = None, max_length: Optional[int] = None,
               budget: Optional[int] = None) -> RTree:
    """
    Realize the convex hull of a truncated orbit as an RTree whose vertices
    include the orbit points, named by their words (str). Words moving o to
    the same point are kept once.

    Raises:
        WorkbenchError: NOT_TREE_METRIC if the orbit metric is not a tree
            metric, BUDGET_EXCEEDED, OUT_OF_RANGE
    """
    tol = TOLERANCE_PARAMS["tree"]
    kept: List[Word] = []
    for g, norm in orbit_enumerate(action, max_norm, max_length, budget):
        if all(action.distance(h, g) > tol * max(1.0, norm) for h in kept):
            kept.append(g)
    D = np.array([[action.distance(g, h) for h in kept] for g in kept])
    tree = tree_from_metric([str(g) for g in kept], D)
    logger.info(f"Orbit tree of {action.label}: {len(kept)} orbit points, {tree!r}")
    return tree


class CountingParabolic(_WordSpace, WordAction):
    """
    The group (+)_n Z/N_n acting parabolically on the cone over itself with
    the ultrametric D(g, h) = e^{||g^-1 h|| / 2}; its orbit counting function
    is f(R) = prod_{lambda_n <= R} N_n.
    """

    def __init__(self, spec: CountingSpec):
        self.spec = spec
        self.factor = Factor.counting_group(spec)
        self.product = FreeProduct([self.factor])
        self.label = "counting"

    def _initial(self) -> float:
        return 0.0

    def _extend(self, state: float, a: int, x: Any) -> Tuple[float, float]:
        return 0.0, self.factor.norm(x)

    def norm(self, g: Word) -> float:
        return self.product.norm(g)

    def counting(self, rho: float) -> int:
        return self.spec.counting(rho)

    def gromov_product(self, x: Any, y: Any, z: Any = None) -> float:
        z = self.basepoint if z is None else z
        x, y = self._unwrap(x), self._unwrap(y)
        if z.letters:
            back = self.product.inverse(z)
            x, y = self.product.act(back, x), self.product.act(back, y)
        return self.product.gromov_product(x, y)

    def elements(self, max_norm: float) -> List[Tuple[int, ...]]:
        return [()] + self.factor.elements(max_norm)

    def realize(self, max_norm: float) -> ConeTree:
        """Cone over the finite subgroup of elements with norm <= max_norm."""
        group = self.elements(max_norm)
        D = np.zeros((len(group), len(group)))
        for i, g in enumerate(group):
            for j, h in enumerate(group):
                if i != j:
                    D[i, j] = math.exp(0.5 * self.factor.norm(self.factor.multiply(self.factor.inverse(g), h)))
        return cone_build(UltrametricSpace(group, D))

    def act_on_cone(self, cone: ConeTree, g: Tuple[int, ...], z: Tuple[int, ...], r: float) -> TreePoint:
        """g . <z, r> = <g z, r>."""
        return cone.cone_point(self.factor.multiply(g, z), r)


def parabolic_from_counting(spec: Union[CountingSpec, Sequence[Tuple[float, int]], str]) -> CountingParabolic:
    """
    Parabolic tree action with orbital counting function f.

    Args:
        spec: A CountingSpec, its "lambda N" text, or samples (R, f(R)) of the
            target counting function

    Raises:
        WorkbenchError: DIVISIBILITY_VIOLATION
    """
    if isinstance(spec, str):
        spec = CountingSpec.parse(spec)
    elif not isinstance(spec, CountingSpec):
        spec = CountingSpec.from_counting_function(spec)
    return CountingParabolic(spec)


class TranslationLattice:
    """Z^d acting on the half-space of dimension d + 1 by x -> x + (0, v)."""

    def __init__(self, rank: int, basis: Optional[Sequence[Sequence[float]]] = None):
        if rank < 1:
            raise WorkbenchError("EMPTY_FACTOR", "lattice rank must be positive")
        self.rank = rank
        self.basis = np.eye(rank) if basis is None else np.array(basis, dtype=float)
        if self.basis.shape != (rank, rank) or abs(np.linalg.det(self.basis)) < 1e-12:
            raise WorkbenchError("BAD_FACTOR", f"basis must be an invertible {rank}x{rank} matrix")
        self.label = f"Z^{rank}"
        self.space_dimension = rank + 1

    @property
    def basepoint(self):
        return origin(HALFSPACE, self.space_dimension)

    def vector(self, v: Sequence[int]) -> np.ndarray:
        return np.asarray(v, dtype=float) @ self.basis

    def norm(self, v: Sequence[int]) -> float:
        w = self.vector(v)
        return acosh1p(0.5 * float(np.dot(w, w)))

    def element(self, v: Sequence[int]) -> PoincareExtension:
        return poincare_extension(Similarity.translation_by(self.vector(v)))

    def enumerate(self, max_norm: Optional[float] = None, max_length: Optional[int] = None,
                  budget: Optional[int] = None) -> List[Tuple[Tuple[int, ...], float]]:
        budget = GROUP_PARAMS["word_budget"] if budget is None else budget
        bounds = []
        if max_norm is not None:
            radius = math.sqrt(2.0 * (math.cosh(max_norm) - 1.0))
            shortest = float(np.min(np.linalg.svd(self.basis, compute_uv=False)))
            bounds.append(int(math.floor(radius / shortest + 1e-9)))
        if max_length is not None:
            bounds.append(int(max_length))
        K = min(bounds)
        if (2 * K + 1) ** self.rank > 20 * budget:
            raise WorkbenchError("BUDGET_EXCEEDED", f"lattice box of half-width {K} is too large", {"budget": budget})
        axes = [np.arange(-K, K + 1)] * self.rank
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.rank)
        if max_length is not None:
            grid = grid[np.abs(grid).sum(axis=1) <= max_length]
        images = grid @ self.basis
        norms = np.arccosh(1.0 + 0.5 * np.einsum("ij,ij->i", images, images))
        if max_norm is not None:
            keep = norms <= max_norm + 1e-12
            grid, norms = grid[keep], norms[keep]
        if len(grid) > budget:
            raise WorkbenchError("BUDGET_EXCEEDED", f"more than {budget} lattice points", {"budget": budget})
        order = sorted(range(len(grid)), key=lambda i: (int(np.abs(grid[i]).sum()), tuple(int(c) for c in grid[i])))
        return [(tuple(int(c) for c in grid[i]), float(norms[i])) for i in order]


class LorentzWordAction(WordAction):
    """Free group on hyperboloid isometries; norms d(o, g o) from matrix products."""

    monotone = False

    def __init__(self, generators: Sequence[LorentzMap]):
        if not generators:
            raise WorkbenchError("EMPTY_FACTOR", "need at least one generator")
        dims = {g.dimension for g in generators}
        if len(dims) != 1:
            raise WorkbenchError("MODEL_MISMATCH", f"generators live in dimensions {sorted(dims)}")
        self.generators = list(generators)
        self.dimension = dims.pop()
        self.product = FreeProduct([Factor.cyclic(1.0) for _ in generators])
        self.label = f"lorentz({len(generators)})"

    def _initial(self) -> np.ndarray:
        return np.eye(self.dimension + 1)

    def _extend(self, state: np.ndarray, a: int, x: int) -> Tuple[np.ndarray, float]:
        M = state @ self.generators[a].power(x).matrix
        return M, math.acosh(max(M[0, 0], 1.0))

    def element(self, g: Word) -> LorentzMap:
        M = self._initial()
        for a, x in g.letters:
            M = M @ self.generators[a].power(x).matrix
        return LorentzMap(M)

    def enumerate(self, max_norm: Optional[float] = None, max_length: Optional[int] = None,
                  budget: Optional[int] = None) -> List[Tuple[Word, float]]:
        if max_length is None:
            raise WorkbenchError("OUT_OF_RANGE", "Lorentz word actions are enumerated by length")
        return super().enumerate(max_norm, max_length, budget)


def build_action(data: Dict[str, Any]) -> Any:
    """Construct an action from its JSON description (used by experiment configs)."""
    kind = data.get("kind")
    if kind == "schottky":
        return pure_schottky_tree(data["factors"])
    if kind == "geometric":
        tree = RTree.from_dict(data["tree"])
        return geometric_product(tree, data["points"], data["groups"], data.get("o"), data.get("attached"))
    if kind == "counting":
        return parabolic_from_counting(CountingSpec.from_dict(data["spec"]))
    if kind == "lattice":
        return TranslationLattice(int(data["rank"]), data.get("basis"))
    raise ConfigError(f"unknown action kind '{kind}'", "kind")
