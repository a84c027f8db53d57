"""
Free products of factor groups, reduced words, boundary words and cylinders,
orbit enumeration, classification of single isometries, limit-set coding and
the Edelstein family of parabolic isometries of Hilbert space truncations.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import eigh, null_space

from .coarse_geometry import (
    BoundaryPoint,
    GromovContext,
    ModelSpace,
    distance_to_axis,
    dynamical_derivative,
)
from .config import GROUP_PARAMS, TOLERANCE_PARAMS
from .errors import WorkbenchError
from .hyperbolic_models import (
    HALFSPACE,
    HYPERBOLOID,
    LorentzMap,
    PoincareExtension,
    Similarity,
    as_lorentz,
    lorentz_signature,
    origin,
    poincare_extension,
)
from .rtree import CountingSpec, max_four_point_defect

logger = logging.getLogger(__name__)

CYCLIC = "cyclic"
FINITE = "finite"
COUNTING = "counting"

PLUS_END = "+inf"
MINUS_END = "-inf"
INF_END = "inf"


@dataclass(frozen=True)
class Factor:
    """
    One factor group H_a with a tree-geometric norm.

    cyclic:   Z acting by translation of length r on a line, elements are ints
    finite:   Z/N with a uniform norm or listed norms of 1..N-1
    counting: the direct sum of Z/N_n of a CountingSpec, elements are
              coordinate tuples without trailing zeros, norm lambda of the top
              nonzero coordinate
    """

    kind: str
    translation: float = 1.0
    order: int = 0
    norms: Optional[Tuple[float, ...]] = None
    spec: Optional[CountingSpec] = None

    def __post_init__(self):
        if self.kind == CYCLIC:
            if not self.translation > 0:
                raise WorkbenchError("BAD_FACTOR", f"translation length must be positive (got {self.translation})")
        elif self.kind == FINITE:
            if self.order < 2:
                raise WorkbenchError("BAD_FACTOR", f"finite factor needs order >= 2 (got {self.order})")
            norms = self.norms if self.norms is not None else (float(self.translation),) * (self.order - 1)
            object.__setattr__(self, "norms", tuple(float(v) for v in norms))
            self._validate_finite()
        elif self.kind == COUNTING:
            if self.spec is None:
                raise WorkbenchError("BAD_FACTOR", "counting factor needs a CountingSpec")
        else:
            raise WorkbenchError("BAD_FACTOR", f"unknown factor kind '{self.kind}'")

    @classmethod
    def cyclic(cls, translation: float = 1.0) -> "Factor":
        return cls(CYCLIC, translation=float(translation))

    @classmethod
    def finite(cls, order: int, norm: float = 1.0, norms: Optional[Sequence[float]] = None) -> "Factor":
        return cls(FINITE, translation=float(norm), order=int(order), norms=tuple(norms) if norms else None)

    @classmethod
    def counting_group(cls, spec: CountingSpec) -> "Factor":
        return cls(COUNTING, spec=spec)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Factor":
        kind = data.get("kind")
        if kind == CYCLIC:
            return cls.cyclic(data.get("translation", 1.0))
        if kind == FINITE:
            return cls.finite(data["order"], data.get("norm", 1.0), data.get("norms"))
        if kind == COUNTING:
            return cls.counting_group(CountingSpec.from_dict(data["spec"]))
        raise WorkbenchError("BAD_FACTOR", f"unknown factor kind '{kind}'")

    def to_dict(self) -> Dict[str, Any]:
        if self.kind == CYCLIC:
            return {"kind": CYCLIC, "translation": self.translation}
        if self.kind == FINITE:
            return {"kind": FINITE, "order": self.order, "norms": list(self.norms)}
        return {"kind": COUNTING, "spec": self.spec.to_dict()}

    @property
    def label(self) -> str:
        if self.kind == CYCLIC:
            return "Z"
        if self.kind == FINITE:
            return f"Z/{self.order}"
        return "counting"

    def _validate_finite(self):
        N = self.order
        if len(self.norms) != N - 1:
            raise WorkbenchError("BAD_FACTOR", f"Z/{N} needs {N - 1} norms (got {len(self.norms)})")
        if any(v <= 0 for v in self.norms):
            raise WorkbenchError("BAD_FACTOR", "norms of nontrivial elements must be positive")
        for k in range(1, N):
            if abs(self.norms[k - 1] - self.norms[N - k - 1]) > TOLERANCE_PARAMS["exact"]:
                raise WorkbenchError("BAD_FACTOR", f"norm of {k} differs from the norm of its inverse")
        D = np.array([[self.norm((j - i) % N) for j in range(N)] for i in range(N)])
        defect = max_four_point_defect(D)
        if defect > TOLERANCE_PARAMS["exact"] * max(1.0, float(D.max())):
            raise WorkbenchError("BAD_FACTOR", f"norms on Z/{N} are not tree-geometric (defect {defect:.3e})")

    # ------------------------------------------------------------------
    # group law

    @property
    def identity(self) -> Any:
        return () if self.kind == COUNTING else 0

    def check(self, x: Any) -> Any:
        """Canonical form of an element, raising BAD_FACTOR if it is not one."""
        if self.kind == CYCLIC:
            if isinstance(x, bool) or int(x) != x:
                raise WorkbenchError("BAD_FACTOR", f"{x!r} is not an integer")
            return int(x)
        if self.kind == FINITE:
            if isinstance(x, bool) or int(x) != x:
                raise WorkbenchError("BAD_FACTOR", f"{x!r} is not an element of Z/{self.order}")
            return int(x) % self.order
        coords = [int(c) for c in x]
        for i, c in enumerate(coords):
            _, n = self.spec.level(i)
            if not 0 <= c < n:
                raise WorkbenchError("BAD_FACTOR", f"coordinate {i} of {x!r} outside Z/{n}")
        while coords and coords[-1] == 0:
            coords.pop()
        return tuple(coords)

    def is_identity(self, x: Any) -> bool:
        return x == self.identity

    def multiply(self, x: Any, y: Any) -> Any:
        if self.kind == CYCLIC:
            return x + y
        if self.kind == FINITE:
            return (x + y) % self.order
        size = max(len(x), len(y))
        x, y = tuple(x) + (0,) * (size - len(x)), tuple(y) + (0,) * (size - len(y))
        return self.check([(a + b) % self.spec.level(i)[1] for i, (a, b) in enumerate(zip(x, y))])

    def inverse(self, x: Any) -> Any:
        if self.kind == CYCLIC:
            return -x
        if self.kind == FINITE:
            return (-x) % self.order
        return self.check([(-c) % self.spec.level(i)[1] for i, c in enumerate(x)])

    def norm(self, x: Any) -> float:
        if self.is_identity(x):
            return 0.0
        if self.kind == CYCLIC:
            return abs(x) * self.translation
        if self.kind == FINITE:
            return self.norms[x - 1]
        return self.spec.level(len(x) - 1)[0]

    def length(self, x: Any) -> int:
        if self.is_identity(x):
            return 0
        return abs(x) if self.kind == CYCLIC else 1

    def index(self, x: Any) -> Tuple:
        """Enumeration order of elements: 1, -1, 2, -2, ... for Z."""
        if self.kind == CYCLIC:
            return (2 * abs(x) - (1 if x > 0 else 0),)
        if self.kind == FINITE:
            return (x,)
        return (len(x), tuple(reversed(x)))

    # ------------------------------------------------------------------
    # tree geometry

    def ends(self) -> Tuple[str, ...]:
        if self.kind == CYCLIC:
            return (PLUS_END, MINUS_END)
        if self.kind == COUNTING and self.spec.infinite:
            return (INF_END,)
        return ()

    def attracting_end(self, x: Any) -> Optional[str]:
        if self.kind == CYCLIC and x != 0:
            return PLUS_END if x > 0 else MINUS_END
        return None

    def product(self, x: Any, y: Any) -> float:
        """Gromov product <x o|y o>_o in the factor tree; x, y may be ends."""
        x_end, y_end = isinstance(x, str), isinstance(y, str)
        if x_end and y_end:
            return math.inf if x == y else 0.0
        if x_end or y_end:
            end, h = (x, y) if x_end else (y, x)
            if self.kind == CYCLIC:
                same_side = (h > 0) if end == PLUS_END else (h < 0)
                return self.norm(h) if same_side else 0.0
            return 0.5 * self.norm(h)
        return 0.5 * (self.norm(x) + self.norm(y) - self.norm(self.multiply(self.inverse(x), y)))

    def min_branch_product(self) -> Optional[float]:
        """
        Smallest Gromov product between two distinct nontrivial elements or
        ends; None if the factor has a single nontrivial element.
        """
        if self.kind == CYCLIC:
            return 0.0
        if self.kind == FINITE:
            if self.order == 2:
                return None
            return min(self.product(x, y) for x, y in itertools.combinations(range(1, self.order), 2))
        lam, n = self.spec.level(0)
        if n == 2 and not self.spec.infinite and len(self.spec.lambdas) == 1:
            return None
        return 0.5 * lam

    def elements(self, max_norm: Optional[float] = None, max_length: Optional[int] = None,
                 budget: Optional[int] = None) -> List[Any]:
        """Nontrivial elements with norm <= max_norm and length <= max_length, in index order."""
        if self.kind == CYCLIC:
            bounds = []
            if max_norm is not None:
                bounds.append(int(math.floor(max_norm / self.translation + 1e-12)))
            if max_length is not None:
                bounds.append(int(max_length))
            if not bounds:
                raise WorkbenchError("OUT_OF_RANGE", "Z factors need a norm or length cutoff")
            k_max = max(0, min(bounds))
            return [s * k for k in range(1, k_max + 1) for s in (1, -1)]
        if max_length is not None and max_length < 1:
            return []
        if self.kind == FINITE:
            return [x for x in range(1, self.order) if max_norm is None or self.norms[x - 1] <= max_norm + 1e-12]
        if max_norm is None:
            if self.spec.infinite:
                raise WorkbenchError("OUT_OF_RANGE", "counting factors are enumerated by norm only")
            max_norm = self.spec.lambdas[-1]
        levels = self.spec.levels(max_norm + 1e-12)
        budget = GROUP_PARAMS["word_budget"] if budget is None else budget
        if math.prod(n for _, n in levels) > budget:
            raise WorkbenchError("BUDGET_EXCEEDED", f"counting factor has more than {budget} elements of norm <= {max_norm}")
        out = []
        for top in range(len(levels)):
            ranges = [range(levels[i][1]) for i in range(top)] + [range(1, levels[top][1])]
            for coords in itertools.product(*ranges):
                out.append(tuple(coords))
        return sorted(out, key=self.index)


Letter = Tuple[int, Any]


@dataclass(frozen=True)
class Word:
    """Reduced word (a_1, x_1)...(a_n, x_n) in a free product."""

    letters: Tuple[Letter, ...] = ()

    def __len__(self):
        return len(self.letters)

    def prefix(self, n: int) -> "Word":
        return Word(self.letters[:n])

    def to_list(self) -> List[List[Any]]:
        return [[a, list(x) if isinstance(x, tuple) else x] for a, x in self.letters]

    def __str__(self):
        return "".join(f"({a},{x})" for a, x in self.letters) or "e"


@dataclass(frozen=True)
class BoundaryWord:
    """
    Eventually periodic infinite reduced word: prefix followed by period
    repeated forever, or prefix followed by an end of one factor.
    """

    prefix: Tuple[Letter, ...] = ()
    period: Tuple[Letter, ...] = ()
    end: Optional[Tuple[int, str]] = None

    def stream(self) -> Iterator[Letter]:
        yield from self.prefix
        if self.end is not None:
            yield self.end
            return
        while True:
            yield from self.period

    def to_dict(self) -> Dict[str, Any]:
        data = {"prefix": Word(self.prefix).to_list()}
        if self.end is not None:
            data["end"] = list(self.end)
        else:
            data["period"] = Word(self.period).to_list()
        return data

    def __str__(self):
        tail = f"[{self.end[0]},{self.end[1]}]" if self.end else f"({Word(self.period)})^inf"
        return f"{Word(self.prefix) if self.prefix else ''}{tail}"


def _is_end_letter(letter: Letter) -> bool:
    return isinstance(letter[1], str)


class FreeProduct:
    """
    The free product *_a H_a of indexed factors, with the additive norm
    ||(a_1,x_1)...(a_n,x_n)|| = sum ||x_i|| of a pure Schottky product.

    Raises:
        WorkbenchError: EMPTY_FACTOR if there are no factors
    """

    def __init__(self, factors: Sequence[Factor]):
        if not factors:
            raise WorkbenchError("EMPTY_FACTOR", "a free product needs at least one factor")
        self.factors = list(factors)

    def _factor(self, a: Any) -> Factor:
        if isinstance(a, bool) or not isinstance(a, (int, np.integer)) or not 0 <= a < len(self.factors):
            raise WorkbenchError("BAD_FACTOR", f"factor index {a!r} outside 0..{len(self.factors) - 1}")
        return self.factors[a]

    def reduce(self, wordlike: Any) -> Word:
        """
        Free-product normal form: merge adjacent letters of one factor and
        drop identities.

        Raises:
            WorkbenchError: BAD_FACTOR for unknown factors or elements
        """
        letters = wordlike.letters if isinstance(wordlike, Word) else wordlike
        stack: List[Letter] = []
        for letter in letters:
            a, x = letter
            a = int(a)
            f = self._factor(a)
            x = f.check(tuple(x) if isinstance(x, list) else x)
            if f.is_identity(x):
                continue
            if stack and stack[-1][0] == a:
                merged = f.multiply(stack.pop()[1], x)
                if not f.is_identity(merged):
                    stack.append((a, merged))
            else:
                stack.append((a, x))
        return Word(tuple(stack))

    @property
    def identity(self) -> Word:
        return Word()

    def multiply(self, g: Word, h: Word) -> Word:
        return self.reduce(g.letters + h.letters)

    def inverse(self, g: Word) -> Word:
        return Word(tuple((a, self.factors[a].inverse(x)) for a, x in reversed(g.letters)))

    def power(self, g: Word, k: int) -> Word:
        base = g if k >= 0 else self.inverse(g)
        return self.reduce(base.letters * abs(k))

    def norm(self, g: Word) -> float:
        return float(sum(self.factors[a].norm(x) for a, x in g.letters))

    def length(self, g: Word) -> int:
        return sum(self.factors[a].length(x) for a, x in g.letters)

    # ------------------------------------------------------------------
    # boundary

    def boundary(self, prefix: Any = (), period: Any = (), end: Optional[Tuple[int, str]] = None) -> BoundaryWord:
        """
        Canonical eventually periodic boundary word.

        A period collapsing to a single letter (a, x) is replaced by the
        attracting end of x in factor a.
        """
        prefix = self.reduce(prefix).letters
        if end is not None:
            a, token = int(end[0]), str(end[1])
            if token not in self._factor(a).ends():
                raise WorkbenchError("BAD_FACTOR", f"factor {a} has no end {token!r}")
            if prefix and prefix[-1][0] == a:
                prefix = prefix[:-1]
            return BoundaryWord(prefix, (), (a, token))
        cyc, conj = cyclic_reduction(self, self.reduce(period))
        if not cyc.letters:
            raise WorkbenchError("BAD_FACTOR", "period reduces to the identity")
        if len(cyc.letters) == 1:
            a, x = cyc.letters[0]
            token = self.factors[a].attracting_end(x)
            if token is None:
                raise WorkbenchError("BAD_FACTOR", f"letter ({a}, {x}) has no attracting end")
            return self.boundary(self.multiply(self.reduce(prefix), conj).letters, end=(a, token))
        head = self.multiply(self.reduce(prefix), conj)
        # absorb cancellation between head and the periodic tail
        copies = len(head.letters) + 2
        full = self.reduce(head.letters + cyc.letters * copies).letters
        body, period_letters = self._strip(full, cyc.letters)
        return BoundaryWord(body, period_letters, None)

    @staticmethod
    def _strip(full: Tuple[Letter, ...], period: Tuple[Letter, ...]) -> Tuple[Tuple[Letter, ...], Tuple[Letter, ...]]:
        p = len(period)
        while len(full) >= p and full[len(full) - p:] == period:
            full = full[: len(full) - p]
        while full and full[-1] == period[-1]:
            full = full[:-1]
            period = (period[-1],) + period[:-1]
        return full, period

    def act_boundary(self, g: Word, xi: BoundaryWord) -> BoundaryWord:
        if xi.end is not None:
            return self.boundary(g.letters + xi.prefix, end=xi.end)
        return self.boundary(g.letters + xi.prefix, xi.period)

    def act(self, g: Word, x: Any) -> Any:
        if isinstance(x, BoundaryWord):
            return self.act_boundary(g, x)
        return self.multiply(g, x)

    def boundary_equal(self, xi: BoundaryWord, eta: BoundaryWord) -> bool:
        return math.isinf(self.gromov_product(xi, eta))

    def _cap(self, x: Any, y: Any) -> int:
        size = lambda w: len(w.prefix) + len(w.period) + 1 if isinstance(w, BoundaryWord) else len(w.letters)
        return size(x) + size(y) + 1

    def gromov_product(self, x: Any, y: Any) -> float:
        """
        <x|y>_o for words and boundary words: the norm of the common prefix
        plus the factor product of the first letters that differ within one
        factor. math.inf iff x = y is a boundary point.
        """
        sx = x.stream() if isinstance(x, BoundaryWord) else iter(x.letters)
        sy = y.stream() if isinstance(y, BoundaryWord) else iter(y.letters)
        both_boundary = isinstance(x, BoundaryWord) and isinstance(y, BoundaryWord)
        cap = self._cap(x, y)
        total = 0.0
        for step in itertools.count():
            lx, ly = next(sx, None), next(sy, None)
            if lx is None or ly is None:
                if both_boundary and lx is None and ly is None:
                    return math.inf
                return total
            if lx != ly:
                if lx[0] != ly[0]:
                    return total
                return total + self.factors[lx[0]].product(lx[1], ly[1])
            if _is_end_letter(lx):
                return math.inf
            total += self.factors[lx[0]].norm(lx[1])
            if both_boundary and step >= cap:
                return math.inf

    def some_boundary_point(self, g: Word) -> BoundaryWord:
        """A boundary point whose word starts with g."""
        last = g.letters[-1][0] if g.letters else None
        for b, f in enumerate(self.factors):
            if b != last and f.ends():
                return BoundaryWord(g.letters, (), (b, f.ends()[0]))
        others = [b for b in range(len(self.factors)) if b != last]
        if not others or len(self.factors) < 2:
            raise WorkbenchError("NOT_LIMIT_POINT", "the group has no limit points")
        first = others[0]
        second = next(b for b in range(len(self.factors)) if b != first)
        letter = lambda b: (b, self.factors[b].elements(max_length=1)[0])
        return BoundaryWord(g.letters, (letter(first), letter(second)), None)


def cyclic_reduction(product: FreeProduct, g: Word) -> Tuple[Word, Word]:
    """
    Write g = h c h^-1 with c cyclically reduced.

    Returns:
        Tuple[Word, Word]: (c, h)
    """
    c = product.reduce(g)
    h: List[Letter] = []
    while len(c.letters) >= 2 and c.letters[0][0] == c.letters[-1][0]:
        first = c.letters[0]
        h.append(first)
        c = product.reduce(c.letters[1:] + (first,))
    return c, product.reduce(h)


@dataclass(frozen=True)
class Cylinder:
    """W_g: boundary points whose reduced word starts with g."""

    product: FreeProduct
    g: Word

    def contains(self, xi: BoundaryWord) -> bool:
        stream = xi.stream()
        return all(next(stream, None) == letter for letter in self.g.letters)

    def is_subset_of(self, other: "Cylinder") -> bool:
        return self.g.letters[: len(other.g.letters)] == other.g.letters

    def is_disjoint_from(self, other: "Cylinder") -> bool:
        return not (self.is_subset_of(other) or other.is_subset_of(self))

    def diameter(self) -> float:
        """Exact visual diameter sup e^{-<xi|eta>_o} over xi, eta in W_g."""
        factors = self.product.factors
        t = self.product.norm(self.g)
        last = self.g.letters[-1][0] if self.g.letters else None
        forced_steps = 0
        while True:
            candidates = [b for b in range(len(factors)) if b != last]
            if len(candidates) >= 2:
                return math.exp(-t)
            if not candidates:
                return 0.0
            b = candidates[0]
            branch = factors[b].min_branch_product()
            if branch is not None:
                return math.exp(-(t + branch))
            forced_steps += 1
            if forced_steps > len(factors):
                return 0.0
            only = factors[b].elements(max_length=1)[0]
            t += factors[b].norm(only)
            last = b


# ----------------------------------------------------------------------
# actions by words


class WordAction:
    """
    Base class for free-product actions whose orbit points are indexed by
    reduced words. Subclasses provide `product`, `label` and
    `_extend(state, a, x)` returning the new state and the norm of the
    extended word.
    """

    product: FreeProduct
    label: str = "free product"
    monotone: bool = True
    strongly_separated: bool = False

    def _initial(self) -> Any:
        return None

    def _extend(self, state: Any, a: int, x: Any) -> Tuple[Any, float]:
        raise NotImplementedError

    def _candidates(self, a: int, norm: float, length: int, max_norm: Optional[float],
                    max_length: Optional[int]) -> List[Any]:
        return self.product.factors[a].elements(
            None if max_norm is None else max_norm - norm,
            None if max_length is None else max_length - length,
        )

    def norm(self, g: Word) -> float:
        state, value = self._initial(), 0.0
        for a, x in g.letters:
            state, value = self._extend(state, a, x)
        return value

    def enumerate(self, max_norm: Optional[float] = None, max_length: Optional[int] = None,
                  budget: Optional[int] = None) -> List[Tuple[Word, float]]:
        budget = GROUP_PARAMS["word_budget"] if budget is None else budget
        found: List[Tuple[Word, float]] = [(Word(), 0.0)]
        factors = self.product.factors
        stack = [((), None, self._initial(), 0.0, 0)]
        while stack:
            letters, last, state, norm, length = stack.pop()
            for a in range(len(factors)):
                if a == last:
                    continue
                for x in self._candidates(a, norm, length, max_norm if self.monotone else None, max_length):
                    new_state, new_norm = self._extend(state, a, x)
                    new_length = length + factors[a].length(x)
                    if max_length is not None and new_length > max_length:
                        continue
                    within = max_norm is None or new_norm <= max_norm + 1e-12
                    if not within and self.monotone:
                        continue
                    word = letters + ((a, x),)
                    if within:
                        found.append((Word(word), new_norm))
                        if len(found) > budget:
                            raise WorkbenchError(
                                "BUDGET_EXCEEDED", f"more than {budget} orbit points", {"budget": budget}
                            )
                    stack.append((word, a, new_state, new_norm, new_length))
        key = lambda item: (
            self.product.length(item[0]),
            tuple(a for a, _ in item[0].letters),
            tuple(factors[a].index(x) for a, x in item[0].letters),
        )
        return sorted(found, key=key)


def orbit_enumerate(action: Any, max_norm: Optional[float] = None, max_length: Optional[int] = None,
                    budget: Optional[int] = None) -> List[Tuple[Any, float]]:
    """
    Enumerate the orbit of the basepoint.

    Args:
        action: A word action, lattice or other object with `enumerate`
        max_norm: Norm cutoff rho
        max_length: Word length cutoff L
        budget: Cap on the number of orbit points

    Returns:
        List[Tuple[Any, float]]: (element, norm) pairs in deterministic order

    Raises:
        WorkbenchError: BUDGET_EXCEEDED, OUT_OF_RANGE
    """
    if max_norm is None and max_length is None:
        raise WorkbenchError("OUT_OF_RANGE", "orbit enumeration needs max_norm or max_length")
    if (max_norm is not None and max_norm < 0) or (max_length is not None and max_length < 0):
        raise WorkbenchError("OUT_OF_RANGE", "cutoffs must be nonnegative")
    orbit = action.enumerate(max_norm=max_norm, max_length=max_length, budget=budget)
    logger.info(f"Enumerated {len(orbit)} orbit points of {action.label} (rho={max_norm}, L={max_length})")
    return orbit


# ----------------------------------------------------------------------
# classification


@dataclass
class IsometryClass:
    """Classification verdict with its evidence."""

    kind: str
    translation_length: float = 0.0
    attracting: Any = None
    repelling: Any = None
    fixed: Any = None
    bound: float = 0.0
    evidence: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        enc = lambda p: p.to_dict() if hasattr(p, "to_dict") else (str(p) if p is not None else None)
        return {
            "kind": self.kind,
            "translation_length": self.translation_length,
            "attracting": enc(self.attracting),
            "repelling": enc(self.repelling),
            "fixed": enc(self.fixed),
            "bound": self.bound,
            "evidence": self.evidence,
        }


def _orbit_distances(M: np.ndarray, n_max: int) -> List[float]:
    out, P = [], np.eye(M.shape[0])
    for _ in range(n_max):
        P = M @ P
        c = P[0, 0]
        if not np.isfinite(c):
            break
        out.append(math.acosh(max(c, 1.0)))
    return out


def _classify_model(g: Any, n_max: int) -> IsometryClass:
    L = as_lorentz(g)
    M, n = L.matrix, L.dimension
    ctx = GromovContext(ModelSpace(HYPERBOLOID, n))
    eigenvalues, eigenvectors = np.linalg.eig(M)
    moduli = np.abs(eigenvalues)
    rho = float(moduli.max())
    if math.log(rho) > 1e-4:
        top, bottom = int(np.argmax(moduli)), int(np.argmin(moduli))
        plus = np.real(eigenvectors[:, top])
        minus = np.real(eigenvectors[:, bottom])
        plus, minus = plus / plus[0], minus / minus[0]
        g_plus = BoundaryPoint.in_model(HYPERBOLOID, plus)
        g_minus = BoundaryPoint.in_model(HYPERBOLOID, minus)
        ell = math.log(rho)
        axis = distance_to_axis(ctx, g_plus, g_minus, ctx.o)
        deviations = [abs(d - (k + 1) * ell) for k, d in enumerate(_orbit_distances(M, n_max))]
        worst = max(deviations, default=0.0)
        bound = 2.0 * axis
        return IsometryClass(
            "loxodromic", ell, g_plus, g_minus, None, bound,
            {"spectral_radius": rho, "axis_distance": axis, "max_deviation": worst,
             "witness_holds": worst <= bound + TOLERANCE_PARAMS["fit"] * n_max},
        )

    J = lorentz_signature(n)
    N = null_space(M - np.eye(n + 1), rcond=1e-9)
    if N.shape[1] == 0:
        raise WorkbenchError("INCONCLUSIVE", "no fixed vector and no expansion", {"spectral_radius": rho})
    w, V = eigh(N.T @ J @ N)
    orbit = _orbit_distances(M, n_max)
    if w.min() < -1e-9:
        fixed = N @ V[:, 0]
        fixed = fixed / math.sqrt(-float(fixed @ J @ fixed))
        if fixed[0] < 0:
            fixed = -fixed
        return IsometryClass(
            "elliptic", 0.0, None, None, fixed.tolist(), max(orbit, default=0.0),
            {"spectral_radius": rho, "fixed_space_dimension": int(N.shape[1])},
        )
    k = int(np.argmin(np.abs(w)))
    if abs(w[k]) > 1e-9:
        raise WorkbenchError("INCONCLUSIVE", "fixed vectors are all spacelike", {"gram": w.tolist()})
    null = N @ V[:, k]
    null = null / null[0]
    xi = BoundaryPoint.in_model(HYPERBOLOID, null)
    derivative = dynamical_derivative(ctx, L, xi, n_max)
    if abs(derivative - 1.0) > TOLERANCE_PARAMS["fit"]:
        raise WorkbenchError("INCONCLUSIVE", f"neutral fixed point has derivative {derivative}", {"derivative": derivative})
    return IsometryClass(
        "parabolic", 0.0, None, None, xi, 0.0,
        {"spectral_radius": rho, "derivative": derivative, "max_displacement": max(orbit, default=0.0)},
    )


def _classify_word(g: Word, action: Any, n_max: int) -> IsometryClass:
    product = action.product
    g = product.reduce(g)
    norm = action.norm(g)
    ell = max(0.0, action.norm(product.power(g, 2)) - norm)
    c, h = cyclic_reduction(product, g)
    orbit = [action.norm(product.power(g, k)) for k in range(1, n_max + 1)]
    if ell <= TOLERANCE_PARAMS["tree"] * max(1.0, norm):
        return IsometryClass(
            "elliptic", 0.0, None, None, h, max(orbit, default=0.0),
            {"norm": norm, "conjugator_norm": action.norm(h)},
        )
    if len(c.letters) == 1:
        a, x = c.letters[0]
        token = product.factors[a].attracting_end(x)
        inverse_token = product.factors[a].attracting_end(product.factors[a].inverse(x))
        g_plus = product.boundary(h.letters, end=(a, token))
        g_minus = product.boundary(h.letters, end=(a, inverse_token))
    else:
        g_plus = product.boundary(h.letters, c.letters)
        g_minus = product.boundary(h.letters, product.inverse(c).letters)
    bound = 2.0 * action.norm(h)
    worst = max(abs(d - (k + 1) * ell) for k, d in enumerate(orbit))
    return IsometryClass(
        "loxodromic", ell, BoundaryPoint("tree", g_plus), BoundaryPoint("tree", g_minus), None, bound,
        {"norm": norm, "max_deviation": worst, "witness_holds": worst <= bound + TOLERANCE_PARAMS["tree"] * n_max},
    )


def classify_isometry(g: Any, space: Any = None, n_max: Optional[int] = None) -> IsometryClass:
    """
    Classify g as elliptic, parabolic or loxodromic, with evidence.

    Args:
        g: LorentzMap or PoincareExtension, or a Word together with its action
        space: The word action (ignored for model isometries)
        n_max: Iteration budget

    Raises:
        WorkbenchError: INCONCLUSIVE if the evidence is ambiguous
    """
    n_max = GROUP_PARAMS["n_max"] if n_max is None else n_max
    if isinstance(g, (LorentzMap, PoincareExtension)):
        result = _classify_model(g, n_max)
    elif isinstance(g, Word) and space is not None and hasattr(space, "product"):
        result = _classify_word(g, space, n_max)
    else:
        raise WorkbenchError("SPACE_MISMATCH", f"cannot classify {type(g).__name__} without its action")
    logger.debug(f"Classified isometry as {result.kind} (translation length {result.translation_length:.6g})")
    return result


# ----------------------------------------------------------------------
# coding of limit points


@dataclass
class CodedPoint:
    point: BoundaryPoint
    prefix: Word
    radius: float
    constant: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            "point": self.point.to_dict(),
            "prefix": self.prefix.to_list(),
            "radius": self.radius,
            "constant": self.constant,
        }


def coding_limit_point(action: Any, address: Any, depth: int) -> CodedPoint:
    """
    Locate the limit point pi(address) to within the cylinder W_{g|depth}.

    Args:
        action: Strongly separated word action (pure Schottky tree)
        address: BoundaryWord or a sequence of at least `depth` letters
        depth: Prefix length

    Returns:
        CodedPoint: the point, its prefix, radius = Diam(W_{g|depth}) and the
            constant C = radius * e^{||g|depth||}

    Raises:
        WorkbenchError: NOT_SEPARATED, OUT_OF_RANGE, BAD_FACTOR
    """
    if not getattr(action, "strongly_separated", False):
        raise WorkbenchError("NOT_SEPARATED", f"{getattr(action, 'label', action)!r} is not strongly separated")
    if depth < 0:
        raise WorkbenchError("OUT_OF_RANGE", f"depth must be nonnegative (got {depth})")
    product = action.product
    if isinstance(address, BoundaryWord):
        letters = list(itertools.islice(address.stream(), depth))
        point = address
        if letters and _is_end_letter(letters[-1]):
            prefix = Word(tuple(letters[:-1]))
            return CodedPoint(BoundaryPoint("tree", point), prefix, 0.0, 0.0)
    else:
        letters = [tuple(letter) for letter in address][:depth]
        if len(letters) < depth:
            raise WorkbenchError("OUT_OF_RANGE", f"address has fewer than {depth} letters")
        point = None
    prefix = product.reduce(letters)
    if len(prefix.letters) != len(letters):
        raise WorkbenchError("BAD_FACTOR", "address is not a reduced word")
    if point is None:
        point = product.some_boundary_point(prefix)
    if depth == 0:
        return CodedPoint(BoundaryPoint("tree", point), prefix, 1.0, 1.0)
    radius = Cylinder(product, prefix).diameter()
    constant = radius * math.exp(action.norm(prefix))
    return CodedPoint(BoundaryPoint("tree", point), prefix, radius, constant)


# ----------------------------------------------------------------------
# Edelstein-type isometries


@dataclass(frozen=True)
class EdelsteinSpec:
    """
    g(x)_k = c_k x_k + b_k (1 - c_k) on C^K with c_k = e^{2 pi i a_k}.

    family "geometric": a_k = 2^-k; "factorial": a_k = 1/k!; "explicit":
    listed a_k (as fractions), b_k and a declared tail coefficient T with
    sum_{k>K} 4 b_k^2 (pi a_k)^2 <= T.
    """

    family: str = "geometric"
    K: Optional[int] = None
    b: float = 1.0
    a_values: Tuple[Fraction, ...] = ()
    b_values: Tuple[float, ...] = ()
    tail_coefficient: float = 0.0

    def __post_init__(self):
        if self.family not in ("geometric", "factorial", "explicit"):
            raise WorkbenchError("BAD_FACTOR", f"unknown Edelstein family '{self.family}'")
        if self.family == "explicit":
            object.__setattr__(self, "a_values", tuple(Fraction(v) for v in self.a_values))
            if len(self.a_values) != len(self.b_values) or not self.a_values:
                raise WorkbenchError("BAD_FACTOR", "explicit Edelstein spec needs matching a and b lists")
            if any(a <= 0 for a in self.a_values) or any(b <= 0 for b in self.b_values):
                raise WorkbenchError("BAD_FACTOR", "Edelstein sequences must be positive")
            object.__setattr__(self, "K", len(self.a_values))
        elif self.K is None:
            object.__setattr__(self, "K", 60 if self.family == "geometric" else 30)
        if self.K < 1:
            raise WorkbenchError("OUT_OF_RANGE", f"truncation must be positive (got {self.K})")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EdelsteinSpec":
        return cls(
            data.get("family", "geometric"),
            data.get("K"),
            float(data.get("b", 1.0)),
            tuple(Fraction(str(v)) for v in data.get("a", ())),
            tuple(float(v) for v in data.get("b_values", ())),
            float(data.get("tail_coefficient", 0.0)),
        )

    def a(self, k: int) -> Fraction:
        if self.family == "geometric":
            return Fraction(1, 2 ** k)
        if self.family == "factorial":
            return Fraction(1, math.factorial(k))
        return self.a_values[k - 1]

    def b_k(self, k: int) -> float:
        return self.b_values[k - 1] if self.family == "explicit" else self.b

    def tail_bound(self, n: int) -> float:
        """Bound on sum_{k>K} 4 b_k^2 sin^2(pi n a_k)."""
        K = self.K
        if self.family == "geometric":
            return 4.0 * math.pi ** 2 * n * n * self.b ** 2 * 4.0 ** (-K) / 3.0
        if self.family == "factorial":
            ratio = math.pi * n / math.factorial(K + 1)
            return 4.0 * self.b ** 2 * ratio * ratio / (1.0 - (K + 2) ** -2)
        return self.tail_coefficient * n * n


def _frac(x: Fraction) -> Fraction:
    return x - math.floor(x)


def edelstein_displacement(spec: EdelsteinSpec, n: int, tolerance: Optional[float] = None) -> Dict[str, float]:
    """
    ||g^n(0)||^2 = sum_k 4 b_k^2 sin^2(pi n a_k) over the truncation, with a
    certified tail bound.

    Raises:
        WorkbenchError: TAIL_TOO_LARGE if the tail bound exceeds the tolerance
    """
    tolerance = GROUP_PARAMS["edelstein_tail_tolerance"] if tolerance is None else tolerance
    n = int(n)
    tail = spec.tail_bound(n)
    if tail > tolerance:
        raise WorkbenchError(
            "TAIL_TOO_LARGE", f"tail bound {tail:.3e} exceeds {tolerance:.1e} at n = {n}; raise K",
            {"tail": tail, "n": n, "K": spec.K},
        )
    value = 0.0
    for k in range(1, spec.K + 1):
        s = math.sin(math.pi * float(_frac(n * spec.a(k))))
        value += 4.0 * spec.b_k(k) ** 2 * s * s
    return {"value": value, "tail": tail}


def edelstein_comparison_sum(spec: EdelsteinSpec, n: int) -> float:
    """sum_k b_k^2 dist(n a_k, Z)^2 computed exactly over the truncation."""
    total = Fraction(0)
    for k in range(1, spec.K + 1):
        f = _frac(int(n) * spec.a(k))
        d = min(f, 1 - f)
        total += d * d * Fraction(spec.b_k(k) ** 2)
    return float(total)


def edelstein_isometry(spec: EdelsteinSpec, n: int = 1, K: Optional[int] = None) -> PoincareExtension:
    """
    Poincare extension of g^n restricted to the first K complex coordinates,
    an isometry of the half-space of dimension 2K + 1.
    """
    K = min(spec.K, 20) if K is None else K
    blocks = np.zeros((2 * K, 2 * K))
    shift = np.zeros(2 * K)
    for k in range(1, K + 1):
        angle = 2.0 * math.pi * float(_frac(int(n) * spec.a(k)))
        c, s = math.cos(angle), math.sin(angle)
        i = 2 * (k - 1)
        blocks[i:i + 2, i:i + 2] = [[c, -s], [s, c]]
        shift[i] = spec.b_k(k) * (1.0 - c)
        shift[i + 1] = -spec.b_k(k) * s
    return poincare_extension(Similarity(1.0, blocks, shift))


def edelstein_exactness(spec: EdelsteinSpec, n: int, K: Optional[int] = None) -> float:
    """|cosh ||g^n|| - (1 + ||g^n(0)||^2 / 2)| for the truncated extension."""
    K = min(spec.K, 20) if K is None else K
    g = edelstein_isometry(spec, n, K)
    o = origin(HALFSPACE, 2 * K + 1)
    image = g(o)
    cosh_norm = 1.0 + float(np.dot(image.coords - o.coords, image.coords - o.coords)) / (2.0 * image.coords[0])
    shift = sum(
        4.0 * spec.b_k(k) ** 2 * math.sin(math.pi * float(_frac(int(n) * spec.a(k)))) ** 2 for k in range(1, K + 1)
    )
    return abs(cosh_norm - (1.0 + shift / 2.0))
