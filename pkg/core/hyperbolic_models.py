"""
Real hyperbolic space in the hyperboloid, ball (Klein) and half-space models.

Points are immutable ModelPoint values tagged by model. All distances are
computed from the Lorentzian bilinear form B(x, y) = -x0*y0 + sum xi*yi on
Q-normalized lifts, using a log1p form of arccosh that stays accurate for
nearby points.
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence

import numpy as np

from .config import MODEL_PARAMS, TOLERANCE_PARAMS
from .errors import WorkbenchError

logger = logging.getLogger(__name__)

HYPERBOLOID = "hyperboloid"
BALL = "ball"
HALFSPACE = "halfspace"
MODELS = (HYPERBOLOID, BALL, HALFSPACE)


def bilinear(x: np.ndarray, y: np.ndarray) -> float:
    """Lorentzian form B(x, y) = -x0*y0 + sum_i xi*yi."""
    return float(-x[0] * y[0] + np.dot(x[1:], y[1:]))


def quadratic(x: np.ndarray) -> float:
    return bilinear(x, x)


def lorentz_signature(dim: int) -> np.ndarray:
    """The matrix J = diag(-1, 1, ..., 1) of size dim + 1."""
    J = np.eye(dim + 1)
    J[0, 0] = -1.0
    return J


def acosh1p(u: float) -> float:
    """arccosh(1 + u) for u >= 0 without cancellation near u = 0."""
    u = max(0.0, u)
    return math.log1p(u + math.sqrt(u * (u + 2.0)))


def _check_model(model: str):
    if model not in MODELS:
        raise WorkbenchError("INVALID_POINT", f"unknown model '{model}' (real models only: {', '.join(MODELS)})")


@dataclass(frozen=True, eq=False)
class ModelPoint:
    """
    A point of real hyperbolic n-space in one of the three models.

    Hyperboloid coordinates have length n + 1 and are stored with Q(x) = -1
    and x0 > 0; ball coordinates satisfy |x| < 1; half-space coordinates
    have x1 = coords[0] > 0.
    """

    model: str
    coords: np.ndarray

    def __post_init__(self):
        _check_model(self.model)
        coords = np.array(self.coords, dtype=float).reshape(-1)
        if not np.all(np.isfinite(coords)):
            raise WorkbenchError("INVALID_POINT", f"non-finite coordinates {coords.tolist()}")
        if self.model == HYPERBOLOID:
            q = quadratic(coords) if coords.size else 0.0
            if coords.size < 1 or q >= 0:
                raise WorkbenchError("INVALID_POINT", f"Q(x) = {q} is not negative")
            coords = coords / math.sqrt(-q)
            if coords[0] < 0:
                coords = -coords
        elif self.model == BALL:
            if coords.size < 1 or float(np.dot(coords, coords)) >= 1.0:
                raise WorkbenchError("INVALID_POINT", f"ball point {coords.tolist()} is not inside the unit ball")
        else:
            if coords.size < 1 or coords[0] <= 0:
                raise WorkbenchError("INVALID_POINT", f"half-space point {coords.tolist()} has x1 <= 0")
        if self.dimension < 2:
            raise WorkbenchError("OUT_OF_RANGE", f"hyperbolic space needs dimension n >= 2 (got {self.dimension})")
        if self.dimension > MODEL_PARAMS["max_dimension"]:
            raise WorkbenchError(
                "INVALID_POINT",
                f"dimension {self.dimension} exceeds max_dimension {MODEL_PARAMS['max_dimension']}",
            )
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)

    @property
    def dimension(self) -> int:
        size = np.asarray(self.coords).size
        return size - 1 if self.model == HYPERBOLOID else size

    def lift(self) -> np.ndarray:
        """Q-normalized hyperboloid coordinates of this point."""
        return to_hyperboloid_coords(self.model, self.coords)

    def is_close(self, other: "ModelPoint", tol: Optional[float] = None) -> bool:
        tol = TOLERANCE_PARAMS["exact"] if tol is None else tol
        return self.model == other.model and self.coords.shape == other.coords.shape and bool(
            np.allclose(self.coords, other.coords, atol=tol, rtol=0.0)
        )

    def to_dict(self) -> Dict[str, Any]:
        return {"model": self.model, "coords": [float(c) for c in self.coords]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ModelPoint":
        return cls(data["model"], np.array(data["coords"], dtype=float))

    def __repr__(self):
        return f"ModelPoint({self.model}, {np.round(self.coords, 6).tolist()})"


def origin(model: str, n: int) -> ModelPoint:
    """The basepoint o in the given model: (1,0,...) / 0 / (1,0,...)."""
    _check_model(model)
    if model == HYPERBOLOID:
        coords = np.zeros(n + 1)
        coords[0] = 1.0
    elif model == BALL:
        coords = np.zeros(n)
    else:
        coords = np.zeros(n)
        coords[0] = 1.0
    return ModelPoint(model, coords)


def to_hyperboloid_coords(model: str, coords: np.ndarray) -> np.ndarray:
    if model == HYPERBOLOID:
        return np.array(coords, dtype=float)
    if model == BALL:
        denom = math.sqrt(1.0 - float(np.dot(coords, coords)))
        return np.concatenate(([1.0], coords)) / denom
    x1 = coords[0]
    r2 = float(np.dot(coords, coords))
    lifted = np.empty(coords.size + 1)
    lifted[0] = (1.0 + r2) / (2.0 * x1)
    lifted[1] = (1.0 - r2) / (2.0 * x1)
    lifted[2:] = coords[1:] / x1
    return lifted


def from_hyperboloid_coords(model: str, lifted: np.ndarray) -> np.ndarray:
    if model == HYPERBOLOID:
        return np.array(lifted, dtype=float)
    if model == BALL:
        return lifted[1:] / lifted[0]
    s = lifted[0] + lifted[1]
    coords = np.empty(lifted.size - 1)
    coords[0] = 1.0 / s
    coords[1:] = lifted[2:] / s
    return coords


def _require_same(p: ModelPoint, q: ModelPoint):
    if p.model != q.model or p.dimension != q.dimension:
        raise WorkbenchError(
            "MODEL_MISMATCH",
            f"{p.model}^{p.dimension} vs {q.model}^{q.dimension}",
        )


def dist(p: ModelPoint, q: ModelPoint) -> float:
    """
    Hyperbolic distance between two points of the same model.

    Args:
        p: First point
        q: Second point

    Returns:
        float: d(p, q)

    Raises:
        WorkbenchError: MODEL_MISMATCH if the points live in different models
    """
    _require_same(p, q)
    if p.model == HALFSPACE:
        diff = p.coords - q.coords
        u = float(np.dot(diff, diff)) / (2.0 * p.coords[0] * q.coords[0])
    else:
        x, y = p.lift(), q.lift()
        u = 0.5 * quadratic(x - y)
    return acosh1p(u)


def convert(p: ModelPoint, target: str) -> ModelPoint:
    """Express p in the target model."""
    _check_model(target)
    if p.model == target:
        return p
    return ModelPoint(target, from_hyperboloid_coords(target, p.lift()))


def geodesic_point(p: ModelPoint, q: ModelPoint, t: float) -> ModelPoint:
    """
    The point at distance t from p on the geodesic segment [p, q].

    Raises:
        WorkbenchError: DEGENERATE if p == q, OUT_OF_RANGE if t is not in [0, d(p, q)]
    """
    _require_same(p, q)
    d = dist(p, q)
    if d == 0.0:
        raise WorkbenchError("DEGENERATE", "geodesic between equal points")
    tol = TOLERANCE_PARAMS["exact"]
    if t < -tol or t > d + tol:
        raise WorkbenchError("OUT_OF_RANGE", f"t = {t} outside [0, {d}]")
    t = min(max(t, 0.0), d)
    if t == 0.0:
        return p
    if t == d:
        return q
    x, y = p.lift(), q.lift()
    direction = (y - math.cosh(d) * x) / math.sinh(d)
    lifted = math.cosh(t) * x + math.sinh(t) * direction
    return ModelPoint(p.model, from_hyperboloid_coords(p.model, lifted))


def random_point(model: str, n: int, rng: np.random.Generator, radius: float = 3.0) -> ModelPoint:
    """Sample a point with d(o, x) uniform in [0, radius] and uniform direction."""
    r = rng.uniform(0.0, radius)
    u = rng.normal(size=n)
    u /= np.linalg.norm(u)
    lifted = np.concatenate(([math.cosh(r)], math.sinh(r) * u))
    return ModelPoint(model, from_hyperboloid_coords(model, lifted))


# Boundary data: ball boundary points are unit vectors, half-space boundary
# points are vectors in R^{n-1} or None for the point at infinity.

def boundary_null_vector(model: str, data: Optional[np.ndarray], n: int) -> np.ndarray:
    """A null vector of the light cone representing a boundary point."""
    if model == BALL:
        xi = np.asarray(data, dtype=float)
        if abs(float(np.dot(xi, xi)) - 1.0) > TOLERANCE_PARAMS["exact"] * 10:
            raise WorkbenchError("INVALID_POINT", f"ball boundary point {xi.tolist()} is not a unit vector")
        return np.concatenate(([1.0], xi))
    if model == HALFSPACE:
        if data is None:
            v = np.zeros(n + 1)
            v[0], v[1] = 1.0, -1.0
            return v
        b = np.asarray(data, dtype=float)
        b2 = float(np.dot(b, b))
        return np.concatenate(([1.0 + b2, 1.0 - b2], 2.0 * b))
    if model == HYPERBOLOID:
        v = np.asarray(data, dtype=float)
        if v[0] <= 0 or abs(quadratic(v)) > TOLERANCE_PARAMS["exact"] * max(1.0, v[0] ** 2):
            raise WorkbenchError("INVALID_POINT", "hyperboloid boundary data must be a future null vector")
        return v / v[0]
    raise WorkbenchError("INVALID_POINT", f"unknown model '{model}'")


def null_vector_to_boundary(model: str, v: np.ndarray) -> Optional[np.ndarray]:
    """Inverse of boundary_null_vector (returns None for half-space infinity)."""
    v = np.asarray(v, dtype=float)
    if v[0] < 0:
        v = -v
    if model == BALL:
        xi = v[1:] / v[0]
        return xi / np.linalg.norm(xi)
    if model == HALFSPACE:
        s = v[0] + v[1]
        if abs(s) <= TOLERANCE_PARAMS["exact"] * abs(v[0]):
            return None
        return v[2:] / s
    return v / v[0]


def busemann_halfspace(x: ModelPoint, y: ModelPoint) -> float:
    """
    Busemann function at infinity in the half-space model.

    Returns:
        float: beta_inf(x, y) = -log(x1 / y1)
    """
    if x.model != HALFSPACE or y.model != HALFSPACE:
        raise WorkbenchError("MODEL_MISMATCH", "busemann_halfspace needs half-space points")
    return -math.log(x.coords[0] / y.coords[0])


@dataclass(frozen=True, eq=False)
class LorentzMap:
    """
    An isometry of the hyperboloid model given by a Q-preserving matrix.
    """

    matrix: np.ndarray

    def __post_init__(self):
        M = np.array(self.matrix, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] < 1:
            raise WorkbenchError("NOT_ISOMETRY", f"matrix of shape {M.shape} is not square")
        J = lorentz_signature(M.shape[0] - 1)
        residual = float(np.max(np.abs(M.T @ J @ M - J)))
        scale = max(1.0, float(np.max(np.abs(M))) ** 2)
        if residual > TOLERANCE_PARAMS["exact"] * scale:
            raise WorkbenchError("NOT_ISOMETRY", f"M^T J M differs from J by {residual:.3e}")
        M.setflags(write=False)
        object.__setattr__(self, "matrix", M)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0] - 1

    @classmethod
    def identity(cls, n: int) -> "LorentzMap":
        return cls(np.eye(n + 1))

    def compose(self, other: "LorentzMap") -> "LorentzMap":
        """self after other."""
        return LorentzMap(self.matrix @ other.matrix)

    def inverse(self) -> "LorentzMap":
        J = lorentz_signature(self.dimension)
        return LorentzMap(J @ self.matrix.T @ J)

    def power(self, k: int) -> "LorentzMap":
        base = self if k >= 0 else self.inverse()
        return LorentzMap(np.linalg.matrix_power(base.matrix, abs(k)))

    def apply(self, p: ModelPoint) -> ModelPoint:
        lifted = self.matrix @ p.lift()
        return ModelPoint(p.model, from_hyperboloid_coords(p.model, _future(lifted)))

    def __call__(self, p: ModelPoint) -> ModelPoint:
        return self.apply(p)

    def apply_boundary(self, model: str, data: Optional[np.ndarray]) -> Optional[np.ndarray]:
        v = self.matrix @ boundary_null_vector(model, data, self.dimension)
        return null_vector_to_boundary(model, v)

    def operator_norm(self) -> float:
        return float(np.linalg.norm(self.matrix, 2))

    def to_dict(self) -> Dict[str, Any]:
        return {"matrix": self.matrix.tolist()}


def _future(v: np.ndarray) -> np.ndarray:
    return -v if v[0] < 0 else v


def lorentz_boost(j: int, t: float, n: int) -> LorentzMap:
    """
    Lorentz boost of rapidity t along spatial axis j (1 <= j <= n).

    Raises:
        WorkbenchError: BAD_AXIS if j is out of range
    """
    if not 1 <= j <= n:
        raise WorkbenchError("BAD_AXIS", f"axis {j} not in 1..{n}")
    M = np.eye(n + 1)
    c, s = math.cosh(t), math.sinh(t)
    M[0, 0] = M[j, j] = c
    M[0, j] = M[j, 0] = s
    return LorentzMap(M)


def spatial_rotation(i: int, j: int, angle: float, n: int) -> LorentzMap:
    """Rotation by angle in the (i, j) coordinate plane; fixes o."""
    if not (1 <= i <= n and 1 <= j <= n) or i == j:
        raise WorkbenchError("BAD_AXIS", f"axes ({i}, {j}) not distinct in 1..{n}")
    M = np.eye(n + 1)
    c, s = math.cos(angle), math.sin(angle)
    M[i, i] = M[j, j] = c
    M[i, j], M[j, i] = -s, s
    return LorentzMap(M)


@dataclass(frozen=True, eq=False)
class Similarity:
    """Euclidean similarity g(x) = scale * T x + translation of R^{n-1}."""

    scale: float
    orthogonal: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        if not self.scale > 0:
            raise WorkbenchError("INVALID_POINT", f"similarity scale must be positive (got {self.scale})")
        T = np.atleast_2d(np.array(self.orthogonal, dtype=float))
        if T.size == 0:
            T = np.zeros((0, 0))
        b = np.array(self.translation, dtype=float).reshape(-1)
        if T.shape != (b.size, b.size):
            raise WorkbenchError("INVALID_POINT", f"orthogonal part {T.shape} does not match translation {b.size}")
        if b.size and float(np.max(np.abs(T.T @ T - np.eye(b.size)))) > TOLERANCE_PARAMS["exact"]:
            raise WorkbenchError("INVALID_POINT", "linear part is not orthogonal")
        object.__setattr__(self, "orthogonal", T)
        object.__setattr__(self, "translation", b)

    @classmethod
    def translation_by(cls, b: Sequence[float]) -> "Similarity":
        b = np.array(b, dtype=float)
        return cls(1.0, np.eye(b.size), b)

    @classmethod
    def dilation(cls, scale: float, boundary_dim: int) -> "Similarity":
        return cls(scale, np.eye(boundary_dim), np.zeros(boundary_dim))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.scale * (self.orthogonal @ np.asarray(x, dtype=float)) + self.translation

    def inverse(self) -> "Similarity":
        Tinv = self.orthogonal.T
        return Similarity(1.0 / self.scale, Tinv, -(Tinv @ self.translation) / self.scale)


class PoincareExtension:
    """
    Half-space isometry extending a similarity of the boundary R^{n-1}:
    (x1, x') -> (scale * x1, g(x')). Fixes infinity with derivative 1/scale.
    """

    def __init__(self, similarity: Similarity):
        self.similarity = similarity
        self.n = similarity.translation.size + 1

    def __call__(self, p: ModelPoint) -> ModelPoint:
        q = convert(p, HALFSPACE)
        coords = np.empty(self.n)
        coords[0] = self.similarity.scale * q.coords[0]
        coords[1:] = self.similarity(q.coords[1:])
        return convert(ModelPoint(HALFSPACE, coords), p.model)

    def apply(self, p: ModelPoint) -> ModelPoint:
        return self(p)

    def apply_boundary(self, model: str, data: Optional[np.ndarray]) -> Optional[np.ndarray]:
        if model != HALFSPACE:
            return self.as_lorentz_map().apply_boundary(model, data)
        if data is None:
            return None
        return self.similarity(data)

    def inverse(self) -> "PoincareExtension":
        return PoincareExtension(self.similarity.inverse())

    def as_lorentz_map(self) -> LorentzMap:
        """The hyperboloid matrix of this isometry, M = [g X_k][X_k]^-1."""
        samples = [np.eye(self.n)[0], 2.0 * np.eye(self.n)[0]]
        for i in range(1, self.n):
            x = np.eye(self.n)[0].copy()
            x[i] = 1.0
            samples.append(x)
        X = np.column_stack([to_hyperboloid_coords(HALFSPACE, s) for s in samples])
        images = np.column_stack([self(ModelPoint(HALFSPACE, s)).lift() for s in samples])
        return LorentzMap(images @ np.linalg.inv(X))

    def power(self, k: int) -> "PoincareExtension":
        g = self if k >= 0 else self.inverse()
        sim = Similarity(1.0, np.eye(self.n - 1), np.zeros(self.n - 1))
        for _ in range(abs(k)):
            sim = Similarity(
                g.similarity.scale * sim.scale,
                g.similarity.orthogonal @ sim.orthogonal,
                g.similarity(sim.translation),
            )
        return PoincareExtension(sim)


def poincare_extension(g: Similarity) -> PoincareExtension:
    return PoincareExtension(g)


def as_lorentz(g: Any) -> LorentzMap:
    """Coerce a model isometry (LorentzMap or PoincareExtension) to its matrix."""
    if isinstance(g, LorentzMap):
        return g
    if isinstance(g, PoincareExtension):
        return g.as_lorentz_map()
    raise WorkbenchError("SPACE_MISMATCH", f"{type(g).__name__} is not a model isometry")
