"""
Model-independent coarse geometry: Gromov products, Busemann cocycles,
visual and Hamenstadt metametrics, shadows, derivatives and polar coordinates.

All functions take a GromovContext wrapping a "space". A space is any object
exposing:

    basepoint                       default basepoint o
    distance(x, y)                  metric on interior points
    gromov_product(x, y, z)         <x|y>_z, x and y possibly boundary points
    busemann(xi, x, y)              beta_xi(x, y)          (optional)
    act(g, x), inverse(g), power(g, k)                     (for derivatives)
    boundary_equal(xi, eta)

ModelSpace below adapts the hyperbolic models; RTree and the word actions in
actions implement the same interface. Tree spaces also expose is_boundary(x).
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np

from .config import GROUP_PARAMS, TOLERANCE_PARAMS
from .errors import WorkbenchError
from .hyperbolic_models import (
    HALFSPACE,
    ModelPoint,
    as_lorentz,
    bilinear,
    boundary_null_vector,
    dist,
    null_vector_to_boundary,
    origin,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class BoundaryPoint:
    """
    A point of the Gromov boundary.

    kind "model": data is a unit vector (ball), a boundary vector or None for
    infinity (half-space), or a future null vector (hyperboloid).
    kind "tree": data is a tree-specific end descriptor (a leaf id for RTree
    ends, a BoundaryWord for Schottky trees).
    """

    kind: str
    data: Any
    model: Optional[str] = None

    @classmethod
    def in_model(cls, model: str, data: Any) -> "BoundaryPoint":
        if data is not None:
            data = np.array(data, dtype=float)
            data.setflags(write=False)
        return cls("model", data, model)

    @classmethod
    def infinity(cls) -> "BoundaryPoint":
        return cls("model", None, HALFSPACE)

    def to_dict(self) -> Dict[str, Any]:
        if self.kind == "model":
            data = None if self.data is None else [float(v) for v in self.data]
            return {"kind": "model", "model": self.model, "data": data}
        data = self.data.to_dict() if hasattr(self.data, "to_dict") else self.data
        return {"kind": "tree", "data": data}

    def __repr__(self):
        if self.kind == "model":
            shown = "inf" if self.data is None else np.round(self.data, 6).tolist()
            return f"BoundaryPoint({self.model}, {shown})"
        return f"BoundaryPoint(tree, {self.data!r})"


def is_boundary(x: Any) -> bool:
    return isinstance(x, BoundaryPoint)


class ModelSpace:
    """Space adapter for one hyperbolic model in dimension n."""

    def __init__(self, model: str, n: int):
        self.model = model
        self.n = n
        self.basepoint = origin(model, n)

    def _check(self, x: Any):
        if isinstance(x, ModelPoint):
            if x.model != self.model or x.dimension != self.n:
                raise WorkbenchError("SPACE_MISMATCH", f"{x!r} is not a point of {self.model}^{self.n}")
        elif isinstance(x, BoundaryPoint):
            if x.kind != "model" or x.model != self.model:
                raise WorkbenchError("SPACE_MISMATCH", f"{x!r} is not a boundary point of {self.model}^{self.n}")
        else:
            raise WorkbenchError("SPACE_MISMATCH", f"{type(x).__name__} is not a model point")

    def vector(self, x: Any) -> np.ndarray:
        """Q-normalized lift of an interior point or null vector of a boundary point."""
        self._check(x)
        if isinstance(x, ModelPoint):
            return x.lift()
        return boundary_null_vector(self.model, x.data, self.n)

    def distance(self, x: ModelPoint, y: ModelPoint) -> float:
        self._check(x)
        self._check(y)
        return dist(x, y)

    def boundary_equal(self, xi: BoundaryPoint, eta: BoundaryPoint) -> bool:
        u, v = self.vector(xi), self.vector(eta)
        scale = abs(u[0]) * abs(v[0])
        return abs(bilinear(u, v)) <= 1e-14 * max(1.0, scale)

    def busemann(self, xi: BoundaryPoint, x: ModelPoint, y: ModelPoint) -> float:
        v = self.vector(xi)
        return math.log(bilinear(self.vector(x), v) / bilinear(self.vector(y), v))

    def gromov_product(self, x: Any, y: Any, z: ModelPoint) -> float:
        self._check(z)
        if is_boundary(z):
            raise WorkbenchError("SPACE_MISMATCH", "the base of a Gromov product must be an interior point")
        bx, by = is_boundary(x), is_boundary(y)
        if not bx and not by:
            return 0.5 * (self.distance(z, x) + self.distance(z, y) - self.distance(x, y))
        if bx and by:
            u, v, w = self.vector(x), self.vector(y), self.vector(z)
            pairing = -bilinear(u, v)
            if self.boundary_equal(x, y) or pairing <= 0:
                return math.inf
            return -0.5 * math.log(pairing / (2.0 * bilinear(w, u) * bilinear(w, v)))
        interior, xi = (y, x) if bx else (x, y)
        return 0.5 * (self.distance(z, interior) - self.busemann(xi, interior, z))

    def act(self, g: Any, x: Any) -> Any:
        if is_boundary(x):
            return BoundaryPoint.in_model(self.model, g.apply_boundary(self.model, x.data))
        return g(x)

    def inverse(self, g: Any) -> Any:
        return g.inverse()

    def power(self, g: Any, k: int) -> Any:
        return g.power(k)

    def from_null_vector(self, v: np.ndarray) -> BoundaryPoint:
        return BoundaryPoint.in_model(self.model, null_vector_to_boundary(self.model, v))


@dataclass(frozen=True)
class GromovContext:
    """A Gromov triple (X, o, b) with b fixed to e."""

    space: Any
    basepoint: Any = None
    base: float = math.e

    def __post_init__(self):
        if abs(self.base - math.e) > 1e-15:
            raise WorkbenchError("SPACE_MISMATCH", f"only base e is supported (got {self.base})")
        if self.basepoint is None:
            object.__setattr__(self, "basepoint", self.space.basepoint)

    @property
    def o(self):
        return self.basepoint


@dataclass(frozen=True)
class Shadow:
    """Shad_z(x, sigma): boundary points whose geodesic from z passes near x."""

    z: Any
    x: Any
    sigma: float = 0.0

    def __post_init__(self):
        if self.sigma < 0:
            raise WorkbenchError("OUT_OF_RANGE", f"shadow parameter must be >= 0 (got {self.sigma})")

    def to_dict(self) -> Dict[str, Any]:
        enc = lambda p: p.to_dict() if hasattr(p, "to_dict") else p
        return {"z": enc(self.z), "x": enc(self.x), "sigma": self.sigma}


def gromov_product(ctx: GromovContext, x: Any, y: Any, z: Any = None) -> float:
    """
    The Gromov product <x|y>_z (z defaults to the basepoint).

    Args:
        ctx: Gromov context
        x: Point or boundary point
        y: Point or boundary point
        z: Interior base point

    Returns:
        float: The product, math.inf iff x = y is a boundary point
    """
    z = ctx.o if z is None else z
    return ctx.space.gromov_product(x, y, z)


def busemann(ctx: GromovContext, xi: Any, x: Any, y: Any) -> float:
    """beta_xi(x, y) = lim d(x, z) - d(y, z) as z -> xi."""
    if hasattr(ctx.space, "busemann"):
        return ctx.space.busemann(xi, x, y)
    return 2.0 * ctx.space.gromov_product(y, xi, x) - ctx.space.distance(x, y)


def visual_dist(ctx: GromovContext, x: Any, y: Any) -> float:
    """D_o(x, y) = e^{-<x|y>_o}; zero exactly on the diagonal of the boundary."""
    product = gromov_product(ctx, x, y)
    return 0.0 if math.isinf(product) else math.exp(-product)


def _same_point(ctx: GromovContext, a: Any, b: Any) -> bool:
    check = getattr(ctx.space, "is_boundary", is_boundary)
    if check(a) and check(b):
        return ctx.space.boundary_equal(a, b)
    return False


def hamenstadt_dist(ctx: GromovContext, xi: Any, x: Any, y: Any) -> float:
    """
    Hamenstadt metametric seen from the boundary point xi:
    exp(-(<x|y>_o - <x|xi>_o - <y|xi>_o)).

    Raises:
        WorkbenchError: EQUALS_XI if x or y is xi
    """
    if _same_point(ctx, x, xi) or _same_point(ctx, y, xi):
        raise WorkbenchError("EQUALS_XI", "Hamenstadt distance is undefined at xi")
    xy = gromov_product(ctx, x, y)
    if math.isinf(xy):
        return 0.0
    return math.exp(-(xy - gromov_product(ctx, x, xi) - gromov_product(ctx, y, xi)))


def in_shadow(ctx: GromovContext, shadow: Shadow, xi: Any) -> bool:
    """True iff <z|xi>_x <= sigma."""
    value = ctx.space.gromov_product(shadow.z, xi, shadow.x)
    return value <= shadow.sigma + TOLERANCE_PARAMS["tree"]


def metric_derivative(ctx: GromovContext, g: Any, xi: Any) -> float:
    """g'(xi) = e^{beta_xi(o, g^-1 o)}, exact in strongly hyperbolic spaces."""
    g_inv_o = ctx.space.act(ctx.space.inverse(g), ctx.o)
    return math.exp(busemann(ctx, xi, ctx.o, g_inv_o))


def dynamical_derivative(ctx: GromovContext, g: Any, xi: Any, n_max: Optional[int] = None) -> float:
    """
    Dynamical derivative of g at a fixed boundary point xi,
    exp(beta_xi(o, g^{-n} o) / n) at n = n_max.

    Raises:
        WorkbenchError: NOT_FIXED if g(xi) != xi, OUT_OF_RANGE if n_max < 8
    """
    n_max = GROUP_PARAMS["n_max"] if n_max is None else n_max
    if n_max < 8:
        raise WorkbenchError("OUT_OF_RANGE", f"n_max must be at least 8 (got {n_max})")
    image = ctx.space.act(g, xi)
    if not _same_point(ctx, image, xi):
        gap = visual_dist(ctx, image, xi)
        if gap > TOLERANCE_PARAMS["fit"]:
            raise WorkbenchError("NOT_FIXED", f"g moves xi by visual distance {gap:.3e}", {"gap": gap})
    far = ctx.space.act(ctx.space.power(g, -n_max), ctx.o)
    value = math.exp(busemann(ctx, xi, ctx.o, far) / n_max)
    logger.debug(f"Dynamical derivative at n = {n_max}: {value}")
    return value


def polar_coords(ctx: GromovContext, xi1: Any, xi2: Any, x: Any) -> Tuple[float, float]:
    """
    Generalized polar coordinates (r, theta) of x relative to (xi1, xi2):
    r = (beta_1(x, o) - beta_2(x, o)) / 2, theta = (beta_1 + beta_2) / 2.
    """
    if _same_point(ctx, xi1, xi2):
        raise WorkbenchError("DEGENERATE", "polar coordinates need two distinct boundary points")
    b1 = busemann(ctx, xi1, x, ctx.o)
    b2 = busemann(ctx, xi2, x, ctx.o)
    return 0.5 * (b1 - b2), 0.5 * (b1 + b2)


def gromov_inequality_defect(ctx: GromovContext, x: Any, y: Any, z: Any, w: Any) -> float:
    """max(0, min(<x|y>_w, <y|z>_w) - <x|z>_w); zero on trees."""
    xy = ctx.space.gromov_product(x, y, w)
    yz = ctx.space.gromov_product(y, z, w)
    xz = ctx.space.gromov_product(x, z, w)
    return max(0.0, min(xy, yz) - xz)


def strong_hyperbolicity_slack(ctx: GromovContext, x: Any, y: Any, z: Any, w: Any) -> float:
    """e^{-<x|y>_w} + e^{-<y|z>_w} - e^{-<x|z>_w}; nonnegative in CAT(-1) spaces."""
    e = lambda p: 0.0 if math.isinf(p) else math.exp(-p)
    return (
        e(ctx.space.gromov_product(x, y, w))
        + e(ctx.space.gromov_product(y, z, w))
        - e(ctx.space.gromov_product(x, z, w))
    )


def distance_to_axis(ctx: GromovContext, xi: Any, eta: Any, x: Any) -> float:
    """Distance from x to the geodesic (xi, eta): cosh d = e^{<xi|eta>_x}."""
    product = ctx.space.gromov_product(xi, eta, x)
    c = math.exp(product)
    return math.log(c + math.sqrt(max(c * c - 1.0, 0.0)))


def model_context(model: str, n: int) -> GromovContext:
    return GromovContext(ModelSpace(model, n))


def model_isometry(g: Any):
    """Matrix of a model isometry, exposed for classification code."""
    return as_lorentz(g)
