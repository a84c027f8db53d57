"""
Isometric embedding of finite tree configurations into the hyperboloid model
through the bilinear form B(x, y) = -sum lambda^{d(v, w)} x_v y_w, so that
cosh d(Psi(v), Psi(w)) = lambda^{d(v, w)}.
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, Hashable, List, Optional, Sequence

import numpy as np
from scipy.linalg import cholesky, eigh, null_space

from .config import BIM_PARAMS, TOLERANCE_PARAMS
from .errors import WorkbenchError
from .hyperbolic_models import HYPERBOLOID, LorentzMap, ModelPoint, lorentz_signature
from .rtree import RTree, is_tree_metric

logger = logging.getLogger(__name__)


@dataclass
class BimConfig:
    """lambda > 1, point ids and their tree distance matrix."""

    lam: float
    ids: List[Hashable]
    D: np.ndarray

    def __post_init__(self):
        self.D = np.asarray(self.D, dtype=float)
        self.ids = list(self.ids)
        if not self.lam > 1:
            raise WorkbenchError("OUT_OF_RANGE", f"lambda must exceed 1 (got {self.lam})")
        if self.D.shape != (len(self.ids), len(self.ids)) or not self.ids:
            raise WorkbenchError("NOT_TREE_METRIC", f"distance matrix {self.D.shape} does not match {len(self.ids)} points")

    @classmethod
    def from_tree(cls, tree: RTree, points: Sequence[Any], lam: Optional[float] = None) -> "BimConfig":
        lam = BIM_PARAMS["default_lambda"] if lam is None else lam
        D = np.array([[tree.distance(p, q) for q in points] for p in points])
        return cls(lam, [str(p) if not isinstance(p, (str, int)) else p for p in points], D)

    @classmethod
    def from_action(cls, action: Any, elements: Sequence[Any], lam: Optional[float] = None) -> "BimConfig":
        """Orbit points g o of a tree action; ids are the elements themselves."""
        lam = BIM_PARAMS["default_lambda"] if lam is None else lam
        D = np.array([[action.distance(g, h) for h in elements] for g in elements])
        return cls(lam, list(elements), D)

    def index(self, v: Hashable) -> int:
        try:
            return self.ids.index(v)
        except ValueError:
            raise WorkbenchError("INVALID_POINT", f"{v!r} is not one of the configured points")


@dataclass
class BimForm:
    matrix: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    min_abs_eigenvalue: float

    @property
    def signature(self):
        negative = int(np.sum(self.eigenvalues < 0))
        return len(self.eigenvalues) - negative, negative


def build_form(cfg: BimConfig) -> BimForm:
    """
    The m x m matrix B[i][j] = -lambda^{d(v_i, v_j)} with its eigen-decomposition.

    Raises:
        WorkbenchError: NOT_TREE_METRIC, OVERFLOW, SIGNATURE_FAIL
    """
    if not is_tree_metric(cfg.D):
        raise WorkbenchError("NOT_TREE_METRIC", "configuration distances fail the four-point condition")
    largest = float(cfg.D.max())
    if largest * math.log(cfg.lam) > math.log(BIM_PARAMS["overflow_guard"]):
        raise WorkbenchError(
            "OVERFLOW", f"lambda^d exceeds {BIM_PARAMS['overflow_guard']:.0e} at d = {largest}",
            {"lambda": cfg.lam, "max_distance": largest},
        )
    B = -np.power(cfg.lam, cfg.D)
    w, V = eigh(B)
    min_abs = float(np.min(np.abs(w)))
    negative = int(np.sum(w < 0))
    if negative != 1 or min_abs <= 1e-12 * float(np.max(np.abs(w))):
        raise WorkbenchError(
            "SIGNATURE_FAIL",
            f"form has {negative} negative eigenvalues, min |eigenvalue| {min_abs:.3e}; "
            "try a smaller lambda or a rescaled tree",
            {"eigenvalues": w.tolist(), "min_abs_eigenvalue": min_abs},
        )
    logger.debug(f"BIM form of size {len(w)}: min |eigenvalue| {min_abs:.3e}")
    return BimForm(B, w, V, min_abs)


def _boost_to_origin(x: np.ndarray) -> np.ndarray:
    """Lorentz matrix taking the hyperboloid point x to o."""
    x0, xs = x[0], x[1:]
    n = xs.size
    L = np.empty((n + 1, n + 1))
    L[0, 0] = x0
    L[0, 1:] = xs
    L[1:, 0] = xs
    L[1:, 1:] = np.eye(n) + np.outer(xs, xs) / (1.0 + x0)
    J = lorentz_signature(n)
    return J @ L.T @ J


@dataclass
class BimEmbedding:
    cfg: BimConfig
    coords: np.ndarray
    residual: float

    @property
    def points(self) -> List[ModelPoint]:
        return [ModelPoint(HYPERBOLOID, row) for row in self.coords]

    def point(self, v: Hashable) -> np.ndarray:
        return self.coords[self.cfg.index(v)]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "lambda": self.cfg.lam,
            "ids": [str(v) for v in self.cfg.ids],
            "coords": self.coords.tolist(),
            "residual": self.residual,
        }


def embed(cfg: BimConfig, form: Optional[BimForm] = None) -> BimEmbedding:
    """
    Hyperboloid points Psi(v_i) in dimension m - 1 with Psi(v_1) = o and
    cosh d(Psi(v_i), Psi(v_j)) = lambda^{d(v_i, v_j)}.

    Raises:
        WorkbenchError: SIGNATURE_FAIL if the identity is missed beyond tolerance
    """
    form = build_form(cfg) if form is None else form
    w, V = form.eigenvalues, form.eigenvectors
    order = [int(np.argmin(w))] + [i for i in range(len(w)) if i != int(np.argmin(w))]
    X = V[:, order] * np.sqrt(np.abs(w[order]))
    if X[0, 0] < 0:
        X[:, 0] = -X[:, 0]
    X = X @ _boost_to_origin(X[0]).T

    m = len(cfg.ids)
    J = lorentz_signature(m - 1)
    cosh = -(X @ J @ X.T)
    target = np.power(cfg.lam, cfg.D)
    residual = float(np.max(np.abs(cosh - target) / np.maximum(1.0, target)))
    if residual > TOLERANCE_PARAMS["bim"]:
        raise WorkbenchError(
            "SIGNATURE_FAIL", f"embedding misses cosh d = lambda^d by {residual:.3e}", {"residual": residual}
        )
    logger.info(f"Embedded {m} points with lambda = {cfg.lam:.6g} (relative residual {residual:.2e})")
    return BimEmbedding(cfg, X, residual)


def _frame(A: np.ndarray, J: np.ndarray) -> np.ndarray:
    """J-orthonormal basis of the J-orthogonal complement of span(A)."""
    N = null_space(A.T @ J)
    if N.shape[1] == 0:
        return N
    G = N.T @ J @ N
    L = cholesky(G, lower=True)
    return N @ np.linalg.inv(L).T


def represent_isometry(cfg: BimConfig, mapping: Dict[Hashable, Hashable],
                       embedding: Optional[BimEmbedding] = None) -> LorentzMap:
    """
    The Lorentz map M with M Psi(v) = Psi(sigma(v)) for every v in the
    domain of sigma. Partial maps are completed by an isometry between the
    J-orthogonal complements.

    Raises:
        WorkbenchError: NOT_ISOMETRY if sigma does not preserve distances
    """
    embedding = embed(cfg) if embedding is None else embedding
    domain = list(mapping)
    if not domain:
        raise WorkbenchError("NOT_ISOMETRY", "empty point map")
    src = [cfg.index(v) for v in domain]
    dst = [cfg.index(mapping[v]) for v in domain]
    if len(set(dst)) != len(dst):
        raise WorkbenchError("NOT_ISOMETRY", "point map is not injective")
    tol = TOLERANCE_PARAMS["exact"] * max(1.0, float(cfg.D.max()))
    for a, i in enumerate(src):
        for b, j in enumerate(src):
            if abs(cfg.D[i, j] - cfg.D[dst[a], dst[b]]) > tol:
                raise WorkbenchError(
                    "NOT_ISOMETRY",
                    f"d({domain[a]}, {domain[b]}) is not preserved",
                    {"pair": [str(domain[a]), str(domain[b])]},
                )
    m = len(cfg.ids)
    J = lorentz_signature(m - 1)
    A = embedding.coords[src].T
    B = embedding.coords[dst].T
    source = np.hstack([A, _frame(A, J)])
    target = np.hstack([B, _frame(B, J)])
    M = target @ np.linalg.inv(source)
    return LorentzMap(M)


def bim_translation_length(action: Any, word: Any, lam: Optional[float] = None, n: int = 32) -> float:
    """
    Model translation length of the BIM representation of a tree isometry,
    (d_{2n} - d_n) / n with d_k = arccosh(lambda^{||g^k||}) evaluated in log space.
    """
    lam = BIM_PARAMS["default_lambda"] if lam is None else lam

    def model_distance(k: int) -> float:
        u = action.norm(action.power(word, k)) * math.log(lam)
        if u <= 0:
            return 0.0
        return u + math.log1p(math.sqrt(-math.expm1(-2.0 * u)))

    return (model_distance(2 * n) - model_distance(n)) / n
