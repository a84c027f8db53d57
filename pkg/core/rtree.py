"""
Finite R-trees and the tree construction kits.

An RTree is the geometric realization of a finite weighted tree held in a
networkx graph (edge attribute "length"). Points are vertices or TreePoints
(an edge plus an offset); boundary points of a finite tree are TreeEnds, rays
of infinite length attached beyond a vertex.

Constructions:
    tree_from_metric    realize a finite 0-hyperbolic metric
    cone_build          the cone over a finite ultrametric space
    staple_build        the stapled union of trees along convex subtrees
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Dict, Hashable, Iterable, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from .coarse_geometry import BoundaryPoint
from .config import TOLERANCE_PARAMS
from .errors import WorkbenchError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TreePoint:
    """Point on the edge (u, v) at distance offset from u; a vertex when u == v."""

    u: Hashable
    v: Hashable
    offset: float = 0.0

    @classmethod
    def vertex(cls, u: Hashable) -> "TreePoint":
        return cls(u, u, 0.0)

    @property
    def is_vertex(self) -> bool:
        return self.u == self.v

    def to_dict(self) -> Dict[str, Any]:
        if self.is_vertex:
            return {"vertex": self.u}
        return {"edge": [self.u, self.v], "offset": self.offset}


@dataclass(frozen=True)
class TreeEnd:
    """Boundary point of a finite tree: an infinite ray attached beyond vertex `leaf`."""

    leaf: Hashable

    def to_dict(self) -> Dict[str, Any]:
        return {"end": self.leaf}


class RTree:
    """
    Immutable finite R-tree with exact path metric.

    Args:
        graph: networkx graph whose edges carry a positive "length"
        root: Basepoint vertex (first vertex if omitted)

    Raises:
        WorkbenchError: NOT_TREE_METRIC if the graph is not a tree or has
            non-positive edge lengths
    """

    def __init__(self, graph: nx.Graph, root: Hashable = None):
        if graph.number_of_nodes() == 0 or not nx.is_tree(graph):
            raise WorkbenchError("NOT_TREE_METRIC", "underlying graph must be connected and acyclic")
        for a, b, length in graph.edges(data="length"):
            if length is None or not length > 0:
                raise WorkbenchError("NOT_TREE_METRIC", f"edge ({a}, {b}) needs a positive length (got {length})")
        self.graph = nx.freeze(graph.copy())
        self.root = next(iter(graph.nodes)) if root is None else root
        if self.root not in graph:
            raise WorkbenchError("INVALID_POINT", f"root {self.root!r} is not a vertex")

        self._parent = {self.root: None}
        self._depth = {self.root: 0.0}
        self._level = {self.root: 0}
        for a, b in nx.bfs_edges(graph, self.root):
            self._parent[b] = a
            self._depth[b] = self._depth[a] + graph[a][b]["length"]
            self._level[b] = self._level[a] + 1

    # ------------------------------------------------------------------
    # basic structure

    @property
    def vertices(self) -> List[Hashable]:
        return list(self.graph.nodes)

    @property
    def basepoint(self) -> TreePoint:
        return TreePoint.vertex(self.root)

    def edge_length(self, u: Hashable, v: Hashable) -> float:
        try:
            return self.graph[u][v]["length"]
        except KeyError:
            raise WorkbenchError("INVALID_POINT", f"({u}, {v}) is not an edge")

    def total_length(self) -> float:
        return float(sum(length for _, _, length in self.graph.edges(data="length")))

    def point(self, x: Any) -> TreePoint:
        """Normalize a vertex id or TreePoint, snapping edge endpoints to vertices."""
        if isinstance(x, TreePoint):
            if x.is_vertex:
                if x.u not in self.graph:
                    raise WorkbenchError("INVALID_POINT", f"{x.u!r} is not a vertex")
                return x
            length = self.edge_length(x.u, x.v)
            if x.offset < -1e-15 or x.offset > length + 1e-15:
                raise WorkbenchError("INVALID_POINT", f"offset {x.offset} outside [0, {length}]")
            if x.offset <= 0:
                return TreePoint.vertex(x.u)
            if x.offset >= length:
                return TreePoint.vertex(x.v)
            return x
        if isinstance(x, (TreeEnd, BoundaryPoint)):
            raise WorkbenchError("SPACE_MISMATCH", f"{x!r} is a boundary point")
        if x not in self.graph:
            raise WorkbenchError("INVALID_POINT", f"{x!r} is not a vertex")
        return TreePoint.vertex(x)

    def _anchors(self, p: TreePoint) -> List[Tuple[Hashable, float]]:
        if p.is_vertex:
            return [(p.u, 0.0)]
        length = self.graph[p.u][p.v]["length"]
        return [(p.u, p.offset), (p.v, length - p.offset)]

    # ------------------------------------------------------------------
    # metric

    def vertex_distance(self, a: Hashable, b: Hashable) -> float:
        da, db = self._depth[a], self._depth[b]
        while self._level[a] > self._level[b]:
            a = self._parent[a]
        while self._level[b] > self._level[a]:
            b = self._parent[b]
        while a != b:
            a, b = self._parent[a], self._parent[b]
        return da + db - 2.0 * self._depth[a]

    def distance(self, x: Any, y: Any) -> float:
        p, q = self.point(x), self.point(y)
        if not p.is_vertex and not q.is_vertex and {p.u, p.v} == {q.u, q.v}:
            other = q.offset if q.u == p.u else self.graph[q.u][q.v]["length"] - q.offset
            return abs(p.offset - other)
        return min(
            sp + self.vertex_distance(a, b) + sq
            for a, sp in self._anchors(p)
            for b, sq in self._anchors(q)
        )

    @staticmethod
    def _unwrap(x: Any) -> Any:
        return x.data if isinstance(x, BoundaryPoint) and x.kind == "tree" else x

    def is_boundary(self, x: Any) -> bool:
        return isinstance(self._unwrap(x), TreeEnd)

    def _end_anchor(self, x: Any) -> Any:
        x = self._unwrap(x)
        return TreePoint.vertex(x.leaf) if isinstance(x, TreeEnd) else x

    def boundary_equal(self, xi: Any, eta: Any) -> bool:
        xi, eta = self._unwrap(xi), self._unwrap(eta)
        return isinstance(xi, TreeEnd) and isinstance(eta, TreeEnd) and xi.leaf == eta.leaf

    def end(self, leaf: Hashable) -> TreeEnd:
        if leaf not in self.graph:
            raise WorkbenchError("INVALID_POINT", f"{leaf!r} is not a vertex")
        return TreeEnd(leaf)

    def gromov_product(self, x: Any, y: Any, z: Any) -> float:
        """<x|y>_z; ends are replaced by the vertex their ray is attached to."""
        if self.is_boundary(z):
            raise WorkbenchError("SPACE_MISMATCH", "the base of a Gromov product must be an interior point")
        if self.boundary_equal(x, y):
            return math.inf
        x, y = self._end_anchor(x), self._end_anchor(y)
        return 0.5 * (self.distance(z, x) + self.distance(z, y) - self.distance(x, y))

    def busemann(self, xi: TreeEnd, x: Any, y: Any) -> float:
        anchor = self._end_anchor(xi)
        return self.distance(x, anchor) - self.distance(y, anchor)

    # ------------------------------------------------------------------
    # geodesics

    def _segments(self, p: TreePoint, q: TreePoint) -> List[Tuple[Hashable, Hashable, float, float]]:
        """Geodesic [p, q] as (u, v, start offset, end offset) pieces along edges."""
        if p == q:
            return []
        if not p.is_vertex and not q.is_vertex and {p.u, p.v} == {q.u, q.v}:
            end = q.offset if q.u == p.u else self.graph[q.u][q.v]["length"] - q.offset
            return [(p.u, p.v, p.offset, end)]
        best = min(
            ((sp + self.vertex_distance(a, b) + sq, a, b) for a, sp in self._anchors(p) for b, sq in self._anchors(q)),
            key=lambda item: item[0],
        )
        _, a, b = best
        pieces = []
        if not p.is_vertex:
            pieces.append((p.u, p.v, p.offset, 0.0 if a == p.u else self.graph[p.u][p.v]["length"]))
        path = nx.shortest_path(self.graph, a, b)
        for s, t in zip(path, path[1:]):
            pieces.append((s, t, 0.0, self.graph[s][t]["length"]))
        if not q.is_vertex:
            pieces.append((q.u, q.v, 0.0 if b == q.u else self.graph[q.u][q.v]["length"], q.offset))
        return [piece for piece in pieces if piece[2] != piece[3]]

    def point_along(self, x: Any, y: Any, t: float) -> TreePoint:
        """The point of [x, y] at distance t from x."""
        p, q = self.point(x), self.point(y)
        total = self.distance(p, q)
        if t < -1e-12 or t > total + 1e-12:
            raise WorkbenchError("OUT_OF_RANGE", f"t = {t} outside [0, {total}]")
        remaining = min(max(t, 0.0), total)
        for u, v, start, end in self._segments(p, q):
            span = abs(end - start)
            if remaining <= span:
                offset = start + math.copysign(remaining, end - start)
                return self.point(TreePoint(u, v, offset))
            remaining -= span
        return q

    def geodesic_contains(self, x: Any, y: Any, c: Any) -> bool:
        tol = TOLERANCE_PARAMS["tree"] * max(1.0, self.distance(x, y))
        return abs(self.distance(x, c) + self.distance(c, y) - self.distance(x, y)) <= tol

    # ------------------------------------------------------------------
    # serialization and sampling

    def to_dict(self) -> Dict[str, Any]:
        return {
            "root": self.root,
            "vertices": self.vertices,
            "edges": [{"a": a, "b": b, "len": float(length)} for a, b, length in self.graph.edges(data="length")],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RTree":
        graph = nx.Graph()
        graph.add_nodes_from(data.get("vertices", []))
        for edge in data["edges"]:
            graph.add_edge(edge["a"], edge["b"], length=float(edge["len"]))
        return cls(graph, data.get("root"))

    @classmethod
    def from_edges(cls, edges: Iterable[Tuple[Hashable, Hashable, float]], root: Hashable = None) -> "RTree":
        graph = nx.Graph()
        for a, b, length in edges:
            graph.add_edge(a, b, length=length)
        return cls(graph, root)

    def subdivide(self, x: Any) -> Tuple["RTree", Hashable]:
        """
        The same tree with x promoted to a vertex, and the vertex id of x.
        Edge points get the id "u|v@offset".
        """
        p = self.point(x)
        if p.is_vertex:
            return self, p.u
        name = f"{p.u}|{p.v}@{p.offset:.12g}"
        graph = nx.Graph(self.graph)
        length = graph[p.u][p.v]["length"]
        graph.remove_edge(p.u, p.v)
        graph.add_edge(p.u, name, length=p.offset)
        graph.add_edge(name, p.v, length=length - p.offset)
        return RTree(graph, self.root), name

    def random_point(self, rng: np.random.Generator) -> TreePoint:
        edges = list(self.graph.edges(data="length"))
        if not edges:
            return self.basepoint
        u, v, length = edges[int(rng.integers(len(edges)))]
        return self.point(TreePoint(u, v, float(rng.uniform(0.0, length))))

    def __repr__(self):
        return f"RTree({self.graph.number_of_nodes()} vertices, length {self.total_length():.6g})"


def star_tree(legs: Sequence[float]) -> RTree:
    """Tripod/star with center "c" and leaves "p0", "p1", ..."""
    return RTree.from_edges([("c", f"p{i}", float(length)) for i, length in enumerate(legs)], root="c")


def random_tree(n_vertices: int, rng: np.random.Generator, low: float = 0.1, high: float = 2.0) -> RTree:
    """Random recursive tree on vertices 0..n-1 with uniform edge lengths."""
    graph = nx.Graph()
    graph.add_node(0)
    for k in range(1, n_vertices):
        graph.add_edge(int(rng.integers(k)), k, length=float(rng.uniform(low, high)))
    return RTree(graph, 0)


def triangle_center(tree: RTree, p: Any, q: Any, r: Any) -> TreePoint:
    """
    Center of the geodesic triangle (p, q, r): the point on [p, q] at
    distance <q|r>_p from p. It lies on all three sides.
    """
    p, q, r = tree.point(p), tree.point(q), tree.point(r)
    return tree.point_along(p, q, tree.gromov_product(q, r, p))


# ----------------------------------------------------------------------
# four-point condition


def four_point_defect(d: Callable[[Any, Any], float], x: Any, y: Any, z: Any, w: Any) -> float:
    """Largest minus second largest of the three pair sums; zero for tree metrics."""
    sums = sorted([d(x, y) + d(z, w), d(x, z) + d(y, w), d(x, w) + d(y, z)])
    return sums[2] - sums[1]


def max_four_point_defect(
    D: np.ndarray, rng: Optional[np.random.Generator] = None, samples: int = 10_000, exhaustive_limit: int = 12
) -> float:
    """Maximum four-point defect of a distance matrix (exhaustive for small matrices)."""
    D = np.asarray(D, dtype=float)
    m = D.shape[0]
    d = lambda i, j: D[i, j]
    if m < 4:
        return 0.0
    if m <= exhaustive_limit:
        quads = itertools.combinations(range(m), 4)
    else:
        rng = rng or np.random.default_rng(0)
        quads = (tuple(rng.choice(m, 4, replace=False)) for _ in range(samples))
    return max(four_point_defect(d, *quad) for quad in quads)


def is_tree_metric(D: np.ndarray, tol: Optional[float] = None, rng: Optional[np.random.Generator] = None) -> bool:
    D = np.asarray(D, dtype=float)
    tol = TOLERANCE_PARAMS["tree"] if tol is None else tol
    scale = max(1.0, float(D.max())) if D.size else 1.0
    return max_four_point_defect(D, rng) <= tol * scale


def tree_from_metric(ids: Sequence[Hashable], D: np.ndarray, tol: Optional[float] = None) -> RTree:
    """
    Realize a finite tree metric as a weighted tree.

    Points are attached one at a time at the branch point of maximal Gromov
    product, subdividing edges with Steiner vertices "s0", "s1", ...

    Raises:
        WorkbenchError: NOT_TREE_METRIC if D is not realizable by a tree
    """
    D = np.asarray(D, dtype=float)
    m = len(ids)
    if D.shape != (m, m) or m == 0:
        raise WorkbenchError("NOT_TREE_METRIC", f"distance matrix shape {D.shape} does not match {m} ids")
    tol = TOLERANCE_PARAMS["tree"] if tol is None else tol
    scale = max(1.0, float(D.max()))
    if not np.allclose(D, D.T, atol=tol * scale) or np.any(np.abs(np.diag(D)) > tol * scale):
        raise WorkbenchError("NOT_TREE_METRIC", "distance matrix must be symmetric with zero diagonal")

    graph = nx.Graph()
    graph.add_node(ids[0])
    steiner = itertools.count()
    taken = set(ids)

    def new_label():
        while True:
            label = f"s{next(steiner)}"
            if label not in taken:
                taken.add(label)
                return label

    for k in range(1, m):
        x = ids[k]
        if D[0, k] <= tol * scale:
            raise WorkbenchError("NOT_TREE_METRIC", f"distinct points {ids[0]!r} and {x!r} at distance 0")
        tree = RTree(graph, ids[0]) if graph.number_of_edges() else None
        best_j, best_product = 0, 0.0
        for j in range(1, k):
            product = 0.5 * (D[0, k] + D[0, j] - D[k, j])
            if product > best_product:
                best_j, best_product = j, product
        pendant = D[0, k] - best_product
        if tree is None:
            graph.add_edge(ids[0], x, length=float(D[0, k]))
            continue
        anchor = tree.point_along(ids[0], ids[best_j], best_product)
        if anchor.is_vertex:
            target = anchor.u
        else:
            target = x if pendant <= tol * scale else new_label()
            length = graph[anchor.u][anchor.v]["length"]
            graph.remove_edge(anchor.u, anchor.v)
            graph.add_edge(anchor.u, target, length=anchor.offset)
            graph.add_edge(target, anchor.v, length=length - anchor.offset)
        if target == x:
            continue
        if pendant <= tol * scale:
            if target in ids:
                raise WorkbenchError("NOT_TREE_METRIC", f"{x!r} coincides with {target!r}")
            nx.relabel_nodes(graph, {target: x}, copy=False)
        else:
            graph.add_edge(target, x, length=float(pendant))

    tree = RTree(graph, ids[0])
    worst = max(
        (abs(tree.distance(ids[i], ids[j]) - D[i, j]) for i in range(m) for j in range(i + 1, m)),
        default=0.0,
    )
    if worst > max(tol, 1e-9) * scale:
        raise WorkbenchError("NOT_TREE_METRIC", f"tree realization misses the metric by {worst:.3e}", {"residual": worst})
    logger.debug(f"Realized {m} points as a tree with {graph.number_of_nodes()} vertices")
    return tree


# ----------------------------------------------------------------------
# cone construction


class UltrametricSpace:
    """
    Finite ultrametric space (ids, D).

    Raises:
        WorkbenchError: NOT_ULTRAMETRIC
    """

    def __init__(self, ids: Sequence[Hashable], D: Any):
        self.ids = list(ids)
        self.D = np.asarray(D, dtype=float)
        m = len(self.ids)
        if m == 0 or self.D.shape != (m, m):
            raise WorkbenchError("NOT_ULTRAMETRIC", f"matrix shape {self.D.shape} does not match {m} points")
        if len(set(self.ids)) != m:
            raise WorkbenchError("NOT_ULTRAMETRIC", "point ids must be distinct")
        if not np.array_equal(self.D, self.D.T) or np.any(np.diag(self.D) != 0):
            raise WorkbenchError("NOT_ULTRAMETRIC", "D must be symmetric with zero diagonal")
        off = self.D[~np.eye(m, dtype=bool)]
        if off.size and off.min() <= 0:
            raise WorkbenchError("NOT_ULTRAMETRIC", "D(x, y) = 0 for distinct points")
        for i, j, k in itertools.permutations(range(m), 3):
            if self.D[i, k] > max(self.D[i, j], self.D[j, k]) * (1 + 1e-12):
                raise WorkbenchError(
                    "NOT_ULTRAMETRIC",
                    f"D({self.ids[i]}, {self.ids[k]}) exceeds max(D({self.ids[i]}, {self.ids[j]}), D({self.ids[j]}, {self.ids[k]}))",
                    {"triple": [self.ids[i], self.ids[j], self.ids[k]]},
                )
        self._index = {z: i for i, z in enumerate(self.ids)}

    def dist(self, z1: Hashable, z2: Hashable) -> float:
        return float(self.D[self._index[z1], self._index[z2]])

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "UltrametricSpace":
        return cls(data["points"], data["D"])


def cone_distance(r1: float, r2: float, D: float) -> float:
    """Cone metric log((r1^2 v r2^2 v D^2) / (r1 r2))."""
    return math.log(max(r1 * r1, r2 * r2, D * D) / (r1 * r2))


@dataclass
class ConeTree:
    """
    Truncated cone over a finite ultrametric space.

    Every z spans a vertical ray of heights u = log r in [u_min, u_max];
    rays of z1, z2 merge at height log D(z1, z2). The leaf ends are the
    boundary points iota(z), the top end is infinity.
    """

    space: UltrametricSpace
    tree: RTree
    heights: Dict[Hashable, float]
    leaves: Dict[Hashable, Hashable]
    top: Hashable
    u_min: float
    u_max: float
    _up: Dict[Hashable, Hashable] = field(default_factory=dict, repr=False)

    def iota(self, z: Hashable) -> TreeEnd:
        return TreeEnd(self.leaves[z])

    @property
    def infinity(self) -> TreeEnd:
        return TreeEnd(self.top)

    def cone_point(self, z: Hashable, r: float) -> TreePoint:
        """The point <z, r> of the cone."""
        if r <= 0:
            raise WorkbenchError("OUT_OF_RANGE", f"cone radius must be positive (got {r})")
        u = math.log(r)
        if u < self.u_min or u > self.u_max:
            raise WorkbenchError("OUT_OF_RANGE", f"log r = {u} outside the truncation [{self.u_min}, {self.u_max}]")
        node = self.leaves[z]
        while node != self.top:
            parent = self._up[node]
            if u <= self.heights[parent]:
                return self.tree.point(TreePoint(node, parent, u - self.heights[node]))
            node = parent
        return TreePoint.vertex(self.top)

    def height(self, p: TreePoint) -> float:
        """Height u = log r of a cone point."""
        return self.heights[self.top] - self.tree.distance(p, self.top)

    def basepoint(self, z0: Optional[Hashable] = None) -> TreePoint:
        return self.cone_point(self.space.ids[0] if z0 is None else z0, 1.0)


def cone_build(Z: UltrametricSpace) -> ConeTree:
    """
    Build the cone over a finite ultrametric space as a single-linkage
    dendrogram with merge heights log D.
    """
    ids = Z.ids
    m = len(ids)
    logs = [math.log(Z.D[i, j]) for i in range(m) for j in range(i + 1, m)]
    u_min = min([0.0] + logs) - 1.0
    u_max = max([0.0] + logs) + 1.0

    graph = nx.Graph()
    heights: Dict[Hashable, float] = {}
    up: Dict[Hashable, Hashable] = {}
    leaves = {}
    clusters: Dict[int, Hashable] = {}
    for i, z in enumerate(ids):
        leaves[z] = f"z:{z}"
        heights[leaves[z]] = u_min
        clusters[i] = leaves[z]
    owner = list(range(m))

    for level, value in enumerate(sorted(set(Z.D[np.triu_indices(m, 1)].tolist()))):
        merging = nx.Graph()
        for i in range(m):
            for j in range(i + 1, m):
                if Z.D[i, j] == value and owner[i] != owner[j]:
                    merging.add_edge(owner[i], owner[j])
        for group in nx.connected_components(merging):
            node = f"n{level}:{min(group)}"
            heights[node] = math.log(value)
            for c in group:
                child = clusters.pop(c)
                graph.add_edge(child, node, length=heights[node] - heights[child])
                up[child] = node
            head = min(group)
            clusters[head] = node
            owner = [head if o in group else o for o in owner]

    (last,) = clusters.values()
    top = "top"
    heights[top] = u_max
    graph.add_edge(last, top, length=u_max - heights[last])
    up[last] = top
    tree = RTree(graph, top)
    logger.info(f"Cone over {m} points: {graph.number_of_nodes()} vertices, heights [{u_min:.4g}, {u_max:.4g}]")
    return ConeTree(Z, tree, heights, leaves, top, u_min, u_max, up)


# ----------------------------------------------------------------------
# stapled unions


@dataclass
class StaplePlan:
    """
    Trees X_v indexed by the vertices of a staple graph, glued along convex
    vertex sets A_vw by vertex bijections phi_vw: A_vw -> A_wv.

    Staples given through from_pieces or from_dict may pair TreePoints
    inside edges; the pieces are then subdivided so that every endpoint of
    A_vw is a vertex. A_vw is the set of paired points, so a staple along
    a segment lists both endpoints and every vertex between them.
    """

    graph: nx.Graph
    pieces: Dict[Hashable, RTree]
    A: Dict[Tuple[Hashable, Hashable], frozenset]
    phi: Dict[Tuple[Hashable, Hashable], Dict[Hashable, Hashable]]

    @classmethod
    def from_pieces(cls, pieces: Dict[Hashable, RTree],
                    staples: Iterable[Tuple[Hashable, Hashable, Sequence[Tuple[Any, Any]]]]) -> "StaplePlan":
        """Plan from (v, w, [(x, y), ...]) staples with x in X_v and y in X_w vertices or TreePoints."""
        pieces = dict(pieces)

        def pin(v: Hashable, x: Any) -> Hashable:
            tree = pieces[v]
            if isinstance(x, TreePoint) and not x.is_vertex and not tree.graph.has_edge(x.u, x.v):
                # the edge was split by an earlier point
                x = tree.point_along(x.u, x.v, x.offset)
            pieces[v], name = tree.subdivide(x)
            return name

        graph = nx.Graph()
        graph.add_nodes_from(pieces)
        A, phi = {}, {}
        for v, w, pairs in staples:
            graph.add_edge(v, w)
            forward = {pin(v, x): pin(w, y) for x, y in pairs}
            A[(v, w)] = frozenset(forward)
            A[(w, v)] = frozenset(forward.values())
            phi[(v, w)] = forward
            phi[(w, v)] = {b: a for a, b in forward.items()}
        return cls(graph, pieces, A, phi)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "StaplePlan":
        def parse(x: Any) -> Any:
            if isinstance(x, dict) and "edge" in x:
                return TreePoint(x["edge"][0], x["edge"][1], float(x.get("offset", 0.0)))
            return x

        pieces = {name: RTree.from_dict(tree) for name, tree in data["pieces"].items()}
        staples = [(s["v"], s["w"], [(parse(a), parse(b)) for a, b in s["map"]]) for s in data["staples"]]
        return cls.from_pieces(pieces, staples)

    def to_dict(self) -> Dict[str, Any]:
        staples = []
        for v, w in self.graph.edges:
            staples.append({"v": v, "w": w, "map": [[a, b] for a, b in self.phi[(v, w)].items()]})
        return {"pieces": {name: tree.to_dict() for name, tree in self.pieces.items()}, "staples": staples}


@dataclass
class StapledTree:
    """Result of staple_build: the quotient tree and the projections pi_v."""

    plan: StaplePlan
    tree: RTree
    projections: Dict[Hashable, Dict[Hashable, Hashable]]

    def project(self, v: Hashable, x: Any) -> TreePoint:
        """pi_v applied to a vertex or edge point of X_v."""
        p = self.plan.pieces[v].point(x)
        pi = self.projections[v]
        if p.is_vertex:
            return TreePoint.vertex(pi[p.u])
        return self.tree.point(TreePoint(pi[p.u], pi[p.v], p.offset))

    def distance(self, v: Hashable, x: Any, w: Hashable, y: Any) -> float:
        return self.tree.distance(self.project(v, x), self.project(w, y))


def _check_staple(plan: StaplePlan, v: Hashable, w: Hashable):
    for key in ((v, w), (w, v)):
        if key not in plan.A or key not in plan.phi:
            raise WorkbenchError("CONSISTENCY_VIOLATION", f"staple {key} has no set or map", {"staple": list(key)})
    Xv, Xw = plan.pieces[v], plan.pieces[w]
    A, B = plan.A[(v, w)], plan.A[(w, v)]
    for piece, S, key in ((Xv, A, (v, w)), (Xw, B, (w, v))):
        if not S or any(x not in piece.graph for x in S):
            raise WorkbenchError("NOT_CONVEX", f"A{key} must be a nonempty set of vertices")
        if not nx.is_connected(piece.graph.subgraph(S)):
            raise WorkbenchError("NOT_CONVEX", f"A{key} does not span a subtree", {"staple": list(key)})
    forward, backward = plan.phi[(v, w)], plan.phi[(w, v)]
    if set(forward) != set(A) or set(forward.values()) != set(B) or len(set(forward.values())) != len(A):
        raise WorkbenchError("NOT_ISOMETRY", f"phi({v}, {w}) is not a bijection A({v}, {w}) -> A({w}, {v})")
    if any(backward.get(b) != a for a, b in forward.items()):
        raise WorkbenchError("NOT_ISOMETRY", f"phi({w}, {v}) is not the inverse of phi({v}, {w})")
    sub_v, sub_w = Xv.graph.subgraph(A), Xw.graph.subgraph(B)
    for a1, a2, length in sub_v.edges(data="length"):
        b1, b2 = forward[a1], forward[a2]
        if not sub_w.has_edge(b1, b2) or abs(sub_w[b1][b2]["length"] - length) > TOLERANCE_PARAMS["exact"]:
            raise WorkbenchError("NOT_ISOMETRY", f"phi({v}, {w}) does not preserve the edge ({a1}, {a2})")


def _check_cycles(plan: StaplePlan):
    """Every cycle of the staple graph must be filled by triangles (block graph)."""
    for component in nx.biconnected_components(plan.graph):
        k = len(component)
        sub = plan.graph.subgraph(component)
        if k > 2 and sub.number_of_edges() != k * (k - 1) // 2:
            raise WorkbenchError(
                "CYCLE_NOT_CONTRACTIBLE",
                f"cycle through {sorted(map(str, component))} is not filled by 3-cycles",
                {"component": sorted(map(str, component))},
            )


def check_consistency(plan: StaplePlan):
    """
    Exhaustive consistency check over all 3-cycles (u, v, w) and all points
    z of A_uv intersect A_uw: the intersection is nonempty, phi_uw(z) lies in
    A_wv and phi_wv(phi_uw(z)) = phi_uv(z).

    Raises:
        WorkbenchError: CONSISTENCY_VIOLATION with the cycle and point
    """
    triangles = [
        cycle
        for cycle in itertools.permutations(plan.graph.nodes, 3)
        if all(plan.graph.has_edge(a, b) for a, b in zip(cycle, cycle[1:] + cycle[:1]))
    ]
    for u, v, w in triangles:
        overlap = plan.A[(u, v)] & plan.A[(u, w)]
        if not overlap:
            raise WorkbenchError(
                "CONSISTENCY_VIOLATION", f"A({u},{v}) and A({u},{w}) are disjoint", {"cycle": [u, v, w], "point": None}
            )
        for z in overlap:
            image = plan.phi[(u, w)][z]
            if image not in plan.A[(w, v)]:
                raise WorkbenchError(
                    "CONSISTENCY_VIOLATION",
                    f"phi({u},{w})({z}) = {image} is not in A({w},{v})",
                    {"cycle": [u, v, w], "point": z},
                )
            if plan.phi[(w, v)][image] != plan.phi[(u, v)][z]:
                raise WorkbenchError(
                    "CONSISTENCY_VIOLATION",
                    f"phi({w},{v}) o phi({u},{w}) differs from phi({u},{v}) at {z}",
                    {"cycle": [u, v, w], "point": z},
                )


def staple_build(plan: StaplePlan) -> StapledTree:
    """
    Stapled union of the plan's trees.

    Raises:
        WorkbenchError: CYCLE_NOT_CONTRACTIBLE, CONSISTENCY_VIOLATION,
            NOT_CONVEX, NOT_ISOMETRY
    """
    if not nx.is_connected(plan.graph):
        raise WorkbenchError("CONSISTENCY_VIOLATION", "staple graph must be connected")
    for v, w in plan.graph.edges:
        _check_staple(plan, v, w)
    _check_cycles(plan)
    check_consistency(plan)

    classes = nx.utils.UnionFind()
    for v, piece in plan.pieces.items():
        for x in piece.vertices:
            classes[(v, x)]
    for (v, w), mapping in plan.phi.items():
        for x, y in mapping.items():
            classes.union((v, x), (w, y))

    order = {v: i for i, v in enumerate(plan.pieces)}
    members: Dict[Any, List[Tuple[Hashable, Hashable]]] = {}
    for element in list(classes):
        members.setdefault(classes[element], []).append(element)
    label = {}
    for group in members.values():
        v, x = min(group, key=lambda item: (order[item[0]], str(item[1])))
        name = f"{v}:{x}"
        for element in group:
            label[element] = name

    graph = nx.Graph()
    graph.add_nodes_from(label.values())
    for v, piece in plan.pieces.items():
        for a, b, length in piece.graph.edges(data="length"):
            s, t = label[(v, a)], label[(v, b)]
            if s == t:
                raise WorkbenchError("CONSISTENCY_VIOLATION", f"edge ({a}, {b}) of {v} collapses", {"point": a})
            if graph.has_edge(s, t):
                if abs(graph[s][t]["length"] - length) > TOLERANCE_PARAMS["exact"]:
                    raise WorkbenchError("CONSISTENCY_VIOLATION", f"glued edge ({s}, {t}) has two lengths")
                continue
            graph.add_edge(s, t, length=length)
    if not nx.is_tree(graph):
        raise WorkbenchError("CONSISTENCY_VIOLATION", "the glued space is not a tree")

    first = next(iter(plan.pieces))
    tree = RTree(graph, label[(first, plan.pieces[first].root)])
    projections = {v: {x: label[(v, x)] for x in piece.vertices} for v, piece in plan.pieces.items()}
    logger.info(f"Stapled {len(plan.pieces)} trees into {tree!r}")
    return StapledTree(plan, tree, projections)


def _nearest_in(piece: RTree, S: frozenset, p: TreePoint) -> TreePoint:
    """Nearest-point projection onto the convex subtree spanned by S."""
    if not p.is_vertex and p.u in S and p.v in S:
        return p
    best = min(S, key=lambda s: (piece.distance(p, s), str(s)))
    return TreePoint.vertex(best)


def _transport(plan: StaplePlan, v: Hashable, w: Hashable, p: TreePoint) -> TreePoint:
    mapping = plan.phi[(v, w)]
    if p.is_vertex:
        return TreePoint.vertex(mapping[p.u])
    return plan.pieces[w].point(TreePoint(mapping[p.u], mapping[p.v], p.offset))


def staple_recipe_distance(plan: StaplePlan, v: Hashable, x: Any, w: Hashable, y: Any) -> float:
    """
    Distance in the stapled union computed along geodesics of the staple
    graph: project onto each staple set in turn, pass across with phi and
    add up the distances inside the pieces.
    """
    best = math.inf
    for path in nx.all_shortest_paths(plan.graph, v, w):
        current = plan.pieces[v].point(x)
        total = 0.0
        for a, b in zip(path, path[1:]):
            piece = plan.pieces[a]
            landing = _nearest_in(piece, plan.A[(a, b)], current)
            total += piece.distance(current, landing)
            current = _transport(plan, a, b, landing)
        total += plan.pieces[w].distance(current, y)
        best = min(best, total)
    return best


def staple_bruteforce_distance(plan: StaplePlan, v: Hashable, x: Hashable, w: Hashable, y: Hashable) -> float:
    """Dijkstra over the disjoint union of the pieces with zero-length staple edges."""
    graph = nx.Graph()
    for name, piece in plan.pieces.items():
        graph.add_nodes_from((name, node) for node in piece.vertices)
        for a, b, length in piece.graph.edges(data="length"):
            graph.add_edge((name, a), (name, b), length=length)
    for (a, b), mapping in plan.phi.items():
        for s, t in mapping.items():
            graph.add_edge((a, s), (b, t), length=0.0)
    return nx.dijkstra_path_length(graph, (v, x), (w, y), weight="length")


# ----------------------------------------------------------------------
# orbital counting data


@dataclass(frozen=True)
class CountingSpec:
    """
    Thresholds lambda_n and multiplicities N_n of a counting function
    f(R) = prod_{lambda_n <= R} N_n, optionally continued by a tail
    ("arithmetic", step, N) or ("geometric", ratio, N).
    """

    lambdas: Tuple[float, ...]
    mults: Tuple[int, ...]
    tail: Optional[Tuple[str, float, int]] = None

    def __post_init__(self):
        object.__setattr__(self, "lambdas", tuple(float(v) for v in self.lambdas))
        object.__setattr__(self, "mults", tuple(int(v) for v in self.mults))
        if len(self.lambdas) != len(self.mults):
            raise WorkbenchError("DIVISIBILITY_VIOLATION", "thresholds and multiplicities differ in length")
        if not self.lambdas and self.tail is None:
            raise WorkbenchError("DIVISIBILITY_VIOLATION", "a counting spec needs at least one level")
        if any(v <= 0 for v in self.lambdas) or any(b <= a for a, b in zip(self.lambdas, self.lambdas[1:])):
            raise WorkbenchError("DIVISIBILITY_VIOLATION", "thresholds must be positive and increasing")
        if any(n < 2 for n in self.mults):
            raise WorkbenchError("DIVISIBILITY_VIOLATION", "multiplicities must be integers >= 2")
        if self.tail is not None:
            kind, rate, n = self.tail
            object.__setattr__(self, "tail", (str(kind), float(rate), int(n)))
            if kind not in ("arithmetic", "geometric") or int(n) < 2:
                raise WorkbenchError("DIVISIBILITY_VIOLATION", f"bad tail {self.tail}")
            if (kind == "arithmetic" and rate <= 0) or (kind == "geometric" and rate <= 1):
                raise WorkbenchError("DIVISIBILITY_VIOLATION", f"tail rate {rate} does not increase thresholds")
            if kind == "geometric" and not self.lambdas:
                raise WorkbenchError("DIVISIBILITY_VIOLATION", "a geometric tail needs a first threshold")

    def levels(self, R: float) -> List[Tuple[float, int]]:
        """All (lambda_n, N_n) with lambda_n <= R."""
        out = [(lam, n) for lam, n in zip(self.lambdas, self.mults) if lam <= R]
        if self.tail is None:
            return out
        kind, rate, n = self.tail
        lam = self.lambdas[-1] if self.lambdas else 0.0
        while True:
            lam = lam + rate if kind == "arithmetic" else lam * rate
            if lam > R:
                return out
            out.append((lam, n))

    def level(self, index: int) -> Tuple[float, int]:
        """(lambda_index, N_index), 0-based, following the tail past the listed levels."""
        if index < len(self.lambdas):
            return self.lambdas[index], self.mults[index]
        if self.tail is None:
            raise WorkbenchError("OUT_OF_RANGE", f"level {index} beyond a finite spec")
        kind, rate, n = self.tail
        steps = index - len(self.lambdas) + 1
        base = self.lambdas[-1] if self.lambdas else 0.0
        return (base + steps * rate if kind == "arithmetic" else base * rate ** steps), n

    def counting(self, R: float) -> int:
        """f(R), the number of group elements of norm at most R."""
        return math.prod(n for _, n in self.levels(R))

    @property
    def infinite(self) -> bool:
        return self.tail is not None

    def to_dict(self) -> Dict[str, Any]:
        return {"lambdas": list(self.lambdas), "mults": list(self.mults), "tail": list(self.tail) if self.tail else None}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CountingSpec":
        if "text" in data:
            return cls.parse(data["text"])
        tail = data.get("tail")
        return cls(tuple(data["lambdas"]), tuple(data["mults"]), tuple(tail) if tail else None)

    @classmethod
    def parse(cls, text: str) -> "CountingSpec":
        """
        Read the "lambda N" DSL: one level per line, '#' comments, and an
        optional line "tail arithmetic|geometric RATE N".
        """
        lambdas, mults, tail = [], [], None
        for number, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                if parts[0] == "tail":
                    tail = (parts[1], float(Fraction(parts[2])), int(parts[3]))
                elif len(parts) == 2:
                    lambdas.append(float(Fraction(parts[0])))
                    mults.append(int(parts[1]))
                else:
                    raise ValueError(line)
            except (ValueError, IndexError):
                raise WorkbenchError("DIVISIBILITY_VIOLATION", f"cannot parse counting line {number}: {raw!r}")
        return cls(tuple(lambdas), tuple(mults), tail)

    @classmethod
    def from_counting_function(cls, samples: Sequence[Tuple[float, int]]) -> "CountingSpec":
        """
        Recover the levels from values f(R_k) at increasing radii R_k.

        Raises:
            WorkbenchError: DIVISIBILITY_VIOLATION if some f(R_k) does not
                divide its successor
        """
        lambdas, mults = [], []
        previous = 1
        for R, value in sorted(samples):
            value = int(value)
            if value < previous or value % previous:
                raise WorkbenchError(
                    "DIVISIBILITY_VIOLATION",
                    f"f({R}) = {value} is not a multiple of the previous value {previous}",
                    {"radius": R, "value": value, "previous": previous},
                )
            if value > previous:
                lambdas.append(float(R))
                mults.append(value // previous)
            previous = value
        return cls(tuple(lambdas), tuple(mults))
