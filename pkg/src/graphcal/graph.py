"""Calibration graph: weighted vertices/edges, spanning tree, loop planning.

Vertices are sensor/actuator frames; undirected edges describe how the
relative pose between two frames is obtained:

* ``measured_kinematic`` / ``measured_vision`` -- observed per configuration,
* ``unknown_constant``   -- rigid, unknown, the calibration targets,
* ``forbidden``          -- never usable (absent edges behave the same).

Edge attractiveness phi lies in (0, 1]; lower is better.  A spanning tree of
minimal total phi picks the calibration order, and each unknown edge gets a
closing loop found by cheapest-path search.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    Disconnected,
    NoLoop,
    NonPositiveEta,
    NotSymmetric,
    UncoverableEdge,
)

VERTEX_KINDS = frozenset(
    {"robot_base", "robot_flange", "eye_in_hand_camera", "eye_to_hand_camera"}
)
# Frames that do not move between configurations: usable as world anchors.
STATIC_KINDS = frozenset({"robot_base", "eye_to_hand_camera"})

EDGE_KINDS = frozenset(
    {"measured_kinematic", "measured_vision", "unknown_constant", "forbidden"}
)
MEASURED_KINDS = frozenset({"measured_kinematic", "measured_vision"})

ETA_FLOOR = 1e-12


def eta_from_covariance(cov) -> float:
    """Noise level of a vertex: largest eigenvalue of its 3x3 measurement covariance."""
    c = np.asarray(cov, dtype=float)
    if c.shape != (3, 3):
        raise ValueError(f"covariance must be 3x3, got shape {c.shape}")
    if float(np.max(np.abs(c - c.T))) > 1e-9:
        raise NotSymmetric("covariance matrix is not symmetric")
    top = float(np.linalg.eigvalsh(c)[-1])
    return max(top, ETA_FLOOR)


def edge_weight(eta_i: float, eta_j: float, n_measurements: int, distance: float = 0.0) -> float:
    """Attractiveness phi in (0, 1] of an edge; lower phi wins planning.

    More measurements shrink phi.  Very quiet vertices (small eta) blow up the
    1/eta terms and also shrink phi.  The distance term is additive inside the
    log, so physically distant pairs come out *more* attractive -- that is the
    published behaviour and is kept verbatim.
    """
    if eta_i <= 0.0 or eta_j <= 0.0:
        raise NonPositiveEta(f"eta must be positive, got {eta_i!r}, {eta_j!r}")
    if n_measurements < 0:
        raise ValueError(f"n_measurements must be >= 0, got {n_measurements!r}")
    if distance < 0.0:
        raise ValueError(f"distance must be >= 0, got {distance!r}")
    arg = n_measurements * (1.0 / eta_i + 1.0 / eta_j + distance)
    return 1.0 / (math.log(arg + 1.0) + 1.0)


@dataclass(frozen=True)
class Vertex:
    id: str
    kind: str = "robot_base"
    eta: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in VERTEX_KINDS:
            raise ValueError(f"unknown vertex kind {self.kind!r}")
        if self.eta <= 0.0:
            raise NonPositiveEta(f"vertex {self.id!r}: eta must be positive")


@dataclass
class Edge:
    """Undirected edge; ``from_id -> to_id`` fixes the stored transform direction."""

    from_id: str
    to_id: str
    kind: str
    n_measurements: int = 0
    distance: float = 0.0
    noise_scale: float = 1.0

    def __post_init__(self) -> None:
        if self.from_id == self.to_id:
            raise ValueError(f"self-loop on {self.from_id!r}")
        if self.kind not in EDGE_KINDS:
            raise ValueError(f"unknown edge kind {self.kind!r}")
        if self.n_measurements < 0:
            raise ValueError("n_measurements must be >= 0")
        if self.kind not in MEASURED_KINDS and self.n_measurements != 0:
            raise ValueError(f"{self.kind} edge {self.key!r} cannot carry measurements")
        if self.distance < 0.0:
            raise ValueError("distance must be >= 0")
        if self.noise_scale <= 0.0:
            raise ValueError("noise_scale must be positive")

    @property
    def key(self) -> tuple[str, str]:
        a, b = self.from_id, self.to_id
        return (a, b) if a < b else (b, a)

    @property
    def measured(self) -> bool:
        return self.kind in MEASURED_KINDS


class CalibrationGraph:
    """Undirected multigraph-free container keyed by unordered vertex pairs."""

    def __init__(self) -> None:
        self._vertices: dict[str, Vertex] = {}
        self._edges: dict[tuple[str, str], Edge] = {}

    # --- construction -------------------------------------------------------

    def add_vertex(self, vertex: Vertex) -> None:
        if vertex.id in self._vertices:
            raise ValueError(f"duplicate vertex {vertex.id!r}")
        self._vertices[vertex.id] = vertex

    def add_edge(self, edge: Edge) -> None:
        for vid in (edge.from_id, edge.to_id):
            if vid not in self._vertices:
                raise ValueError(f"edge references unknown vertex {vid!r}")
        if edge.key in self._edges:
            raise ValueError(f"duplicate edge {edge.key!r}")
        self._edges[edge.key] = edge

    # --- access ------------------------------------------------------------

    @property
    def vertex_ids(self) -> list[str]:
        return sorted(self._vertices)

    def vertex(self, vid: str) -> Vertex:
        return self._vertices[vid]

    @property
    def edges(self) -> list[Edge]:
        return [self._edges[k] for k in sorted(self._edges)]

    def edge_between(self, a: str, b: str) -> Edge | None:
        return self._edges.get((a, b) if a < b else (b, a))

    def usable_edges(self) -> list[Edge]:
        return [e for e in self.edges if e.kind != "forbidden"]

    def unknown_edges(self) -> list[Edge]:
        return [e for e in self.edges if e.kind == "unknown_constant"]

    def neighbors(self, vid: str) -> list[tuple[str, Edge]]:
        """Usable (non-forbidden) neighbors of ``vid``, sorted by neighbor id."""
        out = []
        for edge in self._edges.values():
            if edge.kind == "forbidden":
                continue
            if edge.from_id == vid:
                out.append((edge.to_id, edge))
            elif edge.to_id == vid:
                out.append((edge.from_id, edge))
        out.sort(key=lambda pair: pair[0])
        return out

    def weight(self, edge: Edge) -> float:
        """phi of an edge.  A per-edge noise scale s inflates both endpoint
        noise levels by s^2, so degraded edges look less attractive."""
        s2 = edge.noise_scale * edge.noise_scale
        return edge_weight(
            self.vertex(edge.from_id).eta * s2,
            self.vertex(edge.to_id).eta * s2,
            edge.n_measurements,
            edge.distance,
        )


@dataclass
class SpanningTree:
    """Rooted spanning tree over the usable edges of a calibration graph."""

    root: str
    # child id -> (parent id, connecting edge)
    parents: dict[str, tuple[str, Edge]]
    # parent id -> [(phi, child id, edge)], ascending
    children: dict[str, list[tuple[float, str, Edge]]]
    edges: list[Edge] = field(default_factory=list)

    @property
    def edge_keys(self) -> frozenset[tuple[str, str]]:
        return frozenset(e.key for e in self.edges)

    def contains(self, edge: Edge) -> bool:
        return edge.key in self.edge_keys

    def path_to_root(self, vid: str) -> list[tuple[str, str, Edge]]:
        """Edges (child, parent, edge) climbing from ``vid`` to the root."""
        out = []
        while vid != self.root:
            parent, edge = self.parents[vid]
            out.append((vid, parent, edge))
            vid = parent
        return out

    def sequence(self) -> list[tuple[str, str, Edge]]:
        """Depth-first preorder of tree edges as (parent, child, edge).

        At each vertex the cheapest child edge is explored first; equal phi
        breaks on child id, so the order is fully deterministic.
        """
        out: list[tuple[str, str, Edge]] = []
        stack: list[tuple[str, str, Edge]] = []

        def push_children(vid: str) -> None:
            kids = sorted(self.children.get(vid, []), key=lambda t: (t[0], t[1]))
            for phi, child, edge in reversed(kids):
                stack.append((vid, child, edge))

        push_children(self.root)
        while stack:
            parent, child, edge = stack.pop()
            out.append((parent, child, edge))
            push_children(child)
        return out


def minimum_spanning_tree(graph: CalibrationGraph, root: str | None = None) -> SpanningTree:
    """Prim's algorithm over usable edges, minimizing total phi.

    Ties break lexicographically on (phi, tree-side id, new id), making the
    result unique and independent of dict ordering.
    """
    ids = graph.vertex_ids
    if not ids:
        raise Disconnected("graph has no vertices")
    start = root if root is not None else ids[0]
    if start not in ids:
        raise ValueError(f"unknown root {start!r}")

    visited = {start}
    parents: dict[str, tuple[str, Edge]] = {}
    children: dict[str, list[tuple[float, str, Edge]]] = {}
    tree_edges: list[Edge] = []
    heap: list[tuple[float, str, str, Edge]] = []

    def push_frontier(vid: str) -> None:
        for other, edge in graph.neighbors(vid):
            if other not in visited:
                heapq.heappush(heap, (graph.weight(edge), vid, other, edge))

    push_frontier(start)
    while heap:
        phi, tree_side, new_side, edge = heapq.heappop(heap)
        if new_side in visited:
            continue
        visited.add(new_side)
        parents[new_side] = (tree_side, edge)
        children.setdefault(tree_side, []).append((phi, new_side, edge))
        tree_edges.append(edge)
        push_frontier(new_side)

    missing = sorted(set(ids) - visited)
    if missing:
        raise Disconnected(f"unreachable vertices: {missing}")
    return SpanningTree(root=start, parents=parents, children=children, edges=tree_edges)


def calibration_sequence(tree: SpanningTree) -> list[tuple[str, str, Edge]]:
    """Measurement order for the tree edges: depth-first preorder from the root."""
    return tree.sequence()


@dataclass(frozen=True)
class LoopStep:
    """One traversal step; ``reverse`` means the edge is walked to->from."""

    edge: Edge
    reverse: bool

    @property
    def start(self) -> str:
        return self.edge.to_id if self.reverse else self.edge.from_id

    @property
    def end(self) -> str:
        return self.edge.from_id if self.reverse else self.edge.to_id


@dataclass(frozen=True)
class CalibrationLoop:
    """Closed cycle of steps whose composed transform should be identity.

    Steps trace a path from the covered (target) edge's tail to its head; the
    final step walks the target edge itself in reverse, closing the cycle.
    """

    steps: tuple[LoopStep, ...]
    omega: float
    target_key: tuple[str, str]

    @property
    def edge_count(self) -> int:
        return len(self.steps)

    def vertex_cycle(self) -> list[str]:
        cycle = [self.steps[0].start]
        for step in self.steps:
            cycle.append(step.end)
        return cycle


def loop_weight(graph: CalibrationGraph, edges) -> float:
    """Loop cost omega: sum of 1/phi, so loops through noisy edges weigh more."""
    return sum(1.0 / graph.weight(e) for e in edges)


def _steps_from_path(path: list[str], graph: CalibrationGraph) -> list[LoopStep]:
    steps = []
    for u, w in zip(path, path[1:]):
        edge = graph.edge_between(u, w)
        assert edge is not None
        steps.append(LoopStep(edge=edge, reverse=edge.from_id != u))
    return steps


def _finish_loop(graph: CalibrationGraph, target: Edge, path: list[str]) -> CalibrationLoop:
    steps = (*_steps_from_path(path, graph), LoopStep(edge=target, reverse=True))
    w = loop_weight(graph, [s.edge for s in steps])
    return CalibrationLoop(steps=steps, omega=w, target_key=target.key)


def find_optimal_loop(
    graph: CalibrationGraph,
    target: Edge,
    extra_forbidden: frozenset[tuple[str, str]] = frozenset(),
) -> CalibrationLoop:
    """Cheapest closing loop through ``target``: Dijkstra on phi from its tail
    to its head, excluding the target edge itself."""
    banned = {target.key} | set(extra_forbidden)
    source, goal = target.from_id, target.to_id

    dist: dict[str, float] = {source: 0.0}
    prev: dict[str, str] = {}
    done: set[str] = set()
    heap: list[tuple[float, str]] = [(0.0, source)]
    while heap:
        d, vid = heapq.heappop(heap)
        if vid in done:
            continue
        done.add(vid)
        if vid == goal:
            break
        for other, edge in graph.neighbors(vid):
            if edge.key in banned or other in done:
                continue
            cand = d + graph.weight(edge)
            if cand < dist.get(other, math.inf):
                dist[other] = cand
                prev[other] = vid
                heapq.heappush(heap, (cand, other))

    if goal not in done:
        raise NoLoop(f"no loop closes edge {target.key!r}")
    path = [goal]
    while path[-1] != source:
        path.append(prev[path[-1]])
    path.reverse()
    return _finish_loop(graph, target, path)


def build_loop_set(
    graph: CalibrationGraph, tree: SpanningTree | None = None
) -> list[CalibrationLoop]:
    """One optimal loop per unknown edge, in sorted edge-key order.

    Loops that come out as the same edge set are deduplicated (one loop can
    cover several unknowns).  ``tree`` is accepted for pipeline symmetry; loop
    selection itself works on the full pruned graph.
    """
    loops: list[CalibrationLoop] = []
    seen: set[frozenset[tuple[str, str]]] = set()
    for edge in graph.unknown_edges():
        try:
            loop = find_optimal_loop(graph, edge)
        except NoLoop as exc:
            raise UncoverableEdge(f"unknown edge {edge.key!r} closes no loop") from exc
        signature = frozenset(s.edge.key for s in loop.steps)
        if signature in seen:
            continue
        seen.add(signature)
        loops.append(loop)
    covered = {s.edge.key for lp in loops for s in lp.steps}
    for edge in graph.unknown_edges():
        if edge.key not in covered:
            raise UncoverableEdge(f"unknown edge {edge.key!r} not covered by any loop")
    return loops


def enumerate_loops(
    graph: CalibrationGraph,
    target: Edge,
    max_loop_edges: int = 6,
    max_count: int = 8,
) -> list[CalibrationLoop]:
    """All simple closing loops through ``target`` up to ``max_loop_edges``
    edges, cheapest first, truncated to ``max_count`` per edge.

    Exhaustive cycle enumeration is exponential, so both caps are load-bearing.
    """
    source, goal = target.from_id, target.to_id
    max_path = max_loop_edges - 1
    found: list[CalibrationLoop] = []

    path = [source]
    on_path = {source}

    def dfs() -> None:
        vid = path[-1]
        if vid == goal:
            found.append(_finish_loop(graph, target, list(path)))
            return
        if len(path) - 1 >= max_path:
            return
        for other, edge in graph.neighbors(vid):
            if edge.key == target.key or other in on_path:
                continue
            path.append(other)
            on_path.add(other)
            dfs()
            path.pop()
            on_path.remove(other)

    dfs()
    if not found:
        raise NoLoop(f"no loop closes edge {target.key!r}")
    found.sort(key=lambda lp: (lp.omega, lp.vertex_cycle()))
    return found[:max_count]


def random_loop(
    graph: CalibrationGraph,
    target: Edge,
    rng: np.random.Generator,
    max_loop_edges: int = 6,
) -> CalibrationLoop:
    """A random simple closing loop: backtracking search with shuffled
    neighbor order, first complete path wins."""
    source, goal = target.from_id, target.to_id
    max_path = max_loop_edges - 1

    path = [source]
    on_path = {source}

    def dfs() -> bool:
        vid = path[-1]
        if vid == goal:
            return True
        if len(path) - 1 >= max_path:
            return False
        options = graph.neighbors(vid)
        order = rng.permutation(len(options))
        for idx in order:
            other, edge = options[idx]
            if edge.key == target.key or other in on_path:
                continue
            path.append(other)
            on_path.add(other)
            if dfs():
                return True
            path.pop()
            on_path.remove(other)
        return False

    if not dfs():
        raise NoLoop(f"no loop closes edge {target.key!r}")
    return _finish_loop(graph, target, path)
