"""Synthetic multi-robot / multi-camera rigs with known ground truth.

A generated system is a complete calibration graph over robot bases (R),
flanges (H), hand-mounted cameras (E), and stationary cameras (C), with every
vertex pair classified:

    measured_kinematic : R_i -- H_i                (forward kinematics)
    measured_vision    : E -- E, E -- C, R -- C    (pose from a shared target)
    unknown_constant   : H_i -- E_i, C -- C        (the calibration targets)
    forbidden          : everything else

Sampling draws fresh flange poses per configuration and perturbs every
measured edge by exp(xi) with xi ~ N(0, diag(sigma_t^2 I3, sigma_r^2 I3))
scaled per edge by sqrt((eta_i + eta_j)/2) and the edge's noise_scale, so a
"bad" edge really is noisier and the planner should route around it.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CalibrationError,
    Disconnected,
    InvalidCounts,
    MissingEstimate,
    NoLoop,
    UncoverableEdge,
)
from .graph import (
    CalibrationGraph,
    CalibrationLoop,
    Edge,
    SpanningTree,
    Vertex,
    build_loop_set,
    enumerate_loops,
    minimum_spanning_tree,
    random_loop,
)
from .handeye import MeasurementRecord, initialize_tree
from .optimizer import SolverConfig, build_problem, optimize
from .se3 import Transform, exp_map, rotation_log, Twist


@dataclass(frozen=True)
class NoiseSpec:
    """Per-sample noise: translation sigma in mm, rotation sigma in rad."""

    sigma_trans: float = 0.0
    sigma_rot: float = 0.0

    def __post_init__(self) -> None:
        if self.sigma_trans < 0.0 or self.sigma_rot < 0.0:
            raise ValueError("noise sigmas must be >= 0")

    @classmethod
    def from_mm(cls, sigma_mm: float) -> "NoiseSpec":
        # rotation noise rides along at 1 mrad per mm of translation noise
        return cls(sigma_trans=float(sigma_mm), sigma_rot=float(sigma_mm) / 1000.0)


@dataclass
class GroundTruthSystem:
    graph: CalibrationGraph
    # truth for every non-forbidden edge, evaluated at the home configuration
    true_transforms: dict[tuple[str, str], Transform]
    seed: int
    # world pose of every vertex at the home configuration
    world_home: dict[str, Transform]
    extent_mm: float

    def true_unknowns(self) -> dict[tuple[str, str], Transform]:
        return {
            e.key: self.true_transforms[e.key] for e in self.graph.unknown_edges()
        }


def _haar_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation from a normalized Gaussian quaternion."""
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def _random_pose(rng: np.random.Generator, box_mm: float) -> Transform:
    r = _haar_rotation(rng)
    t = rng.uniform(-box_mm, box_mm, size=3)
    return Transform.from_rotation_translation(r, t)


def _edge_kind(va: Vertex, vb: Vertex) -> str:
    """Kind of the edge between two vertices under the fixed rig conventions.

    Same-robot pairing is by the numeric suffix of the id (R00 <-> H00 <-> E00).
    """
    kinds = {va.kind, vb.kind}
    if kinds == {"robot_base", "robot_flange"}:
        return "measured_kinematic" if va.id[1:] == vb.id[1:] else "forbidden"
    if kinds == {"robot_flange", "eye_in_hand_camera"}:
        return "unknown_constant" if va.id[1:] == vb.id[1:] else "forbidden"
    if kinds == {"eye_in_hand_camera"}:
        return "measured_vision"
    if kinds == {"eye_in_hand_camera", "eye_to_hand_camera"}:
        return "measured_vision"
    if kinds == {"robot_base", "eye_to_hand_camera"}:
        return "measured_vision"
    if kinds == {"eye_to_hand_camera"}:
        return "unknown_constant"
    # base--base, flange--flange, cross base--flange, flange--stationary,
    # base--hand-camera: no direct observation exists for these
    return "forbidden"


def _edge_direction(va: Vertex, vb: Vertex) -> tuple[str, str]:
    """Natural storage direction: base -> flange -> hand camera; lower id first
    among peers; cameras point 'outward' (E -> C)."""
    rank = {
        "robot_base": 0,
        "robot_flange": 1,
        "eye_in_hand_camera": 2,
        "eye_to_hand_camera": 3,
    }
    ra, rb = rank[va.kind], rank[vb.kind]
    if ra != rb:
        return (va.id, vb.id) if ra < rb else (vb.id, va.id)
    return (va.id, vb.id) if va.id < vb.id else (vb.id, va.id)


def generate_system(
    n_robots: int,
    n_eih_cameras: int,
    n_eth_cameras: int,
    workspace_extent_mm: float = 2000.0,
    seed: int = 0,
    eta_base: float = 1.0,
    eta_flange: float = 1.0,
    eta_eih: float = 1.0,
    eta_eth: float = 1.0,
) -> GroundTruthSystem:
    """Build a rig: the first ``n_eih_cameras`` robots carry a hand camera.

    Vertex ids are R00/H00/E00 per robot and C00.. for stationary cameras; the
    two-digit suffix ties a robot's base, flange, and camera together.
    """
    if n_robots < 1:
        raise InvalidCounts(f"need at least one robot, got {n_robots}")
    if not 0 <= n_eih_cameras <= n_robots:
        raise InvalidCounts(
            f"hand cameras must number between 0 and n_robots={n_robots}, "
            f"got {n_eih_cameras}"
        )
    if n_eth_cameras < 0:
        raise InvalidCounts(f"stationary cameras must be >= 0, got {n_eth_cameras}")
    if workspace_extent_mm <= 0.0:
        raise InvalidCounts(f"workspace extent must be positive, got {workspace_extent_mm}")
    if n_robots > 99 or n_eth_cameras > 99:
        raise InvalidCounts("two-digit ids cap robots and cameras at 99 each")

    rng = np.random.default_rng(seed)
    extent = float(workspace_extent_mm)
    graph = CalibrationGraph()
    world: dict[str, Transform] = {}

    # Fixed draw order: per robot (base, flange home, hand-eye), then statics.
    for i in range(n_robots):
        tag = f"{i:02d}"
        graph.add_vertex(Vertex(id=f"R{tag}", kind="robot_base", eta=eta_base))
        world[f"R{tag}"] = _random_pose(rng, extent / 2.0)
        graph.add_vertex(Vertex(id=f"H{tag}", kind="robot_flange", eta=eta_flange))
        world[f"H{tag}"] = world[f"R{tag}"] @ _random_pose(rng, extent / 4.0)
        if i < n_eih_cameras:
            graph.add_vertex(
                Vertex(id=f"E{tag}", kind="eye_in_hand_camera", eta=eta_eih)
            )
            # hand cameras sit close to the flange
            world[f"E{tag}"] = world[f"H{tag}"] @ _random_pose(rng, extent / 20.0)
    for k in range(n_eth_cameras):
        tag = f"{k:02d}"
        graph.add_vertex(Vertex(id=f"C{tag}", kind="eye_to_hand_camera", eta=eta_eth))
        world[f"C{tag}"] = _random_pose(rng, extent / 2.0)

    truths: dict[tuple[str, str], Transform] = {}
    ids = graph.vertex_ids
    for a_idx in range(len(ids)):
        for b_idx in range(a_idx + 1, len(ids)):
            va, vb = graph.vertex(ids[a_idx]), graph.vertex(ids[b_idx])
            kind = _edge_kind(va, vb)
            from_id, to_id = _edge_direction(va, vb)
            edge = Edge(from_id=from_id, to_id=to_id, kind=kind)
            graph.add_edge(edge)
            if kind != "forbidden":
                truths[edge.key] = world[from_id].inverse() @ world[to_id]

    return GroundTruthSystem(
        graph=graph,
        true_transforms=truths,
        seed=int(seed),
        world_home=world,
        extent_mm=extent,
    )


def _world_at_config(
    system: GroundTruthSystem, flange_offsets: dict[str, Transform]
) -> dict[str, Transform]:
    """World pose of every vertex for one configuration's flange offsets.

    Flanges first, then hand cameras, so the camera pass always sees the
    already-moved flange (vertex ids sort cameras before flanges).
    """
    world = dict(system.world_home)
    graph = system.graph
    for vid in graph.vertex_ids:
        if graph.vertex(vid).kind == "robot_flange":
            world[vid] = world["R" + vid[1:]] @ flange_offsets[vid]
    for vid in graph.vertex_ids:
        if graph.vertex(vid).kind == "eye_in_hand_camera":
            flange = "H" + vid[1:]
            key = (flange, vid) if flange < vid else (vid, flange)
            world[vid] = world[flange] @ system.true_transforms[key]
    return world


def sample_measurements(
    system: GroundTruthSystem,
    n_configs: int,
    noise: NoiseSpec,
    seed: int = 0,
) -> list[MeasurementRecord]:
    """Simulate ``n_configs`` rig configurations; returns records config-major.

    Side effect: every measured edge's ``n_measurements`` grows by
    ``n_configs``, which is what makes already-measured edges attractive to
    the planner afterwards.

    Flange motions are drawn robot-major and noise twists edge-major, each
    from the same generator in a fixed order, so altering one edge's
    ``noise_scale`` rescales only that edge's perturbations.
    """
    if n_configs < 1:
        raise InvalidCounts(f"need at least one configuration, got {n_configs}")
    rng = np.random.default_rng(seed)
    graph = system.graph

    flange_ids = [v for v in graph.vertex_ids if graph.vertex(v).kind == "robot_flange"]
    motions: dict[str, list[Transform]] = {}
    for vid in flange_ids:
        motions[vid] = [
            _random_pose(rng, system.extent_mm / 4.0) for _ in range(n_configs)
        ]

    worlds = [
        _world_at_config(system, {v: motions[v][c] for v in flange_ids})
        for c in range(n_configs)
    ]

    measured = [e for e in graph.edges if e.measured]
    observed: dict[tuple[str, str], list[Transform]] = {}
    for edge in measured:  # graph.edges is already key-sorted
        eta_i = graph.vertex(edge.from_id).eta
        eta_j = graph.vertex(edge.to_id).eta
        k_e = float(np.sqrt(0.5 * (eta_i + eta_j))) * edge.noise_scale
        z = rng.standard_normal((n_configs, 6))
        z[:, :3] *= noise.sigma_trans * k_e
        z[:, 3:] *= noise.sigma_rot * k_e
        obs = []
        for c in range(n_configs):
            truth = worlds[c][edge.from_id].inverse() @ worlds[c][edge.to_id]
            obs.append(truth @ exp_map(Twist.from_vector(z[c])))
        observed[edge.key] = obs

    for edge in measured:
        edge.n_measurements += n_configs

    records: list[MeasurementRecord] = []
    for c in range(n_configs):
        for edge in measured:
            records.append(
                MeasurementRecord(
                    config_id=c,
                    from_id=edge.from_id,
                    to_id=edge.to_id,
                    observed=observed[edge.key][c],
                )
            )
    return records


def with_noise_scale(
    system: GroundTruthSystem, key: tuple[str, str], scale: float
) -> GroundTruthSystem:
    """Copy of the system with one edge's noise scale replaced."""
    clone = _clone_system(system)
    edge = clone.graph.edge_between(*key)
    if edge is None:
        raise KeyError(f"no edge {key!r}")
    edge.noise_scale = float(scale)
    return clone


def _clone_system(system: GroundTruthSystem) -> GroundTruthSystem:
    graph = CalibrationGraph()
    for vid in system.graph.vertex_ids:
        graph.add_vertex(system.graph.vertex(vid))
    for edge in system.graph.edges:
        graph.add_edge(dataclasses.replace(edge))
    return GroundTruthSystem(
        graph=graph,
        true_transforms=dict(system.true_transforms),
        seed=system.seed,
        world_home=dict(system.world_home),
        extent_mm=system.extent_mm,
    )


# --- alternative planning strategies -------------------------------------------

def random_spanning_tree(graph: CalibrationGraph, seed: int = 0) -> SpanningTree:
    """Uniform-frontier randomized Prim: a valid but weight-blind tree."""
    rng = np.random.default_rng(seed)
    ids = graph.vertex_ids
    root = ids[int(rng.integers(len(ids)))]

    visited = {root}
    parents: dict[str, tuple[str, Edge]] = {}
    children: dict[str, list[tuple[float, str, Edge]]] = {}
    tree_edges: list[Edge] = []
    frontier: list[tuple[str, str, Edge]] = [
        (root, other, edge) for other, edge in graph.neighbors(root)
    ]
    while frontier:
        idx = int(rng.integers(len(frontier)))
        tree_side, new_side, edge = frontier.pop(idx)
        if new_side in visited:
            continue
        visited.add(new_side)
        parents[new_side] = (tree_side, edge)
        children.setdefault(tree_side, []).append(
            (graph.weight(edge), new_side, edge)
        )
        tree_edges.append(edge)
        frontier.extend(
            (new_side, other, e)
            for other, e in graph.neighbors(new_side)
            if other not in visited
        )
    missing = sorted(set(ids) - visited)
    if missing:
        raise Disconnected(f"unreachable vertices: {missing}")
    return SpanningTree(root=root, parents=parents, children=children, edges=tree_edges)


def random_loop_set(
    graph: CalibrationGraph, tree: SpanningTree | None = None, seed: int = 0
) -> list[CalibrationLoop]:
    """One random closing loop per unknown edge (tree accepted for symmetry)."""
    rng = np.random.default_rng(seed)
    loops = []
    for edge in graph.unknown_edges():
        try:
            loops.append(random_loop(graph, edge, rng))
        except NoLoop as exc:
            raise UncoverableEdge(f"unknown edge {edge.key!r} closes no loop") from exc
    return loops


def all_paths_loop_set(
    graph: CalibrationGraph,
    max_loop_edges: int = 6,
    max_loops_per_edge: int = 8,
) -> list[CalibrationLoop]:
    """Every short closing loop for every unknown edge, deduplicated globally."""
    loops: list[CalibrationLoop] = []
    seen: set[frozenset[tuple[str, str]]] = set()
    for edge in graph.unknown_edges():
        try:
            found = enumerate_loops(graph, edge, max_loop_edges, max_loops_per_edge)
        except NoLoop as exc:
            raise UncoverableEdge(f"unknown edge {edge.key!r} closes no loop") from exc
        for loop in found:
            signature = frozenset(s.edge.key for s in loop.steps)
            if signature in seen:
                continue
            seen.add(signature)
            loops.append(loop)
    return loops


# --- error evaluation -----------------------------------------------------------

@dataclass(frozen=True)
class EdgeError:
    key: tuple[str, str]
    rotation_vec_rad: np.ndarray
    rotation_angle_rad: float
    translation_vec_mm: np.ndarray
    translation_norm_mm: float


@dataclass
class ErrorReport:
    per_edge: list[EdgeError]
    mean_translation_norm_mm: float
    max_translation_norm_mm: float
    mean_rotation_angle_rad: float
    max_rotation_angle_rad: float


def evaluate_errors(
    estimates: dict[tuple[str, str], Transform],
    ground_truth: dict[tuple[str, str], Transform],
) -> ErrorReport:
    """Per-edge rotation angle and translation distance of estimate vs truth."""
    per_edge = []
    for key in sorted(ground_truth):
        if key not in estimates:
            raise MissingEstimate(f"no estimate for edge {key!r}")
        est, tru = estimates[key], ground_truth[key]
        rot_vec = rotation_log(est.rotation @ tru.rotation.T)
        t_vec = est.translation - tru.translation
        per_edge.append(
            EdgeError(
                key=key,
                rotation_vec_rad=rot_vec,
                rotation_angle_rad=float(np.linalg.norm(rot_vec)),
                translation_vec_mm=t_vec,
                translation_norm_mm=float(np.linalg.norm(t_vec)),
            )
        )
    t_norms = [e.translation_norm_mm for e in per_edge]
    r_angles = [e.rotation_angle_rad for e in per_edge]
    return ErrorReport(
        per_edge=per_edge,
        mean_translation_norm_mm=float(np.mean(t_norms)) if t_norms else 0.0,
        max_translation_norm_mm=float(np.max(t_norms)) if t_norms else 0.0,
        mean_rotation_angle_rad=float(np.mean(r_angles)) if r_angles else 0.0,
        max_rotation_angle_rad=float(np.max(r_angles)) if r_angles else 0.0,
    )


# --- end-to-end experiment -------------------------------------------------------

STRATEGIES = ("optimal", "random_path", "all_loops")


def spawn_seeds(seed: int, n: int) -> list[int]:
    """Derive n independent integer sub-seeds from one master seed."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [int(c.generate_state(1, np.uint64)[0]) for c in children]


@dataclass
class ExperimentSummary:
    strategy: str
    noise: NoiseSpec
    n_configs: int
    per_seed: dict[int, ErrorReport] = field(default_factory=dict)
    failures: dict[int, str] = field(default_factory=dict)

    @property
    def mean_translation_norm_mm(self) -> float:
        if not self.per_seed:
            return float("nan")
        return float(
            np.mean([r.mean_translation_norm_mm for r in self.per_seed.values()])
        )

    @property
    def mean_rotation_angle_rad(self) -> float:
        if not self.per_seed:
            return float("nan")
        return float(
            np.mean([r.mean_rotation_angle_rad for r in self.per_seed.values()])
        )


def plan_by_strategy(
    graph: CalibrationGraph, strategy: str, seed: int = 0
) -> tuple[SpanningTree, list[CalibrationLoop]]:
    if strategy == "optimal":
        tree = minimum_spanning_tree(graph)
        return tree, build_loop_set(graph, tree)
    if strategy == "random_path":
        tree = random_spanning_tree(graph, seed)
        return tree, random_loop_set(graph, tree, seed)
    if strategy == "all_loops":
        tree = minimum_spanning_tree(graph)
        return tree, all_paths_loop_set(graph)
    raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")


def run_experiment(
    system: GroundTruthSystem,
    strategy: str,
    noise: NoiseSpec,
    n_configs: int,
    seeds,
    config: SolverConfig | None = None,
) -> ExperimentSummary:
    """Sample -> plan -> initialize -> optimize -> score, once per seed.

    Each seed works on a fresh copy of the system (sampling bumps measurement
    counts).  A seed that fails anywhere is recorded, not fatal.
    """
    summary = ExperimentSummary(strategy=strategy, noise=noise, n_configs=n_configs)
    for seed in seeds:
        seed = int(seed)
        sample_seed, strategy_seed = spawn_seeds(seed, 2)
        clone = _clone_system(system)
        try:
            records = sample_measurements(clone, n_configs, noise, sample_seed)
            tree, loops = plan_by_strategy(clone.graph, strategy, strategy_seed)
            estimates = initialize_tree(clone.graph, tree, records)
            problem = build_problem(clone.graph, loops, records, estimates)
            refined, _ = optimize(problem, config)
            summary.per_seed[seed] = evaluate_errors(refined, clone.true_unknowns())
        except CalibrationError as exc:
            summary.failures[seed] = f"{type(exc).__name__}: {exc}"
    return summary
