"""Initial estimates for unknown edges: hand-eye solving and tree chaining.

Unknown tree edges are estimated locally, in calibration-sequence order:

* camera-camera style edges whose endpoints share a measured neighbor are
  composed per configuration and averaged in the tangent space;
* everything else is cast as AX=XB by anchoring both endpoints to static
  frames (robot bases / fixed cameras) through measured or already-estimated
  chains and pairing consecutive-configuration motions.

Unknown non-tree edges are then composed through the tree at a single
reference configuration (a spanning tree determines every other edge).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateMotion,
    InsufficientData,
    SchemaError,
    TooFewPairs,
)
from .graph import STATIC_KINDS, CalibrationGraph, Edge, SpanningTree
from .se3 import Transform, project_rotation, rotation_log, tangent_mean

# Motions with rotation below this magnitude carry no usable axis.
_MIN_ROTATION = 1e-8
# Two motion axes closer than this (radians) cannot pin down all of X.
MIN_AXIS_SEPARATION = 1e-3


@dataclass(frozen=True)
class MeasurementRecord:
    """One observed transform for one edge at one system configuration."""

    config_id: int
    from_id: str
    to_id: str
    observed: Transform


@dataclass(frozen=True)
class MotionPair:
    """Relative motions seen on either side of the unknown X between the same
    two configurations: a on the anchored-from side, b on the anchored-to side."""

    a: Transform
    b: Transform


@dataclass(frozen=True)
class AxXbSolution:
    x: Transform
    rotation_residual: float  # RMS of the so(3) alignment residual (rad)
    translation_residual: float  # RMS row residual of the stacked linear system (mm)


def solve_ax_xb(pairs) -> AxXbSolution:
    """Recover constant X from motion pairs with A_i X = X B_i.

    Rotation first: the so(3) logs satisfy alpha_i = R_X beta_i, a Procrustes
    alignment solved by SVD.  Translation then satisfies the stacked linear
    system (R_Ai - I) t_X = R_X t_Bi - t_Ai, solved by least squares.
    """
    pairs = list(pairs)
    if len(pairs) < 2:
        raise TooFewPairs(f"need at least 2 motion pairs, got {len(pairs)}")
    alphas = np.array([rotation_log(p.a.rotation) for p in pairs])
    betas = np.array([rotation_log(p.b.rotation) for p in pairs])

    norms = np.linalg.norm(alphas, axis=1)
    informative = norms > _MIN_ROTATION
    if int(np.count_nonzero(informative)) < 2:
        raise DegenerateMotion("fewer than two motion pairs with measurable rotation")
    axes = alphas[informative] / norms[informative][:, None]
    cosines = np.clip(np.abs(axes @ axes.T), 0.0, 1.0)
    separation = float(np.max(np.arccos(cosines)))
    if separation <= MIN_AXIS_SEPARATION:
        raise DegenerateMotion(
            f"rotation axes nearly parallel (max separation {separation:.3e} rad)"
        )

    rx = project_rotation(alphas.T @ betas)
    rot_residual = float(np.sqrt(np.mean(np.sum((alphas - betas @ rx.T) ** 2, axis=1))))

    eye = np.eye(3)
    a_rows = np.vstack([p.a.rotation - eye for p in pairs])
    rhs = np.concatenate([rx @ p.b.translation - p.a.translation for p in pairs])
    t, *_ = np.linalg.lstsq(a_rows, rhs, rcond=None)
    trans_residual = float(np.sqrt(np.mean((a_rows @ t - rhs) ** 2)))

    return AxXbSolution(
        x=Transform.from_rotation_translation(rx, t),
        rotation_residual=rot_residual,
        translation_residual=trans_residual,
    )


def relative_pose_shared_target(first_to_target, second_to_target) -> Transform:
    """Pose of the second unit in the first unit's frame via a jointly observed
    target: first * second^-1.  Lists of aligned placements are fused by a
    tangent-space log-mean with one refit pass."""
    if isinstance(first_to_target, Transform):
        first_to_target = [first_to_target]
        second_to_target = [second_to_target]
    firsts = list(first_to_target)
    seconds = list(second_to_target)
    if len(firsts) != len(seconds):
        raise ValueError("placement lists must have equal length")
    if not firsts:
        raise InsufficientData("no shared-target placements supplied")
    per_placement = [a.compose(b.inverse()) for a, b in zip(firsts, seconds)]
    return tangent_mean(per_placement, max_iters=2)


def index_records(
    graph: CalibrationGraph, records
) -> dict[tuple[str, str], dict[int, Transform]]:
    """Group records as edge key -> config -> canonical (from->to) transform.

    Records may arrive in either direction; they are flipped onto the edge's
    stored direction.  Repeated samples of one (edge, configuration) are fused
    by tangent-space averaging.
    """
    buckets: dict[tuple[str, str], dict[int, list[Transform]]] = {}
    for rec in records:
        edge = graph.edge_between(rec.from_id, rec.to_id)
        if edge is None or edge.kind == "forbidden":
            raise SchemaError(
                f"measurement references missing or forbidden edge "
                f"({rec.from_id!r}, {rec.to_id!r})"
            )
        pose = rec.observed if rec.from_id == edge.from_id else rec.observed.inverse()
        buckets.setdefault(edge.key, {}).setdefault(rec.config_id, []).append(pose)
    out: dict[tuple[str, str], dict[int, Transform]] = {}
    for key, by_config in buckets.items():
        out[key] = {
            c: samples[0] if len(samples) == 1 else tangent_mean(samples)
            for c, samples in by_config.items()
        }
    return out


# --- per-edge estimation ------------------------------------------------------

def _try_shared_neighbor(graph, edge, indexed):
    """Both endpoints measured against a common neighbor: compose per config."""
    f, t = edge.from_id, edge.to_id
    near_f = {other: e for other, e in graph.neighbors(f) if e.measured}
    near_t = {other: e for other, e in graph.neighbors(t) if e.measured}
    for shared in sorted(set(near_f) & set(near_t)):
        ef, et = near_f[shared], near_t[shared]
        poses_f = indexed.get(ef.key, {})
        poses_t = indexed.get(et.key, {})
        common = sorted(set(poses_f) & set(poses_t))
        if not common:
            continue
        firsts = [_oriented(poses_f[c], ef, start=f) for c in common]
        seconds = [_oriented(poses_t[c], et, start=t) for c in common]
        return relative_pose_shared_target(firsts, seconds)
    return None


def _oriented(pose: Transform, edge: Edge, start: str) -> Transform:
    """Measured pose rewritten to start at ``start`` (edge poses are from->to)."""
    return pose if edge.from_id == start else pose.inverse()


def _anchor_chain(graph, start, indexed, estimates, banned):
    """BFS to the nearest static frame over measured or estimated edges.

    Returns steps (u, w, edge) walking anchor -> ... -> start, or None if no
    static frame is reachable.  An empty list means ``start`` is itself static.
    """
    if graph.vertex(start).kind in STATIC_KINDS:
        return []
    parent: dict[str, tuple[str, Edge] | None] = {start: None}
    queue = deque([start])
    while queue:
        vid = queue.popleft()
        for other, edge in graph.neighbors(vid):
            if edge.key in banned or other in parent:
                continue
            if not (edge.measured or edge.key in estimates):
                continue
            parent[other] = (vid, edge)
            if graph.vertex(other).kind in STATIC_KINDS:
                steps = []
                cur = other
                while parent[cur] is not None:
                    prev_vid, e = parent[cur]
                    steps.append((cur, prev_vid, e))
                    cur = prev_vid
                return steps
            queue.append(other)
    return None


def _chain_configs(chain, indexed):
    """Configurations at which every measured step of the chain was observed."""
    configs: set[int] | None = None
    for _, _, edge in chain:
        if not edge.measured:
            continue
        have = set(indexed.get(edge.key, {}))
        configs = have if configs is None else configs & have
    return configs if configs is not None else set()


def _chain_pose(chain, config, indexed, estimates) -> Transform:
    pose = Transform.identity()
    for u, w, edge in chain:
        step = indexed[edge.key][config] if edge.measured else estimates[edge.key]
        pose = pose.compose(_oriented(step, edge, start=u))
    return pose


def _solve_via_anchors(graph, edge, indexed, estimates) -> Transform:
    f, t = edge.from_id, edge.to_id
    banned = {edge.key}
    chain_f = _anchor_chain(graph, f, indexed, estimates, banned)
    chain_t = _anchor_chain(graph, t, indexed, estimates, banned)
    if chain_f is None or chain_t is None:
        raise InsufficientData(
            f"edge {edge.key!r}: no static frame reachable from both endpoints"
        )
    # A chain with no measured step is rigid: that side never moves, so
    # relative motions carry no information about X.
    if not any(e.measured for _, _, e in chain_f) or not any(
        e.measured for _, _, e in chain_t
    ):
        raise InsufficientData(
            f"edge {edge.key!r}: an endpoint is rigidly anchored; no relative motion"
        )
    configs = sorted(_chain_configs(chain_f, indexed) & _chain_configs(chain_t, indexed))
    if len(configs) < 3:
        raise InsufficientData(
            f"edge {edge.key!r}: needs at least 3 shared configurations "
            f"for motion pairs, got {len(configs)}"
        )
    poses_f = {c: _chain_pose(chain_f, c, indexed, estimates) for c in configs}
    poses_t = {c: _chain_pose(chain_t, c, indexed, estimates) for c in configs}
    pairs = [
        MotionPair(
            a=poses_f[c0].inverse().compose(poses_f[c1]),
            b=poses_t[c0].inverse().compose(poses_t[c1]),
        )
        for c0, c1 in zip(configs, configs[1:])
    ]
    try:
        return solve_ax_xb(pairs).x
    except TooFewPairs as exc:
        raise InsufficientData(f"edge {edge.key!r}: {exc}") from exc
    except DegenerateMotion as exc:
        raise DegenerateMotion(f"edge {edge.key!r}: {exc}") from exc


def _estimate_tree_edge(graph, edge, indexed, estimates) -> Transform:
    est = _try_shared_neighbor(graph, edge, indexed)
    if est is not None:
        return est
    return _solve_via_anchors(graph, edge, indexed, estimates)


def _reference_config(tree: SpanningTree, indexed) -> int | None:
    """Earliest configuration observed by every measured tree edge."""
    common: set[int] | None = None
    for edge in tree.edges:
        if not edge.measured:
            continue
        have = set(indexed.get(edge.key, {}))
        common = have if common is None else common & have
        if not common:
            raise InsufficientData(
                f"no configuration observes every measured tree edge; "
                f"{edge.key!r} shares no configuration with the preceding edges"
            )
    return min(common) if common else None


def initialize_tree(
    graph: CalibrationGraph, tree: SpanningTree, records
) -> dict[tuple[str, str], Transform]:
    """Initial estimate for every unknown edge of the graph.

    Unknown tree edges are solved in calibration-sequence order so later
    solves may lean on earlier estimates; unknown non-tree edges are composed
    root-to-endpoint through the tree at one reference configuration.
    """
    indexed = index_records(graph, records)
    estimates: dict[tuple[str, str], Transform] = {}
    for _, _, edge in tree.sequence():
        if edge.kind != "unknown_constant":
            continue
        estimates[edge.key] = _estimate_tree_edge(graph, edge, indexed, estimates)

    non_tree = [e for e in graph.unknown_edges() if not tree.contains(e)]
    if non_tree:
        cstar = _reference_config(tree, indexed)
        chain: dict[str, Transform] = {tree.root: Transform.identity()}
        for parent_vid, child_vid, edge in tree.sequence():
            if edge.measured:
                try:
                    pose = indexed[edge.key][cstar]
                except KeyError as exc:
                    raise InsufficientData(
                        f"measured tree edge {edge.key!r} has no records"
                    ) from exc
            else:
                pose = estimates[edge.key]
            chain[child_vid] = chain[parent_vid].compose(
                _oriented(pose, edge, start=parent_vid)
            )
        for edge in non_tree:
            estimates[edge.key] = (
                chain[edge.from_id].inverse().compose(chain[edge.to_id])
            )
    return estimates
