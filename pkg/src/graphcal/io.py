"""File formats: system/plan/estimates/truth JSON, measurement JSONL, CSVs.

Validation is strict and names the offending field: anything structurally off
raises SchemaError rather than limping along.  Transforms travel as 16
row-major floats; on ingestion the rotation block must already be orthonormal
to 1e-6 and is then snapped exactly onto SO(3), so serialize/parse round trips
through text never accumulate drift.

Files that belong together carry each other's SHA-256 digest (a plan refers
to its system, measurements to theirs), and every write goes through a
temp-file-then-rename so a crash never leaves a half-written artifact.
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import NonPositiveEta, NotSymmetric, SchemaError
from .graph import (
    CalibrationGraph,
    CalibrationLoop,
    Edge,
    LoopStep,
    SpanningTree,
    Vertex,
    eta_from_covariance,
    loop_weight,
)
from .handeye import MeasurementRecord
from .optimizer import ConvergenceTrace
from .se3 import Transform, project_rotation
from .simulator import ErrorReport

_DEFAULTS_KEYS = {
    "probe_scale_mm",
    "epsilon",
    "max_iterations",
    "step_halving_limit",
    "n_measurements",
}

TRACE_COLUMNS = ("iteration", "mean_closed_loop_error_mm", "step_inf_norm")


# --- primitives -----------------------------------------------------------------

def digest_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def digest_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write(path: str, data: str) -> None:
    """Write via a sibling temp file and rename, so readers never see a torn file."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def dump_json(doc) -> str:
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def _read_json(path: str):
    try:
        with open(path, "r") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    except OSError as exc:
        raise SchemaError(f"{path}: cannot read ({exc})") from exc


def _check_keys(obj, where: str, required: set, optional: set = frozenset()) -> None:
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: expected an object")
    missing = sorted(required - obj.keys())
    if missing:
        raise SchemaError(f"{where}: missing required field(s) {missing}")
    extra = sorted(obj.keys() - required - optional)
    if extra:
        raise SchemaError(f"{where}: unexpected field(s) {extra}")


def _string(value, where: str) -> str:
    if not isinstance(value, str) or not value:
        raise SchemaError(f"{where}: expected a non-empty string")
    return value


def _number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"{where}: expected a number")
    out = float(value)
    if not np.isfinite(out):
        raise SchemaError(f"{where}: must be finite")
    return out


def _integer(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(f"{where}: expected an integer")
    return value


def parse_transform(values, where: str) -> Transform:
    """16 row-major numbers -> Transform, snapping the rotation onto SO(3)."""
    if not isinstance(values, list) or len(values) != 16:
        raise SchemaError(f"{where}: T must be a list of 16 numbers (row-major 4x4)")
    flat = [_number(x, f"{where}.T[{i}]") for i, x in enumerate(values)]
    m = np.array(flat).reshape(4, 4)
    if float(np.max(np.abs(m[3] - np.array([0.0, 0.0, 0.0, 1.0])))) > 1e-9:
        raise SchemaError(f"{where}: bottom row must be [0, 0, 0, 1]")
    r = m[:3, :3]
    defect = float(np.max(np.abs(r.T @ r - np.eye(3))))
    if defect > 1e-6:
        raise SchemaError(
            f"{where}: rotation block is not orthonormal (defect {defect:.3e})"
        )
    if float(np.linalg.det(r)) <= 0.0:
        raise SchemaError(f"{where}: rotation block must have determinant +1")
    out = np.eye(4)
    out[:3, :3] = project_rotation(r)
    out[:3, 3] = m[:3, 3]
    return Transform(out)


def format_transform(t: Transform) -> list[float]:
    return [float(x) for x in t.matrix.reshape(-1)]


# --- system ----------------------------------------------------------------------

def _parse_defaults(obj, where: str = "defaults") -> dict:
    _check_keys(obj, where, set(), _DEFAULTS_KEYS)
    out = {}
    if "probe_scale_mm" in obj:
        v = _number(obj["probe_scale_mm"], f"{where}.probe_scale_mm")
        if v <= 0.0:
            raise SchemaError(f"{where}.probe_scale_mm: must be positive")
        out["probe_scale_mm"] = v
    if "epsilon" in obj:
        v = _number(obj["epsilon"], f"{where}.epsilon")
        if v <= 0.0:
            raise SchemaError(f"{where}.epsilon: must be positive")
        out["epsilon"] = v
    for key in ("max_iterations", "step_halving_limit", "n_measurements"):
        if key in obj:
            v = _integer(obj[key], f"{where}.{key}")
            if v < 0:
                raise SchemaError(f"{where}.{key}: must be >= 0")
            out[key] = v
    return out


def load_system(path: str) -> tuple[CalibrationGraph, dict]:
    """Read a system description; returns the graph plus solver defaults."""
    data = _read_json(path)
    _check_keys(data, "system", {"vertices", "edges"}, {"defaults"})
    defaults = _parse_defaults(data.get("defaults", {}))
    if not isinstance(data["vertices"], list) or not data["vertices"]:
        raise SchemaError("system.vertices: expected a non-empty list")
    if not isinstance(data["edges"], list):
        raise SchemaError("system.edges: expected a list")

    graph = CalibrationGraph()
    for i, v in enumerate(data["vertices"]):
        where = f"vertices[{i}]"
        _check_keys(v, where, {"id", "kind"}, {"eta", "covariance"})
        vid = _string(v["id"], f"{where}.id")
        kind = _string(v["kind"], f"{where}.kind")
        if "eta" in v and "covariance" in v:
            raise SchemaError(f"{where} ({vid!r}): give eta or covariance, not both")
        try:
            if "covariance" in v:
                eta = eta_from_covariance(v["covariance"])
            elif "eta" in v:
                eta = _number(v["eta"], f"{where}.eta")
            else:
                eta = 1.0
            graph.add_vertex(Vertex(id=vid, kind=kind, eta=eta))
        except SchemaError:
            raise
        except (NotSymmetric, NonPositiveEta, ValueError) as exc:
            raise SchemaError(f"{where} ({vid!r}): {exc}") from exc

    default_n = defaults.get("n_measurements", 0)
    for i, e in enumerate(data["edges"]):
        where = f"edges[{i}]"
        _check_keys(e, where, {"from", "to", "kind"}, {"d", "n", "noise_scale"})
        from_id = _string(e["from"], f"{where}.from")
        to_id = _string(e["to"], f"{where}.to")
        kind = _string(e["kind"], f"{where}.kind")
        d = _number(e.get("d", 0.0), f"{where}.d")
        if "n" in e:
            n = _integer(e["n"], f"{where}.n")
        else:
            n = default_n if kind in ("measured_kinematic", "measured_vision") else 0
        scale = _number(e.get("noise_scale", 1.0), f"{where}.noise_scale")
        try:
            graph.add_edge(
                Edge(
                    from_id=from_id,
                    to_id=to_id,
                    kind=kind,
                    n_measurements=n,
                    distance=d,
                    noise_scale=scale,
                )
            )
        except (NonPositiveEta, ValueError) as exc:
            raise SchemaError(f"{where} ({from_id!r} -> {to_id!r}): {exc}") from exc
    return graph, defaults


def write_system(path: str, graph: CalibrationGraph, defaults: dict | None = None) -> None:
    vertices = [
        {"id": vid, "kind": graph.vertex(vid).kind, "eta": graph.vertex(vid).eta}
        for vid in graph.vertex_ids
    ]
    edges = []
    for e in graph.edges:
        entry = {
            "from": e.from_id,
            "to": e.to_id,
            "kind": e.kind,
            "d": e.distance,
            "n": e.n_measurements,
        }
        if e.noise_scale != 1.0:
            entry["noise_scale"] = e.noise_scale
        edges.append(entry)
    doc = {"vertices": vertices, "edges": edges}
    if defaults:
        doc["defaults"] = {k: defaults[k] for k in sorted(defaults)}
    atomic_write(path, dump_json(doc))


# --- plan ------------------------------------------------------------------------

def write_plan(
    path: str,
    tree: SpanningTree,
    loops: list[CalibrationLoop],
    system_digest: str,
) -> None:
    doc = {
        "system_digest": system_digest,
        "root": tree.root,
        "sequence": [[parent, child] for parent, child, _ in tree.sequence()],
        "loops": [
            {
                "target": list(loop.target_key),
                "omega": loop.omega,
                "steps": [[s.start, s.end] for s in loop.steps],
            }
            for loop in loops
        ],
    }
    atomic_write(path, dump_json(doc))


def _edge_or_schema_error(graph: CalibrationGraph, a: str, b: str, where: str) -> Edge:
    edge = graph.edge_between(a, b)
    if edge is None:
        raise SchemaError(f"{where}: no edge between {a!r} and {b!r} in the system")
    if edge.kind == "forbidden":
        raise SchemaError(f"{where}: edge {edge.key!r} is forbidden")
    return edge


def load_plan(
    path: str, graph: CalibrationGraph
) -> tuple[str, SpanningTree, list[CalibrationLoop]]:
    data = _read_json(path)
    _check_keys(data, "plan", {"system_digest", "root", "sequence", "loops"})
    digest = _string(data["system_digest"], "plan.system_digest")
    root = _string(data["root"], "plan.root")
    if root not in graph.vertex_ids:
        raise SchemaError(f"plan.root: unknown vertex {root!r}")

    parents: dict[str, tuple[str, Edge]] = {}
    children: dict[str, list[tuple[float, str, Edge]]] = {}
    tree_edges: list[Edge] = []
    placed = {root}
    if not isinstance(data["sequence"], list):
        raise SchemaError("plan.sequence: expected a list")
    for i, pair in enumerate(data["sequence"]):
        where = f"plan.sequence[{i}]"
        if not isinstance(pair, list) or len(pair) != 2:
            raise SchemaError(f"{where}: expected [parent, child]")
        parent = _string(pair[0], f"{where}[0]")
        child = _string(pair[1], f"{where}[1]")
        if parent not in placed:
            raise SchemaError(f"{where}: parent {parent!r} not yet reached")
        if child in placed:
            raise SchemaError(f"{where}: vertex {child!r} appears twice")
        edge = _edge_or_schema_error(graph, parent, child, where)
        parents[child] = (parent, edge)
        children.setdefault(parent, []).append((graph.weight(edge), child, edge))
        tree_edges.append(edge)
        placed.add(child)
    unplaced = sorted(set(graph.vertex_ids) - placed)
    if unplaced:
        raise SchemaError(f"plan.sequence: does not span vertices {unplaced}")
    tree = SpanningTree(root=root, parents=parents, children=children, edges=tree_edges)

    loops: list[CalibrationLoop] = []
    if not isinstance(data["loops"], list):
        raise SchemaError("plan.loops: expected a list")
    for i, entry in enumerate(data["loops"]):
        where = f"plan.loops[{i}]"
        _check_keys(entry, where, {"target", "steps"}, {"omega"})
        tgt = entry["target"]
        if not isinstance(tgt, list) or len(tgt) != 2:
            raise SchemaError(f"{where}.target: expected [from, to]")
        target = _edge_or_schema_error(
            graph,
            _string(tgt[0], f"{where}.target[0]"),
            _string(tgt[1], f"{where}.target[1]"),
            f"{where}.target",
        )
        if not isinstance(entry["steps"], list) or len(entry["steps"]) < 2:
            raise SchemaError(f"{where}.steps: expected a list of at least 2 steps")
        steps: list[LoopStep] = []
        for j, pair in enumerate(entry["steps"]):
            sw = f"{where}.steps[{j}]"
            if not isinstance(pair, list) or len(pair) != 2:
                raise SchemaError(f"{sw}: expected [start, end]")
            start = _string(pair[0], f"{sw}[0]")
            end = _string(pair[1], f"{sw}[1]")
            edge = _edge_or_schema_error(graph, start, end, sw)
            steps.append(LoopStep(edge=edge, reverse=start != edge.from_id))
        for j in range(len(steps)):
            nxt = steps[(j + 1) % len(steps)]
            if steps[j].end != nxt.start:
                raise SchemaError(
                    f"{where}.steps: step {j} ends at {steps[j].end!r} but the "
                    f"next starts at {nxt.start!r}"
                )
        if target.key not in {s.edge.key for s in steps}:
            raise SchemaError(f"{where}: target {target.key!r} absent from its steps")
        loops.append(
            CalibrationLoop(
                steps=tuple(steps),
                omega=loop_weight(graph, [s.edge for s in steps]),
                target_key=target.key,
            )
        )
    return digest, tree, loops


# --- measurements ------------------------------------------------------------------

def write_measurements(
    path: str, records: list[MeasurementRecord], system_digest: str
) -> None:
    lines = [json.dumps({"system_digest": system_digest}, separators=(",", ":"))]
    for rec in records:
        lines.append(
            json.dumps(
                {
                    "config": rec.config_id,
                    "from": rec.from_id,
                    "to": rec.to_id,
                    "T": format_transform(rec.observed),
                },
                separators=(",", ":"),
                allow_nan=False,
            )
        )
    atomic_write(path, "\n".join(lines) + "\n")


def load_measurements(path: str) -> tuple[list[MeasurementRecord], str | None]:
    """Read JSONL measurements; the optional first line carries the system digest."""
    records: list[MeasurementRecord] = []
    digest: str | None = None
    try:
        fh = open(path, "r")
    except OSError as exc:
        raise SchemaError(f"{path}: cannot read ({exc})") from exc
    with fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            where = f"{os.path.basename(path)}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{where}: not valid JSON ({exc})") from exc
            if lineno == 1 and isinstance(obj, dict) and "system_digest" in obj:
                _check_keys(obj, where, {"system_digest"})
                digest = _string(obj["system_digest"], f"{where}.system_digest")
                continue
            _check_keys(obj, where, {"config", "from", "to", "T"})
            config = _integer(obj["config"], f"{where}.config")
            if config < 0:
                raise SchemaError(f"{where}.config: must be >= 0")
            records.append(
                MeasurementRecord(
                    config_id=config,
                    from_id=_string(obj["from"], f"{where}.from"),
                    to_id=_string(obj["to"], f"{where}.to"),
                    observed=parse_transform(obj["T"], where),
                )
            )
    return records, digest


# --- estimates / truth ---------------------------------------------------------------

def _edge_entries(graph: CalibrationGraph, transforms: dict) -> list[dict]:
    entries = []
    for key in sorted(transforms):
        edge = graph.edge_between(*key)
        if edge is None:
            raise SchemaError(f"estimate references unknown edge {key!r}")
        entries.append(
            {
                "from": edge.from_id,
                "to": edge.to_id,
                "T": format_transform(transforms[key]),
            }
        )
    return entries


def _parse_edge_entries(
    entries, graph: CalibrationGraph, where_prefix: str
) -> dict[tuple[str, str], Transform]:
    if not isinstance(entries, list):
        raise SchemaError(f"{where_prefix}: expected a list")
    out: dict[tuple[str, str], Transform] = {}
    for i, entry in enumerate(entries):
        where = f"{where_prefix}[{i}]"
        _check_keys(entry, where, {"from", "to", "T"})
        from_id = _string(entry["from"], f"{where}.from")
        to_id = _string(entry["to"], f"{where}.to")
        edge = _edge_or_schema_error(graph, from_id, to_id, where)
        t = parse_transform(entry["T"], where)
        if (from_id, to_id) != (edge.from_id, edge.to_id):
            t = t.inverse()  # stored against the edge's natural direction
        if edge.key in out:
            raise SchemaError(f"{where}: duplicate entry for edge {edge.key!r}")
        out[edge.key] = t
    return out


def write_estimates(
    path: str,
    graph: CalibrationGraph,
    estimates: dict[tuple[str, str], Transform],
    system_digest: str,
    summary: dict | None = None,
) -> None:
    doc = {
        "system_digest": system_digest,
        "estimates": _edge_entries(graph, estimates),
    }
    if summary is not None:
        doc["summary"] = summary
    atomic_write(path, dump_json(doc))


def load_estimates(
    path: str, graph: CalibrationGraph
) -> tuple[str, dict[tuple[str, str], Transform]]:
    data = _read_json(path)
    _check_keys(data, "estimates", {"system_digest", "estimates"}, {"summary"})
    digest = _string(data["system_digest"], "estimates.system_digest")
    return digest, _parse_edge_entries(data["estimates"], graph, "estimates")


def write_truth(
    path: str,
    graph: CalibrationGraph,
    truths: dict[tuple[str, str], Transform],
    seed: int,
    system_digest: str | None = None,
) -> None:
    doc: dict = {"seed": seed, "edges": _edge_entries(graph, truths)}
    if system_digest is not None:
        doc = {"system_digest": system_digest, **doc}
    atomic_write(path, dump_json(doc))


def load_truth(
    path: str, graph: CalibrationGraph
) -> tuple[str | None, int | None, dict[tuple[str, str], Transform]]:
    data = _read_json(path)
    _check_keys(data, "truth", {"edges"}, {"system_digest", "seed"})
    digest = (
        _string(data["system_digest"], "truth.system_digest")
        if "system_digest" in data
        else None
    )
    seed = _integer(data["seed"], "truth.seed") if "seed" in data else None
    return digest, seed, _parse_edge_entries(data["edges"], graph, "truth.edges")


# --- CSV outputs -----------------------------------------------------------------------

def write_trace_csv(path: str, trace: ConvergenceTrace) -> None:
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for row in trace.rows:
        writer.writerow([row.iteration, row.mean_error_mm, row.step_inf_norm])
    atomic_write(path, buf.getvalue())


def write_report_csv(path: str, report: ErrorReport) -> None:
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        [
            "from",
            "to",
            "rot_x_rad",
            "rot_y_rad",
            "rot_z_rad",
            "rot_angle_rad",
            "t_x_mm",
            "t_y_mm",
            "t_z_mm",
            "t_norm_mm",
        ]
    )
    for e in report.per_edge:
        writer.writerow(
            [
                e.key[0],
                e.key[1],
                *[float(x) for x in e.rotation_vec_rad],
                e.rotation_angle_rad,
                *[float(x) for x in e.translation_vec_mm],
                e.translation_norm_mm,
            ]
        )
    writer.writerow(
        ["(mean)", "", "", "", "", report.mean_rotation_angle_rad,
         "", "", "", report.mean_translation_norm_mm]
    )
    writer.writerow(
        ["(max)", "", "", "", "", report.max_rotation_angle_rad,
         "", "", "", report.max_translation_norm_mm]
    )
    atomic_write(path, buf.getvalue())


# --- run manifest -------------------------------------------------------------------------

@dataclass
class RunManifest:
    command: str
    tool_version: str
    seed: int | None = None
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    started: str = ""
    finished: str = ""


def write_manifest(path: str, manifest: RunManifest) -> None:
    doc = {
        "command": manifest.command,
        "tool_version": manifest.tool_version,
        "seed": manifest.seed,
        "inputs": {k: manifest.inputs[k] for k in sorted(manifest.inputs)},
        "outputs": {k: manifest.outputs[k] for k in sorted(manifest.outputs)},
        "started": manifest.started,
        "finished": manifest.finished,
    }
    atomic_write(path, dump_json(doc))
