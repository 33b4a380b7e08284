"""Tests for the file formats: strict schemas, digests, text round-trips."""

import json

import numpy as np
import pytest

from graphcal.errors import SchemaError
from graphcal.graph import (
    CalibrationGraph,
    Edge,
    Vertex,
    build_loop_set,
    minimum_spanning_tree,
)
from graphcal.io import (
    atomic_write,
    digest_bytes,
    digest_file,
    load_estimates,
    load_measurements,
    load_plan,
    load_system,
    load_truth,
    parse_transform,
    write_estimates,
    write_measurements,
    write_plan,
    write_system,
    write_truth,
)
from graphcal.se3 import Twist, exp_map
from graphcal.simulator import NoiseSpec, generate_system, sample_measurements


def small_system():
    system = generate_system(2, 1, 1, seed=31)
    records = sample_measurements(system, 3, NoiseSpec.from_mm(0.4), seed=31)
    return system, records


def random_transform(seed):
    rng = np.random.default_rng(seed)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return exp_map(Twist(rng.uniform(-400, 400, 3), axis * rng.uniform(0.1, 2.5)))


# ---------------------------------------------------------------------------
# transforms as text
# ---------------------------------------------------------------------------


def test_parse_transform_round_trip_is_exact():
    for seed in range(20):
        t = random_transform(seed)
        flat = [float(x) for x in t.matrix.reshape(-1)]
        back = parse_transform(json.loads(json.dumps(flat)), "t")
        # repr floats parse back to the same doubles; the rotation snap is a
        # no-op on an already-orthonormal block
        assert np.max(np.abs(back.matrix - t.matrix)) < 1e-13


def test_parse_transform_rejects_bad_shapes_and_blocks():
    with pytest.raises(SchemaError):
        parse_transform([0.0] * 15, "t")
    good = [float(x) for x in np.eye(4).reshape(-1)]
    bent = list(good)
    bent[0] = 1.01  # not orthonormal
    with pytest.raises(SchemaError):
        parse_transform(bent, "t")
    mirrored = [float(x) for x in np.diag([-1.0, 1.0, 1.0, 1.0]).reshape(-1)]
    with pytest.raises(SchemaError):
        parse_transform(mirrored, "t")
    skewed = list(good)
    skewed[12] = 0.5  # bottom row must be 0 0 0 1
    with pytest.raises(SchemaError):
        parse_transform(skewed, "t")
    with pytest.raises(SchemaError):
        parse_transform(good[:-1] + [float("nan")], "t")


# ---------------------------------------------------------------------------
# system files
# ---------------------------------------------------------------------------


def test_system_round_trip_preserves_graph(tmp_path):
    system, _ = small_system()
    path = tmp_path / "system.json"
    write_system(str(path), system.graph)
    graph, defaults = load_system(str(path))
    assert defaults == {}
    assert graph.vertex_ids == system.graph.vertex_ids
    for e in system.graph.edges:
        got = graph.edge_between(e.from_id, e.to_id)
        assert (got.kind, got.n_measurements, got.distance, got.noise_scale) == (
            e.kind,
            e.n_measurements,
            e.distance,
            e.noise_scale,
        )
        assert graph.weight(got) == system.graph.weight(e)


def test_system_rejects_unknown_fields(tmp_path):
    path = tmp_path / "system.json"
    path.write_text(
        json.dumps(
            {
                "vertices": [{"id": "A", "kind": "robot_base"}],
                "edges": [],
                "florp": 1,
            }
        )
    )
    with pytest.raises(SchemaError, match="florp"):
        load_system(str(path))


def test_system_rejects_eta_and_covariance_together(tmp_path):
    path = tmp_path / "system.json"
    path.write_text(
        json.dumps(
            {
                "vertices": [
                    {
                        "id": "A",
                        "kind": "robot_base",
                        "eta": 1.0,
                        "covariance": [[1, 0, 0], [0, 1, 0], [0, 0, 1]],
                    }
                ],
                "edges": [],
            }
        )
    )
    with pytest.raises(SchemaError, match="not both"):
        load_system(str(path))


def test_system_covariance_becomes_eta(tmp_path):
    path = tmp_path / "system.json"
    path.write_text(
        json.dumps(
            {
                "vertices": [
                    {
                        "id": "A",
                        "kind": "robot_base",
                        "covariance": [[4, 0, 0], [0, 1, 0], [0, 0, 1]],
                    }
                ],
                "edges": [],
            }
        )
    )
    graph, _ = load_system(str(path))
    assert graph.vertex("A").eta == pytest.approx(4.0)


def test_system_defaults_are_validated(tmp_path):
    path = tmp_path / "system.json"
    doc = {
        "vertices": [{"id": "A", "kind": "robot_base"}],
        "edges": [],
        "defaults": {"probe_scale_mm": 50.0, "max_iterations": 7},
    }
    path.write_text(json.dumps(doc))
    _, defaults = load_system(str(path))
    assert defaults == {"probe_scale_mm": 50.0, "max_iterations": 7}
    doc["defaults"] = {"probe_scale_mm": -1.0}
    path.write_text(json.dumps(doc))
    with pytest.raises(SchemaError, match="probe_scale_mm"):
        load_system(str(path))


def test_default_measurement_count_applies_to_measured_only(tmp_path):
    path = tmp_path / "system.json"
    path.write_text(
        json.dumps(
            {
                "vertices": [
                    {"id": "A", "kind": "robot_base"},
                    {"id": "B", "kind": "eye_to_hand_camera"},
                    {"id": "C", "kind": "eye_to_hand_camera"},
                ],
                "edges": [
                    {"from": "A", "to": "B", "kind": "measured_vision"},
                    {"from": "B", "to": "C", "kind": "unknown_constant"},
                ],
                "defaults": {"n_measurements": 12},
            }
        )
    )
    graph, _ = load_system(str(path))
    assert graph.edge_between("A", "B").n_measurements == 12
    assert graph.edge_between("B", "C").n_measurements == 0


# ---------------------------------------------------------------------------
# plans
# ---------------------------------------------------------------------------


def test_plan_round_trip(tmp_path):
    system, _ = small_system()
    g = system.graph
    tree = minimum_spanning_tree(g)
    loops = build_loop_set(g, tree)
    path = tmp_path / "plan.json"
    write_plan(str(path), tree, loops, "d" * 64)
    digest, tree2, loops2 = load_plan(str(path), g)
    assert digest == "d" * 64
    assert tree2.root == tree.root
    assert tree2.edge_keys == tree.edge_keys
    assert [l.target_key for l in loops2] == [l.target_key for l in loops]
    for a, b in zip(loops, loops2):
        assert [(s.start, s.end) for s in a.steps] == [(s.start, s.end) for s in b.steps]
        assert b.omega == pytest.approx(a.omega, rel=1e-12)


def test_plan_rejects_broken_sequences(tmp_path):
    system, _ = small_system()
    g = system.graph
    tree = minimum_spanning_tree(g)
    path = tmp_path / "plan.json"
    write_plan(str(path), tree, [], "d" * 64)
    doc = json.loads(path.read_text())

    bad = json.loads(json.dumps(doc))
    bad["sequence"] = bad["sequence"][1:]  # first child's parent never reached
    path.write_text(json.dumps(bad))
    with pytest.raises(SchemaError, match="not yet reached|does not span"):
        load_plan(str(path), g)

    bad = json.loads(json.dumps(doc))
    bad["sequence"] = bad["sequence"][:-1]  # one vertex missing
    path.write_text(json.dumps(bad))
    with pytest.raises(SchemaError, match="does not span"):
        load_plan(str(path), g)


def test_plan_rejects_discontinuous_loop(tmp_path):
    system, _ = small_system()
    g = system.graph
    tree = minimum_spanning_tree(g)
    loops = build_loop_set(g, tree)
    path = tmp_path / "plan.json"
    write_plan(str(path), tree, loops, "d" * 64)
    doc = json.loads(path.read_text())
    doc["loops"][0]["steps"] = doc["loops"][0]["steps"][::-1]  # ends no longer chain
    path.write_text(json.dumps(doc))
    with pytest.raises(SchemaError, match="ends at"):
        load_plan(str(path), g)


# ---------------------------------------------------------------------------
# measurements
# ---------------------------------------------------------------------------


def test_measurements_round_trip_with_digest(tmp_path):
    _, records = small_system()
    path = tmp_path / "m.jsonl"
    write_measurements(str(path), records, "e" * 64)
    back, digest = load_measurements(str(path))
    assert digest == "e" * 64
    assert len(back) == len(records)
    for ra, rb in zip(records, back):
        assert (ra.config_id, ra.from_id, ra.to_id) == (rb.config_id, rb.from_id, rb.to_id)
        assert np.max(np.abs(ra.observed.matrix - rb.observed.matrix)) < 1e-13


def test_measurements_without_header_have_no_digest(tmp_path):
    t = [float(x) for x in np.eye(4).reshape(-1)]
    path = tmp_path / "m.jsonl"
    path.write_text(json.dumps({"config": 0, "from": "A", "to": "B", "T": t}) + "\n")
    records, digest = load_measurements(str(path))
    assert digest is None
    assert records[0].from_id == "A"


def test_measurements_reject_negative_config(tmp_path):
    t = [float(x) for x in np.eye(4).reshape(-1)]
    path = tmp_path / "m.jsonl"
    path.write_text(json.dumps({"config": -1, "from": "A", "to": "B", "T": t}) + "\n")
    with pytest.raises(SchemaError, match="config"):
        load_measurements(str(path))


def test_measurement_errors_name_the_line(tmp_path):
    t = [float(x) for x in np.eye(4).reshape(-1)]
    good = json.dumps({"config": 0, "from": "A", "to": "B", "T": t})
    path = tmp_path / "m.jsonl"
    path.write_text(good + "\n" + "{broken\n")
    with pytest.raises(SchemaError, match=":2"):
        load_measurements(str(path))


# ---------------------------------------------------------------------------
# estimates / truth
# ---------------------------------------------------------------------------


def test_estimates_round_trip_and_direction_normalization(tmp_path):
    g = CalibrationGraph()
    g.add_vertex(Vertex(id="A", kind="eye_to_hand_camera", eta=1.0))
    g.add_vertex(Vertex(id="B", kind="eye_to_hand_camera", eta=1.0))
    g.add_edge(Edge("A", "B", "unknown_constant"))
    t = random_transform(7)
    path = tmp_path / "est.json"
    write_estimates(str(path), g, {("A", "B"): t}, "f" * 64)
    digest, back = load_estimates(str(path), g)
    assert digest == "f" * 64
    assert np.max(np.abs(back[("A", "B")].matrix - t.matrix)) < 1e-13

    # a hand-written file storing the transform against the natural direction
    # is inverted on load
    doc = json.loads(path.read_text())
    doc["estimates"][0] = {
        "from": "B",
        "to": "A",
        "T": [float(x) for x in t.inverse().matrix.reshape(-1)],
    }
    path.write_text(json.dumps(doc))
    _, flipped = load_estimates(str(path), g)
    assert np.max(np.abs(flipped[("A", "B")].matrix - t.matrix)) < 1e-12


def test_estimates_reject_duplicates_and_unknown_edges(tmp_path):
    g = CalibrationGraph()
    g.add_vertex(Vertex(id="A", kind="eye_to_hand_camera", eta=1.0))
    g.add_vertex(Vertex(id="B", kind="eye_to_hand_camera", eta=1.0))
    g.add_edge(Edge("A", "B", "unknown_constant"))
    t = [float(x) for x in np.eye(4).reshape(-1)]
    path = tmp_path / "est.json"
    entry = {"from": "A", "to": "B", "T": t}
    path.write_text(
        json.dumps({"system_digest": "g" * 64, "estimates": [entry, entry]})
    )
    with pytest.raises(SchemaError, match="duplicate"):
        load_estimates(str(path), g)
    path.write_text(
        json.dumps(
            {"system_digest": "g" * 64,
             "estimates": [{"from": "A", "to": "Z", "T": t}]}
        )
    )
    with pytest.raises(SchemaError, match="no edge"):
        load_estimates(str(path), g)


def test_truth_round_trip_keeps_seed(tmp_path):
    system, _ = small_system()
    path = tmp_path / "truth.json"
    write_truth(str(path), system.graph, system.true_unknowns(), seed=31,
                system_digest="a" * 64)
    digest, seed, truths = load_truth(str(path), system.graph)
    assert (digest, seed) == ("a" * 64, 31)
    assert set(truths) == set(system.true_unknowns())


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def test_atomic_write_replaces_content_and_leaves_no_temp(tmp_path):
    path = tmp_path / "out.txt"
    atomic_write(str(path), "first\n")
    atomic_write(str(path), "second\n")
    assert path.read_text() == "second\n"
    leftovers = [p for p in tmp_path.iterdir() if p.name.startswith(".tmp-")]
    assert leftovers == []


def test_digest_helpers_agree(tmp_path):
    payload = b"graph calibration artifacts\n"
    path = tmp_path / "blob"
    path.write_bytes(payload)
    assert digest_file(str(path)) == digest_bytes(payload)
