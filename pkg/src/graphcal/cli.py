"""Command-line pipeline: simulate / plan / init / optimize / evaluate.

Artifacts reference each other by SHA-256 digest (a plan knows which system it
was made for), every command leaves a small manifest next to its outputs, and
all writes are atomic.  Exit codes group failures:

    0  success
    2  malformed/mismatched inputs (schema, counts, digest mismatch)
    3  graph defects (disconnected, an unknown edge that no loop can close)
    4  insufficient or degenerate data for initialization
    5  numerical failure inside the optimizer
    1  any other calibration error
"""

from __future__ import annotations

import argparse
import datetime
import os
import sys

import numpy as np

from . import __version__
from .errors import (
    CalibrationError,
    DegenerateMotion,
    Disconnected,
    InsufficientData,
    InvalidCounts,
    MissingEstimate,
    NoLoop,
    NonFiniteResidual,
    SchemaError,
    SingularNormalEquations,
    TooFewPairs,
    UncoverableEdge,
)
from .graph import build_loop_set, minimum_spanning_tree
from .handeye import initialize_tree
from .io import (
    RunManifest,
    digest_file,
    load_estimates,
    load_measurements,
    load_plan,
    load_system,
    load_truth,
    write_estimates,
    write_manifest,
    write_measurements,
    write_plan,
    write_report_csv,
    write_system,
    write_trace_csv,
    write_truth,
)
from .optimizer import (
    SolverConfig,
    build_problem,
    closed_loop_error,
    default_probe_points,
    optimize,
)
from .simulator import (
    STRATEGIES,
    NoiseSpec,
    evaluate_errors,
    generate_system,
    plan_by_strategy,
    random_loop_set,
    random_spanning_tree,
    sample_measurements,
    spawn_seeds,
)

_EXIT_CODES = (
    (SchemaError, 2),
    (InvalidCounts, 2),
    (Disconnected, 3),
    (UncoverableEdge, 3),
    (NoLoop, 3),
    (InsufficientData, 4),
    (DegenerateMotion, 4),
    (TooFewPairs, 4),
    (MissingEstimate, 4),
    (SingularNormalEquations, 5),
    (NonFiniteResidual, 5),
)


def exit_code_for(exc: CalibrationError) -> int:
    for klass, code in _EXIT_CODES:
        if isinstance(exc, klass):
            return code
    return 1


def _utc_now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _require_digest(claimed: str, actual: str, what: str, path: str) -> None:
    if claimed != actual:
        raise SchemaError(
            f"{what} {path} was made for system digest {claimed} "
            f"but the given system hashes to {actual}"
        )


def _manifest_path(out_path: str) -> str:
    return out_path + ".manifest.json"


def _finish_manifest(
    path: str, command: str, seed, inputs: dict, outputs: dict, started: str
) -> None:
    write_manifest(
        path,
        RunManifest(
            command=command,
            tool_version=__version__,
            seed=seed,
            inputs={k: digest_file(v) for k, v in inputs.items()},
            outputs={k: digest_file(v) for k, v in outputs.items()},
            started=started,
            finished=_utc_now(),
        ),
    )


def _solver_config(args, defaults: dict) -> SolverConfig:
    epsilon = args.tol if args.tol is not None else defaults.get("epsilon", 1e-10)
    max_iters = (
        args.max_iters
        if args.max_iters is not None
        else defaults.get("max_iterations", 100)
    )
    return SolverConfig(
        epsilon=epsilon,
        max_iterations=max_iters,
        step_halving_limit=defaults.get("step_halving_limit", 8),
    )


# --- commands -----------------------------------------------------------------

def cmd_plan(args) -> int:
    started = _utc_now()
    graph, _ = load_system(args.system)
    sys_digest = digest_file(args.system)
    if args.strategy == "optimal":
        tree = minimum_spanning_tree(graph, root=args.root)
        loops = build_loop_set(graph, tree)
    elif args.strategy == "random_path":
        tree = random_spanning_tree(graph, seed=args.seed)
        loops = random_loop_set(graph, tree, seed=args.seed)
    else:
        tree, loops = plan_by_strategy(graph, args.strategy, seed=args.seed)
    write_plan(args.out, tree, loops, sys_digest)

    sequence = tree.sequence()
    print(f"root: {tree.root}")
    print(f"measurement sequence ({len(sequence)} tree edges):")
    for i, (parent, child, edge) in enumerate(sequence, 1):
        print(f"  {i:3d}. {parent} -> {child}  [{edge.kind}]")
    print(f"closing loops ({len(loops)}):")
    for i, loop in enumerate(loops, 1):
        cycle = " -> ".join(loop.vertex_cycle())
        print(
            f"  {i:3d}. target {loop.target_key[0]}--{loop.target_key[1]}: "
            f"{cycle}  (omega={loop.omega:.4f})"
        )
    _finish_manifest(
        _manifest_path(args.out),
        "plan",
        args.seed,
        {"system": args.system},
        {"plan": args.out},
        started,
    )
    return 0


def _load_pipeline_inputs(args):
    graph, defaults = load_system(args.system)
    sys_digest = digest_file(args.system)
    claimed, tree, loops = load_plan(args.plan, graph)
    _require_digest(claimed, sys_digest, "plan", args.plan)
    records, meas_digest = load_measurements(args.measurements)
    if meas_digest is not None:
        _require_digest(meas_digest, sys_digest, "measurements", args.measurements)
    return graph, defaults, sys_digest, tree, loops, records


def cmd_init(args) -> int:
    started = _utc_now()
    graph, _, sys_digest, tree, loops, records = _load_pipeline_inputs(args)
    estimates = initialize_tree(graph, tree, records)
    write_estimates(args.out, graph, estimates, sys_digest)
    print(f"initialized {len(estimates)} unknown transform(s)")
    for key in sorted(estimates):
        print(f"  {key[0]} -> {key[1]}")
    _finish_manifest(
        _manifest_path(args.out),
        "init",
        None,
        {
            "system": args.system,
            "plan": args.plan,
            "measurements": args.measurements,
        },
        {"estimates": args.out},
        started,
    )
    return 0


def cmd_optimize(args) -> int:
    started = _utc_now()
    graph, defaults, sys_digest, tree, loops, records = _load_pipeline_inputs(args)
    inputs = {
        "system": args.system,
        "plan": args.plan,
        "measurements": args.measurements,
    }
    if args.estimates is not None:
        est_digest, estimates = load_estimates(args.estimates, graph)
        _require_digest(est_digest, sys_digest, "estimates", args.estimates)
        inputs["estimates"] = args.estimates
    else:
        estimates = initialize_tree(graph, tree, records)

    probes = default_probe_points(defaults.get("probe_scale_mm", 100.0))
    problem = build_problem(graph, loops, records, estimates, probe_points=probes)
    config = _solver_config(args, defaults)
    before = closed_loop_error(problem)
    refined, trace = optimize(problem, config)
    after = closed_loop_error(problem, refined)

    summary = {
        "iterations": trace.rows[-1].iteration,
        "closed_loop_error_before_mm": before.overall_mm,
        "closed_loop_error_after_mm": after.overall_mm,
    }
    write_estimates(args.out, graph, refined, sys_digest, summary=summary)
    trace_path = args.trace or os.path.splitext(args.out)[0] + ".trace.csv"
    write_trace_csv(trace_path, trace)
    print(
        f"closed-loop error: {before.overall_mm:.6f} mm -> "
        f"{after.overall_mm:.6f} mm in {summary['iterations']} iteration(s)"
    )
    _finish_manifest(
        _manifest_path(args.out),
        "optimize",
        None,
        inputs,
        {"estimates": args.out, "trace": trace_path},
        started,
    )
    return 0


def cmd_simulate(args) -> int:
    started = _utc_now()
    if args.cameras is not None and (args.eih is not None or args.eth is not None):
        raise InvalidCounts("give either --cameras or --eih/--eth, not both")
    if args.cameras is None and args.eih is None and args.eth is None:
        raise InvalidCounts("specify camera counts with --eih/--eth or --cameras")

    seeds = spawn_seeds(args.seed, 4)
    if args.cameras is not None:
        if args.cameras < 0:
            raise InvalidCounts(f"--cameras must be >= 0, got {args.cameras}")
        split_rng = np.random.default_rng(seeds[1])
        n_eih = int(split_rng.integers(0, min(args.cameras, args.robots) + 1))
        n_eth = args.cameras - n_eih
    else:
        n_eih = args.eih if args.eih is not None else 0
        n_eth = args.eth if args.eth is not None else 0

    system = generate_system(
        args.robots, n_eih, n_eth, workspace_extent_mm=args.extent, seed=seeds[0]
    )
    noise = NoiseSpec.from_mm(args.noise_mm)
    records = sample_measurements(system, args.configs, noise, seed=seeds[2])

    os.makedirs(args.out, exist_ok=True)
    paths = {
        "system": os.path.join(args.out, "system.json"),
        "truth": os.path.join(args.out, "truth.json"),
        "measurements": os.path.join(args.out, "measurements.jsonl"),
    }
    write_system(paths["system"], system.graph)
    sys_digest = digest_file(paths["system"])
    write_truth(
        paths["truth"], system.graph, system.true_unknowns(), args.seed, sys_digest
    )
    write_measurements(paths["measurements"], records, sys_digest)
    print(
        f"simulated {args.robots} robot(s), {n_eih} hand camera(s), "
        f"{n_eth} stationary camera(s); {len(records)} measurements "
        f"over {args.configs} configuration(s)"
    )

    if args.strategy is not None:
        tree, loops = plan_by_strategy(system.graph, args.strategy, seed=seeds[3])
        paths["plan"] = os.path.join(args.out, "plan.json")
        write_plan(paths["plan"], tree, loops, sys_digest)
        estimates = initialize_tree(system.graph, tree, records)
        problem = build_problem(system.graph, loops, records, estimates)
        config = _solver_config(args, {})
        before = closed_loop_error(problem)
        refined, trace = optimize(problem, config)
        after = closed_loop_error(problem, refined)
        summary = {
            "iterations": trace.rows[-1].iteration,
            "closed_loop_error_before_mm": before.overall_mm,
            "closed_loop_error_after_mm": after.overall_mm,
        }
        paths["estimates"] = os.path.join(args.out, "estimates.json")
        paths["trace"] = os.path.join(args.out, "trace.csv")
        paths["report"] = os.path.join(args.out, "report.csv")
        write_estimates(paths["estimates"], system.graph, refined, sys_digest, summary)
        write_trace_csv(paths["trace"], trace)
        report = evaluate_errors(refined, system.true_unknowns())
        write_report_csv(paths["report"], report)
        print(
            f"{args.strategy}: closed-loop error {before.overall_mm:.6f} mm -> "
            f"{after.overall_mm:.6f} mm in {summary['iterations']} iteration(s)"
        )
        print(
            f"vs truth: mean translation error "
            f"{report.mean_translation_norm_mm:.6f} mm, mean rotation error "
            f"{report.mean_rotation_angle_rad:.3e} rad"
        )

    _finish_manifest(
        os.path.join(args.out, "manifest.json"),
        "simulate",
        args.seed,
        {},
        paths,
        started,
    )
    return 0


def cmd_evaluate(args) -> int:
    started = _utc_now()
    graph, _ = load_system(args.system)
    sys_digest = digest_file(args.system)
    est_digest, estimates = load_estimates(args.estimates, graph)
    _require_digest(est_digest, sys_digest, "estimates", args.estimates)
    truth_digest, _, truths = load_truth(args.truth, graph)
    if truth_digest is not None:
        _require_digest(truth_digest, sys_digest, "truth", args.truth)
    report = evaluate_errors(estimates, truths)
    write_report_csv(args.out, report)
    for e in report.per_edge:
        print(
            f"{e.key[0]} -> {e.key[1]}: {e.translation_norm_mm:.6f} mm, "
            f"{e.rotation_angle_rad:.3e} rad"
        )
    print(
        f"mean: {report.mean_translation_norm_mm:.6f} mm, "
        f"{report.mean_rotation_angle_rad:.3e} rad"
    )
    print(
        f"max:  {report.max_translation_norm_mm:.6f} mm, "
        f"{report.max_rotation_angle_rad:.3e} rad"
    )
    _finish_manifest(
        _manifest_path(args.out),
        "evaluate",
        None,
        {"system": args.system, "estimates": args.estimates, "truth": args.truth},
        {"report": args.out},
        started,
    )
    return 0


# --- parser -------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graphcal",
        description="Graph-based multi-robot/camera extrinsic calibration.",
    )
    parser.add_argument("--version", action="version", version=f"graphcal {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="choose measurement sequence and closing loops")
    p.add_argument("--system", required=True, help="system description JSON")
    p.add_argument("--out", required=True, help="output plan JSON")
    p.add_argument("--root", default=None, help="spanning tree root vertex id")
    p.add_argument(
        "--strategy", choices=STRATEGIES, default="optimal", help="planning strategy"
    )
    p.add_argument("--seed", type=int, default=0, help="seed for random strategies")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("init", help="closed-form initial estimates from measurements")
    p.add_argument("--system", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--measurements", required=True)
    p.add_argument("--out", required=True, help="output estimates JSON")
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("optimize", help="refine estimates over the closing loops")
    p.add_argument("--system", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--measurements", required=True)
    p.add_argument(
        "--estimates",
        default=None,
        help="initial estimates JSON (default: initialize in place)",
    )
    p.add_argument("--out", required=True, help="output refined estimates JSON")
    p.add_argument("--trace", default=None, help="trace CSV (default: <out>.trace.csv)")
    p.add_argument("--tol", type=float, default=None, help="step-size stop tolerance")
    p.add_argument("--max-iters", type=int, default=None, help="iteration cap")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("simulate", help="generate a synthetic rig and measurements")
    p.add_argument("--robots", type=int, required=True)
    p.add_argument("--eih", type=int, default=None, help="hand-mounted cameras")
    p.add_argument("--eth", type=int, default=None, help="stationary cameras")
    p.add_argument(
        "--cameras",
        type=int,
        default=None,
        help="total cameras, split randomly between hand and stationary",
    )
    p.add_argument("--configs", type=int, default=30, help="rig configurations")
    p.add_argument("--noise-mm", type=float, default=0.0, help="translation sigma (mm)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--extent", type=float, default=2000.0, help="workspace extent (mm)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument(
        "--strategy",
        choices=STRATEGIES,
        default=None,
        help="also run the full pipeline with this strategy",
    )
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--max-iters", type=int, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="compare estimates against ground truth")
    p.add_argument("--system", required=True)
    p.add_argument("--estimates", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True, help="output report CSV")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CalibrationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
