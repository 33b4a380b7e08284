"""Graph-based extrinsic calibration of multi-robot, multi-camera rigs.

Workflow: describe the rig as a calibration graph, span it with a
minimum-phi tree to order the measurements, close every unknown edge with a
cheapest loop, initialize the unknowns in closed form, then refine everything
jointly with a Gauss-Newton pass over the loop-closure residuals.
"""

__version__ = "0.1.0"

from .errors import (
    AngleNearPi,
    CalibrationError,
    DegenerateMotion,
    Disconnected,
    InsufficientData,
    InvalidCounts,
    MissingEstimate,
    NoLoop,
    NonFiniteResidual,
    NonPositiveEta,
    NotSymmetric,
    SchemaError,
    SingularNormalEquations,
    TooFewPairs,
    UncoverableEdge,
)
from .se3 import Transform, Twist, exp_map, log_map, project_rotation, tangent_mean
from .graph import (
    CalibrationGraph,
    CalibrationLoop,
    Edge,
    SpanningTree,
    Vertex,
    build_loop_set,
    calibration_sequence,
    edge_weight,
    eta_from_covariance,
    find_optimal_loop,
    loop_weight,
    minimum_spanning_tree,
)
from .handeye import (
    AxXbSolution,
    MeasurementRecord,
    MotionPair,
    initialize_tree,
    relative_pose_shared_target,
    solve_ax_xb,
)
from .optimizer import (
    OptimizationProblem,
    SolverConfig,
    analytic_jacobian,
    build_problem,
    closed_loop_error,
    gauss_newton_step,
    loop_residual,
    optimize,
)
from .simulator import (
    GroundTruthSystem,
    NoiseSpec,
    evaluate_errors,
    generate_system,
    random_loop_set,
    random_spanning_tree,
    run_experiment,
    sample_measurements,
)

__all__ = [
    "__version__",
    # errors
    "AngleNearPi",
    "CalibrationError",
    "DegenerateMotion",
    "Disconnected",
    "InsufficientData",
    "InvalidCounts",
    "MissingEstimate",
    "NoLoop",
    "NonFiniteResidual",
    "NonPositiveEta",
    "NotSymmetric",
    "SchemaError",
    "SingularNormalEquations",
    "TooFewPairs",
    "UncoverableEdge",
    # geometry
    "Transform",
    "Twist",
    "exp_map",
    "log_map",
    "project_rotation",
    "tangent_mean",
    # graph
    "CalibrationGraph",
    "CalibrationLoop",
    "Edge",
    "SpanningTree",
    "Vertex",
    "build_loop_set",
    "calibration_sequence",
    "edge_weight",
    "eta_from_covariance",
    "find_optimal_loop",
    "loop_weight",
    "minimum_spanning_tree",
    # initialization
    "AxXbSolution",
    "MeasurementRecord",
    "MotionPair",
    "initialize_tree",
    "relative_pose_shared_target",
    "solve_ax_xb",
    # optimizer
    "OptimizationProblem",
    "SolverConfig",
    "analytic_jacobian",
    "build_problem",
    "closed_loop_error",
    "gauss_newton_step",
    "loop_residual",
    "optimize",
    # simulator
    "GroundTruthSystem",
    "NoiseSpec",
    "evaluate_errors",
    "generate_system",
    "random_loop_set",
    "random_spanning_tree",
    "run_experiment",
    "sample_measurements",
]
