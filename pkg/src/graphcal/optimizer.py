"""Gauss-Newton refinement of unknown transforms under closed-loop constraints.

The cost is a stacked weighted point-transfer residual: for every loop k,
configuration snapshot j, and probe point p,

    r_kjp = sqrt(omega_k) * ((prod of loop-k step transforms at j) @ p~ - p~)[:3]

Unknown edges are shared across loops (one 6-dof block each) and updated
multiplicatively, X <- exp_map(delta_xi) @ X, which keeps iterates exactly on
SE(3).  Jacobian blocks are analytic; finite differences are only used by the
test suite as an independent check.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import (
    InsufficientData,
    MissingEstimate,
    NonFiniteResidual,
    SingularNormalEquations,
)
from .graph import CalibrationGraph, CalibrationLoop
from .handeye import index_records
from .se3 import Transform, exp_many, inv_many, skew_many

DEFAULT_PROBE_SCALE_MM = 100.0

# Damping ladder for the normal equations, as multiples of trace/dim.
_DAMPING_FLOOR = 1e-12
_DAMPING_CEILING = 1e-3


def default_probe_points(scale_mm: float = DEFAULT_PROBE_SCALE_MM) -> np.ndarray:
    """Origin plus one point per axis: displaces under all six DoF."""
    s = float(scale_mm)
    return np.array([[0.0, 0.0, 0.0], [s, 0.0, 0.0], [0.0, s, 0.0], [0.0, 0.0, s]])


@dataclass(frozen=True)
class SolverConfig:
    epsilon: float = 1e-10
    max_iterations: int = 100
    step_halving_limit: int = 8

    def __post_init__(self) -> None:
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.step_halving_limit < 0:
            raise ValueError("step_halving_limit must be >= 0")


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    mean_error_mm: float
    step_inf_norm: float
    # total weighted squared residual; diagnostic only, not serialized to CSV
    weighted_cost: float


@dataclass
class ConvergenceTrace:
    rows: list[TraceRow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)


# --- problem assembly ---------------------------------------------------------

@dataclass(frozen=True)
class FixedStep:
    """Product of consecutive measured steps, one 4x4 per configuration."""

    stack: np.ndarray  # (M, 4, 4)


@dataclass(frozen=True)
class UnknownStep:
    index: int  # into OptimizationProblem.unknown_keys
    reverse: bool


@dataclass(frozen=True)
class ProblemLoop:
    omega: float
    steps: tuple
    configs: tuple[int, ...]
    target_key: tuple[str, str]


@dataclass
class OptimizationProblem:
    unknown_keys: list[tuple[str, str]]
    loops: list[ProblemLoop]
    probes: np.ndarray  # (P, 3)
    probes_h: np.ndarray  # (4, P) homogeneous, cached for products
    estimates: dict[tuple[str, str], Transform]


def build_problem(
    graph: CalibrationGraph,
    loops: list[CalibrationLoop],
    records,
    estimates: dict[tuple[str, str], Transform],
    probe_points: np.ndarray | None = None,
) -> OptimizationProblem:
    probes = (
        default_probe_points() if probe_points is None else np.asarray(probe_points, float)
    )
    if probes.ndim != 2 or probes.shape[1] != 3 or probes.shape[0] < 1:
        raise ValueError(f"probe points must be (P, 3), got {probes.shape}")
    probes_h = np.vstack([probes.T, np.ones(probes.shape[0])])

    indexed = index_records(graph, records)
    unknown_keys = sorted(
        {
            s.edge.key
            for loop in loops
            for s in loop.steps
            if s.edge.kind == "unknown_constant"
        }
    )
    for key in unknown_keys:
        if key not in estimates:
            raise MissingEstimate(f"no initial estimate for unknown edge {key!r}")
    index_of = {key: i for i, key in enumerate(unknown_keys)}

    ploops: list[ProblemLoop] = []
    for loop in loops:
        measured_keys = [s.edge.key for s in loop.steps if s.edge.measured]
        configs: set[int] | None = None
        for key in measured_keys:
            have = set(indexed.get(key, {}))
            configs = have if configs is None else configs & have
        config_list = sorted(configs) if configs else []
        if measured_keys and not config_list:
            raise InsufficientData(
                f"loop covering {loop.target_key!r} shares no configuration "
                f"across its measured edges"
            )
        if not measured_keys:
            # loop of unknowns only; evaluate it once per problem, not per config
            config_list = [min(min(indexed[k]) for k in indexed)] if indexed else [0]
        m = len(config_list)

        steps: list = []
        run: np.ndarray | None = None
        for s in loop.steps:
            if s.edge.kind == "unknown_constant":
                if run is not None:
                    steps.append(FixedStep(stack=run))
                    run = None
                steps.append(UnknownStep(index=index_of[s.edge.key], reverse=s.reverse))
            else:
                stack = np.stack([indexed[s.edge.key][c].matrix for c in config_list])
                if s.reverse:
                    stack = inv_many(stack)
                run = stack if run is None else run @ stack
        if run is not None:
            steps.append(FixedStep(stack=run))
        ploops.append(
            ProblemLoop(
                omega=loop.omega,
                steps=tuple(steps),
                configs=tuple(config_list),
                target_key=loop.target_key,
            )
        )
    return OptimizationProblem(
        unknown_keys=unknown_keys,
        loops=ploops,
        probes=probes,
        probes_h=probes_h,
        estimates=dict(estimates),
    )


# --- evaluation ---------------------------------------------------------------

def _state_matrices(problem: OptimizationProblem, estimates) -> list[np.ndarray]:
    mats = []
    for key in problem.unknown_keys:
        if key not in estimates:
            raise MissingEstimate(f"no estimate for unknown edge {key!r}")
        mats.append(estimates[key].matrix)
    return mats


def _step_stacks(ploop: ProblemLoop, mats: list[np.ndarray]) -> list[np.ndarray]:
    m = len(ploop.configs)
    out = []
    for step in ploop.steps:
        if isinstance(step, FixedStep):
            out.append(step.stack)
        else:
            x = mats[step.index]
            if step.reverse:
                x = inv_many(x[None])[0]
            out.append(np.broadcast_to(x, (m, 4, 4)))
    return out


def _displacement(total: np.ndarray, probes_h: np.ndarray, probes: np.ndarray) -> np.ndarray:
    """(M, 4, 4) loop products -> (M, P, 3) probe displacements."""
    moved = np.einsum("mij,jp->mip", total, probes_h)
    return moved[:, :3, :].transpose(0, 2, 1) - probes[None, :, :]


def _loop_displacement(ploop, mats, probes_h, probes) -> np.ndarray:
    stacks = _step_stacks(ploop, mats)
    total = stacks[0]
    for s in stacks[1:]:
        total = total @ s
    return _displacement(total, probes_h, probes)


def _loop_linearization(ploop, mats, probes_h, probes):
    """Displacement (M, P, 3) plus per-unknown Jacobian blocks (M, P, 3, 6).

    For an unknown at step i perturbed by X <- exp(d)X the loop product is
    T0 @ exp(+-d) @ W with T0 the product before the perturbation and W the
    product from the unknown (inclusive) onward; the block is
    +-[R_T0 | -R_T0 @ skew((W p~)[:3])].  Reversed traversal flips the sign
    and shifts the split one step right, since (exp(d)X)^-1 = X^-1 exp(-d).
    """
    stacks = _step_stacks(ploop, mats)
    m, n_probes = len(ploop.configs), probes.shape[0]
    n_steps = len(stacks)
    eye = np.broadcast_to(np.eye(4), (m, 4, 4))
    pre = [eye]
    for s in stacks:
        pre.append(pre[-1] @ s)
    post = [None] * (n_steps + 1)
    post[n_steps] = eye
    for i in range(n_steps - 1, -1, -1):
        post[i] = stacks[i] @ post[i + 1]

    disp = _displacement(pre[n_steps], probes_h, probes)
    blocks: dict[int, np.ndarray] = {}
    for i, step in enumerate(ploop.steps):
        if not isinstance(step, UnknownStep):
            continue
        if step.reverse:
            t0, w, sign = pre[i + 1], post[i + 1], -1.0
        else:
            t0, w, sign = pre[i], post[i], 1.0
        q = np.einsum("mij,jp->mip", w, probes_h)[:, :3, :].transpose(0, 2, 1)
        r0 = t0[:, :3, :3]
        sk = skew_many(q.reshape(-1, 3)).reshape(m, n_probes, 3, 3)
        block = np.empty((m, n_probes, 3, 6))
        block[..., :3] = np.broadcast_to(r0[:, None, :, :], (m, n_probes, 3, 3))
        block[..., 3:] = -np.einsum("mab,mpbc->mpac", r0, sk)
        if sign < 0:
            block = -block
        if step.index in blocks:
            blocks[step.index] = blocks[step.index] + block
        else:
            blocks[step.index] = block
    return disp, blocks


def loop_residual(problem: OptimizationProblem, estimates=None) -> np.ndarray:
    """Stacked weighted residual in (loop, snapshot, probe) lexicographic order."""
    est = problem.estimates if estimates is None else estimates
    mats = _state_matrices(problem, est)
    parts = []
    for ploop in problem.loops:
        disp = _loop_displacement(ploop, mats, problem.probes_h, problem.probes)
        parts.append(np.sqrt(ploop.omega) * disp.reshape(-1))
    return np.concatenate(parts) if parts else np.zeros(0)


def analytic_jacobian(problem: OptimizationProblem, estimates=None) -> np.ndarray:
    """Dense Jacobian of loop_residual w.r.t. the stacked twists (6 per unknown)."""
    est = problem.estimates if estimates is None else estimates
    mats = _state_matrices(problem, est)
    n_cols = 6 * len(problem.unknown_keys)
    row_counts = [len(p.configs) * problem.probes.shape[0] * 3 for p in problem.loops]
    jac = np.zeros((sum(row_counts), n_cols))
    row = 0
    for ploop, count in zip(problem.loops, row_counts):
        _, blocks = _loop_linearization(ploop, mats, problem.probes_h, problem.probes)
        sw = np.sqrt(ploop.omega)
        for idx, block in blocks.items():
            jac[row : row + count, 6 * idx : 6 * idx + 6] = sw * block.reshape(-1, 6)
        row += count
    return jac


@dataclass(frozen=True)
class ClosedLoopReport:
    overall_mm: float
    per_loop_mm: list[float]


def closed_loop_error(problem: OptimizationProblem, estimates=None) -> ClosedLoopReport:
    """Unweighted mean probe displacement per loop and over all (loop, snapshot)."""
    est = problem.estimates if estimates is None else estimates
    mats = _state_matrices(problem, est)
    per_loop = []
    pooled = []
    for ploop in problem.loops:
        disp = _loop_displacement(ploop, mats, problem.probes_h, problem.probes)
        per_snapshot = np.linalg.norm(disp, axis=2).mean(axis=1)  # (M,)
        per_loop.append(float(per_snapshot.mean()))
        pooled.append(per_snapshot)
    overall = float(np.concatenate(pooled).mean()) if pooled else 0.0
    return ClosedLoopReport(overall_mm=overall, per_loop_mm=per_loop)


# --- solving -------------------------------------------------------------------

def _solve_damped(h: np.ndarray, g: np.ndarray) -> np.ndarray:
    dim = h.shape[0]
    trace = float(np.trace(h))
    scale = trace / dim if trace > 0.0 else 1.0
    lam = _DAMPING_FLOOR
    while True:
        try:
            factor = scipy.linalg.cho_factor(h + lam * scale * np.eye(dim))
            delta = scipy.linalg.cho_solve(factor, -g)
            if np.all(np.isfinite(delta)):
                return delta
        except np.linalg.LinAlgError:
            pass
        if lam >= _DAMPING_CEILING:
            raise SingularNormalEquations(
                f"normal equations not positive definite at damping "
                f"{lam:.0e} * trace/dim"
            )
        lam *= 10.0


def gauss_newton_step(jacobian: np.ndarray, residual: np.ndarray) -> np.ndarray:
    """Damped normal-equations step: solves (J'J + lambda I) d = -J'r."""
    h = jacobian.T @ jacobian
    g = jacobian.T @ residual
    return _solve_damped(h, g)


def _normal_equations(problem, mats):
    """Accumulate J'J and J'r loop-by-loop; identical to the dense route but
    never materializes the full Jacobian (it grows as loops x configs x probes)."""
    n = 6 * len(problem.unknown_keys)
    h = np.zeros((n, n))
    g = np.zeros(n)
    cost = 0.0
    snapshots = []
    for ploop in problem.loops:
        disp, blocks = _loop_linearization(ploop, mats, problem.probes_h, problem.probes)
        r = disp.reshape(-1)
        cost += ploop.omega * float(r @ r)
        snapshots.append(np.linalg.norm(disp, axis=2).mean(axis=1))
        flat = {i: b.reshape(-1, 6) for i, b in sorted(blocks.items())}
        for i, bi in flat.items():
            g[6 * i : 6 * i + 6] += ploop.omega * (bi.T @ r)
            for j, bj in flat.items():
                if j < i:
                    continue
                hij = ploop.omega * (bi.T @ bj)
                h[6 * i : 6 * i + 6, 6 * j : 6 * j + 6] += hij
                if j != i:
                    h[6 * j : 6 * j + 6, 6 * i : 6 * i + 6] += hij.T
    return h, g, cost, snapshots


def _evaluate_cost(problem, mats):
    cost = 0.0
    snapshots = []
    for ploop in problem.loops:
        disp = _loop_displacement(ploop, mats, problem.probes_h, problem.probes)
        r = disp.reshape(-1)
        cost += ploop.omega * float(r @ r)
        snapshots.append(np.linalg.norm(disp, axis=2).mean(axis=1))
    return cost, snapshots


def _overall_error(snapshots) -> float:
    return float(np.concatenate(snapshots).mean()) if snapshots else 0.0


def _apply_step(mats, step_vec):
    updates = exp_many(step_vec.reshape(-1, 6))
    return [updates[i] @ mats[i] for i in range(len(mats))]


def optimize(
    problem: OptimizationProblem, config: SolverConfig | None = None
) -> tuple[dict[tuple[str, str], Transform], ConvergenceTrace]:
    """Iterate Gauss-Newton with step halving until the update stalls.

    Returns refined estimates for every key in the input estimate map (only
    unknowns that appear in loops move) and the per-iteration trace.  The
    returned state is never worse, in mean closed-loop error, than the input.
    """
    cfg = config or SolverConfig()
    mats = _state_matrices(problem, problem.estimates)
    cost, snapshots = _evaluate_cost(problem, mats)
    if not np.isfinite(cost):
        raise NonFiniteResidual("initial residual is not finite")
    err = _overall_error(snapshots)
    trace = ConvergenceTrace(rows=[TraceRow(0, err, 0.0, cost)])
    best_err, best_mats = err, mats

    for iteration in range(1, cfg.max_iterations + 1):
        h, g, cost, _ = _normal_equations(problem, mats)
        delta = _solve_damped(h, g)

        accepted = None
        saw_non_finite = False
        scale = 1.0
        for _ in range(cfg.step_halving_limit + 1):
            cand_step = delta * scale
            cand_mats = _apply_step(mats, cand_step)
            cand_cost, cand_snapshots = _evaluate_cost(problem, cand_mats)
            if not np.isfinite(cand_cost):
                saw_non_finite = True
            elif cand_cost < cost:
                accepted = (cand_step, cand_mats, cand_cost, cand_snapshots)
                break
            scale *= 0.5
        if accepted is None:
            if saw_non_finite:
                raise NonFiniteResidual("residual became non-finite during stepping")
            break  # no halved step improves the cost: converged/stalled
        step_vec, mats, cost, snapshots = accepted
        err = _overall_error(snapshots)
        step_norm = float(np.max(np.abs(step_vec)))
        trace.rows.append(TraceRow(iteration, err, step_norm, cost))
        if err < best_err:
            best_err, best_mats = err, mats
        if step_norm <= cfg.epsilon:
            break

    if best_err < _overall_error(snapshots):
        mats = best_mats
    refined = dict(problem.estimates)
    for key, mat in zip(problem.unknown_keys, mats):
        refined[key] = Transform(np.array(mat))
    return refined, trace
