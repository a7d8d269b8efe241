"""Successive convexification for the free-final-time descent problem."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ..attitude import slerp
from ..trajectory import DescentProblem, TrajectoryPlan
from .conic import ConicSolverError, solve_socp
from .discretize import IntegrationError, linearize_system
from .dynamics import VehicleConstants, propagate
from .subproblem import SIGMA_MIN, ScvxWeights, assemble_subproblem, extract_solution

NU_TOL = 1e-6
STEP_TOL = 1e-4
MAX_ITERATIONS = 30


class SubproblemFailure(RuntimeError):
    def __init__(self, iteration: int, cause: Exception):
        super().__init__(f"subproblem failed at iteration {iteration}: {cause}")
        self.iteration = iteration
        self.cause = cause


@dataclass
class IterationRecord:
    iteration: int
    objective: float
    nu_norm: float
    step: float
    trust_radius: float
    delta_sigma: float
    sigma: float
    status: str
    solve_time: float


@dataclass
class IterationLog:
    records: list[IterationRecord] = field(default_factory=list)
    converged: bool = False
    wall_time: float = 0.0

    @property
    def iterations(self) -> int:
        return len(self.records)

    def to_text(self) -> str:
        """One JSON object per line, then a summary line."""
        lines = [json.dumps(asdict(r), sort_keys=True) for r in self.records]
        lines.append(json.dumps({"converged": self.converged, "iterations": self.iterations,
                                 "wall_time": self.wall_time}, sort_keys=True))
        return "\n".join(lines) + "\n"


def default_initial_guess(problem: DescentProblem) -> tuple[TrajectoryPlan, float]:
    """Straight-line positions, linear mass, slerped attitude, hover thrust."""
    K = problem.K
    s = np.linspace(0.0, 1.0, K)
    X = np.zeros((14, K))
    X[0] = problem.m_wet + s * (problem.m_dry - problem.m_wet)
    X[1:4] = np.outer(problem.r0, 1 - s) + np.outer(problem.final_position, s)
    X[4:7] = np.outer(problem.v0, 1 - s) + np.outer(problem.v_final, s)
    X[7:11] = slerp(problem.q0, problem.q_final, s).T
    X[11:14] = np.outer(problem.w0, 1 - s)
    U = np.zeros((3, K))
    U[0] = np.clip(X[0] * np.linalg.norm(problem.g), problem.T_min, problem.T_max)
    return TrajectoryPlan.from_state_control(X, U), float(problem.tf_guess)


def estimate_time_scale(plan: TrajectoryPlan, problem: DescentProblem | None = None) -> float:
    """Least-squares flight time from node displacements and mean velocities."""
    r, v = plan.r, plan.v
    K = plan.nodes
    dr = np.diff(r, axis=1).ravel()
    vbar = (0.5 * (v[:, 1:] + v[:, :-1]) / (K - 1)).ravel()
    denom = float(vbar @ vbar)
    fallback = problem.tf_guess if problem is not None else 1.0
    if denom < 1e-12:
        return float(fallback)
    sigma = float(dr @ vbar) / denom
    if not np.isfinite(sigma) or sigma < SIGMA_MIN:
        return float(fallback)
    return sigma


@dataclass(frozen=True, eq=False)
class ScvxResult:
    plan: TrajectoryPlan
    sigma: float
    log: IterationLog

    @property
    def converged(self) -> bool:
        return self.log.converged

    def __iter__(self):
        return iter((self.plan, self.sigma, self.log))

    def resume_weights(self, weights: ScvxWeights | None = None) -> ScvxWeights:
        """Weights whose trust schedule continues where this run stopped.

        Convergence is reached partly by the growing trust weight, so a
        restart from this solution is a fixed point only under these weights.
        """
        return (weights or ScvxWeights()).at_iteration(max(self.log.iterations, 1))


def scvx_solve(problem: DescentProblem, weights: ScvxWeights | None = None,
               initial_guess: TrajectoryPlan | None = None, initial_sigma: float | None = None,
               max_iterations: int = MAX_ITERATIONS, substeps: int = 15) -> ScvxResult:
    """Iterate convex subproblems until virtual control and step size vanish.

    A non-converged run returns the latest iterate whose virtual control is no
    worse than the best seen (or below tolerance), flagged via ``log.converged``.
    """
    weights = weights or ScvxWeights()
    if initial_guess is None:
        plan, sigma = default_initial_guess(problem)
        if initial_sigma is not None:
            sigma = float(initial_sigma)
    else:
        if initial_guess.nodes != problem.K:
            raise ValueError(f"initial guess has {initial_guess.nodes} nodes, expected {problem.K}")
        plan = initial_guess.with_unit_quaternions()
        sigma = float(initial_sigma) if initial_sigma is not None else estimate_time_scale(plan, problem)
    X_ref, U_ref = plan.state_control()
    consts = VehicleConstants.from_problem(problem)
    log = IterationLog()
    best = None
    start = time.perf_counter()
    for it in range(1, max_iterations + 1):
        t0 = time.perf_counter()
        try:
            dyn = linearize_system(X_ref, U_ref, sigma, consts, substeps)
            program = assemble_subproblem(dyn, problem, weights.at_iteration(it), X_ref, U_ref, sigma)
            sub = extract_solution(program, solve_socp(program))
        except (ConicSolverError, IntegrationError) as exc:
            raise SubproblemFailure(it, exc) from exc
        step = float(np.max(np.sqrt(np.sum((sub.X - X_ref) ** 2, axis=0) + np.sum((sub.U - U_ref) ** 2, axis=0))))
        step = max(step, abs(sub.sigma - sigma))
        log.records.append(IterationRecord(
            iteration=it, objective=sub.objective, nu_norm=sub.nu_norm, step=step,
            trust_radius=float(np.max(sub.delta)), delta_sigma=sub.delta_sigma, sigma=sub.sigma,
            status=sub.status, solve_time=time.perf_counter() - t0,
        ))
        X_ref, U_ref, sigma = sub.X, sub.U, sub.sigma
        if best is None or sub.nu_norm <= max(best[0], NU_TOL):
            best = (sub.nu_norm, X_ref, U_ref, sigma)
        if sub.nu_norm < NU_TOL and step < STEP_TOL:
            log.converged = True
            break
    if not log.converged:
        _, X_ref, U_ref, sigma = best
    log.wall_time = time.perf_counter() - start
    out = TrajectoryPlan.from_state_control(X_ref, U_ref)
    return ScvxResult(out, float(sigma), log)
