"""Convex subproblem of one successive-convexification iteration."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..trajectory import DescentProblem
from .conic import ConicBuilder, ConicProgram, ConicSolution
from .discretize import DiscretizedDynamics
from .dynamics import IDX_M, IDX_Q, IDX_R, IDX_V, IDX_W

SIGMA_MIN = 0.1


@dataclass(frozen=True)
class ScvxWeights:
    w_nu: float = 1e5
    w_delta: float = 1e-3
    w_delta_sigma: float = 1e-1
    # the state trust-region weight at iteration i is
    # min(w_delta * growth**(i-1), w_delta_max)
    w_delta_growth: float = 2.0
    w_delta_max: float = 1e6

    def __post_init__(self):
        if min(self.w_nu, self.w_delta, self.w_delta_sigma) <= 0:
            raise ValueError("SCvx weights must be strictly positive")
        if self.w_delta_growth < 1:
            raise ValueError("trust-region weight growth must be at least 1")
        if self.w_delta_max < self.w_delta:
            raise ValueError("w_delta_max must be at least w_delta")

    def delta_weight(self, i: int) -> float:
        return min(self.w_delta * self.w_delta_growth ** (i - 1), self.w_delta_max)

    def at_iteration(self, i: int) -> "ScvxWeights":
        return replace(self, w_delta=self.delta_weight(i), w_delta_max=max(self.w_delta_max, self.delta_weight(i)))


@dataclass(frozen=True, eq=False)
class SubproblemSolution:
    X: np.ndarray
    U: np.ndarray
    sigma: float
    nu: np.ndarray
    delta: np.ndarray
    delta_sigma: float
    objective: float
    status: str
    primal_residual: float
    duality_gap: float

    @property
    def nu_norm(self) -> float:
        return float(np.sum(np.abs(self.nu)))


def _fix(builder, name, cols, values):
    cols = np.ravel(cols)
    builder.equal(name, np.arange(cols.size), cols, np.ones(cols.size), -np.ravel(values))


def assemble_subproblem(dyn: DiscretizedDynamics, problem: DescentProblem, weights: ScvxWeights,
                        X_ref: np.ndarray, U_ref: np.ndarray, sigma_ref: float) -> ConicProgram:
    nx, K = X_ref.shape
    nu_dim = U_ref.shape[0]
    if dyn.intervals != K - 1 or dyn.A.shape[1] != nx or dyn.B.shape[2] != nu_dim:
        raise ValueError("discretization does not match the reference shape")
    if K != problem.K:
        raise ValueError(f"reference has {K} nodes, problem expects {problem.K}")
    n = K - 1

    b = ConicBuilder()
    X = b.variable("X", (nx, K))
    U = b.variable("U", (nu_dim, K))
    sigma = b.variable("sigma", 1)[0]
    nu = b.variable("nu", (nx, n))
    nu_abs = b.variable("nu_abs", (nx, n))
    delta = b.variable("delta", K)
    delta_norm = b.variable("delta_norm", 1)[0]
    delta_sigma = b.variable("delta_sigma", 1)[0]

    b.minimize([sigma], 1.0)
    b.minimize(nu_abs, weights.w_nu)
    b.minimize([delta_norm], weights.w_delta)
    b.minimize([delta_sigma], weights.w_delta_sigma)

    # dynamics: X[k+1] - (A X[k] + B U[k] + C U[k+1] + S sigma + z) - nu[k] = 0
    row = np.arange(n * nx).reshape(n, nx)
    rows = [row, row, row[:, :, None].repeat(nx, 2), row[:, :, None].repeat(nu_dim, 2),
            row[:, :, None].repeat(nu_dim, 2), row]
    cols = [X[:, 1:].T, nu.T,
            np.broadcast_to(X[:, :-1].T[:, None, :], (n, nx, nx)),
            np.broadcast_to(U[:, :-1].T[:, None, :], (n, nx, nu_dim)),
            np.broadcast_to(U[:, 1:].T[:, None, :], (n, nx, nu_dim)),
            np.full((n, nx), sigma)]
    vals = [np.ones((n, nx)), -np.ones((n, nx)), -dyn.A, -dyn.B, -dyn.C, -dyn.S]
    b.equal("dynamics",
            np.concatenate([np.ravel(r) for r in rows]),
            np.concatenate([np.ravel(c) for c in cols]),
            np.concatenate([np.ravel(v) for v in vals]),
            -np.ravel(dyn.z))

    # boundary conditions
    x0 = problem.x_initial
    initial = [IDX_M, *range(1, 7), *range(11, 14)]
    if problem.constrain_initial_attitude:
        initial += list(range(7, 11))
    initial = np.array(sorted(initial))
    _fix(b, "initial_state", X[initial, 0], x0[initial])
    final_r = [0, 1, 2] if problem.constrain_final_xy else [0]
    _fix(b, "final_position", X[IDX_R, -1][final_r], np.asarray(problem.final_position)[final_r])
    _fix(b, "final_velocity", X[IDX_V, -1], problem.v_final)
    _fix(b, "final_attitude", X[IDX_Q, -1], problem.q_final)
    _fix(b, "final_rate", X[IDX_W, -1], np.zeros(3))
    _fix(b, "final_thrust_lateral", U[1:, -1], np.zeros(nu_dim - 1))

    # |nu| epigraph
    m = n * nx
    ones = np.ones(m)
    b.nonneg("nu_abs_upper", np.r_[np.arange(m), np.arange(m)], np.r_[nu_abs.ravel(), nu.ravel()],
             np.r_[ones, -ones], np.zeros(m))
    b.nonneg("nu_abs_lower", np.r_[np.arange(m), np.arange(m)], np.r_[nu_abs.ravel(), nu.ravel()],
             np.r_[ones, ones], np.zeros(m))

    b.nonneg("mass", np.arange(K), X[IDX_M], np.ones(K), -problem.m_dry * np.ones(K))

    # lower thrust bound linearized about the reference pointing direction
    norms = np.linalg.norm(U_ref, axis=0)
    direction = np.where(norms > 1e-9, U_ref / np.where(norms > 1e-9, norms, 1.0), 0.0)
    direction[0, norms <= 1e-9] = 1.0
    b.nonneg("thrust_min", np.repeat(np.arange(K), nu_dim), U.T.ravel(), direction.T.ravel(),
             -problem.T_min * np.ones(K))

    b.nonneg("sigma_min", [0], [sigma], [1.0], [-SIGMA_MIN])
    b.nonneg("sigma_trust", [0, 0, 1, 1], [delta_sigma, sigma, delta_sigma, sigma],
             [1.0, -1.0, 1.0, 1.0], [sigma_ref, -sigma_ref])

    # thrust magnitude and gimbal cones, one triple of each per node
    cone = nu_dim + 1
    local = np.arange(K)[:, None] * cone
    b.soc("thrust_max", (local + np.arange(1, cone)).ravel(), U.T.ravel(), np.ones(K * nu_dim),
          np.column_stack([problem.T_max * np.ones(K), np.zeros((K, nu_dim))]).ravel(), size=cone)
    cos_d = np.cos(np.deg2rad(problem.delta_max))
    b.soc("gimbal", np.r_[local.ravel(), (local + np.arange(1, cone)).ravel()],
          np.r_[U[0], U.T.ravel()], np.r_[np.ones(K), cos_d * np.ones(K * nu_dim)],
          np.zeros(K * cone), size=cone)

    # trust region ||(dx, du)||^2 <= delta_k as a rotated cone:
    # (delta + 1, delta - 1, 2 dx, 2 du) in SOC
    width = 2 + nx + nu_dim
    base = np.arange(K)[:, None] * width
    r_rows = np.r_[base.ravel(), base.ravel() + 1,
                   (base + 2 + np.arange(nx)).ravel(), (base + 2 + nx + np.arange(nu_dim)).ravel()]
    r_cols = np.r_[delta, delta, X.T.ravel(), U.T.ravel()]
    r_vals = np.r_[np.ones(K), np.ones(K), 2 * np.ones(K * nx), 2 * np.ones(K * nu_dim)]
    offsets = np.column_stack([np.ones(K), -np.ones(K), -2 * X_ref.T, -2 * U_ref.T]).ravel()
    b.soc("trust_region", r_rows, r_cols, r_vals, offsets, size=width)
    b.soc("trust_norm", np.arange(K + 1), np.r_[delta_norm, delta], np.ones(K + 1), np.zeros(K + 1))
    return b.build()


def extract_solution(program: ConicProgram, sol: ConicSolution) -> SubproblemSolution:
    v = program.variables
    x = sol.x
    return SubproblemSolution(
        X=x[v["X"]], U=x[v["U"]], sigma=float(x[v["sigma"]][0]), nu=x[v["nu"]],
        delta=x[v["delta"]], delta_sigma=float(x[v["delta_sigma"]][0]),
        objective=sol.objective, status=sol.status,
        primal_residual=sol.primal_residual, duality_gap=sol.duality_gap,
    )
