"""Rigid-body powered-descent dynamics and their Jacobians.

State ordering is ``x = (m, r[3], v[3], q[4], w[3])``; control is the
body-frame thrust ``u[3]``.  Every function broadcasts over leading batch
dimensions so whole trajectories are processed at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..attitude import cross, omega_matrix, rotation_matrix, skew
from ..trajectory import DescentProblem, TrajectoryPlan

IDX_M = 0
IDX_R = slice(1, 4)
IDX_V = slice(4, 7)
IDX_Q = slice(7, 11)
IDX_W = slice(11, 14)


@dataclass(frozen=True, eq=False)
class VehicleConstants:
    g: np.ndarray
    alpha_m: float
    r_thrust: np.ndarray
    J: np.ndarray
    J_inv: np.ndarray

    @classmethod
    def from_problem(cls, problem: DescentProblem) -> "VehicleConstants":
        J = np.asarray(problem.J, dtype=float)
        return cls(np.asarray(problem.g, float), float(problem.alpha_m),
                   np.asarray(problem.r_thrust, float), J, np.linalg.inv(J))


def _consts(problem) -> VehicleConstants:
    return problem if isinstance(problem, VehicleConstants) else VehicleConstants.from_problem(problem)


def rhs(x: np.ndarray, u: np.ndarray, problem) -> np.ndarray:
    """Batched state derivative ``f(x, u)``."""
    c = _consts(problem)
    m = x[..., IDX_M]
    v = x[..., IDX_V]
    q = x[..., IDX_Q]
    w = x[..., IDX_W]
    out = np.empty(np.broadcast_shapes(x.shape, u.shape[:-1] + (14,)))
    out[..., IDX_M] = -c.alpha_m * np.linalg.norm(u, axis=-1)
    out[..., IDX_R] = v
    thrust_inertial = np.einsum("...ij,...j->...i", rotation_matrix(q), u)
    out[..., IDX_V] = thrust_inertial / m[..., None] + c.g
    out[..., IDX_Q] = 0.5 * np.einsum("...ij,...j->...i", omega_matrix(w), q)
    torque = cross(c.r_thrust, u) - cross(w, w @ c.J.T)
    out[..., IDX_W] = torque @ c.J_inv.T
    return out


def dynamics_rhs(state: np.ndarray, thrust: np.ndarray, problem: DescentProblem) -> np.ndarray:
    """State derivative for a single 14-vector state and body thrust."""
    state = np.asarray(state, dtype=float)
    thrust = np.asarray(thrust, dtype=float)
    if state.shape != (14,) or thrust.shape != (3,):
        raise ValueError("expected a 14-vector state and a 3-vector thrust")
    if not (np.all(np.isfinite(state)) and np.all(np.isfinite(thrust))):
        raise ValueError("non-finite state or thrust")
    if state[IDX_M] <= 0:
        raise ValueError("mass must be positive")
    return rhs(state, thrust, problem)


def rotated_vector_jacobian(q: np.ndarray, u: np.ndarray) -> np.ndarray:
    """d(R(q) u)/dq for the homogeneous rotation form, shape (..., 3, 4)."""
    q0 = q[..., 0]
    qv = q[..., 1:]
    out = np.empty(q.shape[:-1] + (3, 4))
    out[..., :, 0] = 2 * q0[..., None] * u + 2 * cross(qv, u)
    qv_dot_u = np.sum(qv * u, axis=-1)
    out[..., :, 1:] = (
        -2 * u[..., :, None] * qv[..., None, :]
        + 2 * qv_dot_u[..., None, None] * np.eye(3)
        + 2 * qv[..., :, None] * u[..., None, :]
        - 2 * q0[..., None, None] * skew(u)
    )
    return out


def jacobians(x: np.ndarray, u: np.ndarray, problem) -> tuple[np.ndarray, np.ndarray]:
    """Batched ``(df/dx, df/du)`` with shapes (..., 14, 14) and (..., 14, 3)."""
    c = _consts(problem)
    batch = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
    m = x[..., IDX_M]
    q = x[..., IDX_Q]
    w = x[..., IDX_W]
    A = np.zeros(batch + (14, 14))
    B = np.zeros(batch + (14, 3))
    R = rotation_matrix(q)
    Ru = np.einsum("...ij,...j->...i", R, u)
    inv_m = (1.0 / m)[..., None]

    A[..., 1:4, 4:7] = np.eye(3)
    A[..., 4:7, 0] = -Ru * inv_m**2
    A[..., 4:7, 7:11] = rotated_vector_jacobian(q, u) * inv_m[..., None]
    A[..., 7:11, 7:11] = 0.5 * omega_matrix(w)
    q0, q1, q2, q3 = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    # d(0.5 * Omega(w) q)/dw
    xi = A[..., 7:11, 11:14]
    xi[..., 0, 0], xi[..., 0, 1], xi[..., 0, 2] = -0.5 * q1, -0.5 * q2, -0.5 * q3
    xi[..., 1, 0], xi[..., 1, 1], xi[..., 1, 2] = 0.5 * q0, -0.5 * q3, 0.5 * q2
    xi[..., 2, 0], xi[..., 2, 1], xi[..., 2, 2] = 0.5 * q3, 0.5 * q0, -0.5 * q1
    xi[..., 3, 0], xi[..., 3, 1], xi[..., 3, 2] = -0.5 * q2, 0.5 * q1, 0.5 * q0
    Jw = w @ c.J.T
    A[..., 11:14, 11:14] = -c.J_inv @ (skew(w) @ c.J - skew(Jw))

    norm_u = np.linalg.norm(u, axis=-1, keepdims=True)
    safe = np.where(norm_u > 1e-12, norm_u, 1.0)
    B[..., 0, :] = np.where(norm_u > 1e-12, -c.alpha_m * u / safe, 0.0)
    B[..., 4:7, :] = R * inv_m[..., None]
    B[..., 11:14, :] = c.J_inv @ skew(c.r_thrust)
    return A, B


def propagate_intervals(X: np.ndarray, U: np.ndarray, sigma: float, problem, substeps: int = 15) -> np.ndarray:
    """Integrate every interval [k, k+1] from node state ``X[:, k]``.

    Controls are first-order hold between nodes; returns the end states as
    a (14, K-1) array.  Fixed-step RK4 in normalized time.
    """
    c = _consts(problem)
    K = X.shape[1]
    x = np.array(X[:, :-1].T)
    u0 = U[:, :-1].T
    u1 = U[:, 1:].T
    dtau = 1.0 / (K - 1)
    h = 1.0 / substeps
    for i in range(substeps):
        s = i * h
        k1 = rhs(x, u0 + s * (u1 - u0), c)
        k2 = rhs(x + 0.5 * h * dtau * sigma * k1, u0 + (s + 0.5 * h) * (u1 - u0), c)
        k3 = rhs(x + 0.5 * h * dtau * sigma * k2, u0 + (s + 0.5 * h) * (u1 - u0), c)
        k4 = rhs(x + h * dtau * sigma * k3, u0 + (s + h) * (u1 - u0), c)
        x = x + (h * dtau * sigma / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return x.T


@dataclass(frozen=True, eq=False)
class DefectReport:
    """Nonlinear-propagation audit of a plan.

    ``defects[k]`` is the 2-norm mismatch between the propagated interval
    end state and node ``k+1``.  Constraint violations are positive amounts
    by which node values break the bound (0 when satisfied).
    """

    defects: np.ndarray
    max_defect: float
    mass_violation: float
    thrust_min_violation: float
    thrust_max_violation: float
    gimbal_violation: float
    mass_increase: float

    @property
    def max_constraint_violation(self) -> float:
        return max(self.mass_violation, self.thrust_min_violation,
                   self.thrust_max_violation, self.gimbal_violation)


def propagate(plan: TrajectoryPlan, sigma: float, problem: DescentProblem, substeps: int = 15) -> DefectReport:
    X, U = plan.state_control()
    with np.errstate(all="ignore"):
        ends = propagate_intervals(X, U, sigma, problem, substeps)
        defects = np.linalg.norm(ends - X[:, 1:], axis=0)
    defects = np.where(np.isfinite(defects), defects, np.inf)
    norms = np.linalg.norm(U, axis=0)
    cos_d = np.cos(np.deg2rad(problem.delta_max))
    return DefectReport(
        defects=defects,
        max_defect=float(np.max(defects)),
        mass_violation=float(max(0.0, np.max(problem.m_dry - X[IDX_M]))),
        thrust_min_violation=float(max(0.0, np.max(problem.T_min - norms))),
        thrust_max_violation=float(max(0.0, np.max(norms - problem.T_max))),
        gimbal_violation=float(max(0.0, np.max(cos_d * norms - U[0]))),
        mass_increase=float(max(0.0, np.max(np.diff(X[IDX_M])))),
    )
