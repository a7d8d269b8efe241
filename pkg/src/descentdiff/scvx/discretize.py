"""First-order-hold discretization of the time-scaled dynamics.

Along each interval the nonlinear state is integrated together with the
sensitivities of ``sigma * f(x, u)``, giving the affine map

    x[k+1] = A[k] x[k] + B[k] u[k] + C[k] u[k+1] + S[k] sigma + z[k]

which is exact at the reference (up to integration error).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import VehicleConstants, jacobians, rhs


class IntegrationError(RuntimeError):
    def __init__(self, node: int, message: str):
        super().__init__(f"interval {node}: {message}")
        self.node = node


@dataclass(frozen=True, eq=False)
class DiscretizedDynamics:
    A: np.ndarray  # (K-1, 14, 14)
    B: np.ndarray  # (K-1, 14, 3)
    C: np.ndarray  # (K-1, 14, 3)
    S: np.ndarray  # (K-1, 14)
    z: np.ndarray  # (K-1, 14)
    x_end: np.ndarray  # (K-1, 14) nonlinear interval end states

    @property
    def intervals(self) -> int:
        return self.A.shape[0]

    def apply(self, X: np.ndarray, U: np.ndarray, sigma: float) -> np.ndarray:
        """Affine prediction of nodes 1..K-1, shape (14, K-1)."""
        pred = (
            np.einsum("kij,jk->ik", self.A, X[:, :-1])
            + np.einsum("kij,jk->ik", self.B, U[:, :-1])
            + np.einsum("kij,jk->ik", self.C, U[:, 1:])
            + self.S.T * sigma
            + self.z.T
        )
        return pred


def _augmented_rhs(x, Phi, Bm, Bp, S, z, u0, u1, s, sigma, f_fn, jac_fn):
    u = u0 + s * (u1 - u0)
    f = f_fn(x, u)
    A, B = jac_fn(x, u)
    A = sigma * A
    B = sigma * B
    dx = sigma * f
    dPhi = A @ Phi
    dBm = A @ Bm + B * (1.0 - s)
    dBp = A @ Bp + B * s
    dS = np.einsum("kij,kj->ki", A, S) + f
    dz = (np.einsum("kij,kj->ki", A, z)
          - np.einsum("kij,kj->ki", A, x)
          - np.einsum("kij,kj->ki", B, u))
    return dx, dPhi, dBm, dBp, dS, dz


def linearize_system(X: np.ndarray, U: np.ndarray, sigma: float, problem=None,
                     substeps: int = 15, model=None) -> DiscretizedDynamics:
    """Discretize about reference states ``X`` (n_x x K) and controls ``U`` (n_u x K).

    ``model`` optionally replaces the vehicle dynamics by a pair of batched
    callables ``(f(x, u), jac(x, u) -> (A, B))``.
    """
    if sigma <= 0:
        raise ValueError("time scale must be positive")
    if model is None:
        consts = problem if isinstance(problem, VehicleConstants) else VehicleConstants.from_problem(problem)
        model = (lambda x, u: rhs(x, u, consts), lambda x, u: jacobians(x, u, consts))
    f_fn, jac_fn = model
    nx, nu = X.shape[0], U.shape[0]
    K = X.shape[1]
    n = K - 1
    dtau = 1.0 / n
    h = 1.0 / substeps
    step = h * dtau

    x = np.array(X[:, :-1].T)
    u0 = U[:, :-1].T
    u1 = U[:, 1:].T
    state = [
        x,
        np.broadcast_to(np.eye(nx), (n, nx, nx)).copy(),
        np.zeros((n, nx, nu)),
        np.zeros((n, nx, nu)),
        np.zeros((n, nx)),
        np.zeros((n, nx)),
    ]
    with np.errstate(all="ignore"):
        for i in range(substeps):
            s = i * h
            k1 = _augmented_rhs(*state, u0, u1, s, sigma, f_fn, jac_fn)
            mid = [a + 0.5 * step * d for a, d in zip(state, k1)]
            k2 = _augmented_rhs(*mid, u0, u1, s + 0.5 * h, sigma, f_fn, jac_fn)
            mid = [a + 0.5 * step * d for a, d in zip(state, k2)]
            k3 = _augmented_rhs(*mid, u0, u1, s + 0.5 * h, sigma, f_fn, jac_fn)
            end = [a + step * d for a, d in zip(state, k3)]
            k4 = _augmented_rhs(*end, u0, u1, s + h, sigma, f_fn, jac_fn)
            state = [a + (step / 6.0) * (d1 + 2 * d2 + 2 * d3 + d4)
                     for a, d1, d2, d3, d4 in zip(state, k1, k2, k3, k4)]
    x_end, Phi, Bm, Bp, S, z = state
    bad = ~np.all(np.isfinite(Phi.reshape(n, -1)), axis=1) | ~np.all(np.isfinite(x_end), axis=1)
    if np.any(bad):
        raise IntegrationError(int(np.argmax(bad)), "non-finite values during integration")
    return DiscretizedDynamics(A=Phi, B=Bm, C=Bp, S=S, z=z, x_end=x_end)


def linearize(reference, sigma_ref: float, problem, substeps: int = 15) -> DiscretizedDynamics:
    """Discretize about a :class:`TrajectoryPlan` reference."""
    X, U = reference.state_control()
    return linearize_system(X, U, sigma_ref, problem, substeps)
