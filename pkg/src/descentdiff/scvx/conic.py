"""Second-order cone programs in standard conic form.

A program is ``min c'x  s.t.  A x + s = b,  s in K`` where ``K`` is a
product of zero, nonnegative and second-order cones (in that row order for
the zero/nonnegative blocks, then one block per second-order cone).  The
interior-point solve is delegated to Clarabel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import clarabel
import numpy as np
import scipy.sparse as sp


class ConicSolverError(RuntimeError):
    """Solve did not reach an optimal point."""


class PrimalInfeasibleError(ConicSolverError):
    pass


class DualInfeasibleError(ConicSolverError):
    """Problem is unbounded below."""


class MaxIterationsError(ConicSolverError):
    pass


@dataclass(frozen=True, eq=False)
class ConicProgram:
    c: np.ndarray
    A: sp.csc_matrix
    b: np.ndarray
    cones: tuple[tuple[str, int], ...]
    variables: dict[str, np.ndarray] = field(default_factory=dict)
    blocks: dict[str, tuple[int, int]] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def cone_count(self, kind: str) -> int:
        return sum(1 for k, _ in self.cones if k == kind)

    def rows(self, block: str) -> np.ndarray:
        start, stop = self.blocks[block]
        return np.arange(start, stop)

    def slack(self, x: np.ndarray) -> np.ndarray:
        return self.b - self.A @ x

    def cone_violation(self, s: np.ndarray) -> float:
        """Largest amount by which ``s`` leaves the cone product (0 if inside)."""
        worst, i = 0.0, 0
        for kind, dim in self.cones:
            block = s[i:i + dim]
            if kind == "zero":
                worst = max(worst, float(np.max(np.abs(block), initial=0.0)))
            elif kind == "nonneg":
                worst = max(worst, float(np.max(-block, initial=0.0)))
            else:
                worst = max(worst, float(np.linalg.norm(block[1:]) - block[0]))
            i += dim
        return worst


@dataclass(frozen=True, eq=False)
class ConicSolution:
    x: np.ndarray
    s: np.ndarray
    z: np.ndarray
    status: str
    objective: float
    iterations: int
    solve_time: float
    primal_residual: float
    duality_gap: float

    def value(self, program: ConicProgram, name: str) -> np.ndarray:
        return self.x[program.variables[name]]


class ConicBuilder:
    """Accumulates variables and affine cone constraints.

    Constraints are given as affine expressions ``M x + d`` together with the
    cone they must lie in; ``M`` is passed as COO triplets with block-local
    row indices.
    """

    def __init__(self):
        self._n = 0
        self.variables: dict[str, np.ndarray] = {}
        self._blocks: dict[str, list] = {"zero": [], "nonneg": [], "soc": []}
        self._c: dict[int, float] = {}

    def variable(self, name: str, shape) -> np.ndarray:
        size = int(np.prod(shape))
        idx = np.arange(self._n, self._n + size).reshape(shape)
        self._n += size
        self.variables[name] = idx
        return idx

    def minimize(self, cols, coefs) -> None:
        for col, coef in zip(np.ravel(cols), np.broadcast_to(coefs, np.shape(np.ravel(cols)))):
            self._c[int(col)] = self._c.get(int(col), 0.0) + float(coef)

    def _add(self, kind, name, rows, cols, vals, d, size=None):
        d = np.asarray(d, dtype=float).ravel()
        if size is None:
            size = len(d)
        if size < 1 or len(d) % size:
            raise ValueError(f"block {name!r}: {len(d)} rows do not split into cones of size {size}")
        self._blocks[kind].append((name, np.asarray(rows, int).ravel(), np.asarray(cols, int).ravel(),
                                   np.asarray(vals, float).ravel(), d, size))

    def equal(self, name, rows, cols, vals, d):
        """``M x + d == 0``."""
        self._add("zero", name, rows, cols, vals, d)

    def nonneg(self, name, rows, cols, vals, d):
        """``M x + d >= 0``."""
        self._add("nonneg", name, rows, cols, vals, d)

    def soc(self, name, rows, cols, vals, d, size=None):
        """``M x + d`` in the second-order cone ``{(t, w): |w| <= t}``.

        With ``size`` the block is a stack of equally sized cones.
        """
        self._add("soc", name, rows, cols, vals, d, size)

    def build(self) -> ConicProgram:
        all_rows, all_cols, all_vals, all_b = [], [], [], []
        cones: list[tuple[str, int]] = []
        blocks: dict[str, tuple[int, int]] = {}
        offset = 0
        for kind in ("zero", "nonneg", "soc"):
            kind_start = offset
            for name, rows, cols, vals, d, size in self._blocks[kind]:
                if name in blocks:
                    raise ValueError(f"duplicate block name {name!r}")
                sign = 1.0 if kind == "zero" else -1.0
                b = -d if kind == "zero" else d
                all_rows.append(rows + offset)
                all_cols.append(cols)
                all_vals.append(sign * vals)
                all_b.append(b)
                blocks[name] = (offset, offset + len(d))
                if kind == "soc":
                    cones.extend([("soc", size)] * (len(d) // size))
                offset += len(d)
            if kind != "soc" and offset > kind_start:
                cones.append((kind, offset - kind_start))
        c = np.zeros(self._n)
        for col, coef in self._c.items():
            c[col] = coef
        A = sp.csc_matrix(
            (np.concatenate(all_vals) if all_vals else [],
             (np.concatenate(all_rows) if all_rows else [], np.concatenate(all_cols) if all_cols else [])),
            shape=(offset, self._n),
        )
        A.sum_duplicates()
        b = np.concatenate(all_b) if all_b else np.zeros(0)
        return ConicProgram(c=c, A=A, b=b, cones=tuple(cones),
                            variables=dict(self.variables), blocks=blocks)


_CONE_TYPES = {
    "zero": clarabel.ZeroConeT,
    "nonneg": clarabel.NonnegativeConeT,
    "soc": clarabel.SecondOrderConeT,
}

# early exits that are still accepted when the certificate checks pass
_SALVAGE = {"AlmostSolved", "InsufficientProgress", "NumericalError"}
ACCEPT_TOL = 1e-7
# settings tried in order; later entries trade speed for robustness
_ATTEMPTS = ({}, {"equilibrate_max_iter": 50}, {"equilibrate_max_iter": 200, "max_step_fraction": 0.9})


def _run(program: ConicProgram, tol: float, max_iter: int, extra: dict):
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = max_iter
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    settings.tol_feas = tol
    settings.tol_ktratio = 1e-7
    settings.presolve_enable = False
    for key, value in extra.items():
        setattr(settings, key, value)
    cones = [_CONE_TYPES[kind](dim) for kind, dim in program.cones]
    P = sp.csc_matrix((program.n, program.n))
    return clarabel.DefaultSolver(P, program.c, program.A, program.b, cones, settings).solve()


def _certificate(program: ConicProgram, x, s, z) -> tuple[float, float]:
    """Normalized primal residual and relative duality gap."""
    norm = max(1.0, float(np.max(np.abs(program.b), initial=0.0)),
               float(np.max(np.abs(x), initial=0.0)), float(np.max(np.abs(s), initial=0.0)))
    primal = float(np.max(np.abs(program.A @ x + s - program.b), initial=0.0))
    primal = max(primal, program.cone_violation(s)) / norm
    objective = float(program.c @ x)
    gap = abs(objective + float(program.b @ z)) / (1.0 + abs(objective))
    return primal, gap


def solve_socp(program: ConicProgram, tol: float = 1e-8, max_iter: int = 200) -> ConicSolution:
    """Solve ``program`` with Clarabel.

    The returned point has normalized primal residual and relative duality
    gap below ``ACCEPT_TOL``.  Infeasibility, unboundedness and iteration
    exhaustion raise distinct errors.
    """
    failure = "not attempted"
    for extra in _ATTEMPTS:
        result = _run(program, tol, max_iter, extra)
        status = str(result.status).split(".")[-1]
        if status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
            raise PrimalInfeasibleError(status)
        if status in ("DualInfeasible", "AlmostDualInfeasible"):
            raise DualInfeasibleError(status)
        if status == "MaxIterations":
            failure = "max-iterations"
            continue
        if status != "Solved" and status not in _SALVAGE:
            failure = status
            continue
        x, s, z = (np.asarray(v) for v in (result.x, result.s, result.z))
        if not np.all(np.isfinite(x)):
            failure = f"{status}: non-finite solution"
            continue
        primal, gap = _certificate(program, x, s, z)
        if primal < ACCEPT_TOL and gap < ACCEPT_TOL:
            return ConicSolution(x=x, s=s, z=z, status=status, objective=float(program.c @ x),
                                 iterations=int(result.iterations), solve_time=float(result.solve_time),
                                 primal_residual=primal, duality_gap=gap)
        failure = f"{status}: residual {primal:.2e}, gap {gap:.2e}"
    if failure == "max-iterations":
        raise MaxIterationsError(f"no convergence within {max_iter} iterations")
    raise ConicSolverError(failure)
