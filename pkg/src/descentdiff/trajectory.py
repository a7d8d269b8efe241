"""Trajectory and problem data model, plus scenario sampling.

Vectors use the vertical-first axis order ``(z, x, y)``: index 0 is the
local vertical (gravity points along ``-z``), indices 1 and 2 span the
horizontal plane.  A :class:`TrajectoryPlan` stacks 17 rows over ``K`` nodes:

====== =========================
rows   content
====== =========================
0-2    position r (z, x, y)
3-5    velocity v
6-9    quaternion q (scalar first)
10-12  body angular velocity w
13     mass m
14-16  body thrust T
====== =========================
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Sequence

import numpy as np

from .attitude import euler_to_quaternion

N_ROWS = 17
N_STATE = 14
N_CONTROL = 3

ROWS_R = slice(0, 3)
ROWS_V = slice(3, 6)
ROWS_Q = slice(6, 10)
ROWS_W = slice(10, 13)
ROW_M = 13
ROWS_T = slice(14, 17)

ROW_NAMES = (
    "r_z", "r_x", "r_y",
    "v_z", "v_x", "v_y",
    "q0", "q1", "q2", "q3",
    "w_z", "w_x", "w_y",
    "m",
    "T_z", "T_x", "T_y",
)

# continuous-state ordering used by the optimizer: m, r, v, q, w
_STATE_FROM_ROWS = np.r_[ROW_M, 0:13]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TrajectoryPlan:
    """A 17 x K state/control matrix."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2 or data.shape[0] != N_ROWS or data.shape[1] < 2:
            raise ValueError(f"plan must be {N_ROWS} x K with K >= 2, got {data.shape}")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def nodes(self) -> int:
        return self.data.shape[1]

    @property
    def r(self) -> np.ndarray:
        return self.data[ROWS_R]

    @property
    def v(self) -> np.ndarray:
        return self.data[ROWS_V]

    @property
    def q(self) -> np.ndarray:
        return self.data[ROWS_Q]

    @property
    def w(self) -> np.ndarray:
        return self.data[ROWS_W]

    @property
    def m(self) -> np.ndarray:
        return self.data[ROW_M]

    @property
    def thrust(self) -> np.ndarray:
        return self.data[ROWS_T]

    @classmethod
    def from_state_control(cls, X: np.ndarray, U: np.ndarray) -> "TrajectoryPlan":
        """Build from optimizer arrays ``X`` (14 x K, order m, r, v, q, w) and ``U`` (3 x K)."""
        X = np.asarray(X, dtype=float)
        U = np.asarray(U, dtype=float)
        data = np.empty((N_ROWS, X.shape[1]))
        data[_STATE_FROM_ROWS] = X
        data[ROWS_T] = U
        return cls(data)

    def state_control(self) -> tuple[np.ndarray, np.ndarray]:
        X = np.array(self.data[_STATE_FROM_ROWS])
        U = np.array(self.data[ROWS_T])
        return X, U

    def with_unit_quaternions(self) -> "TrajectoryPlan":
        data = np.array(self.data)
        norms = np.linalg.norm(data[ROWS_Q], axis=0)
        norms[norms < 1e-12] = 1.0
        data[ROWS_Q] /= norms
        return TrajectoryPlan(data)


@dataclass(frozen=True, eq=False)
class DescentProblem:
    """Nondimensional 6-DoF powered-descent problem instance.

    Angular velocities are in rad per unit time, ``delta_max`` in degrees.
    ``final_position`` holds the landing site; its vertical component is
    always pinned to zero, the horizontal components only when
    ``constrain_final_xy`` is set (single-site mode).
    """

    m_wet: float
    m_dry: float
    T_min: float
    T_max: float
    delta_max: float
    r0: np.ndarray
    v0: np.ndarray
    q0: np.ndarray
    w0: np.ndarray
    final_position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    constrain_final_xy: bool = True
    constrain_initial_attitude: bool = True
    v_final: np.ndarray = field(default_factory=lambda: np.array([-0.1, 0.0, 0.0]))
    q_final: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    g: np.ndarray = field(default_factory=lambda: np.array([-1.0, 0.0, 0.0]))
    alpha_m: float = 0.01
    r_thrust: np.ndarray = field(default_factory=lambda: np.array([-0.01, 0.0, 0.0]))
    J: np.ndarray = field(default_factory=lambda: 0.01 * np.eye(3))
    tf_guess: float = 3.0
    K: int = 20

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, (np.ndarray, list, tuple)):
                object.__setattr__(self, f.name, _frozen(value))
        if not 0 < self.T_min < self.T_max:
            raise ValueError("thrust bounds must satisfy 0 < T_min < T_max")
        if not 0 < self.m_dry < self.m_wet:
            raise ValueError("masses must satisfy 0 < m_dry < m_wet")
        if not 0 < self.delta_max <= 90:
            raise ValueError("gimbal limit must lie in (0, 90] degrees")
        if self.K < 3:
            raise ValueError("need at least 3 discretization nodes")
        if abs(self.final_position[0]) > 0:
            raise ValueError("landing site must lie at zero altitude")

    @property
    def x_initial(self) -> np.ndarray:
        """Initial continuous state (m, r, v, q, w)."""
        return np.concatenate([[self.m_wet], self.r0, self.v0, self.q0, self.w0])

    def to_vector(self) -> np.ndarray:
        parts = [
            [self.m_wet, self.m_dry, self.T_min, self.T_max, self.delta_max],
            self.r0, self.v0, self.q0, self.w0, self.final_position,
            [float(self.constrain_final_xy), float(self.constrain_initial_attitude)],
            self.v_final, self.q_final, self.g, [self.alpha_m], self.r_thrust,
            np.ravel(self.J), [self.tf_guess, float(self.K)],
        ]
        return np.concatenate([np.ravel(p) for p in parts]).astype(float)

    @classmethod
    def from_vector(cls, vec: Sequence[float]) -> "DescentProblem":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (PROBLEM_VECTOR_LENGTH,):
            raise ValueError(f"problem vector must have {PROBLEM_VECTOR_LENGTH} entries")
        it = iter(np.split(vec, np.cumsum(_VECTOR_LAYOUT)[:-1]))
        m_wet, m_dry, T_min, T_max, delta_max = next(it)
        r0, v0, q0, w0, rf = (next(it) for _ in range(5))
        flags = next(it)
        v_f, q_f, g, alpha_m, r_T, J, tail = (next(it) for _ in range(7))
        return cls(
            m_wet=float(m_wet), m_dry=float(m_dry), T_min=float(T_min),
            T_max=float(T_max), delta_max=float(delta_max),
            r0=r0, v0=v0, q0=q0, w0=w0, final_position=rf,
            constrain_final_xy=bool(flags[0]), constrain_initial_attitude=bool(flags[1]),
            v_final=v_f, q_final=q_f, g=g, alpha_m=float(alpha_m[0]), r_thrust=r_T,
            J=J.reshape(3, 3), tf_guess=float(tail[0]), K=int(round(tail[1])),
        )

    def replace(self, **changes) -> "DescentProblem":
        return replace(self, **changes)


_VECTOR_LAYOUT = [5, 3, 3, 4, 3, 3, 2, 3, 4, 3, 1, 3, 9, 2]
PROBLEM_VECTOR_LENGTH = sum(_VECTOR_LAYOUT)


@dataclass(frozen=True)
class ScenarioDistribution:
    """Uniform ranges ``(lo, hi)`` for every sampled scenario parameter.

    Defaults reproduce the training-set distribution: angles in degrees,
    angular rates in deg per unit time (converted to rad when sampled).
    """

    r_z0: tuple[float, float] = (1.0, 4.0)
    r_x0: tuple[float, float] = (-2.0, 2.0)
    r_y0: tuple[float, float] = (-2.0, 2.0)
    v_z0: tuple[float, float] = (-1.0, -0.5)
    v_x0: tuple[float, float] = (-0.5, -0.2)
    v_y0: tuple[float, float] = (-0.5, -0.2)
    pitch0: tuple[float, float] = (-30.0, 30.0)
    yaw0: tuple[float, float] = (-30.0, 30.0)
    w_x0: tuple[float, float] = (-20.0, 20.0)
    w_y0: tuple[float, float] = (-20.0, 20.0)
    r_xf: tuple[float, float] = (-4.0, 4.0)
    r_yf: tuple[float, float] = (-4.0, 4.0)
    m_wet: tuple[float, float] = (2.0, 5.0)
    m_dry: tuple[float, float] = (0.1, 2.0)
    delta_max: tuple[float, float] = (10.0, 90.0)
    T_max: tuple[float, float] = (3.0, 10.0)
    T_min: tuple[float, float] = (0.01, 1.0)
    w_z0: float = 0.0
    K: int = 20
    constrain_final_xy: bool = True

    def __post_init__(self):
        for name in _RANGE_NAMES:
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"range {name} has lo > hi")


_RANGE_NAMES = (
    "r_z0", "r_x0", "r_y0", "v_z0", "v_x0", "v_y0", "pitch0", "yaw0", "w_x0", "w_y0",
    "r_xf", "r_yf", "m_wet", "m_dry", "delta_max", "T_max", "T_min",
)


def sample_scenario(dist: ScenarioDistribution, seed: int) -> DescentProblem:
    """Draw one problem instance; a pure function of ``(dist, seed)``."""
    rng = np.random.default_rng(seed)
    draw = {name: rng.uniform(*getattr(dist, name)) for name in _RANGE_NAMES}
    m_wet, m_dry = draw["m_wet"], draw["m_dry"]
    if m_dry >= m_wet:
        m_dry = np.nextafter(m_wet, 0.0)
    q0 = euler_to_quaternion(0.0, draw["pitch0"], draw["yaw0"])
    w0 = np.deg2rad([dist.w_z0, draw["w_x0"], draw["w_y0"]])
    return DescentProblem(
        m_wet=m_wet, m_dry=m_dry, T_min=draw["T_min"], T_max=draw["T_max"],
        delta_max=draw["delta_max"],
        r0=np.array([draw["r_z0"], draw["r_x0"], draw["r_y0"]]),
        v0=np.array([draw["v_z0"], draw["v_x0"], draw["v_y0"]]),
        q0=q0, w0=w0,
        final_position=np.array([0.0, draw["r_xf"], draw["r_yf"]]),
        constrain_final_xy=dist.constrain_final_xy,
        K=dist.K,
    )


def nominal_problem(**overrides) -> DescentProblem:
    """Mid-range scenario used as a smoke-test and documentation example."""
    base = dict(
        m_wet=3.0, m_dry=1.0, T_min=0.3, T_max=6.0, delta_max=30.0,
        r0=np.array([3.0, 1.0, -1.0]), v0=np.array([-0.75, -0.35, -0.35]),
        q0=euler_to_quaternion(0.0, 10.0, -10.0), w0=np.deg2rad([0.0, 5.0, -5.0]),
        final_position=np.array([0.0, 2.0, 1.0]),
    )
    base.update(overrides)
    return DescentProblem(**base)
