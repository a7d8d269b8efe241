"""Landing-risk grids built from elliptical obstacles.

Each obstacle contributes risk 1 inside its ellipse and a Gaussian falloff in
the normalized ellipse distance outside.  Contributions are summed and the
grid is normalized so its maximum is 1.  Values are stored as
``values[i, j]`` at ``(xs[i], ys[j])``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .trajectory import TrajectoryPlan

RISK_THRESHOLD = 0.1
GRID_FORMAT = "risk-grid-v1"


@dataclass(frozen=True)
class EllipseObstacle:
    a: float
    b: float
    h: float = 0.0
    k: float = 0.0
    alpha: float = 0.0

    def __post_init__(self):
        vals = (self.a, self.b, self.h, self.k, self.alpha)
        if not all(np.isfinite(vals)):
            raise ValueError("obstacle parameters must be finite")
        if self.a <= 0 or self.b <= 0:
            raise ValueError(f"obstacle semi-axes must be positive, got a={self.a}, b={self.b}")

    def ellipse_eq(self, x, y) -> np.ndarray:
        dx = np.asarray(x, dtype=float) - self.h
        dy = np.asarray(y, dtype=float) - self.k
        c, s = np.cos(self.alpha), np.sin(self.alpha)
        xr = dx * c + dy * s
        yr = -dx * s + dy * c
        return (xr / self.a) ** 2 + (yr / self.b) ** 2


def obstacle_risk(obstacle: EllipseObstacle, x, y, sigma: float = 0.5) -> np.ndarray:
    """Un-normalized risk of one obstacle at the given points."""
    eq = obstacle.ellipse_eq(x, y)
    dist = np.sqrt(eq) - 1.0
    return np.where(eq <= 1.0, 1.0, np.exp(-dist ** 2 / (2 * sigma ** 2)))


@dataclass(frozen=True, eq=False)
class RiskGrid:
    x_range: tuple[float, float]
    y_range: tuple[float, float]
    resolution: float
    sigma: float
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or min(values.shape) < 2:
            raise ValueError("risk grid needs at least 2 x 2 values")
        if values.shape != (_count(self.x_range, self.resolution), _count(self.y_range, self.resolution)):
            raise ValueError(f"value shape {values.shape} does not match ranges and resolution")
        if not np.all(np.isfinite(values)) or values.min() < 0 or values.max() > 1:
            raise ValueError("risk values must lie in [0, 1]")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "x_range", tuple(float(v) for v in self.x_range))
        object.__setattr__(self, "y_range", tuple(float(v) for v in self.y_range))

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(*self.x_range, self.values.shape[0])

    @property
    def ys(self) -> np.ndarray:
        return np.linspace(*self.y_range, self.values.shape[1])

    def sample(self, x, y) -> np.ndarray:
        return bilinear_sample(self, x, y)[0]

    def save(self, path) -> None:
        """Plain-text header lines followed by row-major values (one x index per line)."""
        lines = [
            f"# {GRID_FORMAT}",
            f"x_range {self.x_range[0]!r} {self.x_range[1]!r}",
            f"y_range {self.y_range[0]!r} {self.y_range[1]!r}",
            f"resolution {self.resolution!r}",
            f"sigma {self.sigma!r}",
            f"shape {self.values.shape[0]} {self.values.shape[1]}",
        ]
        lines += [" ".join(repr(float(v)) for v in row) for row in self.values]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "RiskGrid":
        text = Path(path).read_text().splitlines()
        if not text or text[0].strip() != f"# {GRID_FORMAT}":
            raise ValueError(f"{path}: not a risk grid file")
        header = {}
        for line in text[1:6]:
            key, *vals = line.split()
            header[key] = vals
        try:
            nx, ny = (int(v) for v in header["shape"])
            values = np.array([[float(v) for v in line.split()] for line in text[6:6 + nx]])
            return cls(tuple(float(v) for v in header["x_range"]), tuple(float(v) for v in header["y_range"]),
                       float(header["resolution"][0]), float(header["sigma"][0]), values.reshape(nx, ny))
        except (KeyError, ValueError) as exc:
            raise ValueError(f"{path}: malformed risk grid ({exc})") from exc


def _count(rng: tuple[float, float], resolution: float) -> int:
    lo, hi = rng
    if not hi > lo:
        raise ValueError(f"empty range {rng}")
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    return int(round((hi - lo) / resolution)) + 1


def create_risk_map(obstacles, x_range=(-4.0, 4.0), y_range=(-4.0, 4.0),
                    resolution: float = 0.1, sigma: float = 0.5) -> RiskGrid:
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    nx, ny = _count(x_range, resolution), _count(y_range, resolution)
    X, Y = np.meshgrid(np.linspace(*x_range, nx), np.linspace(*y_range, ny), indexing="ij")
    risk = np.zeros((nx, ny))
    for obs in obstacles:
        risk += obstacle_risk(obs, X, Y, sigma)
    peak = risk.max()
    if peak > 0:
        risk /= peak
    return RiskGrid(tuple(x_range), tuple(y_range), resolution, sigma, risk)


def _axis(q, lo: float, n: int, step: float):
    """Clamped cell index, fractional offset and in-range mask along one axis."""
    f = (q - lo) / step
    inside = (f >= 0) & (f <= n - 1)
    f = np.clip(f, 0.0, n - 1)
    i = np.minimum(np.floor(f).astype(int), n - 2)
    return i, f - i, inside


def bilinear_sample(grid: RiskGrid, x, y):
    """Risk and its gradient ``(R, dR/dx, dR/dy)`` at arbitrary points.

    Queries outside the grid clamp to the boundary, where the gradient
    along the clamped axis is zero.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    nx, ny = grid.values.shape
    dx = (grid.x_range[1] - grid.x_range[0]) / (nx - 1)
    dy = (grid.y_range[1] - grid.y_range[0]) / (ny - 1)
    i, tx, in_x = _axis(x, grid.x_range[0], nx, dx)
    j, ty, in_y = _axis(y, grid.y_range[0], ny, dy)
    v = grid.values
    r00, r10, r01, r11 = v[i, j], v[i + 1, j], v[i, j + 1], v[i + 1, j + 1]
    risk = (1 - tx) * (1 - ty) * r00 + tx * (1 - ty) * r10 + (1 - tx) * ty * r01 + tx * ty * r11
    gx = ((1 - ty) * (r10 - r00) + ty * (r11 - r01)) / dx
    gy = ((1 - tx) * (r01 - r00) + tx * (r11 - r10)) / dy
    return risk, np.where(in_x, gx, 0.0), np.where(in_y, gy, 0.0)


def landing_risks(final_xy: np.ndarray, grid: RiskGrid, threshold: float = RISK_THRESHOLD):
    """Risk at each ``(x, y)`` landing point and the flag ``risk > threshold``."""
    final_xy = np.asarray(final_xy, dtype=float).reshape(-1, 2)
    risk = grid.sample(final_xy[:, 0], final_xy[:, 1])
    return risk, risk > threshold


def landing_risk(plan: TrajectoryPlan, grid: RiskGrid, threshold: float = RISK_THRESHOLD) -> tuple[float, bool]:
    r = plan.r[:, -1]
    risk, flag = landing_risks(r[1:3], grid, threshold)
    return float(risk[0]), bool(flag[0])


def read_obstacles(path) -> list[EllipseObstacle]:
    """One obstacle per line as ``a b h k alpha`` (radians); ``#`` starts a comment."""
    obstacles = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 5:
            raise ValueError(f"{path}:{lineno}: expected 'a b h k alpha'")
        obstacles.append(EllipseObstacle(*(float(p) for p in parts)))
    return obstacles


def write_obstacles(path, obstacles) -> None:
    lines = ["# a b h k alpha"] + [f"{o.a!r} {o.b!r} {o.h!r} {o.k!r} {o.alpha!r}" for o in obstacles]
    Path(path).write_text("\n".join(lines) + "\n")


# Synthetic obstacle field used by the acceptance benchmark; the landing
# area is the [-4, 4]^2 square of the training distribution.
DEMO_OBSTACLES = (
    EllipseObstacle(0.5, 0.35, 1.5, 1.8, 0.4),
    EllipseObstacle(0.45, 0.45, -2.0, -1.0, 0.0),
    EllipseObstacle(0.6, 0.3, 1.8, -2.2, -0.6),
    EllipseObstacle(0.3, 0.5, -1.5, 2.4, 0.2),
)
