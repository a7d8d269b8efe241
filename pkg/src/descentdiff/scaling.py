"""Per-row robust scaling (median / interquartile range)."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .trajectory import N_ROWS, TrajectoryPlan


@dataclass(frozen=True, eq=False)
class RobustScale:
    center: np.ndarray
    spread: np.ndarray

    def __post_init__(self):
        center = np.array(self.center, dtype=float).reshape(N_ROWS)
        spread = np.array(self.spread, dtype=float).reshape(N_ROWS)
        if np.any(spread <= 0) or not np.all(np.isfinite(spread)):
            raise ValueError("spread must be positive and finite")
        center.setflags(write=False)
        spread.setflags(write=False)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "spread", spread)

    def scale(self, x):
        """Map physical values to scaled space.

        Accepts a :class:`TrajectoryPlan` or any array whose last two axes are
        ``(17, K)``; plans come back as plain arrays.
        """
        a = x.data if isinstance(x, TrajectoryPlan) else np.asarray(x, dtype=float)
        return (a - self.center[:, None]) / self.spread[:, None]

    def unscale(self, x) -> np.ndarray:
        a = np.asarray(x, dtype=float)
        return a * self.spread[:, None] + self.center[:, None]

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(), "spread": self.spread.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "RobustScale":
        return cls(np.asarray(d["center"]), np.asarray(d["spread"]))

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.center.tobytes())
        h.update(self.spread.tobytes())
        return h.hexdigest()[:16]

    def save(self, path) -> None:
        payload = {"format": "robust-scale-v1", "digest": self.digest(), **self.to_dict()}
        Path(path).write_text(json.dumps(payload, indent=1))

    @classmethod
    def load(cls, path) -> "RobustScale":
        payload = json.loads(Path(path).read_text())
        if payload.get("format") != "robust-scale-v1":
            raise ValueError(f"{path}: not a scale file")
        return cls.from_dict(payload)


def fit_scale(dataset: Iterable[TrajectoryPlan] | np.ndarray) -> RobustScale:
    """Median and IQR of every row over all plans and nodes.

    Rows whose IQR is below 1e-6 (relative to the median when that exceeds
    one) are treated as constant and get spread 1, so solver round-off in an
    otherwise constant row maps to about zero instead of being magnified.
    """
    if isinstance(dataset, np.ndarray):
        stack = np.asarray(dataset, dtype=float)
    else:
        plans = list(dataset)
        if not plans:
            raise ValueError("cannot fit a scale on an empty dataset")
        stack = np.stack([p.data for p in plans])
    if stack.ndim != 3 or stack.shape[0] == 0 or stack.shape[1] != N_ROWS:
        raise ValueError("cannot fit a scale on an empty dataset")
    rows = np.moveaxis(stack, 1, 0).reshape(N_ROWS, -1)
    q25, center, q75 = np.percentile(rows, [25, 50, 75], axis=1)
    spread = q75 - q25
    spread[spread <= 1e-6 * np.maximum(1.0, np.abs(center))] = 1.0
    return RobustScale(center, spread)
