"""Ancestral reverse sampling with optional inpainting.

A *noise model* is anything with ``eps(x, t) -> array`` taking a batch
``(B, 17, K)`` and an integer step; trained networks and composed energy
models both qualify.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..scaling import RobustScale
from ..trajectory import N_ROWS, ROW_NAMES
from .schedule import NoiseSchedule, forward_noise


@dataclass(frozen=True, eq=False)
class InpaintMask:
    """Known entries of the scaled 17 x K plan and their target values."""

    mask: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        mask = np.array(self.mask, dtype=bool)
        targets = np.array(self.targets, dtype=float)
        if mask.shape != targets.shape:
            raise ValueError(f"mask {mask.shape} and targets {targets.shape} differ in shape")
        if not np.all(np.isfinite(targets[mask])):
            raise ValueError("inpainting targets must be finite")
        targets = np.where(mask, targets, 0.0)
        mask.setflags(write=False)
        targets.setflags(write=False)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "targets", targets)

    @classmethod
    def from_entries(cls, entries, nodes: int, scale: RobustScale | None = None) -> "InpaintMask":
        """Build from ``(row, node, physical value)`` triples; rows may be names."""
        mask = np.zeros((N_ROWS, nodes), dtype=bool)
        values = np.zeros((N_ROWS, nodes))
        for row, col, value in entries:
            r = ROW_NAMES.index(row) if isinstance(row, str) else int(row)
            c = int(col) % nodes
            mask[r, c] = True
            values[r, c] = float(value)
        if scale is not None:
            values = scale.scale(values)
        return cls(mask, values)

    def apply(self, x: np.ndarray, values: np.ndarray | None = None) -> np.ndarray:
        """Overwrite masked entries of every sample in ``x`` with ``values`` (default: targets)."""
        values = self.targets if values is None else values
        return np.where(self.mask, values, x)

    def merged(self, other: "InpaintMask") -> "InpaintMask":
        return InpaintMask(self.mask | other.mask, np.where(other.mask, other.targets, self.targets))


def read_mask_file(path, nodes: int, scale: RobustScale | None = None) -> InpaintMask:
    """Plain text, one ``row node value`` triple per line; ``#`` starts a comment."""
    entries = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 'row node value'")
        row = parts[0] if not parts[0].lstrip("-").isdigit() else int(parts[0])
        entries.append((row, int(parts[1]), float(parts[2])))
    return InpaintMask.from_entries(entries, nodes, scale)


def clip_noise_estimate(x_t: np.ndarray, eps: np.ndarray, t: int, schedule: NoiseSchedule,
                        clip: float) -> np.ndarray:
    """Noise estimate consistent with the implied clean plan clipped to ``[-clip, clip]``.

    Entries whose implied clean value is within bounds are returned unchanged.
    """
    ab, sg = schedule.alpha_bars[t], schedule.sigmas[t]
    x0 = (x_t - sg * eps) / np.sqrt(ab)
    inside = np.abs(x0) <= clip
    return np.where(inside, eps, (x_t - np.sqrt(ab) * np.clip(x0, -clip, clip)) / sg)


def reverse_step(model, x_t: np.ndarray, t: int, schedule: NoiseSchedule,
                 rng: np.random.Generator | None, noise: bool = True,
                 clip: float | None = None) -> np.ndarray:
    """One ancestral step ``x_t -> x_{t-1}`` (no noise is added at ``t = 1``).

    The last steps divide by ``sqrt(alpha_t)`` with ``beta_t`` near 1, so a
    small error in the noise estimate is amplified many times; ``clip``
    bounds the implied clean plan to keep such steps stable.
    """
    if not 1 <= t <= schedule.T:
        raise ValueError(f"step {t} outside 1..{schedule.T}")
    eps = model.eps(x_t, t)
    if clip is not None:
        eps = clip_noise_estimate(x_t, eps, t, schedule, clip)
    beta = schedule.betas[t]
    mean = (x_t - beta / schedule.sigmas[t] * eps) / np.sqrt(schedule.alphas[t])
    if t > 1 and noise:
        mean = mean + np.sqrt(beta) * rng.standard_normal(x_t.shape)
    return mean


def noised_target(mask: InpaintMask, count: int, t: int, schedule: NoiseSchedule,
                  rng: np.random.Generator) -> np.ndarray:
    """Targets pushed through the forward process to level ``t``; exact at ``t = 0``."""
    shape = (count,) + mask.targets.shape
    if t == 0:
        return np.broadcast_to(mask.targets, shape)
    return forward_noise(np.broadcast_to(mask.targets, shape), t, rng.standard_normal(shape), schedule)


def sample(model, schedule: NoiseSchedule, count: int, shape: tuple[int, int], seed: int = 0,
           mask: InpaintMask | None = None, scale: RobustScale | None = None,
           keep_steps=(), batch_size: int = 1000, clip: float | None = None):
    """Draw ``count`` plans by running all ``T`` reverse steps from N(0, I).

    With a mask, known entries are replaced at every level by the targets
    noised to that level (a fresh draw per level, shared by both overwrites
    of that level) and by the exact targets at the end.

    Returns ``(plans, history)`` where ``plans`` has shape ``(count, *shape)``
    (unscaled when ``scale`` is given) and ``history`` maps each step in
    ``keep_steps`` to the scaled batch ``x_t`` at that step.
    """
    rng = np.random.default_rng(seed)
    mask_rng = np.random.default_rng([seed, 1])
    keep = set(int(k) for k in keep_steps)
    outs, history = [], {k: [] for k in keep}
    for start in range(0, count, batch_size):
        n = min(batch_size, count - start)
        x = rng.standard_normal((n,) + tuple(shape))
        if mask is not None:
            x = mask.apply(x, noised_target(mask, n, schedule.T, schedule, mask_rng))
        if schedule.T in keep:
            history[schedule.T].append(x.copy())
        for t in range(schedule.T, 0, -1):
            x = reverse_step(model, x, t, schedule, rng, clip=clip)
            if mask is not None:
                x = mask.apply(x, noised_target(mask, n, t - 1, schedule, mask_rng))
            if t - 1 in keep:
                history[t - 1].append(x.copy())
        outs.append(x)
    x0 = np.concatenate(outs) if outs else np.empty((0,) + tuple(shape))
    hist = {k: np.concatenate(v) for k, v in history.items()}
    if scale is not None:
        x0 = scale.unscale(x0)
    return x0, hist
