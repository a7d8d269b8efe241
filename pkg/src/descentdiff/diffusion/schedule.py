"""Cosine noise schedule and the closed-form forward process."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

COSINE_OFFSET = 0.008
MAX_BETA = 0.999


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Per-step tables indexed by ``t = 0..T``.

    Entry 0 is the clean data level (``beta_0 = 0``, ``alpha_bar_0 = 1``);
    steps ``1..T`` are the diffusion steps.
    """

    betas: np.ndarray

    def __post_init__(self):
        betas = np.array(self.betas, dtype=float)
        if betas.ndim != 1 or betas.size < 3 or betas[0] != 0.0:
            raise ValueError("betas must be a 1-D table starting with beta_0 = 0")
        if np.any(betas[1:] <= 0) or np.any(betas[1:] > 1):
            raise ValueError("betas must lie in (0, 1]")
        betas.setflags(write=False)
        object.__setattr__(self, "betas", betas)
        alphas = 1.0 - betas
        alpha_bars = np.cumprod(alphas)
        sigmas = np.sqrt(1.0 - alpha_bars)
        for name, arr in (("alphas", alphas), ("alpha_bars", alpha_bars), ("sigmas", sigmas)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def T(self) -> int:
        return self.betas.size - 1

    def posterior_variance(self, t: int) -> float:
        """Variance of ``q(x_{t-1} | x_t, x_0)``, for reference."""
        if t <= 1:
            return 0.0
        return float(self.betas[t] * (1 - self.alpha_bars[t - 1]) / (1 - self.alpha_bars[t]))


def build_cosine_schedule(T: int, offset: float = COSINE_OFFSET) -> NoiseSchedule:
    if int(T) != T or T < 2:
        raise ValueError("schedule needs at least 2 steps")
    T = int(T)
    steps = np.arange(T + 1, dtype=float)
    f = np.cos((steps / T + offset) / (1 + offset) * np.pi / 2) ** 2
    alpha_bar = f / f[0]
    betas = np.empty(T + 1)
    betas[0] = 0.0
    betas[1:] = np.clip(1.0 - alpha_bar[1:] / alpha_bar[:-1], 1e-12, MAX_BETA)
    return NoiseSchedule(betas)


def _level(values: np.ndarray, t, ndim: int) -> np.ndarray:
    a = np.asarray(values[np.asarray(t)], dtype=float)
    return a.reshape(a.shape + (1,) * (ndim - a.ndim))


def forward_noise(x0: np.ndarray, t, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """``x_t = sqrt(alpha_bar_t) x0 + sigma_t eps``.

    ``t`` is a scalar step or one step per leading batch entry.
    """
    x0 = np.asarray(x0, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if x0.shape != eps.shape:
        raise ValueError(f"shape mismatch: x0 {x0.shape} vs noise {eps.shape}")
    t_arr = np.asarray(t)
    if np.any(t_arr < 0) or np.any(t_arr > schedule.T):
        raise ValueError(f"step outside 0..{schedule.T}")
    if t_arr.ndim and t_arr.shape[0] != x0.shape[0]:
        raise ValueError("need one step per batch entry")
    return np.sqrt(_level(schedule.alpha_bars, t, x0.ndim)) * x0 + _level(schedule.sigmas, t, x0.ndim) * eps
