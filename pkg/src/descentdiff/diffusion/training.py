"""Noise-prediction training loop."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .network import ScoreNetwork
from .schedule import NoiseSchedule, forward_noise


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 50
    sample_budget: int = 3320
    learning_rate: float = 1e-3
    cosine_decay: bool = True
    min_learning_rate: float = 1e-5
    seed: int = 0
    T: int = 1000

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if self.T < 2:
            raise ValueError("schedule needs at least 2 steps")
        if self.sample_budget < self.batch_size:
            raise ValueError("sample budget must cover at least one batch")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")

    @property
    def steps(self) -> int:
        return math.ceil(self.sample_budget / self.batch_size)

    def to_dict(self) -> dict:
        return asdict(self)


def diffusion_loss(net, x0: np.ndarray, t: np.ndarray, eps: np.ndarray, schedule: NoiseSchedule) -> torch.Tensor:
    """Batch mean of the per-sample squared noise-prediction error."""
    xt = torch.from_numpy(forward_noise(x0, t, eps, schedule))
    pred = net(xt, torch.from_numpy(t.astype(float)))
    err = pred - torch.from_numpy(eps)
    return torch.mean(torch.sum(err.reshape(err.shape[0], -1) ** 2, dim=1))


def training_step(net: ScoreNetwork, batch: np.ndarray, schedule: NoiseSchedule,
                  rng: np.random.Generator, optimizer: torch.optim.Optimizer) -> float:
    """One optimizer step on a scaled batch ``(B, 17, K)``; returns the loss."""
    batch = np.asarray(batch, dtype=float)
    t = rng.integers(1, schedule.T + 1, size=batch.shape[0])
    eps = rng.standard_normal(batch.shape)
    net.train()
    optimizer.zero_grad()
    loss = diffusion_loss(net, batch, t, eps, schedule)
    value = float(loss.detach())
    if not math.isfinite(value):
        raise TrainingError(f"non-finite loss {value} (t range {t.min()}..{t.max()}, "
                            f"batch max |x| {np.max(np.abs(batch)):.3g})")
    loss.backward()
    optimizer.step()
    return value


@dataclass
class TrainState:
    """Optimizer progress carried across resumed runs."""

    step: int = 0
    losses: list[float] = field(default_factory=list)


def make_optimizer(net: ScoreNetwork, cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(net.parameters(), lr=cfg.learning_rate)


def learning_rate_at(cfg: TrainConfig, step: int, total: int) -> float:
    if not cfg.cosine_decay or total <= 1:
        return cfg.learning_rate
    frac = min(step / (total - 1), 1.0)
    return cfg.min_learning_rate + 0.5 * (cfg.learning_rate - cfg.min_learning_rate) * (1 + math.cos(math.pi * frac))


def train(net: ScoreNetwork, data: np.ndarray, schedule: NoiseSchedule, cfg: TrainConfig,
          optimizer: torch.optim.Optimizer | None = None, state: TrainState | None = None,
          steps: int | None = None, log_every: int = 0, log=print) -> TrainState:
    """Train on scaled plans ``data`` ``(N, 17, K)``.

    Each batch is a random subset drawn without replacement.  Passing the
    optimizer and state from an earlier call resumes the same run.
    """
    data = np.asarray(data, dtype=float)
    if data.shape[0] < cfg.batch_size:
        raise ValueError(f"dataset has {data.shape[0]} plans, fewer than the batch size {cfg.batch_size}")
    optimizer = optimizer or make_optimizer(net, cfg)
    state = state or TrainState()
    total = cfg.steps
    todo = total - state.step if steps is None else steps
    # the stream depends only on the seed and the global step, so resumed
    # runs see the same batches as uninterrupted ones
    for _ in range(todo):
        rng = np.random.default_rng([cfg.seed, state.step])
        idx = rng.choice(data.shape[0], size=cfg.batch_size, replace=False)
        for group in optimizer.param_groups:
            group["lr"] = learning_rate_at(cfg, state.step, total)
        loss = training_step(net, data[idx], schedule, rng, optimizer)
        state.losses.append(loss)
        state.step += 1
        if log_every and state.step % log_every == 0:
            log(f"step {state.step}/{total} loss {np.mean(state.losses[-log_every:]):.4f}")
    net.eval()
    return state


def smoothed(losses, window: int = 50) -> np.ndarray:
    """Trailing moving average of a loss curve."""
    losses = np.asarray(losses, dtype=float)
    if losses.size == 0:
        return losses
    c = np.cumsum(np.insert(losses, 0, 0.0))
    idx = np.arange(1, losses.size + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)
