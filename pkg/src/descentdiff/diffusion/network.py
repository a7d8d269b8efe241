"""Noise-prediction networks over 17 x K trajectory tensors.

Two backbones are available: a residual MLP over the flattened plan (the
desk-scale default) and a small 2-D U-Net that treats the plan as a
one-channel image.  Either backbone can be wrapped as an energy model whose
noise prediction is the input gradient of a scalar energy.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

DTYPE = torch.float64


@dataclass(frozen=True)
class NetworkConfig:
    rows: int = 17
    nodes: int = 20
    kind: str = "mlp"  # "mlp" or "unet"
    hidden: int = 256
    depth: int = 4
    time_embedding: int = 64
    unet_channels: tuple[int, ...] = (32, 64, 128, 256)
    energy: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("mlp", "unet"):
            raise ValueError(f"unknown network kind {self.kind!r}")
        if min(self.rows, self.nodes, self.hidden, self.depth, self.time_embedding) < 1:
            raise ValueError("network sizes must be positive")
        object.__setattr__(self, "unet_channels", tuple(int(c) for c in self.unet_channels))

    @property
    def dim(self) -> int:
        return self.rows * self.nodes

    def to_dict(self) -> dict:
        d = asdict(self)
        d["unet_channels"] = list(self.unet_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(**d)


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=DTYPE) / max(half, 1))
    args = t.to(DTYPE)[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=-1)
    return emb


class _TimeMLP(nn.Module):
    def __init__(self, emb_dim: int, out: int):
        super().__init__()
        self.emb_dim = emb_dim
        self.net = nn.Sequential(nn.Linear(emb_dim, out), nn.SiLU(), nn.Linear(out, out))

    def forward(self, t):
        return self.net(timestep_embedding(t, self.emb_dim))


class _ResBlock(nn.Module):
    def __init__(self, width: int):
        super().__init__()
        self.norm = nn.LayerNorm(width)
        self.fc1 = nn.Linear(width, width)
        self.fc2 = nn.Linear(width, width)
        self.act = nn.SiLU()

    def forward(self, h, temb):
        return h + self.fc2(self.act(self.fc1(self.act(self.norm(h) + temb))))


class ResidualMLP(nn.Module):
    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        self.inp = nn.Linear(cfg.dim, cfg.hidden)
        self.time = _TimeMLP(cfg.time_embedding, cfg.hidden)
        self.blocks = nn.ModuleList(_ResBlock(cfg.hidden) for _ in range(cfg.depth))
        self.out = nn.Linear(cfg.hidden, cfg.dim)
        # time-gated elementwise skip: at high noise eps is almost x itself,
        # which a hidden width below the plan size cannot pass through
        self.gate = nn.Linear(cfg.hidden, cfg.dim)

    def forward(self, x, t):
        h = self.inp(x.reshape(x.shape[0], -1))
        temb = self.time(t)
        for block in self.blocks:
            h = block(h, temb)
        return (self.out(h) + self.gate(temb) * x.reshape(x.shape[0], -1)).reshape(x.shape)


class _ConvBlock(nn.Module):
    """Two 3x3 convolutions with layer norm and Swish, time-conditioned."""

    def __init__(self, c_in: int, c_out: int, t_dim: int):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.norm1 = nn.GroupNorm(1, c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.norm2 = nn.GroupNorm(1, c_out)
        self.time = nn.Linear(t_dim, c_out)
        self.act = nn.SiLU()

    def forward(self, h, temb):
        h = self.act(self.norm1(self.conv1(h)))
        h = h + self.time(temb)[:, :, None, None]
        return self.act(self.norm2(self.conv2(h)))


class UNet2D(nn.Module):
    """Max-pool encoder / transposed-conv decoder with concatenated skips."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        chans = cfg.unet_channels
        levels = len(chans) - 1
        unit = 2 ** levels
        self.height = -(-cfg.rows // unit) * unit
        self.width = -(-cfg.nodes // unit) * unit
        t_dim = cfg.time_embedding
        self.time = _TimeMLP(t_dim, t_dim)
        self.stem = nn.Conv2d(1, chans[0], 3, padding=1)
        self.down = nn.ModuleList(
            _ConvBlock(chans[0] if i == 0 else chans[i - 1], chans[i], t_dim) for i in range(levels))
        self.pool = nn.MaxPool2d(2)
        self.mid = _ConvBlock(chans[-2], chans[-1], t_dim)
        self.up = nn.ModuleList(nn.ConvTranspose2d(chans[i + 1], chans[i], 2, stride=2)
                                for i in reversed(range(levels)))
        self.dec = nn.ModuleList(_ConvBlock(2 * chans[i], chans[i], t_dim) for i in reversed(range(levels)))
        self.head = nn.Conv2d(chans[0], 1, 3, padding=1)

    def forward(self, x, t):
        B = x.shape[0]
        img = torch.zeros(B, 1, self.height, self.width, dtype=x.dtype)
        img[:, 0, :self.cfg.rows, :self.cfg.nodes] = x
        temb = self.time(t)
        h = self.stem(img)
        skips = []
        for block in self.down:
            h = block(h, temb)
            skips.append(h)
            h = self.pool(h)
        h = self.mid(h, temb)
        for up, dec in zip(self.up, self.dec):
            h = dec(torch.cat([up(h), skips.pop()], dim=1), temb)
        return self.head(h)[:, 0, :self.cfg.rows, :self.cfg.nodes]


class ScoreNetwork(nn.Module):
    """Noise predictor ``eps_theta(x_t, t)``.

    With ``cfg.energy`` the backbone ``f`` defines the scalar energy
    ``E(x, t) = sigma_t * 0.5 * |x - f(x, t)|^2`` and the noise prediction is
    ``grad_x E / sigma_t``; ``sigma`` must then be supplied.
    """

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        torch.manual_seed(cfg.seed)
        self.backbone = (ResidualMLP(cfg) if cfg.kind == "mlp" else UNet2D(cfg)).to(DTYPE)

    def _half_residual(self, x, t):
        r = x - self.backbone(x, t)
        return 0.5 * torch.sum(r.reshape(r.shape[0], -1) ** 2, dim=1)

    def forward(self, x: torch.Tensor, t: torch.Tensor, create_graph: bool = False) -> torch.Tensor:
        if not self.cfg.energy:
            return self.backbone(x, t)
        with torch.enable_grad():
            if not x.requires_grad:
                x = x.detach().requires_grad_(True)
            e = self._half_residual(x, t)
            (grad,) = torch.autograd.grad(e.sum(), x, create_graph=create_graph or self.training)
        return grad

    def energy(self, x: torch.Tensor, t: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
        """Scalar energy per sample (energy-parameterized networks only)."""
        if not self.cfg.energy:
            raise TypeError("network is not energy-parameterized")
        return sigma * self._half_residual(x, t)

    # numpy-facing helpers used by the sampler and the energy module

    def eps(self, x: np.ndarray, t) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        t_arr = np.broadcast_to(np.asarray(t, dtype=float), (x.shape[0],))
        xt = torch.from_numpy(np.ascontiguousarray(x))
        tt = torch.from_numpy(np.array(t_arr))
        if self.cfg.energy:
            return self.forward(xt, tt).detach().numpy()
        with torch.no_grad():
            return self.forward(xt, tt).numpy()

    def parameter_vector(self) -> np.ndarray:
        return torch.cat([p.detach().reshape(-1) for p in self.parameters()]).numpy().astype(float)

    def load_parameter_vector(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=float)
        total = sum(p.numel() for p in self.parameters())
        if flat.size != total:
            raise ValueError(f"expected {total} parameters, got {flat.size}")
        i = 0
        with torch.no_grad():
            for p in self.parameters():
                n = p.numel()
                p.copy_(torch.from_numpy(flat[i:i + n].reshape(p.shape)))
                i += n


def build_network(cfg: NetworkConfig) -> ScoreNetwork:
    return ScoreNetwork(cfg)
