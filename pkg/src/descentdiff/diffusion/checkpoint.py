"""Versioned binary checkpoints.

Layout (little endian)::

    b"DDCK"   magic
    u32       format version
    u32       length n of the JSON header
    n bytes   UTF-8 JSON: network config, schedule length, scaler digest,
              training metadata, parameter and optimizer-slot counts
    f64[...]  flat parameters, then (optional) Adam step and moment vectors
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .network import NetworkConfig, ScoreNetwork, build_network

MAGIC = b"DDCK"
VERSION = 1
_HEADER = struct.Struct("<4sII")


class CheckpointError(Exception):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class ArchitectureMismatchError(CheckpointError):
    pass


@dataclass
class CheckpointInfo:
    config: NetworkConfig
    schedule_T: int
    scale_digest: str | None = None
    metadata: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)


def _adam_vectors(net: ScoreNetwork, optimizer) -> tuple[list[int], np.ndarray] | None:
    if optimizer is None:
        return None
    steps, chunks = [], []
    for p in net.parameters():
        st = optimizer.state.get(p)
        if not st:
            return None
        steps.append(int(st["step"]))
        chunks.append(st["exp_avg"].detach().reshape(-1).numpy())
        chunks.append(st["exp_avg_sq"].detach().reshape(-1).numpy())
    return steps, np.concatenate(chunks).astype(float)


def save_checkpoint(net: ScoreNetwork, path, schedule_T: int, scale_digest: str | None = None,
                    metadata: dict | None = None, optimizer=None) -> None:
    params = net.parameter_vector()
    adam = _adam_vectors(net, optimizer)
    header = {
        "config": net.cfg.to_dict(),
        "schedule_T": int(schedule_T),
        "scale_digest": scale_digest,
        "metadata": metadata or {},
        "n_params": int(params.size),
        "adam_steps": adam[0] if adam else None,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    payload = [params] + ([adam[1]] if adam else [])
    body = np.concatenate(payload).astype("<f8").tobytes()
    Path(path).write_bytes(_HEADER.pack(MAGIC, VERSION, len(blob)) + blob + body)


def read_checkpoint(path) -> tuple[dict, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise CorruptCheckpointError(f"{path}: file too short")
    magic, version, n = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CorruptCheckpointError(f"{path}: not a checkpoint (magic {magic!r})")
    if version != VERSION:
        raise CorruptCheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(raw[_HEADER.size:_HEADER.size + n].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"{path}: unreadable header") from exc
    body = raw[_HEADER.size + n:]
    if len(body) % 8:
        raise CorruptCheckpointError(f"{path}: parameter block is not a whole number of floats")
    values = np.frombuffer(body, dtype="<f8")
    expected = header["n_params"] * (3 if header.get("adam_steps") else 1)
    if values.size != expected:
        raise CorruptCheckpointError(f"{path}: expected {expected} values, found {values.size}")
    return header, values.astype(float)


def load_checkpoint(path, expected_config: NetworkConfig | None = None, expected_T: int | None = None,
                    expected_scale_digest: str | None = None, optimizer_lr: float | None = None):
    """Rebuild the network; returns ``(net, info)`` or ``(net, info, optimizer)``
    when ``optimizer_lr`` is given and Adam state was stored."""
    header, values = read_checkpoint(path)
    try:
        cfg = NetworkConfig.from_dict(header["config"])
    except (TypeError, ValueError) as exc:
        raise CorruptCheckpointError(f"{path}: bad network config") from exc
    if expected_config is not None and cfg != expected_config:
        diffs = [k for k, v in expected_config.to_dict().items() if cfg.to_dict().get(k) != v]
        raise ArchitectureMismatchError(f"{path}: architecture differs in {', '.join(diffs)}")
    if expected_scale_digest is not None and header.get("scale_digest") != expected_scale_digest:
        raise CheckpointError(f"{path}: checkpoint was trained with a different scaler")
    info = CheckpointInfo(cfg, int(header["schedule_T"]), header.get("scale_digest"), header.get("metadata", {}))
    if expected_T is not None and info.schedule_T != expected_T:
        msg = f"checkpoint trained with T={info.schedule_T}, sampling with T={expected_T}"
        info.warnings.append(msg)
        warnings.warn(msg, stacklevel=2)
    net = build_network(cfg)
    n = header["n_params"]
    net.load_parameter_vector(values[:n])
    net.eval()
    if optimizer_lr is None:
        return net, info
    optimizer = torch.optim.Adam(net.parameters(), lr=optimizer_lr)
    steps = header.get("adam_steps")
    if steps:
        moments = values[n:]
        i = 0
        for p, step in zip(net.parameters(), steps):
            k = p.numel()
            optimizer.state[p] = {
                "step": torch.tensor(float(step)),
                "exp_avg": torch.from_numpy(moments[i:i + k].reshape(p.shape).copy()),
                "exp_avg_sq": torch.from_numpy(moments[i + k:i + 2 * k].reshape(p.shape).copy()),
            }
            i += 2 * k
    return net, info, optimizer
