"""Run configuration stored as a plain-text ``key = value`` file."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path


@dataclass(frozen=True)
class RunConfig:
    # problem and dataset
    K: int = 20
    gen_count: int = 250
    workers: int = 1
    # optimizer
    scvx_max_iterations: int = 30
    scvx_substeps: int = 15
    w_nu: float = 1e5
    w_delta: float = 1e-3
    w_delta_sigma: float = 1e-1
    w_delta_growth: float = 2.0
    w_delta_max: float = 1e6
    # network and training
    T: int = 200
    net_kind: str = "mlp"
    hidden: int = 256
    depth: int = 4
    batch_size: int = 50
    sample_budget: int = 200_000
    learning_rate: float = 1e-3
    min_learning_rate: float = 1e-5
    # sampling
    sample_count: int = 500
    sample_clip: float = 5.0
    # composition
    composition_mode: str = "negation"
    alpha_base: float = 1.3
    alpha_constraint: float = 0.3
    glideslope_deg: float = 30.0
    glideslope_penalty: float = 10.0
    risk_penalty: float = 50.0
    risk_threshold: float = 0.1
    risk_sigma: float = 0.5
    risk_resolution: float = 0.1
    risk_range: float = 4.0
    obstacles: str = ""
    # reporting
    funnel_tolerance: float = 0.2
    energy_bins: int = 40
    warmstart_scenarios: int = 50
    warmstart_candidates: int = 16

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.type in ("int", "float") and isinstance(value, (int, float)) and value < 0:
                raise ValueError(f"config value {f.name} must be non-negative, got {value}")
        if self.K < 2 or self.T < 2:
            raise ValueError("K and T must be at least 2")

    def replace(self, **changes) -> "RunConfig":
        return replace(self, **changes)

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())

    def digest(self) -> str:
        """Stable hash of every setting, embedded in reports."""
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:12]

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())


_CASTS = {"int": int, "float": float, "str": str}


def _integer(text: str) -> int:
    # accepts "200000" and "2e5" but not "1.5"
    value = float(text)
    if not value.is_integer():
        raise ValueError(f"{text!r} is not an integer")
    return int(value)


def parse_config(text: str, base: RunConfig | None = None, source: str = "<config>") -> RunConfig:
    types = {f.name: f.type for f in fields(RunConfig)}
    changes = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (part.strip() for part in line.partition("="))
        if not sep:
            raise ValueError(f"{source}:{lineno}: expected 'key = value'")
        if key not in types:
            raise ValueError(f"{source}:{lineno}: unknown setting {key!r}")
        try:
            changes[key] = _integer(value) if types[key] == "int" else _CASTS[types[key]](value)
        except ValueError as exc:
            raise ValueError(f"{source}:{lineno}: bad value for {key}: {value!r}") from exc
    return replace(base or RunConfig(), **changes)


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    return parse_config(Path(path).read_text(), source=str(path))
