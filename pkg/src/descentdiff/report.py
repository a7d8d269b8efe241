"""Metrics reports and their structured-text (JSON) and tabular (CSV) exports."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

FORMATS = ("structured-text", "tabular")


class ReportError(ValueError):
    pass


@dataclass
class WarmStartRecord:
    scenario_id: int
    default_iterations: int
    default_time: float
    default_converged: bool
    warm_iterations: int
    warm_time: float
    warm_converged: bool
    sample_time: float = 0.0

    def __post_init__(self):
        for prefix in ("default", "warm"):
            if getattr(self, f"{prefix}_converged") and getattr(self, f"{prefix}_iterations") < 1:
                raise ReportError(f"scenario {self.scenario_id}: converged run with no iterations")


def _check_rate(section: str, payload: dict | None) -> None:
    if not payload:
        return
    for name in ("unconditioned", "composed"):
        rate = payload.get(name, {}).get("rate")
        if rate is not None and not 0.0 <= rate <= 1.0:
            raise ReportError(f"{section} {name} rate {rate} outside [0, 1]")


@dataclass
class MetricsReport:
    command: str
    seed: int
    config_hash: str
    glideslope: dict | None = None
    risk: dict | None = None
    funnels: dict | None = None
    energy: dict | None = None
    warmstart: list[WarmStartRecord] = field(default_factory=list)
    timing: dict = field(default_factory=dict)

    def __post_init__(self):
        _check_rate("glideslope", self.glideslope)
        _check_rate("risk", self.risk)
        self.warmstart = [r if isinstance(r, WarmStartRecord) else WarmStartRecord(**r) for r in self.warmstart]
        if self.funnels:
            lengths = {len(row) for side in ("diffusion", "optimizer")
                       for stat in self.funnels[side].values() for row in stat}
            if len(lengths) != 1:
                raise ReportError("funnel rows must all have K entries")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ReportError(f"unknown report fields: {sorted(unknown)}")
        return cls(**d)

    def without_timing(self) -> dict:
        """Report content with every wall-clock field removed, for reproducibility checks."""
        def strip(obj):
            if isinstance(obj, dict):
                return {k: strip(v) for k, v in obj.items()
                        if not (k.endswith("_time") or k.endswith("seconds") or k == "timing")}
            if isinstance(obj, list):
                return [strip(v) for v in obj]
            return obj
        return strip(self.to_dict())


def save_report(report: MetricsReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=1))


def load_report(path) -> MetricsReport:
    try:
        return MetricsReport.from_dict(json.loads(Path(path).read_text()))
    except json.JSONDecodeError as exc:
        raise ReportError(f"{path}: not a structured-text report") from exc


def _write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def _summary_rows(report: MetricsReport):
    yield ("report", "command", report.command)
    yield ("report", "seed", report.seed)
    yield ("report", "config_hash", report.config_hash)
    for section in ("glideslope", "risk"):
        payload = getattr(report, section)
        if not payload:
            continue
        for name in ("unconditioned", "composed"):
            for key, value in payload[name].items():
                if not isinstance(value, list):
                    yield (section, f"{name}_{key}", value)
    if report.funnels:
        for key in ("within_iqr_fraction", "mass_mean_gap", "diffusion_samples", "optimizer_samples"):
            yield ("funnels", key, report.funnels[key])
    for key, value in report.timing.items():
        yield ("timing", key, value)


def export_tabular(report: MetricsReport, path) -> list[Path]:
    """Write a summary CSV at ``path`` plus one CSV per array-valued section beside it."""
    path = Path(path)
    stem = path.with_suffix("")
    written = [_write_csv(path, ("section", "key", "value"), _summary_rows(report))]
    if report.funnels:
        f = report.funnels
        rows = []
        for i, state in enumerate(f["states"]):
            for k in range(len(f["diffusion"]["mean"][i])):
                rows.append((state, k, f["diffusion"]["mean"][i][k], f["diffusion"]["std"][i][k],
                             f["optimizer"]["mean"][i][k], f["optimizer"]["std"][i][k]))
        written.append(_write_csv(Path(f"{stem}_funnels.csv"),
                                  ("state", "node", "diffusion_mean", "diffusion_std",
                                   "optimizer_mean", "optimizer_std"), rows))
    if report.energy:
        rows = []
        for step, h in report.energy["steps"].items():
            for lo, hi, c in zip(h["edges"][:-1], h["edges"][1:], h["counts"]):
                rows.append((step, h["t"], lo, hi, c))
        written.append(_write_csv(Path(f"{stem}_energy.csv"),
                                  ("reverse_step", "t", "bin_low", "bin_high", "count"), rows))
    if report.warmstart:
        names = [f.name for f in fields(WarmStartRecord)]
        written.append(_write_csv(Path(f"{stem}_warmstart.csv"), names,
                                  ([getattr(r, n) for n in names] for r in report.warmstart)))
    return written


def export_report(report: MetricsReport, path, fmt: str) -> list[Path]:
    if fmt not in FORMATS:
        raise ReportError(f"unknown export format {fmt!r}; choose from {', '.join(FORMATS)}")
    if fmt == "structured-text":
        save_report(report, path)
        return [Path(path)]
    return export_tabular(report, path)
