"""PNG figures rendered from a metrics report."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .report import MetricsReport  # noqa: E402
from .riskmap import RiskGrid  # noqa: E402


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_funnels(funnels: dict, path) -> Path:
    states = funnels["states"]
    cols = 4
    rows = -(-len(states) // cols)
    fig, axes = plt.subplots(rows, cols, figsize=(3.2 * cols, 2.2 * rows), sharex=True)
    for i, ax in enumerate(axes.flat):
        if i >= len(states):
            ax.axis("off")
            continue
        for side, color in (("optimizer", "tab:blue"), ("diffusion", "tab:orange")):
            mean = np.asarray(funnels[side]["mean"][i])
            std = np.asarray(funnels[side]["std"][i])
            k = np.arange(mean.size)
            ax.plot(k, mean, color=color, label=side)
            ax.fill_between(k, mean - std, mean + std, color=color, alpha=0.25)
        ax.set_title(states[i], fontsize=9)
    axes.flat[0].legend(fontsize=7)
    return _save(fig, Path(path))


def plot_energy(energy: dict, path) -> Path:
    steps = energy["steps"]
    fig, axes = plt.subplots(1, len(steps), figsize=(4 * len(steps), 3))
    for ax, (step, h) in zip(np.atleast_1d(axes), steps.items()):
        edges = np.asarray(h["edges"])
        ax.stairs(h["counts"], edges, fill=True, alpha=0.7)
        ax.set_title(f"reverse step {step} (t = {h['t']})", fontsize=9)
        ax.set_xlabel("negative energy per dimension")
    return _save(fig, Path(path))


def plot_risk(risk: dict, grid: RiskGrid, path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 4.5))
    extent = (*grid.x_range, *grid.y_range)
    im = ax.imshow(grid.values.T, origin="lower", extent=extent, cmap="Reds", vmin=0, vmax=1)
    fig.colorbar(im, ax=ax, label="risk")
    for name, marker in (("unconditioned", "x"), ("composed", "o")):
        xy = np.asarray(risk[name]["landing_xy"])
        ax.scatter(xy[:, 0], xy[:, 1], s=6, marker=marker, label=f"{name} ({risk[name]['rate']:.1%} flagged)")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.legend(fontsize=7, loc="upper right")
    return _save(fig, Path(path))


def plot_rates(section: dict, title: str, path) -> Path:
    fig, ax = plt.subplots(figsize=(4, 3))
    names = ["unconditioned", "composed"]
    ax.bar(names, [section[n]["rate"] for n in names], color=["tab:gray", "tab:green"])
    ax.set_ylabel("violation rate")
    ax.set_title(title, fontsize=10)
    return _save(fig, Path(path))


def plot_warmstart(records, path) -> Path:
    fig, ax = plt.subplots(figsize=(4, 4))
    d = np.array([r.default_iterations for r in records])
    w = np.array([r.warm_iterations for r in records])
    ax.scatter(d, w, s=10)
    top = max(d.max(), w.max()) + 1
    ax.plot([0, top], [0, top], color="k", lw=0.8)
    ax.set_xlabel("iterations from default guess")
    ax.set_ylabel("iterations from diffusion guess")
    return _save(fig, Path(path))


def render_report(report: MetricsReport, stem, grid: RiskGrid | None = None) -> list[Path]:
    """Write every figure the report has data for as ``<stem>_<name>.png``."""
    stem = Path(stem).with_suffix("")
    out = []
    if report.funnels:
        out.append(plot_funnels(report.funnels, f"{stem}_funnels.png"))
    if report.energy:
        out.append(plot_energy(report.energy, f"{stem}_energy.png"))
    if report.glideslope:
        out.append(plot_rates(report.glideslope, "glideslope segment violations", f"{stem}_glideslope.png"))
    if report.risk:
        out.append(plot_rates(report.risk, "landing-risk flags", f"{stem}_risk_rates.png"))
        if grid is not None:
            out.append(plot_risk(report.risk, grid, f"{stem}_risk.png"))
    if report.warmstart:
        out.append(plot_warmstart(report.warmstart, f"{stem}_warmstart.png"))
    return out
