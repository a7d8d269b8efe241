"""Command-line front end: ``descentdiff <command> [options]``."""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import bench
from .config import RunConfig, load_config
from .dataset import load_dataset, save_dataset
from .diffusion import (CheckpointError, TrainState, build_cosine_schedule, load_checkpoint, read_mask_file,
                        save_checkpoint)
from .diffusion.training import smoothed
from .report import FORMATS, MetricsReport, ReportError, export_report, load_report, save_report
from .riskmap import RiskGrid
from .scaling import RobustScale, fit_scale


class CommandError(RuntimeError):
    pass


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


def _out(args, default: str) -> Path:
    path = Path(args.out or default)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


# model loading ----------------------------------------------------------------

def load_model(path, cfg: RunConfig, scale_path=None) -> bench.Model:
    """Network, schedule and scaler from a checkpoint; a mismatched scaler file is rejected."""
    from .diffusion.checkpoint import read_checkpoint

    header, _ = read_checkpoint(path)
    meta = header.get("metadata", {})
    if scale_path is not None:
        scale = RobustScale.load(scale_path)
    elif "scale" in meta:
        scale = RobustScale.from_dict(meta["scale"])
    else:
        raise CommandError(f"{path}: checkpoint carries no scaler; pass --scale")
    net, info = load_checkpoint(path, expected_T=cfg.T, expected_scale_digest=scale.digest())
    for w in info.warnings:
        _say(f"warning: {w}")
    return bench.Model(net, build_cosine_schedule(cfg.T), scale)


# commands -------------------------------------------------------------------

def cmd_gen_dataset(args, cfg: RunConfig) -> int:
    count = cfg.gen_count if args.count is None else args.count
    if count <= 0:
        raise CommandError("requested an empty dataset (count must be positive)")
    start = time.perf_counter()
    result = bench.generate_dataset(cfg, count, args.seed, log=_say if args.verbose else None)
    if not result.converged:
        raise CommandError(f"none of the {count} scenarios converged")
    out = _out(args, "dataset.tdf")
    save_dataset(out, result.plans, result.problems, K=cfg.K)
    stats = {
        "seed": args.seed, "config_hash": cfg.digest(), "requested": count,
        "converged": len(result.converged), "converged_fraction": result.converged_fraction,
        "mean_solve_seconds": result.mean_solve_time, "wall_seconds": time.perf_counter() - start,
        "scenarios": [{"index": o.index, "converged": o.converged, "iterations": o.iterations,
                       "wall_time": o.wall_time, "sigma": o.sigma} for o in result.outcomes],
    }
    Path(f"{out}.json").write_text(json.dumps(stats, indent=1))
    _say(f"stored {len(result.converged)}/{count} converged plans in {out}")
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    plans, _ = load_dataset(args.dataset, expected_K=cfg.K)
    if len(plans) < cfg.batch_size:
        raise CommandError(f"dataset has {len(plans)} plans, fewer than the batch size {cfg.batch_size}")
    data = np.stack([p.data for p in plans])
    net = optimizer = state = None
    if args.resume:
        net, info, optimizer = load_checkpoint(args.resume, expected_T=cfg.T, optimizer_lr=cfg.learning_rate)
        scale = RobustScale.from_dict(info.metadata["scale"])
        state = TrainState(info.metadata.get("step", 0), list(info.metadata.get("losses", [])))
    else:
        scale = fit_scale(data)
    start = time.perf_counter()
    net, optimizer, state = bench.train_model(cfg, scale.scale(data), args.seed, net=net, optimizer=optimizer,
                                              state=state, steps=args.steps,
                                              log=_say if args.verbose else None)
    out = _out(args, "model.ddck")
    meta = {"config_hash": cfg.digest(), "seed": args.seed, "scale": scale.to_dict(), "step": state.step,
            "losses": state.losses, "train_seconds": time.perf_counter() - start,
            "training_plans": len(plans)}
    save_checkpoint(net, out, cfg.T, scale_digest=scale.digest(), metadata=meta, optimizer=optimizer)
    scale.save(out.with_suffix(".scale.json"))
    curve = smoothed(state.losses)
    lines = ["step,loss,smoothed"] + [f"{i + 1},{l!r},{s!r}" for i, (l, s) in enumerate(zip(state.losses, curve))]
    out.with_suffix(".loss.csv").write_text("\n".join(lines) + "\n")
    _say(f"trained {state.step} steps; final smoothed loss {curve[-1]:.4f}; checkpoint {out}")
    return 0


def cmd_sample(args, cfg: RunConfig) -> int:
    model = load_model(args.checkpoint, cfg, args.scale)
    count = args.count or cfg.sample_count
    mask = read_mask_file(args.mask, model.K, model.scale) if args.mask else None
    noise_model = None
    if args.compose == "glideslope":
        noise_model = bench.glideslope_model(model, cfg)
    elif args.compose == "risk":
        noise_model = bench.risk_model(model, cfg, _grid(args, cfg))
    plans, _, secs = bench.draw(model, count, args.seed, cfg, noise_model=noise_model, mask=mask)
    out = _out(args, "samples.npy")
    np.save(out, plans)
    _say(f"{count} plans in {secs:.2f}s ({secs / count * 1e3:.2f} ms each) -> {out}")
    return 0


def _grid(args, cfg: RunConfig) -> RiskGrid:
    if getattr(args, "grid", None):
        return RiskGrid.load(args.grid)
    if getattr(args, "obstacles", None):
        cfg = cfg.replace(obstacles=args.obstacles)
    return bench.risk_grid(cfg)


def _finish(report: MetricsReport, args, default: str, grid=None) -> int:
    from .plotting import render_report

    out = _out(args, default)
    save_report(report, out)
    written = [out] + export_report(report, out.with_suffix(".csv"), "tabular")
    written += render_report(report, out, grid=grid)
    _say("wrote " + ", ".join(str(p) for p in written))
    return 0


def cmd_evaluate(args, cfg: RunConfig) -> int:
    if args.mode == "risk" and not (args.grid or args.obstacles or cfg.obstacles or args.demo_obstacles):
        raise CommandError("risk mode needs --grid, --obstacles or --demo-obstacles")
    model = load_model(args.checkpoint, cfg, args.scale)
    count = args.count or cfg.sample_count
    report = MetricsReport(command=f"evaluate {args.mode}", seed=args.seed, config_hash=cfg.digest())
    start = time.perf_counter()
    grid = None
    if args.mode == "glideslope":
        report.glideslope = bench.evaluate_glideslope(model, cfg, count, args.seed)
    elif args.mode == "risk":
        grid = _grid(args, cfg)
        report.risk = bench.evaluate_risk(model, cfg, count, args.seed, grid)
    elif args.mode == "funnels":
        if not args.dataset:
            raise CommandError("funnels mode needs --dataset with optimizer plans")
        plans, _ = load_dataset(args.dataset, expected_K=cfg.K)
        report.funnels = bench.evaluate_funnels(model, cfg, count, args.seed, np.stack([p.data for p in plans]))
    else:
        report.energy = bench.evaluate_energy(model, cfg, count, args.seed)
    report.timing["evaluate_seconds"] = time.perf_counter() - start
    return _finish(report, args, f"report_{args.mode}.json", grid)


def cmd_warmstart_bench(args, cfg: RunConfig) -> int:
    model = load_model(args.checkpoint, cfg, args.scale)
    count = args.scenarios or cfg.warmstart_scenarios
    start = time.perf_counter()
    records = bench.warmstart_bench(model, cfg, count, args.seed, log=_say if args.verbose else None)
    report = MetricsReport(command="warmstart-bench", seed=args.seed, config_hash=cfg.digest(), warmstart=records)
    d = [r.default_iterations for r in report.warmstart]
    w = [r.warm_iterations for r in report.warmstart]
    report.timing.update(bench_seconds=time.perf_counter() - start,
                         median_default_iterations=float(np.median(d)), median_warm_iterations=float(np.median(w)))
    return _finish(report, args, "report_warmstart.json")


def cmd_export(args, cfg: RunConfig) -> int:
    report = load_report(args.report)
    out = _out(args, "report.csv" if args.format == "tabular" else "report.json")
    written = export_report(report, out, args.format)
    _say("wrote " + ", ".join(str(p) for p in written))
    return 0


# parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    def global_flags(default):
        # subcommands repeat the global flags without defaults so that a
        # value given before the subcommand is not reset
        g = argparse.ArgumentParser(add_help=False, argument_default=default)
        g.add_argument("--config", help="key = value settings file")
        g.add_argument("--seed", type=int, help="random seed (default 0)")
        g.add_argument("--out", help="output path")
        g.add_argument("-v", "--verbose", action="store_true", help="progress messages on stderr")
        return g

    common = global_flags(argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="descentdiff", parents=[global_flags(None)],
                                     description="Diffusion trajectory generation for 6-DoF powered descent.")
    parser.set_defaults(seed=0, verbose=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.set_defaults(func=func)
        return p

    p = add("gen-dataset", cmd_gen_dataset, "solve random scenarios and store converged plans")
    p.add_argument("--count", type=int, default=None)

    p = add("train", cmd_train, "train a noise-prediction network")
    p.add_argument("--dataset", required=True)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--steps", type=int, default=None, help="stop after this many steps")

    def model_args(p):
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--scale", default=None, help="scaler file (must match the checkpoint)")
        p.add_argument("--count", type=int, default=None)

    p = add("sample", cmd_sample, "draw plans from a trained model")
    model_args(p)
    p.add_argument("--mask", default=None, help="inpainting file of 'row node value' lines")
    p.add_argument("--compose", choices=("none", "glideslope", "risk"), default="none")
    p.add_argument("--grid", default=None)
    p.add_argument("--obstacles", default=None)

    p = add("evaluate", cmd_evaluate, "compute metrics for one evaluation mode")
    model_args(p)
    p.add_argument("--mode", choices=("glideslope", "risk", "funnels", "energy"), required=True)
    p.add_argument("--dataset", default=None, help="optimizer plans for funnels mode")
    p.add_argument("--grid", default=None, help="risk grid file")
    p.add_argument("--obstacles", default=None, help="obstacle list of 'a b h k alpha' rows")
    p.add_argument("--demo-obstacles", action="store_true", help="use the built-in synthetic obstacles")

    p = add("warmstart-bench", cmd_warmstart_bench, "compare optimizer runs from default and diffusion guesses")
    model_args(p)
    p.add_argument("--scenarios", type=int, default=None)

    p = add("export", cmd_export, "convert a structured-text report")
    p.add_argument("--report", required=True)
    p.add_argument("--format", required=True, choices=FORMATS)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except (CommandError, CheckpointError, ReportError, ValueError, OSError) as exc:
        _say(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
