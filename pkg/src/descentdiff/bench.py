"""Pipelines behind the command-line tool.

Each function is deterministic given its configuration and seed, apart
from the wall-clock timing fields it reports.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .diffusion import (InpaintMask, NetworkConfig, NoiseSchedule, TrainConfig, TrainState,
                        build_cosine_schedule, build_network, sample, train)
from .energy import (CompositionSpec, GlideslopeEnergy, GlideslopeSpec, LearnedEnergy, RiskEnergy,
                     RiskEnergySpec, compose, hard_glideslope_check, log_likelihood_surrogate,
                     relative_to_landing)
from .riskmap import DEMO_OBSTACLES, RISK_THRESHOLD, RiskGrid, create_risk_map, landing_risks, read_obstacles
from .scaling import RobustScale
from .scvx import ScvxWeights, estimate_time_scale, propagate, scvx_solve
from .trajectory import (N_ROWS, ROW_M, ROW_NAMES, ROWS_Q, ROWS_R, ROWS_V, ROWS_W, DescentProblem,
                         ScenarioDistribution, TrajectoryPlan, sample_scenario)

# scenario seeds for warm-start benchmarks are drawn from a separate stream
WARMSTART_STREAM = 7


def scvx_weights(cfg: RunConfig) -> ScvxWeights:
    return ScvxWeights(w_nu=cfg.w_nu, w_delta=cfg.w_delta, w_delta_sigma=cfg.w_delta_sigma,
                       w_delta_growth=cfg.w_delta_growth, w_delta_max=cfg.w_delta_max)


# dataset ------------------------------------------------------------------

@dataclass
class SolveOutcome:
    index: int
    problem: DescentProblem
    plan: TrajectoryPlan | None
    sigma: float
    iterations: int
    wall_time: float
    converged: bool


@dataclass
class GenerationResult:
    outcomes: list[SolveOutcome] = field(default_factory=list)

    @property
    def converged(self) -> list[SolveOutcome]:
        return [o for o in self.outcomes if o.converged]

    @property
    def plans(self) -> list[TrajectoryPlan]:
        return [o.plan for o in self.converged]

    @property
    def problems(self) -> list[DescentProblem]:
        return [o.problem for o in self.converged]

    @property
    def converged_fraction(self) -> float:
        return len(self.converged) / len(self.outcomes) if self.outcomes else 0.0

    @property
    def mean_solve_time(self) -> float:
        return float(np.mean([o.wall_time for o in self.outcomes])) if self.outcomes else 0.0


def scenario(seed: int, index: int, cfg: RunConfig, stream: int = 0) -> DescentProblem:
    return sample_scenario(ScenarioDistribution(K=cfg.K), [seed, stream, index])


def _solve_one(job) -> SolveOutcome:
    index, problem, cfg = job
    start = time.perf_counter()
    try:
        result = scvx_solve(problem, weights=scvx_weights(cfg), max_iterations=cfg.scvx_max_iterations,
                            substeps=cfg.scvx_substeps)
    except Exception:  # a failed subproblem counts as a non-converged scenario
        return SolveOutcome(index, problem, None, float("nan"), cfg.scvx_max_iterations,
                            time.perf_counter() - start, False)
    return SolveOutcome(index, problem, result.plan, result.sigma, result.log.iterations,
                        time.perf_counter() - start, result.converged)


def solve_scenarios(problems, cfg: RunConfig, log=None) -> GenerationResult:
    jobs = [(i, p, cfg) for i, p in enumerate(problems)]
    out = GenerationResult()
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = pool.map(_solve_one, jobs)
    else:
        results = map(_solve_one, jobs)
    for outcome in results:
        out.outcomes.append(outcome)
        if log:
            log(f"scenario {outcome.index}: converged={outcome.converged} "
                f"iterations={outcome.iterations} time={outcome.wall_time:.2f}s")
    return out


def generate_dataset(cfg: RunConfig, count: int, seed: int, log=None) -> GenerationResult:
    if count <= 0:
        raise ValueError("dataset generation needs a positive scenario count")
    return solve_scenarios([scenario(seed, i, cfg) for i in range(count)], cfg, log)


# training -----------------------------------------------------------------

def network_config(cfg: RunConfig, seed: int, energy: bool = False) -> NetworkConfig:
    return NetworkConfig(rows=N_ROWS, nodes=cfg.K, kind=cfg.net_kind, hidden=cfg.hidden, depth=cfg.depth,
                         energy=energy, seed=seed)


def train_config(cfg: RunConfig, seed: int) -> TrainConfig:
    return TrainConfig(batch_size=cfg.batch_size, sample_budget=cfg.sample_budget,
                       learning_rate=cfg.learning_rate, min_learning_rate=cfg.min_learning_rate,
                       seed=seed, T=cfg.T)


def train_model(cfg: RunConfig, scaled: np.ndarray, seed: int, net=None, optimizer=None,
                state: TrainState | None = None, steps: int | None = None, log=None):
    """Train (or resume) a network on scaled plans; returns ``(net, optimizer, state)``."""
    import torch

    schedule = build_cosine_schedule(cfg.T)
    tcfg = train_config(cfg, seed)
    net = net or build_network(network_config(cfg, seed))
    optimizer = optimizer or torch.optim.Adam(net.parameters(), lr=tcfg.learning_rate)
    state = train(net, scaled, schedule, tcfg, optimizer=optimizer, state=state, steps=steps,
                  log_every=500 if log else 0, log=log or print)
    return net, optimizer, state


# sampling -----------------------------------------------------------------

@dataclass
class Model:
    """A trained network together with its schedule and data scaling."""

    net: object
    schedule: NoiseSchedule
    scale: RobustScale

    @property
    def K(self) -> int:
        return self.net.cfg.nodes

    @property
    def shape(self) -> tuple[int, int]:
        return (N_ROWS, self.K)


def draw(model: Model, count: int, seed: int, cfg: RunConfig, noise_model=None, mask=None, keep_steps=()):
    """Sample ``count`` physical plans; returns ``(plans, history, seconds)``."""
    start = time.perf_counter()
    plans, history = sample(noise_model or model.net, model.schedule, count, model.shape, seed=seed,
                            mask=mask, scale=model.scale, keep_steps=keep_steps,
                            clip=cfg.sample_clip or None)
    return plans, history, time.perf_counter() - start


def glideslope_model(model: Model, cfg: RunConfig):
    constraint = GlideslopeEnergy(GlideslopeSpec(cfg.glideslope_deg, cfg.glideslope_penalty),
                                  model.scale, model.schedule)
    return compose([LearnedEnergy(model.net, model.schedule), constraint],
                   CompositionSpec(cfg.composition_mode, (cfg.alpha_base, cfg.alpha_constraint)))


def risk_grid(cfg: RunConfig) -> RiskGrid:
    obstacles = read_obstacles(cfg.obstacles) if cfg.obstacles else DEMO_OBSTACLES
    span = (-cfg.risk_range, cfg.risk_range)
    return create_risk_map(obstacles, span, span, cfg.risk_resolution, cfg.risk_sigma)


def risk_model(model: Model, cfg: RunConfig, grid: RiskGrid):
    constraint = RiskEnergy(grid, RiskEnergySpec(cfg.risk_penalty, cfg.risk_threshold), model.scale, model.schedule)
    return compose([LearnedEnergy(model.net, model.schedule), constraint],
                   CompositionSpec(cfg.composition_mode, (cfg.alpha_base, cfg.alpha_constraint)))


# evaluation ---------------------------------------------------------------

def evaluate_glideslope(model: Model, cfg: RunConfig, count: int, seed: int) -> dict:
    base, _, t_base = draw(model, count, seed, cfg)
    composed, _, t_comp = draw(model, count, seed, cfg, noise_model=glideslope_model(model, cfg))
    out = {"gamma_deg": cfg.glideslope_deg, "samples": count}
    for name, plans, secs in (("unconditioned", base, t_base), ("composed", composed, t_comp)):
        bad, rate = hard_glideslope_check(relative_to_landing(plans[:, ROWS_R]), cfg.glideslope_deg)
        out[name] = {"rate": rate, "violations": int(bad.sum()), "segments": int(bad.size),
                     "landing_altitude_median": float(np.median(plans[:, 0, -1])), "sample_seconds": secs}
    return out


def evaluate_risk(model: Model, cfg: RunConfig, count: int, seed: int, grid: RiskGrid) -> dict:
    base, _, t_base = draw(model, count, seed, cfg)
    composed, _, t_comp = draw(model, count, seed, cfg, noise_model=risk_model(model, cfg, grid))
    out = {"samples": count, "threshold": RISK_THRESHOLD}
    for name, plans, secs in (("unconditioned", base, t_base), ("composed", composed, t_comp)):
        risk, flag = landing_risks(plans[:, 1:3, -1], grid)
        out[name] = {"rate": float(flag.mean()), "flagged": int(flag.sum()), "mean_risk": float(risk.mean()),
                     "sample_seconds": secs, "landing_xy": plans[:, 1:3, -1].tolist()}
    return out


def funnel_statistics(plans: np.ndarray) -> dict:
    return {"mean": plans.mean(axis=0).tolist(), "std": plans.std(axis=0).tolist()}


def evaluate_funnels(model: Model, cfg: RunConfig, count: int, seed: int, optimizer_plans: np.ndarray) -> dict:
    """Per-state, per-node mean and spread of diffusion and optimizer plans."""
    samples, _, secs = draw(model, count, seed, cfg)
    optimizer_plans = np.asarray(optimizer_plans, dtype=float)[:count]
    diff = samples.mean(axis=0) - optimizer_plans.mean(axis=0)
    within = np.abs(diff) <= model.scale.spread[:, None]
    mass_gap = float(np.mean(samples[:, ROW_M]) - np.mean(optimizer_plans[:, ROW_M]))
    return {
        "states": list(ROW_NAMES),
        "diffusion": funnel_statistics(samples),
        "optimizer": funnel_statistics(optimizer_plans),
        "diffusion_samples": int(samples.shape[0]),
        "optimizer_samples": int(optimizer_plans.shape[0]),
        "within_iqr_fraction": float(within.mean()),
        "mass_mean_gap": mass_gap,
        "mass_within_tolerance": abs(mass_gap) <= cfg.funnel_tolerance,
        "sample_seconds": secs,
    }


def reverse_step_levels(T: int) -> dict[int, int]:
    """Reverse step index ``s`` (0 = pure noise) to the noise level ``t = T - s``."""
    return {0: T, T // 2: T - T // 2, T - 1: 1}


def evaluate_energy(model: Model, cfg: RunConfig, count: int, seed: int) -> dict:
    """Histograms of the per-dimension negative energy along the reverse process."""
    levels = reverse_step_levels(model.schedule.T)
    _, history, _ = draw(model, count, seed, cfg, keep_steps=levels.values())
    learned = LearnedEnergy(model.net, model.schedule)
    out = {"steps": {}}
    for step, t in levels.items():
        values = log_likelihood_surrogate(learned, history[t], t)
        counts, edges = np.histogram(values, bins=cfg.energy_bins)
        out["steps"][str(step)] = {
            "t": t, "mean": float(values.mean()), "variance": float(values.var()),
            "min": float(values.min()), "max": float(values.max()),
            "counts": counts.tolist(), "edges": edges.tolist(), "values": values.tolist(),
        }
    return out


# warm starts ----------------------------------------------------------------

def initial_state_mask(problem: DescentProblem, scale: RobustScale) -> InpaintMask:
    """Condition on the scenario's initial state and landing point."""
    entries = [(ROW_M, 0, problem.m_wet)]
    for rows, values in ((ROWS_R, problem.r0), (ROWS_V, problem.v0), (ROWS_Q, problem.q0), (ROWS_W, problem.w0)):
        entries += [(row, 0, v) for row, v in zip(range(rows.start, rows.stop), values)]
    entries += [(0, -1, problem.final_position[0])]
    if problem.constrain_final_xy:
        entries += [(1, -1, problem.final_position[1]), (2, -1, problem.final_position[2])]
    return InpaintMask.from_entries(entries, problem.K, scale)


def pick_warm_start(candidates: np.ndarray, problem: DescentProblem) -> tuple[TrajectoryPlan, float]:
    """The candidate with the smallest dynamics defect under its own time scale."""
    best = None
    for data in candidates:
        plan = TrajectoryPlan(data).with_unit_quaternions()
        sigma = estimate_time_scale(plan, problem)
        defect = propagate(plan, sigma, problem).max_defect
        if best is None or defect < best[0]:
            best = (defect, plan, sigma)
    return best[1], best[2]


def warmstart_bench(model: Model, cfg: RunConfig, count: int, seed: int, log=None) -> list[dict]:
    records = []
    for i in range(count):
        problem = scenario(seed, i, cfg, stream=WARMSTART_STREAM)
        default = _solve_one((i, problem, cfg))
        start = time.perf_counter()
        candidates, _, _ = draw(model, cfg.warmstart_candidates, seed + i, cfg,
                                mask=initial_state_mask(problem, model.scale))
        guess, sigma = pick_warm_start(candidates, problem)
        sample_time = time.perf_counter() - start
        start = time.perf_counter()
        try:
            warm = scvx_solve(problem, weights=scvx_weights(cfg), initial_guess=guess, initial_sigma=sigma,
                              max_iterations=cfg.scvx_max_iterations, substeps=cfg.scvx_substeps)
            warm_iters, warm_ok = warm.log.iterations, warm.converged
        except Exception:
            warm_iters, warm_ok = cfg.scvx_max_iterations, False
        record = {
            "scenario_id": i,
            "default_iterations": default.iterations, "default_time": default.wall_time,
            "default_converged": default.converged,
            "warm_iterations": warm_iters, "warm_time": time.perf_counter() - start,
            "warm_converged": warm_ok, "sample_time": sample_time,
        }
        records.append(record)
        if log:
            log(f"scenario {i}: default {default.iterations} it, warm {warm_iters} it")
    return records
