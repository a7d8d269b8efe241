"""Energy-based views of noise predictors and their composition.

Every model here maps a scaled batch ``x`` of shape ``(n, 17, K)`` and a
step ``t`` to a per-sample energy and its input gradient.  The noise
estimate handed to the sampler is ``grad / sigma_t``, so a composed model
plugs into :func:`descentdiff.diffusion.sample` like a plain network.

Constraint energies follow the "higher is better" sign convention and enter
a composition through negation, ``E = a1 * E_traj - a2 * E_constraint``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .diffusion.schedule import NoiseSchedule
from .riskmap import RiskGrid, bilinear_sample
from .scaling import RobustScale

TAGS = ("learned", "analytic-constraint", "risk-map", "composed")


class EnergyModel:
    """Base class: subclasses provide ``energy`` and ``grad``."""

    tag = "analytic-constraint"
    schedule: NoiseSchedule

    def energy(self, x: np.ndarray, t: int) -> np.ndarray:
        raise NotImplementedError

    def grad(self, x: np.ndarray, t: int) -> np.ndarray:
        raise NotImplementedError

    def eps(self, x: np.ndarray, t: int) -> np.ndarray:
        return score_from_energy(self, x, t)


def score_from_energy(model: EnergyModel, x: np.ndarray, t: int) -> np.ndarray:
    """Noise estimate ``grad_x E(x, t) / sigma_t``."""
    sigma = model.schedule.sigmas[t]
    if sigma <= 0:
        raise ValueError(f"step {t} has zero noise level; the score is undefined")
    g = np.asarray(model.grad(x, t), dtype=float)
    if not np.all(np.isfinite(g)):
        raise FloatingPointError(f"non-finite energy gradient at step {t}")
    return g / sigma


class FunctionEnergy(EnergyModel):
    """Energy from plain callables ``energy_fn(x, t)`` and ``grad_fn(x, t)``."""

    def __init__(self, energy_fn, grad_fn, schedule: NoiseSchedule, tag: str = "analytic-constraint"):
        if tag not in TAGS:
            raise ValueError(f"unknown tag {tag!r}")
        self.energy_fn, self.grad_fn, self.schedule, self.tag = energy_fn, grad_fn, schedule, tag

    def energy(self, x, t):
        return np.asarray(self.energy_fn(x, t), dtype=float)

    def grad(self, x, t):
        return np.asarray(self.grad_fn(x, t), dtype=float)


class LearnedEnergy(EnergyModel):
    """A trained noise predictor viewed as an energy model.

    The gradient is ``sigma_t * eps_theta`` by construction.  For an
    energy-parameterized network the energy is the network's own scalar;
    otherwise it is recovered up to a constant by integrating the score
    along the ray from the origin with Gauss-Legendre quadrature.
    """

    tag = "learned"

    def __init__(self, net, schedule: NoiseSchedule, quadrature_nodes: int = 8):
        self.net, self.schedule = net, schedule
        self._nodes, self._weights = np.polynomial.legendre.leggauss(quadrature_nodes)

    @property
    def energy_parameterized(self) -> bool:
        return bool(getattr(getattr(self.net, "cfg", None), "energy", False))

    def eps(self, x, t):
        return self.net.eps(x, t)

    def grad(self, x, t):
        return self.schedule.sigmas[t] * self.net.eps(x, t)

    def energy(self, x, t):
        x = np.asarray(x, dtype=float)
        sigma = self.schedule.sigmas[t]
        if self.energy_parameterized:
            import torch

            xt = torch.from_numpy(np.ascontiguousarray(x))
            tt = torch.full((x.shape[0],), float(t), dtype=xt.dtype)
            with torch.no_grad():
                return self.net.energy(xt, tt, torch.tensor(sigma, dtype=xt.dtype)).numpy()
        flat = x.reshape(x.shape[0], -1)
        total = np.zeros(x.shape[0])
        for node, weight in zip(self._nodes, self._weights):
            s = 0.5 * (node + 1.0)
            eps = self.net.eps(s * x, t).reshape(x.shape[0], -1)
            total += 0.5 * weight * np.sum(eps * flat, axis=1)
        return sigma * total


def log_likelihood_surrogate(model: EnergyModel, x: np.ndarray, t: int) -> np.ndarray:
    """Per-dimension negative energy ``-E / (sigma_t^2 d)``.

    For a pure-noise batch at ``t = T`` this is close to ``-|x|^2 / (2 d)``.
    """
    x = np.asarray(x, dtype=float)
    d = x[0].size
    return -model.energy(x, t) / (model.schedule.sigmas[t] ** 2 * d)


# composition --------------------------------------------------------------

MODES = ("product", "mixture", "negation")


@dataclass(frozen=True)
class CompositionSpec:
    mode: str = "negation"
    weights: tuple[float, ...] = (1.3, 0.3)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown composition mode {self.mode!r}")
        w = tuple(float(a) for a in self.weights)
        object.__setattr__(self, "weights", w)
        if not all(math.isfinite(a) for a in w):
            raise ValueError("composition weights must be finite")
        if self.mode == "negation":
            if len(w) != 2:
                raise ValueError("negation composes exactly one base model and one negated model")
            if w[0] <= 0 or w[1] < 0:
                raise ValueError("negation needs a positive base weight and a non-negative negated weight")
        if self.mode == "mixture" and any(a <= 0 for a in w):
            raise ValueError("mixture weights must be positive")


class ComposedEnergy(EnergyModel):
    tag = "composed"

    def __init__(self, models, spec: CompositionSpec):
        self.models = tuple(models)
        self.spec = spec
        self.schedule = self.models[0].schedule
        w = np.asarray(spec.weights)
        self._signed = np.array([w[0], -w[1]]) if spec.mode == "negation" else w

    def _parts(self, x, t, attr):
        parts = [np.asarray(getattr(m, attr)(x, t), dtype=float) for m in self.models]
        shapes = {p.shape for p in parts}
        if len(shapes) != 1:
            raise ValueError(f"composed models disagree on shape: {sorted(shapes)}")
        return np.stack(parts)

    def _mixture_weights(self, energies):
        logits = np.log(self._signed)[:, None] - energies
        logits -= logits.max(axis=0)
        p = np.exp(logits)
        return p / p.sum(axis=0)

    def energy(self, x, t):
        energies = self._parts(x, t, "energy")
        if self.spec.mode != "mixture":
            return np.tensordot(self._signed, energies, axes=1)
        logits = np.log(self._signed)[:, None] - energies
        top = logits.max(axis=0)
        return -(top + np.log(np.exp(logits - top).sum(axis=0)))

    def grad(self, x, t):
        grads = self._parts(x, t, "grad")
        if self.spec.mode != "mixture":
            return np.tensordot(self._signed, grads, axes=1)
        p = self._mixture_weights(self._parts(x, t, "energy"))
        return np.einsum("mn,mn...->n...", p, grads)


def compose(models, spec: CompositionSpec | None = None) -> ComposedEnergy:
    spec = spec or CompositionSpec()
    models = list(models)
    if len(models) < 2:
        raise ValueError("composition needs at least two models")
    if len(spec.weights) != len(models):
        raise ValueError(f"{len(spec.weights)} weights for {len(models)} models")
    shapes = {getattr(m, "shape", None) for m in models} - {None}
    if len(shapes) > 1:
        raise ValueError(f"composed models disagree on shape: {sorted(shapes)}")
    return ComposedEnergy(models, spec)


# glideslope ---------------------------------------------------------------

@dataclass(frozen=True)
class GlideslopeSpec:
    gamma_deg: float = 30.0
    penalty: float = 10.0

    def __post_init__(self):
        if not 0 < self.gamma_deg < 90:
            raise ValueError("glideslope angle must be in (0, 90) degrees")
        if not self.penalty > 0:
            raise ValueError("glideslope penalty must be positive")

    @property
    def slope(self) -> float:
        return math.tan(math.radians(self.gamma_deg))


def _horizontal_norm(r):
    return np.hypot(r[..., 1, :], r[..., 2, :])


def glideslope_argument(r: np.ndarray, gamma_deg: float = 30.0) -> np.ndarray:
    """``tan(gamma) |H r| - r_z`` per node for positions ``(..., 3, K)`` relative to the site."""
    r = np.asarray(r, dtype=float)
    return math.tan(math.radians(gamma_deg)) * _horizontal_norm(r) - r[..., 0, :]


def glideslope_violation(r: np.ndarray, gamma_deg: float = 30.0) -> np.ndarray:
    """Smoothed violation ``log(1 + exp(argument))`` per node."""
    return np.logaddexp(0.0, glideslope_argument(r, gamma_deg))


def relative_to_landing(positions: np.ndarray) -> np.ndarray:
    """Positions ``(..., 3, K)`` relative to each plan's landing site.

    The site is the final node's horizontal position on the ground plane
    ``z = 0``; altitude stays absolute so that sinking the final node cannot
    satisfy the cone.
    """
    rel = np.array(positions, dtype=float)
    rel[..., 1:3, :] -= rel[..., 1:3, -1:]
    return rel


def glideslope_energy(r: np.ndarray, spec: GlideslopeSpec = GlideslopeSpec()):
    """Violation per node, energy ``-penalty * sum(violation^2)`` and its gradient.

    ``r`` holds positions ``(n, 3, K)`` relative to the landing site; the
    gradient has the same shape.
    """
    r = np.asarray(r, dtype=float)
    arg = glideslope_argument(r, spec.gamma_deg)
    viol = np.logaddexp(0.0, arg)
    energy = -spec.penalty * np.sum(viol ** 2, axis=-1)
    dE_darg = -2.0 * spec.penalty * viol * expit(arg)
    rho = _horizontal_norm(r)
    safe = np.where(rho > 0, rho, 1.0)
    grad = np.empty_like(r)
    grad[..., 0, :] = -dE_darg
    for axis in (1, 2):
        grad[..., axis, :] = np.where(rho > 0, dE_darg * spec.slope * r[..., axis, :] / safe, 0.0)
    return viol, energy, grad


def hard_glideslope_check(r: np.ndarray, gamma_deg: float = 30.0):
    """Exact glideslope test on the ``K - 1`` segments of each plan.

    Segment ``k`` is evaluated at its starting node ``k``; the final node is
    the landing site itself.  Returns the boolean array ``(n, K - 1)`` of
    violating segments and the violation rate.
    """
    r = np.asarray(r, dtype=float)
    if r.ndim == 2:
        r = r[None]
    bad = glideslope_argument(r[..., :-1], gamma_deg) > 0
    return bad, float(bad.mean()) if bad.size else 0.0


class _ScaledPositions:
    """Shared plumbing for energies defined on physical positions."""

    def __init__(self, scale: RobustScale, schedule: NoiseSchedule):
        self.scale, self.schedule = scale, schedule

    def positions(self, x):
        return self.scale.unscale(np.asarray(x, dtype=float))[:, 0:3, :]

    def lift(self, x, grad_pos):
        """Gradient w.r.t. scaled ``x`` from a gradient w.r.t. physical positions."""
        g = np.zeros(np.shape(x))
        g[:, 0:3, :] = grad_pos * self.scale.spread[0:3, None]
        return g


class GlideslopeEnergy(_ScaledPositions, EnergyModel):
    """Glideslope constraint energy about each plan's own landing site.

    The penalty carries the ``sin(pi t / T)`` time scaling used for the risk
    energy. Left unscaled, the final reverse steps take a near unit step along
    its gradient, and the landing node (coupled to every horizontal offset) is
    stiff enough that the chain oscillates instead of settling.
    """

    tag = "analytic-constraint"

    def __init__(self, spec: GlideslopeSpec, scale: RobustScale, schedule: NoiseSchedule):
        super().__init__(scale, schedule)
        self.spec = spec

    def _eval(self, x):
        pos = self.positions(x)
        # the landing node itself is excluded, as in the hard check
        _, energy, g_rel = glideslope_energy(relative_to_landing(pos)[..., :-1], self.spec)
        g = np.zeros_like(pos)
        g[..., :-1] = g_rel
        # every horizontal offset depends on the final node
        g[..., 1:3, -1] = -g_rel[..., 1:3, :].sum(axis=-1)
        return energy, g

    def energy(self, x, t):
        return time_scaling(t, self.schedule.T) * self._eval(x)[0]

    def grad(self, x, t):
        return self.lift(x, time_scaling(t, self.schedule.T) * self._eval(x)[1])


# risk map -----------------------------------------------------------------

@dataclass(frozen=True)
class RiskEnergySpec:
    penalty: float = 50.0
    threshold: float = 0.1
    end_weight: float = 1.0
    mid_weight: float = 2.0

    def __post_init__(self):
        if not self.penalty > 0:
            raise ValueError("risk penalty must be positive")
        if not 0 <= self.threshold <= 1:
            raise ValueError("risk threshold must lie in [0, 1]")
        if not (self.end_weight > 0 and self.mid_weight > 0):
            raise ValueError("point weights must be positive")

    def weights(self, K: int) -> np.ndarray:
        w = np.full(K, self.mid_weight)
        w[[0, -1]] = self.end_weight
        return w


def time_scaling(t: int, T: int) -> float:
    if t <= 0 or t >= T:
        return 0.0  # exact zero where sin(pi) would leave rounding noise
    return math.sin(math.pi * t / T)


def risk_energy(xy: np.ndarray, grid: RiskGrid, spec: RiskEnergySpec, t: int, T: int):
    """Energy ``penalty * sum_k w_k max(0, threshold - R_k) s(t)`` and its gradient.

    ``xy`` holds horizontal positions ``(n, 2, K)`` in physical units.
    """
    xy = np.asarray(xy, dtype=float)
    s = time_scaling(t, T)
    risk, gx, gy = bilinear_sample(grid, xy[:, 0, :], xy[:, 1, :])
    w = spec.weights(xy.shape[-1])
    hinge = spec.threshold - risk
    active = hinge > 0
    energy = spec.penalty * s * np.sum(w * np.where(active, hinge, 0.0), axis=-1)
    coef = np.where(active, -spec.penalty * s * w, 0.0)
    grad = np.stack([coef * gx, coef * gy], axis=1)
    return energy, grad


class RiskEnergy(_ScaledPositions, EnergyModel):
    tag = "risk-map"

    def __init__(self, grid: RiskGrid, spec: RiskEnergySpec, scale: RobustScale, schedule: NoiseSchedule):
        super().__init__(scale, schedule)
        self.grid, self.spec = grid, spec

    def _eval(self, x, t):
        pos = self.positions(x)
        energy, g_xy = risk_energy(pos[:, 1:3], self.grid, self.spec, t, self.schedule.T)
        g = np.zeros_like(pos)
        g[:, 1:3] = g_xy
        return energy, g

    def energy(self, x, t):
        return self._eval(x, t)[0]

    def grad(self, x, t):
        return self.lift(x, self._eval(x, t)[1])


# diagnostics --------------------------------------------------------------

def composition_error_bound(schedule: NoiseSchedule, trace_var: float, d: int, N: int) -> float:
    """Upper bound on the accumulated score error of an ``N``-model composition."""
    if trace_var < 0 or d < 1 or N < 1:
        raise ValueError("need trace_var >= 0, d >= 1 and N >= 1")
    ab = schedule.alpha_bars[1:]
    gap = 1.0 - ab
    if np.any(gap <= 0):
        raise ValueError("schedule has a step with alpha_bar = 1")
    terms = ((N - 1) * np.sqrt(ab * trace_var + gap * d) + N * np.sqrt(ab) * math.sqrt(2 * trace_var)) / gap
    return float(np.sum(terms))
