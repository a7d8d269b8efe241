import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from descentdiff.diffusion import NetworkConfig, build_cosine_schedule, build_network
from descentdiff.energy import (CompositionSpec, FunctionEnergy, GlideslopeEnergy, GlideslopeSpec, LearnedEnergy,
                                RiskEnergy, RiskEnergySpec, compose, composition_error_bound, glideslope_argument,
                                glideslope_energy, glideslope_violation, hard_glideslope_check,
                                log_likelihood_surrogate, relative_to_landing, risk_energy, score_from_energy,
                                time_scaling)
from descentdiff.riskmap import DEMO_OBSTACLES, RiskGrid, create_risk_map
from descentdiff.scaling import RobustScale

SCH = build_cosine_schedule(100)


def quadratic(center=0.0, weight=1.0):
    return FunctionEnergy(lambda x, t: 0.5 * weight * np.sum((x - center) ** 2, axis=(1, 2)),
                          lambda x, t: weight * (x - center), SCH)


def zero_energy():
    return FunctionEnergy(lambda x, t: np.zeros(len(x)), lambda x, t: np.zeros_like(x), SCH)


def fd_grad(energy, x, h=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape[1:]):
        e = np.zeros_like(x)
        e[(slice(None),) + idx] = h
        g[(slice(None),) + idx] = (energy(x + e) - energy(x - e)) / (2 * h)
    return g


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12)


# scores -------------------------------------------------------------------------

def test_quadratic_energy_score(rng):
    x = rng.normal(size=(3, 2, 4))
    for t in (1, 50, 100):
        assert np.allclose(score_from_energy(quadratic(), x, t), x / SCH.sigmas[t])


def test_score_rejects_non_finite_gradient(rng):
    bad = FunctionEnergy(lambda x, t: np.zeros(len(x)), lambda x, t: np.full_like(x, np.nan), SCH)
    with pytest.raises(FloatingPointError):
        score_from_energy(bad, rng.normal(size=(1, 2, 2)), 5)


def test_energy_head_matches_native_noise_prediction(rng):
    net = build_network(NetworkConfig(rows=3, nodes=4, hidden=16, depth=2, time_embedding=8, energy=True))
    model = LearnedEnergy(net, SCH)
    x = rng.normal(size=(2, 3, 4))
    t = 40
    grad = fd_grad(lambda z: model.energy(z, t), x)
    assert rel_err(grad / SCH.sigmas[t], net.eps(x, t)) < 1e-4
    assert np.allclose(model.eps(x, t), score_from_energy(model, x, t))


class LinearNet:
    """eps(x) = c x, whose energy is sigma c |x|^2 / 2 exactly."""

    def __init__(self, c):
        self.c = c

    def eps(self, x, t):
        return self.c * np.asarray(x)


def test_line_integral_energy_of_linear_predictor(rng):
    model = LearnedEnergy(LinearNet(0.7), SCH)
    x = rng.normal(size=(4, 3, 5))
    expected = SCH.sigmas[30] * 0.7 * 0.5 * np.sum(x ** 2, axis=(1, 2))
    assert np.allclose(model.energy(x, 30), expected, rtol=1e-12)
    assert rel_err(fd_grad(lambda z: model.energy(z, 30), x), model.grad(x, 30)) < 1e-6


def test_pure_noise_surrogate_is_minus_half(rng):
    # exact predictor for standard normal data at t = T is eps(x) = sigma_T x
    model = LearnedEnergy(LinearNet(SCH.sigmas[SCH.T]), SCH)
    x = rng.standard_normal((200, 17, 20))
    assert np.mean(log_likelihood_surrogate(model, x, SCH.T)) == pytest.approx(-0.5, abs=0.01)


# composition ----------------------------------------------------------------------

def test_product_with_zero_energy_is_identity(rng):
    x = rng.normal(size=(2, 3, 3))
    base = quadratic(0.4)
    composed = compose([base, zero_energy()], CompositionSpec("product", (1.0, 1.0)))
    assert np.array_equal(composed.eps(x, 10), base.eps(x, 10))


def test_product_of_gaussians(rng):
    mu1, mu2 = -1.0, 2.0
    composed = compose([quadratic(mu1), quadratic(mu2)], CompositionSpec("product", (1.0, 1.0)))
    x = rng.normal(size=(5, 1, 1))
    mid = 0.5 * (mu1 + mu2)
    # score of N(mid, 1/2) in gradient form is (x - mid) / (1/2)
    assert np.allclose(composed.grad(x, 20), (x - mid) / 0.5)


@given(st.floats(0.1, 3), st.floats(0.1, 3))
def test_product_scores_are_additive(a1, a2):
    x = np.random.default_rng(0).normal(size=(3, 2, 2))
    m1, m2 = quadratic(1.0), quadratic(-0.5, 2.0)
    composed = compose([m1, m2], CompositionSpec("product", (a1, a2)))
    assert np.max(np.abs(composed.eps(x, 7) - (a1 * m1.eps(x, 7) + a2 * m2.eps(x, 7)))) < 1e-12


def test_negation_with_zero_weight_is_base(rng):
    x = rng.normal(size=(2, 2, 3))
    base = quadratic(0.3)
    composed = compose([base, quadratic(-1.0)], CompositionSpec("negation", (1.0, 0.0)))
    assert np.array_equal(composed.eps(x, 9), base.eps(x, 9))
    assert np.array_equal(composed.energy(x, 9), base.energy(x, 9))


def test_negation_signs(rng):
    x = rng.normal(size=(2, 2, 3))
    a, b = quadratic(0.3), quadratic(-1.0, 0.5)
    composed = compose([a, b], CompositionSpec())
    assert np.allclose(composed.energy(x, 3), 1.3 * a.energy(x, 3) - 0.3 * b.energy(x, 3))


def test_mixture_gradient_is_consistent(rng):
    composed = compose([quadratic(-1.0), quadratic(1.5, 2.0)], CompositionSpec("mixture", (0.3, 0.7)))
    x = rng.normal(size=(3, 1, 2))
    assert rel_err(fd_grad(lambda z: composed.energy(z, 4), x), composed.grad(x, 4)) < 1e-6
    # far from the second component the mixture behaves like the first
    far = np.full((1, 1, 2), -6.0)
    assert np.allclose(composed.grad(far, 4), quadratic(-1.0).grad(far, 4), atol=1e-6)


def test_composition_errors(rng):
    with pytest.raises(ValueError):
        compose([quadratic()], CompositionSpec("product", (1.0,)))
    with pytest.raises(ValueError):
        compose([quadratic(), quadratic()], CompositionSpec("product", (1.0, 1.0, 1.0)))
    with pytest.raises(ValueError):
        CompositionSpec("negation", (0.0, 0.3))
    with pytest.raises(ValueError):
        CompositionSpec("mixture", (1.0, -1.0))
    with pytest.raises(ValueError):
        CompositionSpec("average", (1.0, 1.0))
    odd = FunctionEnergy(lambda x, t: np.zeros(len(x)), lambda x, t: np.zeros((len(x), 5)), SCH)
    with pytest.raises(ValueError, match="shape"):
        compose([quadratic(), odd], CompositionSpec("product", (1.0, 1.0))).grad(rng.normal(size=(1, 2, 2)), 3)


# glideslope --------------------------------------------------------------------------

def _r(z, x, y):
    return np.array([[z], [x], [y]], dtype=float)


def test_glideslope_examples():
    assert glideslope_violation(_r(0, 0, 0))[0] == pytest.approx(math.log(2))
    assert glideslope_violation(_r(1, 0, 0), 30)[0] == pytest.approx(math.log1p(math.exp(-1)))
    assert glideslope_violation(_r(0, 1, 0), 45)[0] == pytest.approx(math.log1p(math.e))


def test_hard_check_examples():
    K = 6
    vertical = np.zeros((3, K))
    vertical[0] = np.linspace(5, 0, K)
    assert hard_glideslope_check(relative_to_landing(vertical))[1] == 0.0
    flat = np.zeros((3, K))
    flat[1] = 1.0
    bad, rate = hard_glideslope_check(flat)
    assert bad.shape == (1, K - 1) and rate == 1.0


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5))
def test_smoothed_violation_bounds_hard_indicator(z, x, y):
    r = _r(z, x, y)
    bad, _ = hard_glideslope_check(np.concatenate([r, np.zeros((3, 1))], axis=1))
    if bad[0, 0]:
        v = glideslope_violation(r)[0]
        # arguments below double resolution round to exactly ln 2
        arg = glideslope_argument(r)[0]
        assert v > math.log(2) if arg > 1e-12 else v >= math.log(2)


def test_glideslope_gradient_matches_finite_differences(rng):
    r = rng.normal(size=(4, 3, 6)) + np.array([2.0, 0, 0])[:, None]
    spec = GlideslopeSpec(30, 10)
    _, _, grad = glideslope_energy(r, spec)
    fd = fd_grad(lambda z: glideslope_energy(z, spec)[1], r)
    assert rel_err(grad, fd) < 1e-5


def test_more_violation_means_lower_constraint_energy():
    spec = GlideslopeSpec()
    energies = []
    for s in np.linspace(0, 3, 12):
        # one node sliding away horizontally at fixed height
        energies.append(glideslope_energy(_r(1.0, s, 0.0)[None], spec)[1][0])
    assert np.all(np.diff(energies) < 0)


def _scale():
    return RobustScale(np.linspace(-1, 1, 17), np.linspace(0.5, 2, 17))


def test_scaled_glideslope_energy_gradient(rng):
    model = GlideslopeEnergy(GlideslopeSpec(), _scale(), SCH)
    x = rng.normal(size=(2, 17, 5))
    assert rel_err(model.grad(x, 10), fd_grad(lambda z: model.energy(z, 10), x)) < 1e-5


def test_glideslope_energy_follows_time_scaling(rng):
    model = GlideslopeEnergy(GlideslopeSpec(), _scale(), SCH)
    x = rng.normal(size=(3, 17, 5))
    peak = model.energy(x, SCH.T // 2)
    assert np.all(peak < 0)
    assert np.allclose(model.energy(x, SCH.T // 4), math.sin(math.pi / 4) * peak)
    assert np.all(model.energy(x, 0) == 0) and np.all(model.grad(x, SCH.T) == 0)


def test_glideslope_spec_validation():
    with pytest.raises(ValueError):
        GlideslopeSpec(90)
    with pytest.raises(ValueError):
        GlideslopeSpec(30, 0)


# risk energy ---------------------------------------------------------------------------

def test_risk_energy_examples():
    zero = RiskGrid((-4, 4), (-4, 4), 1.0, 0.5, np.zeros((9, 9)))
    xy = np.zeros((1, 2, 5))
    assert risk_energy(xy, zero, RiskEnergySpec(threshold=0.0), 50, 100)[0][0] == 0.0
    spec = RiskEnergySpec()
    for t in (0, 100):
        assert risk_energy(xy, zero, spec, t, 100)[0][0] == 0.0
    assert time_scaling(50, 100) == pytest.approx(1.0)


def test_middle_points_count_double():
    grid = RiskGrid((-4, 4), (-4, 4), 1.0, 0.5, np.full((9, 9), 0.02))
    spec = RiskEnergySpec()
    xy = np.zeros((1, 2, 5))
    total = risk_energy(xy, grid, spec, 50, 100)[0][0]
    per_end = spec.penalty * (spec.threshold - 0.02)
    assert total == pytest.approx(per_end * (1 + 2 + 2 + 2 + 1))
    assert spec.weights(5)[2] / spec.weights(5)[0] == 2.0


def test_scaled_risk_energy_gradient(rng):
    grid = create_risk_map(DEMO_OBSTACLES)
    model = RiskEnergy(grid, RiskEnergySpec(threshold=0.6), _scale(), SCH)
    x = rng.normal(size=(3, 17, 4)) * 0.4
    fd = fd_grad(lambda z: model.energy(z, 30), x, h=1e-7)
    # bilinear cells have kinks, so compare only where the two agree in support
    g = model.grad(x, 30)
    assert np.allclose(g, fd, atol=1e-3 * max(1.0, np.abs(fd).max()))


def test_risk_spec_validation():
    with pytest.raises(ValueError):
        RiskEnergySpec(penalty=0)
    with pytest.raises(ValueError):
        RiskEnergySpec(threshold=1.5)
    with pytest.raises(ValueError):
        RiskEnergySpec(mid_weight=0)


# error bound --------------------------------------------------------------------------

def test_error_bound_examples():
    assert composition_error_bound(SCH, 0.0, 10, 1) == 0.0
    expected = float(np.sum(1 / np.sqrt(1 - SCH.alpha_bars[1:])))
    assert composition_error_bound(SCH, 0.0, 1, 2) == pytest.approx(expected, rel=1e-12)
    with pytest.raises(ValueError):
        composition_error_bound(SCH, -1.0, 1, 2)


@given(st.floats(0, 10), st.floats(0, 10), st.integers(1, 5), st.integers(1, 5))
def test_error_bound_monotone(v1, v2, n1, n2):
    lo_v, hi_v = sorted((v1, v2))
    lo_n, hi_n = sorted((n1, n2))
    assert composition_error_bound(SCH, lo_v, 3, lo_n) <= composition_error_bound(SCH, hi_v, 3, hi_n) + 1e-9


def test_learned_energy_uses_network_eps(rng):
    net = build_network(NetworkConfig(rows=2, nodes=3, hidden=8, depth=1, time_embedding=8))
    model = LearnedEnergy(net, SCH)
    x = rng.normal(size=(2, 2, 3))
    with torch.no_grad():
        native = net(torch.from_numpy(x), torch.full((2,), 12.0)).numpy()
    assert np.allclose(model.eps(x, 12), native)
    assert model.tag == "learned"
