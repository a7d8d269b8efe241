import warnings

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from descentdiff.diffusion import (ArchitectureMismatchError, CorruptCheckpointError, InpaintMask, NetworkConfig,
                                   TrainConfig, build_cosine_schedule, build_network, forward_noise,
                                   load_checkpoint, read_mask_file, reverse_step, sample, save_checkpoint, train)
from descentdiff.diffusion.sampling import clip_noise_estimate
from descentdiff.diffusion.schedule import NoiseSchedule
from descentdiff.diffusion.training import TrainingError, diffusion_loss, training_step


class Zero:
    def eps(self, x, t):
        return np.zeros_like(x)


class GaussianOracle:
    """Exact noise prediction for data N(mu, s^2) in every coordinate."""

    def __init__(self, schedule, mu, s):
        self.sch, self.mu, self.s = schedule, mu, s

    def eps(self, x, t):
        ab, sg = self.sch.alpha_bars[t], self.sch.sigmas[t]
        var = ab * self.s ** 2 + sg ** 2
        return sg * (x - np.sqrt(ab) * self.mu) / var


def small_net(rows=1, nodes=1, hidden=32, **kw):
    return build_network(NetworkConfig(rows=rows, nodes=nodes, hidden=hidden, depth=2, time_embedding=32, **kw))


# schedule ---------------------------------------------------------------------

def test_cosine_endpoints():
    sch = build_cosine_schedule(1000)
    assert sch.alpha_bars[1] >= 0.999
    assert sch.alpha_bars[1000] <= 1e-3
    assert np.all(sch.betas[1:] > 0) and np.all(sch.betas <= 0.999)


@given(st.integers(2, 400))
def test_schedule_identities(T):
    sch = build_cosine_schedule(T)
    assert np.all(np.diff(sch.alpha_bars) < 0)
    assert np.max(np.abs(np.cumprod(1 - sch.betas) - sch.alpha_bars)) < 1e-12
    assert np.max(np.abs(sch.sigmas ** 2 + sch.alpha_bars - 1)) < 1e-12


def test_schedule_rejects_short():
    with pytest.raises(ValueError):
        build_cosine_schedule(1)
    with pytest.raises(ValueError):
        NoiseSchedule(np.array([0.0, 0.5, 1.5]))


# forward process --------------------------------------------------------------

def test_forward_noise_branches(rng):
    sch = build_cosine_schedule(50)
    x0 = rng.normal(size=(3, 17, 4))
    eps = rng.normal(size=x0.shape)
    assert np.allclose(forward_noise(x0, 10, np.zeros_like(x0), sch), np.sqrt(sch.alpha_bars[10]) * x0)
    assert np.allclose(forward_noise(np.zeros_like(x0), 10, eps, sch), sch.sigmas[10] * eps)
    with pytest.raises(ValueError):
        forward_noise(x0, 10, eps[:2], sch)


def test_forward_noise_variance(rng):
    sch = build_cosine_schedule(100)
    x0 = rng.standard_normal(10_000) * 2.0
    for t in (5, 50, 95):
        xt = forward_noise(x0, t, rng.standard_normal(x0.size), sch)
        expected = sch.alpha_bars[t] * x0.var() + 1 - sch.alpha_bars[t]
        assert abs(xt.var() / expected - 1) < 0.03


# training -----------------------------------------------------------------------

def test_zero_predictor_loss_is_dimension(rng):
    sch = build_cosine_schedule(100)
    x0 = rng.normal(size=(4000, 17, 5))
    t = rng.integers(1, 101, size=4000)
    eps = rng.standard_normal(x0.shape)

    class ZeroNet(torch.nn.Module):
        def forward(self, x, t):
            return torch.zeros_like(x)

    loss = float(diffusion_loss(ZeroNet(), x0, t, eps, sch))
    assert loss == pytest.approx(17 * 5, rel=0.02)


def _two_point(n=200):
    return np.where(np.arange(n) % 2 == 0, -1.0, 1.0).reshape(n, 1, 1)


def test_training_reduces_loss_on_toy():
    sch = build_cosine_schedule(100)
    net = small_net()
    state = train(net, _two_point(), sch, TrainConfig(batch_size=50, sample_budget=500 * 50, learning_rate=3e-3, T=100))
    first, last = np.mean(state.losses[:20]), np.mean(state.losses[-50:])
    assert last <= 0.5 * first


def test_training_is_deterministic():
    sch = build_cosine_schedule(50)
    cfg = TrainConfig(batch_size=20, sample_budget=20 * 30, T=50)
    runs = [train(small_net(), _two_point(), sch, cfg).losses for _ in range(2)]
    assert runs[0] == runs[1]


def test_resumed_training_matches_uninterrupted():
    sch = build_cosine_schedule(50)
    cfg = TrainConfig(batch_size=20, sample_budget=20 * 40, T=50)
    full = train(small_net(), _two_point(), sch, cfg).losses
    net = small_net()
    from descentdiff.diffusion.training import make_optimizer

    opt = make_optimizer(net, cfg)
    state = train(net, _two_point(), sch, cfg, optimizer=opt, steps=15)
    state = train(net, _two_point(), sch, cfg, optimizer=opt, state=state)
    assert state.losses == full


def test_non_finite_loss_aborts(rng):
    sch = build_cosine_schedule(20)
    net = small_net()
    batch = np.full((4, 1, 1), np.inf)
    with pytest.raises(TrainingError, match="non-finite"):
        training_step(net, batch, sch, rng, torch.optim.Adam(net.parameters()))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(T=1)


# network ------------------------------------------------------------------------

@pytest.mark.parametrize("energy", [False, True])
def test_network_shape_and_determinism(rng, energy):
    net = small_net(rows=17, nodes=6, energy=energy)
    x = rng.normal(size=(3, 17, 6))
    a, b = net.eps(x, 7), net.eps(x, 7)
    assert a.shape == x.shape
    assert np.array_equal(a, b)


def test_unet_shape(rng):
    net = build_network(NetworkConfig(rows=17, nodes=20, kind="unet", unet_channels=(8, 16), time_embedding=16))
    x = rng.normal(size=(2, 17, 20))
    assert net.eps(x, 3).shape == x.shape


def test_parameter_gradients_match_finite_differences(rng):
    net = small_net(rows=3, nodes=4, hidden=16)
    sch = build_cosine_schedule(30)
    x0 = rng.normal(size=(5, 3, 4))
    t = rng.integers(1, 31, size=5)
    eps = rng.normal(size=x0.shape)
    net.zero_grad()
    diffusion_loss(net, x0, t, eps, sch).backward()
    params = list(net.parameters())
    grads = torch.cat([p.grad.reshape(-1) for p in params]).numpy()
    flat = net.parameter_vector()
    h = 1e-6
    for i in rng.choice(flat.size, size=10, replace=False):
        def loss_at(v):
            probe = flat.copy()
            probe[i] = v
            net.load_parameter_vector(probe)
            with torch.no_grad():
                return float(diffusion_loss(net, x0, t, eps, sch))
        fd = (loss_at(flat[i] + h) - loss_at(flat[i] - h)) / (2 * h)
        net.load_parameter_vector(flat)
        assert abs(fd - grads[i]) <= 1e-4 * max(abs(fd), abs(grads[i]), 1e-3)


# reverse process ----------------------------------------------------------------

def test_reverse_step_with_zero_noise_model(rng):
    sch = build_cosine_schedule(40)
    x = rng.normal(size=(2, 3, 4))
    for t in (1, 20, 40):
        out = reverse_step(Zero(), x, t, sch, rng, noise=False)
        assert np.allclose(out, x / np.sqrt(sch.alphas[t]))
    assert np.array_equal(reverse_step(Zero(), x, 1, sch, rng), x / np.sqrt(sch.alphas[1]))
    with pytest.raises(ValueError):
        reverse_step(Zero(), x, 0, sch, rng)


def test_reverse_chain_is_deterministic():
    sch = build_cosine_schedule(30)
    oracle = GaussianOracle(sch, 0.3, 0.7)
    a, _ = sample(oracle, sch, 20, (2, 3), seed=5)
    b, _ = sample(oracle, sch, 20, (2, 3), seed=5)
    assert np.array_equal(a, b)


def test_exact_model_recovers_gaussian_moments():
    sch = build_cosine_schedule(200)
    mu, s = 1.5, 0.4
    x, _ = sample(GaussianOracle(sch, mu, s), sch, 10_000, (1, 1), seed=2)
    assert abs(x.mean() - mu) < 0.05 * mu
    assert abs(x.std() - s) < 0.05 * s


def test_trained_model_recovers_gaussian_moments():
    mu, s = 1.0, 0.5
    data = mu + s * np.random.default_rng(0).standard_normal((4000, 1, 1))
    sch = build_cosine_schedule(100)
    net = small_net()
    train(net, data, sch, TrainConfig(batch_size=128, sample_budget=128 * 800, learning_rate=3e-3, T=100))
    x, _ = sample(net, sch, 10_000, (1, 1), seed=1, clip=5.0)
    assert abs(x.mean() - mu) < 0.05 * mu
    assert abs(x.std() - s) < 0.05 * s


def _double_integrator(n, nodes, rng):
    dt = 1.0 / (nodes - 1)
    state = rng.normal([1.0, 0.0], [0.3, 0.2], size=(n, 2))
    p, v = state[:, 0].copy(), state[:, 1].copy()
    out = np.empty((n, 2, nodes))
    for k in range(nodes):
        out[:, 0, k], out[:, 1, k] = p, v
        p, v = p + dt * v, v + dt * (-4 * p - 3 * v)
    return out


def test_double_integrator_sample_means():
    data = _double_integrator(2000, 8, np.random.default_rng(0))
    mu, sd = data.mean(0), data.std(0)
    sch = build_cosine_schedule(100)
    net = small_net(rows=2, nodes=8, hidden=64)
    train(net, (data - mu) / sd, sch, TrainConfig(batch_size=128, sample_budget=128 * 1500,
                                                   learning_rate=3e-3, T=100))
    x, _ = sample(net, sch, 1000, (2, 8), seed=1, clip=5.0)
    x = x * sd + mu
    standard_error = sd / np.sqrt(1000)
    assert np.all(np.abs(x.mean(0) - mu) < 3 * standard_error)


def test_clip_leaves_in_range_estimates(rng):
    sch = build_cosine_schedule(50)
    x0 = rng.uniform(-1, 1, size=(4, 3))
    eps = rng.normal(size=x0.shape)
    xt = forward_noise(x0, 30, eps, sch)
    assert np.allclose(clip_noise_estimate(xt, eps, 30, sch, 5.0), eps)
    far = forward_noise(10 * np.ones_like(x0), 30, eps, sch)
    fixed = clip_noise_estimate(far, eps, 30, sch, 5.0)
    implied = (far - sch.sigmas[30] * fixed) / np.sqrt(sch.alpha_bars[30])
    assert np.allclose(implied, 5.0)


# inpainting -----------------------------------------------------------------------

def _mask(rng, K=6):
    m = rng.random((17, K)) < 0.3
    return InpaintMask(m, rng.normal(size=(17, K)))


def test_inpainting_hits_targets_exactly(rng):
    sch = build_cosine_schedule(30)
    K = 6
    entries = [("r_z", 0, 2.0), ("r_y", 0, -1.0), ("r_x", 3, 0.5), ("r_z", K - 1, 0.0), ("r_y", K - 1, 0.25)]
    mask = InpaintMask.from_entries(entries, K)
    x, _ = sample(GaussianOracle(sch, 0.0, 1.0), sch, 50, (17, K), seed=0, mask=mask)
    assert np.array_equal(x[:, mask.mask], np.broadcast_to(mask.targets[mask.mask], (50, mask.mask.sum())))


def test_full_mask_returns_targets(rng):
    sch = build_cosine_schedule(20)
    targets = rng.normal(size=(17, 3))
    x, _ = sample(GaussianOracle(sch, 0, 1), sch, 4, (17, 3), seed=0, mask=InpaintMask(np.ones((17, 3)), targets))
    assert np.array_equal(x, np.broadcast_to(targets, x.shape))


def test_mask_application_is_idempotent(rng):
    mask = _mask(rng)
    x = rng.normal(size=(5, 17, 6))
    once = mask.apply(x)
    assert np.array_equal(mask.apply(once), once)


def test_mask_validation():
    with pytest.raises(ValueError):
        InpaintMask(np.ones((2, 2)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        InpaintMask(np.ones((1, 1)), np.array([[np.nan]]))


def test_mask_file(tmp_path):
    path = tmp_path / "mask.txt"
    path.write_text("# initial height\nr_z 0 3.0\n13 -1 1.0\n")
    mask = read_mask_file(path, 5)
    assert mask.mask.sum() == 2 and mask.targets[0, 0] == 3.0 and mask.targets[13, 4] == 1.0
    path.write_text("r_z 0\n")
    with pytest.raises(ValueError, match="mask.txt:1"):
        read_mask_file(path, 5)


# checkpoints ----------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path, rng):
    net = small_net(rows=17, nodes=4)
    path = tmp_path / "m.ddck"
    save_checkpoint(net, path, 50, scale_digest="abc", metadata={"note": 1})
    loaded, info = load_checkpoint(path, expected_T=50)
    x = rng.normal(size=(2, 17, 4))
    assert np.array_equal(net.eps(x, 3), loaded.eps(x, 3))
    assert info.metadata == {"note": 1} and info.scale_digest == "abc" and not info.warnings


def test_checkpoint_architecture_mismatch(tmp_path):
    path = tmp_path / "m.ddck"
    save_checkpoint(small_net(hidden=16), path, 50)
    with pytest.raises(ArchitectureMismatchError, match="hidden"):
        load_checkpoint(path, expected_config=NetworkConfig(rows=1, nodes=1, hidden=32, depth=2, time_embedding=32))


def test_checkpoint_corruption(tmp_path):
    path = tmp_path / "m.ddck"
    save_checkpoint(small_net(), path, 50)
    raw = path.read_bytes()
    path.write_bytes(raw[:-3])
    with pytest.raises(CorruptCheckpointError):
        load_checkpoint(path)
    path.write_bytes(b"JUNK" + raw[4:])
    with pytest.raises(CorruptCheckpointError):
        load_checkpoint(path)


def test_checkpoint_schedule_warning(tmp_path):
    path = tmp_path / "m.ddck"
    save_checkpoint(small_net(), path, 50)
    with warnings.catch_warnings(record=True):
        warnings.simplefilter("always")
        _, info = load_checkpoint(path, expected_T=100)
    assert info.warnings and "T=50" in info.warnings[0]
