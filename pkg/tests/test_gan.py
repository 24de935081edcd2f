import dataclasses
import math

import numpy as np
import pytest
import torch

from masgan.errors import ConfigError, InvalidInputError, TrainingAborted
from masgan.gan import (
    GanConfig,
    build_default_nets,
    critic_values,
    gradient_penalty,
    random_time_shift,
    realism_score,
    scores_converged,
    train,
    train_networks,
)
from masgan.nn import LayerSpec, Network

from .oracles import central_difference, relative_error


def conv_out(w, k, s):
    return (w + 2 * (k // 2) - k) // s + 1


def attention_params(C):
    r = C // 8
    return 3 * (C * r + r) + (r * C + C) + 1


@pytest.mark.parametrize("L,C,k,latent", [(60, 16, 5, 100), (12, 8, 3, 10)])
def test_parameter_hand_count(L, C, k, latent):
    cfg = GanConfig(channels=C, kernel=k, latent_dim=latent)
    gen, critic = build_default_nets(L, cfg)
    g = (latent * C * L + C * L) + 3 * (C * C * k + C) + attention_params(C) + (2 * C * k + 2)
    w = conv_out(conv_out(L, k, 2), k, 2)
    c = (2 * C * k + C) + 2 * (C * C * k + C) + attention_params(C) + (C * w + 1)
    assert gen.n_parameters() == g
    assert critic.n_parameters() == c


def test_ablation_hand_count_and_no_attention():
    cfg = GanConfig(use_attention=False, hidden=32, latent_dim=10)
    gen, critic = build_default_nets(8, cfg)
    assert gen.n_parameters() == (10 * 32 + 32) + (32 * 32 + 32) + (32 * 16 + 16)
    assert critic.n_parameters() == (16 * 32 + 32) + (32 * 32 + 32) + (32 + 1)
    assert not gen.attention_layers() and not critic.attention_layers()


@pytest.mark.parametrize("attention", [True, False])
def test_shape_laws(attention):
    L = 16
    gen, critic = build_default_nets(L, GanConfig(channels=8, kernel=3, use_attention=attention, latent_dim=10))
    z = torch.randn(5, 10, dtype=torch.float64)
    x = gen(z)
    assert x.shape == (5, 2 * L)
    v = critic_values(critic, x)
    assert v.shape == (5,) and torch.all(torch.isfinite(v))


def test_config_validation_lists_errors():
    with pytest.raises(ConfigError) as e:
        GanConfig(latent_dim=0, n_critic=0, gp_lambda=-1)
    msg = str(e.value)
    assert "latent_dim" in msg and "n_critic" in msg and "gp_lambda" in msg


def linear_critic(w):
    net = Network([LayerSpec("DENSE", {"n_in": len(w), "n_out": 1})], (len(w),))
    with torch.no_grad():
        net.layers[0].weight.copy_(torch.tensor(np.asarray(w, dtype=np.float64)[None, :]))
    return net


def test_gp_unit_linear_critic_is_zero():
    w = np.array([0.6, 0.8, 0.0])
    rng = np.random.default_rng(0)
    gp, norms = gradient_penalty(linear_critic(w), rng.normal(size=(7, 3)), rng.normal(size=(7, 3)), torch.Generator().manual_seed(0))
    assert gp.item() == pytest.approx(0.0, abs=1e-20)
    np.testing.assert_allclose(norms.detach().numpy(), 1.0, atol=1e-15)


def test_gp_norm_three():
    w = np.array([3.0, 0.0])
    rng = np.random.default_rng(1)
    gp, _ = gradient_penalty(linear_critic(w), rng.normal(size=(4, 2)), rng.normal(size=(4, 2)), gp_lambda=10.0)
    assert gp.item() == pytest.approx(40.0, rel=1e-12)


def test_gp_shape_mismatch():
    with pytest.raises(InvalidInputError):
        gradient_penalty(linear_critic([1.0, 0.0]), np.zeros((3, 2)), np.zeros((4, 2)))


def test_gp_matches_finite_difference_norms():
    torch.manual_seed(3)
    g = torch.Generator().manual_seed(3)
    net = Network(
        [LayerSpec("DENSE", {"n_in": 4, "n_out": 6}), LayerSpec("TANH"), LayerSpec("DENSE", {"n_in": 6, "n_out": 1})], (4,), g
    )
    rng = np.random.default_rng(4)
    real, fake, eps = rng.normal(size=(5, 4)), rng.normal(size=(5, 4)), rng.random(5)
    gp, _ = gradient_penalty(net, real, fake, gp_lambda=10.0, eps=eps)

    def f(x):
        with torch.no_grad():
            return float(net(torch.tensor(x[None, :])).item())

    x_hat = eps[:, None] * real + (1 - eps[:, None]) * fake
    norms = [np.linalg.norm(central_difference(f, x)) for x in x_hat]
    expected = 10.0 * np.mean([(n - 1) ** 2 for n in norms])
    assert relative_error(gp.item(), expected) < 1e-3


def small_cfg(**kw):
    base = dict(channels=8, kernel=3, latent_dim=10, batch_size=8, max_iterations=2, eval_interval=1, eval_samples=16, hidden=16)
    base.update(kw)
    return GanConfig(**base)


def data(n=12, L=10, seed=0):
    return np.random.default_rng(seed).standard_normal((n, 2 * L))


def test_smoke_parameters_change():
    cfg = small_cfg(gp_lambda=0.0, n_critic=1, max_iterations=1)
    torch_gen = torch.Generator().manual_seed(cfg.seed)
    g0, c0 = build_default_nets(10, cfg, torch_gen)
    res = train(data(), cfg)
    assert not np.array_equal(g0.flat_parameters(), res.generator.flat_parameters())
    assert not np.array_equal(c0.flat_parameters(), res.critic.flat_parameters())
    assert res.report.iterations == 1


@pytest.mark.parametrize("attention", [True, False])
def test_training_bit_reproducible(attention):
    cfg = small_cfg(use_attention=attention, augment_shift=attention)
    a, b = train(data(), cfg), train(data(), cfg)
    assert a.critic.flat_parameters().tobytes() == b.critic.flat_parameters().tobytes()
    assert a.generator.flat_parameters().tobytes() == b.generator.flat_parameters().tobytes()
    assert a.report.rows == b.report.rows


def test_report_rows_and_snapshots(tmp_path):
    res = train(data(), small_cfg(max_iterations=3, eval_interval=2))
    assert res.report.iterations == 3
    assert [s["iter"] for s in res.report.snapshots] == [2, 3]
    for key in ("diversity_ratio", "ks_returns_1", "mean_score_real", "score_ks_p"):
        assert key in res.report.snapshots[0]
    p = res.report.write_csv(tmp_path / "train_report.csv")
    lines = p.read_text().splitlines()
    assert lines[0] == "iter,critic_loss,gen_loss,gp,interp_grad_norm"
    assert len(lines) == 4
    assert all(math.isfinite(float(x)) for x in lines[1].split(","))


def test_non_finite_aborts():
    bad = data()
    bad[0, 0] = np.nan
    with pytest.raises(TrainingAborted) as e:
        train(bad, small_cfg(batch_size=12))
    assert e.value.report is not None


def test_empty_dataset():
    with pytest.raises(InvalidInputError):
        train(np.zeros((0, 20)), small_cfg())


def test_realism_score_properties():
    assert realism_score(linear_critic([0.0, 0.0]), np.array([1.0, 2.0])) == 0.5
    c = linear_critic([1.0, 0.0])
    s = realism_score(c, np.array([[-30.0, 0], [-1, 0], [0, 0], [2, 0], [30, 0]]))
    assert np.all(np.diff(s) > 0) and np.all((s > 0) & (s < 1))
    with pytest.raises(InvalidInputError):
        realism_score(c, np.zeros(3))


def test_shift_augmentation_rotates_both_halves():
    x = torch.arange(2 * 2 * 5, dtype=torch.float64).reshape(2, 10)
    y = random_time_shift(x, torch.Generator().manual_seed(1))
    for row_x, row_y in zip(x, y):
        r, v = row_y[:5], row_y[5:]
        k = int((r[0] - row_x[0]).item())
        assert torch.equal(r, torch.roll(row_x[:5], -k))
        assert torch.equal(v, torch.roll(row_x[5:], -k))


def test_scores_converged_rule():
    assert scores_converged(0.5, 0.52, 0.3)
    assert not scores_converged(0.5, 0.56, 0.3)
    assert not scores_converged(0.3, 0.3, 0.9)
    assert not scores_converged(0.5, 0.5, 0.01)


def test_stop_on_convergence_respects_min_iterations():
    cfg = small_cfg(stop_on_convergence=True, max_iterations=10, eval_interval=1, min_iterations=3)
    gen, critic = build_default_nets(10, cfg)
    converged = lambda c, g: {"mean_score_real": 0.5, "mean_score_generated": 0.5, "score_ks_p": 0.9}  # noqa: E731
    report = train_networks(gen, critic, data(), cfg, evaluate=converged)
    assert report.stopped_early and report.iterations == 3
    report = train_networks(gen, critic, data(), dataclasses.replace(cfg, stop_on_convergence=False), evaluate=converged)
    assert not report.stopped_early and report.iterations == 10


def test_critic_learning_rate_option():
    with pytest.raises(ConfigError, match="critic_learning_rate"):
        GanConfig(critic_learning_rate=0.0)
    a = train(data(), small_cfg(critic_learning_rate=1e-2))
    b = train(data(), small_cfg())
    assert not np.array_equal(a.critic.flat_parameters(), b.critic.flat_parameters())
