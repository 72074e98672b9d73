"""Estimator/fusion network contracts: shapes, conditioning, gradients."""

import math

import numpy as np
import pytest
import torch
import torch.nn as nn

from dva import ConfigError
from dva.nets import (
    AttentionBlock,
    DvaModel,
    EstimatorConfig,
    FusionMLP,
    NoiseUNet,
    timestep_embedding,
)


def toy_config(**overrides) -> EstimatorConfig:
    """8x8 two-level config, small enough for finite-difference checks."""
    kwargs = dict(
        resolution=8,
        base_channels=8,
        channel_mult=(1, 2),
        attention_resolutions=(4,),
        time_base_dim=8,
        time_embed_dim=16,
        z_face_dim=12,
        dropout=0.0,
        groups=4,
        d_id=8,
        d_lnd=4,
    )
    kwargs.update(overrides)
    return EstimatorConfig(**kwargs)


def randomize(model: torch.nn.Module, seed: int = 0):
    """Move parameters off their init (zero-init output convs included)."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in model.parameters():
            p.copy_(0.1 * torch.randn(p.shape, generator=gen, dtype=p.dtype))
    return model


# --- config -----------------------------------------------------------------

def test_config_defaults_are_desk_scale():
    cfg = EstimatorConfig()
    assert cfg.resolution == 32
    assert cfg.base_channels == 32
    assert cfg.channel_mult == (1, 2, 2)
    assert cfg.attention_resolutions == (8,)
    assert cfg.z_face_dim == 64
    assert cfg.groups == 32
    assert (cfg.d_id, cfg.d_lnd) == (32, 8)
    assert cfg.level_resolutions == (32, 16, 8)


def test_config_paper_scale_constants():
    cfg = EstimatorConfig.paper_scale()
    assert cfg.resolution == 256
    assert cfg.base_channels == 128
    assert cfg.channel_mult == (1, 1, 2, 2, 4, 4)
    assert cfg.attention_resolutions == (16,)
    assert cfg.z_face_dim == 512
    assert cfg.time_embed_dim == 512
    assert cfg.groups == 32


def test_config_round_trips_through_dict():
    cfg = toy_config()
    assert EstimatorConfig.from_dict(cfg.to_dict()) == cfg


@pytest.mark.parametrize(
    "overrides",
    [
        dict(channel_mult=()),
        dict(base_channels=0),
        dict(z_face_dim=-1),
        dict(dropout=1.0),
        dict(dropout=-0.1),
        dict(resolution=12, channel_mult=(1, 2, 2, 2)),  # 12 not divisible by 8
        dict(groups=5),  # does not divide 8/16 channels
        dict(T=0),
    ],
)
def test_config_rejects_invalid(overrides):
    with pytest.raises(ConfigError):
        toy_config(**overrides)


# --- timestep embedding -----------------------------------------------------

def test_timestep_embedding_matches_closed_form():
    t = torch.tensor([0, 1, 500])
    dim = 8
    emb = timestep_embedding(t, dim)
    assert emb.shape == (3, dim)
    freqs = np.exp(-math.log(10000.0) * np.arange(4) / 4)
    expected = np.concatenate(
        [np.cos(t.numpy()[:, None] * freqs), np.sin(t.numpy()[:, None] * freqs)], axis=1
    )
    np.testing.assert_allclose(emb.numpy(), expected, atol=1e-5)
    # t=0 row: all cosines 1, all sines 0
    np.testing.assert_allclose(emb[0].numpy(), [1, 1, 1, 1, 0, 0, 0, 0], atol=0)


def test_timestep_embedding_pads_odd_dim():
    emb = timestep_embedding(torch.tensor([3]), 7)
    assert emb.shape == (1, 7)
    assert emb[0, -1] == 0.0


def test_timestep_embedding_distinguishes_steps():
    emb = timestep_embedding(torch.arange(1, 1001), 32)
    gram_unique = torch.unique(emb, dim=0)
    assert gram_unique.shape[0] == 1000


# --- shape contracts ----------------------------------------------------------

@pytest.mark.parametrize("resolution", [8, 16])
def test_estimate_noise_output_shape_matches_input(resolution):
    mult = (1, 2) if resolution == 8 else (1, 2, 2)
    cfg = toy_config(resolution=resolution, channel_mult=mult)
    model = DvaModel(cfg).eval()
    x = torch.randn(3, 3, resolution, resolution)
    z = torch.randn(3, cfg.z_face_dim)
    out = model.estimate_noise(x, 17, z)
    assert out.shape == x.shape


def test_estimate_noise_accepts_vector_t_and_broadcast_z():
    cfg = toy_config()
    model = DvaModel(cfg).eval()
    x = torch.randn(4, 3, 8, 8)
    t = torch.tensor([1, 500, 999, 1000])
    out = model.estimate_noise(x, t, torch.randn(cfg.z_face_dim))
    assert out.shape == x.shape


def test_estimate_noise_rejects_bad_inputs():
    cfg = toy_config()
    model = DvaModel(cfg).eval()
    x = torch.randn(2, 3, 8, 8)
    z = torch.randn(2, cfg.z_face_dim)
    with pytest.raises(ValueError):
        model.estimate_noise(torch.randn(2, 3, 4, 4), 5, z)
    with pytest.raises(ValueError):
        model.estimate_noise(x, 0, z)
    with pytest.raises(ValueError):
        model.estimate_noise(x, cfg.T + 1, z)
    with pytest.raises(ValueError):
        model.estimate_noise(x, torch.tensor([5, 5, 5]), z)
    with pytest.raises(ValueError):
        model.estimate_noise(x, 5, torch.randn(2, cfg.z_face_dim + 1))


def test_zero_initialized_output_conv_gives_zero_estimate_at_init():
    torch.manual_seed(0)
    model = DvaModel(toy_config()).eval()
    out = model.estimate_noise(torch.randn(2, 3, 8, 8), 10, torch.randn(2, 12))
    assert torch.all(out == 0.0)


# --- batch independence and determinism --------------------------------------

def test_batch_permutation_permutes_outputs():
    torch.manual_seed(1)
    model = randomize(DvaModel(toy_config())).eval()
    x = torch.randn(5, 3, 8, 8)
    t = torch.tensor([3, 77, 310, 999, 42])
    z = torch.randn(5, 12)
    out = model.estimate_noise(x, t, z)
    perm = torch.tensor([4, 2, 0, 1, 3])
    out_perm = model.estimate_noise(x[perm], t[perm], z[perm])
    assert torch.allclose(out_perm, out[perm], atol=1e-5)


def test_eval_forward_is_deterministic_despite_dropout_config():
    torch.manual_seed(2)
    model = randomize(DvaModel(toy_config(dropout=0.5))).eval()
    x = torch.randn(2, 3, 8, 8)
    z = torch.randn(2, 12)
    a = model.estimate_noise(x, 9, z)
    b = model.estimate_noise(x, 9, z)
    assert torch.equal(a, b)


def test_outputs_finite_across_step_range():
    torch.manual_seed(3)
    model = randomize(DvaModel(toy_config())).eval()
    x = torch.empty(2, 3, 8, 8).uniform_(-1, 1)
    z = torch.randn(2, 12)
    for t in (1, 500, 1000):
        out = model.estimate_noise(x, t, z)
        assert torch.isfinite(out).all()


# --- attention ----------------------------------------------------------------

def test_attention_block_is_residual_at_init():
    torch.manual_seed(4)
    attn = AttentionBlock(channels=8, groups=4)
    x = torch.randn(2, 8, 4, 4)
    assert torch.equal(attn(x), x)  # zero-init projection leaves input intact


def test_attention_mixes_spatial_positions_after_randomize():
    torch.manual_seed(5)
    attn = randomize(AttentionBlock(channels=8, groups=4), seed=5)
    x = torch.randn(1, 8, 4, 4)
    y1 = attn(x)
    x2 = x.clone()
    x2[0, :, 0, 0] += 1.0
    y2 = attn(x2)
    # changing one position changes other positions (global mixing)
    assert not torch.allclose(y1[0, :, 3, 3], y2[0, :, 3, 3])


# --- fusion MLP ---------------------------------------------------------------

def test_fusion_fixed_params_fixed_inputs_fixed_output():
    torch.manual_seed(6)
    fuse = FusionMLP(8, 4, 12)
    z_id, z_lnd = torch.randn(3, 8), torch.randn(3, 4)
    assert torch.equal(fuse(z_id, z_lnd), fuse(z_id, z_lnd))
    assert fuse(z_id, z_lnd).shape == (3, 12)


def test_fusion_rejects_dim_mismatch():
    fuse = FusionMLP(8, 4, 12)
    with pytest.raises(ValueError):
        fuse(torch.randn(3, 7), torch.randn(3, 4))
    with pytest.raises(ValueError):
        fuse(torch.randn(3, 8), torch.randn(3, 5))


def test_fusion_zero_final_layer_gives_constant_output():
    torch.manual_seed(7)
    fuse = FusionMLP(8, 4, 12)
    last = fuse.net[-1]
    nn.init.zeros_(last.weight)
    nn.init.zeros_(last.bias)
    a = fuse(torch.randn(5, 8), torch.randn(5, 4))
    b = fuse(torch.randn(5, 8), torch.randn(5, 4))
    assert torch.equal(a, b)
    assert torch.all(a == a[0])


def test_fusion_parameter_gradients_match_finite_differences():
    torch.manual_seed(8)
    fuse = FusionMLP(3, 2, 4).double()
    z_id = torch.randn(2, 3, dtype=torch.float64)
    z_lnd = torch.randn(2, 2, dtype=torch.float64)
    target = torch.randn(2, 4, dtype=torch.float64)

    def loss_fn():
        return ((fuse(z_id, z_lnd) - target) ** 2).mean()

    loss = loss_fn()
    loss.backward()
    eps = 1e-5
    checked = 0
    for p in fuse.parameters():
        flat = p.detach().reshape(-1)
        grad = p.grad.reshape(-1)
        for k in range(0, flat.numel(), max(1, flat.numel() // 5)):
            with torch.no_grad():
                orig = flat[k].item()
                flat[k] = orig + eps
                up = loss_fn().item()
                flat[k] = orig - eps
                down = loss_fn().item()
                flat[k] = orig
            fd = (up - down) / (2 * eps)
            denom = max(abs(fd), abs(grad[k].item()), 1e-8)
            assert abs(fd - grad[k].item()) / denom < 1e-3
            checked += 1
    assert checked >= 10


# --- finite-difference gradient w.r.t. z_face ---------------------------------

def test_estimate_noise_gradient_wrt_z_face_matches_finite_differences():
    torch.manual_seed(9)
    model = randomize(DvaModel(toy_config())).double().eval()
    x = torch.randn(1, 3, 8, 8, dtype=torch.float64)
    z = torch.randn(1, 12, dtype=torch.float64, requires_grad=True)
    weights = torch.randn(1, 3, 8, 8, dtype=torch.float64)

    loss = (model.estimate_noise(x, 13, z) * weights).sum()
    loss.backward()
    grad = z.grad.clone()

    eps = 1e-5
    for k in range(12):
        zp = z.detach().clone()
        zp[0, k] += eps
        up = (model.estimate_noise(x, 13, zp) * weights).sum().item()
        zm = z.detach().clone()
        zm[0, k] -= eps
        down = (model.estimate_noise(x, 13, zm) * weights).sum().item()
        fd = (up - down) / (2 * eps)
        denom = max(abs(fd), abs(grad[0, k].item()), 1e-8)
        assert abs(fd - grad[0, k].item()) / denom < 1e-3, f"component {k}"


def test_estimate_noise_differentiable_wrt_input():
    torch.manual_seed(10)
    model = randomize(DvaModel(toy_config())).eval()
    x = torch.randn(2, 3, 8, 8, requires_grad=True)
    z = torch.randn(2, 12)
    model.estimate_noise(x, 99, z).sum().backward()
    assert x.grad is not None and torch.isfinite(x.grad).all()


# --- conditioning path ----------------------------------------------------------

def test_z_face_changes_output():
    torch.manual_seed(11)
    model = randomize(DvaModel(toy_config())).eval()
    x = torch.randn(1, 3, 8, 8)
    a = model.estimate_noise(x, 40, torch.zeros(1, 12))
    b = model.estimate_noise(x, 40, torch.ones(1, 12))
    assert not torch.allclose(a, b)


def test_time_step_changes_output():
    torch.manual_seed(12)
    model = randomize(DvaModel(toy_config())).eval()
    x = torch.randn(1, 3, 8, 8)
    z = torch.randn(1, 12)
    assert not torch.allclose(model.estimate_noise(x, 1, z), model.estimate_noise(x, 1000, z))


def test_ddim_estimator_closure_binds_condition():
    torch.manual_seed(13)
    model = randomize(DvaModel(toy_config())).eval()
    z = torch.randn(12)
    est = model.ddim_estimator(z)
    x = torch.randn(2, 3, 8, 8)
    out = est(x, 7)
    expected = model.estimate_noise(x, 7, z)
    assert torch.allclose(out, expected)
    assert not out.requires_grad


def test_full_forward_composes_fuse_and_estimate():
    torch.manual_seed(14)
    model = randomize(DvaModel(toy_config())).eval()
    x = torch.randn(2, 3, 8, 8)
    z_id = torch.randn(2, 8)
    z_lnd = torch.randn(2, 4)
    out = model(x, 5, z_id, z_lnd)
    expected = model.estimate_noise(x, 5, model.fuse(z_id, z_lnd))
    assert torch.allclose(out, expected)


def test_unet_parameter_count_is_desk_scale():
    n = sum(p.numel() for p in NoiseUNet(EstimatorConfig()).parameters())
    assert 100_000 < n < 5_000_000
