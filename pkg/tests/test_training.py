"""Objective contracts: oracle zeros, analytic baselines, loop behavior."""

import math

import numpy as np
import pytest
import torch

from dva import ConfigError, TrainingDiverged
from dva.encoders import IdentityEncoder, LandmarkEncoder, freeze, parameter_checksum
from dva.nets import DvaModel, EstimatorConfig
from dva.schedule import make_schedule, predict_x0, q_sample
from dva.synthdata import generate_video, sample_video_spec
from dva.training import (
    ZERO_ESTIMATOR_BASELINE,
    DvaSystem,
    TrainBatch,
    TrainConfig,
    load_system,
    loss_dva,
    loss_reg,
    loss_simple,
    make_train_batch,
    masked_x0_variance,
    save_system,
    train,
)

SCHEDULE = make_schedule()


class OracleModel:
    """Closed-form noise estimator built from the known clean frames."""

    def __init__(self, schedule, x0):
        self.schedule = schedule
        self.x0 = x0

    def estimate_noise(self, x_t, t, z_face):
        a = torch.from_numpy(self.schedule.alpha_bar[t.numpy()]).to(x_t.dtype)
        a = a[:, None, None, None]
        return (x_t - torch.sqrt(a) * self.x0) / torch.sqrt(1.0 - a)


class ZeroModel:
    def estimate_noise(self, x_t, t, z_face):
        return torch.zeros_like(x_t)


def random_batch(rng, b=4, res=8, with_masks=True, dtype=torch.float64):
    x0 = torch.from_numpy(rng.uniform(-1, 1, (b, 3, res, res))).to(dtype)
    masks = None
    if with_masks:
        masks = torch.from_numpy(rng.integers(0, 2, (b, 1, res, res))).to(dtype)
    t = torch.from_numpy(rng.integers(1, 1001, b))
    eps = torch.from_numpy(rng.standard_normal((b, 3, res, res))).to(dtype)
    eps2 = torch.from_numpy(rng.standard_normal((b, 3, res, res))).to(dtype)
    z = torch.from_numpy(rng.standard_normal((b, 12))).to(dtype)
    return TrainBatch(x0=x0, masks=masks, t=t, eps=eps, eps_2=eps2, z_face=z)


# --- batch validation ---------------------------------------------------------

def test_batch_rejects_mismatched_fields():
    rng = np.random.default_rng(0)
    good = random_batch(rng)
    with pytest.raises(ValueError):
        TrainBatch(good.x0, good.masks, good.t[:2], good.eps, good.eps_2, good.z_face)
    with pytest.raises(ValueError):
        TrainBatch(good.x0, good.masks, good.t, good.eps[:, :1], good.eps_2, good.z_face)
    with pytest.raises(ValueError):
        TrainBatch(good.x0, good.masks * 0.5 + 0.25, good.t, good.eps, good.eps_2, good.z_face)
    with pytest.raises(ValueError):
        TrainBatch(good.x0, good.masks[:, :, :4], good.t, good.eps, good.eps_2, good.z_face)


# --- analytic loss values -------------------------------------------------------

def test_loss_simple_is_zero_for_oracle_estimator():
    rng = np.random.default_rng(1)
    batch = random_batch(rng)
    oracle = OracleModel(SCHEDULE, batch.x0)
    assert float(loss_simple(oracle, SCHEDULE, batch)) < 1e-12


def test_loss_simple_zero_estimator_matches_folded_normal_mean():
    rng = np.random.default_rng(2)
    batch = random_batch(rng, b=64, res=16)
    value = float(loss_simple(ZeroModel(), SCHEDULE, batch))
    # independent Monte-Carlo oracle for E|eps|
    mc = np.abs(np.random.default_rng(99).standard_normal(400_000)).mean()
    assert math.isclose(ZERO_ESTIMATOR_BASELINE, math.sqrt(2 / math.pi), rel_tol=0)
    assert abs(ZERO_ESTIMATOR_BASELINE - mc) < 5e-3
    assert abs(value - ZERO_ESTIMATOR_BASELINE) < 2e-2


def test_loss_reg_zero_for_equal_noises():
    rng = np.random.default_rng(3)
    batch = random_batch(rng)
    with torch.no_grad():
        batch.eps_2.copy_(batch.eps)
    model = RandomizedToyModel()
    with torch.no_grad():
        assert float(loss_reg(model, SCHEDULE, batch)) == 0.0


def test_loss_reg_zero_for_zero_masks():
    rng = np.random.default_rng(4)
    batch = random_batch(rng)
    batch.masks.zero_()
    model = RandomizedToyModel()
    with torch.no_grad():
        assert float(loss_reg(model, SCHEDULE, batch)) == 0.0


def test_loss_reg_zero_for_oracle_estimator_any_noises():
    rng = np.random.default_rng(5)
    batch = random_batch(rng)
    oracle = OracleModel(SCHEDULE, batch.x0)
    assert float(loss_reg(oracle, SCHEDULE, batch)) < 1e-10


def test_loss_reg_requires_masks_and_second_noise():
    rng = np.random.default_rng(6)
    batch = random_batch(rng, with_masks=False)
    with pytest.raises(ValueError):
        loss_reg(ZeroModel(), SCHEDULE, batch)
    batch2 = random_batch(rng)
    batch2.eps_2 = None
    with pytest.raises(ValueError):
        loss_reg(ZeroModel(), SCHEDULE, batch2)


def _toy_model(dtype=torch.float64, seed=11):
    cfg = EstimatorConfig(
        resolution=8, base_channels=8, channel_mult=(1, 2), attention_resolutions=(4,),
        time_base_dim=8, time_embed_dim=16, z_face_dim=12, dropout=0.0, groups=4,
        d_id=8, d_lnd=4,
    )
    model = DvaModel(cfg)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in model.parameters():
            p.copy_(0.1 * torch.randn(p.shape, generator=gen, dtype=p.dtype))
    return model.to(dtype).eval()


def RandomizedToyModel():
    return _toy_model()


def test_loss_dva_equals_sum_of_terms_exactly():
    rng = np.random.default_rng(7)
    batch = random_batch(rng)
    model = RandomizedToyModel()
    total, simple, reg = loss_dva(model, SCHEDULE, batch, use_reg=True)
    assert torch.equal(total, simple + reg)
    assert torch.equal(simple, loss_simple(model, SCHEDULE, batch))
    assert torch.equal(reg, loss_reg(model, SCHEDULE, batch))


def test_loss_dva_without_reg_has_zero_reg_term():
    rng = np.random.default_rng(8)
    batch = random_batch(rng, with_masks=False)
    model = RandomizedToyModel()
    total, simple, reg = loss_dva(model, SCHEDULE, batch, use_reg=False)
    assert float(reg) == 0.0
    assert torch.equal(total, simple)


def test_losses_are_batch_permutation_invariant():
    rng = np.random.default_rng(9)
    batch = random_batch(rng, b=6)
    model = RandomizedToyModel()
    perm = [5, 3, 0, 1, 4, 2]
    permuted = TrainBatch(
        x0=batch.x0[perm], masks=batch.masks[perm], t=batch.t[perm],
        eps=batch.eps[perm], eps_2=batch.eps_2[perm], z_face=batch.z_face[perm],
    )
    assert math.isclose(
        float(loss_simple(model, SCHEDULE, batch)),
        float(loss_simple(model, SCHEDULE, permuted)), rel_tol=1e-9,
    )
    assert math.isclose(
        float(loss_reg(model, SCHEDULE, batch)),
        float(loss_reg(model, SCHEDULE, permuted)), rel_tol=1e-9,
    )


def test_loss_gradients_match_finite_differences():
    rng = np.random.default_rng(10)
    base = random_batch(rng, b=2)
    model = RandomizedToyModel()
    z_id = torch.from_numpy(rng.standard_normal((2, 8)))
    z_lnd = torch.from_numpy(rng.standard_normal((2, 4)))

    def fused_batch():
        # z_face recomputed through the fusion MLP so its weights are in the graph
        return TrainBatch(base.x0, base.masks, base.t, base.eps, base.eps_2,
                          model.fuse(z_id, z_lnd))

    params = [model.fusion.net[0].weight, model.unet.conv_in.weight]
    for loss_fn in (loss_simple, loss_reg):
        model.zero_grad(set_to_none=True)
        loss_fn(model, SCHEDULE, fused_batch()).backward()
        eps = 1e-5
        for p in params:
            flat = p.detach().reshape(-1)
            grad = p.grad.reshape(-1)
            stride = max(1, flat.numel() // 4)
            for k in range(0, flat.numel(), stride):
                orig = flat[k].item()
                with torch.no_grad():
                    flat[k] = orig + eps
                    up = float(loss_fn(model, SCHEDULE, fused_batch()))
                    flat[k] = orig - eps
                    down = float(loss_fn(model, SCHEDULE, fused_batch()))
                    flat[k] = orig
                fd = (up - down) / (2 * eps)
                denom = max(abs(fd), abs(grad[k].item()), 1e-8)
                assert abs(fd - grad[k].item()) / denom < 1e-3


# --- training loop ---------------------------------------------------------------

def _tiny_system(seed=0):
    cfg = EstimatorConfig(
        resolution=16, base_channels=8, channel_mult=(1, 2), attention_resolutions=(8,),
        time_base_dim=8, time_embed_dim=16, z_face_dim=12, dropout=0.0, groups=4,
        d_id=8, d_lnd=4, T=100,
    )
    torch.manual_seed(seed)
    system = DvaSystem(
        DvaModel(cfg),
        freeze(IdentityEncoder(d_id=8, resolution=16, seed=seed)),
        freeze(LandmarkEncoder(d_lnd=4, resolution=16, seed=seed + 1)),
    )
    return system


def _tiny_videos(n=3, frames=5):
    rng = np.random.default_rng(123)
    return [
        generate_video(sample_video_spec(rng, n_frames=frames, resolution=16), seed=i)
        for i in range(n)
    ]


def test_system_rejects_mismatched_encoder_dims():
    cfg = EstimatorConfig(
        resolution=16, base_channels=8, channel_mult=(1, 2), attention_resolutions=(8,),
        time_base_dim=8, time_embed_dim=16, z_face_dim=12, dropout=0.0, groups=4,
        d_id=8, d_lnd=4, T=100,
    )
    with pytest.raises(ConfigError):
        DvaSystem(
            DvaModel(cfg),
            IdentityEncoder(d_id=16, resolution=16),
            LandmarkEncoder(d_lnd=4, resolution=16),
        )


def test_train_config_rejects_bad_values():
    with pytest.raises(ConfigError):
        TrainConfig(steps=0)
    with pytest.raises(ConfigError):
        TrainConfig(lr=0.0)


def test_one_step_train_updates_model_but_not_frozen_encoders(tmp_path):
    system = _tiny_system()
    videos = _tiny_videos()
    id_sum = parameter_checksum(system.id_enc)
    lnd_sum = parameter_checksum(system.lnd_enc)
    before = [p.detach().clone() for p in system.model.parameters()]

    cfg = TrainConfig(steps=2, batch_videos=2, frames_per_video=2, lr=1e-3,
                      out_dir=str(tmp_path / "run"), log_every=1, checkpoint_every=2)
    ckpt = train(system, videos, cfg)

    assert parameter_checksum(system.id_enc) == id_sum
    assert parameter_checksum(system.lnd_enc) == lnd_sum
    changed = any(
        not torch.equal(p.detach(), b) for p, b in zip(system.model.parameters(), before)
    )
    assert changed
    assert ckpt.exists()
    lines = (tmp_path / "run" / "metrics.csv").read_text().splitlines()
    assert lines[0] == "step,loss_simple,loss_reg"
    assert len(lines) >= 3


def test_train_raises_on_divergence_and_keeps_checkpoint(tmp_path):
    system = _tiny_system()
    videos = _tiny_videos()
    cfg = TrainConfig(steps=5, batch_videos=1, frames_per_video=2,
                      divergence_limit=1e-9, out_dir=str(tmp_path / "run"))
    with pytest.raises(TrainingDiverged):
        train(system, videos, cfg)


def test_train_requires_nonempty_dataset(tmp_path):
    with pytest.raises(ConfigError):
        train(_tiny_system(), [], TrainConfig(steps=1, out_dir=str(tmp_path / "r")))


def test_save_load_system_round_trip(tmp_path):
    system = _tiny_system(seed=3)
    path = tmp_path / "ckpt.bin"
    save_system(path, system, step=7, extra={"train": {"lr": 1e-4}})
    loaded, step, config = load_system(path)
    assert step == 7
    assert config["train"]["lr"] == 1e-4
    assert parameter_checksum(loaded) == parameter_checksum(system)
    x = torch.from_numpy(np.random.default_rng(5).uniform(-1, 1, (2, 3, 16, 16))).float()
    za, zl = system.encode_frames(x)
    zb, zl2 = loaded.encode_frames(x)
    assert torch.equal(za, zb) and torch.equal(zl, zl2)


# --- masked x0 variance ------------------------------------------------------------

def test_masked_x0_variance_oracle_is_zero():
    rng = np.random.default_rng(12)
    x0 = torch.from_numpy(rng.uniform(-1, 1, (2, 3, 8, 8)))
    masks = torch.ones(2, 8, 8)
    oracle = OracleModel(SCHEDULE, x0)
    v = masked_x0_variance(oracle, SCHEDULE, x0, masks, torch.zeros(2, 12), t=500, K=4)
    assert v < 1e-20


def test_masked_x0_variance_rejects_k_below_two():
    x0 = torch.zeros(1, 3, 8, 8, dtype=torch.float64)
    with pytest.raises(ValueError):
        masked_x0_variance(ZeroModel(), SCHEDULE, x0, torch.ones(1, 8, 8),
                           torch.zeros(1, 12), t=10, K=1)


def test_masked_x0_variance_k2_matches_two_sample_formula():
    rng = np.random.default_rng(13)
    x0 = torch.from_numpy(rng.uniform(-1, 1, (1, 3, 8, 8)))
    masks = torch.from_numpy(rng.integers(0, 2, (1, 8, 8))).double()
    masks[0, 0, 0] = 1.0  # mask never empty
    model = RandomizedToyModel()
    z = torch.from_numpy(rng.standard_normal((1, 12)))
    t = 250
    got = masked_x0_variance(model, SCHEDULE, x0, masks, z, t=t, K=2, seed=42)

    gen = torch.Generator().manual_seed(42)
    fs = []
    with torch.no_grad():
        for _ in range(2):
            eps = torch.randn(x0.shape, generator=gen, dtype=x0.dtype)
            tv = torch.full((1,), t, dtype=torch.long)
            x_t = q_sample(SCHEDULE, x0, tv, eps)
            eps_hat = model.estimate_noise(x_t, tv, z)
            fs.append(predict_x0(SCHEDULE, x_t, tv, eps_hat))
    plug_in = (fs[0] - fs[1]) ** 2 / 2.0
    m = masks[:, None].expand_as(plug_in)
    expected = float((plug_in * m).sum() / m.sum())
    assert math.isclose(got, expected, rel_tol=1e-10)


def test_masked_x0_variance_rejects_empty_mask():
    x0 = torch.zeros(1, 3, 8, 8, dtype=torch.float64)
    with pytest.raises(ValueError):
        masked_x0_variance(ZeroModel(), SCHEDULE, x0, torch.zeros(1, 8, 8),
                           torch.zeros(1, 12), t=10, K=2)


def test_make_train_batch_shapes_and_step_range():
    system = _tiny_system()
    videos = _tiny_videos()
    cfg = TrainConfig(steps=1, batch_videos=3, frames_per_video=4, out_dir="unused")
    rng = np.random.default_rng(21)
    batch = make_train_batch(system, videos, rng, cfg, T=100)
    assert batch.x0.shape == (12, 3, 16, 16)
    assert batch.masks.shape == (12, 1, 16, 16)
    assert batch.t.min() >= 1 and batch.t.max() <= 100
    assert batch.z_face.shape == (12, 12)
    assert batch.z_face.requires_grad  # gradient path into the fusion MLP
