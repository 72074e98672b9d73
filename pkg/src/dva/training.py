"""Training objective and loop: L_simple, L_reg, their sum, and diagnostics.

L_simple is the L1 noise-prediction loss of the conditional estimator.
L_reg noisifies the same clean frame with two different noises at the same
step and penalizes disagreement of the masked denoised estimates f_theta,
which pushes foreground content out of the per-frame noise map and into the
condition vector. The combined objective is their unit-weight sum.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .checkpoint import load_checkpoint, save_checkpoint
from .ddim import StepSchedule  # noqa: F401  (re-exported for callers)
from .encoders import IdentityEncoder, LandmarkEncoder
from .errors import ConfigError, TrainingDiverged
from .nets import DvaModel, EstimatorConfig
from .schedule import NoiseSchedule, make_schedule, predict_x0, q_sample
from .synthdata import SyntheticVideo

__all__ = [
    "TrainBatch",
    "TrainConfig",
    "DvaSystem",
    "loss_simple",
    "loss_reg",
    "loss_dva",
    "make_train_batch",
    "train",
    "masked_x0_variance",
    "save_system",
    "load_system",
]

# Mean of |eps| for eps ~ N(0,1): the loss of an estimator that predicts zero.
ZERO_ESTIMATOR_BASELINE = math.sqrt(2.0 / math.pi)


@dataclass
class TrainBatch:
    """One optimization step's worth of frames with everything pre-sampled.

    z_face may carry gradient (it is produced by the trainable fusion MLP
    from frozen encoder outputs); everything else is constant data.
    """

    x0: torch.Tensor  # (B, 3, H, W) clean frames in [-1, 1]
    masks: torch.Tensor | None  # (B, 1, H, W) binary foreground masks
    t: torch.Tensor  # (B,) sampled steps, one per frame
    eps: torch.Tensor  # (B, 3, H, W) primary noise draw
    eps_2: torch.Tensor | None  # (B, 3, H, W) second draw for the reg loss
    z_face: torch.Tensor  # (B, D) fused condition vectors

    def __post_init__(self):
        b = self.x0.shape[0]
        if self.t.shape != (b,):
            raise ValueError(f"need one t per sample: t {tuple(self.t.shape)} vs batch {b}")
        if self.eps.shape != self.x0.shape:
            raise ValueError("eps must match frame shape")
        if self.eps_2 is not None and self.eps_2.shape != self.x0.shape:
            raise ValueError("eps_2 must match frame shape")
        if self.z_face.shape[0] != b:
            raise ValueError("z_face must have one row per sample")
        if self.masks is not None:
            if self.masks.shape != (b, 1, *self.x0.shape[2:]):
                raise ValueError(f"masks must be (B, 1, H, W), got {tuple(self.masks.shape)}")
            binary = (self.masks == 0) | (self.masks == 1)
            if not bool(binary.all()):
                raise ValueError("masks must be binary")


def _check_estimate(eps_hat: torch.Tensor, batch: TrainBatch):
    finite = torch.isfinite(eps_hat).reshape(eps_hat.shape[0], -1).all(dim=1)
    if not bool(finite.all()):
        bad = int((~finite).nonzero()[0, 0])
        raise TrainingDiverged(
            f"non-finite estimator output at batch index {bad}, t={int(batch.t[bad])}"
        )


def loss_simple(model: DvaModel, schedule: NoiseSchedule, batch: TrainBatch) -> torch.Tensor:
    """Mean per-pixel L1 between the true and estimated noise."""
    x_t = q_sample(schedule, batch.x0, batch.t, batch.eps)
    eps_hat = model.estimate_noise(x_t, batch.t, batch.z_face)
    _check_estimate(eps_hat, batch)
    return (eps_hat - batch.eps).abs().mean()


def loss_reg(model: DvaModel, schedule: NoiseSchedule, batch: TrainBatch) -> torch.Tensor:
    """Mean per-pixel L1 between masked denoised estimates under two noises."""
    if batch.masks is None:
        raise ValueError("loss_reg requires foreground masks")
    if batch.eps_2 is None:
        raise ValueError("loss_reg requires a second noise draw eps_2")
    f = []
    for eps in (batch.eps, batch.eps_2):
        x_t = q_sample(schedule, batch.x0, batch.t, eps)
        eps_hat = model.estimate_noise(x_t, batch.t, batch.z_face)
        _check_estimate(eps_hat, batch)
        f.append(predict_x0(schedule, x_t, batch.t, eps_hat))
    return (batch.masks * (f[0] - f[1])).abs().mean()


def loss_dva(model: DvaModel, schedule: NoiseSchedule, batch: TrainBatch, use_reg: bool = True):
    """Combined objective; returns (total, simple_term, reg_term).

    total = simple + reg with unit weights; the first estimator pass is
    shared between the two terms.
    """
    x_1 = q_sample(schedule, batch.x0, batch.t, batch.eps)
    eps_hat_1 = model.estimate_noise(x_1, batch.t, batch.z_face)
    _check_estimate(eps_hat_1, batch)
    simple = (eps_hat_1 - batch.eps).abs().mean()
    if not use_reg:
        reg = torch.zeros((), dtype=simple.dtype, device=simple.device)
        return simple + reg, simple, reg
    if batch.masks is None or batch.eps_2 is None:
        raise ValueError("the regularized objective requires masks and eps_2")
    f_1 = predict_x0(schedule, x_1, batch.t, eps_hat_1)
    x_2 = q_sample(schedule, batch.x0, batch.t, batch.eps_2)
    eps_hat_2 = model.estimate_noise(x_2, batch.t, batch.z_face)
    _check_estimate(eps_hat_2, batch)
    f_2 = predict_x0(schedule, x_2, batch.t, eps_hat_2)
    reg = (batch.masks * (f_1 - f_2)).abs().mean()
    return simple + reg, simple, reg


class DvaSystem(nn.Module):
    """Trainable model plus the two frozen encoders, checkpointed as one unit."""

    def __init__(self, model: DvaModel, id_enc: IdentityEncoder, lnd_enc: LandmarkEncoder):
        super().__init__()
        if model.cfg.d_id != id_enc.d_id or model.cfg.d_lnd != lnd_enc.d_lnd:
            raise ConfigError(
                f"encoder dims ({id_enc.d_id}, {lnd_enc.d_lnd}) do not match "
                f"estimator config ({model.cfg.d_id}, {model.cfg.d_lnd})"
            )
        self.model = model
        self.id_enc = id_enc
        self.lnd_enc = lnd_enc

    @property
    def cfg(self) -> EstimatorConfig:
        return self.model.cfg

    def noise_schedule(self) -> NoiseSchedule:
        return make_schedule(self.cfg.T, self.cfg.beta_start, self.cfg.beta_end)

    def encode_frames(self, frames: torch.Tensor):
        """Frozen per-frame features (z_id, z_lnd); no gradient."""
        with torch.no_grad():
            return self.id_enc.encode(frames), self.lnd_enc.encode(frames)


def save_system(path, system: DvaSystem, step: int = 0, extra: dict | None = None):
    config = {"estimator": system.cfg.to_dict()}
    if extra:
        config.update(extra)
    return save_checkpoint(path, system, config, step=step)


def load_system(path) -> tuple[DvaSystem, int, dict]:
    """Rebuild a DvaSystem from a checkpoint; returns (system, step, config)."""
    from .checkpoint import read_header

    _, config, _, _ = read_header(path)
    cfg = EstimatorConfig.from_dict(config["estimator"])
    system = DvaSystem(
        DvaModel(cfg),
        IdentityEncoder(d_id=cfg.d_id, resolution=cfg.resolution),
        LandmarkEncoder(d_lnd=cfg.d_lnd, resolution=cfg.resolution),
    )
    step, config = load_checkpoint(path, system)
    system.id_enc.requires_grad_(False)
    system.lnd_enc.requires_grad_(False)
    system.eval()
    return system, step, config


@dataclass
class TrainConfig:
    """Loop hyperparameters; defaults follow the desk-scale recipe."""

    steps: int = 3000
    batch_videos: int = 4
    frames_per_video: int = 4
    lr: float = 1e-4
    use_reg: bool = True
    seed: int = 0
    log_every: int = 25
    checkpoint_every: int = 1000
    divergence_limit: float = 100.0
    out_dir: str = "runs/dva"

    def __post_init__(self):
        if self.steps < 1 or self.batch_videos < 1 or self.frames_per_video < 1:
            raise ConfigError("steps, batch_videos, frames_per_video must be positive")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def make_train_batch(
    system: DvaSystem,
    videos: list[SyntheticVideo],
    rng: np.random.Generator,
    cfg: TrainConfig,
    T: int,
) -> TrainBatch:
    """Sample videos and frames, encode them, and draw steps and noises."""
    frames, masks = [], []
    for _ in range(cfg.batch_videos):
        video = videos[int(rng.integers(len(videos)))]
        for _ in range(cfg.frames_per_video):
            n = int(rng.integers(video.frames.shape[0]))
            frames.append(video.frames[n])
            masks.append(video.masks[n])
    x0 = torch.from_numpy(np.stack(frames))
    m = torch.from_numpy(np.stack(masks))[:, None].float()
    z_id, z_lnd = system.encode_frames(x0)
    z_face = system.model.fuse(z_id, z_lnd)
    b = x0.shape[0]
    t = torch.from_numpy(rng.integers(1, T + 1, size=b))
    eps = torch.from_numpy(rng.standard_normal(x0.shape)).float()
    eps_2 = torch.from_numpy(rng.standard_normal(x0.shape)).float() if cfg.use_reg else None
    return TrainBatch(x0=x0, masks=m, t=t, eps=eps, eps_2=eps_2, z_face=z_face)


def train(
    system: DvaSystem,
    videos: list[SyntheticVideo],
    cfg: TrainConfig,
) -> Path:
    """Optimize the estimator and fusion MLP; returns the checkpoint path.

    Writes ``metrics.csv`` (step, loss_simple, loss_reg) and an atomically
    replaced ``checkpoint.bin`` under ``cfg.out_dir``. On a non-finite loss
    the run aborts with TrainingDiverged and the last checkpoint is kept.
    """
    if not videos:
        raise ConfigError("training requires a nonempty dataset")
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / "checkpoint.bin"
    schedule = system.noise_schedule()
    T = schedule.T

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    trainable = list(system.model.parameters())
    opt = torch.optim.Adam(trainable, lr=cfg.lr)
    extra = {"train": cfg.to_dict()}

    system.model.train()
    with open(out_dir / "metrics.csv", "w", newline="") as log:
        writer = csv.writer(log)
        writer.writerow(["step", "loss_simple", "loss_reg"])
        for step in range(1, cfg.steps + 1):
            batch = make_train_batch(system, videos, rng, cfg, T)
            try:
                total, simple, reg = loss_dva(system.model, schedule, batch, cfg.use_reg)
            except TrainingDiverged:
                system.model.eval()
                raise
            loss_value = float(total.detach())
            if not math.isfinite(loss_value) or loss_value > cfg.divergence_limit:
                system.model.eval()
                raise TrainingDiverged(
                    f"loss {loss_value:.3g} at step {step}; last checkpoint kept at "
                    f"{ckpt_path if ckpt_path.exists() else 'none'}"
                )
            opt.zero_grad()
            total.backward()
            opt.step()
            if step % cfg.log_every == 0 or step == cfg.steps:
                writer.writerow([step, f"{float(simple.detach()):.6f}",
                                 f"{float(reg.detach()):.6f}"])
            if step % cfg.checkpoint_every == 0 or step == cfg.steps:
                save_system(ckpt_path, system, step=step, extra=extra)
    system.model.eval()
    return ckpt_path


def masked_x0_variance(
    model: DvaModel,
    schedule: NoiseSchedule,
    frames: torch.Tensor,
    masks: torch.Tensor,
    z_face: torch.Tensor,
    t: int,
    K: int,
    seed: int = 0,
) -> float:
    """Across-noise variance of the masked denoised estimate, mean over mask.

    Draws K noises for each frame, forms f_theta for each, and averages the
    per-pixel across-draw variance over the masked region. An estimator that
    has pushed all foreground content into z_face scores near zero.
    """
    if K < 2:
        raise ValueError(f"variance needs K >= 2 noise draws, got {K}")
    if masks.sum() == 0:
        raise ValueError("variance over an empty mask is undefined")
    gen = torch.Generator().manual_seed(seed)
    estimates = []
    with torch.no_grad():
        for _ in range(K):
            eps = torch.randn(frames.shape, generator=gen, dtype=frames.dtype)
            t_vec = torch.full((frames.shape[0],), t, dtype=torch.long)
            x_t = q_sample(schedule, frames, t_vec, eps)
            eps_hat = model.estimate_noise(x_t, t_vec, z_face)
            estimates.append(predict_x0(schedule, x_t, t_vec, eps_hat))
    stack = torch.stack(estimates)  # (K, B, 3, H, W)
    var = stack.var(dim=0, unbiased=True)
    m = masks[:, None].to(var.dtype).expand_as(var)
    return float((var * m).sum() / m.sum())
