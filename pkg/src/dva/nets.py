"""Conditional noise-estimator UNet and the identity/motion fusion MLP.

The estimator is a standard diffusion UNet whose residual blocks apply two
rounds of feature-wise modulation: normalized activations are scaled/shifted
first by the time embedding, then by the fused semantic vector z_face. That
vector is the only channel through which identity and motion information
reaches the estimator.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError

__all__ = ["EstimatorConfig", "FusionMLP", "NoiseUNet", "DvaModel", "timestep_embedding"]


@dataclass(frozen=True)
class EstimatorConfig:
    """Architecture hyperparameters; the full-scale preset is `paper_scale`."""

    resolution: int = 32
    base_channels: int = 32
    channel_mult: tuple = (1, 2, 2)
    attention_resolutions: tuple = (8,)
    time_base_dim: int = 32
    time_embed_dim: int = 128
    z_face_dim: int = 64
    dropout: float = 0.1
    groups: int = 32
    d_id: int = 32
    d_lnd: int = 8
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def __post_init__(self):
        object.__setattr__(self, "channel_mult", tuple(int(m) for m in self.channel_mult))
        object.__setattr__(
            self, "attention_resolutions", tuple(int(r) for r in self.attention_resolutions)
        )
        if len(self.channel_mult) == 0:
            raise ConfigError("channel_mult must be nonempty")
        positive = (
            self.resolution, self.base_channels, self.time_base_dim, self.time_embed_dim,
            self.z_face_dim, self.groups, self.d_id, self.d_lnd, self.T,
        )
        if any(int(v) <= 0 for v in positive):
            raise ConfigError("all dimensions must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        down = 2 ** (len(self.channel_mult) - 1)
        if self.resolution % down != 0:
            raise ConfigError(
                f"resolution {self.resolution} not divisible by 2^levels-1 = {down}"
            )
        for mult in self.channel_mult:
            if (self.base_channels * mult) % self.groups != 0:
                raise ConfigError(
                    f"groups={self.groups} must divide channels {self.base_channels * mult}"
                )

    @property
    def level_resolutions(self) -> tuple:
        return tuple(self.resolution // 2**i for i in range(len(self.channel_mult)))

    @classmethod
    def paper_scale(cls) -> "EstimatorConfig":
        return cls(
            resolution=256, base_channels=128, channel_mult=(1, 1, 2, 2, 4, 4),
            attention_resolutions=(16,), time_base_dim=128, time_embed_dim=512,
            z_face_dim=512, dropout=0.1, groups=32, d_id=512, d_lnd=136,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EstimatorConfig":
        return cls(**data)


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal embedding of (float) step indices, half cosines half sines."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float32, device=t.device) / half
    )
    args = t.float()[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


class CondResBlock(nn.Module):
    """Residual block with two modulation stages: time embedding, then z_face.

    Layout: GN-SiLU-Conv-GN (scale/shift by time), SiLU-Conv-GN (scale/shift
    by z_face), SiLU-Dropout-Conv, plus the skip connection of the input.
    """

    def __init__(self, c_in, c_out, time_dim, z_dim, groups, dropout):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.norm2 = nn.GroupNorm(groups, c_out)
        self.time_proj = nn.Linear(time_dim, 2 * c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.norm3 = nn.GroupNorm(groups, c_out)
        self.cond_proj = nn.Linear(z_dim, 2 * c_out)
        self.dropout = nn.Dropout(dropout)
        self.conv3 = nn.Conv2d(c_out, c_out, 3, padding=1)
        nn.init.zeros_(self.conv3.weight)
        nn.init.zeros_(self.conv3.bias)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    @staticmethod
    def _modulate(h, proj, vec):
        scale, shift = proj(F.silu(vec)).chunk(2, dim=-1)
        return h * (1.0 + scale[:, :, None, None]) + shift[:, :, None, None]

    def forward(self, x, t_emb, z_face):
        h = self.norm2(self.conv1(F.silu(self.norm1(x))))
        h = self._modulate(h, self.time_proj, t_emb)
        h = self.norm3(self.conv2(F.silu(h)))
        h = self._modulate(h, self.cond_proj, z_face)
        h = self.conv3(self.dropout(F.silu(h)))
        return h + self.skip(x)


class AttentionBlock(nn.Module):
    """Self-attention over spatial positions, applied at configured resolutions."""

    def __init__(self, channels, groups):
        super().__init__()
        self.heads = max(1, channels // 32)
        self.norm = nn.GroupNorm(groups, channels)
        self.qkv = nn.Conv2d(channels, 3 * channels, 1)
        self.proj = nn.Conv2d(channels, channels, 1)
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)

    def forward(self, x):
        b, c, h, w = x.shape
        qkv = self.qkv(self.norm(x)).reshape(b, 3, self.heads, c // self.heads, h * w)
        q, k, v = qkv.unbind(dim=1)
        attn = torch.softmax(q.transpose(-2, -1) @ k / math.sqrt(c // self.heads), dim=-1)
        out = (v @ attn.transpose(-2, -1)).reshape(b, c, h, w)
        return x + self.proj(out)


class NoiseUNet(nn.Module):
    """Multi-resolution conditional estimator epsilon(x_t, t, z_face)."""

    def __init__(self, cfg: EstimatorConfig):
        super().__init__()
        self.cfg = cfg
        chans = [cfg.base_channels * m for m in cfg.channel_mult]
        res = cfg.level_resolutions

        self.time_mlp = nn.Sequential(
            nn.Linear(cfg.time_base_dim, cfg.time_embed_dim),
            nn.SiLU(),
            nn.Linear(cfg.time_embed_dim, cfg.time_embed_dim),
        )
        self.conv_in = nn.Conv2d(3, chans[0], 3, padding=1)

        def block(c_in, c_out):
            return CondResBlock(c_in, c_out, cfg.time_embed_dim, cfg.z_face_dim,
                                cfg.groups, cfg.dropout)

        self.down_blocks = nn.ModuleList()
        self.down_attn = nn.ModuleList()
        self.downsamples = nn.ModuleList()
        prev = chans[0]
        for i, c in enumerate(chans):
            self.down_blocks.append(block(prev, c))
            self.down_attn.append(
                AttentionBlock(c, cfg.groups) if res[i] in cfg.attention_resolutions
                else nn.Identity()
            )
            if i < len(chans) - 1:
                self.downsamples.append(nn.Conv2d(c, c, 3, stride=2, padding=1))
            prev = c

        self.mid_block1 = block(prev, prev)
        self.mid_attn = AttentionBlock(prev, cfg.groups)
        self.mid_block2 = block(prev, prev)

        self.up_blocks = nn.ModuleList()
        self.up_attn = nn.ModuleList()
        self.upsamples = nn.ModuleList()
        for i in reversed(range(len(chans))):
            self.up_blocks.append(block(prev + chans[i], chans[i]))
            self.up_attn.append(
                AttentionBlock(chans[i], cfg.groups) if res[i] in cfg.attention_resolutions
                else nn.Identity()
            )
            if i > 0:
                self.upsamples.append(nn.Conv2d(chans[i], chans[i], 3, padding=1))
            prev = chans[i]

        self.norm_out = nn.GroupNorm(cfg.groups, chans[0])
        self.conv_out = nn.Conv2d(chans[0], 3, 3, padding=1)
        nn.init.zeros_(self.conv_out.weight)
        nn.init.zeros_(self.conv_out.bias)

    def forward(self, x, t, z_face):
        t_emb = self.time_mlp(timestep_embedding(t, self.cfg.time_base_dim).to(x.dtype))
        h = self.conv_in(x)
        skips = []
        for i, (blk, attn) in enumerate(zip(self.down_blocks, self.down_attn)):
            h = attn(blk(h, t_emb, z_face))
            skips.append(h)
            if i < len(self.downsamples):
                h = self.downsamples[i](h)
        h = self.mid_block1(h, t_emb, z_face)
        h = self.mid_attn(h)
        h = self.mid_block2(h, t_emb, z_face)
        for i, (blk, attn) in enumerate(zip(self.up_blocks, self.up_attn)):
            h = attn(blk(torch.cat([h, skips.pop()], dim=1), t_emb, z_face))
            if i < len(self.upsamples):
                h = F.interpolate(h, scale_factor=2, mode="nearest")
                h = self.upsamples[i](h)
        return self.conv_out(F.silu(self.norm_out(h)))


class FusionMLP(nn.Module):
    """Trainable map from (z_id, z_lnd) to the estimator condition z_face."""

    def __init__(self, d_id, d_lnd, d_face):
        super().__init__()
        self.d_id, self.d_lnd, self.d_face = d_id, d_lnd, d_face
        self.net = nn.Sequential(
            nn.Linear(d_id + d_lnd, d_face),
            nn.SiLU(),
            nn.Linear(d_face, d_face),
            nn.SiLU(),
            nn.Linear(d_face, d_face),
        )

    def forward(self, z_id, z_lnd):
        if z_id.shape[-1] != self.d_id or z_lnd.shape[-1] != self.d_lnd:
            raise ValueError(
                f"expected dims ({self.d_id}, {self.d_lnd}), "
                f"got ({z_id.shape[-1]}, {z_lnd.shape[-1]})"
            )
        return self.net(torch.cat([z_id, z_lnd], dim=-1))


class DvaModel(nn.Module):
    """Trainable parts of the autoencoder: estimator UNet + fusion MLP."""

    def __init__(self, cfg: EstimatorConfig):
        super().__init__()
        self.cfg = cfg
        self.unet = NoiseUNet(cfg)
        self.fusion = FusionMLP(cfg.d_id, cfg.d_lnd, cfg.z_face_dim)

    def fuse(self, z_id, z_lnd):
        return self.fusion(z_id, z_lnd)

    def estimate_noise(self, x_t, t, z_face):
        """Conditional noise estimate; t is an int or a (B,) tensor in [1, T]."""
        if x_t.ndim != 4 or x_t.shape[1] != 3 or x_t.shape[2:] != (self.cfg.resolution,) * 2:
            raise ValueError(
                f"expected (B, 3, {self.cfg.resolution}, {self.cfg.resolution}) input, "
                f"got {tuple(x_t.shape)}"
            )
        if isinstance(t, int):
            t = torch.full((x_t.shape[0],), t, dtype=torch.long, device=x_t.device)
        if t.shape != (x_t.shape[0],):
            raise ValueError(f"t must be scalar or shape ({x_t.shape[0]},), got {tuple(t.shape)}")
        if torch.any(t < 1) or torch.any(t > self.cfg.T):
            raise ValueError(f"step indices must lie in [1, {self.cfg.T}]")
        if z_face.ndim == 1:
            z_face = z_face[None].expand(x_t.shape[0], -1)
        if z_face.shape != (x_t.shape[0], self.cfg.z_face_dim):
            raise ValueError(f"z_face must be (B, {self.cfg.z_face_dim}), got {tuple(z_face.shape)}")
        return self.unet(x_t, t, z_face)

    def ddim_estimator(self, z_face):
        """Bind z_face into the (x, t, cond) callable the samplers expect."""

        def est(x_t, t, _cond=None):
            with torch.no_grad():
                return self.estimate_noise(x_t, int(t), z_face)

        return est

    def forward(self, x_t, t, z_id, z_lnd):
        return self.estimate_noise(x_t, t, self.fuse(z_id, z_lnd))
