"""Frozen identity and motion encoders pretrained on the synthetic factor grid.

The identity encoder is a small CNN trained to classify the discrete identity
factors; its identity feature z_id is an orthonormal random projection of the
predicted factor profile, l2-normalized. The landmark encoder regresses the
per-frame motion state (center position and rotation as a point on the unit
circle); z_lnd is an orthonormal projection of that state. Orthonormal
projections preserve inner products, so factor-space similarity margins carry
over to feature space exactly.

Both encoders are frozen after pretraining: the main training loop never
updates them, and their parameter checksums are the test witness for that.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError
from .synthdata import (
    HUES,
    N_TEXTURES,
    NUM_IDENTITIES,
    BackgroundFactors,
    SyntheticVideoSpec,
    all_identities,
    generate_video,
)

__all__ = [
    "EPSILON_MOTION",
    "IdentityEncoder",
    "LandmarkEncoder",
    "pretrain_identity_encoder",
    "pretrain_landmark_encoder",
    "parameter_checksum",
]

# Calibrated motion-distance threshold: same pose measured twice lands well
# under it, distinct poses land far above (see the encoder test suite).
EPSILON_MOTION = 0.15

_PROFILE_DIM = 7  # 3 shape probs + 2 hue circle coords + 2 attribute bits
_MOTION_DIM = 4  # cx, cy, cos(angle), sin(angle)
_SHARPEN = 4.0  # logit multiplier pushing predicted profiles toward the ideal grid

_HUE_CIRCLE = np.stack(
    [[math.cos(2 * math.pi * h), math.sin(2 * math.pi * h)] for h in HUES]
)


def _orthonormal_projection(d_out: int, d_in: int, seed: int) -> torch.Tensor:
    """Fixed projection with orthonormal columns: (Qa)'(Qb) = a'b exactly."""
    if d_out < d_in:
        raise ConfigError(f"projection needs d_out >= d_in, got {d_out} < {d_in}")
    gauss = np.random.default_rng(seed).standard_normal((d_out, d_in))
    q, r = np.linalg.qr(gauss)
    q = q * np.sign(np.diag(r))  # fix the sign ambiguity for determinism
    return torch.from_numpy(q).float()


class _Trunk(nn.Module):
    """Conv stages over RGB + coordinate channels, flattened at quarter scale.

    The two constant coordinate channels let position and orientation heads
    read absolute location directly; the final stride-1 stage keeps an
    8x8 spatial map (at the 32px default) so small glyph cues survive.
    """

    def __init__(self, resolution: int = 32, channels=(24, 48, 96)):
        super().__init__()
        if resolution % 4 != 0:
            raise ConfigError(f"encoder resolution must be divisible by 4, got {resolution}")
        c1, c2, c3 = channels
        self.width = c3 * (resolution // 4) ** 2
        self.net = nn.Sequential(
            nn.Conv2d(5, c1, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(c1, c2, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(c2, c3, 3, stride=1, padding=1), nn.SiLU(),
        )
        axis = torch.linspace(-1.0, 1.0, resolution)
        yy, xx = torch.meshgrid(axis, axis, indexing="ij")
        self.register_buffer("coords", torch.stack([xx, yy])[None])

    def forward(self, frames):
        coords = self.coords.expand(frames.shape[0], -1, -1, -1)
        return self.net(torch.cat([frames, coords], dim=1)).flatten(1)


def _check_frames(frames: torch.Tensor, resolution: int):
    if frames.ndim != 4 or frames.shape[1] != 3 or frames.shape[2:] != (resolution,) * 2:
        raise ValueError(
            f"expected frames of shape (B, 3, {resolution}, {resolution}), "
            f"got {tuple(frames.shape)}"
        )


class IdentityEncoder(nn.Module):
    """Frozen CNN mapping a frame to a unit-norm identity feature z_id."""

    def __init__(self, d_id: int = 32, resolution: int = 32, seed: int = 0):
        super().__init__()
        self.d_id = d_id
        self.resolution = resolution
        self.trunk = _Trunk(resolution, channels=(24, 48, 96))
        self.head_shape = nn.Linear(self.trunk.width, 3)
        self.head_hue = nn.Linear(self.trunk.width, len(HUES))
        self.head_bits = nn.Linear(self.trunk.width, 2)
        self.register_buffer("projection", _orthonormal_projection(d_id, _PROFILE_DIM, seed))
        self.register_buffer("hue_circle", torch.from_numpy(_HUE_CIRCLE).float())

    def embed(self, frames: torch.Tensor) -> torch.Tensor:
        """Trunk feature vector; the embedding space for directional losses."""
        _check_frames(frames, self.resolution)
        return self.trunk(frames)

    def factor_logits(self, frames: torch.Tensor):
        feats = self.embed(frames)
        return self.head_shape(feats), self.head_hue(feats), self.head_bits(feats)

    def semantic_profile(self, frames: torch.Tensor) -> torch.Tensor:
        """Predicted factor profile: [shape probs, hue circle point, bit signs]."""
        shape_l, hue_l, bits_l = self.factor_logits(frames)
        shape_p = torch.softmax(_SHARPEN * shape_l, dim=-1)
        hue_vec = torch.softmax(_SHARPEN * hue_l, dim=-1) @ self.hue_circle
        bits = 2.0 * torch.sigmoid(_SHARPEN * bits_l) - 1.0
        return torch.cat([shape_p, hue_vec, bits], dim=-1)

    def encode(self, frames: torch.Tensor) -> torch.Tensor:
        z = self.semantic_profile(frames) @ self.projection.T
        return F.normalize(z, dim=-1)

    def predict_class(self, frames: torch.Tensor) -> torch.Tensor:
        """Dense identity class in [0, 48): argmax of each factor head."""
        shape_l, hue_l, bits_l = self.factor_logits(frames)
        shape = shape_l.argmax(dim=-1)
        hue = hue_l.argmax(dim=-1)
        ring, stripe = (bits_l > 0).long().unbind(dim=-1)
        return ((shape * len(HUES) + hue) * 2 + ring) * 2 + stripe

    def forward(self, frames):
        return self.encode(frames)


class LandmarkEncoder(nn.Module):
    """Frozen CNN regressing per-frame motion; z_lnd is its projected output."""

    def __init__(self, d_lnd: int = 8, resolution: int = 32, seed: int = 1):
        super().__init__()
        self.d_lnd = d_lnd
        self.resolution = resolution
        self.trunk = _Trunk(resolution, channels=(16, 32, 64))
        self.head = nn.Sequential(
            nn.Linear(self.trunk.width, 128), nn.SiLU(), nn.Linear(128, _MOTION_DIM)
        )
        self.register_buffer("projection", _orthonormal_projection(d_lnd, _MOTION_DIM, seed))

    def predict_motion(self, frames: torch.Tensor) -> torch.Tensor:
        """(cx, cy, cos angle, sin angle) per frame."""
        _check_frames(frames, self.resolution)
        return self.head(self.trunk(frames))

    def encode(self, frames: torch.Tensor) -> torch.Tensor:
        return self.predict_motion(frames) @ self.projection.T

    def forward(self, frames):
        return self.encode(frames)


def motion_state(motion_row: np.ndarray) -> np.ndarray:
    """Regression target for one trajectory row: (cx, cy, cos a, sin a)."""
    cx, cy, ang = motion_row
    return np.array([cx, cy, math.cos(ang), math.sin(ang)], dtype=np.float64)


def _random_pose(rng: np.random.Generator) -> np.ndarray:
    return np.array(
        [[rng.uniform(-0.22, 0.22), rng.uniform(-0.22, 0.22), rng.uniform(-np.pi, np.pi)]]
    )


def _render_frame(rng: np.random.Generator, identity, motion, resolution: int):
    """One composited frame of the given identity at the given pose, with a
    freshly drawn background and micro-noise seed."""
    spec = SyntheticVideoSpec(
        identity=identity,
        background=BackgroundFactors(
            texture=int(rng.integers(N_TEXTURES)), phase=float(rng.uniform())
        ),
        motion=motion,
        resolution=resolution,
    )
    return generate_video(spec, seed=int(rng.integers(2**31))).frames[0]


def _augment(frames: torch.Tensor, rng: np.random.Generator, max_sigma: float):
    """Noise + brightness jitter so the encoders tolerate decoded frames."""
    b = frames.shape[0]
    sigma = torch.from_numpy(rng.uniform(0.0, max_sigma, b)).float()
    sigma = sigma * torch.from_numpy(rng.random(b) < 0.7).float()
    noise = torch.from_numpy(rng.standard_normal(frames.shape)).float()
    shift = torch.from_numpy(rng.uniform(-0.08, 0.08, b)).float()
    return frames + sigma[:, None, None, None] * noise + shift[:, None, None, None]


def freeze(module: nn.Module) -> nn.Module:
    module.eval()
    module.requires_grad_(False)
    return module


def pretrain_identity_encoder(
    d_id: int = 32,
    resolution: int = 32,
    steps: int = 5000,
    batch_size: int = 64,
    pool_per_identity: int = 170,
    lr: float = 2e-3,
    noise_aug: float = 0.25,
    seed: int = 0,
) -> IdentityEncoder:
    """Train the factor classifier on a balanced render pool, then freeze it.

    The pool is rendered once (every identity at many random poses and
    backgrounds); training then samples augmented minibatches from it. The
    shape term is weighted up because the silhouette is the hardest factor
    at low resolution.
    """
    torch.manual_seed(seed)
    enc = IdentityEncoder(d_id=d_id, resolution=resolution, seed=seed)
    rng = np.random.default_rng(seed + 1)

    frames, shapes, hues, bits = [], [], [], []
    for identity in all_identities():
        # featureless glyphs carry the least shape evidence; oversample them
        reps = pool_per_identity * (3 if not (identity.ring or identity.stripe) else 2) // 2
        for _ in range(reps):
            frames.append(_render_frame(rng, identity, _random_pose(rng), resolution))
            shapes.append(identity.shape)
            hues.append(HUES.index(identity.hue))
            bits.append([float(identity.ring), float(identity.stripe)])
    pool = torch.from_numpy(np.stack(frames))
    shapes = torch.tensor(shapes)
    hues = torch.tensor(hues)
    bits = torch.tensor(bits)

    opt = torch.optim.Adam(enc.parameters(), lr=lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=steps, eta_min=lr / 20)
    for _ in range(steps):
        idx = torch.from_numpy(rng.integers(len(pool), size=batch_size))
        x = _augment(pool[idx], rng, noise_aug)
        shape_l, hue_l, bits_l = enc.factor_logits(x)
        loss = (
            2.0 * F.cross_entropy(shape_l, shapes[idx])
            + F.cross_entropy(hue_l, hues[idx])
            + F.binary_cross_entropy_with_logits(bits_l, bits[idx])
        )
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()
    return freeze(enc)


def pretrain_landmark_encoder(
    d_lnd: int = 8,
    resolution: int = 32,
    steps: int = 2500,
    batch_size: int = 64,
    pool_size: int = 5000,
    lr: float = 2e-3,
    noise_aug: float = 0.2,
    seed: int = 1,
) -> LandmarkEncoder:
    """Train the motion regressor on a pool of pose pairs, then freeze it.

    Each pool entry renders the same identity and pose twice under different
    backgrounds; the loss regresses both views to the true motion state and
    additionally penalizes disagreement between the views, which is what
    makes z_lnd background-invariant.
    """
    torch.manual_seed(seed)
    enc = LandmarkEncoder(d_lnd=d_lnd, resolution=resolution, seed=seed)
    rng = np.random.default_rng(seed + 1)
    identities = all_identities()

    views_a, views_b, targets = [], [], []
    for _ in range(pool_size):
        identity = identities[int(rng.integers(NUM_IDENTITIES))]
        motion = _random_pose(rng)
        views_a.append(_render_frame(rng, identity, motion, resolution))
        views_b.append(_render_frame(rng, identity, motion, resolution))
        targets.append(motion_state(motion[0]))
    pool_a = torch.from_numpy(np.stack(views_a))
    pool_b = torch.from_numpy(np.stack(views_b))
    targets = torch.from_numpy(np.stack(targets)).float()

    opt = torch.optim.Adam(enc.parameters(), lr=lr)
    for _ in range(steps):
        idx = torch.from_numpy(rng.integers(pool_size, size=batch_size))
        xa = _augment(pool_a[idx], rng, noise_aug)
        xb = _augment(pool_b[idx], rng, noise_aug)
        pa, pb = enc.predict_motion(xa), enc.predict_motion(xb)
        t = targets[idx]
        loss = F.mse_loss(pa, t) + F.mse_loss(pb, t) + 2.0 * F.mse_loss(pa, pb)
        opt.zero_grad()
        loss.backward()
        opt.step()
    return freeze(enc)


def parameter_checksum(module: nn.Module) -> str:
    """SHA-256 over all parameters and buffers, in state-dict order."""
    digest = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        digest.update(name.encode())
        digest.update(tensor.detach().cpu().numpy().tobytes())
    return digest.hexdigest()
