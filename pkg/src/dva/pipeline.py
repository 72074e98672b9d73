"""End-to-end video workflow: encode to latents, edit, decode, paste back.

A video becomes one unit-norm representative identity feature (the
renormalized mean of per-frame identity features), per-frame motion
features, and per-frame inverted noise maps. Identity edits touch the one
representative vector; decoding replays the deterministic sampler from the
stored noise maps, so anything not deliberately changed reproduces exactly.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .ddim import StepSchedule, invert, make_step_schedule, sample
from .encoders import parameter_checksum
from .errors import ConfigError, DataFormatError

__all__ = [
    "VideoLatentBundle",
    "align_frames",
    "encode_video",
    "decode_video",
    "paste_back",
    "swap_features",
    "decode_with_random_noise",
    "per_frame_mse",
    "save_bundle",
    "load_bundle",
]

_BUNDLE_MAGIC = "dva-bundle"
_SWAPPABLE = ("identity", "motion", "background")


@dataclass
class VideoLatentBundle:
    """Full latent decomposition of one video under a fixed model.

    ``z_id_rep`` is shared across frames; ``z_lnd`` and ``x_T`` are
    per-frame. ``z_face[n]`` caches ``fuse(z_id_rep, z_lnd[n])`` and
    ``x_T[n]`` is the deterministic inversion of frame ``n`` under it.
    """

    z_id_rep: torch.Tensor  # (d_id,), unit norm
    z_lnd: torch.Tensor  # (N, d_lnd)
    z_face: torch.Tensor  # (N, d_face)
    x_T: torch.Tensor  # (N, 3, H, W)
    step_schedule: StepSchedule
    checkpoint_id: str = ""

    def __post_init__(self):
        if self.z_id_rep.ndim != 1:
            raise ConfigError("z_id_rep must be a vector")
        if abs(float(self.z_id_rep.norm()) - 1.0) > 1e-3:
            raise ConfigError(
                f"z_id_rep must be unit-norm, got {float(self.z_id_rep.norm()):.6f}"
            )
        n = self.x_T.shape[0]
        if self.z_lnd.shape[0] != n or self.z_face.shape[0] != n:
            raise ConfigError(
                f"per-frame fields disagree on N: x_T {n}, "
                f"z_lnd {self.z_lnd.shape[0]}, z_face {self.z_face.shape[0]}"
            )
        if n < 1 or self.x_T.ndim != 4:
            raise ConfigError("x_T must be a non-empty (N, C, H, W) batch")

    @property
    def n_frames(self) -> int:
        return int(self.x_T.shape[0])


def align_frames(frames):
    """Alignment/cropping slot: identity for synthetic data.

    Real-footage front-ends (face alignment, cropping) plug in here without
    touching the rest of the pipeline.
    """
    return frames


def _as_frame_batch(frames, resolution: int) -> torch.Tensor:
    t = torch.as_tensor(np.ascontiguousarray(frames)
                        if isinstance(frames, np.ndarray) else frames).float()
    if t.ndim != 4 or t.shape[1] != 3 or t.shape[2:] != (resolution, resolution):
        raise ValueError(
            f"expected frames of shape (N, 3, {resolution}, {resolution}), "
            f"got {tuple(t.shape)}"
        )
    return t


def encode_video(system, frames, S: int) -> VideoLatentBundle:
    """Decompose a video into (z_id_rep, z_lnd, z_face, x_T) with S-step inversion."""
    frames = _as_frame_batch(align_frames(frames), system.cfg.resolution)
    if frames.shape[0] < 1:
        raise ValueError("need at least one frame")
    sched = system.noise_schedule()
    fold = make_step_schedule(sched.T, S)
    z_id, z_lnd = system.encode_frames(frames)
    z_id_rep = F.normalize(z_id.mean(dim=0), dim=0)
    with torch.no_grad():
        z_face = system.model.fuse(z_id_rep.expand(frames.shape[0], -1), z_lnd)
        x_T = invert(sched, system.model.ddim_estimator(z_face), frames, fold)
    return VideoLatentBundle(
        z_id_rep=z_id_rep, z_lnd=z_lnd, z_face=z_face, x_T=x_T,
        step_schedule=fold, checkpoint_id=parameter_checksum(system.model),
    )


def _check_same_model(system, bundle: VideoLatentBundle):
    if bundle.checkpoint_id and bundle.checkpoint_id != parameter_checksum(system.model):
        raise ConfigError(
            "bundle was encoded under a different model checkpoint; "
            "decoding it here would not reproduce its video"
        )


def decode_video(system, bundle: VideoLatentBundle, z_id_override=None) -> torch.Tensor:
    """Sample all frames back from the bundle's noise maps.

    With ``z_id_override`` the per-frame conditions are recomputed as
    fuse(override, z_lnd[n]); the override must be unit-norm.
    """
    _check_same_model(system, bundle)
    z_face = bundle.z_face
    if z_id_override is not None:
        override = torch.as_tensor(z_id_override).float().reshape(-1)
        if abs(float(override.norm()) - 1.0) > 1e-3:
            raise ValueError(
                f"identity override must be unit-norm, got {float(override.norm()):.6f}"
            )
        with torch.no_grad():
            z_face = system.model.fuse(
                override.expand(bundle.n_frames, -1), bundle.z_lnd
            )
    sched = system.noise_schedule()
    with torch.no_grad():
        return sample(
            sched, system.model.ddim_estimator(z_face), bundle.x_T, bundle.step_schedule
        )


def paste_back(original_frames, edited_frames, masks) -> torch.Tensor:
    """mask ⊙ edited + (1 − mask) ⊙ original, per frame."""
    original = torch.as_tensor(np.ascontiguousarray(original_frames)
                               if isinstance(original_frames, np.ndarray)
                               else original_frames).float()
    edited = torch.as_tensor(edited_frames).float()
    m = torch.as_tensor(np.ascontiguousarray(masks)
                        if isinstance(masks, np.ndarray) else masks).float()
    if m.ndim == 3:
        m = m[:, None]
    if original.shape != edited.shape or m.shape != (
        original.shape[0], 1, *original.shape[2:]
    ):
        raise ValueError(
            f"shape mismatch: original {tuple(original.shape)}, "
            f"edited {tuple(edited.shape)}, masks {tuple(m.shape)}"
        )
    return m * edited + (1.0 - m) * original


def swap_features(system, bundle_a: VideoLatentBundle, bundle_b: VideoLatentBundle,
                  which: str) -> torch.Tensor:
    """Decode A with one component replaced by B's.

    identity: B's representative identity conditions A's frames.
    motion: B's per-frame motion features condition A's noise maps.
    background: B's noise maps replace A's, keeping A's conditions.
    """
    if which not in _SWAPPABLE:
        raise ConfigError(f"which must be one of {_SWAPPABLE}, got {which!r}")
    if which == "identity":
        return decode_video(system, bundle_a, z_id_override=bundle_b.z_id_rep)
    if bundle_b.n_frames != bundle_a.n_frames:
        raise ValueError(
            f"{which} swap needs equal frame counts, "
            f"got {bundle_a.n_frames} vs {bundle_b.n_frames}"
        )
    if which == "motion":
        with torch.no_grad():
            z_face = system.model.fuse(
                bundle_a.z_id_rep.expand(bundle_a.n_frames, -1), bundle_b.z_lnd
            )
        hybrid = VideoLatentBundle(
            z_id_rep=bundle_a.z_id_rep, z_lnd=bundle_b.z_lnd, z_face=z_face,
            x_T=bundle_a.x_T, step_schedule=bundle_a.step_schedule,
            checkpoint_id=bundle_a.checkpoint_id,
        )
    else:  # background
        hybrid = VideoLatentBundle(
            z_id_rep=bundle_a.z_id_rep, z_lnd=bundle_a.z_lnd, z_face=bundle_a.z_face,
            x_T=bundle_b.x_T, step_schedule=bundle_a.step_schedule,
            checkpoint_id=bundle_a.checkpoint_id,
        )
    return decode_video(system, hybrid)


def decode_with_random_noise(system, bundle: VideoLatentBundle, seed: int) -> torch.Tensor:
    """Decode with fresh standard-normal noise maps instead of the inverted ones."""
    gen = torch.Generator().manual_seed(int(seed))
    x_T = torch.randn(bundle.x_T.shape, generator=gen, dtype=torch.float32)
    fresh = VideoLatentBundle(
        z_id_rep=bundle.z_id_rep, z_lnd=bundle.z_lnd, z_face=bundle.z_face,
        x_T=x_T, step_schedule=bundle.step_schedule, checkpoint_id=bundle.checkpoint_id,
    )
    return decode_video(system, fresh)


def per_frame_mse(a, b) -> np.ndarray:
    """Mean squared error of each frame pair, for reconstruction logs."""
    a = torch.as_tensor(np.ascontiguousarray(a) if isinstance(a, np.ndarray) else a)
    b = torch.as_tensor(np.ascontiguousarray(b) if isinstance(b, np.ndarray) else b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return ((a.double() - b.double()) ** 2).flatten(1).mean(dim=1).numpy()


_TENSOR_FIELDS = ("z_id_rep", "z_lnd", "z_face", "x_T")


def save_bundle(path, bundle: VideoLatentBundle) -> Path:
    """Persist as a directory: text header + one float32 binary per latent."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    lines = [
        f"{_BUNDLE_MAGIC} 1",
        f"checkpoint {bundle.checkpoint_id or '-'}",
        "steps " + " ".join(str(int(s)) for s in bundle.step_schedule.steps),
    ]
    for name in _TENSOR_FIELDS:
        tensor = getattr(bundle, name)
        lines.append(f"tensor {name} " + " ".join(str(d) for d in tensor.shape))
        blob = tensor.detach().cpu().numpy().astype("<f4").tobytes()
        fd, tmp = tempfile.mkstemp(dir=root, suffix=".tmp")
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, root / f"{name}.bin")
    lines.append("end")
    (root / "bundle.txt").write_text("\n".join(lines) + "\n")
    return root


def load_bundle(path) -> VideoLatentBundle:
    root = Path(path)
    header = root / "bundle.txt"
    if not header.exists():
        raise DataFormatError(f"{root}: bundle header not found")
    lines = header.read_text().splitlines()
    if not lines or lines[0] != f"{_BUNDLE_MAGIC} 1":
        raise DataFormatError(f"{header}: not a bundle header")
    if not lines or lines[-1] != "end":
        raise DataFormatError(f"{header}: missing end marker")
    checkpoint_id, steps, shapes = "", None, {}
    for line in lines[1:-1]:
        kind, _, rest = line.partition(" ")
        if kind == "checkpoint":
            checkpoint_id = "" if rest == "-" else rest
        elif kind == "steps":
            steps = np.array([int(v) for v in rest.split()], dtype=np.int64)
        elif kind == "tensor":
            parts = rest.split()
            shapes[parts[0]] = tuple(int(d) for d in parts[1:])
        else:
            raise DataFormatError(f"{header}: unknown line kind {kind!r}")
    if steps is None or set(shapes) != set(_TENSOR_FIELDS):
        raise DataFormatError(f"{header}: incomplete bundle header")
    tensors = {}
    for name in _TENSOR_FIELDS:
        blob = root / f"{name}.bin"
        if not blob.exists():
            raise DataFormatError(f"{blob}: missing latent file")
        raw = blob.read_bytes()
        count = int(np.prod(shapes[name], dtype=np.int64))
        if len(raw) != 4 * count:
            raise DataFormatError(
                f"{blob}: expected {4 * count} bytes for shape {shapes[name]}, "
                f"got {len(raw)}"
            )
        tensors[name] = torch.from_numpy(
            np.frombuffer(raw, dtype="<f4").reshape(shapes[name]).copy()
        )
    return VideoLatentBundle(
        step_schedule=StepSchedule(steps=steps), checkpoint_id=checkpoint_id, **tensors
    )
