"""Procedural video generator with known identity/motion/background factors.

Each video shows one colored glyph (the "identity") moving over a textured
background. Identity is a discrete factor tuple, motion is a per-frame
(center, rotation) trajectory, and the background is a texture id plus phase
with seeded static micro-noise. Compositing is gated by the binary silhouette
mask, so ``frame = mask * foreground + (1 - mask) * background`` holds exactly
and background edits can never leak into foreground pixels.

Frames are quantized to the 8-bit grid at generation time (the float value of
a pixel is exactly ``u8 / 127.5 - 1``), which makes the PNG dataset format a
bit-exact round trip.
"""

from __future__ import annotations

import colorsys
import json
import os
import shutil
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, DataFormatError

__all__ = [
    "HUES",
    "N_SHAPES",
    "N_TEXTURES",
    "NUM_IDENTITIES",
    "IdentityFactors",
    "BackgroundFactors",
    "SyntheticVideoSpec",
    "SyntheticVideo",
    "all_identities",
    "identity_class",
    "sample_video_spec",
    "generate_video",
    "write_dataset",
    "read_dataset",
]

N_SHAPES = 3
HUES = (0.0, 0.25, 0.5, 0.75)
N_TEXTURES = 4
NUM_IDENTITIES = N_SHAPES * len(HUES) * 2 * 2
MIN_RESOLUTION = 16

_GLYPH_RADIUS = {0: 0.55, 1: 0.50, 2: 0.40}  # disc radius / square, triangle apothem
_TEXTURE_PALETTE = (
    ((0.25, 0.30, 0.38), (0.55, 0.60, 0.68)),
    ((0.30, 0.26, 0.24), (0.62, 0.55, 0.48)),
    ((0.24, 0.33, 0.28), (0.52, 0.64, 0.56)),
    ((0.33, 0.28, 0.36), (0.60, 0.56, 0.66)),
)


@dataclass(frozen=True)
class IdentityFactors:
    """Discrete identity: shape class, hue bin, and two binary attributes."""

    shape: int
    hue: float
    ring: bool
    stripe: bool

    def __post_init__(self):
        if self.shape not in range(N_SHAPES):
            raise ConfigError(f"shape must be in [0, {N_SHAPES}), got {self.shape}")
        if self.hue not in HUES:
            raise ConfigError(f"hue must be one of {HUES}, got {self.hue}")


@dataclass(frozen=True)
class BackgroundFactors:
    """Background texture family and its spatial phase."""

    texture: int
    phase: float

    def __post_init__(self):
        if self.texture not in range(N_TEXTURES):
            raise ConfigError(f"texture must be in [0, {N_TEXTURES}), got {self.texture}")
        if not np.isfinite(self.phase):
            raise ConfigError("phase must be finite")


@dataclass(eq=False)
class SyntheticVideoSpec:
    """Generating factors of one video: identity x motion trajectory x background.

    ``motion`` is an (N, 3) float array of per-frame (center_x, center_y,
    rotation) in normalized [-1, 1] coordinates / radians.
    """

    identity: IdentityFactors
    background: BackgroundFactors
    motion: np.ndarray
    resolution: int = 32

    def __post_init__(self):
        self.motion = np.asarray(self.motion, dtype=np.float64)
        if self.motion.ndim != 2 or self.motion.shape[1] != 3 or self.motion.shape[0] < 1:
            raise ConfigError(f"motion must be (N>=1, 3), got {self.motion.shape}")
        if not np.all(np.isfinite(self.motion)):
            raise ConfigError("motion trajectory must be finite")
        if self.resolution < MIN_RESOLUTION:
            raise ConfigError(f"resolution must be >= {MIN_RESOLUTION}, got {self.resolution}")

    @property
    def N(self) -> int:
        return int(self.motion.shape[0])


@dataclass(eq=False)
class SyntheticVideo:
    """Rendered video: frames in [-1,1], exact binary foreground masks, labels."""

    frames: np.ndarray  # (N, 3, H, W) float32, quantized to the 8-bit grid
    masks: np.ndarray  # (N, H, W) bool
    labels: SyntheticVideoSpec
    seed: int


def all_identities():
    """Every identity tuple in the factor grid, in class-index order."""
    return [
        IdentityFactors(shape=s, hue=h, ring=bool(r), stripe=bool(p))
        for s in range(N_SHAPES)
        for h in HUES
        for r in (0, 1)
        for p in (0, 1)
    ]


def identity_class(identity: IdentityFactors) -> int:
    """Dense class index in [0, NUM_IDENTITIES) for classifier targets."""
    hue_idx = HUES.index(identity.hue)
    return ((identity.shape * len(HUES) + hue_idx) * 2 + int(identity.ring)) * 2 + int(
        identity.stripe
    )


def sample_video_spec(rng: np.random.Generator, n_frames: int = 8,
                      resolution: int = 32) -> SyntheticVideoSpec:
    """Draw identity, background, and a smooth sinusoidal trajectory independently."""
    identity = IdentityFactors(
        shape=int(rng.integers(N_SHAPES)),
        hue=HUES[int(rng.integers(len(HUES)))],
        ring=bool(rng.integers(2)),
        stripe=bool(rng.integers(2)),
    )
    background = BackgroundFactors(
        texture=int(rng.integers(N_TEXTURES)),
        phase=float(rng.uniform(0.0, 1.0)),
    )
    ax, ay = rng.uniform(0.08, 0.22, size=2)
    fx, fy = rng.integers(1, 3, size=2)
    px, py, pa = rng.uniform(0.0, 1.0, size=3)
    amp_angle = rng.uniform(0.3, np.pi / 2)
    n = np.arange(n_frames) / max(n_frames, 2)
    motion = np.stack(
        [
            ax * np.sin(2 * np.pi * (fx * n + px)),
            ay * np.sin(2 * np.pi * (fy * n + py)),
            amp_angle * np.sin(2 * np.pi * (n + pa)),
        ],
        axis=1,
    )
    return SyntheticVideoSpec(identity=identity, background=background,
                              motion=motion, resolution=resolution)


def _grid(resolution: int):
    c = (np.arange(resolution, dtype=np.float64) + 0.5) / resolution * 2.0 - 1.0
    return np.meshgrid(c, c, indexing="xy")


def _x_extent(shape: int, r: float) -> float:
    return r / np.cos(np.pi / 6) if shape == 2 else r


def _silhouette_sdf(shape: int, dx, dy, r: float):
    if shape == 0:
        d = np.hypot(dx, dy) - r
    elif shape == 1:
        d = np.maximum(np.abs(dx), np.abs(dy)) - r
    else:
        # equilateral triangle as intersection of three half-planes (apothem r)
        d = -dy - r
        for theta in (np.pi / 6, 5 * np.pi / 6):
            d = np.maximum(d, np.cos(theta) * dx + np.sin(theta) * dy - r)
    # orientation bump on the local +x edge: breaks every rotational symmetry,
    # so the pose angle is observable from the silhouette for all identities
    bump = np.hypot(dx - _x_extent(shape, r), dy) - 0.12
    return np.minimum(d, bump)


def _smooth_band(distance, px: float):
    """Anti-aliased coverage of {distance <= 0} with a one-pixel ramp."""
    return np.clip(0.5 - distance / px, 0.0, 1.0)


def _foreground(spec: SyntheticVideoSpec, n: int, X, Y, px: float):
    identity, (cx, cy, ang) = spec.identity, spec.motion[n]
    r = _GLYPH_RADIUS[identity.shape]
    dx = np.cos(ang) * (X - cx) + np.sin(ang) * (Y - cy)
    dy = -np.sin(ang) * (X - cx) + np.cos(ang) * (Y - cy)

    def blend(rgb, distance, color):
        alpha = _smooth_band(distance, px)
        return rgb * (1 - alpha) + np.asarray(color).reshape(3, 1, 1) * alpha

    base = colorsys.hsv_to_rgb(identity.hue, 0.80, 0.90)
    rgb = np.tile(np.asarray(base).reshape(3, 1, 1), (1, X.shape[0], X.shape[1]))
    if identity.ring:
        ring_d = np.abs(np.hypot(dx, dy) - 0.66 * r) - 0.12 * r
        rgb = blend(rgb, ring_d, colorsys.hsv_to_rgb((identity.hue + 0.5) % 1.0, 0.85, 0.95))
    if identity.stripe:
        rgb = blend(rgb, np.abs(dy) - 0.20 * r, colorsys.hsv_to_rgb(identity.hue, 0.55, 0.30))
    # orientation dot: identity-independent interior cue for the pose angle
    dot_d = np.hypot(dx - 0.40 * _x_extent(identity.shape, r), dy) - 0.18 * r
    rgb = blend(rgb, dot_d, colorsys.hsv_to_rgb((identity.hue + 0.5) % 1.0, 0.90, 0.45))
    # oriented shading along the local y axis: a glyph-wide pose cue that makes
    # the rotation angle observable at any resolution, for every identity
    shade = np.clip(dy / r, -1.0, 1.0)
    rgb = rgb * (1.0 - 0.11 * (shade + 1.0))

    mask = _silhouette_sdf(identity.shape, dx, dy, r) <= 0.0
    return rgb, mask


def _background(spec: SyntheticVideoSpec, X, Y, noise):
    tex, phase = spec.background.texture, spec.background.phase
    if tex == 0:
        g = 0.5 + 0.5 * np.sin(2 * np.pi * (1.5 * X + phase))
    elif tex == 1:
        g = 0.5 + 0.5 * np.sin(2 * np.pi * (2.5 * Y + phase))
    elif tex == 2:
        g = 0.5 + 0.5 * np.sin(2 * np.pi * (2.0 * np.hypot(X, Y) + phase))
    else:
        g = (0.5 + 0.5 * np.sin(2 * np.pi * (1.8 * (X + Y) + phase))) * (
            0.5 + 0.5 * np.sin(2 * np.pi * (1.8 * (X - Y) + phase))
        )
    lo, hi = (np.asarray(c).reshape(3, 1, 1) for c in _TEXTURE_PALETTE[tex])
    return np.clip(lo + (hi - lo) * g + noise, 0.0, 1.0)


def _quantize(img01):
    """Snap a [0,1] image onto the exact float values of its 8-bit encoding."""
    u8 = np.round(np.clip(img01, 0.0, 1.0) * 255.0).astype(np.uint8)
    return (u8.astype(np.float64) / 127.5 - 1.0).astype(np.float32), u8


def generate_video(spec: SyntheticVideoSpec, seed: int) -> SyntheticVideo:
    """Render all frames of a spec deterministically; seed only feeds micro-noise."""
    res = spec.resolution
    X, Y = _grid(res)
    px = 2.0 / res
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, 0.015, size=(3, res, res))
    bg = _background(spec, X, Y, noise)

    frames = np.empty((spec.N, 3, res, res), dtype=np.float32)
    masks = np.empty((spec.N, res, res), dtype=bool)
    for n in range(spec.N):
        fg, mask = _foreground(spec, n, X, Y, px)
        composite = np.where(mask[None], fg, bg)
        frames[n], _ = _quantize(composite)
        masks[n] = mask
    return SyntheticVideo(frames=frames, masks=masks, labels=spec, seed=seed)


# ---------------------------------------------------------------------------
# On-disk dataset: root manifest + one directory per video with PNG frames,
# PNG masks, and a labels.json carrying the exact generating spec.
# ---------------------------------------------------------------------------

_MANIFEST = "manifest.json"
_FORMAT_VERSION = 1


def _labels_dict(video: SyntheticVideo) -> dict:
    spec = video.labels
    return {
        "format_version": _FORMAT_VERSION,
        "seed": video.seed,
        "resolution": spec.resolution,
        "identity": {
            "shape": spec.identity.shape,
            "hue": spec.identity.hue,
            "ring": spec.identity.ring,
            "stripe": spec.identity.stripe,
        },
        "background": {
            "texture": spec.background.texture,
            "phase": spec.background.phase,
        },
        "motion": spec.motion.tolist(),
    }


def _spec_from_labels(data: dict, path: Path) -> tuple[SyntheticVideoSpec, int]:
    try:
        identity = IdentityFactors(
            shape=data["identity"]["shape"],
            hue=data["identity"]["hue"],
            ring=bool(data["identity"]["ring"]),
            stripe=bool(data["identity"]["stripe"]),
        )
        background = BackgroundFactors(
            texture=data["background"]["texture"],
            phase=data["background"]["phase"],
        )
        spec = SyntheticVideoSpec(
            identity=identity,
            background=background,
            motion=np.asarray(data["motion"], dtype=np.float64),
            resolution=data["resolution"],
        )
        return spec, int(data["seed"])
    except KeyError as exc:
        raise DataFormatError(f"{path}: missing label field {exc}") from exc
    except (ConfigError, TypeError, ValueError) as exc:
        raise DataFormatError(f"{path}: invalid label value ({exc})") from exc


def _frame_to_u8(frame: np.ndarray) -> np.ndarray:
    u8 = np.round((frame.astype(np.float64) + 1.0) * 127.5)
    return np.clip(u8, 0, 255).astype(np.uint8)


def _u8_to_frame(u8: np.ndarray) -> np.ndarray:
    return (u8.astype(np.float64) / 127.5 - 1.0).astype(np.float32)


def _atomic_json(path: Path, payload: dict):
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        json.dump(payload, fh, indent=1)
    os.replace(tmp, path)


def write_dataset(videos, path, split: str = "train", ids=None):
    """Write videos under ``path`` and register them in the root manifest.

    Appends to an existing manifest, so train/test splits can be written with
    two calls against the same root. Video directories appear atomically
    (populated under a temp name, then renamed).
    """
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {"format_version": _FORMAT_VERSION, "videos": []}
    if (root / _MANIFEST).exists():
        manifest = _read_manifest(root)
    taken = {entry["id"] for entry in manifest["videos"]}
    if ids is None:
        start = len(taken)
        ids = []
        while len(ids) < len(videos):
            candidate = f"vid_{start:04d}"
            if candidate not in taken:
                ids.append(candidate)
            start += 1
    elif len(ids) != len(videos):
        raise ConfigError("ids must match videos one-to-one")

    for vid, video in zip(ids, videos):
        tmp = Path(tempfile.mkdtemp(dir=root, prefix=f".{vid}."))
        try:
            for n in range(video.frames.shape[0]):
                rgb = _frame_to_u8(video.frames[n]).transpose(1, 2, 0)
                Image.fromarray(rgb, mode="RGB").save(tmp / f"frame_{n:04d}.png")
                mask_u8 = (video.masks[n].astype(np.uint8)) * 255
                Image.fromarray(mask_u8, mode="L").save(tmp / f"mask_{n:04d}.png")
            with open(tmp / "labels.json", "w") as fh:
                json.dump(_labels_dict(video), fh, indent=1)
            os.chmod(tmp, 0o755)
            target = root / vid
            if target.exists():
                shutil.rmtree(target)
            os.replace(tmp, target)
        except BaseException:
            shutil.rmtree(tmp, ignore_errors=True)
            raise
        manifest["videos"].append({"id": vid, "split": split})
    _atomic_json(root / _MANIFEST, manifest)
    return ids


def _read_manifest(root: Path) -> dict:
    path = root / _MANIFEST
    if not path.exists():
        raise DataFormatError(f"{path}: manifest not found")
    try:
        with open(path) as fh:
            manifest = json.load(fh)
        for entry in manifest["videos"]:
            if "id" not in entry or "split" not in entry:
                raise KeyError("video entries need 'id' and 'split'")
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataFormatError(f"{path}: malformed manifest ({exc})") from exc
    return manifest


def _read_image(path: Path, mode: str) -> np.ndarray:
    try:
        with Image.open(path) as img:
            if img.mode != mode:
                raise DataFormatError(f"{path}: expected mode {mode}, got {img.mode}")
            return np.asarray(img)
    except FileNotFoundError as exc:
        raise DataFormatError(f"{path}: frame file missing") from exc
    except OSError as exc:
        raise DataFormatError(f"{path}: unreadable image ({exc})") from exc


def read_dataset(path, split: str | None = None):
    """Load videos listed in the manifest (optionally one split), bit-exactly."""
    root = Path(path)
    manifest = _read_manifest(root)
    videos = []
    for entry in manifest["videos"]:
        if split is not None and entry["split"] != split:
            continue
        vdir = root / entry["id"]
        labels_path = vdir / "labels.json"
        try:
            with open(labels_path) as fh:
                data = json.load(fh)
        except FileNotFoundError as exc:
            raise DataFormatError(f"{labels_path}: label file missing") from exc
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{labels_path}: malformed JSON ({exc})") from exc
        spec, seed = _spec_from_labels(data, labels_path)

        res = spec.resolution
        frames = np.empty((spec.N, 3, res, res), dtype=np.float32)
        masks = np.empty((spec.N, res, res), dtype=bool)
        for n in range(spec.N):
            rgb = _read_image(vdir / f"frame_{n:04d}.png", "RGB")
            if rgb.shape != (res, res, 3):
                raise DataFormatError(
                    f"{vdir / f'frame_{n:04d}.png'}: shape {rgb.shape} does not match "
                    f"labels.json resolution {res}"
                )
            frames[n] = _u8_to_frame(rgb.transpose(2, 0, 1))
            m = _read_image(vdir / f"mask_{n:04d}.png", "L")
            if m.shape != (res, res):
                raise DataFormatError(f"{vdir / f'mask_{n:04d}.png'}: bad shape {m.shape}")
            masks[n] = m > 127
        videos.append(SyntheticVideo(frames=frames, masks=masks, labels=spec, seed=seed))
    return videos
