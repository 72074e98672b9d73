"""Command-line entry point for the full workflow.

Every command resolves its parameters from defaults, then an optional flat
``key=value`` config file, then flags (flags win), and writes the resolved
snapshot next to its outputs, so a run is reproducible from the snapshot
alone. Exit codes: 0 success, 2 usage error, 3 invalid config or data.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from . import metrics as metrics_mod
from .checkpoint import load_checkpoint
from .encoders import (
    IdentityEncoder,
    LandmarkEncoder,
    pretrain_identity_encoder,
    pretrain_landmark_encoder,
)
from .errors import ConfigError, DataFormatError, TrainingDiverged
from .latent_edit import (
    EmbedEditConfig,
    attribute_prototypes,
    edit_identity,
    fit_synthetic_attribute_direction,
    optimize_identity,
    save_direction,
)
from .nets import DvaModel, EstimatorConfig
from .pipeline import (
    decode_video,
    decode_with_random_noise,
    encode_video,
    load_bundle,
    paste_back,
    per_frame_mse,
    save_bundle,
    swap_features,
)
from .synthdata import generate_video, read_dataset, sample_video_spec, write_dataset
from .training import (
    DvaSystem,
    TrainConfig,
    load_system,
    make_schedule,
    masked_x0_variance,
    train,
)

__all__ = ["run", "main"]


def _parse_bool(text: str) -> bool:
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_ints(text: str) -> tuple:
    return tuple(int(v) for v in str(text).split(","))


# Per-command parameter keys: name -> (parser, default, help). Flags mirror
# these keys one-to-one, and config files use the same names.
COMMANDS = {
    "gen-data": {
        "data.videos": (int, 64, "number of videos to render"),
        "data.frames": (int, 8, "frames per video"),
        "data.resolution": (int, 32, "square frame size in pixels"),
        "data.seed": (int, 1, "generator seed; same seed, same dataset"),
        "data.split": (str, "train", "manifest split label"),
    },
    "train": {
        "model.base_channels": (int, 32, "UNet base channel width"),
        "model.channel_mult": (_parse_ints, (1, 2, 2), "per-level channel multipliers"),
        "model.z_face_dim": (int, 64, "fused condition dimension"),
        "model.resolution": (int, 32, "frame size the model expects"),
        "model.groups": (int, 32, "group-norm group count; must divide the channel widths"),
        "train.steps": (int, 3000, "optimization steps"),
        "train.batch_videos": (int, 4, "videos per batch"),
        "train.frames_per_video": (int, 4, "frames sampled per video"),
        "train.lr": (float, 1e-4, "Adam learning rate"),
        "train.use_reg": (_parse_bool, True, "train with the background-exclusion loss"),
        "train.seed": (int, 0, "training seed"),
        "train.checkpoint_every": (int, 1000, "checkpoint interval in steps"),
        "enc.id_path": (str, "", "pretrained identity-encoder checkpoint (else pretrain)"),
        "enc.lnd_path": (str, "", "pretrained landmark-encoder checkpoint (else pretrain)"),
        "enc.seed": (int, 0, "encoder pretraining seed"),
    },
    "encode": {
        "encode.S": (int, 100, "inversion step count"),
    },
    "reconstruct": {
        "encode.S": (int, 100, "inversion/sampling step count"),
    },
    "edit-attr": {
        "edit.attr": (str, "ring", "binary attribute to edit (ring or stripe)"),
        "edit.s": (float, 1.0, "editing step size along the hyperplane normal"),
        "edit.fit_renders": (int, 3, "renders per identity when fitting the direction"),
        "edit.seed": (int, 0, "direction-fitting seed"),
    },
    "edit-embed": {
        "edit.attr": (str, "ring", "target attribute for the prototype direction"),
        "encode.S": (int, 100, "bundle inversion step count"),
        "embed.S": (int, 5, "coarse levels used by the optimization"),
        "embed.steps": (int, 200, "optimization steps"),
        "embed.lr": (float, 2e-3, "optimizer learning rate"),
        "embed.w_clip": (float, 3.0, "directional embedding loss weight"),
        "embed.w_id": (float, 1.0, "identity-preservation loss weight"),
        "embed.w_l1": (float, 1.0, "masked L1 loss weight"),
        "embed.mode": (str, "intermediate-noisy", "loss mode (or estimated-x0)"),
        "embed.step_scale": (float, 1.0, "multiplier on the learned identity delta"),
        "embed.seed": (int, 0, "prototype sampling seed"),
    },
    "swap": {
        "swap.which": (str, "identity", "component to take from B: identity|motion|background"),
    },
    "random-noise": {
        "noise.seed": (int, 0, "seed for the fresh noise maps"),
    },
    "metrics": {},
    "ablate-reg": {
        "model.base_channels": (int, 32, "UNet base channel width"),
        "model.channel_mult": (_parse_ints, (1, 2, 2), "per-level channel multipliers"),
        "model.z_face_dim": (int, 64, "fused condition dimension"),
        "model.resolution": (int, 32, "frame size the model expects"),
        "model.groups": (int, 32, "group-norm group count; must divide the channel widths"),
        "train.steps": (int, 3000, "optimization steps per arm"),
        "train.batch_videos": (int, 4, "videos per batch"),
        "train.frames_per_video": (int, 4, "frames sampled per video"),
        "train.lr": (float, 1e-4, "Adam learning rate"),
        "train.seed": (int, 0, "training seed, shared by both arms"),
        "train.checkpoint_every": (int, 1000, "checkpoint interval in steps"),
        "enc.id_path": (str, "", "pretrained identity-encoder checkpoint (else pretrain)"),
        "enc.lnd_path": (str, "", "pretrained landmark-encoder checkpoint (else pretrain)"),
        "enc.seed": (int, 0, "encoder pretraining seed"),
        "ablate.t": (int, 500, "diffusion step at which variance is probed"),
        "ablate.K": (int, 8, "noise draws per variance estimate"),
        "ablate.videos": (int, 4, "held-out videos probed"),
    },
}

_COMMAND_HELP = {
    "gen-data": "render a synthetic video dataset with a manifest",
    "train": "fit the conditional estimator on a dataset",
    "encode": "invert a video into identity/motion/noise latents",
    "reconstruct": "encode a video and decode it back to frames",
    "edit-attr": "shift a bundle's identity along a fitted attribute direction",
    "edit-embed": "optimize an identity delta against embedding prototypes",
    "swap": "decode bundle A with one component taken from bundle B",
    "random-noise": "decode a bundle from fresh noise maps",
    "metrics": "score an edited video against its original",
    "ablate-reg": "train twin arms and compare masked denoiser variance",
}

_PATH_FLAGS = {
    "gen-data": ["out"],
    "train": ["data", "out"],
    "encode": ["checkpoint", "video", "out"],
    "reconstruct": ["checkpoint", "video", "out"],
    "edit-attr": ["checkpoint", "bundle", "video", "out"],
    "edit-embed": ["checkpoint", "video", "out"],
    "swap": ["checkpoint", "bundle-a", "bundle-b", "out"],
    "random-noise": ["checkpoint", "bundle", "out"],
    "metrics": ["checkpoint", "original", "edited", "out"],
    "ablate-reg": ["data", "out"],
}


@dataclass
class RunConfig:
    """Fully resolved parameters of one command invocation."""

    command: str
    values: dict
    paths: dict

    def __getitem__(self, key):
        return self.values[key]

    def write_snapshot(self, out_dir: Path):
        out_dir.mkdir(parents=True, exist_ok=True)
        lines = [f"command={self.command}"]
        lines += [f"{k}={Path(v).resolve()}" for k, v in sorted(self.paths.items()) if v]
        for key, value in sorted(self.values.items()):
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{key}={value}")
        (out_dir / "config_snapshot.txt").write_text("\n".join(lines) + "\n")


def _read_config_file(path: str) -> dict:
    values = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}: config lines must be key=value, got {raw!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dva", description="conditional video autoencoder workflows"
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for command, keys in COMMANDS.items():
        p = sub.add_parser(command, help=_COMMAND_HELP[command])
        for flag in _PATH_FLAGS[command]:
            required = not (flag == "data" and os.environ.get("DVA_DATA_ROOT"))
            p.add_argument(f"--{flag}", required=required, default=None)
        p.add_argument("--config", default=None, help="flat key=value config file")
        for key, (caster, default, help_text) in keys.items():
            p.add_argument(f"--{key}", dest=key, default=None, metavar="V",
                           help=f"{help_text} (default {default})")
    return parser


def _resolve(args, command: str) -> RunConfig:
    file_values = _read_config_file(args.config) if args.config else {}
    known = COMMANDS[command]
    for key in file_values:
        if key not in known:
            raise ConfigError(f"unknown config key {key!r} for {command}")
    values = {}
    for key, (caster, default, _) in known.items():
        raw = getattr(args, key)
        if raw is None:
            raw = file_values.get(key)
        try:
            values[key] = default if raw is None else caster(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from exc
    paths = {}
    for flag in _PATH_FLAGS[command]:
        value = getattr(args, flag.replace("-", "_"))
        if value is None and flag == "data":
            value = os.environ.get("DVA_DATA_ROOT")
        paths[flag] = value
    return RunConfig(command=command, values=values, paths=paths)


# ------------------------------------------------------------ frame I/O


def write_frames_dir(path, frames, masks=None) -> Path:
    """PNG frame directory in the dataset's per-video layout."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    frames = np.asarray(frames, dtype=np.float32)
    for n in range(frames.shape[0]):
        u8 = np.clip(np.round((frames[n].astype(np.float64) + 1.0) * 127.5), 0, 255)
        rgb = u8.astype(np.uint8).transpose(1, 2, 0)
        Image.fromarray(rgb, mode="RGB").save(root / f"frame_{n:04d}.png")
        if masks is not None:
            m = (np.asarray(masks[n]) > 0.5).astype(np.uint8) * 255
            Image.fromarray(m, mode="L").save(root / f"mask_{n:04d}.png")
    return root


def read_frames_dir(path):
    """Load a PNG frame directory; returns (frames, masks-or-None)."""
    root = Path(path)
    frame_paths = sorted(root.glob("frame_*.png"))
    if not frame_paths:
        raise DataFormatError(f"{root}: no frame_*.png files found")
    frames, masks = [], []
    for fp in frame_paths:
        with Image.open(fp) as img:
            rgb = np.asarray(img.convert("RGB"))
        frames.append((rgb.astype(np.float64) / 127.5 - 1.0).astype(np.float32))
        mp = root / fp.name.replace("frame_", "mask_")
        if mp.exists():
            with Image.open(mp) as img:
                masks.append(np.asarray(img.convert("L")) > 127)
    frames = np.stack(frames).transpose(0, 3, 1, 2)
    if masks and len(masks) != len(frames):
        raise DataFormatError(f"{root}: {len(masks)} masks for {len(frames)} frames")
    return frames, (np.stack(masks) if masks else None)


def _write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


# ------------------------------------------------------------- commands


def _cmd_gen_data(cfg: RunConfig) -> int:
    rng = np.random.default_rng(cfg["data.seed"])
    videos = []
    for _ in range(cfg["data.videos"]):
        spec = sample_video_spec(rng, n_frames=cfg["data.frames"],
                                 resolution=cfg["data.resolution"])
        videos.append(generate_video(spec, seed=int(rng.integers(2**31))))
    out = Path(cfg.paths["out"])
    ids = write_dataset(videos, out, split=cfg["data.split"])
    cfg.write_snapshot(out)
    print(f"wrote {len(ids)} videos to {out} (split {cfg['data.split']})")
    return 0


def _load_encoders(cfg: RunConfig, resolution: int):
    if cfg["enc.id_path"]:
        id_enc = IdentityEncoder(resolution=resolution)
        load_checkpoint(cfg["enc.id_path"], id_enc)
        id_enc.eval().requires_grad_(False)
    else:
        id_enc = pretrain_identity_encoder(resolution=resolution, seed=cfg["enc.seed"])
    if cfg["enc.lnd_path"]:
        lnd_enc = LandmarkEncoder(resolution=resolution)
        load_checkpoint(cfg["enc.lnd_path"], lnd_enc)
        lnd_enc.eval().requires_grad_(False)
    else:
        lnd_enc = pretrain_landmark_encoder(resolution=resolution, seed=cfg["enc.seed"] + 1)
    return id_enc, lnd_enc


def _build_system(cfg: RunConfig) -> DvaSystem:
    id_enc, lnd_enc = _load_encoders(cfg, cfg["model.resolution"])
    model_cfg = EstimatorConfig(
        resolution=cfg["model.resolution"], base_channels=cfg["model.base_channels"],
        channel_mult=cfg["model.channel_mult"], z_face_dim=cfg["model.z_face_dim"],
        groups=cfg["model.groups"], d_id=id_enc.d_id, d_lnd=lnd_enc.d_lnd,
    )
    return DvaSystem(DvaModel(model_cfg), id_enc, lnd_enc)


def _train_config(cfg: RunConfig, out_dir, use_reg: bool) -> TrainConfig:
    return TrainConfig(
        steps=cfg["train.steps"], batch_videos=cfg["train.batch_videos"],
        frames_per_video=cfg["train.frames_per_video"], lr=cfg["train.lr"],
        use_reg=use_reg, seed=cfg["train.seed"],
        checkpoint_every=cfg["train.checkpoint_every"], out_dir=str(out_dir),
    )


def _cmd_train(cfg: RunConfig) -> int:
    videos = read_dataset(cfg.paths["data"], split="train")
    system = _build_system(cfg)
    out = Path(cfg.paths["out"])
    cfg.write_snapshot(out)
    ckpt = train(system, videos, _train_config(cfg, out, cfg["train.use_reg"]))
    print(f"trained {cfg['train.steps']} steps; checkpoint at {ckpt}")
    return 0


def _cmd_encode(cfg: RunConfig) -> int:
    system, _, _ = load_system(cfg.paths["checkpoint"])
    frames, _ = read_frames_dir(cfg.paths["video"])
    bundle = encode_video(system, frames, S=cfg["encode.S"])
    out = save_bundle(cfg.paths["out"], bundle)
    cfg.write_snapshot(out)
    print(f"encoded {bundle.n_frames} frames at S={cfg['encode.S']} into {out}")
    return 0


def _cmd_reconstruct(cfg: RunConfig) -> int:
    system, _, _ = load_system(cfg.paths["checkpoint"])
    frames, _ = read_frames_dir(cfg.paths["video"])
    bundle = encode_video(system, frames, S=cfg["encode.S"])
    decoded = decode_video(system, bundle)
    out = Path(cfg.paths["out"])
    write_frames_dir(out / "decoded", decoded.numpy())
    errors = per_frame_mse(decoded, frames)
    _write_csv(out / "reconstruction.csv", ["frame", "mse"],
               [(n, f"{e:.8f}") for n, e in enumerate(errors)])
    cfg.write_snapshot(out)
    print(f"reconstruction mse mean={errors.mean():.6f} max={errors.max():.6f} "
          f"at S={cfg['encode.S']}")
    return 0


def _emit_edited(cfg: RunConfig, system, original, masks, edited, out: Path, tag: str):
    """Shared tail of the editing commands: paste back, save, report."""
    pasted = paste_back(original, edited, masks) if masks is not None else edited
    write_frames_dir(out / tag, pasted.numpy() if torch.is_tensor(pasted) else pasted)
    report = metrics_mod.consistency_report(original, pasted, system.id_enc)
    report.write_csv(out / "consistency.csv")
    cfg.write_snapshot(out)
    print(report.summary())
    return pasted


def _cmd_edit_attr(cfg: RunConfig) -> int:
    system, _, _ = load_system(cfg.paths["checkpoint"])
    bundle = load_bundle(cfg.paths["bundle"])
    original, masks = read_frames_dir(cfg.paths["video"])
    direction = fit_synthetic_attribute_direction(
        system.id_enc, cfg["edit.attr"], renders_per_identity=cfg["edit.fit_renders"],
        s=cfg["edit.s"], seed=cfg["edit.seed"],
    )
    out = Path(cfg.paths["out"])
    save_direction(out / f"{cfg['edit.attr']}.dir", direction,
                   provenance=f"fit on synthetic grid, seed {cfg['edit.seed']}")
    z_edit = edit_identity(bundle.z_id_rep, direction, s=cfg["edit.s"])
    decoded = decode_video(system, bundle, z_id_override=z_edit)
    _emit_edited(cfg, system, original, masks, decoded, out, "edited")
    before = direction.predict_proba(bundle.z_id_rep)
    after = direction.predict_proba(z_edit)
    print(f"attribute {cfg['edit.attr']} probability {before:.4f} -> {after:.4f} "
          f"at s={cfg['edit.s']}")
    return 0


def _cmd_edit_embed(cfg: RunConfig) -> int:
    system, _, _ = load_system(cfg.paths["checkpoint"])
    original, masks = read_frames_dir(cfg.paths["video"])
    if masks is None:
        raise ConfigError("edit-embed needs mask_*.png files next to the frames")
    bundle = encode_video(system, original, S=cfg["encode.S"])
    proto_n, proto_t = attribute_prototypes(system.id_enc, cfg["edit.attr"],
                                            seed=cfg["embed.seed"])
    edit_cfg = EmbedEditConfig(
        S=cfg["embed.S"], steps=cfg["embed.steps"], lr=cfg["embed.lr"],
        w_clip=cfg["embed.w_clip"], w_id=cfg["embed.w_id"], w_l1=cfg["embed.w_l1"],
        mode=cfg["embed.mode"], proto_neutral=proto_n, proto_target=proto_t,
    )
    delta = optimize_identity(
        system, torch.from_numpy(original[0]), torch.from_numpy(masks[0].astype(np.float32)),
        bundle.z_id_rep, edit_cfg,
    )
    z_edit = F.normalize(bundle.z_id_rep + cfg["embed.step_scale"] * delta, dim=0)
    decoded = decode_video(system, bundle, z_id_override=z_edit)
    out = Path(cfg.paths["out"])
    _emit_edited(cfg, system, original, masks, decoded, out, "edited")
    print(f"identity delta norm {float(delta.norm()):.4f} after {cfg['embed.steps']} "
          f"steps in {cfg['embed.mode']} mode")
    return 0


def _cmd_swap(cfg: RunConfig) -> int:
    system, _, _ = load_system(cfg.paths["checkpoint"])
    bundle_a = load_bundle(cfg.paths["bundle-a"])
    bundle_b = load_bundle(cfg.paths["bundle-b"])
    frames = swap_features(system, bundle_a, bundle_b, cfg["swap.which"])
    out = Path(cfg.paths["out"])
    write_frames_dir(out / "swapped", frames.numpy())
    cfg.write_snapshot(out)
    print(f"decoded {frames.shape[0]} frames with {cfg['swap.which']} taken from B")
    return 0


def _cmd_random_noise(cfg: RunConfig) -> int:
    system, _, _ = load_system(cfg.paths["checkpoint"])
    bundle = load_bundle(cfg.paths["bundle"])
    frames = decode_with_random_noise(system, bundle, seed=cfg["noise.seed"])
    out = Path(cfg.paths["out"])
    write_frames_dir(out / "decoded", frames.numpy())
    cfg.write_snapshot(out)
    print(f"decoded {frames.shape[0]} frames from fresh noise (seed {cfg['noise.seed']})")
    return 0


def _cmd_metrics(cfg: RunConfig) -> int:
    system, _, _ = load_system(cfg.paths["checkpoint"])
    original, _ = read_frames_dir(cfg.paths["original"])
    edited, _ = read_frames_dir(cfg.paths["edited"])
    report = metrics_mod.consistency_report(original, edited, system.id_enc)
    scalars = [
        ("mse", metrics_mod.mse(original, edited)),
        ("ssim", metrics_mod.ssim(original, edited)),
        ("ms_ssim", metrics_mod.ms_ssim(original, edited)),
        ("tl_id", report.tl_id),
        ("tg_id", report.tg_id),
    ]
    out = Path(cfg.paths["out"])
    _write_csv(out / "metrics.csv", ["metric", "value"],
               [(k, f"{v:.6f}") for k, v in scalars])
    report.write_csv(out / "consistency.csv")
    cfg.write_snapshot(out)
    print(" ".join(f"{k}={v:.4f}" for k, v in scalars))
    return 0


def _variance_probe(system, videos, t: int, K: int):
    sched = make_schedule(system.cfg.T, system.cfg.beta_start, system.cfg.beta_end)
    rows = []
    for video in videos:
        frames = torch.from_numpy(video.frames)
        masks = torch.from_numpy(video.masks).float()
        z_id, z_lnd = system.encode_frames(frames)
        z_rep = F.normalize(z_id.mean(dim=0), dim=0)
        with torch.no_grad():
            z_face = system.model.fuse(z_rep.expand(frames.shape[0], -1), z_lnd)
        rows.append(masked_x0_variance(system.model, sched, frames, masks, z_face,
                                       t=t, K=K, seed=0))
    return rows


def _cmd_ablate_reg(cfg: RunConfig) -> int:
    videos = read_dataset(cfg.paths["data"], split="train")
    try:
        held = read_dataset(cfg.paths["data"], split="test")
    except DataFormatError:
        held = []
    held = (held or videos)[: cfg["ablate.videos"]]
    out = Path(cfg.paths["out"])
    cfg.write_snapshot(out)

    id_enc, lnd_enc = _load_encoders(cfg, cfg["model.resolution"])
    results = {}
    for arm, use_reg in (("with_reg", True), ("without_reg", False)):
        model_cfg = EstimatorConfig(
            resolution=cfg["model.resolution"], base_channels=cfg["model.base_channels"],
            channel_mult=cfg["model.channel_mult"], z_face_dim=cfg["model.z_face_dim"],
            groups=cfg["model.groups"], d_id=id_enc.d_id, d_lnd=lnd_enc.d_lnd,
        )
        torch.manual_seed(cfg["train.seed"])
        system = DvaSystem(DvaModel(model_cfg), id_enc, lnd_enc)
        train(system, videos, _train_config(cfg, out / arm, use_reg))
        results[arm] = _variance_probe(system, held, cfg["ablate.t"], cfg["ablate.K"])

    rows = [
        (n, f"{w:.8f}", f"{wo:.8f}", f"{w / wo:.4f}" if wo > 0 else "inf")
        for n, (w, wo) in enumerate(zip(results["with_reg"], results["without_reg"]))
    ]
    _write_csv(out / "variance.csv", ["video", "with_reg", "without_reg", "ratio"], rows)
    mean_w = float(np.mean(results["with_reg"]))
    mean_wo = float(np.mean(results["without_reg"]))
    ratio = mean_w / mean_wo if mean_wo > 0 else float("inf")
    print(f"masked x0 variance: with_reg={mean_w:.6f} without_reg={mean_wo:.6f} "
          f"ratio={ratio:.4f}")
    return 0


_HANDLERS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "encode": _cmd_encode,
    "reconstruct": _cmd_reconstruct,
    "edit-attr": _cmd_edit_attr,
    "edit-embed": _cmd_edit_embed,
    "swap": _cmd_swap,
    "random-noise": _cmd_random_noise,
    "metrics": _cmd_metrics,
    "ablate-reg": _cmd_ablate_reg,
}


def run(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = _resolve(args, args.command)
        return _HANDLERS[args.command](cfg)
    except (ConfigError, DataFormatError, TrainingDiverged, ValueError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def main():  # console-script entry point
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
