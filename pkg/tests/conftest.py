"""Shared fixtures: frozen encoders and desk-scale trained systems.

Pretraining and training are deterministic but take minutes to hours, so
session fixtures cache the trained weights under ``tests/_artifacts``
(checkpoint format) keyed by the recipe. Delete that directory to force a
full retrain; the assertions downstream are identical either way.
"""

import tempfile
from pathlib import Path

import numpy as np
import pytest
import torch

from dva.checkpoint import load_checkpoint, save_checkpoint
from dva.encoders import (
    IdentityEncoder,
    LandmarkEncoder,
    freeze,
    pretrain_identity_encoder,
    pretrain_landmark_encoder,
)
from dva.nets import DvaModel, EstimatorConfig
from dva.synthdata import generate_video, sample_video_spec
from dva.training import DvaSystem, TrainConfig, load_system, save_system, train

ARTIFACTS = Path(__file__).resolve().parent / "_artifacts"

# Desk-scale recipe shared by the acceptance criteria: one fixed dataset,
# one model seed, one training budget for both regularization arms. Training
# runs in stages (fresh optimizer and sampling stream per stage) so the
# cached checkpoints reproduce exactly from the public train() API.
DESK_RESOLUTION = 32
DESK_TRAIN_VIDEOS = 48
DESK_TEST_VIDEOS = 10
DESK_FRAMES = 8
DESK_TRAIN_DATA_SEED = 101
DESK_TEST_DATA_SEED = 202
DESK_MODEL_SEED = 7
DESK_TRAIN_STAGES = ((4000, 0), (11000, 1))  # (steps, seed) per stage
DESK_TRAIN_STEPS = sum(steps for steps, _ in DESK_TRAIN_STAGES)


def cached_module(name: str, build, train):
    """Load ``name`` from the artifact cache, or train and cache it."""
    path = ARTIFACTS / f"{name}.ckpt"
    if path.exists():
        module = build()
        load_checkpoint(path, module)
        return freeze(module)
    module = train()
    ARTIFACTS.mkdir(exist_ok=True)
    save_checkpoint(path, module, config={"fixture": name}, step=0)
    return module


@pytest.fixture(scope="session")
def id_encoder():
    return cached_module("id_enc_d32_r32", IdentityEncoder, pretrain_identity_encoder)


@pytest.fixture(scope="session")
def lnd_encoder():
    return cached_module("lnd_enc_d8_r32", LandmarkEncoder, pretrain_landmark_encoder)


def build_video_set(n: int, frames: int, seed: int, resolution: int = DESK_RESOLUTION):
    """Deterministic list of synthetic videos with ground-truth factors."""
    rng = np.random.default_rng(seed)
    return [
        generate_video(sample_video_spec(rng, n_frames=frames, resolution=resolution),
                       seed=int(rng.integers(2**31)))
        for _ in range(n)
    ]


@pytest.fixture(scope="session")
def desk_train_videos():
    return build_video_set(DESK_TRAIN_VIDEOS, DESK_FRAMES, DESK_TRAIN_DATA_SEED)


@pytest.fixture(scope="session")
def desk_test_videos():
    return build_video_set(DESK_TEST_VIDEOS, DESK_FRAMES, DESK_TEST_DATA_SEED)


def _desk_system(name: str, use_reg: bool, id_enc, lnd_enc, videos) -> DvaSystem:
    path = ARTIFACTS / f"{name}.ckpt"
    if path.exists():
        system, _, _ = load_system(path)
        return system
    torch.manual_seed(DESK_MODEL_SEED)
    cfg = EstimatorConfig(resolution=DESK_RESOLUTION, d_id=id_enc.d_id,
                          d_lnd=lnd_enc.d_lnd)
    system = DvaSystem(DvaModel(cfg), id_enc, lnd_enc)
    with tempfile.TemporaryDirectory(prefix=f"{name}-train-") as scratch:
        for steps, seed in DESK_TRAIN_STAGES:
            train(system, videos, TrainConfig(
                steps=steps, seed=seed, use_reg=use_reg, out_dir=scratch,
            ))
    ARTIFACTS.mkdir(exist_ok=True)
    save_system(path, system, step=DESK_TRAIN_STEPS)
    return system


@pytest.fixture(scope="session")
def desk_system_reg(id_encoder, lnd_encoder, desk_train_videos):
    """With-regularization arm of the desk recipe (trains on cache miss)."""
    return _desk_system("dva32_reg", True, id_encoder, lnd_encoder, desk_train_videos)


@pytest.fixture(scope="session")
def desk_system_noreg(id_encoder, lnd_encoder, desk_train_videos):
    """Identical budget and seeds, regularization disabled."""
    return _desk_system("dva32_noreg", False, id_encoder, lnd_encoder, desk_train_videos)
