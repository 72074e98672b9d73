"""Scikit-learn style wrapper around the full train/encode/decode workflow.

``fit`` pretrains (or reuses) the frozen encoders and trains the noise
estimator; ``transform`` maps videos to latent bundles; ``inverse_transform``
decodes bundles back to frames. Hyperparameters follow the estimator
convention (constructor args only), so ``get_params``/``set_params``/``clone``
work as usual.
"""

from __future__ import annotations

import tempfile

import numpy as np
from sklearn.base import BaseEstimator

from .nets import DvaModel, EstimatorConfig
from .pipeline import decode_video, encode_video, per_frame_mse
from .training import DvaSystem, TrainConfig, train

__all__ = ["DiffusionVideoAutoencoder"]


class DiffusionVideoAutoencoder(BaseEstimator):
    """Video autoencoder with one editable identity latent per video.

    Parameters mirror the desk-scale recipe. ``encoders`` optionally injects
    pretrained ``(identity_encoder, landmark_encoder)`` to skip their
    pretraining (they are frozen either way).
    """

    def __init__(self, resolution=32, base_channels=32, channel_mult=(1, 2, 2),
                 z_face_dim=64, groups=32, steps=3000, lr=1e-4, use_reg=True,
                 batch_videos=4, frames_per_video=4, s_encode=20, seed=0,
                 out_dir=None, encoders=None):
        self.resolution = resolution
        self.base_channels = base_channels
        self.channel_mult = channel_mult
        self.z_face_dim = z_face_dim
        self.groups = groups
        self.steps = steps
        self.lr = lr
        self.use_reg = use_reg
        self.batch_videos = batch_videos
        self.frames_per_video = frames_per_video
        self.s_encode = s_encode
        self.seed = seed
        self.out_dir = out_dir
        self.encoders = encoders

    def _build_system(self) -> DvaSystem:
        if self.encoders is not None:
            id_enc, lnd_enc = self.encoders
        else:
            from .encoders import pretrain_identity_encoder, pretrain_landmark_encoder

            id_enc = pretrain_identity_encoder(resolution=self.resolution, seed=self.seed)
            lnd_enc = pretrain_landmark_encoder(resolution=self.resolution, seed=self.seed + 1)
        cfg = EstimatorConfig(
            resolution=self.resolution, base_channels=self.base_channels,
            channel_mult=tuple(self.channel_mult), z_face_dim=self.z_face_dim,
            groups=self.groups, d_id=id_enc.d_id, d_lnd=lnd_enc.d_lnd,
        )
        return DvaSystem(DvaModel(cfg), id_enc, lnd_enc)

    def fit(self, X, y=None):
        """Train on a list of rendered videos (frames + masks)."""
        system = self._build_system()
        out_dir = self.out_dir or tempfile.mkdtemp(prefix="dva-fit-")
        cfg = TrainConfig(
            steps=self.steps, lr=self.lr, use_reg=self.use_reg, seed=self.seed,
            batch_videos=self.batch_videos, frames_per_video=self.frames_per_video,
            out_dir=str(out_dir),
        )
        self.checkpoint_path_ = train(system, list(X), cfg)
        self.system_ = system
        return self

    def _frames(self, video):
        return video.frames if hasattr(video, "frames") else np.asarray(video)

    def transform(self, X):
        """Encode each video into its latent bundle."""
        self._check_fitted()
        return [encode_video(self.system_, self._frames(v), S=self.s_encode) for v in X]

    def inverse_transform(self, bundles):
        """Decode latent bundles back to frame arrays."""
        self._check_fitted()
        return [decode_video(self.system_, b).numpy() for b in bundles]

    def score(self, X, y=None) -> float:
        """Negative mean per-frame reconstruction MSE (higher is better)."""
        self._check_fitted()
        errors = [
            per_frame_mse(decoded, self._frames(v)).mean()
            for v, decoded in zip(X, self.inverse_transform(self.transform(X)))
        ]
        return -float(np.mean(errors))

    def _check_fitted(self):
        if not hasattr(self, "system_"):
            raise RuntimeError("this estimator is not fitted yet; call fit first")
