"""Disentangled video autoencoding with a conditional deterministic diffusion sampler."""

from .errors import (
    ConfigError,
    DataFormatError,
    DvaError,
    FeatureUnavailable,
    TrainingDiverged,
)
from .schedule import NoiseSchedule, make_schedule, predict_x0, q_sample
from .ddim import (
    StepSchedule,
    forward_step,
    invert,
    make_step_schedule,
    reverse_step,
    sample,
)
from .synthdata import (
    SyntheticVideo,
    SyntheticVideoSpec,
    all_identities,
    generate_video,
    read_dataset,
    sample_video_spec,
    write_dataset,
)
from .encoders import (
    EPSILON_MOTION,
    IdentityEncoder,
    LandmarkEncoder,
    parameter_checksum,
    pretrain_identity_encoder,
    pretrain_landmark_encoder,
)
from .nets import DvaModel, EstimatorConfig
from .checkpoint import load_checkpoint, read_header, save_checkpoint
from .training import (
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
from .latent_edit import (
    EditDirection,
    EmbedEditConfig,
    attribute_prototypes,
    directional_embed_loss,
    edit_identity,
    fit_attribute_classifier,
    fit_synthetic_attribute_direction,
    load_direction,
    optimize_identity,
    save_direction,
)
from .pipeline import (
    VideoLatentBundle,
    decode_video,
    decode_with_random_noise,
    encode_video,
    load_bundle,
    paste_back,
    per_frame_mse,
    save_bundle,
    swap_features,
)
from .metrics import ConsistencyReport, consistency_report, ms_ssim, mse, ssim, tg_id, tl_id
from .autoencoder import DiffusionVideoAutoencoder

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataFormatError",
    "DvaError",
    "FeatureUnavailable",
    "TrainingDiverged",
    "NoiseSchedule",
    "make_schedule",
    "predict_x0",
    "q_sample",
    "StepSchedule",
    "forward_step",
    "invert",
    "make_step_schedule",
    "reverse_step",
    "sample",
    "SyntheticVideo",
    "SyntheticVideoSpec",
    "all_identities",
    "generate_video",
    "read_dataset",
    "sample_video_spec",
    "write_dataset",
    "EPSILON_MOTION",
    "IdentityEncoder",
    "LandmarkEncoder",
    "parameter_checksum",
    "pretrain_identity_encoder",
    "pretrain_landmark_encoder",
    "DvaModel",
    "EstimatorConfig",
    "load_checkpoint",
    "read_header",
    "save_checkpoint",
    "DvaSystem",
    "TrainBatch",
    "TrainConfig",
    "load_system",
    "loss_dva",
    "loss_reg",
    "loss_simple",
    "make_train_batch",
    "masked_x0_variance",
    "save_system",
    "train",
    "EditDirection",
    "EmbedEditConfig",
    "attribute_prototypes",
    "directional_embed_loss",
    "edit_identity",
    "fit_attribute_classifier",
    "fit_synthetic_attribute_direction",
    "load_direction",
    "optimize_identity",
    "save_direction",
    "VideoLatentBundle",
    "decode_video",
    "decode_with_random_noise",
    "encode_video",
    "load_bundle",
    "paste_back",
    "per_frame_mse",
    "save_bundle",
    "swap_features",
    "ConsistencyReport",
    "consistency_report",
    "ms_ssim",
    "mse",
    "ssim",
    "tg_id",
    "tl_id",
    "DiffusionVideoAutoencoder",
    "__version__",
]
