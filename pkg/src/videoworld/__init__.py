"""Action-controllable video world model built from three pieces: a VQ video
tokenizer, an unsupervised latent action model, and a masked-token dynamics
model, plus the evaluation harness and an interactive rollout server."""

from .data import (
    SyntheticSceneConfig,
    VideoClip,
    generate_synthetic_clip,
    preprocess_clip,
)
from .dynamics import (
    DynamicsConfig,
    DynamicsModel,
    desk_dynamics_config,
    dynamics_train_loss,
    iterative_decode,
    mask_schedule,
    rollout,
)
from .lam import LamConfig, LatentActionModel, desk_lam_config, sample_random_action
from .metrics import (
    DownsampleFlattenExtractor,
    EvalReport,
    delta_psnr,
    frechet_distance,
    fvd_eval,
    psnr,
    ssim,
)
from .st_transformer import STBlockConfig, STStack
from .tokenizer import TokenizerConfig, VideoTokenizer, desk_tokenizer_config
from .vq import QuantizationResult, VectorQuantizer, commitment_loss

__version__ = "0.1.0"

__all__ = [
    "DownsampleFlattenExtractor",
    "DynamicsConfig",
    "DynamicsModel",
    "EvalReport",
    "LamConfig",
    "LatentActionModel",
    "QuantizationResult",
    "STBlockConfig",
    "STStack",
    "SyntheticSceneConfig",
    "TokenizerConfig",
    "VectorQuantizer",
    "VideoClip",
    "VideoTokenizer",
    "commitment_loss",
    "delta_psnr",
    "desk_dynamics_config",
    "desk_lam_config",
    "desk_tokenizer_config",
    "dynamics_train_loss",
    "frechet_distance",
    "fvd_eval",
    "generate_synthetic_clip",
    "iterative_decode",
    "mask_schedule",
    "preprocess_clip",
    "psnr",
    "rollout",
    "sample_random_action",
    "ssim",
]
