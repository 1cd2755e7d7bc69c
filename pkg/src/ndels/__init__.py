"""Nighttime dehazing, low-light enhancement, and light suppression.

End-to-end pipeline: synthetic triplet generation, a low-light enhancement
network, a two-branch dehazing generator with adversarial training, extended
multiscale retinex post-processing, and a PSNR/SSIM evaluation harness.
"""

from .checkpoint import NetworkParams, load_params, save_params
from .dehaze import DhmParams, dhm_forward, dhm_init, disc_forward, disc_init
from .errors import ConfigError, DataError, NumericalError
from .image import load_image, resize, save_image
from .losses import LossWeights
from .lowlight import llm_forward, llm_init
from .metrics import QualityReport, ms_ssim, psnr, ssim
from .retinex import RetinexConfig, blend, contrast_enhance, emsr_apply, ndels_infer
from .synth import (
    HazeParams,
    ImageTriplet,
    add_haze,
    augment,
    composite_pair,
    enhance_bright,
    make_triplet,
)
from .train import TrainConfig, evaluate, lr_at, train_dhm, train_llm

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "DhmParams",
    "HazeParams",
    "ImageTriplet",
    "LossWeights",
    "NetworkParams",
    "NumericalError",
    "QualityReport",
    "RetinexConfig",
    "TrainConfig",
    "add_haze",
    "augment",
    "blend",
    "composite_pair",
    "contrast_enhance",
    "dhm_forward",
    "dhm_init",
    "disc_forward",
    "disc_init",
    "emsr_apply",
    "enhance_bright",
    "evaluate",
    "llm_forward",
    "llm_init",
    "load_image",
    "load_params",
    "lr_at",
    "make_triplet",
    "ms_ssim",
    "ndels_infer",
    "psnr",
    "resize",
    "save_image",
    "save_params",
    "ssim",
    "train_dhm",
    "train_llm",
]
