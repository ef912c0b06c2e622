"""Haar-tSVD image denoising with an adaptive noise-level variant."""

from .images import read_image, write_image
from .metrics import psnr, ssim
from .noise import AdaptiveParams, estimate_sigma, group_rank_a, mad_sigma
from .patches import ConfigError, MatchConfig, PatchGroup, search_similar
from .pipeline import DenoiseConfig, DenoiseResult, denoise, denoise_adaptive, estimate_noise_map, filter_with_sigma_map
from .rng import add_awgn
from .tensor import haar_matrix, tproduct, tsvd
from .transform import (
    CorruptBasesError,
    GlobalBases,
    RefinerError,
    compute_tau,
    forward,
    hard_threshold,
    inverse,
    learn_global_bases,
    load_bases,
    save_bases,
)

__all__ = [
    "AdaptiveParams",
    "ConfigError",
    "CorruptBasesError",
    "DenoiseConfig",
    "DenoiseResult",
    "GlobalBases",
    "MatchConfig",
    "PatchGroup",
    "RefinerError",
    "add_awgn",
    "compute_tau",
    "denoise",
    "denoise_adaptive",
    "estimate_noise_map",
    "estimate_sigma",
    "filter_with_sigma_map",
    "forward",
    "group_rank_a",
    "haar_matrix",
    "hard_threshold",
    "inverse",
    "learn_global_bases",
    "load_bases",
    "mad_sigma",
    "psnr",
    "read_image",
    "save_bases",
    "search_similar",
    "ssim",
    "tproduct",
    "tsvd",
    "write_image",
]
