"""depthbench: sparse depth benchmark synthesis, completion, and evaluation."""

from ._version import __version__
from .completion import (AlignmentParams, CompletionConfig, complete_idw,
                         complete_nearest, complete_with_guidance,
                         fit_scale_shift, fit_scale_shift_robust, iterate)
from .config import (ConfigError, DatasetConfig, ExperimentConfig,
                     apply_overrides, build_config, load_config)
from .depth_core import (CameraIntrinsics, DepthFormatError, DepthMap,
                         GrayImage, derive_seed, load_depth, make_rng,
                         save_depth, to_gray, unproject)
from .metrics import (DEFAULT_TAUS, MetricReport, aggregate, eval_pair,
                      virtual_normal_divergence)
from .protocols import (ProtocolConfig, apply_protocol, gen_noisy,
                        gen_short_range, gen_sparse_tof, gen_unpaired_fov)
from .sparsity import (Keypoint, SparsitySpec, detect_fast, inject_outliers,
                       mask_distance, mask_polygon, sample_features,
                       sample_uniform, synthesize)

__all__ = [
    "__version__",
    "AlignmentParams", "CameraIntrinsics", "CompletionConfig", "ConfigError",
    "DEFAULT_TAUS", "DatasetConfig", "DepthFormatError", "DepthMap",
    "ExperimentConfig", "GrayImage", "Keypoint", "MetricReport",
    "ProtocolConfig", "SparsitySpec",
    "aggregate", "apply_overrides", "apply_protocol", "build_config", "complete_idw",
    "complete_nearest", "complete_with_guidance", "derive_seed", "detect_fast",
    "eval_pair", "fit_scale_shift", "fit_scale_shift_robust", "gen_noisy",
    "gen_short_range", "gen_sparse_tof", "gen_unpaired_fov", "inject_outliers",
    "iterate", "load_config", "load_depth", "make_rng", "mask_distance",
    "mask_polygon", "sample_features", "sample_uniform", "save_depth",
    "synthesize", "to_gray", "unproject", "virtual_normal_divergence",
]
