"""Desk-scale volumetric segmentation on synthetic phantoms.

A small, fully self-contained pipeline: seeded phantom generation, a
miniature 3-D U-Net trained with a composite loss (Dice, an overlap
sharpening penalty, a focal-positive term with a learnable per-voxel
threshold map) under dense deep supervision, optional recursive
refinement levels, sliding-window inference and standard overlap /
boundary-distance metrics.  Differentiation is handled by a minimal
built-in reverse-mode engine with finite-difference verification.
"""

from .ablation import (AblationResult, BENCHMARK_PHANTOM, DatasetConfig,
                       benchmark_dataset, run_ablation)
from .autodiff import GradCheckReport, Tensor, conv3d, grad_check
from .errors import (ConfigError, ContractError, DomainError, EmptyMaskError,
                     FormatError, InputError, RoiError, ShapeError,
                     TrainingError, TruncationError, VoxsegError)
from .gradsuite import run_gradient_suite
from .inference import (TilingConfig, binarize_and_filter, detect_roi,
                        predict_volume, sliding_window_predict)
from .losses import (LossBreakdown, LossWeights, cel, composite_loss,
                     dice_loss, focal_positive_loss, overlap_loss)
from .metrics import (CaseMetrics, MetricsReport, boundary_distances,
                      build_report, evaluate_pair, extract_boundary,
                      overlap_metrics)
from .net3d import (Checkpoint, Network, NetworkOutputs, UNetConfig,
                    build_unet, load_checkpoint, network_from_checkpoint,
                    parameter_count, save_checkpoint)
from .phantom import AugmentConfig, PhantomConfig, augment, generate_phantom
from .trainer import (Case, RRSConfig, TrainConfig, TrainResult,
                      case_from_grids, load_cases, rrs_level, train_cases)
from .volcore import (BinaryMask, RoiBox, Volume, crop_with_margin, load,
                      normalize_zscore, paste_back, save)

__version__ = "0.1.0"

__all__ = [
    "AblationResult", "AugmentConfig", "BENCHMARK_PHANTOM", "BinaryMask",
    "Case", "CaseMetrics",
    "Checkpoint", "ConfigError", "ContractError", "DatasetConfig",
    "DomainError", "EmptyMaskError", "FormatError", "GradCheckReport",
    "InputError", "LossBreakdown", "LossWeights", "MetricsReport", "Network",
    "NetworkOutputs", "PhantomConfig", "RRSConfig", "RoiBox", "RoiError",
    "ShapeError", "Tensor", "TilingConfig", "TrainConfig", "TrainResult",
    "TrainingError", "TruncationError", "UNetConfig", "Volume", "VoxsegError",
    "augment", "benchmark_dataset", "binarize_and_filter",
    "boundary_distances", "build_report", "build_unet", "case_from_grids",
    "cel", "composite_loss", "conv3d", "crop_with_margin", "detect_roi",
    "dice_loss", "evaluate_pair", "extract_boundary", "focal_positive_loss",
    "generate_phantom", "grad_check", "load", "load_cases", "load_checkpoint",
    "network_from_checkpoint", "normalize_zscore", "overlap_loss",
    "overlap_metrics", "parameter_count", "paste_back", "predict_volume",
    "rrs_level", "run_ablation", "run_gradient_suite", "save",
    "save_checkpoint", "sliding_window_predict", "train_cases",
]
