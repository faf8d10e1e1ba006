"""Self-supervised depth and ego-motion objectives with verification tooling."""
from .consistency import aligned_scale_ratio, chained_pose, depth_consistency_loss, mean_normalize, multiview_loss
from .geometry import (
    Intrinsics, PixelCoord, Pose, PoseParams, backproject, compose, invert, params_to_pose, pose_to_params, project,
)
from .masking import MaskConfig, composite_mask, error_mask, gradient_mask
from .objective import (
    LossReport, LossWeights, SnippetInput, gradient_check, gradient_descent_refine, total_loss,
)
from .photometric import SsimConfig, baseline_loss, pixel_loss, smoothness_loss, ssim_loss
from .sparse import MatchSet, epipolar_loss, essential_from_pose, reprojection_loss
from .warping import bilinear_sample, compute_warp, synthesize_view

__all__ = [
    "Intrinsics", "PixelCoord", "Pose", "PoseParams", "backproject", "compose", "invert",
    "params_to_pose", "pose_to_params", "project",
    "bilinear_sample", "compute_warp", "synthesize_view",
    "SsimConfig", "baseline_loss", "pixel_loss", "smoothness_loss", "ssim_loss",
    "MatchSet", "epipolar_loss", "essential_from_pose", "reprojection_loss",
    "aligned_scale_ratio", "chained_pose", "depth_consistency_loss", "mean_normalize", "multiview_loss",
    "MaskConfig", "composite_mask", "error_mask", "gradient_mask",
    "LossReport", "LossWeights", "SnippetInput", "gradient_check", "gradient_descent_refine", "total_loss",
]
