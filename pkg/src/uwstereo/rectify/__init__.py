from .lm import LMDivergence, LMResult, levenberg_marquardt
from .quasi_euclidean import (
    RectificationError,
    RectificationModel,
    RectifiedPair,
    apply_homography,
    build_F,
    estimate_rectification,
    focal_from_alpha_prime,
    guessed_intrinsics,
    model_from_params,
    rotation_xyz,
    sampson_error,
    sampson_residuals,
    skew_u1,
    vertical_disparity_rms,
    warp_image,
    warp_pair,
)

__all__ = [
    "LMDivergence",
    "LMResult",
    "RectificationError",
    "RectificationModel",
    "RectifiedPair",
    "apply_homography",
    "build_F",
    "estimate_rectification",
    "focal_from_alpha_prime",
    "guessed_intrinsics",
    "levenberg_marquardt",
    "model_from_params",
    "rotation_xyz",
    "sampson_error",
    "sampson_residuals",
    "skew_u1",
    "vertical_disparity_rms",
    "warp_image",
    "warp_pair",
]
