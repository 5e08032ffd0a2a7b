"""Photometric alignment of colored point clouds to camera images."""

from .aligner import AlignConfig, AlignResult, align, forward_pass, pose_gradient
from .colorxform import apply_color_transform, poly_kernel, solve_color_transform
from .geometry import CameraIntrinsics, PointCloud, PoseParams
from .robustloss import AlignmentError

__all__ = [
    "AlignConfig",
    "AlignResult",
    "AlignmentError",
    "CameraIntrinsics",
    "PointCloud",
    "PoseParams",
    "align",
    "apply_color_transform",
    "forward_pass",
    "poly_kernel",
    "pose_gradient",
    "solve_color_transform",
]
