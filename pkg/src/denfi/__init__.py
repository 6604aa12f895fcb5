"""Boundary-aware anchor-free BEV detection components.

Rotated-box geometry, dense boundary targets and losses with analytic
gradients, deformable / depth-wise separable deformable convolution
(including proposal-driven offsets), pillarization, KITTI I/O and BEV AP40
evaluation.
"""
from ._backend import name as kernel_backend
from .geom import BoundaryVector, DetectionRecord, RotatedBox, normalize_angle, rotated_iou, rotated_nms

__version__ = "0.1.0"

__all__ = [
    "BoundaryVector",
    "DetectionRecord",
    "RotatedBox",
    "kernel_backend",
    "normalize_angle",
    "rotated_iou",
    "rotated_nms",
]
