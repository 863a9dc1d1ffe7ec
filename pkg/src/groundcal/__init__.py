"""Targetless LiDAR-camera extrinsic calibration with ground-plane initialization."""

from .geometry import (
    CameraIntrinsics,
    Plane,
    RigidTransform,
    compose,
    exp_twist,
    log_transform,
    point_plane_distance,
    project,
)

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics",
    "Plane",
    "RigidTransform",
    "compose",
    "exp_twist",
    "log_transform",
    "point_plane_distance",
    "project",
    "__version__",
]
