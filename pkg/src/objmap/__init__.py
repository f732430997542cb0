"""Object-level RGB-D mapping: dual-quadric poses plus per-object Gaussians."""

from .errors import (
    BehindCameraError,
    CannotInitializeError,
    DatasetError,
    DegenerateConicError,
    DegenerateQuadricError,
    InvalidParameterError,
    ObjmapError,
    UnoptimizableError,
)
from .frames import Detection2D, FrameBundle
from .quadrics import (
    BBox2D,
    CameraModel,
    DualConic,
    DualQuadric,
    assemble_dual_quadric,
    backproject_bbox_planes,
    conic_to_bbox,
    decompose_dual_quadric,
    iou_2d,
    iou_3d,
    project_to_conic,
    quadric_distance,
    quadric_raw_distance,
)

__version__ = "0.1.0"

__all__ = [
    "BBox2D",
    "BehindCameraError",
    "CameraModel",
    "CannotInitializeError",
    "DatasetError",
    "DegenerateConicError",
    "DegenerateQuadricError",
    "Detection2D",
    "DualConic",
    "DualQuadric",
    "FrameBundle",
    "InvalidParameterError",
    "ObjmapError",
    "UnoptimizableError",
    "assemble_dual_quadric",
    "backproject_bbox_planes",
    "conic_to_bbox",
    "decompose_dual_quadric",
    "iou_2d",
    "iou_3d",
    "project_to_conic",
    "quadric_distance",
    "quadric_raw_distance",
]
