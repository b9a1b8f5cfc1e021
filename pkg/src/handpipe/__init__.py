"""Two-stage multi-hand tracking pipeline with a kinematic hand simulator as data source and oracle."""

from .types import (
    AxisAlignedBox,
    Detection,
    Handedness,
    HandLandmarks,
    HandScene,
    Landmark25D,
    OrientedRect,
    SceneHand,
    box_iou,
    wrap_angle,
)

__version__ = "0.1.0"

__all__ = [
    "AxisAlignedBox", "Detection", "Handedness", "HandLandmarks", "HandScene", "Landmark25D",
    "OrientedRect", "SceneHand", "box_iou", "wrap_angle",
]
