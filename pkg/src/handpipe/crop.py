"""Oriented hand crops: rect derivation and crop <-> image transforms.

Rotation uses on-screen counterclockwise angles in y-down image coordinates,
so the image-space direction of the crop's "up" axis at angle theta is
(-sin theta, -cos theta).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .types import (
    KP_MIDDLE_MCP,
    KP_WRIST,
    MIDDLE_MCP,
    WRIST,
    Detection,
    HandLandmarks,
    OrientedRect,
)

DEFAULT_DETECTION_EXPAND = 2.6
DEFAULT_DETECTION_SHIFT = 0.5
DEFAULT_LANDMARK_EXPAND = 1.3


def rotation_matrix(theta: float) -> np.ndarray:
    """Maps crop-aligned offsets to image offsets for a rect rotated by theta."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, s], [-s, c]])


def hand_angle(wrist, middle_mcp) -> float:
    """Rotation that brings the wrist -> middle-MCP vector to point straight up."""
    vx, vy = np.asarray(middle_mcp, dtype=float) - np.asarray(wrist, dtype=float)
    if vx == 0.0 and vy == 0.0:
        raise ValueError("wrist and middle-finger MCP coincide; hand direction undefined")
    return math.atan2(-vx, -vy)


def rect_from_detection(
    det: Detection,
    expand: float = DEFAULT_DETECTION_EXPAND,
    shift: float = DEFAULT_DETECTION_SHIFT,
) -> OrientedRect:
    theta = hand_angle(det.keypoints[KP_WRIST], det.keypoints[KP_MIDDLE_MCP])
    side = det.side
    cx, cy = det.box.center
    cx += -math.sin(theta) * shift * side
    cy += -math.cos(theta) * shift * side
    return OrientedRect(cx, cy, side * expand, side * expand, theta)


def rect_from_landmarks(lm: HandLandmarks, expand: float = DEFAULT_LANDMARK_EXPAND) -> OrientedRect:
    """Tightest box around the landmarks in the hand-aligned frame, scaled by ``expand``."""
    xy = lm.xy
    theta = hand_angle(xy[WRIST], xy[MIDDLE_MCP])
    rot = rotation_matrix(theta)
    local = xy @ rot  # rot is orthogonal: this applies its inverse to each row
    lo, hi = local.min(axis=0), local.max(axis=0)
    size = hi - lo
    if size[0] <= 0.0 or size[1] <= 0.0:
        raise ValueError("landmarks are degenerate; cannot derive a rect")
    center = rot @ ((lo + hi) / 2.0)
    return OrientedRect(float(center[0]), float(center[1]), float(size[0] * expand), float(size[1] * expand), theta)


@dataclass(frozen=True, eq=False)
class CropTransform:
    """Affine map from crop coordinates [0,1]^2 to normalized image coordinates.

    Attributes:
        forward: 2x3 matrix, crop -> image.
        inverse: 2x3 matrix, image -> crop.
        rect: the rect the crop frames.
    """

    forward: np.ndarray
    inverse: np.ndarray
    rect: OrientedRect

    @property
    def scale(self) -> float:
        """Geometric mean of the axis scales, used for depth."""
        return math.sqrt(self.rect.w * self.rect.h)

    def to_image(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return pts @ self.forward[:, :2].T + self.forward[:, 2]

    def to_crop(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return pts @ self.inverse[:, :2].T + self.inverse[:, 2]


def make_crop_transform(rect: OrientedRect) -> CropTransform:
    if not (rect.w > 0.0 and rect.h > 0.0):
        raise ValueError("rect must have positive size")
    rot = rotation_matrix(rect.theta)
    linear = rot * [rect.w, rect.h]
    offset = np.array([rect.cx, rect.cy]) - linear @ [0.5, 0.5]
    forward = np.column_stack([linear, offset])
    inv_linear = (rot.T) / np.array([[rect.w], [rect.h]])
    inverse = np.column_stack([inv_linear, [0.5, 0.5] - inv_linear @ [rect.cx, rect.cy]])
    forward.setflags(write=False)
    inverse.setflags(write=False)
    return CropTransform(forward, inverse, rect)


def landmarks_to_image_space(lm_crop: HandLandmarks, t: CropTransform) -> HandLandmarks:
    points = np.empty((21, 3))
    points[:, :2] = t.to_image(lm_crop.points[:, :2])
    points[:, 2] = lm_crop.points[:, 2] * t.scale
    return lm_crop.replace(points=points)


def landmarks_to_crop_space(lm: HandLandmarks, t: CropTransform) -> HandLandmarks:
    points = np.empty((21, 3))
    points[:, :2] = t.to_crop(lm.points[:, :2])
    points[:, 2] = lm.points[:, 2] / t.scale
    return lm.replace(points=points)


def rect_polygon(rect: OrientedRect):
    from shapely.geometry import Polygon

    return Polygon(rect.corners())


def rect_iou(a: OrientedRect, b: OrientedRect) -> float:
    """Exact IoU of two rotated rectangles."""
    pa, pb = rect_polygon(a), rect_polygon(b)
    inter = pa.intersection(pb).area
    if inter <= 0.0:
        return 0.0
    return float(inter / (pa.area + pb.area - inter))
