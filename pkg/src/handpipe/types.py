"""Domain types shared across the pipeline.

Coordinates are normalized to [0, 1] by image size everywhere except the
simulator's camera space, which is in meters. Image y grows downward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Sequence

import numpy as np

NUM_LANDMARKS = 21

WRIST = 0
THUMB_CMC, THUMB_MCP, THUMB_IP, THUMB_TIP = 1, 2, 3, 4
INDEX_MCP, INDEX_PIP, INDEX_DIP, INDEX_TIP = 5, 6, 7, 8
MIDDLE_MCP, MIDDLE_PIP, MIDDLE_DIP, MIDDLE_TIP = 9, 10, 11, 12
RING_MCP, RING_PIP, RING_DIP, RING_TIP = 13, 14, 15, 16
PINKY_MCP, PINKY_PIP, PINKY_DIP, PINKY_TIP = 17, 18, 19, 20

LANDMARK_NAMES = (
    "WRIST",
    "THUMB_CMC", "THUMB_MCP", "THUMB_IP", "THUMB_TIP",
    "INDEX_MCP", "INDEX_PIP", "INDEX_DIP", "INDEX_TIP",
    "MIDDLE_MCP", "MIDDLE_PIP", "MIDDLE_DIP", "MIDDLE_TIP",
    "RING_MCP", "RING_PIP", "RING_DIP", "RING_TIP",
    "PINKY_MCP", "PINKY_PIP", "PINKY_DIP", "PINKY_TIP",
)

FINGERS = ("thumb", "index", "middle", "ring", "pinky")

# Each chain is rooted at the wrist and lists its four joints proximal to distal.
FINGER_CHAINS: dict[str, tuple[int, ...]] = {
    name: (WRIST, 1 + 4 * i, 2 + 4 * i, 3 + 4 * i, 4 + 4 * i)
    for i, name in enumerate(FINGERS)
}

# Bones as (parent, child) pairs, used for rendering.
HAND_CONNECTIONS: tuple[tuple[int, int], ...] = tuple(
    (chain[k], chain[k + 1]) for chain in FINGER_CHAINS.values() for k in range(4)
) + ((INDEX_MCP, MIDDLE_MCP), (MIDDLE_MCP, RING_MCP), (RING_MCP, PINKY_MCP))

# Detector keypoints, in order.
DETECTION_KEYPOINT_NAMES = (
    "wrist", "index_mcp", "middle_mcp", "ring_mcp", "pinky_mcp", "thumb_cmc", "palm_center",
)
NUM_DETECTION_KEYPOINTS = len(DETECTION_KEYPOINT_NAMES)
KP_WRIST = 0
KP_MIDDLE_MCP = 2
# Landmark indices feeding the first six detector keypoints; the seventh is the box center.
DETECTION_KEYPOINT_LANDMARKS = (WRIST, INDEX_MCP, MIDDLE_MCP, RING_MCP, PINKY_MCP, THUMB_CMC)
# Landmarks whose square bounding box defines the palm box.
PALM_LANDMARKS = (WRIST, THUMB_CMC, THUMB_MCP, INDEX_MCP, MIDDLE_MCP, RING_MCP, PINKY_MCP)


def wrap_angle(theta: float) -> float:
    """Wrap an angle in radians to the half-open interval (-pi, pi]."""
    if not math.isfinite(theta):
        raise ValueError(f"angle must be finite, got {theta!r}")
    wrapped = math.remainder(theta, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


class Handedness(str, Enum):
    LEFT = "Left"
    RIGHT = "Right"

    @classmethod
    def from_probability(cls, p_right: float) -> "Handedness":
        # Ties go to Right.
        return cls.RIGHT if p_right >= 0.5 else cls.LEFT

    def mirrored(self) -> "Handedness":
        return Handedness.LEFT if self is Handedness.RIGHT else Handedness.RIGHT


class Landmark25D(NamedTuple):
    x: float
    y: float
    z: float


def _frozen_array(values, shape: tuple[int, ...], name: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class HandLandmarks:
    """21 landmarks plus the presence and handedness heads.

    Attributes:
        points: (21, 3) array of x, y (normalized image coordinates) and z
            (depth relative to the wrist in hand-size units, negative toward
            the camera).
        presence: probability that an aligned hand is in the crop.
        handedness: probability that the hand is a right hand.
    """

    points: np.ndarray
    presence: float = 1.0
    handedness: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "points", _frozen_array(self.points, (NUM_LANDMARKS, 3), "points"))
        for name in ("presence", "handedness"):
            value = float(getattr(self, name))
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
            object.__setattr__(self, name, value)

    def __len__(self) -> int:
        return NUM_LANDMARKS

    def __getitem__(self, index: int) -> Landmark25D:
        x, y, z = self.points[index]
        return Landmark25D(float(x), float(y), float(z))

    def __eq__(self, other) -> bool:
        if not isinstance(other, HandLandmarks):
            return NotImplemented
        return (
            np.array_equal(self.points, other.points)
            and self.presence == other.presence
            and self.handedness == other.handedness
        )

    __hash__ = None

    @property
    def xy(self) -> np.ndarray:
        return self.points[:, :2]

    @property
    def label(self) -> Handedness:
        return Handedness.from_probability(self.handedness)

    def palm_size(self) -> float:
        """Wrist to middle-finger MCP distance in the image plane."""
        return float(np.linalg.norm(self.points[MIDDLE_MCP, :2] - self.points[WRIST, :2]))

    def replace(self, **changes) -> "HandLandmarks":
        values = {"points": self.points, "presence": self.presence, "handedness": self.handedness}
        values.update(changes)
        return HandLandmarks(**values)


@dataclass(frozen=True)
class AxisAlignedBox:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not (self.xmin <= self.xmax and self.ymin <= self.ymax):
            raise ValueError(f"invalid box {self}")

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> "AxisAlignedBox":
        return cls(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)

    @classmethod
    def square_around(cls, points: np.ndarray) -> "AxisAlignedBox":
        """Smallest square box, centered on the points' bounding box, covering them."""
        lo = points.min(axis=0)
        hi = points.max(axis=0)
        center = (lo + hi) / 2.0
        side = float(max(hi - lo))
        return cls.from_center(float(center[0]), float(center[1]), side, side)

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    @property
    def center(self) -> tuple[float, float]:
        return ((self.xmin + self.xmax) / 2.0, (self.ymin + self.ymax) / 2.0)

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_array(self) -> np.ndarray:
        return np.array([self.xmin, self.ymin, self.xmax, self.ymax])


def box_iou(a: AxisAlignedBox, b: AxisAlignedBox) -> float:
    """Intersection over union; 0 for disjoint or degenerate pairs."""
    iw = min(a.xmax, b.xmax) - max(a.xmin, b.xmin)
    ih = min(a.ymax, b.ymax) - max(a.ymin, b.ymin)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


@dataclass(frozen=True, eq=False)
class Detection:
    """A scored square palm box with its keypoints (see DETECTION_KEYPOINT_NAMES)."""

    box: AxisAlignedBox
    score: float
    keypoints: np.ndarray = field(
        default_factory=lambda: np.zeros((NUM_DETECTION_KEYPOINTS, 2))
    )

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")
        if abs(self.box.width - self.box.height) > 1e-9:
            raise ValueError(f"detection box must be square, got {self.box}")
        object.__setattr__(
            self, "keypoints",
            _frozen_array(self.keypoints, (NUM_DETECTION_KEYPOINTS, 2), "keypoints"),
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, Detection):
            return NotImplemented
        return (
            self.box == other.box
            and self.score == other.score
            and np.array_equal(self.keypoints, other.keypoints)
        )

    __hash__ = None

    @property
    def side(self) -> float:
        return self.box.width


@dataclass(frozen=True)
class OrientedRect:
    """Rotated rectangle; theta is counterclockwise as seen on screen, 0 = hand up."""

    cx: float
    cy: float
    w: float
    h: float
    theta: float = 0.0

    def __post_init__(self):
        if not (self.w > 0.0 and self.h > 0.0):
            raise ValueError(f"rect size must be positive, got w={self.w} h={self.h}")
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    def corners(self) -> np.ndarray:
        """Corner points in image coordinates, in crop order (0,0), (1,0), (1,1), (0,1)."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        rot = np.array([[c, s], [-s, c]])
        local = np.array([[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]]) * [self.w, self.h]
        return local @ rot.T + [self.cx, self.cy]

    def bounds(self) -> AxisAlignedBox:
        pts = self.corners()
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        return AxisAlignedBox(float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))


@dataclass(frozen=True)
class Camera:
    """Pinhole intrinsics in pixels."""

    fx: float = 600.0
    fy: float = 600.0
    cx: float = 320.0
    cy: float = 320.0
    width: int = 640
    height: int = 640

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal length must be positive")
        if not (self.width > 0 and self.height > 0):
            raise ValueError("image size must be positive")


@dataclass(frozen=True, eq=False)
class SceneHand:
    joints3d: np.ndarray
    handedness: Handedness = Handedness.RIGHT

    def __post_init__(self):
        object.__setattr__(self, "joints3d", _frozen_array(self.joints3d, (NUM_LANDMARKS, 3), "joints3d"))
        object.__setattr__(self, "handedness", Handedness(self.handedness))
        if np.any(self.joints3d[:, 2] <= 0.0):
            raise ValueError("all joints must lie in front of the camera")

    def __eq__(self, other) -> bool:
        if not isinstance(other, SceneHand):
            return NotImplemented
        return self.handedness == other.handedness and np.array_equal(self.joints3d, other.joints3d)

    __hash__ = None


@dataclass(frozen=True)
class HandScene:
    """Ground truth for one frame: camera-space joints per hand."""

    hands: tuple[SceneHand, ...] = ()
    camera: Camera = Camera()
    timestamp: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hands", tuple(self.hands))
        if self.timestamp < 0:
            raise ValueError("timestamp must be non-negative")


def stack_points(landmarks: Sequence[Landmark25D]) -> np.ndarray:
    return np.array([tuple(p) for p in landmarks], dtype=float)
