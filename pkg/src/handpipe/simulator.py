"""Kinematic hand simulator: the ground-truth source for every pipeline stage.

The hand is a 20-bone skeleton, four bones per finger chain starting at the
wrist. In the hand's local frame (right hand, meters) the wrist sits at the
origin, fingers point along -y, the thumb lies on the +x side and the palm
faces -z, so the identity pose shows an upright right palm to the camera.
Left hands mirror the local x axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .detector import (
    Anchor,
    RawDetectorOutput,
    anchors_as_array,
    encode_boxes,
    encode_keypoints,
    logit,
)
from .types import (
    DETECTION_KEYPOINT_LANDMARKS,
    FINGERS,
    MIDDLE_MCP,
    NUM_DETECTION_KEYPOINTS,
    PALM_LANDMARKS,
    WRIST,
    AxisAlignedBox,
    Camera,
    Detection,
    Handedness,
    HandLandmarks,
    HandScene,
    SceneHand,
)

DEG = math.pi / 180.0

# Average adult hand, meters. The first bone of each chain runs from the
# wrist to the MCP (CMC for the thumb); the other three are the phalanges
# (metacarpal and two phalanges for the thumb).
DEFAULT_BONE_LENGTHS = {
    "thumb": (0.030, 0.040, 0.032, 0.027),
    "index": (0.086, 0.039, 0.022, 0.018),
    "middle": (0.090, 0.044, 0.026, 0.019),
    "ring": (0.085, 0.041, 0.025, 0.019),
    "pinky": (0.078, 0.032, 0.018, 0.017),
}

# In-plane direction of each chain's first bone, degrees from "up" toward the thumb side.
DEFAULT_ROOT_ANGLES = {"thumb": 50.0, "index": 14.0, "middle": 1.0, "ring": -12.0, "pinky": -25.0}

# (low, high) radians. Row layout per finger: first-joint flexion,
# first-joint abduction, second flexion, third flexion.
DEFAULT_LIMITS = {
    "thumb": ((-15 * DEG, 60 * DEG), (-20 * DEG, 45 * DEG), (0.0, 70 * DEG), (-10 * DEG, 80 * DEG)),
    "index": ((-20 * DEG, 90 * DEG), (-20 * DEG, 20 * DEG), (0.0, 110 * DEG), (0.0, 80 * DEG)),
    "middle": ((-20 * DEG, 90 * DEG), (-20 * DEG, 20 * DEG), (0.0, 110 * DEG), (0.0, 80 * DEG)),
    "ring": ((-20 * DEG, 90 * DEG), (-20 * DEG, 20 * DEG), (0.0, 110 * DEG), (0.0, 80 * DEG)),
    "pinky": ((-20 * DEG, 90 * DEG), (-20 * DEG, 20 * DEG), (0.0, 110 * DEG), (0.0, 80 * DEG)),
}

# The thumb bends mostly within the palm plane, tilted this far toward the palm side.
THUMB_BEND_TILT = 30 * DEG


@dataclass(frozen=True)
class HandModel:
    bone_lengths: dict = field(default_factory=lambda: dict(DEFAULT_BONE_LENGTHS))
    root_angles_deg: dict = field(default_factory=lambda: dict(DEFAULT_ROOT_ANGLES))
    limits: dict = field(default_factory=lambda: dict(DEFAULT_LIMITS))
    palm_width: float = 0.08

    def __post_init__(self):
        for name in FINGERS:
            if any(length <= 0 for length in self.bone_lengths[name]):
                raise ValueError(f"bone lengths of {name} must be positive")
            if any(lo > hi for lo, hi in self.limits[name]):
                raise ValueError(f"empty joint limit interval for {name}")

    def limit_array(self) -> np.ndarray:
        """(5, 4, 2) array of joint limits in PoseParams layout."""
        return np.array([self.limits[name] for name in FINGERS], dtype=float)

    @classmethod
    def from_dict(cls, data: dict) -> "HandModel":
        base = cls()
        bone_lengths = dict(base.bone_lengths)
        bone_lengths.update({k: tuple(v) for k, v in data.get("bone_lengths", {}).items()})
        roots = dict(base.root_angles_deg)
        roots.update(data.get("root_angles_deg", {}))
        limits = dict(base.limits)
        for name, rows in data.get("limits_deg", {}).items():
            limits[name] = tuple((lo * DEG, hi * DEG) for lo, hi in rows)
        return cls(bone_lengths, roots, limits, float(data.get("palm_width", base.palm_width)))


@dataclass(frozen=True, eq=False)
class PoseParams:
    """Joint angles plus the wrist's camera-space pose.

    Attributes:
        angles: (5, 4) radians per finger: first-joint flexion, first-joint
            abduction, second-joint flexion, third-joint flexion.
        rotation: rotation vector (axis * angle) of the hand frame in camera space.
        translation: wrist position in camera space, meters.
        handedness: Left or Right.
    """

    angles: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    translation: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.5]))
    handedness: Handedness = Handedness.RIGHT

    def __post_init__(self):
        for name, shape in (("angles", (5, 4)), ("rotation", (3,)), ("translation", (3,))):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise ValueError(f"{name} must have shape {shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "handedness", Handedness(self.handedness))

    def __eq__(self, other) -> bool:
        if not isinstance(other, PoseParams):
            return NotImplemented
        return (
            np.array_equal(self.angles, other.angles)
            and np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
            and self.handedness == other.handedness
        )

    __hash__ = None

    def with_(self, **changes) -> "PoseParams":
        return replace(self, **changes)


def within_limits(model: HandModel, pose: PoseParams, tol: float = 1e-12) -> bool:
    lim = model.limit_array()
    return bool(np.all(pose.angles >= lim[..., 0] - tol) and np.all(pose.angles <= lim[..., 1] + tol))


def local_joints(model: HandModel, angles: np.ndarray) -> np.ndarray:
    """Right-hand joints in the hand frame."""
    joints = np.zeros((21, 3))
    palm_normal = np.array([0.0, 0.0, -1.0])
    for i, name in enumerate(FINGERS):
        lengths = model.bone_lengths[name]
        a = model.root_angles_deg[name] * DEG
        fwd = np.array([math.sin(a), -math.cos(a), 0.0])
        if name == "thumb":
            toward_palm = np.array([-math.cos(a), -math.sin(a), 0.0])
            bend = math.cos(THUMB_BEND_TILT) * toward_palm + math.sin(THUMB_BEND_TILT) * palm_normal
        else:
            bend = palm_normal.copy()
        side = np.cross(bend, fwd)
        flex1, abd, flex2, flex3 = angles[i]
        pos = fwd * lengths[0]
        joints[1 + 4 * i] = pos
        # Abduction swings the chain within the bend plane's normal, then flexion bends it.
        fwd, side = math.cos(abd) * fwd + math.sin(abd) * side, -math.sin(abd) * fwd + math.cos(abd) * side
        for k, flex in enumerate((flex1, flex2, flex3)):
            fwd, bend = math.cos(flex) * fwd + math.sin(flex) * bend, -math.sin(flex) * fwd + math.cos(flex) * bend
            pos = pos + fwd * lengths[k + 1]
            joints[2 + 4 * i + k] = pos
    return joints


def forward_kinematics(model: HandModel, pose: PoseParams) -> np.ndarray:
    """21 camera-space joints (meters) for a pose."""
    if not within_limits(model, pose):
        raise ValueError("pose angles fall outside the model's joint limits")
    local = local_joints(model, pose.angles)
    if pose.handedness is Handedness.LEFT:
        local[:, 0] = -local[:, 0]
    rot = Rotation.from_rotvec(np.array(pose.rotation)).as_matrix()
    return local @ rot.T + pose.translation


def project_points(camera: Camera, joints3d: np.ndarray) -> np.ndarray:
    """Pinhole projection of camera-space points to normalized image coordinates."""
    joints3d = np.asarray(joints3d, dtype=float)
    if np.any(joints3d[:, 2] <= 0.0):
        raise ValueError("cannot project a point at or behind the camera")
    u = camera.fx * joints3d[:, 0] / joints3d[:, 2] + camera.cx
    v = camera.fy * joints3d[:, 1] / joints3d[:, 2] + camera.cy
    return np.column_stack([u / camera.width, v / camera.height])


def palm_detection_from_xy(xy: np.ndarray, score: float = 1.0) -> Detection:
    """Square palm box over the wrist and knuckles, with the detector keypoints."""
    box = AxisAlignedBox.square_around(xy[list(PALM_LANDMARKS)])
    keypoints = np.zeros((NUM_DETECTION_KEYPOINTS, 2))
    keypoints[:6] = xy[list(DETECTION_KEYPOINT_LANDMARKS)]
    keypoints[6] = box.center
    return Detection(box, score, keypoints)


def project_hand(camera: Camera, hand: SceneHand) -> tuple[HandLandmarks, Detection]:
    xy = project_points(camera, hand.joints3d)
    px = xy * [camera.width, camera.height]
    hand_size_px = float(np.linalg.norm(px[MIDDLE_MCP] - px[WRIST]))
    if hand_size_px <= 1e-9:
        raise ValueError("hand points at the camera; palm size collapses")
    depth = hand.joints3d[:, 2]
    wrist_depth = depth[WRIST]
    # Depth offsets in pixels at the wrist's distance, over the palm size in pixels.
    z = (depth - wrist_depth) * (camera.fx / wrist_depth) / hand_size_px
    z[WRIST] = 0.0
    points = np.column_stack([xy, z])
    handedness = 1.0 if hand.handedness is Handedness.RIGHT else 0.0
    return HandLandmarks(points, 1.0, handedness), palm_detection_from_xy(xy)


def project(scene: HandScene) -> list[tuple[HandLandmarks, Detection]]:
    """Ground-truth landmarks and palm detection for every hand in the scene."""
    return [project_hand(scene.camera, hand) for hand in scene.hands]


def mirror_scene(scene: HandScene) -> HandScene:
    """Reflect the scene across the camera's vertical center line, swapping handedness."""
    cam = scene.camera
    hands = []
    for hand in scene.hands:
        joints = np.array(hand.joints3d)
        # x/z -> (width - 2 cx)/fx - x/z keeps the reflection exact for off-center principal points.
        joints[:, 0] = (cam.width - 2.0 * cam.cx) / cam.fx * joints[:, 2] - joints[:, 0]
        hands.append(SceneHand(joints, hand.handedness.mirrored()))
    return replace(scene, hands=tuple(hands))


# Canonical joint angles per pose family, degrees, in PoseParams layout.
POSE_FAMILIES = ("open", "fist", "point", "victory", "thumbs_up", "ok", "random")

_OPEN = [0.0, 0.0, 0.0, 0.0]
_CURLED = [85.0, 0.0, 100.0, 65.0]
_THUMB_OPEN = [0.0, 0.0, 0.0, 0.0]
_THUMB_TUCKED = [45.0, 10.0, 55.0, 65.0]

CANONICAL_ANGLES_DEG = {
    "open": [_THUMB_OPEN, _OPEN, _OPEN, _OPEN, _OPEN],
    "fist": [_THUMB_TUCKED, _CURLED, _CURLED, _CURLED, _CURLED],
    "point": [_THUMB_TUCKED, _OPEN, _CURLED, _CURLED, _CURLED],
    "victory": [_THUMB_TUCKED, [0.0, 8.0, 0.0, 0.0], [0.0, -8.0, 0.0, 0.0], _CURLED, _CURLED],
    "thumbs_up": [_THUMB_OPEN, _CURLED, _CURLED, _CURLED, _CURLED],
    # Thumb and index tips meet; the remaining fingers stay extended.
    "ok": [[38.0, -14.0, 18.0, 23.0], [28.0, 0.0, 68.0, 51.0], _OPEN, _OPEN, _OPEN],
}

ANGLE_JITTER_DEG = 4.0
MAX_TILT_DEG = 20.0


def canonical_pose(family: str, model: HandModel | None = None) -> np.ndarray:
    if family not in CANONICAL_ANGLES_DEG:
        raise ValueError(f"no canonical angles for family {family!r}")
    model = model or HandModel()
    lim = model.limit_array()
    return np.clip(np.array(CANONICAL_ANGLES_DEG[family]) * DEG, lim[..., 0], lim[..., 1])


def sample_global_pose(rng: np.random.Generator, camera: Camera = Camera()) -> tuple[np.ndarray, np.ndarray]:
    """Palm roughly facing the camera, any in-plane roll, wrist placed so the hand stays in view."""
    roll = rng.uniform(-math.pi, math.pi)
    tilt = rng.uniform(-MAX_TILT_DEG, MAX_TILT_DEG, size=2) * DEG
    rot = Rotation.from_rotvec([0.0, 0.0, roll]) * Rotation.from_rotvec([tilt[0], tilt[1], 0.0])
    depth = rng.uniform(0.45, 0.7)
    # Hand center sits ~9 cm from the wrist along the hand's up axis.
    center_offset = rot.apply([0.0, -0.09, 0.0])
    half_x = (camera.width / 2 - 0.2 * camera.fx / depth * 0.5) / camera.fx * depth
    half_y = (camera.height / 2 - 0.2 * camera.fy / depth * 0.5) / camera.fy * depth
    center = np.array([
        rng.uniform(-0.4, 0.4) * half_x + (camera.cx - camera.width / 2) / camera.fx * depth,
        rng.uniform(-0.4, 0.4) * half_y + (camera.cy - camera.height / 2) / camera.fy * depth,
        depth,
    ])
    return rot.as_rotvec(), center - center_offset


def sample_pose(
    seed: int | np.random.Generator,
    family: str = "random",
    model: HandModel | None = None,
    camera: Camera = Camera(),
) -> PoseParams:
    """Deterministic pose for a seed; named families jitter around their canonical angles."""
    if family not in POSE_FAMILIES:
        raise ValueError(f"unknown pose family {family!r}; expected one of {POSE_FAMILIES}")
    model = model or HandModel()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    lim = model.limit_array()
    if family == "random":
        angles = rng.uniform(lim[..., 0], lim[..., 1])
    else:
        angles = canonical_pose(family, model) + rng.uniform(-ANGLE_JITTER_DEG, ANGLE_JITTER_DEG, (5, 4)) * DEG
        angles = np.clip(angles, lim[..., 0], lim[..., 1])
    rotation, translation = sample_global_pose(rng, camera)
    handedness = Handedness.RIGHT if rng.random() < 0.5 else Handedness.LEFT
    return PoseParams(angles, rotation, translation, handedness)


def make_scene(poses: Sequence[PoseParams], model: HandModel | None = None,
               camera: Camera = Camera(), timestamp: int = 0) -> HandScene:
    model = model or HandModel()
    hands = tuple(SceneHand(forward_kinematics(model, p), p.handedness) for p in poses)
    return HandScene(hands, camera, timestamp)


def random_scene(
    rng: np.random.Generator,
    max_hands: int = 3,
    model: HandModel | None = None,
    camera: Camera = Camera(),
    max_palm_iou: float = 0.2,
    timestamp: int = 0,
) -> HandScene:
    """0..max_hands random hands whose palm boxes stay apart (pairwise IoU below ``max_palm_iou``)."""
    from .types import box_iou

    model = model or HandModel()
    n = int(rng.integers(0, max_hands + 1))
    poses: list[PoseParams] = []
    boxes: list[AxisAlignedBox] = []
    attempts = 0
    while len(poses) < n:
        attempts += 1
        if attempts > 1000:
            raise RuntimeError("could not place non-overlapping hands")
        pose = sample_pose(rng, "random", model, camera)
        # Spread hands over the frame rather than the near-center default.
        shift = np.array([rng.uniform(-0.25, 0.25), rng.uniform(-0.25, 0.25), 0.0]) * pose.translation[2]
        pose = pose.with_(translation=pose.translation + shift)
        joints = forward_kinematics(model, pose)
        xy = project_points(camera, joints)
        if xy.min() < 0.0 or xy.max() > 1.0:
            continue
        box = palm_detection_from_xy(xy).box
        if any(box_iou(box, other) >= max_palm_iou for other in boxes):
            continue
        poses.append(pose)
        boxes.append(box)
    return make_scene(poses, model, camera, timestamp)


# Scores the oracle assigns to anchors.
POSITIVE_SCORE = 0.95
BACKGROUND_SCORE = 0.01
MATCH_IOU = 0.3


def _anchor_ious(box: AxisAlignedBox, table: np.ndarray) -> np.ndarray:
    half = table[:, 2] / 2.0
    iw = np.minimum(box.xmax, table[:, 0] + half) - np.maximum(box.xmin, table[:, 0] - half)
    ih = np.minimum(box.ymax, table[:, 1] + half) - np.maximum(box.ymin, table[:, 1] - half)
    inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
    union = box.area + table[:, 2] ** 2 - inter
    return np.where(union > 0, inter / union, 0.0)


def synthesize_raw_output(
    scene: HandScene | Sequence[Detection],
    anchors: Sequence[Anchor] | np.ndarray,
    noise: float = 0.0,
    rng: np.random.Generator | None = None,
) -> RawDetectorOutput:
    """Raw detector tensors an ideal palm network would emit for the scene.

    Each ground-truth palm claims its best anchor (score 0.95) plus every anchor
    whose IoU with it reaches 0.3, scored by linear interpolation in IoU between
    0.05 and 0.95. Claimed anchors regress onto the ground truth, with Gaussian
    noise of std ``noise`` (anchor-side units) on the offsets. All other anchors
    get score 0.01.
    """
    table = anchors if isinstance(anchors, np.ndarray) else anchors_as_array(anchors)
    n = table.shape[0]
    if isinstance(scene, HandScene):
        gts = [det for _, det in project(scene)]
    else:
        gts = list(scene)
    scores = np.full(n, BACKGROUND_SCORE)
    boxes = np.zeros((n, 3))
    keypoints = np.zeros((n, NUM_DETECTION_KEYPOINTS, 2))
    if gts:
        ious = np.stack([_anchor_ious(gt.box, table) for gt in gts])
        owner = ious.argmax(axis=0)
        best_iou = ious.max(axis=0)
        forced: dict[int, int] = {}
        for g in range(len(gts)):
            for idx in np.argsort(-ious[g], kind="stable"):
                if int(idx) not in forced:
                    forced[int(idx)] = g
                    break
        claimed = {int(i): int(owner[i]) for i in np.flatnonzero(best_iou >= MATCH_IOU)}
        claimed.update(forced)
        for idx, g in claimed.items():
            if idx in forced and forced[idx] == g:
                scores[idx] = POSITIVE_SCORE
            else:
                top = ious[g, [i for i, o in forced.items() if o == g][0]]
                frac = (ious[g, idx] - MATCH_IOU) / max(top - MATCH_IOU, 1e-12)
                scores[idx] = 0.05 + (POSITIVE_SCORE - 0.05) * float(np.clip(frac, 0.0, 1.0))
            anchor = Anchor(*table[idx])
            boxes[idx] = encode_boxes(gts[g], anchor)
            keypoints[idx] = encode_keypoints(gts[g], anchor)
        if noise > 0.0:
            rng = rng if rng is not None else np.random.default_rng(0)
            idx = np.array(sorted(claimed))
            boxes[idx] += rng.normal(0.0, noise, (idx.size, 3))
            keypoints[idx] += rng.normal(0.0, noise, (idx.size, NUM_DETECTION_KEYPOINTS, 2))
    logits = np.log(scores) - np.log1p(-scores)
    return RawDetectorOutput(logits, boxes, keypoints)



class ScriptError(ValueError):
    """Malformed sequence script; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class Keyframe:
    frame: int
    pose: PoseParams


@dataclass(frozen=True)
class ScriptedHand:
    keyframes: tuple[Keyframe, ...]
    # (frame, "enter" | "exit"); a hand starts visible unless its first event is "enter".
    events: tuple[tuple[int, str], ...] = ()

    def __post_init__(self):
        frames = [k.frame for k in self.keyframes]
        if not frames:
            raise ScriptError("keyframes", "at least one keyframe required")
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise ScriptError("keyframes", "keyframe frames must strictly increase")
        for frame, kind in self.events:
            if kind not in ("enter", "exit"):
                raise ScriptError("events", f"unknown event {kind!r}")

    def visible(self, frame: int) -> bool:
        events = sorted(self.events)
        state = not events or events[0][1] != "enter"
        for at, kind in events:
            if at <= frame:
                state = kind == "enter"
        return state

    def pose_at(self, frame: int) -> PoseParams:
        """Linear interpolation in parameter space, held constant outside the keyframe span."""
        keys = self.keyframes
        if frame <= keys[0].frame:
            return keys[0].pose
        if frame >= keys[-1].frame:
            return keys[-1].pose
        for a, b in zip(keys, keys[1:]):
            if a.frame <= frame <= b.frame:
                w = (frame - a.frame) / (b.frame - a.frame)
                return PoseParams(
                    (1 - w) * a.pose.angles + w * b.pose.angles,
                    (1 - w) * a.pose.rotation + w * b.pose.rotation,
                    (1 - w) * a.pose.translation + w * b.pose.translation,
                    a.pose.handedness,
                )
        raise AssertionError("unreachable")


@dataclass(frozen=True)
class SequenceScript:
    num_frames: int
    hands: tuple[ScriptedHand, ...] = ()
    frame_interval_us: int = 33_333
    camera: Camera = Camera()
    model: HandModel = field(default_factory=HandModel)
    seed: int = 0
    # Per-frame Gaussian jitter on joint angles, degrees.
    pose_noise_deg: float = 0.0

    def __post_init__(self):
        if self.num_frames < 0:
            raise ScriptError("num_frames", "must be non-negative")
        if self.frame_interval_us <= 0:
            raise ScriptError("frame_interval_us", "must be positive")

    @classmethod
    def from_dict(cls, data: dict, seed: int | None = None) -> "SequenceScript":
        """Build a script from its JSON form; ``seed`` overrides the file's seed."""
        if not isinstance(data, dict):
            raise ScriptError("<root>", "script must be a JSON object")
        seed = int(data.get("seed", 0)) if seed is None else int(seed)
        try:
            camera = Camera(**data["camera"]) if "camera" in data else Camera()
        except (TypeError, ValueError) as exc:
            raise ScriptError("camera", str(exc)) from None
        model = HandModel.from_dict(data.get("hand_model", {}))
        hands = []
        for h, hand in enumerate(data.get("hands", [])):
            handedness = hand.get("handedness", "Right")
            if handedness not in ("Left", "Right"):
                raise ScriptError(f"hands[{h}].handedness", f"expected Left or Right, got {handedness!r}")
            keyframes = []
            for k, key in enumerate(hand.get("keyframes", [])):
                path = f"hands[{h}].keyframes[{k}]"
                if "frame" not in key:
                    raise ScriptError(f"{path}.frame", "missing")
                rng = np.random.default_rng([seed, h, k])
                family = key.get("family", "open")
                if family not in POSE_FAMILIES:
                    raise ScriptError(f"{path}.family", f"unknown family {family!r}")
                sampled = sample_pose(rng, family, model, camera)
                try:
                    angles = np.array(key["angles_deg"], dtype=float) * DEG if "angles_deg" in key else sampled.angles
                    rotation = key.get("rotation", sampled.rotation)
                    translation = key.get("translation", sampled.translation)
                    pose = PoseParams(angles, rotation, translation, Handedness(handedness))
                except (TypeError, ValueError) as exc:
                    raise ScriptError(path, str(exc)) from None
                if not within_limits(model, pose):
                    raise ScriptError(f"{path}.angles_deg", "outside joint limits")
                keyframes.append(Keyframe(int(key["frame"]), pose))
            events = []
            for e, event in enumerate(hand.get("events", [])):
                try:
                    events.append((int(event["frame"]), str(event["type"])))
                except (KeyError, TypeError, ValueError):
                    raise ScriptError(f"hands[{h}].events[{e}]", "needs integer frame and type") from None
            try:
                hands.append(ScriptedHand(tuple(keyframes), tuple(events)))
            except ScriptError as exc:
                raise ScriptError(f"hands[{h}].{exc.path}", str(exc).split(": ", 1)[1]) from None
        try:
            return cls(
                int(data.get("num_frames", 0)),
                tuple(hands),
                int(data.get("frame_interval_us", 33_333)),
                camera,
                model,
                seed,
                float(data.get("pose_noise_deg", 0.0)),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ScriptError):
                raise
            raise ScriptError("<root>", str(exc)) from None


def run_script(script: SequenceScript) -> Iterator[HandScene]:
    """One scene per frame, deterministic for a given script and seed."""
    lim = script.model.limit_array()
    for frame in range(script.num_frames):
        hands = []
        for h, hand in enumerate(script.hands):
            if not hand.visible(frame):
                continue
            pose = hand.pose_at(frame)
            if script.pose_noise_deg > 0.0:
                rng = np.random.default_rng([script.seed, frame, h])
                angles = pose.angles + rng.normal(0.0, script.pose_noise_deg * DEG, (5, 4))
                pose = pose.with_(angles=np.clip(angles, lim[..., 0], lim[..., 1]))
            hands.append(SceneHand(forward_kinematics(script.model, pose), pose.handedness))
        yield HandScene(tuple(hands), script.camera, frame * script.frame_interval_us)


def steady_hand_script(
    num_frames: int = 300,
    family: str = "open",
    events: Sequence[tuple[int, str]] = (),
    drift: float = 0.04,
    seed: int = 0,
) -> SequenceScript:
    """A single right hand drifting slowly across the view, optionally leaving and returning."""
    start = PoseParams(canonical_pose(family), [0.0, 0.0, 0.0], [-drift / 2, 0.04, 0.5])
    end = start.with_(rotation=[0.0, 0.0, 0.3], translation=[drift / 2, 0.03, 0.52])
    hand = ScriptedHand((Keyframe(0, start), Keyframe(max(num_frames - 1, 1), end)), tuple(events))
    return SequenceScript(num_frames, (hand,), seed=seed)


def two_hand_script(num_frames: int = 120, cross: bool = False, seed: int = 0) -> SequenceScript:
    """Two hands side by side; with ``cross=True`` they swap sides over the sequence."""
    left_x, right_x = -0.09, 0.09
    last = max(num_frames - 1, 1)
    a0 = PoseParams(canonical_pose("open"), [0.0, 0.0, 0.0], [right_x, 0.05, 0.55], Handedness.RIGHT)
    b0 = PoseParams(canonical_pose("fist"), [0.0, 0.0, 0.0], [left_x, 0.05, 0.6], Handedness.LEFT)
    a1 = a0.with_(translation=[left_x if cross else right_x, 0.05, 0.55])
    b1 = b0.with_(translation=[right_x if cross else left_x, 0.05, 0.6])
    hands = (
        ScriptedHand((Keyframe(0, a0), Keyframe(last, a1))),
        ScriptedHand((Keyframe(0, b0), Keyframe(last, b1))),
    )
    return SequenceScript(num_frames, hands, seed=seed)

__all__ = [
    "HandModel", "PoseParams", "POSE_FAMILIES", "canonical_pose", "forward_kinematics",
    "local_joints", "make_scene", "mirror_scene", "palm_detection_from_xy", "project",
    "project_hand", "project_points", "random_scene", "sample_pose", "synthesize_raw_output",
    "within_limits", "logit", "ScriptError", "Keyframe", "ScriptedHand",
    "SequenceScript", "run_script", "steady_hand_script", "two_hand_script",
]
