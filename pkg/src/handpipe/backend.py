"""Inference backends: the palm detector and landmark model contracts, plus oracles.

The oracles read the frame's ground-truth scene and behave like ideal
networks with configurable noise, so the pipeline can run and be verified
without trained models.
"""

from __future__ import annotations

import time
import zlib
from dataclasses import dataclass
from enum import Enum
from typing import Protocol

import numpy as np

from . import crop
from .detector import (
    DEFAULT_IOU_THRESHOLD,
    DEFAULT_SCORE_THRESHOLD,
    AnchorConfig,
    RawDetectorOutput,
    anchors_as_array,
    decode_boxes,
    generate_anchors,
    non_max_suppression,
)
from .simulator import project, synthesize_raw_output
from .types import Detection, Handedness, HandLandmarks, HandScene, OrientedRect

# Handedness outputs of the oracle: exact binary fractions so that mirroring
# gives exactly 1 - p.
CONFIDENT_RIGHT = 31 / 32
CONFIDENT_LEFT = 1 / 32

ALIGNED_IOU = 0.5


class Tier(str, Enum):
    LIGHT = "light"
    FULL = "full"
    HEAVY = "heavy"


@dataclass(frozen=True)
class BackendCapability:
    """Synthetic quality/cost of a model tier.

    Attributes:
        noise: landmark noise std as a fraction of crop size.
        flip_prob: probability of reporting the wrong handedness.
        cost_ms: simulated per-call latency when latency simulation is on.
    """

    tier: Tier
    noise: float
    flip_prob: float
    cost_ms: float


# Synthetic per-call costs in milliseconds, ordered by tier.
CAPABILITIES = {
    Tier.LIGHT: BackendCapability(Tier.LIGHT, 0.02, 0.02, 0.066),
    Tier.FULL: BackendCapability(Tier.FULL, 0.01, 0.01, 0.161),
    Tier.HEAVY: BackendCapability(Tier.HEAVY, 0.005, 0.005, 0.369),
}


@dataclass(frozen=True)
class BackendRequest:
    rect: OrientedRect
    scene: HandScene | None = None
    timestamp: int = 0


class LandmarkBackend(Protocol):
    def infer_landmarks(self, req: BackendRequest) -> HandLandmarks: ...


class PalmDetector(Protocol):
    def detect_palms(self, frame: HandScene | RawDetectorOutput) -> list[Detection]: ...


def _request_rng(seed: int, timestamp: int, rect: OrientedRect) -> np.random.Generator:
    # Keyed on the request itself so results do not depend on call order.
    key = zlib.crc32(np.array([rect.cx, rect.cy, rect.w, rect.h, rect.theta]).tobytes())
    return np.random.default_rng([seed, timestamp, key])


def presence_from_alignment(iou: float) -> float:
    """Monotone map from rect/ground-truth IoU to presence: >= 0.95 when aligned, <= 0.1 otherwise."""
    if iou >= ALIGNED_IOU:
        return 0.95 + 0.05 * (iou - ALIGNED_IOU) / (1.0 - ALIGNED_IOU)
    return 0.1 * iou / ALIGNED_IOU


class OracleLandmarkBackend:
    """Landmark model stand-in driven by the request's ground-truth scene.

    A crop is "aligned" with a hand when its IoU with either canonical framing
    of that hand reaches 0.5: the rect derived from its ground-truth landmarks,
    or the rect derived from its ground-truth palm detection. Landmarks come
    from the best-aligned hand, perturbed in crop space by the tier's noise.
    """

    def __init__(
        self,
        tier: Tier | str = Tier.FULL,
        noise: float | None = None,
        flip_prob: float | None = None,
        seed: int = 0,
        simulate_latency: bool = False,
        landmark_expand: float = crop.DEFAULT_LANDMARK_EXPAND,
        detection_expand: float = crop.DEFAULT_DETECTION_EXPAND,
        detection_shift: float = crop.DEFAULT_DETECTION_SHIFT,
    ):
        self.capability = CAPABILITIES[Tier(tier)]
        self.noise = self.capability.noise if noise is None else float(noise)
        if flip_prob is None:
            flip_prob = self.capability.flip_prob if self.noise > 0.0 else 0.0
        self.flip_prob = float(flip_prob)
        self.seed = seed
        self.simulate_latency = simulate_latency
        self.landmark_expand = landmark_expand
        self.detection_expand = detection_expand
        self.detection_shift = detection_shift

    def ground_truth_rects(self, lm: HandLandmarks, det: Detection) -> tuple[OrientedRect, OrientedRect]:
        return (
            crop.rect_from_landmarks(lm, self.landmark_expand),
            crop.rect_from_detection(det, self.detection_expand, self.detection_shift),
        )

    def alignment(self, rect: OrientedRect, scene: HandScene | None) -> tuple[int, float, list]:
        """Index of the best-aligned hand (-1 if none overlaps), its IoU, and the projected truth."""
        truth = project(scene) if scene is not None else []
        best, best_iou = -1, 0.0
        for i, (lm, det) in enumerate(truth):
            iou = max(crop.rect_iou(rect, r) for r in self.ground_truth_rects(lm, det))
            if iou > best_iou:
                best, best_iou = i, iou
        return best, best_iou, truth

    def infer_landmarks(self, req: BackendRequest) -> HandLandmarks:
        if self.simulate_latency:
            time.sleep(self.capability.cost_ms / 1000.0)
        transform = crop.make_crop_transform(req.rect)
        best, iou, truth = self.alignment(req.rect, req.scene)
        presence = presence_from_alignment(iou)
        if best < 0:
            center = np.tile([req.rect.cx, req.rect.cy, 0.0], (21, 1))
            return HandLandmarks(center, presence, 0.5)
        gt = truth[best][0]
        right = Handedness.from_probability(gt.handedness) is Handedness.RIGHT
        if self.noise == 0.0 and self.flip_prob == 0.0:
            # Noise-free: the ground truth itself, without crop round-trip rounding.
            return gt.replace(presence=presence, handedness=CONFIDENT_RIGHT if right else CONFIDENT_LEFT)
        rng = _request_rng(self.seed, req.timestamp, req.rect)
        in_crop = crop.landmarks_to_crop_space(gt, transform)
        points = np.array(in_crop.points)
        if self.noise > 0.0:
            # Isotropic in image space: sigma = noise * crop scale on both image axes.
            sigma = self.noise * transform.scale
            points[:, 0] += rng.normal(0.0, sigma / req.rect.w, 21)
            points[:, 1] += rng.normal(0.0, sigma / req.rect.h, 21)
            points[:, 2] += rng.normal(0.0, self.noise, 21)
            points[:, 2] -= points[0, 2]
        if self.flip_prob > 0.0 and rng.random() < self.flip_prob:
            right = not right
        handedness = CONFIDENT_RIGHT if right else CONFIDENT_LEFT
        out = crop.landmarks_to_image_space(in_crop.replace(points=points), transform)
        return out.replace(presence=presence, handedness=handedness)


class OraclePalmDetector:
    """Palm detector stand-in: synthesizes raw outputs from the scene, then decodes and suppresses."""

    def __init__(
        self,
        anchor_config: AnchorConfig = AnchorConfig(),
        score_threshold: float = DEFAULT_SCORE_THRESHOLD,
        iou_threshold: float = DEFAULT_IOU_THRESHOLD,
        noise: float = 0.0,
        seed: int = 0,
        weighted_nms: bool = False,
        simulate_latency_ms: float = 0.0,
    ):
        self.anchor_config = anchor_config
        self.anchors = generate_anchors(anchor_config)
        self._table = anchors_as_array(self.anchors)
        self.score_threshold = score_threshold
        self.iou_threshold = iou_threshold
        self.noise = noise
        self.seed = seed
        self.weighted_nms = weighted_nms
        self.simulate_latency_ms = simulate_latency_ms

    def raw_output(self, scene: HandScene) -> RawDetectorOutput:
        rng = np.random.default_rng([self.seed, scene.timestamp])
        return synthesize_raw_output(scene, self._table, self.noise, rng)

    def decode(self, raw: RawDetectorOutput) -> list[Detection]:
        dets = decode_boxes(raw, self._table, self.score_threshold)
        return non_max_suppression(dets, self.iou_threshold, weighted=self.weighted_nms)

    def detect_palms(self, frame: HandScene | RawDetectorOutput) -> list[Detection]:
        if self.simulate_latency_ms:
            time.sleep(self.simulate_latency_ms / 1000.0)
        raw = frame if isinstance(frame, RawDetectorOutput) else self.raw_output(frame)
        return self.decode(raw)


class RawOutputDetector(OraclePalmDetector):
    """Decodes externally produced raw outputs looked up by frame timestamp."""

    def __init__(self, outputs: dict[int, RawDetectorOutput], anchor_config: AnchorConfig = AnchorConfig(), **kwargs):
        super().__init__(anchor_config, **kwargs)
        for t, raw in outputs.items():
            if len(raw) != len(self.anchors):
                raise ValueError(f"raw output at t={t} has {len(raw)} entries, expected {len(self.anchors)}")
        self.outputs = outputs

    def raw_output(self, scene: HandScene) -> RawDetectorOutput:
        try:
            return self.outputs[scene.timestamp]
        except KeyError:
            raise KeyError(f"no raw detector output for timestamp {scene.timestamp}") from None


def detect_palms(frame: HandScene | RawDetectorOutput, detector: PalmDetector | None = None) -> list[Detection]:
    return (detector or OraclePalmDetector()).detect_palms(frame)


def infer_landmarks(req: BackendRequest, backend: LandmarkBackend | None = None) -> HandLandmarks:
    return (backend or OracleLandmarkBackend(noise=0.0)).infer_landmarks(req)


__all__ = [
    "BackendCapability", "BackendRequest", "CAPABILITIES", "LandmarkBackend", "OracleLandmarkBackend",
    "OraclePalmDetector", "PalmDetector", "RawOutputDetector", "Tier", "detect_palms",
    "infer_landmarks", "presence_from_alignment",
]
