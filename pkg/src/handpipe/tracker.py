"""Detector-gated multi-hand tracking.

Each frame, every tracked hand is re-localized by the landmark model inside
a crop derived from its previous-frame landmarks. The palm detector only
runs when tracking needs it: on the first frame, on the frame a hand is
lost, while nothing is tracked, and (opt-in) periodically below capacity.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

from . import crop
from .backend import BackendRequest, LandmarkBackend, PalmDetector
from .types import Detection, HandLandmarks, HandScene, OrientedRect, box_iou


@dataclass(frozen=True)
class TrackerConfig:
    max_hands: int = 2
    presence_threshold: float = 0.5
    association_iou: float = 0.5
    detection_expand: float = crop.DEFAULT_DETECTION_EXPAND
    detection_shift: float = crop.DEFAULT_DETECTION_SHIFT
    landmark_expand: float = crop.DEFAULT_LANDMARK_EXPAND
    # Re-run the detector every N frames while below max_hands; None disables.
    redetect_interval: int | None = None
    # False runs the detector on every frame.
    gating: bool = True

    def __post_init__(self):
        if self.max_hands < 1:
            raise ValueError("max_hands must be at least 1")
        for name in ("presence_threshold", "association_iou"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.redetect_interval is not None and self.redetect_interval < 1:
            raise ValueError("redetect_interval must be positive")


@dataclass(frozen=True)
class TrackedHand:
    id: int
    rect: OrientedRect
    last_landmarks: HandLandmarks
    age: int = 1


@dataclass(frozen=True)
class TrackerState:
    hands: tuple[TrackedHand, ...] = ()
    config: TrackerConfig = TrackerConfig()
    frame_index: int = 0
    next_id: int = 0
    frames_since_detection: int = 0

    @property
    def max_hands(self) -> int:
        return self.config.max_hands

    @property
    def presence_threshold(self) -> float:
        return self.config.presence_threshold


@dataclass(frozen=True)
class TrackStepReport:
    timestamp: int
    frame_index: int
    outputs: tuple[tuple[int, HandLandmarks], ...]
    detector_ran: bool
    hands_added: int = 0
    hands_dropped: int = 0


@dataclass(frozen=True)
class LandmarkPhase:
    """Result of re-localizing tracked hands, before the detector decision is acted on."""

    state: TrackerState
    survivors: tuple[TrackedHand, ...]
    dropped: int
    run_detector: bool


@dataclass(frozen=True)
class Assignment:
    matches: tuple[tuple[int, int], ...]  # (detection index, hand index)
    new: tuple[int, ...]


def needs_detection(state: TrackerState, survivors: int, dropped: int) -> bool:
    cfg = state.config
    if not cfg.gating or state.frame_index == 0 or dropped > 0 or survivors == 0:
        return True
    return (
        cfg.redetect_interval is not None
        and survivors < cfg.max_hands
        and state.frames_since_detection + 1 >= cfg.redetect_interval
    )


def landmark_phase(state: TrackerState, frame: HandScene, backend: LandmarkBackend) -> LandmarkPhase:
    survivors = []
    claimed = []
    for hand in state.hands:
        lm = backend.infer_landmarks(BackendRequest(hand.rect, frame, frame.timestamp))
        if lm.presence < state.presence_threshold:
            continue
        # Two tracks that collapsed onto one hand: the older track keeps it.
        bounds = crop.rect_from_landmarks(lm, state.config.landmark_expand).bounds()
        if any(box_iou(bounds, other) >= state.config.association_iou for other in claimed):
            continue
        claimed.append(bounds)
        survivors.append(replace(hand, last_landmarks=lm, age=hand.age + 1))
    dropped = len(state.hands) - len(survivors)
    return LandmarkPhase(state, tuple(survivors), dropped, needs_detection(state, len(survivors), dropped))


def associate(
    dets: Sequence[Detection],
    hands: Sequence[TrackedHand],
    iou_threshold: float = 0.5,
    expand: float = crop.DEFAULT_DETECTION_EXPAND,
    shift: float = crop.DEFAULT_DETECTION_SHIFT,
) -> Assignment:
    """Greedy best-IoU matching of detection crops to tracked crops (axis-aligned bounds)."""
    det_boxes = [crop.rect_from_detection(d, expand, shift).bounds() for d in dets]
    hand_boxes = [h.rect.bounds() for h in hands]
    pairs = [
        (box_iou(db, hb), i, j)
        for i, db in enumerate(det_boxes)
        for j, hb in enumerate(hand_boxes)
    ]
    # Highest IoU first; ties resolve to the lower detection, then hand, index.
    pairs.sort(key=lambda p: (-p[0], p[1], p[2]))
    used_d, used_h, matches = set(), set(), []
    for iou, i, j in pairs:
        if iou < iou_threshold:
            break
        if i in used_d or j in used_h:
            continue
        used_d.add(i)
        used_h.add(j)
        matches.append((i, j))
    new = tuple(i for i in range(len(dets)) if i not in used_d)
    return Assignment(tuple(sorted(matches)), new)


def merge_phase(
    phase: LandmarkPhase,
    detections: Sequence[Detection] | None,
    frame: HandScene,
    backend: LandmarkBackend,
) -> tuple[TrackerState, TrackStepReport]:
    """Admit new hands from detections and prepare next-frame crops."""
    state = phase.state
    cfg = state.config
    hands = [
        replace(h, rect=crop.rect_from_landmarks(h.last_landmarks, cfg.landmark_expand))
        for h in phase.survivors
    ]
    next_id = state.next_id
    added = 0
    if detections:
        assignment = associate(detections, hands, cfg.association_iou, cfg.detection_expand, cfg.detection_shift)
        for i in assignment.new:
            if len(hands) >= cfg.max_hands:
                break
            rect = crop.rect_from_detection(detections[i], cfg.detection_expand, cfg.detection_shift)
            lm = backend.infer_landmarks(BackendRequest(rect, frame, frame.timestamp))
            if lm.presence < cfg.presence_threshold:
                continue
            next_rect = crop.rect_from_landmarks(lm, cfg.landmark_expand)
            # A detection that lands on an already tracked hand is not a new hand.
            if any(box_iou(next_rect.bounds(), h.rect.bounds()) >= cfg.association_iou for h in hands):
                continue
            hands.append(TrackedHand(next_id, next_rect, lm, 1))
            next_id += 1
            added += 1
    ran = detections is not None
    new_state = TrackerState(
        tuple(hands),
        cfg,
        state.frame_index + 1,
        next_id,
        0 if ran else state.frames_since_detection + 1,
    )
    report = TrackStepReport(
        frame.timestamp,
        state.frame_index,
        tuple((h.id, h.last_landmarks) for h in hands),
        ran,
        added,
        phase.dropped,
    )
    return new_state, report


def track_step(
    state: TrackerState,
    frame: HandScene,
    backend: LandmarkBackend,
    detector: PalmDetector,
) -> tuple[TrackerState, TrackStepReport]:
    """One gated tracking step; the input state is never modified."""
    phase = landmark_phase(state, frame, backend)
    detections = detector.detect_palms(frame) if phase.run_detector else None
    return merge_phase(phase, detections, frame, backend)


def run_tracker(
    frames, backend: LandmarkBackend, detector: PalmDetector, config: TrackerConfig = TrackerConfig()
) -> list[TrackStepReport]:
    """Sequential reference loop over a stream of scenes."""
    state = TrackerState(config=config)
    reports = []
    for frame in frames:
        state, report = track_step(state, frame, backend, detector)
        reports.append(report)
    return reports


__all__ = [
    "Assignment", "LandmarkPhase", "TrackStepReport", "TrackedHand", "TrackerConfig", "TrackerState",
    "associate", "landmark_phase", "merge_phase", "needs_detection", "run_tracker", "track_step",
]
