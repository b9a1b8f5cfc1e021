"""Static gesture recognition: finger states from accumulated joint angles, then a table lookup."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .types import FINGER_CHAINS, FINGERS, INDEX_TIP, THUMB_TIP, HandLandmarks

STRAIGHT_MAX_DEG = 60.0
THUMB_STRAIGHT_MAX_DEG = 80.0
BENT_MIN_DEG = 120.0
OK_TIP_DISTANCE = 0.2


class FingerStatus(str, Enum):
    STRAIGHT = "Straight"
    BENT = "Bent"
    UNKNOWN = "Unknown"


class GestureLabel(str, Enum):
    OPEN_PALM = "OPEN_PALM"
    FIST = "FIST"
    POINTING_UP = "POINTING_UP"
    VICTORY = "VICTORY"
    THUMBS_UP = "THUMBS_UP"
    OK = "OK"
    UNKNOWN = "UNKNOWN"


@dataclass(frozen=True)
class FingerState:
    """Per-finger status and accumulated flexion (degrees), in FINGERS order."""

    status: tuple[FingerStatus, ...]
    flexion_deg: tuple[float, ...]

    def __getitem__(self, finger: str) -> FingerStatus:
        return self.status[FINGERS.index(finger)]

    @property
    def pattern(self) -> str:
        return "".join(s.value[0] for s in self.status)


def accumulated_flexion(lm: HandLandmarks | np.ndarray, chain: Sequence[int] | str) -> float:
    """Sum of bend angles (degrees) between successive bones of a finger chain, in the image plane."""
    if isinstance(chain, str):
        chain = FINGER_CHAINS[chain]
    pts = lm.points[:, :2] if isinstance(lm, HandLandmarks) else np.asarray(lm, dtype=float)[:, :2]
    bones = np.diff(pts[list(chain)], axis=0)
    norms = np.linalg.norm(bones, axis=1)
    if np.any(norms <= 0.0):
        raise ValueError("zero-length bone in finger chain")
    unit = bones / norms[:, None]
    cosines = np.clip(np.sum(unit[:-1] * unit[1:], axis=1), -1.0, 1.0)
    return float(np.degrees(np.arccos(cosines)).sum())


def accumulated_flexion_3d(joints: np.ndarray, chain: Sequence[int] | str) -> float:
    """Same as accumulated_flexion but over 3D joint positions."""
    if isinstance(chain, str):
        chain = FINGER_CHAINS[chain]
    bones = np.diff(np.asarray(joints, dtype=float)[list(chain)], axis=0)
    unit = bones / np.linalg.norm(bones, axis=1)[:, None]
    cosines = np.clip(np.sum(unit[:-1] * unit[1:], axis=1), -1.0, 1.0)
    return float(np.degrees(np.arccos(cosines)).sum())


def finger_states(
    lm: HandLandmarks,
    straight_max: float = STRAIGHT_MAX_DEG,
    bent_min: float = BENT_MIN_DEG,
    thumb_straight_max: float = THUMB_STRAIGHT_MAX_DEG,
) -> FingerState:
    statuses = []
    angles = []
    for finger in FINGERS:
        angle = accumulated_flexion(lm, FINGER_CHAINS[finger])
        limit = thumb_straight_max if finger == "thumb" else straight_max
        if angle < limit:
            statuses.append(FingerStatus.STRAIGHT)
        elif angle > bent_min:
            statuses.append(FingerStatus.BENT)
        else:
            statuses.append(FingerStatus.UNKNOWN)
        angles.append(angle)
    return FingerState(tuple(statuses), tuple(angles))


@dataclass(frozen=True)
class GestureRule:
    """Pattern over (thumb, index, middle, ring, pinky): S, B, U or * (any)."""

    pattern: str
    label: GestureLabel

    def __post_init__(self):
        if len(self.pattern) != 5 or any(c not in "SBU*" for c in self.pattern):
            raise ValueError(f"bad gesture pattern {self.pattern!r}")

    def matches(self, states: FingerState) -> bool:
        return all(p == "*" or p == s for p, s in zip(self.pattern, states.pattern))


DEFAULT_RULES = (
    GestureRule("SSSSS", GestureLabel.OPEN_PALM),
    GestureRule("BBBBB", GestureLabel.FIST),
    GestureRule("BSBBB", GestureLabel.POINTING_UP),
    GestureRule("BSSBB", GestureLabel.VICTORY),
    GestureRule("SBBBB", GestureLabel.THUMBS_UP),
)


@dataclass(frozen=True)
class GestureTable:
    """Ordered rule table; first match wins, otherwise UNKNOWN.

    The OK sign is geometric rather than a state pattern: thumb and index tips
    closer than ``ok_tip_distance`` palm sizes with middle, ring and pinky
    straight. It is checked before the table because the curled index and
    thumb of an OK sign often sit in the Unknown band.
    """

    rules: tuple[GestureRule, ...] = DEFAULT_RULES
    ok_tip_distance: float = OK_TIP_DISTANCE
    ok_enabled: bool = True

    @classmethod
    def from_rows(cls, rows: Sequence[Mapping], ok_tip_distance: float = OK_TIP_DISTANCE) -> "GestureTable":
        rules = tuple(GestureRule(str(r["pattern"]), GestureLabel(r["label"])) for r in rows)
        return cls(rules, ok_tip_distance)

    def classify(self, states: FingerState, lm: HandLandmarks) -> GestureLabel:
        if self.ok_enabled and states.pattern[2:] == "SSS":
            palm = lm.palm_size()
            gap = float(np.linalg.norm(lm.points[THUMB_TIP, :2] - lm.points[INDEX_TIP, :2]))
            if palm > 0.0 and gap < self.ok_tip_distance * palm:
                return GestureLabel.OK
        if "U" in states.pattern and not any("U" in r.pattern for r in self.rules):
            return GestureLabel.UNKNOWN
        for rule in self.rules:
            if rule.matches(states):
                return rule.label
        return GestureLabel.UNKNOWN


DEFAULT_TABLE = GestureTable()


def classify_gesture(states: FingerState, lm: HandLandmarks, table: GestureTable = DEFAULT_TABLE) -> GestureLabel:
    return table.classify(states, lm)


def recognize(lm: HandLandmarks, table: GestureTable = DEFAULT_TABLE) -> GestureLabel:
    """Finger states then table lookup, in one call."""
    return table.classify(finger_states(lm), lm)


FAMILY_LABELS = {
    "open": GestureLabel.OPEN_PALM,
    "fist": GestureLabel.FIST,
    "point": GestureLabel.POINTING_UP,
    "victory": GestureLabel.VICTORY,
    "thumbs_up": GestureLabel.THUMBS_UP,
    "ok": GestureLabel.OK,
}
