"""Pipeline configuration loaded from JSON."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from . import crop
from .backend import OracleLandmarkBackend, OraclePalmDetector, RawOutputDetector, Tier
from .detector import DEFAULT_IOU_THRESHOLD, DEFAULT_SCORE_THRESHOLD, AnchorConfig
from .tracker import TrackerConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    """Everything needed to assemble the tracking pipeline.

    Crop expansion and shift factors are tuning guesses. ``landmark_noise``
    overrides the tier's noise level (0 gives an exact oracle).
    """

    seed: int = 0
    anchors: AnchorConfig = AnchorConfig()
    score_threshold: float = DEFAULT_SCORE_THRESHOLD
    nms_iou_threshold: float = DEFAULT_IOU_THRESHOLD
    weighted_nms: bool = False
    presence_threshold: float = 0.5
    association_iou: float = 0.5
    detection_expand: float = crop.DEFAULT_DETECTION_EXPAND
    detection_shift: float = crop.DEFAULT_DETECTION_SHIFT
    landmark_expand: float = crop.DEFAULT_LANDMARK_EXPAND
    max_hands: int = 2
    redetect_interval: int | None = None
    gating: bool = True
    tier: Tier = Tier.FULL
    landmark_noise: float | None = None
    detector_noise: float = 0.0
    simulate_latency: bool = False
    detector_latency_ms: float = 0.0
    graph_path: str | None = None
    raw_detector_path: str | None = None
    gesture_table: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "tier", Tier(self.tier))
        for name in ("score_threshold", "nms_iou_threshold", "presence_threshold", "association_iou"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {value}")
        if self.max_hands < 1:
            raise ConfigError("max_hands must be at least 1")
        if self.seed is None:
            raise ConfigError("seed is required")

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known - {"schema"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values = {k: v for k, v in data.items() if k in known}
        try:
            if "anchors" in values:
                values["anchors"] = AnchorConfig.from_dict(values["anchors"])
            if "gesture_table" in values:
                values["gesture_table"] = tuple(dict(r) for r in values["gesture_table"])
            return cls(**values)
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path: str | Path | None) -> "PipelineConfig":
        if path is None:
            return cls()
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["anchors"] = self.anchors.to_dict()
        out["tier"] = self.tier.value
        out["gesture_table"] = list(self.gesture_table)
        return out

    def with_(self, **changes) -> "PipelineConfig":
        return replace(self, **changes)

    def tracker_config(self) -> TrackerConfig:
        return TrackerConfig(
            max_hands=self.max_hands,
            presence_threshold=self.presence_threshold,
            association_iou=self.association_iou,
            detection_expand=self.detection_expand,
            detection_shift=self.detection_shift,
            landmark_expand=self.landmark_expand,
            redetect_interval=self.redetect_interval,
            gating=self.gating,
        )

    def make_backend(self) -> OracleLandmarkBackend:
        return OracleLandmarkBackend(
            self.tier,
            noise=self.landmark_noise,
            seed=self.seed,
            simulate_latency=self.simulate_latency,
            landmark_expand=self.landmark_expand,
            detection_expand=self.detection_expand,
            detection_shift=self.detection_shift,
        )

    def make_detector(self) -> OraclePalmDetector:
        kwargs = dict(
            score_threshold=self.score_threshold,
            iou_threshold=self.nms_iou_threshold,
            noise=self.detector_noise,
            seed=self.seed,
            weighted_nms=self.weighted_nms,
            simulate_latency_ms=self.detector_latency_ms,
        )
        if self.raw_detector_path:
            from .io import read_raw_outputs

            return RawOutputDetector(read_raw_outputs(self.raw_detector_path), self.anchors, **kwargs)
        return OraclePalmDetector(self.anchors, **kwargs)
