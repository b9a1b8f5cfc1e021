"""Hand-tracking calculators and the graph that wires them together.

The shipped graph has a landmark stage that re-localizes tracked hands and
decides whether detection is needed, a gate that passes the frame to the
palm detector only then, and a merge stage whose tracker state loops back
to the landmark stage for the next frame.
"""

from __future__ import annotations

from functools import partial
from importlib import resources
from pathlib import Path
from typing import Iterable

from .backend import LandmarkBackend, PalmDetector
from .config import PipelineConfig
from .graph import (
    Calculator,
    GateCalculator,
    GraphSpec,
    RunResult,
    parse_graph_text,
    run_graph,
)
from .tracker import (
    TrackerConfig,
    TrackerState,
    TrackStepReport,
    landmark_phase,
    merge_phase,
)
from .types import HandScene


class HandLandmarkCalculator(Calculator):
    INPUTS = {"scene": "HandScene", "prev_state": "TrackerState"}
    OUTPUTS = {"phase": "LandmarkPhase", "allow_detection": "Bool"}

    def __init__(self, backend: LandmarkBackend, config: TrackerConfig):
        self.backend = backend
        self.config = config

    def process(self, timestamp, inputs):
        state = inputs["prev_state"] or TrackerState(config=self.config)
        phase = landmark_phase(state, inputs["scene"], self.backend)
        return {"phase": phase, "allow_detection": phase.run_detector}


class PalmDetectionCalculator(Calculator):
    INPUTS = {"scene": "HandScene"}
    OUTPUTS = {"detections": "Detections"}

    def __init__(self, detector: PalmDetector):
        self.detector = detector

    def process(self, timestamp, inputs):
        return {"detections": self.detector.detect_palms(inputs["scene"])}


class TrackMergeCalculator(Calculator):
    INPUTS = {"phase": "LandmarkPhase", "detections": "Detections", "scene": "HandScene"}
    OUTPUTS = {"state": "TrackerState", "report": "TrackStepReport"}

    def __init__(self, backend: LandmarkBackend):
        self.backend = backend

    def process(self, timestamp, inputs):
        state, report = merge_phase(inputs["phase"], inputs["detections"], inputs["scene"], self.backend)
        return {"state": state, "report": report}


def calculator_registry(backend: LandmarkBackend, detector: PalmDetector, tracker_config: TrackerConfig):
    return {
        "HandLandmarkCalculator": lambda: (
            HandLandmarkCalculator, partial(HandLandmarkCalculator, backend, tracker_config)
        ),
        "GateCalculator": lambda: (GateCalculator, GateCalculator),
        "PalmDetectionCalculator": lambda: (PalmDetectionCalculator, partial(PalmDetectionCalculator, detector)),
        "TrackMergeCalculator": lambda: (TrackMergeCalculator, partial(TrackMergeCalculator, backend)),
    }


def default_graph_text() -> str:
    return resources.files("handpipe").joinpath("graphs/hand_tracking.graph").read_text()


def load_graph(
    config: PipelineConfig = PipelineConfig(),
    path: str | Path | None = None,
    backend: LandmarkBackend | None = None,
    detector: PalmDetector | None = None,
) -> GraphSpec:
    """Parse a graph file (the shipped hand-tracking graph by default) bound to the config's components."""
    path = path or config.graph_path
    text = Path(path).read_text() if path else default_graph_text()
    registry = calculator_registry(
        backend or config.make_backend(), detector or config.make_detector(), config.tracker_config()
    )
    return parse_graph_text(text, registry)


def track_with_graph(
    scenes: Iterable[HandScene],
    spec: GraphSpec,
    max_workers: int = 4,
    scheduler_seed: int | None = None,
    in_flight: int = 4,
) -> tuple[list[TrackStepReport], RunResult]:
    result = run_graph(
        spec,
        ((s.timestamp, {"scene": s}) for s in scenes),
        max_workers=max_workers,
        in_flight=in_flight,
        scheduler_seed=scheduler_seed,
    )
    return [p.payload for p in result.streams["report"]], result
