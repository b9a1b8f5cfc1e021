"""On-disk formats: versioned JSONL streams and JSON reports.

Every stream file starts with a header line ``{"schema": "handpipe/v1"}``
followed by one record per line. Floats are written with 9 significant
digits so identical runs give byte-identical files; ``q`` and ``qa`` apply the
same rounding in memory, which makes parse(emit(x)) == x exact for
quantized values.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Iterator, TextIO

import numpy as np

from .detector import RawDetectorOutput
from .gesture import GestureLabel, GestureTable, recognize
from .tracker import TrackStepReport
from .types import Camera, Handedness, HandLandmarks, HandScene, SceneHand

SCHEMA = "handpipe/v1"
HEADER = {"schema": SCHEMA}
SIG_DIGITS = 9


class FormatError(ValueError):
    """Malformed input file; carries the 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


def q(x: float) -> float:
    """Round to 9 significant digits."""
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot serialize non-finite value {x}")
    return float(f"{x:.{SIG_DIGITS}g}")


def qa(values) -> list:
    """Quantize a nested array to nested lists of floats."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0:
        return q(arr)
    return [qa(v) for v in arr]


def dumps(record: dict) -> str:
    return json.dumps(record, separators=(",", ":"), allow_nan=False)


def write_jsonl(path_or_file: str | Path | TextIO, records: Iterable[dict]) -> int:
    """Write a header plus records; returns the number of records."""
    if isinstance(path_or_file, (str, Path)):
        with open(path_or_file, "w", encoding="utf-8", newline="\n") as f:
            return write_jsonl(f, records)
    f = path_or_file
    f.write(dumps(HEADER) + "\n")
    n = 0
    for record in records:
        f.write(dumps(record) + "\n")
        n += 1
    return n


def read_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    """Yield (line number, record) for every data line after the header."""
    try:
        f = open(path, encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot open {path}: {exc}") from None
    with f:
        first = True
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON: {exc.msg}", lineno) from None
            if first:
                first = False
                if not isinstance(obj, dict) or obj.get("schema") != SCHEMA:
                    raise FormatError(f"expected header {dumps(HEADER)}", lineno)
                continue
            if not isinstance(obj, dict):
                raise FormatError("record must be a JSON object", lineno)
            yield lineno, obj
        if first:
            raise FormatError("missing schema header")


def _require(record: dict, key: str, line: int | None):
    if key not in record:
        raise FormatError(f"missing field {key!r}", line)
    return record[key]


def _points(value, shape: tuple[int, ...], field: str, line: int | None) -> np.ndarray:
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise FormatError(f"field {field!r} is not numeric", line) from None
    if arr.shape != shape:
        raise FormatError(f"field {field!r} has shape {arr.shape}, expected {shape}", line)
    if not np.all(np.isfinite(arr)):
        raise FormatError(f"field {field!r} has non-finite values", line)
    return arr


# Scenes

def camera_to_record(camera: Camera) -> dict:
    return {
        "fx": q(camera.fx), "fy": q(camera.fy), "cx": q(camera.cx), "cy": q(camera.cy),
        "w": int(camera.width), "h": int(camera.height),
    }


def scene_to_record(scene: HandScene) -> dict:
    return {
        "t_us": int(scene.timestamp),
        "hands": [{"joints3d": qa(h.joints3d), "handedness": h.handedness.value} for h in scene.hands],
        "camera": camera_to_record(scene.camera),
    }


def scene_from_record(record: dict, line: int | None = None) -> HandScene:
    try:
        cam = _require(record, "camera", line)
        camera = Camera(cam["fx"], cam["fy"], cam["cx"], cam["cy"], int(cam["w"]), int(cam["h"]))
        hands = []
        for i, hand in enumerate(_require(record, "hands", line)):
            joints = _points(_require(hand, "joints3d", line), (21, 3), f"hands[{i}].joints3d", line)
            hands.append(SceneHand(joints, Handedness(_require(hand, "handedness", line))))
        return HandScene(tuple(hands), camera, int(_require(record, "t_us", line)))
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad scene record: {exc}", line) from None


def quantize_scene(scene: HandScene) -> HandScene:
    return scene_from_record(scene_to_record(scene))


def write_scenes(path, scenes: Iterable[HandScene]) -> int:
    return write_jsonl(path, (scene_to_record(s) for s in scenes))


def read_scenes(path) -> list[HandScene]:
    return [scene_from_record(rec, line) for line, rec in read_jsonl(path)]


# Tracking output

@dataclass(frozen=True)
class TrackedOutput:
    id: int
    landmarks: HandLandmarks
    gesture: GestureLabel


@dataclass(frozen=True)
class TrackRecord:
    """One frame of tracker output as stored on disk."""

    timestamp: int
    detector_ran: bool
    hands: tuple[TrackedOutput, ...]


def landmarks_to_record(hand_id: int, lm: HandLandmarks, gesture: GestureLabel) -> dict:
    return {
        "id": int(hand_id),
        "presence": q(lm.presence),
        "handedness": q(lm.handedness),
        "landmarks": qa(lm.points),
        "gesture": GestureLabel(gesture).value,
    }


def track_record(report: TrackStepReport, table: GestureTable | None = None) -> TrackRecord:
    """Quantized record for a report; gestures are computed from the quantized landmarks."""
    table = table or GestureTable()
    hands = []
    for hand_id, lm in report.outputs:
        lm = HandLandmarks(np.array(qa(lm.points)), q(lm.presence), q(lm.handedness))
        hands.append(TrackedOutput(hand_id, lm, recognize(lm, table)))
    return TrackRecord(report.timestamp, report.detector_ran, tuple(hands))


def track_to_record(record: TrackRecord) -> dict:
    return {
        "t_us": int(record.timestamp),
        "detector_ran": bool(record.detector_ran),
        "hands": [landmarks_to_record(h.id, h.landmarks, h.gesture) for h in record.hands],
    }


def track_from_record(record: dict, line: int | None = None) -> TrackRecord:
    try:
        hands = []
        for i, hand in enumerate(_require(record, "hands", line)):
            points = _points(_require(hand, "landmarks", line), (21, 3), f"hands[{i}].landmarks", line)
            lm = HandLandmarks(points, float(hand["presence"]), float(hand["handedness"]))
            hands.append(TrackedOutput(int(hand["id"]), lm, GestureLabel(hand.get("gesture", "UNKNOWN"))))
        ran = _require(record, "detector_ran", line)
        if not isinstance(ran, bool):
            raise FormatError("field 'detector_ran' must be a boolean", line)
        return TrackRecord(int(_require(record, "t_us", line)), ran, tuple(hands))
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad track record: {exc}", line) from None


def write_tracks(path, records: Iterable[TrackRecord]) -> int:
    return write_jsonl(path, (track_to_record(r) for r in records))


def read_tracks(path) -> list[TrackRecord]:
    return [track_from_record(rec, line) for line, rec in read_jsonl(path)]


# Raw detector outputs (for plugging in external models)

def raw_output_to_record(timestamp: int, raw: RawDetectorOutput) -> dict:
    return {
        "t_us": int(timestamp),
        "logits": qa(raw.logits),
        "boxes": qa(raw.boxes),
        "keypoints": qa(raw.keypoints),
    }


def raw_output_from_record(record: dict, line: int | None = None) -> tuple[int, RawDetectorOutput]:
    try:
        logits = np.array(_require(record, "logits", line), dtype=float)
        n = logits.shape[0] if logits.ndim == 1 else -1
        if n < 0:
            raise FormatError("field 'logits' must be a flat list", line)
        boxes = _points(_require(record, "boxes", line), (n, 3), "boxes", line)
        keypoints = _points(_require(record, "keypoints", line), (n, 7, 2), "keypoints", line)
        return int(_require(record, "t_us", line)), RawDetectorOutput(logits, boxes, keypoints)
    except FormatError:
        raise
    except (TypeError, ValueError) as exc:
        raise FormatError(f"bad raw output record: {exc}", line) from None


def write_raw_outputs(path, outputs: Iterable[tuple[int, RawDetectorOutput]]) -> int:
    return write_jsonl(path, (raw_output_to_record(t, raw) for t, raw in outputs))


def read_raw_outputs(path) -> dict[int, RawDetectorOutput]:
    out = {}
    for line, rec in read_jsonl(path):
        t, raw = raw_output_from_record(rec, line)
        if t in out:
            raise FormatError(f"duplicate timestamp {t}", line)
        out[t] = raw
    return out


# Reports

def load_schema(name: str) -> dict:
    return json.loads(resources.files("handpipe").joinpath(f"schemas/{name}.schema.json").read_text())


def write_report(path_or_file, report: dict) -> None:
    text = json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n"
    if isinstance(path_or_file, (str, Path)):
        Path(path_or_file).write_text(text)
    else:
        path_or_file.write(text)


def round_floats(obj: Any) -> Any:
    """Quantize every float in a JSON-like structure."""
    if isinstance(obj, float):
        return q(obj)
    if isinstance(obj, dict):
        return {k: round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round_floats(v) for v in obj]
    return obj
