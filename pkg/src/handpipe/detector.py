"""Single-shot palm detector geometry: square anchors, box coding, NMS, focal loss."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .types import NUM_DETECTION_KEYPOINTS, AxisAlignedBox, Detection, box_iou

DEFAULT_SCORE_THRESHOLD = 0.5
DEFAULT_IOU_THRESHOLD = 0.3
FOCAL_EPS = 1e-7


@dataclass(frozen=True)
class AnchorLayer:
    stride: int
    # One square anchor per scale factor at each cell.
    scales: tuple[float, ...] = (1.0,)

    @property
    def anchors_per_cell(self) -> int:
        return len(self.scales)


@dataclass(frozen=True)
class AnchorConfig:
    input_size: int = 192
    layers: tuple[AnchorLayer, ...] = (
        AnchorLayer(8, (1.0, 1.4)),
        AnchorLayer(16, (1.0, 1.26, 1.59, 2.0, 2.52, 3.17)),
    )

    def __post_init__(self):
        if self.input_size <= 0:
            raise ValueError("input_size must be positive")
        for layer in self.layers:
            if layer.stride <= 0 or self.input_size % layer.stride:
                raise ValueError(f"stride {layer.stride} does not divide input size {self.input_size}")
            if layer.anchors_per_cell < 1:
                raise ValueError("each layer needs at least one anchor per cell")

    @classmethod
    def from_dict(cls, data: dict) -> "AnchorConfig":
        layers = []
        for item in data.get("layers", []):
            if "scales" in item:
                scales = tuple(float(s) for s in item["scales"])
            else:
                scales = (1.0,) * int(item.get("anchors_per_cell", 1))
            layers.append(AnchorLayer(int(item["stride"]), scales))
        return cls(int(data.get("input_size", 192)), tuple(layers) or cls().layers)

    def to_dict(self) -> dict:
        return {
            "input_size": self.input_size,
            "layers": [{"stride": l.stride, "scales": list(l.scales)} for l in self.layers],
        }


@dataclass(frozen=True)
class Anchor:
    cx: float
    cy: float
    side: float

    def box(self) -> AxisAlignedBox:
        return AxisAlignedBox.from_center(self.cx, self.cy, self.side, self.side)


def generate_anchors(config: AnchorConfig = AnchorConfig()) -> list[Anchor]:
    """Square anchors, layer by layer, row-major over cells, scales innermost."""
    anchors = []
    for layer in config.layers:
        cells = config.input_size // layer.stride
        base = layer.stride / config.input_size
        for row in range(cells):
            cy = (row + 0.5) * layer.stride / config.input_size
            for col in range(cells):
                cx = (col + 0.5) * layer.stride / config.input_size
                for scale in layer.scales:
                    anchors.append(Anchor(cx, cy, base * scale))
    return anchors


def generate_anchor_boxes(
    config: AnchorConfig, aspect_ratios: Sequence[float] = (1.0,)
) -> list[AxisAlignedBox]:
    """Prior boxes with several aspect ratios per scale, for comparison with square-only anchors.

    Each square anchor of area side**2 is replaced by one box per ratio r = w/h
    with the same area.
    """
    boxes = []
    for anchor in generate_anchors(config):
        for r in aspect_ratios:
            w = anchor.side * np.sqrt(r)
            h = anchor.side / np.sqrt(r)
            boxes.append(AxisAlignedBox.from_center(anchor.cx, anchor.cy, float(w), float(h)))
    return boxes


def anchors_as_array(anchors: Sequence[Anchor]) -> np.ndarray:
    return np.array([(a.cx, a.cy, a.side) for a in anchors], dtype=float).reshape(-1, 3)


@dataclass(frozen=True, eq=False)
class RawDetectorOutput:
    """Per-anchor network outputs.

    Attributes:
        logits: (N,) presence logits.
        boxes: (N, 3) offsets (dx, dy, ds) in anchor-side units; ds is a log scale.
        keypoints: (N, 7, 2) keypoint offsets in anchor-side units.
    """

    logits: np.ndarray
    boxes: np.ndarray
    keypoints: np.ndarray = field(default=None)

    def __post_init__(self):
        logits = np.asarray(self.logits, dtype=float).reshape(-1)
        n = logits.shape[0]
        boxes = np.asarray(self.boxes, dtype=float).reshape(-1, 3) if n else np.zeros((0, 3))
        if self.keypoints is None:
            keypoints = np.zeros((n, NUM_DETECTION_KEYPOINTS, 2))
        else:
            keypoints = np.asarray(self.keypoints, dtype=float).reshape(-1, NUM_DETECTION_KEYPOINTS, 2)
        if boxes.shape[0] != n or keypoints.shape[0] != n:
            raise ValueError(
                f"raw output length mismatch: {n} logits, {boxes.shape[0]} boxes, "
                f"{keypoints.shape[0]} keypoint sets"
            )
        object.__setattr__(self, "logits", logits)
        object.__setattr__(self, "boxes", boxes)
        object.__setattr__(self, "keypoints", keypoints)

    def __len__(self) -> int:
        return self.logits.shape[0]


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    # exp overflow is harmless here: it saturates to 0 or 1.
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def logit(p: float) -> float:
    return float(np.log(p) - np.log1p(-p))


def decode_boxes(
    raw: RawDetectorOutput,
    anchors: Sequence[Anchor] | np.ndarray,
    score_threshold: float = DEFAULT_SCORE_THRESHOLD,
) -> list[Detection]:
    """Turn raw per-anchor outputs into square detections above the score threshold."""
    table = anchors if isinstance(anchors, np.ndarray) else anchors_as_array(anchors)
    if table.shape[0] != len(raw):
        raise ValueError(f"raw output has {len(raw)} entries but there are {table.shape[0]} anchors")
    scores = sigmoid(raw.logits)
    keep = np.flatnonzero(scores >= score_threshold)
    detections = []
    for i in keep:
        acx, acy, aside = table[i]
        dx, dy, ds = raw.boxes[i]
        cx = acx + dx * aside
        cy = acy + dy * aside
        side = aside * np.exp(ds)
        keypoints = table[i, :2] + raw.keypoints[i] * aside
        detections.append(
            Detection(
                AxisAlignedBox.from_center(float(cx), float(cy), float(side), float(side)),
                float(scores[i]),
                keypoints,
            )
        )
    return detections


def encode_boxes(gt: Detection, anchor: Anchor) -> tuple[float, float, float]:
    """Inverse of the box part of decode_boxes."""
    if anchor.side <= 0.0:
        raise ValueError("anchor side must be positive")
    cx, cy = gt.box.center
    return (
        (cx - anchor.cx) / anchor.side,
        (cy - anchor.cy) / anchor.side,
        float(np.log(gt.side / anchor.side)),
    )


def encode_keypoints(gt: Detection, anchor: Anchor) -> np.ndarray:
    if anchor.side <= 0.0:
        raise ValueError("anchor side must be positive")
    return (gt.keypoints - [anchor.cx, anchor.cy]) / anchor.side


def _iou_row(box: np.ndarray, others: np.ndarray) -> np.ndarray:
    iw = np.minimum(box[2], others[:, 2]) - np.maximum(box[0], others[:, 0])
    ih = np.minimum(box[3], others[:, 3]) - np.maximum(box[1], others[:, 1])
    inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
    union = (box[2] - box[0]) * (box[3] - box[1]) + (others[:, 2] - others[:, 0]) * (
        others[:, 3] - others[:, 1]
    ) - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where((inter > 0) & (union > 0), inter / union, 0.0)


def non_max_suppression(
    dets: Sequence[Detection],
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
    weighted: bool = False,
) -> list[Detection]:
    """Greedy NMS.

    Detections are visited by descending score (stable on ties) and kept when
    their IoU with every kept detection is below ``iou_threshold``. With
    ``weighted=True`` each kept box is replaced by the score-weighted mean of
    itself and the detections it suppressed.
    """
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    if not order:
        return []
    boxes = np.array([dets[i].box.as_array() for i in order])
    kept: list[int] = []
    suppressed_by: dict[int, list[int]] = {}
    for pos in range(len(order)):
        if kept:
            ious = _iou_row(boxes[pos], boxes[kept])
            hit = np.flatnonzero(ious >= iou_threshold)
            if hit.size:
                suppressed_by[kept[hit[0]]].append(pos)
                continue
        kept.append(pos)
        suppressed_by[pos] = []
    if not weighted:
        return [dets[order[pos]] for pos in kept]
    return [_blend([dets[order[p]] for p in [pos] + suppressed_by[pos]]) for pos in kept]


def _blend(group: list[Detection]) -> Detection:
    weights = np.array([d.score for d in group])
    if weights.sum() <= 0:
        return group[0]
    weights = weights / weights.sum()
    centers = np.array([d.box.center for d in group])
    sides = np.array([d.side for d in group])
    cx, cy = weights @ centers
    side = float(weights @ sides)
    keypoints = np.tensordot(weights, np.array([d.keypoints for d in group]), axes=1)
    return Detection(AxisAlignedBox.from_center(float(cx), float(cy), side, side), group[0].score, keypoints)


def focal_loss(p, y, alpha: float = 0.25, gamma: float = 2.0):
    """Binary focal loss -alpha * (1 - p_t)**gamma * log(p_t).

    ``p`` is clamped to [1e-7, 1 - 1e-7]. Accepts scalars or arrays; returns
    a float for scalar input.
    """
    p = np.clip(np.asarray(p, dtype=float), FOCAL_EPS, 1.0 - FOCAL_EPS)
    y = np.asarray(y)
    p_t = np.where(y == 1, p, 1.0 - p)
    loss = -alpha * (1.0 - p_t) ** gamma * np.log(p_t)
    return float(loss) if loss.ndim == 0 else loss


def binary_cross_entropy(p, y):
    p = np.clip(np.asarray(p, dtype=float), FOCAL_EPS, 1.0 - FOCAL_EPS)
    y = np.asarray(y)
    loss = -np.where(y == 1, np.log(p), np.log(1.0 - p))
    return float(loss) if loss.ndim == 0 else loss


__all__ = [
    "Anchor", "AnchorConfig", "AnchorLayer", "RawDetectorOutput", "anchors_as_array",
    "binary_cross_entropy", "box_iou", "decode_boxes", "encode_boxes", "encode_keypoints",
    "focal_loss", "generate_anchor_boxes", "generate_anchors", "logit", "non_max_suppression",
    "sigmoid",
]
