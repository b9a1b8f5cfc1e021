"""Evaluation: detection AP, palm-normalized landmark error, and pipeline benchmarks."""

from __future__ import annotations

import time
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .io import qa
from .pipeline import load_graph, track_with_graph
from .simulator import palm_detection_from_xy, project
from .types import AxisAlignedBox, Detection, HandLandmarks, HandScene, box_iou

DEFAULT_MATCH_IOU = 0.5


def _as_scored_box(pred) -> tuple[AxisAlignedBox, float]:
    if isinstance(pred, Detection):
        return pred.box, pred.score
    box, score = pred
    return box, float(score)


def match_frame(preds: Sequence[tuple[AxisAlignedBox, float]], gts: Sequence[AxisAlignedBox], iou_threshold: float):
    """Greedy matching in descending score order (ties keep input order).

    Each prediction takes the best-IoU GT that is still unmatched, if that IoU
    reaches the threshold. Returns one matched GT index (or -1) per prediction.
    """
    order = sorted(range(len(preds)), key=lambda i: -preds[i][1])
    taken = set()
    result = [-1] * len(preds)
    for i in order:
        best, best_iou = -1, -1.0
        for j, gt in enumerate(gts):
            if j in taken:
                continue
            iou = box_iou(preds[i][0], gt)
            if iou >= iou_threshold and iou > best_iou:
                best, best_iou = j, iou
        if best >= 0:
            taken.add(best)
            result[i] = best
    return result


def precision_recall(preds_per_frame, gts_per_frame, iou_threshold: float = DEFAULT_MATCH_IOU):
    """Cumulative precision and recall over all predictions ranked by score."""
    scored = []
    num_gt = 0
    for f, (preds, gts) in enumerate(zip(preds_per_frame, gts_per_frame, strict=True)):
        preds = [_as_scored_box(p) for p in preds]
        gts = [g.box if isinstance(g, Detection) else g for g in gts]
        num_gt += len(gts)
        matches = match_frame(preds, gts, iou_threshold)
        scored.extend((score, f, i, m >= 0) for i, ((_, score), m) in enumerate(zip(preds, matches)))
    # Global ranking: score descending, then frame and input order.
    scored.sort(key=lambda s: (-s[0], s[1], s[2]))
    tp = np.cumsum([s[3] for s in scored], dtype=float)
    ranks = np.arange(1, len(scored) + 1, dtype=float)
    precision = tp / ranks if len(scored) else np.zeros(0)
    recall = tp / num_gt if num_gt else np.zeros(len(scored))
    return precision, recall, num_gt


def average_precision(preds_per_frame, gts_per_frame, iou_threshold: float = DEFAULT_MATCH_IOU) -> float:
    """Area under the all-points interpolated precision/recall curve.

    Args:
        preds_per_frame: per frame, a list of Detections or (box, score) pairs.
        gts_per_frame: per frame, a list of ground-truth boxes (or Detections).
        iou_threshold: minimum IoU for a true positive.

    Returns:
        AP in [0, 1]. With no ground truth at all, 1.0 if there are also no
        predictions and 0.0 otherwise.
    """
    precision, recall, num_gt = precision_recall(preds_per_frame, gts_per_frame, iou_threshold)
    if num_gt == 0:
        return 1.0 if len(precision) == 0 else 0.0
    if len(precision) == 0:
        return 0.0
    r = np.concatenate([[0.0], recall])
    p = np.concatenate([precision, [0.0]])
    # Precision envelope: best precision at any recall >= r.
    envelope = np.maximum.accumulate(p[::-1])[::-1][:-1]
    return float(np.sum((r[1:] - r[:-1]) * envelope))


def normalized_landmark_error(pred: HandLandmarks, gt: HandLandmarks) -> float:
    """Mean squared 2D landmark error over the squared GT palm size (fraction; x100 for percent)."""
    palm = gt.palm_size()
    if not palm > 0.0:
        raise ValueError("ground-truth palm size is zero")
    sq = np.sum((np.asarray(pred.xy) - np.asarray(gt.xy)) ** 2, axis=1)
    return float(np.mean(sq) / palm**2)


def pred_palm_box(lm: HandLandmarks) -> Detection:
    """Palm detection implied by predicted landmarks, scored by presence."""
    return palm_detection_from_xy(lm.xy, lm.presence)


@dataclass
class EvalRecord:
    timestamp: int
    gt: list  # (HandLandmarks, Detection) per GT hand
    pred: list  # (id, HandLandmarks) per tracked hand
    matches: list  # (pred index, gt index)
    detector_ran: bool


def _pair_hands(pred_boxes, gt_boxes, iou_threshold):
    pairs = sorted(
        ((box_iou(p, g), i, j) for i, p in enumerate(pred_boxes) for j, g in enumerate(gt_boxes)),
        key=lambda t: (-t[0], t[1], t[2]),
    )
    used_p, used_g, out = set(), set(), []
    for iou, i, j in pairs:
        if iou < iou_threshold:
            break
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        out.append((i, j))
    return sorted(out)


def evaluate(track_records, scenes: Sequence[HandScene], iou_threshold: float = DEFAULT_MATCH_IOU) -> dict:
    """Metrics for a tracking run against the scenes it was run on.

    ``track_records`` are io.TrackRecord values (or anything with timestamp,
    detector_ran and hands carrying .id/.landmarks/.gesture). Timestamps must
    line up one-to-one with the scenes; a mismatch raises ValueError.
    """
    track_records = list(track_records)
    if [r.timestamp for r in track_records] != [s.timestamp for s in scenes]:
        raise ValueError("track and scene timestamps do not match")
    records = []
    preds_per_frame, gts_per_frame = [], []
    errors, handed_ok = [], 0
    gestures = Counter()
    for rec, scene in zip(track_records, scenes):
        # Compare at stream precision: track files store landmarks with 9 significant digits.
        truth = [(lm.replace(points=np.array(qa(lm.points))), det) for lm, det in project(scene)]
        pred_boxes = [pred_palm_box(h.landmarks) for h in rec.hands]
        gt_boxes = [det.box for _, det in truth]
        preds_per_frame.append(pred_boxes)
        gts_per_frame.append(gt_boxes)
        matches = _pair_hands([d.box for d in pred_boxes], gt_boxes, iou_threshold)
        for i, j in matches:
            pred_lm, gt_lm = rec.hands[i].landmarks, truth[j][0]
            errors.append(normalized_landmark_error(pred_lm, gt_lm))
            handed_ok += pred_lm.label == gt_lm.label
        for h in rec.hands:
            gestures[str(getattr(h.gesture, "value", h.gesture))] += 1
        records.append(EvalRecord(rec.timestamp, truth, [(h.id, h.landmarks) for h in rec.hands], matches, rec.detector_ran))
    n_frames = len(records)
    n_gt = sum(len(g) for g in gts_per_frame)
    n_pred = sum(len(p) for p in preds_per_frame)
    n_matched = len(errors)
    detector_runs = sum(r.detector_ran for r in records)
    mean_err = float(np.mean(errors)) if errors else 0.0
    return {
        "frames": n_frames,
        "detector_invocations": detector_runs,
        "detector_rate": detector_runs / n_frames if n_frames else 0.0,
        "ap": average_precision(preds_per_frame, gts_per_frame, iou_threshold),
        "ap_iou_threshold": iou_threshold,
        "gt_hands": n_gt,
        "predicted_hands": n_pred,
        "matched_hands": n_matched,
        "missed_hands": n_gt - n_matched,
        "false_positive_hands": n_pred - n_matched,
        "normalized_error": mean_err,
        "normalized_error_percent": 100.0 * mean_err,
        "normalized_error_max": float(np.max(errors)) if errors else 0.0,
        "handedness_accuracy": handed_ok / n_matched if n_matched else 1.0,
        "gestures": dict(sorted(gestures.items())),
    }


def _percentiles(samples: Sequence[float]) -> dict:
    if not samples:
        return {"count": 0, "p50_ms": 0.0, "p95_ms": 0.0, "mean_ms": 0.0}
    ms = np.asarray(samples) * 1000.0
    return {
        "count": int(ms.size),
        "p50_ms": float(np.percentile(ms, 50)),
        "p95_ms": float(np.percentile(ms, 95)),
        "mean_ms": float(ms.mean()),
    }


def bench_once(spec, scenes: Sequence[HandScene], repetitions: int = 1, max_workers: int = 0) -> dict:
    """Time a graph over a sequence; runs inline by default to keep timings stable."""
    if repetitions < 1:
        raise ValueError("repetitions must be at least 1")
    timings: dict[str, list[float]] = {}
    wall, reports = 0.0, None
    fires = {}
    for _ in range(repetitions):
        start = time.perf_counter()
        reports, result = track_with_graph(scenes, spec, max_workers=max_workers)
        wall += time.perf_counter() - start
        for node, samples in result.timings.items():
            timings.setdefault(node, []).extend(samples)
        fires = result.fire_counts
    frames = len(scenes)
    detector_runs = sum(r.detector_ran for r in reports)
    return {
        "frames": frames,
        "repetitions": repetitions,
        "detector_invocations": detector_runs,
        "detector_rate": detector_runs / frames if frames else 0.0,
        "fire_counts": dict(fires),
        "stages": {node: _percentiles(s) for node, s in sorted(timings.items())},
        "wall_time_s": wall,
        "throughput_fps": frames * repetitions / wall if wall > 0 else 0.0,
    }


def bench_pipeline(config, scenes: Sequence[HandScene], repetitions: int = 3, graph_path=None) -> dict:
    """Benchmark the configured pipeline, paired with the same run with gating disabled."""
    scenes = list(scenes)
    gated = bench_once(load_graph(config.with_(gating=True), graph_path), scenes, repetitions)
    ungated = bench_once(load_graph(config.with_(gating=False), graph_path), scenes, repetitions)
    return {
        "gating": gated,
        "no_gating": ungated,
        "speedup": gated["throughput_fps"] / ungated["throughput_fps"] if ungated["throughput_fps"] else 0.0,
    }
