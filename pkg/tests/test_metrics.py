import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import brute_force_ap

from handpipe.config import PipelineConfig
from handpipe.io import track_record
from handpipe.metrics import (
    average_precision,
    bench_pipeline,
    evaluate,
    match_frame,
    normalized_landmark_error,
)
from handpipe.simulator import (
    make_scene,
    project,
    run_script,
    sample_pose,
    steady_hand_script,
)
from handpipe.tracker import run_tracker
from handpipe.types import AxisAlignedBox, HandLandmarks, HandScene

BOX = AxisAlignedBox(0.1, 0.1, 0.3, 0.3)


def test_ap_single_exact_prediction():
    assert average_precision([[(BOX, 0.9)]], [[BOX]]) == 1.0


def test_ap_no_predictions():
    assert average_precision([[]], [[BOX]]) == 0.0


def test_ap_without_ground_truth():
    assert average_precision([[]], [[]]) == 1.0
    assert average_precision([[(BOX, 0.5)]], [[]]) == 0.0


def test_ap_false_positive_ranked_first():
    far = AxisAlignedBox(0.6, 0.6, 0.8, 0.8)
    # Ranks: FP then TP, so precision at full recall is 1/2.
    assert average_precision([[(far, 0.9), (BOX, 0.8)]], [[BOX]]) == pytest.approx(0.5)
    assert average_precision([[(BOX, 0.9), (far, 0.8)]], [[BOX]]) == pytest.approx(1.0)


def test_duplicate_prediction_cannot_match_twice():
    assert match_frame([(BOX, 0.9), (BOX, 0.8)], [BOX], 0.5) == [0, -1]


def box_strategy():
    return st.tuples(
        st.floats(0.0, 0.8), st.floats(0.0, 0.8), st.floats(0.05, 0.3), st.floats(0.05, 0.3)
    ).map(lambda t: AxisAlignedBox(t[0], t[1], t[0] + t[2], t[1] + t[3]))


# Scores on a grid keep monotone transforms strictly monotone in floating point.
scores = st.integers(0, 1000).map(lambda k: k / 1000)


def jitter(box, d):
    return AxisAlignedBox(box.xmin + d, box.ymin + d, box.xmax + d, box.ymax + d)


@st.composite
def ap_instance(draw):
    frames = []
    for _ in range(20):
        gts = draw(st.lists(box_strategy(), max_size=5))
        preds = []
        for g in gts:
            if draw(st.booleans()):
                preds.append((jitter(g, draw(st.floats(-0.05, 0.05))), draw(scores)))
        extra = draw(st.lists(st.tuples(box_strategy(), scores), max_size=5 - len(preds)))
        frames.append((preds + extra, gts))
    return frames


def as_tuples(frames):
    preds = [[((b.xmin, b.ymin, b.xmax, b.ymax), s) for b, s in p] for p, _ in frames]
    gts = [[(b.xmin, b.ymin, b.xmax, b.ymax) for b in g] for _, g in frames]
    return preds, gts


@settings(max_examples=100)
@given(ap_instance(), st.sampled_from([0.3, 0.5, 0.75]))
def test_ap_matches_brute_force(frames, threshold):
    preds, gts = [p for p, _ in frames], [g for _, g in frames]
    expected = brute_force_ap(*as_tuples(frames), threshold)
    assert abs(average_precision(preds, gts, threshold) - expected) <= 1e-9


@settings(max_examples=100)
@given(ap_instance())
def test_ap_depends_only_on_rank(frames):
    preds, gts = [p for p, _ in frames], [g for _, g in frames]
    base = average_precision(preds, gts)
    transformed = [[(b, np.exp(3.0 * s) - 7.0) for b, s in p] for p in preds]
    assert average_precision(transformed, gts) == pytest.approx(base, abs=1e-12)


def hand(seed):
    return project(make_scene([sample_pose(seed, "random")]))[0][0]


def test_normalized_error_examples():
    gt = hand(1)
    assert normalized_landmark_error(gt, gt) == 0.0
    shifted = np.array(gt.points)
    shifted[:, 0] += gt.palm_size()
    assert normalized_landmark_error(gt.replace(points=shifted), gt) == pytest.approx(1.0, abs=1e-12)


def test_normalized_error_zero_palm_raises():
    gt = HandLandmarks(np.zeros((21, 3)))
    with pytest.raises(ValueError):
        normalized_landmark_error(gt, gt)


@settings(max_examples=50)
@given(st.integers(0, 1000), st.floats(-np.pi, np.pi), st.floats(0.2, 5.0), st.floats(-1, 1), st.floats(-1, 1))
def test_normalized_error_similarity_invariant(seed, angle, scale, dx, dy):
    gt = hand(seed)
    rng = np.random.default_rng(seed)
    pred = gt.replace(points=gt.points + np.column_stack([rng.normal(0, 0.01, (21, 2)), np.zeros(21)]))
    c, s = np.cos(angle), np.sin(angle)
    rot = np.array([[c, -s], [s, c]])

    def move(lm):
        pts = np.array(lm.points)
        pts[:, :2] = scale * pts[:, :2] @ rot.T + [dx, dy]
        return lm.replace(points=pts)

    assert normalized_landmark_error(move(pred), move(gt)) == pytest.approx(
        normalized_landmark_error(pred, gt), rel=1e-9
    )


def test_normalized_error_monte_carlo(full_tier_trials):
    measured, expected = full_tier_trials
    assert len(measured) == 10_000
    assert abs(measured.mean() / expected.mean() - 1.0) <= 0.05


def test_evaluate_perfect_tracking():
    config = PipelineConfig(landmark_noise=0.0)
    scenes = list(run_script(steady_hand_script(20)))
    reports = run_tracker(scenes, config.make_backend(), config.make_detector(), config.tracker_config())
    result = evaluate([track_record(r) for r in reports], scenes)
    assert result["ap"] == 1.0
    assert result["normalized_error"] < 1e-12
    assert result["detector_invocations"] == 1
    assert result["gestures"] == {"OPEN_PALM": 20}
    assert result["handedness_accuracy"] == 1.0


def test_evaluate_rejects_mismatched_timestamps():
    scenes = list(run_script(steady_hand_script(3)))
    config = PipelineConfig()
    reports = run_tracker(scenes, config.make_backend(), config.make_detector())
    with pytest.raises(ValueError):
        evaluate([track_record(r) for r in reports], scenes[:2])


def test_bench_steady_sequence():
    scenes = list(run_script(steady_hand_script(300)))
    report = bench_pipeline(PipelineConfig(), scenes, repetitions=1)
    assert report["gating"]["detector_rate"] == pytest.approx(1 / 300)
    assert report["no_gating"]["detector_rate"] == 1.0
    assert report["gating"]["throughput_fps"] >= report["no_gating"]["throughput_fps"]
    assert set(report["gating"]["stages"]) == {"landmarks", "merge", "detector_gate", "palm_detector"}
    stage = report["gating"]["stages"]["landmarks"]
    assert stage["count"] == 300 and stage["p95_ms"] >= stage["p50_ms"]


def test_bench_empty_sequence():
    scenes = [HandScene(timestamp=t) for t in range(30)]
    report = bench_pipeline(PipelineConfig(), scenes, repetitions=1)
    assert report["gating"]["detector_rate"] == 1.0
