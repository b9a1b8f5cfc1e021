import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from handpipe import crop
from handpipe.backend import (
    CAPABILITIES,
    BackendRequest,
    OracleLandmarkBackend,
    OraclePalmDetector,
    RawOutputDetector,
    Tier,
    detect_palms,
    infer_landmarks,
    presence_from_alignment,
)
from handpipe.detector import RawDetectorOutput
from handpipe.simulator import (
    PoseParams,
    canonical_pose,
    make_scene,
    mirror_scene,
    project,
    random_scene,
    sample_pose,
)
from handpipe.types import WRIST, Handedness, HandScene, OrientedRect, box_iou

EXACT = OracleLandmarkBackend(noise=0.0)


def one_hand_scene(seed=0, family="open", handedness=Handedness.RIGHT):
    return make_scene([sample_pose(seed, family).with_(handedness=handedness)])


def test_detect_palms_empty():
    assert detect_palms(HandScene()) == []


def test_detect_palms_one_hand():
    scene = one_hand_scene(3)
    (det,) = detect_palms(scene)
    assert box_iou(det.box, project(scene)[0][1].box) >= 0.99


def test_detect_palms_handshake():
    a = PoseParams(canonical_pose("open"), [0, 0, 0.4], [-0.06, 0.05, 0.55], Handedness.RIGHT)
    b = PoseParams(canonical_pose("fist"), [0, 0, -0.4], [0.06, 0.05, 0.56], Handedness.LEFT)
    scene = make_scene([a, b])
    gts = [d.box for _, d in project(scene)]
    overlap = box_iou(gts[0], gts[1])
    assert 0.0 < overlap < 0.3
    dets = detect_palms(scene)
    assert len(dets) == 2
    assert sorted(max(range(2), key=lambda g: box_iou(d.box, gts[g])) for d in dets) == [0, 1]


def test_detections_sorted_by_score():
    scene = random_scene(np.random.default_rng(5), max_hands=3)
    dets = OraclePalmDetector(noise=0.05, seed=1).detect_palms(scene)
    assert [d.score for d in dets] == sorted((d.score for d in dets), reverse=True)


def test_framed_hand_is_exact():
    scene = one_hand_scene(8)
    gt = project(scene)[0][0]
    lm = infer_landmarks(BackendRequest(crop.rect_from_landmarks(gt), scene, 0))
    assert np.max(np.abs(lm.points - gt.points)) < 1e-9
    assert lm.presence >= 0.95 and lm.handedness >= 0.95


def test_detection_framed_hand_is_present():
    scene = one_hand_scene(2, "fist")
    det = project(scene)[0][1]
    lm = EXACT.infer_landmarks(BackendRequest(crop.rect_from_detection(det), scene, 0))
    assert lm.presence >= 0.95


def test_background_rect_absent():
    scene = one_hand_scene(8)
    lm = EXACT.infer_landmarks(BackendRequest(OrientedRect(0.05, 0.05, 0.05, 0.05), scene, 0))
    assert lm.presence <= 0.1
    assert EXACT.infer_landmarks(BackendRequest(OrientedRect(0.5, 0.5, 0.2, 0.2), HandScene(), 0)).presence <= 0.1


@given(st.integers(0, 10_000))
def test_mirror_property(seed):
    scene = one_hand_scene(seed, "random")
    mirrored = mirror_scene(scene)
    gt, mgt = project(scene)[0][0], project(mirrored)[0][0]
    lm = EXACT.infer_landmarks(BackendRequest(crop.rect_from_landmarks(gt), scene, 0))
    mlm = EXACT.infer_landmarks(BackendRequest(crop.rect_from_landmarks(mgt), mirrored, 0))
    assert mlm.handedness == 1.0 - lm.handedness
    assert mlm.label is not lm.label
    assert np.allclose(mlm.points[:, 0], 1.0 - lm.points[:, 0], atol=1e-9)
    assert np.allclose(mlm.points[:, 2], lm.points[:, 2], atol=1e-9)


@given(st.floats(0, 1), st.floats(0, 1))
def test_presence_monotone_in_iou(a, b):
    lo, hi = sorted((a, b))
    assert presence_from_alignment(lo) <= presence_from_alignment(hi)
    assert presence_from_alignment(hi) >= 0.95 if hi >= 0.5 else presence_from_alignment(hi) <= 0.1


def test_presence_monotone_along_sliding_rect():
    scene = one_hand_scene(1)
    r = crop.rect_from_landmarks(project(scene)[0][0])
    ious, presences = [], []
    for dx in np.linspace(0, 1.5 * r.w, 12):
        moved = OrientedRect(r.cx + dx, r.cy, r.w, r.h, r.theta)
        _, iou, _ = EXACT.alignment(moved, scene)
        ious.append(iou)
        presences.append(EXACT.infer_landmarks(BackendRequest(moved, scene, 0)).presence)
    order = np.argsort(ious)
    assert all(np.diff(np.array(presences)[order]) >= 0)


@given(st.integers(0, 10_000), st.sampled_from(list(Tier)))
def test_wrist_depth_zero_with_noise(seed, tier):
    scene = one_hand_scene(seed, "random")
    gt = project(scene)[0][0]
    lm = OracleLandmarkBackend(tier, seed=seed).infer_landmarks(BackendRequest(crop.rect_from_landmarks(gt), scene, 7))
    assert lm.points[WRIST, 2] == 0.0


def test_noise_is_deterministic_per_request():
    scene = one_hand_scene(4)
    req = BackendRequest(crop.rect_from_landmarks(project(scene)[0][0]), scene, 100)
    backend = OracleLandmarkBackend(Tier.LIGHT, seed=9)
    first = backend.infer_landmarks(req)
    backend.infer_landmarks(BackendRequest(req.rect, scene, 200))
    assert backend.infer_landmarks(req) == first
    assert OracleLandmarkBackend(Tier.LIGHT, seed=10).infer_landmarks(req) != first


def test_tier_capabilities_ordered():
    light, full, heavy = (CAPABILITIES[t] for t in (Tier.LIGHT, Tier.FULL, Tier.HEAVY))
    assert light.noise > full.noise > heavy.noise
    assert light.flip_prob > full.flip_prob > heavy.flip_prob
    assert light.cost_ms < full.cost_ms < heavy.cost_ms


def test_raw_output_detector_checks_lengths():
    bad = RawDetectorOutput(np.zeros(3), np.zeros((3, 3)), np.zeros((3, 7, 2)))
    with pytest.raises(ValueError):
        RawOutputDetector({0: bad})


def test_raw_output_detector_replays():
    scene = one_hand_scene(6)
    oracle = OraclePalmDetector()
    replay = RawOutputDetector({scene.timestamp: oracle.raw_output(scene)})
    assert replay.detect_palms(scene) == oracle.detect_palms(scene)
    with pytest.raises(KeyError):
        replay.detect_palms(HandScene(timestamp=5))
