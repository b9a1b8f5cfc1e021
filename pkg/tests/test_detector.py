import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import brute_force_nms

from handpipe.detector import (
    Anchor,
    AnchorConfig,
    AnchorLayer,
    RawDetectorOutput,
    binary_cross_entropy,
    decode_boxes,
    encode_boxes,
    encode_keypoints,
    focal_loss,
    generate_anchor_boxes,
    generate_anchors,
    non_max_suppression,
)
from handpipe.types import AxisAlignedBox, Detection, box_iou


def test_single_layer_grid():
    cfg = AnchorConfig(2, (AnchorLayer(1, (1.0,)),))
    centers = [(a.cx, a.cy) for a in generate_anchors(cfg)]
    assert centers == [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)]


def test_default_anchor_count():
    assert len(generate_anchors(AnchorConfig())) == 24 * 24 * 2 + 12 * 12 * 6 == 2016


def test_stride_must_divide_input():
    with pytest.raises(ValueError):
        AnchorConfig(192, (AnchorLayer(7, (1.0,)),))
    with pytest.raises(ValueError):
        AnchorConfig(192, (AnchorLayer(8, ()),))


@pytest.mark.parametrize("r", [3, 4, 5])
def test_aspect_ratio_variant_multiplies_count(r):
    cfg = AnchorConfig()
    ratios = [1.0] + [2.0 ** k for k in range(1, r)]
    assert len(generate_anchor_boxes(cfg, ratios)) == r * len(generate_anchors(cfg))


def test_anchors_are_square_and_layer_ordered():
    anchors = generate_anchors()
    assert anchors[0].side == pytest.approx(8 / 192)
    assert anchors[1].side == pytest.approx(8 / 192 * 1.4)
    assert anchors[1152].side == pytest.approx(16 / 192)
    assert all(abs(a.box().width - a.box().height) <= 1e-9 for a in anchors)


def test_anchor_config_round_trip():
    cfg = AnchorConfig()
    assert AnchorConfig.from_dict(cfg.to_dict()) == cfg
    counted = AnchorConfig.from_dict({"input_size": 64, "layers": [{"stride": 8, "anchors_per_cell": 2}]})
    assert len(generate_anchors(counted)) == 8 * 8 * 2


def _raw(n, logit=0.0):
    return RawDetectorOutput(np.full(n, logit), np.zeros((n, 3)), np.zeros((n, 7, 2)))


def test_decode_zero_offsets_gives_anchor():
    anchor = Anchor(0.4, 0.6, 0.1)
    (det,) = decode_boxes(_raw(1, 30.0), [anchor], 0.5)
    assert det.box == anchor.box()
    assert det.score == pytest.approx(1.0)


def test_decode_logit_zero_is_half():
    (det,) = decode_boxes(_raw(1, 0.0), [Anchor(0.5, 0.5, 0.1)], 0.5)
    assert det.score == 0.5


def test_decode_threshold_and_mismatch():
    assert decode_boxes(_raw(1, -1.0), [Anchor(0.5, 0.5, 0.1)], 0.5) == []
    with pytest.raises(ValueError):
        decode_boxes(_raw(2), [Anchor(0.5, 0.5, 0.1)])
    with pytest.raises(ValueError):
        RawDetectorOutput(np.zeros(2), np.zeros((3, 3)), np.zeros((2, 7, 2)))


def test_encode_examples():
    anchor = Anchor(0.3, 0.3, 0.1)
    assert encode_boxes(Detection(anchor.box(), 1.0), anchor) == pytest.approx((0.0, 0.0, 0.0), abs=1e-12)
    bigger = Detection(AxisAlignedBox.from_center(0.3, 0.3, 0.1 * math.e, 0.1 * math.e), 1.0)
    assert encode_boxes(bigger, anchor)[2] == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        encode_boxes(bigger, Anchor(0.3, 0.3, 0.0))


square_det = st.builds(
    lambda cx, cy, s, kp: Detection(AxisAlignedBox.from_center(cx, cy, s, s), 1.0, np.array(kp)),
    st.floats(0, 1), st.floats(0, 1), st.floats(1e-3, 1),
    st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=7, max_size=7),
)
anchor_st = st.builds(Anchor, st.floats(0, 1), st.floats(0, 1), st.floats(1e-2, 0.5))


@given(square_det, anchor_st)
def test_encode_decode_round_trip(gt, anchor):
    raw = RawDetectorOutput(
        np.array([10.0]), np.array([encode_boxes(gt, anchor)]), encode_keypoints(gt, anchor)[None]
    )
    (det,) = decode_boxes(raw, [anchor], 0.0)
    assert np.max(np.abs(det.box.as_array() - gt.box.as_array())) < 1e-9
    assert np.max(np.abs(det.keypoints - gt.keypoints)) < 1e-9
    assert abs(det.box.width - det.box.height) <= 1e-9


def _dets(boxes, scores):
    return [Detection(AxisAlignedBox(*b), s) for b, s in zip(boxes, scores)]


def test_nms_examples():
    one = _dets([(0, 0, 1, 1)], [0.7])
    assert non_max_suppression(one, 0.5) == one
    two = _dets([(0, 0, 1, 1), (0, 0, 1, 1)], [0.8, 0.9])
    assert non_max_suppression(two, 0.5) == [two[1]]
    assert non_max_suppression([], 0.5) == []


def test_nms_ties_keep_input_order():
    dets = _dets([(0, 0, 1, 1), (0.05, 0, 1.05, 1)], [0.9, 0.9])
    assert non_max_suppression(dets, 0.5) == [dets[0]]


@st.composite
def detection_sets(draw, max_size=64):
    n = draw(st.integers(0, max_size))
    out = []
    for _ in range(n):
        cx, cy = draw(st.floats(0, 1)), draw(st.floats(0, 1))
        s = draw(st.floats(0.01, 0.4))
        # Coarse scores make ties common.
        score = draw(st.sampled_from([0.1, 0.3, 0.5, 0.5, 0.7, 0.9, 1.0]))
        out.append(Detection(AxisAlignedBox.from_center(cx, cy, s, s), score))
    return out


@given(detection_sets(), st.sampled_from([0.0, 0.1, 0.3, 0.5, 0.9, 1.0]))
def test_nms_matches_brute_force(dets, threshold):
    boxes = [tuple(d.box.as_array()) for d in dets]
    kept = brute_force_nms(boxes, [d.score for d in dets], threshold)
    out = non_max_suppression(dets, threshold)
    assert [id(d) for d in out] == [id(dets[i]) for i in kept]


@given(detection_sets(), st.sampled_from([0.1, 0.3, 0.5]))
def test_nms_properties(dets, threshold):
    out = non_max_suppression(dets, threshold)
    assert all(any(o is d for d in dets) for o in out)
    for i, a in enumerate(out):
        for b in out[i + 1:]:
            assert box_iou(a.box, b.box) < threshold
    assert [d.score for d in out] == sorted((d.score for d in out), reverse=True)
    assert non_max_suppression(out, threshold) == out


def test_weighted_nms_blends_suppressed_boxes():
    dets = _dets([(0, 0, 1, 1), (0.1, 0.1, 1.1, 1.1)], [0.75, 0.25])
    (blend,) = non_max_suppression(dets, 0.3, weighted=True)
    assert blend.box.center == pytest.approx((0.525, 0.525))
    assert blend.score == 0.75


def test_focal_loss_examples():
    assert focal_loss(0.5, 1, alpha=1.0, gamma=0.0) == pytest.approx(math.log(2), abs=1e-9)
    assert focal_loss(1 - 1e-7, 1) == pytest.approx(0.0, abs=1e-9)
    assert focal_loss(0.9, 1, 0.25, 2.0) == pytest.approx(0.25 * 0.1**2 * -math.log(0.9), abs=1e-9)
    assert 0.25 * 0.1**2 * -math.log(0.9) == pytest.approx(2.634e-4, rel=1e-3)


def test_focal_loss_clamps_extremes():
    assert math.isfinite(focal_loss(0.0, 1))
    assert math.isfinite(focal_loss(1.0, 0))


probs = st.floats(1e-6, 1 - 1e-6)


@given(probs, st.integers(0, 1))
def test_focal_reduces_to_cross_entropy(p, y):
    assert abs(focal_loss(p, y, alpha=1.0, gamma=0.0) - binary_cross_entropy(p, y)) < 1e-12


@given(probs, st.integers(0, 1), st.floats(0, 1), st.floats(0, 5))
def test_focal_bounded_by_weighted_cross_entropy(p, y, alpha, gamma):
    fl = focal_loss(p, y, alpha, gamma)
    assert 0.0 <= fl <= alpha * binary_cross_entropy(p, y) + 1e-15


@given(probs, probs, st.floats(0, 5))
def test_focal_monotone_in_p_t(a, b, gamma):
    lo, hi = sorted((a, b))
    assert focal_loss(hi, 1, 0.25, gamma) <= focal_loss(lo, 1, 0.25, gamma) + 1e-15
    assert focal_loss(lo, 0, 0.25, gamma) <= focal_loss(hi, 0, 0.25, gamma) + 1e-15


def test_focal_vectorized():
    out = focal_loss(np.array([0.2, 0.8]), np.array([0, 1]))
    assert out.shape == (2,) and out[0] == pytest.approx(out[1])
