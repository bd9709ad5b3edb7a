"""Tests for mask IoU, greedy matching, interpolated AP, mAP50-95 and the
classification/evaluation report types."""
import json

import numpy as np
import pytest

from rgbn.metrics import (
    IOU_THRESHOLDS,
    EvalReport,
    GroundTruthInstance,
    InstancePrediction,
    ap_per_class,
    average_precision,
    classification_report,
    map50_95,
    mask_iou,
    match_predictions,
)

from oracles import average_precision_oracle, iou_oracle, match_oracle


def _rect(h, w, r0, r1, c0, c1):
    m = np.zeros((h, w), dtype=bool)
    m[r0:r1, c0:c1] = True
    return m


def _random_scene(rng, h=16, w=16, max_inst=5, classes=("a", "b")):
    """Random rectangles as ground truths plus jittered/noisy predictions."""
    gts, preds = [], []
    for _ in range(rng.integers(0, max_inst + 1)):
        r0, c0 = rng.integers(0, h - 4), rng.integers(0, w - 4)
        hh, ww = rng.integers(2, 6), rng.integers(2, 6)
        cls = classes[rng.integers(len(classes))]
        gts.append(GroundTruthInstance(_rect(h, w, r0, min(r0 + hh, h),
                                             c0, min(c0 + ww, w)), cls))
        if rng.random() < 0.8:  # jittered detection of this instance
            dr, dc = rng.integers(-1, 2), rng.integers(-1, 2)
            mask = _rect(h, w, max(r0 + dr, 0), min(r0 + hh + dr, h),
                         max(c0 + dc, 0), min(c0 + ww + dc, w))
            preds.append(InstancePrediction(mask, cls, float(rng.random())))
    for _ in range(rng.integers(0, 3)):  # spurious detections
        r0, c0 = rng.integers(0, h - 3), rng.integers(0, w - 3)
        preds.append(InstancePrediction(_rect(h, w, r0, r0 + 2, c0, c0 + 2),
                                        classes[rng.integers(len(classes))],
                                        float(rng.random())))
    return preds, gts


def _pooled_map_oracle(preds_by_image, gts_by_image, classes):
    """Brute-force mAP50-95 built only on the oracle helpers."""
    map_per_class = {}
    for cls in classes:
        aps = []
        for thr in IOU_THRESHOLDS:
            confs_all, flags_all, num_gt = [], [], 0
            for preds, gts in zip(preds_by_image, gts_by_image):
                p = [x for x in preds if x.class_name == cls]
                g = [x for x in gts if x.class_name == cls]
                confs, flags, _ = match_oracle([x.mask for x in p],
                                               [x.confidence for x in p],
                                               [x.mask for x in g], thr)
                confs_all += list(confs)
                flags_all += list(flags)
                num_gt += len(g)
            order = sorted(range(len(confs_all)), key=lambda i: -confs_all[i])
            aps.append(average_precision_oracle([flags_all[i] for i in order],
                                                num_gt))
        map_per_class[cls] = None if aps[0] is None else float(np.mean(aps))
    present = {g.class_name for gts in gts_by_image for g in gts}
    vals = [map_per_class[c] for c in classes if c in present]
    map_all = float(np.mean(vals)) if vals else None
    return map_all, map_per_class


# ---------------------------------------------------------------------------
# IoU


def test_mask_iou_hand_cases():
    a = _rect(6, 6, 0, 2, 0, 2)
    assert mask_iou(a, a) == 1.0
    assert mask_iou(a, _rect(6, 6, 4, 6, 4, 6)) == 0.0
    # 2x2 blocks overlapping in a 2x1 column: inter 2, union 6
    b = _rect(6, 6, 0, 2, 1, 3)
    assert mask_iou(a, b) == pytest.approx(2 / 6)
    assert mask_iou(np.zeros((3, 3), bool), np.zeros((3, 3), bool)) == 0.0


def test_mask_iou_shape_mismatch():
    with pytest.raises(ValueError, match="mismatch"):
        mask_iou(np.zeros((3, 3), bool), np.zeros((4, 4), bool))


def test_mask_iou_matches_oracle_fuzz():
    rng = np.random.default_rng(0)
    for _ in range(50):
        a = rng.random((8, 8)) < 0.4
        b = rng.random((8, 8)) < 0.4
        assert mask_iou(a, b) == pytest.approx(iou_oracle(a, b), abs=1e-15)


# ---------------------------------------------------------------------------
# matching


def test_match_two_preds_one_gt():
    gt = [GroundTruthInstance(_rect(8, 8, 0, 4, 0, 4), "a")]
    preds = [InstancePrediction(_rect(8, 8, 0, 4, 0, 4), "a", 0.6),
             InstancePrediction(_rect(8, 8, 0, 4, 1, 5), "a", 0.9)]
    confs, flags, fn = match_predictions(preds, gt, "a", 0.5)
    np.testing.assert_array_equal(confs, [0.9, 0.6])
    # the higher-confidence (jittered) prediction takes the only GT
    np.testing.assert_array_equal(flags, [True, False])
    assert fn == 0


def test_match_picks_highest_iou_gt():
    gts = [GroundTruthInstance(_rect(8, 8, 0, 4, 0, 4), "a"),
           GroundTruthInstance(_rect(8, 8, 0, 4, 1, 5), "a")]
    pred = InstancePrediction(_rect(8, 8, 0, 4, 1, 5), "a", 0.7)
    confs, flags, fn = match_predictions([pred], gts, "a", 0.5)
    assert flags.tolist() == [True] and fn == 1
    # rerun with the exact-match GT marked used: falls back to the other
    confs2, flags2, fn2 = match_predictions(
        [pred, InstancePrediction(_rect(8, 8, 0, 4, 1, 5), "a", 0.6)], gts, "a", 0.5)
    assert flags2.tolist() == [True, True] and fn2 == 0


def test_match_respects_threshold_and_class():
    gt = [GroundTruthInstance(_rect(8, 8, 0, 4, 0, 4), "a")]
    far = InstancePrediction(_rect(8, 8, 0, 4, 3, 7), "a", 0.9)  # IoU 1/7
    confs, flags, fn = match_predictions([far], gt, "a", 0.5)
    assert flags.tolist() == [False] and fn == 1
    other = InstancePrediction(_rect(8, 8, 0, 4, 0, 4), "b", 0.9)
    confs, flags, fn = match_predictions([other], gt, "a", 0.5)
    assert confs.size == 0 and fn == 1


def test_match_tie_confidences_keep_insertion_order():
    gt = [GroundTruthInstance(_rect(8, 8, 0, 4, 0, 4), "a")]
    first = InstancePrediction(_rect(8, 8, 0, 4, 0, 4), "a", 0.5)
    second = InstancePrediction(_rect(8, 8, 0, 4, 0, 4), "a", 0.5)
    confs, flags, fn = match_predictions([first, second], gt, "a", 0.5)
    assert flags.tolist() == [True, False]


def test_match_invalid_threshold():
    with pytest.raises(ValueError, match="threshold"):
        match_predictions([], [], "a", 0.0)
    with pytest.raises(ValueError, match="threshold"):
        match_predictions([], [], "a", 1.5)


def test_match_matches_oracle_fuzz():
    rng = np.random.default_rng(1)
    for _ in range(30):
        preds, gts = _random_scene(rng)
        for thr in (0.5, 0.75):
            confs, flags, fn = match_predictions(preds, gts, "a", thr)
            p = [x for x in preds if x.class_name == "a"]
            g = [x for x in gts if x.class_name == "a"]
            oc, of, ofn = match_oracle([x.mask for x in p],
                                       [x.confidence for x in p],
                                       [x.mask for x in g], thr)
            np.testing.assert_allclose(confs, oc, atol=0)
            assert flags.tolist() == of and fn == ofn


# ---------------------------------------------------------------------------
# average precision


def test_ap_hand_case_tp_then_fp_is_one():
    assert average_precision(np.array([True, False]), 1) == pytest.approx(1.0)


def test_ap_hand_case_fp_then_tp_is_half():
    assert average_precision(np.array([False, True]), 1) == pytest.approx(0.5)


def test_ap_no_gt_conventions():
    assert average_precision(np.array([], dtype=bool), 0) is None
    assert average_precision(np.array([False]), 0) == 0.0


def test_ap_no_predictions_with_gt_is_zero():
    assert average_precision(np.array([], dtype=bool), 3) == 0.0


def test_ap_negative_gt_raises():
    with pytest.raises(ValueError, match=">= 0"):
        average_precision(np.array([True]), -1)


def test_ap_matches_oracle_fuzz():
    rng = np.random.default_rng(2)
    for _ in range(200):
        n = int(rng.integers(0, 12))
        flags = rng.random(n) < 0.5
        num_gt = int(max(flags.sum(), rng.integers(0, 8)))
        got = average_precision(flags, num_gt)
        want = average_precision_oracle(list(flags), num_gt)
        if want is None:
            assert got is None
        else:
            assert got == pytest.approx(want, abs=1e-12)


# ---------------------------------------------------------------------------
# pooled AP and mAP


def test_ap_per_class_pools_across_images():
    rng = np.random.default_rng(3)
    preds_by_image, gts_by_image = [], []
    for _ in range(6):
        p, g = _random_scene(rng)
        preds_by_image.append(p)
        gts_by_image.append(g)
    got = ap_per_class(preds_by_image, gts_by_image, ["a", "b"], 0.5)
    for cls in ("a", "b"):
        confs_all, flags_all, num_gt = [], [], 0
        for preds, gts in zip(preds_by_image, gts_by_image):
            p = [x for x in preds if x.class_name == cls]
            g = [x for x in gts if x.class_name == cls]
            confs, flags, _ = match_oracle([x.mask for x in p],
                                           [x.confidence for x in p],
                                           [x.mask for x in g], 0.5)
            confs_all += list(confs)
            flags_all += list(flags)
            num_gt += len(g)
        order = sorted(range(len(confs_all)), key=lambda i: -confs_all[i])
        want = average_precision_oracle([flags_all[i] for i in order], num_gt)
        assert got[cls] == pytest.approx(want, abs=1e-12)


def test_ap_per_class_length_mismatch():
    with pytest.raises(ValueError, match="length"):
        ap_per_class([[]], [[], []], ["a"], 0.5)


def test_map50_95_matches_pooled_oracle():
    rng = np.random.default_rng(4)
    preds_by_image, gts_by_image = [], []
    for _ in range(8):
        p, g = _random_scene(rng)
        preds_by_image.append(p)
        gts_by_image.append(g)
    got = map50_95(preds_by_image, gts_by_image, ["a", "b"])
    want_all, want_per_class = _pooled_map_oracle(preds_by_image, gts_by_image,
                                                  ["a", "b"])
    assert got["map_all"] == pytest.approx(want_all, abs=1e-12)
    for cls in ("a", "b"):
        assert got["map_per_class"][cls] == pytest.approx(want_per_class[cls],
                                                          abs=1e-12)


def test_map_ap_nonincreasing_in_threshold():
    rng = np.random.default_rng(5)
    preds, gts = _random_scene(rng, max_inst=5)
    out = map50_95([preds], [gts], ["a"])
    series = [out["ap_per_class_per_threshold"]["a"][f"{t:.2f}"]
              for t in IOU_THRESHOLDS]
    series = [s for s in series if s is not None]
    for lo, hi in zip(series[1:], series):
        assert lo <= hi + 1e-12


def test_map_perfect_predictions_is_exactly_one():
    rng = np.random.default_rng(6)
    preds_by_image, gts_by_image = [], []
    for _ in range(4):
        _, gts = _random_scene(rng, max_inst=4)
        while not gts:
            _, gts = _random_scene(rng, max_inst=4)
        preds_by_image.append([InstancePrediction(g.mask.copy(), g.class_name, 1.0)
                               for g in gts])
        gts_by_image.append(gts)
    out = map50_95(preds_by_image, gts_by_image, ["a", "b"])
    assert out["map_all"] == 1.0


def test_map_permutation_invariance():
    rng = np.random.default_rng(7)
    preds, gts = _random_scene(rng, max_inst=5)
    while len(preds) < 3:
        preds, gts = _random_scene(rng, max_inst=5)
    base = map50_95([preds], [gts], ["a", "b"])
    shuffled = list(preds)
    rng.shuffle(shuffled)
    again = map50_95([shuffled], [gts], ["a", "b"])
    assert base["map_all"] == pytest.approx(again["map_all"], abs=1e-12)


def test_map_class_conventions_for_missing_gt():
    gt = [GroundTruthInstance(_rect(8, 8, 0, 4, 0, 4), "a")]
    pred_b = InstancePrediction(_rect(8, 8, 0, 4, 0, 4), "b", 0.9)
    pred_a = InstancePrediction(_rect(8, 8, 0, 4, 0, 4), "a", 0.9)
    out = map50_95([[pred_a, pred_b]], [gt], ["a", "b", "c"])
    assert out["map_per_class"]["a"] == 1.0
    assert out["map_per_class"]["b"] == 0.0   # predictions without any GT
    assert out["map_per_class"]["c"] is None  # neither predictions nor GT
    assert out["map_all"] == 1.0              # averaged over GT-present classes


def test_map_no_gt_anywhere_is_none():
    out = map50_95([[]], [[]], ["a"])
    assert out["map_all"] is None and out["map_per_class"]["a"] is None


# ---------------------------------------------------------------------------
# classification report


def test_classification_report_hand_counts():
    rng = np.random.default_rng(8)
    labels = rng.integers(0, 3, size=32)
    probs = np.full((32, 3), 0.1)
    probs[np.arange(32), labels] = 0.8
    wrong = [1, 5, 9]  # flip three rows to a different argmax
    for i in wrong:
        probs[i] = 0.1
        probs[i, (labels[i] + 1) % 3] = 0.8
    acc, loss = classification_report(probs, labels)
    assert acc == pytest.approx(29 / 32) and acc == pytest.approx(0.90625)
    want_loss = (29 * -np.log(0.8) + 3 * -np.log(0.1)) / 32
    assert loss == pytest.approx(want_loss, abs=1e-12)


def test_classification_report_uniform_is_ln3():
    probs = np.full((10, 3), 1 / 3)
    labels = np.arange(10) % 3
    acc, loss = classification_report(probs, labels)
    assert loss == pytest.approx(np.log(3.0), abs=1e-12)
    assert acc == pytest.approx(np.mean(labels == 0))  # ties break to class 0


def test_classification_report_perfect():
    labels = np.array([0, 1, 2])
    probs = np.eye(3)
    acc, loss = classification_report(probs, labels)
    assert acc == 1.0 and loss == 0.0


def test_classification_report_validations():
    with pytest.raises(ValueError, match="sum"):
        classification_report(np.full((2, 3), 0.5), np.zeros(2, dtype=int))
    with pytest.raises(ValueError, match="range"):
        classification_report(np.full((2, 2), 0.5), np.array([0, 5]))
    with pytest.raises(ValueError, match="aligned"):
        classification_report(np.full((2, 2), 0.5), np.zeros(3, dtype=int))


# ---------------------------------------------------------------------------
# report container


def test_instance_prediction_confidence_validated():
    with pytest.raises(ValueError, match="confidence"):
        InstancePrediction(np.zeros((2, 2), bool), "a", 1.5)


def test_eval_report_json_roundtrip():
    frag = map50_95([[InstancePrediction(_rect(4, 4, 0, 2, 0, 2), "a", 1.0)]],
                    [[GroundTruthInstance(_rect(4, 4, 0, 2, 0, 2), "a")]], ["a"])
    report = EvalReport.from_map_fragment(frag, accuracy=0.5, loss=1.25,
                                          inference_ms=3.5)
    doc = json.loads(report.to_json())
    assert doc["map_all"] == 1.0
    assert doc["accuracy"] == 0.5 and doc["loss"] == 1.25
    assert doc["inference_ms"] == 3.5
    assert doc["map_per_class"]["a"] == 1.0
    assert set(doc["ap_per_class_per_threshold"]["a"]) == {
        f"{t:.2f}" for t in IOU_THRESHOLDS}
