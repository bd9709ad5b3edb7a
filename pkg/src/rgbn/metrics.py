"""Mask IoU, greedy matching, 101-point interpolated AP, mAP50-95,
classification metrics and the evaluation report.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

IOU_THRESHOLDS = tuple(np.round(0.50 + 0.05 * np.arange(10), 2))
RECALL_POINTS = np.round(0.01 * np.arange(101), 2)


@dataclass
class InstancePrediction:
    mask: np.ndarray  # (h, w) bool
    class_name: str
    confidence: float

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


@dataclass
class GroundTruthInstance:
    mask: np.ndarray  # (h, w) bool
    class_name: str

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two binary masks; 0 when both are empty."""
    if a.shape != b.shape:
        raise ValueError(f"mask dimension mismatch: {a.shape} vs {b.shape}")
    inter = np.count_nonzero(a & b)
    union = np.count_nonzero(a | b)
    return inter / union if union else 0.0


def match_predictions(preds: list[InstancePrediction], gts: list[GroundTruthInstance],
                      class_name: str, iou_threshold: float,
                      ) -> tuple[np.ndarray, np.ndarray, int]:
    """Greedy matching for one class on one image.

    Predictions of the class are sorted by descending confidence (ties keep
    insertion order); each is matched to the unmatched ground-truth instance
    of the class with the highest IoU >= threshold.  Returns (confidences,
    tp_flags) in the sorted order plus the count of unmatched ground truths.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"iou threshold must lie in (0, 1], got {iou_threshold}")
    cls_preds = [p for p in preds if p.class_name == class_name]
    cls_gts = [g for g in gts if g.class_name == class_name]
    order = np.argsort([-p.confidence for p in cls_preds], kind="stable")

    matched = np.zeros(len(cls_gts), dtype=bool)
    confs = np.empty(len(cls_preds))
    flags = np.zeros(len(cls_preds), dtype=bool)
    for rank, idx in enumerate(order):
        pred = cls_preds[idx]
        confs[rank] = pred.confidence
        best_iou, best_j = 0.0, -1
        for j, gt in enumerate(cls_gts):
            if matched[j]:
                continue
            iou = mask_iou(pred.mask, gt.mask)
            if iou >= iou_threshold and iou > best_iou:
                best_iou, best_j = iou, j
        if best_j >= 0:
            matched[best_j] = True
            flags[rank] = True
    return confs, flags, int(np.count_nonzero(~matched))


def average_precision(tp_flags: np.ndarray, num_gt: int) -> float | None:
    """101-point interpolated AP from descending-confidence TP/FP flags.

    Returns 0.0 when num_gt == 0 but predictions exist, and None (undefined,
    excluded from averaging) when there are neither ground truths nor
    predictions.
    """
    tp_flags = np.asarray(tp_flags, dtype=bool)
    if num_gt < 0:
        raise ValueError("num_gt must be >= 0")
    if num_gt == 0:
        return 0.0 if tp_flags.size else None
    if tp_flags.size == 0:
        return 0.0
    tp = np.cumsum(tp_flags)
    fp = np.cumsum(~tp_flags)
    recall = tp / num_gt
    precision = tp / (tp + fp)
    # running maximum of precision to the right makes the curve monotone
    interp = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    sampled = np.where(idx < len(recall), interp[np.minimum(idx, len(recall) - 1)], 0.0)
    return float(sampled.mean())


def ap_per_class(preds_by_image: list[list[InstancePrediction]],
                 gts_by_image: list[list[GroundTruthInstance]],
                 classes: list[str], iou_threshold: float) -> dict[str, float | None]:
    """Pooled AP at one threshold: matching runs per image, the resulting
    (confidence, flag) pairs are pooled across images and sorted globally.
    """
    if len(preds_by_image) != len(gts_by_image):
        raise ValueError("prediction and ground-truth image lists differ in length")
    out: dict[str, float | None] = {}
    for cls in classes:
        all_confs: list[np.ndarray] = []
        all_flags: list[np.ndarray] = []
        num_gt = 0
        for preds, gts in zip(preds_by_image, gts_by_image):
            confs, flags, _ = match_predictions(preds, gts, cls, iou_threshold)
            all_confs.append(confs)
            all_flags.append(flags)
            num_gt += sum(1 for g in gts if g.class_name == cls)
        confs = np.concatenate(all_confs) if all_confs else np.empty(0)
        flags = np.concatenate(all_flags) if all_flags else np.empty(0, dtype=bool)
        order = np.argsort(-confs, kind="stable")
        out[cls] = average_precision(flags[order], num_gt)
    return out


def map50_95(preds_by_image, gts_by_image, classes: list[str]) -> dict:
    """mAP over IoU thresholds 0.50:0.05:0.95.

    Per class: mean AP over thresholds (None when the class has neither
    ground truth nor predictions anywhere).  Overall: mean over classes
    present in the ground truth; None when no class is present.
    """
    per_threshold: dict[str, list[float | None]] = {c: [] for c in classes}
    for thr in IOU_THRESHOLDS:
        ap = ap_per_class(preds_by_image, gts_by_image, classes, thr)
        for c in classes:
            per_threshold[c].append(ap[c])

    map_per_class: dict[str, float | None] = {}
    for c in classes:
        vals = per_threshold[c]
        map_per_class[c] = None if vals[0] is None else float(np.mean(vals))

    gt_present = {g.class_name for gts in gts_by_image for g in gts}
    present = [c for c in classes if c in gt_present]
    map_all = float(np.mean([map_per_class[c] for c in present])) if present else None
    return {
        "map_all": map_all,
        "map_per_class": map_per_class,
        "ap_per_class_per_threshold": {
            c: dict(zip((f"{t:.2f}" for t in IOU_THRESHOLDS), per_threshold[c]))
            for c in classes
        },
    }


def classification_report(probabilities: np.ndarray, labels: np.ndarray,
                          ) -> tuple[float, float]:
    """Accuracy (argmax match; ties break to the lowest class index) and mean
    negative log probability of the true class.
    """
    probs = np.asarray(probabilities, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.ndim != 2 or len(probs) != len(labels):
        raise ValueError("probabilities must be (n, C) aligned with labels")
    if np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-6):
        raise ValueError("probability rows must sum to 1")
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise ValueError("label out of range")
    accuracy = float(np.mean(np.argmax(probs, axis=1) == labels))
    with np.errstate(divide="ignore"):
        loss = float(np.mean(-np.log(probs[np.arange(len(labels)), labels])))
    return accuracy, loss


@dataclass
class EvalReport:
    map_all: float | None = None
    map_per_class: dict = field(default_factory=dict)
    ap_per_class_per_threshold: dict = field(default_factory=dict)
    accuracy: float | None = None
    loss: float | None = None
    inference_ms: float | None = None

    def to_dict(self) -> dict:
        return {
            "map_all": self.map_all,
            "map_per_class": dict(self.map_per_class),
            "ap_per_class_per_threshold": {
                c: dict(v) for c, v in self.ap_per_class_per_threshold.items()
            },
            "accuracy": self.accuracy,
            "loss": self.loss,
            "inference_ms": self.inference_ms,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_map_fragment(cls, fragment: dict, **kwargs) -> "EvalReport":
        return cls(map_all=fragment["map_all"], map_per_class=fragment["map_per_class"],
                   ap_per_class_per_threshold=fragment["ap_per_class_per_threshold"], **kwargs)
