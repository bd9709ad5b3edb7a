"""Training loops, the single-stage and two-stage inference topologies, and
manifest-level evaluation.

Training is strictly sequential and seeded: a fixed (config, seed) pair
produces byte-identical weight archives and metric logs.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .data import (
    DEFAULT_CLASSES,
    DatasetManifest,
    RgbnImage,
    _load_png,
    load_record_image,
    rasterize,
)
from .engine import ModelGraph, nll_from_probs, pixel_nll_from_probs, sgd_step
from .errors import DataError
from .metrics import (
    EvalReport,
    GroundTruthInstance,
    InstancePrediction,
    classification_report,
    map50_95,
)
from .models import RELU_INIT_GAIN, build_fcn, build_resnet15, build_sequential
from .surgery import WeightArchive, load_archive
from .transforms import ChannelPlan, PLAN_RGBN, crop_square, fuse_channels, load_crop_dataset

METRIC_KEYS = ("epoch", "train_loss", "val_acc", "val_loss", "val_map")


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 32
    epochs: int = 100
    seed: int = 0
    input_size: int | None = None  # None: taken from the dataset
    plan: ChannelPlan = PLAN_RGBN
    early_stop_patience: int = 0  # 0 disables early stopping
    background_weight: float = 0.5
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)

    def __post_init__(self):
        if isinstance(self.plan, str):
            self.plan = ChannelPlan.parse(self.plan)
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.epochs <= 0:
            raise DataError("learning rate, batch size and epochs must be positive")
        if self.early_stop_patience < 0:
            raise DataError("early-stop patience must be >= 0")


@dataclass
class PipelineConfig:
    mode: str  # "two_stage" | "single_stage"
    seg_archive: str
    cls_archive: str | None = None
    classes: tuple[str, ...] = DEFAULT_CLASSES
    plan: ChannelPlan = PLAN_RGBN
    min_component_area: int = 30
    threshold: float = 0.5
    mask_fill: bool = False
    cls_input_size: int = 32

    def __post_init__(self):
        if isinstance(self.plan, str):
            self.plan = ChannelPlan.parse(self.plan)
        if self.mode not in ("two_stage", "single_stage"):
            raise DataError(f"unknown pipeline mode {self.mode!r}")
        if self.mode == "two_stage" and not self.cls_archive:
            raise DataError("two-stage pipeline requires a classifier archive")


def metrics_to_jsonl(metrics: list[dict]) -> str:
    lines = []
    for m in metrics:
        lines.append(json.dumps({k: m.get(k) for k in METRIC_KEYS}))
    return "\n".join(lines) + ("\n" if lines else "")


def write_metrics(metrics: list[dict], path) -> None:
    Path(path).write_text(metrics_to_jsonl(metrics))


# ---------------------------------------------------------------------------
# archive <-> model reconstruction

def model_from_archive(archive: WeightArchive, input_size) -> ModelGraph:
    """Rebuild a model graph from an archive by sniffing layer names/shapes."""
    names = set(archive.names())
    if "conv1.weight" in names:
        widths = tuple(archive.get(f"conv{i}.weight").shape[0] for i in range(1, 7))
        in_channels = archive.get("conv1.weight").shape[1]
        dense_hidden, num_classes = archive.get("fc1.weight").shape[0], \
            archive.get("fc2.weight").shape[0]
        model = build_sequential(in_channels, num_classes, input_size,
                                 widths=widths, dense_hidden=dense_hidden, seed=None)
    elif "stem.weight" in names:
        widths = (archive.get("stem.weight").shape[0],
                  archive.get("trans2.weight").shape[0],
                  archive.get("trans3.weight").shape[0])
        in_channels = archive.get("stem.weight").shape[1]
        num_classes = archive.get("fc.weight").shape[0]
        model = build_resnet15(in_channels, num_classes, input_size,
                               widths=widths, seed=None)
    elif "enc1.weight" in names:
        enc = tuple(archive.get(f"enc{i}.weight").shape[0] for i in range(1, 5))
        dec = tuple(archive.get(f"dec{i}.weight").shape[0] for i in range(1, 5))
        in_channels = archive.get("enc1.weight").shape[1]
        num_classes = archive.get("head.weight").shape[0] - 1
        model = build_fcn(in_channels, num_classes, input_size,
                          encoder_widths=enc, decoder_widths=dec, seed=None)
    else:
        raise DataError("archive does not match any known model layout")
    model.load_state(archive.to_state())
    return model


# ---------------------------------------------------------------------------
# classifier training

def _stratified_indices(labels: np.ndarray, ratios, rng) -> dict[str, np.ndarray]:
    """Index split by class with floor rounding on val/test, remainder to train."""
    buckets = {"train": [], "val": [], "test": []}
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(len(idx))]
        n = len(idx)
        n_val = int(np.floor(n * ratios[1]))
        n_test = int(np.floor(n * ratios[2]))
        n_train = n - n_val - n_test
        buckets["train"].append(idx[:n_train])
        buckets["val"].append(idx[n_train:n_train + n_val])
        buckets["test"].append(idx[n_train + n_val:])
    return {k: np.sort(np.concatenate(v)) if v else np.empty(0, dtype=np.int64)
            for k, v in buckets.items()}


def _forward_in_batches(model: ModelGraph, x: np.ndarray, batch_size: int) -> np.ndarray:
    outs = [model.forward(x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
    return np.concatenate(outs)


def train_classifier(config: TrainConfig, crops_path,
                     ) -> tuple[WeightArchive, list[dict]]:
    """Train the sequential classifier on a crop dataset.

    The dataset is split 80/10/10 internally (stratified, seeded); each epoch
    shuffles the training crops; the archive of the best-validation-accuracy
    epoch is returned together with per-epoch metrics.
    """
    crops, stored_plan, size = load_crop_dataset(crops_path)
    if config.input_size is not None and config.input_size != size:
        raise DataError(
            f"crop size mismatch: dataset is {size}, config expects {config.input_size}")
    plan = config.plan
    class_names = sorted({c for _, c in crops}, key=DEFAULT_CLASSES.index)
    if len(class_names) < 2:
        raise DataError(f"single-class dataset (only {class_names}); need >= 2 classes")

    x = np.stack([_project_plan(planes, stored_plan, plan) for planes, _ in crops])
    y = np.array([class_names.index(c) for _, c in crops], dtype=np.int64)

    rng = np.random.default_rng(config.seed)
    splits = _stratified_indices(y, config.split_ratios, rng)
    tr, va = splits["train"], splits["val"]

    model = build_sequential(len(plan), len(class_names), size, seed=config.seed,
                             init_gain=RELU_INIT_GAIN)
    metrics: list[dict] = []
    best_acc, best_state = -1.0, None
    for epoch in range(1, config.epochs + 1):
        order = tr[rng.permutation(len(tr))]
        loss_sum = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            probs = model.forward(x[batch])
            loss, dprobs = nll_from_probs(probs, y[batch])
            model.backward(dprobs)
            sgd_step(model.parameters(), config.learning_rate)
            loss_sum += loss * len(batch)
        entry = {"epoch": epoch, "train_loss": loss_sum / max(len(order), 1),
                 "val_acc": None, "val_loss": None, "val_map": None}
        if len(va):
            val_probs = _forward_in_batches(model, x[va], config.batch_size)
            acc, loss = classification_report(val_probs, y[va])
            entry["val_acc"], entry["val_loss"] = acc, loss
            if acc > best_acc:
                best_acc, best_state = acc, {k: v.copy() for k, v in model.state().items()}
        metrics.append(entry)
    if best_state is None:
        best_state = model.state()
    return WeightArchive.from_state(best_state), metrics


def _project_plan(planes: np.ndarray, stored_plan: ChannelPlan, plan: ChannelPlan,
                  ) -> np.ndarray:
    """Select the requested plan's channels out of a stored crop."""
    if plan.slots == stored_plan.slots:
        return planes
    try:
        idx = [stored_plan.slots.index(name) for name in plan.slots]
    except ValueError:
        raise DataError(
            f"plan {plan.name} is not derivable from stored plan {stored_plan.name}"
        ) from None
    return planes[idx]


# ---------------------------------------------------------------------------
# segmenter training

def _record_planes(manifest: DatasetManifest, record, plan: ChannelPlan) -> np.ndarray:
    if record.nir_path is None:
        # a fused 3-channel dataset stores its channels already in plan order
        if len(plan) != 3:
            raise DataError(
                f"record {record.rgb_path} has 3 stored channels but plan "
                f"{plan.name} needs {len(plan)}")
        return _load_png(manifest.root / record.rgb_path, "RGB").transpose(2, 0, 1) / 255.0
    image = load_record_image(manifest, record)
    return fuse_channels(image, plan)


def _label_map(record, width: int, height: int, class_to_index: dict[str, int],
               ) -> np.ndarray:
    labels = np.zeros((height, width), dtype=np.int64)
    for a in record.annotations:
        if a.condition in class_to_index:
            mask = rasterize(a.polygon, width, height)
            labels[mask] = class_to_index[a.condition]
    return labels


def train_segmenter(config: TrainConfig, manifest: DatasetManifest, classes: list[str],
                    ) -> tuple[WeightArchive, list[dict]]:
    """Train the FCN with weighted per-pixel cross-entropy (background 0.5).

    Uses the manifest's train split; logs pixel accuracy, loss and mAP50-95
    on the val split per epoch; early-stops when val mAP has not improved for
    `early_stop_patience` epochs and returns the best-val-mAP archive.
    """
    train_recs = [r for r in manifest.records if r.split == "train"]
    val_recs = [r for r in manifest.records if r.split == "val"]
    if not train_recs:
        raise DataError("manifest has no records tagged train")
    if not any(a.condition in classes for r in train_recs for a in r.annotations):
        raise DataError("empty annotation set: no training instances of the given classes")

    plan = config.plan
    class_to_index = {c: i + 1 for i, c in enumerate(classes)}
    xs, ys = [], []
    for rec in train_recs:
        planes = _record_planes(manifest, rec, plan)
        _check_seg_dims(planes.shape[1:])
        xs.append(planes)
        ys.append(_label_map(rec, planes.shape[2], planes.shape[1], class_to_index))
    x = np.stack(xs)
    y = np.stack(ys)

    val_x, val_y, val_gts = [], [], []
    for rec in val_recs:
        planes = _record_planes(manifest, rec, plan)
        _check_seg_dims(planes.shape[1:])
        val_x.append(planes)
        val_y.append(_label_map(rec, planes.shape[2], planes.shape[1], class_to_index))
        val_gts.append(_ground_truths(rec, planes.shape[2], planes.shape[1], classes))

    rng = np.random.default_rng(config.seed)
    model = build_fcn(len(plan), len(classes), (x.shape[2], x.shape[3]), seed=config.seed,
                      init_gain=RELU_INIT_GAIN)
    weights = np.ones(len(classes) + 1)
    weights[0] = config.background_weight

    metrics: list[dict] = []
    best_map, best_state, stall = -1.0, None, 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(x))
        loss_sum = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            probs = model.forward(x[batch])
            loss, dprobs = pixel_nll_from_probs(probs, y[batch], weights)
            model.backward(dprobs)
            sgd_step(model.parameters(), config.learning_rate)
            loss_sum += loss * len(batch)
        entry = {"epoch": epoch, "train_loss": loss_sum / len(x),
                 "val_acc": None, "val_loss": None, "val_map": None}
        if val_recs:
            accs, losses, preds_by_image = [], [], []
            for planes, labels, _ in zip(val_x, val_y, val_gts):
                probs = model.forward(planes[None])
                loss, _ = pixel_nll_from_probs(probs, labels[None], weights)
                accs.append(float(np.mean(np.argmax(probs[0], axis=0) == labels)))
                losses.append(loss)
                preds_by_image.append(map_instances(probs[0], list(classes)))
            entry["val_acc"] = float(np.mean(accs))
            entry["val_loss"] = float(np.mean(losses))
            frag = map50_95(preds_by_image, val_gts, list(classes))
            entry["val_map"] = 0.0 if frag["map_all"] is None else frag["map_all"]
            if entry["val_map"] > best_map:
                best_map = entry["val_map"]
                best_state = {k: v.copy() for k, v in model.state().items()}
                stall = 0
            else:
                stall += 1
        metrics.append(entry)
        if config.early_stop_patience and val_recs and stall >= config.early_stop_patience:
            break
    if best_state is None:
        best_state = model.state()
    return WeightArchive.from_state(best_state), metrics


def _check_seg_dims(hw) -> None:
    h, w = hw
    if h % 16 or w % 16:
        raise DataError(f"segmenter images must have dims divisible by 16, got {w}x{h}")


def _ground_truths(record, width: int, height: int, classes) -> list[GroundTruthInstance]:
    out = []
    for a in record.annotations:
        if a.condition in classes:
            out.append(GroundTruthInstance(rasterize(a.polygon, width, height), a.condition))
    return out


# ---------------------------------------------------------------------------
# inference

def connected_components(mask: np.ndarray, min_area: int) -> list[np.ndarray]:
    """4-connected components of a binary mask, area-filtered, row-major order."""
    labeled, count = ndimage.label(mask)
    comps = []
    for i in range(1, count + 1):
        comp = labeled == i
        if np.count_nonzero(comp) >= min_area:
            comps.append(comp)
    return comps


def map_instances(probs: np.ndarray, classes: list[str], min_area: int = 30,
                  ) -> list[InstancePrediction]:
    """Instances from a per-pixel class map: argmax, then per-class components.

    Confidence is the mean probability of the class over the component.
    """
    label = np.argmax(probs, axis=0)
    preds = []
    for ci, cls in enumerate(classes, start=1):
        for comp in connected_components(label == ci, min_area):
            conf = float(probs[ci][comp].mean())
            preds.append(InstancePrediction(comp, cls, conf))
    return preds


class LoadedPipeline:
    """Archives materialized into runnable models plus inference settings."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.plan = config.plan
        self.classes = list(config.classes)
        self.seg_archive = load_archive(config.seg_archive)
        seg_channels = self.seg_archive.get("enc1.weight").shape[1]
        if seg_channels != len(self.plan):
            raise DataError(
                f"channel-plan mismatch: segmenter expects {seg_channels} channels, "
                f"plan {self.plan.name} provides {len(self.plan)}")
        self._seg_cache: dict[tuple[int, int], ModelGraph] = {}
        self.classifier = None
        if config.mode == "two_stage":
            cls_archive = load_archive(config.cls_archive)
            self.classifier = model_from_archive(cls_archive, config.cls_input_size)
            cls_channels = self.classifier.meta["in_channels"]
            if cls_channels != len(self.plan):
                raise DataError(
                    f"channel-plan mismatch: classifier expects {cls_channels} "
                    f"channels, plan {self.plan.name} provides {len(self.plan)}")
        self.classifier_calls = 0

    def _segmenter_for(self, hw: tuple[int, int]) -> ModelGraph:
        if hw not in self._seg_cache:
            self._seg_cache[hw] = model_from_archive(self.seg_archive, hw)
        return self._seg_cache[hw]

    def segment(self, planes: np.ndarray) -> np.ndarray:
        """Per-pixel probabilities, padding to a multiple of 16 and cropping back."""
        _, h, w = planes.shape
        ph = (16 - h % 16) % 16
        pw = (16 - w % 16) % 16
        padded = np.pad(planes, ((0, 0), (0, ph), (0, pw))) if (ph or pw) else planes
        model = self._segmenter_for(padded.shape[1:])
        probs = model.forward(padded[None])[0]
        return probs[:, :h, :w]


def infer_two_stage(image: RgbnImage, pipeline: LoadedPipeline,
                    ) -> list[InstancePrediction]:
    """Leaf segmentation -> components -> square crop -> per-crop classifier."""
    cfg = pipeline.config
    planes = fuse_channels(image, pipeline.plan)
    probs = pipeline.segment(planes)
    leaf_prob = probs[1]
    preds = []
    size = pipeline.classifier.meta["input_size"]
    for comp in connected_components(leaf_prob >= cfg.threshold, cfg.min_component_area):
        rows = np.flatnonzero(comp.any(axis=1))
        cols = np.flatnonzero(comp.any(axis=0))
        x0, x1 = float(cols[0]), float(cols[-1] + 1)
        y0, y1 = float(rows[0]), float(rows[-1] + 1)
        rect = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
        source = planes * comp if cfg.mask_fill else planes
        crop = crop_square(source, rect, size)
        class_probs = pipeline.classifier.forward(crop[None])[0]
        pipeline.classifier_calls += 1
        ci = int(np.argmax(class_probs))
        confidence = float(leaf_prob[comp].mean() * class_probs[ci])
        preds.append(InstancePrediction(comp, pipeline.classes[ci], confidence))
    return preds


def infer_single_stage(image: RgbnImage, pipeline: LoadedPipeline,
                       ) -> list[InstancePrediction]:
    """Multi-class pixel map -> per-class components with the same area filter."""
    cfg = pipeline.config
    planes = fuse_channels(image, pipeline.plan)
    probs = pipeline.segment(planes)
    return map_instances(probs, pipeline.classes, cfg.min_component_area)


def run_inference(image: RgbnImage, pipeline: LoadedPipeline) -> list[InstancePrediction]:
    if pipeline.config.mode == "two_stage":
        return infer_two_stage(image, pipeline)
    return infer_single_stage(image, pipeline)


def evaluate_pipeline(pipeline: LoadedPipeline, manifest: DatasetManifest) -> EvalReport:
    """Run inference over the manifest's val split and score mAP50-95.

    Timing covers model compute and component extraction only (file I/O is
    excluded).
    """
    if isinstance(pipeline, PipelineConfig):
        pipeline = LoadedPipeline(pipeline)
    records = [r for r in manifest.records if r.split == "val"]
    if not records:
        raise DataError("empty validation split")
    classes = [c for c in pipeline.classes]
    preds_by_image, gts_by_image = [], []
    seconds = 0.0
    for rec in records:
        image = load_record_image(manifest, rec)
        start = time.perf_counter()
        preds = run_inference(image, pipeline)
        seconds += time.perf_counter() - start
        preds_by_image.append(preds)
        gts_by_image.append(_ground_truths(rec, image.width, image.height, classes))
    fragment = map50_95(preds_by_image, gts_by_image, classes)
    return EvalReport.from_map_fragment(
        fragment, inference_ms=1000.0 * seconds / len(records))
