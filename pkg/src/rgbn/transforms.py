"""Dataset conversions: channel fusing, leaf consolidation, occlusion of
unlabeled instances, 2x2 grid splitting, and leaf-crop extraction.

The per-record transforms are pure functions with deterministic outputs;
the *_dataset helpers apply them over a manifest and write the results
(PNG pairs plus a JSON manifest, or a crops.json crop dataset).
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .data import (
    DEFAULT_CLASSES,
    PLANE_NAMES,
    Annotation,
    DatasetManifest,
    ManifestRecord,
    RgbnImage,
    load_record_image,
    rasterize,
    resize_plane,
    save_manifest,
    _load_png,
)
from .errors import DataError
from .geometry import clip_polygon_rect, polygon_area, polygon_bbox


@dataclass(frozen=True)
class ChannelPlan:
    """Maps model-input slots to source planes, e.g. NGB = (NIR, G, B)."""

    slots: tuple[str, ...]

    def __post_init__(self):
        if len(self.slots) not in (3, 4):
            raise DataError(f"channel plan needs 3 or 4 slots, got {len(self.slots)}")
        for name in self.slots:
            if name not in PLANE_NAMES:
                raise DataError(f"channel plan references unknown plane {name!r}")

    @classmethod
    def parse(cls, text: str) -> "ChannelPlan":
        return cls(tuple(text.upper()))

    @property
    def name(self) -> str:
        return "".join(self.slots)

    def __len__(self) -> int:
        return len(self.slots)


PLAN_RGB = ChannelPlan.parse("RGB")
PLAN_RGBN = ChannelPlan.parse("RGBN")


def fuse_channels(image: RgbnImage, plan: ChannelPlan) -> np.ndarray:
    """Stack the planes named by the plan; each output channel is a bit-copy."""
    return np.stack([image.plane(name) for name in plan.slots])


def consolidate_to_leaf(manifest: DatasetManifest) -> DatasetManifest:
    """Relabel every annotation (unlabeled included) as the generic leaf class."""
    records = [
        replace(rec, annotations=[replace(a, condition="leaf") for a in rec.annotations])
        for rec in manifest.records
    ]
    return DatasetManifest(classes=["leaf"], seed=manifest.seed,
                           records=records, root=manifest.root)


def occlude_unlabeled(image: RgbnImage, annotations: list[Annotation],
                      ) -> tuple[RgbnImage, list[Annotation]]:
    """Black out the union of unlabeled-instance masks and drop those annotations."""
    union = np.zeros((image.height, image.width), dtype=bool)
    kept: list[Annotation] = []
    for a in annotations:
        if a.condition == "unlabeled":
            union |= rasterize(a.polygon, image.width, image.height)
        else:
            kept.append(a)
    planes = image.planes.copy()
    planes[:, union] = 0.0
    return RgbnImage(planes, nir_band_nm=image.nir_band_nm, source_id=image.source_id), kept


MIN_CLIP_FRACTION = 0.25
MIN_CLIP_AREA_PX = 16.0


def grid_split(image: RgbnImage, annotations: list[Annotation],
               ) -> list[tuple[RgbnImage, list[Annotation]]]:
    """Split into four equal quadrants with annotations re-clipped.

    Odd dimensions are padded right/bottom with black by one pixel first.
    Each polygon is clipped to each quadrant rectangle and translated to
    quadrant-local coordinates; a clipped instance is dropped when its area
    falls below max(25% of the original area, 16 px^2).  Quadrant order is
    top-left, top-right, bottom-left, bottom-right.
    """
    planes = image.planes
    h, w = image.height, image.width
    pad_h, pad_w = h % 2, w % 2
    if pad_h or pad_w:
        planes = np.pad(planes, ((0, 0), (0, pad_h), (0, pad_w)))
        h, w = h + pad_h, w + pad_w
    hw, hh = w // 2, h // 2
    quads = [(0, 0), (hw, 0), (0, hh), (hw, hh)]

    out: list[tuple[RgbnImage, list[Annotation]]] = []
    for x0, y0 in quads:
        tile = RgbnImage(planes[:, y0:y0 + hh, x0:x0 + hw].copy(),
                         nir_band_nm=image.nir_band_nm, source_id=image.source_id)
        kept: list[Annotation] = []
        for a in annotations:
            clipped = clip_polygon_rect(a.polygon, x0, y0, x0 + hw, y0 + hh)
            if clipped is None:
                continue
            area = polygon_area(clipped)
            if area < max(MIN_CLIP_FRACTION * polygon_area(a.polygon), MIN_CLIP_AREA_PX):
                continue
            kept.append(Annotation(a.instance_id, clipped - np.array([x0, y0]), a.condition))
        out.append((tile, kept))
    return out


def reassemble_grid(tiles: list[RgbnImage]) -> RgbnImage:
    """Mosaic the four grid_split quadrants back into one image."""
    if len(tiles) != 4:
        raise DataError(f"expected 4 quadrants, got {len(tiles)}")
    top = np.concatenate([tiles[0].planes, tiles[1].planes], axis=2)
    bottom = np.concatenate([tiles[2].planes, tiles[3].planes], axis=2)
    return RgbnImage(np.concatenate([top, bottom], axis=1),
                     nir_band_nm=tiles[0].nir_band_nm, source_id=tiles[0].source_id)


@dataclass
class CropRecord:
    """One square leaf crop with its condition class and provenance."""

    crop: np.ndarray  # (C, S, S) float64
    condition: str
    source_record: int
    source_instance: int

    def __post_init__(self):
        if self.condition not in DEFAULT_CLASSES:
            raise DataError(f"crop class must be a condition class, got {self.condition!r}")


def crop_square(image_planes: np.ndarray, polygon: np.ndarray, size: int) -> np.ndarray | None:
    """Square crop about the polygon's bbox center, black-padded, resized to size.

    Returns None for a degenerate (zero-area) bounding box.
    """
    x0, y0, x1, y1 = polygon_bbox(polygon)
    if x1 <= x0 or y1 <= y0:
        return None
    cx, cy = (x0 + x1) / 2.0, (y0 + y1) / 2.0
    half = max(x1 - x0, y1 - y0) / 2.0
    left, top = int(np.floor(cx - half)), int(np.floor(cy - half))
    right, bot = int(np.ceil(cx + half)), int(np.ceil(cy + half))
    side = max(right - left, bot - top, 1)
    right, bot = left + side, top + side

    c, h, w = image_planes.shape
    patch = np.zeros((c, side, side), dtype=np.float64)
    sy0, sy1 = max(top, 0), min(bot, h)
    sx0, sx1 = max(left, 0), min(right, w)
    if sy1 > sy0 and sx1 > sx0:
        patch[:, sy0 - top:sy1 - top, sx0 - left:sx1 - left] = image_planes[:, sy0:sy1, sx0:sx1]
    return np.stack([resize_plane(p, size, size) for p in patch])


def extract_crops(image: RgbnImage, annotations: list[Annotation], size: int,
                  plan: ChannelPlan = PLAN_RGBN, source_record: int = 0,
                  ) -> list[CropRecord]:
    """Extract one square crop per condition-labeled instance."""
    if size < 8:
        raise DataError(f"crop size must be >= 8, got {size}")
    planes = fuse_channels(image, plan)
    crops: list[CropRecord] = []
    for a in annotations:
        if not a.is_labeled():
            continue
        crop = crop_square(planes, a.polygon, size)
        if crop is None:
            warnings.warn(
                f"skipping degenerate bounding box for instance {a.instance_id} "
                f"of record {source_record}", stacklevel=2)
            continue
        crops.append(CropRecord(crop, a.condition, source_record, a.instance_id))
    return crops


# ---------------------------------------------------------------------------
# dataset-level appliers (PNG pairs + JSON manifests on disk)

def _quantize(planes: np.ndarray) -> np.ndarray:
    return np.clip(np.round(planes * 255.0), 0, 255).astype(np.uint8)


def _save_planes(planes: np.ndarray, rgb_path, nir_path) -> None:
    """First three channels to an RGB PNG, optional fourth to a gray PNG."""
    q = _quantize(planes)
    Image.fromarray(q[:3].transpose(1, 2, 0), mode="RGB").save(rgb_path)
    if nir_path is not None:
        Image.fromarray(q[3], mode="L").save(nir_path)


def save_crop_dataset(crops: list[CropRecord], plan: ChannelPlan, size: int,
                      out_dir) -> Path:
    """Write crops as PNG pairs plus crops.json; returns the JSON path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, rec in enumerate(crops):
        rgb_name = f"crop_{i:05d}_rgb.png"
        nir_name = f"crop_{i:05d}_nir.png" if len(plan) == 4 else None
        _save_planes(rec.crop, out_dir / rgb_name,
                     out_dir / nir_name if nir_name else None)
        entries.append({"rgb": rgb_name, "nir": nir_name, "class": rec.condition})
    path = out_dir / "crops.json"
    path.write_text(json.dumps({"size": size, "plan": plan.name, "crops": entries},
                               indent=2) + "\n")
    return path


def load_crop_dataset(path) -> tuple[list[tuple[np.ndarray, str]], ChannelPlan, int]:
    """Load a crops.json dataset into (planes, class) pairs."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
        size = int(doc["size"])
        plan = ChannelPlan.parse(doc["plan"])
        entries = doc["crops"]
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as e:
        raise DataError(f"cannot read crop dataset {path}: {e}") from e
    crops = []
    for entry in entries:
        rgb = _load_png(path.parent / entry["rgb"], "RGB").transpose(2, 0, 1) / 255.0
        if entry.get("nir"):
            nir = _load_png(path.parent / entry["nir"], "L") / 255.0
            planes = np.concatenate([rgb, nir[None]])
        else:
            planes = rgb
        if planes.shape[1:] != (size, size) or planes.shape[0] != len(plan):
            raise DataError(f"crop {entry['rgb']} does not match the declared size/plan")
        crops.append((planes, entry["class"]))
    return crops, plan, size


def extract_crop_dataset(manifest: DatasetManifest, size: int, plan: ChannelPlan,
                         out_dir, split: str | None = None) -> Path:
    """Extract crops for every (optionally split-filtered) record."""
    crops: list[CropRecord] = []
    for i, rec in enumerate(manifest.records):
        if split is not None and rec.split != split:
            continue
        image = load_record_image(manifest, rec)
        crops.extend(extract_crops(image, rec.annotations, size, plan, source_record=i))
    return save_crop_dataset(crops, plan, size, out_dir)


def occlude_dataset(manifest: DatasetManifest, out_dir) -> DatasetManifest:
    """Apply occlude_unlabeled to every record, writing a new dataset."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for i, rec in enumerate(manifest.records):
        image, kept = occlude_unlabeled(load_record_image(manifest, rec), rec.annotations)
        rgb_name = f"img_{i:04d}_rgb.png"
        nir_name = f"img_{i:04d}_nir.png"
        _save_planes(image.planes, out_dir / rgb_name, out_dir / nir_name)
        records.append(ManifestRecord(rgb_name, nir_name, kept, rec.split))
    out = DatasetManifest(classes=list(manifest.classes), seed=manifest.seed,
                          records=records, root=out_dir)
    save_manifest(out, out_dir / "manifest.json")
    return out


def grid_dataset(manifest: DatasetManifest, out_dir) -> DatasetManifest:
    """Apply grid_split to every record (four tiles each), writing a new dataset."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for i, rec in enumerate(manifest.records):
        image = load_record_image(manifest, rec)
        for q, (tile, annotations) in enumerate(grid_split(image, rec.annotations)):
            rgb_name = f"img_{i:04d}_q{q}_rgb.png"
            nir_name = f"img_{i:04d}_q{q}_nir.png"
            _save_planes(tile.planes, out_dir / rgb_name, out_dir / nir_name)
            records.append(ManifestRecord(rgb_name, nir_name, annotations, rec.split))
    out = DatasetManifest(classes=list(manifest.classes), seed=manifest.seed,
                          records=records, root=out_dir)
    save_manifest(out, out_dir / "manifest.json")
    return out


def fuse_dataset(manifest: DatasetManifest, plan: ChannelPlan, out_dir) -> DatasetManifest:
    """Apply fuse_channels to every record.

    Four-slot plans write an RGB+NIR pair; three-slot plans write a single
    3-channel PNG (in plan order) with a null NIR path.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for i, rec in enumerate(manifest.records):
        fused = fuse_channels(load_record_image(manifest, rec), plan)
        rgb_name = f"img_{i:04d}_rgb.png"
        nir_name = f"img_{i:04d}_nir.png" if len(plan) == 4 else None
        _save_planes(fused, out_dir / rgb_name, out_dir / nir_name if nir_name else None)
        records.append(ManifestRecord(rgb_name, nir_name, list(rec.annotations), rec.split))
    out = DatasetManifest(classes=list(manifest.classes), seed=manifest.seed,
                          records=records, root=out_dir)
    save_manifest(out, out_dir / "manifest.json")
    return out
