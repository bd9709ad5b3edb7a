"""RGBN image representation, annotation/manifest schema and dataset ops.

Images live on disk as an 8-bit RGB PNG plus an 8-bit single-channel NIR
PNG; in memory all four planes are float64 in [0, 1].  Manifests are JSON
files whose image paths are relative to the manifest's directory.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError
from .geometry import polygon_area

PLANE_NAMES = ("R", "G", "B", "N")
DEFAULT_CLASSES = ("healthy", "stressed", "spidermite")
CONDITIONS = DEFAULT_CLASSES + ("leaf", "unlabeled")
SPLITS = ("train", "val", "test", "none")
DEFAULT_NIR_BAND_NM = (740, 1000)


@dataclass
class RgbnImage:
    """Four aligned planes (R, G, B, NIR) with band metadata."""

    planes: np.ndarray  # (4, h, w) float64 in [0, 1]
    nir_band_nm: tuple[int, int] = DEFAULT_NIR_BAND_NM
    source_id: str = ""

    def __post_init__(self):
        self.planes = np.asarray(self.planes, dtype=np.float64)
        if self.planes.ndim != 3 or self.planes.shape[0] != 4:
            raise DataError(f"expected 4 planes, got array of shape {self.planes.shape}")
        if self.planes.size and (self.planes.min() < 0.0 or self.planes.max() > 1.0):
            raise DataError("plane samples must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.planes.shape[1]

    @property
    def width(self) -> int:
        return self.planes.shape[2]

    def plane(self, name: str) -> np.ndarray:
        try:
            return self.planes[PLANE_NAMES.index(name)]
        except ValueError:
            raise DataError(f"unknown plane {name!r}") from None


@dataclass
class Annotation:
    """One polygon instance with a condition class or the unlabeled flag."""

    instance_id: int
    polygon: np.ndarray  # (m, 2) float pixel coordinates
    condition: str

    def __post_init__(self):
        self.polygon = np.asarray(self.polygon, dtype=np.float64)
        if self.polygon.ndim != 2 or self.polygon.shape[1] != 2 or len(self.polygon) < 3:
            raise DataError(
                f"annotation {self.instance_id}: polygon needs >= 3 (x, y) vertices")
        if self.condition not in CONDITIONS:
            raise DataError(f"annotation {self.instance_id}: unknown condition {self.condition!r}")

    def is_labeled(self) -> bool:
        return self.condition in DEFAULT_CLASSES


@dataclass
class ManifestRecord:
    rgb_path: str
    nir_path: str | None
    annotations: list[Annotation] = field(default_factory=list)
    split: str = "none"


@dataclass
class DatasetManifest:
    classes: list[str]
    seed: int
    records: list[ManifestRecord]
    root: Path = Path(".")

    def counts_by_split(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for rec in self.records:
            out[rec.split] = out.get(rec.split, 0) + 1
        return out


# ---------------------------------------------------------------------------
# image I/O

def _load_png(path, mode: str) -> np.ndarray:
    try:
        img = Image.open(path)
        img.load()
    except (OSError, UnidentifiedImageError) as e:
        raise DataError(f"cannot decode image {path}: {e}") from e
    if img.mode != mode:
        raise DataError(f"{path}: expected {mode} image, got mode {img.mode}")
    return np.asarray(img)


def load_rgbn(rgb_path, nir_path, nir_band_nm=DEFAULT_NIR_BAND_NM) -> RgbnImage:
    """Load an aligned RGB + single-channel NIR pair into one 4-plane image."""
    rgb = _load_png(rgb_path, "RGB")
    nir = _load_png(nir_path, "L")
    if rgb.shape[:2] != nir.shape:
        raise DataError(
            f"dimension mismatch: RGB {rgb.shape[1]}x{rgb.shape[0]} vs "
            f"NIR {nir.shape[1]}x{nir.shape[0]}")
    planes = np.empty((4,) + nir.shape, dtype=np.float64)
    planes[:3] = rgb.transpose(2, 0, 1) / 255.0
    planes[3] = nir / 255.0
    return RgbnImage(planes, nir_band_nm=nir_band_nm, source_id=str(rgb_path))


def save_rgbn(image: RgbnImage, rgb_path, nir_path) -> None:
    """Quantise to 8 bits and write the PNG pair."""
    q = np.clip(np.round(image.planes * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(q[:3].transpose(1, 2, 0), mode="RGB").save(rgb_path)
    Image.fromarray(q[3], mode="L").save(nir_path)


# ---------------------------------------------------------------------------
# rasterisation and resizing

def rasterize(polygon: np.ndarray, width: int, height: int) -> np.ndarray:
    """Even-odd scanline fill of a polygon onto a (height, width) bool mask.

    A pixel (x, y) is inside when its center (x+0.5, y+0.5) is inside the
    polygon; edges crossing a scanline are counted with the half-open rule
    min(y1,y2) <= yc < max(y1,y2) so shared vertices are not double counted.
    """
    poly = np.asarray(polygon, dtype=np.float64)
    if poly.ndim != 2 or poly.shape[1] != 2 or len(poly) < 3:
        raise DataError("polygon needs at least 3 (x, y) vertices")
    mask = np.zeros((height, width), dtype=bool)
    x1, y1 = poly[:, 0], poly[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    keep = y1 != y2
    if not keep.any():
        return mask
    x1, y1, x2, y2 = x1[keep], y1[keep], x2[keep], y2[keep]
    ylo, yhi = np.minimum(y1, y2), np.maximum(y1, y2)
    slope = (x2 - x1) / (y2 - y1)

    row_min = max(0, int(np.floor(ylo.min() - 0.5)))
    row_max = min(height - 1, int(np.ceil(yhi.max() - 0.5)))
    for y in range(row_min, row_max + 1):
        yc = y + 0.5
        hit = (ylo <= yc) & (yc < yhi)
        if not hit.any():
            continue
        xs = np.sort(x1[hit] + (yc - y1[hit]) * slope[hit])
        for a, b in xs.reshape(-1, 2):
            left = max(0, int(np.ceil(a - 0.5)))
            right = min(width, int(np.ceil(b - 0.5)))
            if right > left:
                mask[y, left:right] = True
    return mask


def resize_plane(arr: np.ndarray, new_w: int, new_h: int, mode: str = "bilinear") -> np.ndarray:
    """Resize one 2-D plane; pixel centers are mapped, ratios not preserved."""
    if new_w <= 0 or new_h <= 0:
        raise DataError("target dimensions must be positive")
    h, w = arr.shape
    if mode == "nearest":
        ys = np.minimum(((np.arange(new_h) + 0.5) * h / new_h).astype(np.int64), h - 1)
        xs = np.minimum(((np.arange(new_w) + 0.5) * w / new_w).astype(np.int64), w - 1)
        return arr[ys[:, None], xs[None, :]]
    if mode != "bilinear":
        raise ValueError(f"unknown resize mode {mode!r}")
    fy = np.clip((np.arange(new_h) + 0.5) * h / new_h - 0.5, 0, h - 1)
    fx = np.clip((np.arange(new_w) + 0.5) * w / new_w - 0.5, 0, w - 1)
    y0 = np.floor(fy).astype(np.int64)
    x0 = np.floor(fx).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (fy - y0)[:, None]
    wx = (fx - x0)[None, :]
    top = arr[y0[:, None], x0[None, :]] * (1 - wx) + arr[y0[:, None], x1[None, :]] * wx
    bot = arr[y1[:, None], x0[None, :]] * (1 - wx) + arr[y1[:, None], x1[None, :]] * wx
    return top * (1 - wy) + bot * wy


def resize_image(image: RgbnImage, new_w: int, new_h: int) -> RgbnImage:
    """Bilinear resize of all four planes."""
    planes = np.stack([resize_plane(p, new_w, new_h) for p in image.planes])
    return RgbnImage(planes, nir_band_nm=image.nir_band_nm, source_id=image.source_id)


def resize_mask(mask: np.ndarray, new_w: int, new_h: int) -> np.ndarray:
    return resize_plane(mask.astype(np.float64), new_w, new_h, mode="nearest") > 0.5


# ---------------------------------------------------------------------------
# manifest I/O and splitting

def manifest_to_dict(manifest: DatasetManifest) -> dict:
    return {
        "classes": list(manifest.classes),
        "seed": manifest.seed,
        "records": [
            {
                "rgb": rec.rgb_path,
                "nir": rec.nir_path,
                "split": rec.split,
                "annotations": [
                    {"id": a.instance_id, "class": a.condition,
                     "polygon": [[float(x), float(y)] for x, y in a.polygon]}
                    for a in rec.annotations
                ],
            }
            for rec in manifest.records
        ],
    }


def manifest_from_dict(doc: dict, root: Path) -> DatasetManifest:
    try:
        records = [
            ManifestRecord(
                rgb_path=r["rgb"],
                nir_path=r["nir"],
                split=r.get("split", "none"),
                annotations=[
                    Annotation(a["id"], np.asarray(a["polygon"], dtype=np.float64), a["class"])
                    for a in r.get("annotations", [])
                ],
            )
            for r in doc["records"]
        ]
        manifest = DatasetManifest(classes=list(doc["classes"]), seed=int(doc["seed"]),
                                   records=records, root=root)
    except (KeyError, TypeError) as e:
        raise DataError(f"malformed manifest: {e}") from e
    for rec in manifest.records:
        if rec.split not in SPLITS:
            raise DataError(f"record {rec.rgb_path}: unknown split {rec.split!r}")
    return manifest


def save_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    path.write_text(json.dumps(manifest_to_dict(manifest), indent=2) + "\n")


def load_manifest(path, check_paths: bool = True) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read manifest {path}: {e}") from e
    manifest = manifest_from_dict(doc, root=path.parent)
    if check_paths:
        for rec in manifest.records:
            for p in (rec.rgb_path, rec.nir_path):
                if p is not None and not (manifest.root / p).exists():
                    raise DataError(f"manifest references missing file {manifest.root / p}")
    return manifest


def load_record_image(manifest: DatasetManifest, record: ManifestRecord) -> RgbnImage:
    if record.nir_path is None:
        raise DataError(f"record {record.rgb_path} has no NIR plane")
    return load_rgbn(manifest.root / record.rgb_path, manifest.root / record.nir_path)


def _stratum(record: ManifestRecord) -> str:
    for a in record.annotations:
        if a.is_labeled():
            return a.condition
    return ""


def split_manifest(manifest: DatasetManifest, ratios=(0.8, 0.1, 0.1), seed: int = 0,
                   ) -> DatasetManifest:
    """Assign train/val/test tags, stratified by each record's first labeled class.

    Within each class the records are shuffled by a seeded RNG and then
    partitioned; floor rounding on the val and test counts assigns any
    remainder to train.
    """
    if not manifest.records:
        raise DataError("cannot split an empty manifest")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"split ratios must sum to 1, got {ratios}")
    groups: dict[str, list[int]] = {}
    for i, rec in enumerate(manifest.records):
        groups.setdefault(_stratum(rec), []).append(i)

    rng = np.random.default_rng(seed)
    assignment: dict[int, str] = {}
    for key in sorted(groups):
        indices = groups[key]
        order = rng.permutation(len(indices))
        n = len(indices)
        n_val = int(np.floor(n * ratios[1]))
        n_test = int(np.floor(n * ratios[2]))
        n_train = n - n_val - n_test
        for pos, oi in enumerate(order):
            if pos < n_train:
                tag = "train"
            elif pos < n_train + n_val:
                tag = "val"
            else:
                tag = "test"
            assignment[indices[oi]] = tag

    records = [replace(rec, split=assignment[i]) for i, rec in enumerate(manifest.records)]
    return DatasetManifest(classes=list(manifest.classes), seed=manifest.seed,
                           records=records, root=manifest.root)


def rebase_manifest(manifest: DatasetManifest, new_root) -> DatasetManifest:
    """Recompute record paths relative to a new manifest directory."""
    import os

    new_root = Path(new_root)
    records = []
    for rec in manifest.records:
        records.append(replace(
            rec,
            rgb_path=os.path.relpath(manifest.root / rec.rgb_path, new_root),
            nir_path=None if rec.nir_path is None
            else os.path.relpath(manifest.root / rec.nir_path, new_root),
        ))
    return DatasetManifest(classes=list(manifest.classes), seed=manifest.seed,
                           records=records, root=new_root)


def annotation_mask(annotation: Annotation, width: int, height: int) -> np.ndarray:
    """Rasterised binary mask of one annotation."""
    return rasterize(annotation.polygon, width, height)


def annotation_area(annotation: Annotation) -> float:
    return polygon_area(annotation.polygon)
