"""Seeded synthetic RGBN greenhouse scenes.

The signal model: spider-mite leaves share the healthy RGB color
distribution (invisible to an RGB-only model) but have a depressed NIR
reflectance; stressed leaves shift in hue toward yellow and sit near the
healthy NIR band.  Leaves are rotated ellipses drawn back-to-front with
hard edges so ground-truth polygons are exact.
"""
from __future__ import annotations

import colorsys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from shapely.geometry import MultiPolygon, Polygon
from shapely.ops import unary_union

from .data import (
    DEFAULT_CLASSES,
    Annotation,
    DatasetManifest,
    ManifestRecord,
    RgbnImage,
    rasterize,
    resize_plane,
    save_manifest,
    save_rgbn,
)
from .errors import DataError

ELLIPSE_VERTICES = 24
MAX_SCENE_ATTEMPTS = 20
MAX_PLACE_ATTEMPTS = 80
MIN_VISIBLE_FRACTION = 0.15
MIN_MAIN_PIECE_FRACTION = 0.90


@dataclass
class SceneSpec:
    width: int = 192
    height: int = 192
    leaf_count: tuple[int, int] = (4, 6)
    class_mix: dict = field(default_factory=lambda: {
        "healthy": 0.27, "stressed": 0.48, "spidermite": 0.25})
    unlabeled_fraction: float = 0.0
    nir_means: dict = field(default_factory=lambda: {
        "healthy": 0.80, "spidermite": 0.50, "stressed": 0.75})
    nir_sigma: float = 0.05
    stressed_hue_shift: float = 0.15  # toward yellow (hue decreases)
    leaf_radius: tuple[float, float] = (0.12, 0.18)  # fraction of min(w, h)
    separation: float = 0.8  # min center distance as a multiple of summed radii
    pixel_noise: float = 0.02
    background_rgb: tuple[float, float, float] = (0.30, 0.24, 0.16)
    background_nir: float = 0.15

    def __post_init__(self):
        if set(self.class_mix) != set(DEFAULT_CLASSES):
            raise DataError(f"class mix must cover exactly {DEFAULT_CLASSES}")
        if abs(sum(self.class_mix.values()) - 1.0) > 1e-9:
            raise DataError("class mix probabilities must sum to 1")
        if not 0.0 <= self.unlabeled_fraction < 1.0:
            raise DataError("unlabeled fraction must lie in [0, 1)")
        for cls, mean in self.nir_means.items():
            if not 0.0 < mean < 1.0:
                raise DataError(f"NIR reflectance for {cls} must lie in (0, 1)")
        if not 0 < self.leaf_count[0] <= self.leaf_count[1]:
            raise DataError(f"invalid leaf count range {self.leaf_count}")


def sample_condition(rng: np.random.Generator, class_mix: dict) -> str:
    """Draw one condition class from the mix (fixed class order)."""
    probs = [class_mix[c] for c in DEFAULT_CLASSES]
    return DEFAULT_CLASSES[rng.choice(len(DEFAULT_CLASSES), p=probs)]


def ellipse_polygon(cx: float, cy: float, a: float, b: float, theta: float,
                    vertices: int = ELLIPSE_VERTICES) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(vertices) / vertices
    x = a * np.cos(angles)
    y = b * np.sin(angles)
    ct, st = np.cos(theta), np.sin(theta)
    return np.column_stack([cx + x * ct - y * st, cy + x * st + y * ct])


def _value_noise(rng: np.random.Generator, width: int, height: int, cell: int = 16,
                 ) -> np.ndarray:
    """Smooth [0,1] noise: a coarse uniform grid upsampled bilinearly."""
    gh = max(2, height // cell + 1)
    gw = max(2, width // cell + 1)
    grid = rng.uniform(0.0, 1.0, size=(gh, gw))
    return resize_plane(grid, width, height)


def _try_place(rng, spec: SceneSpec, count: int):
    """Sample leaf geometry with pairwise minimum center distance.

    Returns a list of (cx, cy, a, b, theta) or None when placement fails.
    """
    min_dim = min(spec.width, spec.height)
    placed = []
    for _ in range(count):
        a = rng.uniform(*spec.leaf_radius) * min_dim
        b = a * rng.uniform(0.55, 0.85)
        theta = rng.uniform(0.0, np.pi)
        margin = a + 2.0
        if 2 * margin >= spec.width or 2 * margin >= spec.height:
            return None
        ok = False
        for _ in range(MAX_PLACE_ATTEMPTS):
            cx = rng.uniform(margin, spec.width - margin)
            cy = rng.uniform(margin, spec.height - margin)
            if all((cx - px) ** 2 + (cy - py) ** 2 >= (spec.separation * (a + pa)) ** 2
                   for px, py, pa, _, _ in placed):
                ok = True
                break
        if not ok:
            return None
        placed.append((cx, cy, a, b, theta))
    return placed


def _visible_polygons(polys: list[np.ndarray]) -> list[np.ndarray] | None:
    """Visible region of each leaf under painter's order (later leaves on top).

    Returns the exterior ring of each leaf's largest visible piece, or None
    when any leaf is nearly hidden, split into comparable pieces, or holed.
    """
    shapes = [Polygon(p) for p in polys]
    out = []
    for i, shape in enumerate(shapes):
        later = shapes[i + 1:]
        visible = shape.difference(unary_union(later)) if later else shape
        if visible.is_empty or visible.area < MIN_VISIBLE_FRACTION * shape.area:
            return None
        if isinstance(visible, MultiPolygon):
            main = max(visible.geoms, key=lambda g: g.area)
            if main.area < MIN_MAIN_PIECE_FRACTION * visible.area:
                return None
        else:
            main = visible
        if main.interiors:
            return None
        out.append(np.asarray(main.exterior.coords)[:-1])
    return out


def _leaf_rgb_base(rng, condition: str, spec: SceneSpec) -> tuple[float, float, float]:
    # healthy and spidermite draw from the identical color distribution
    hue = 0.33 + rng.uniform(-0.02, 0.02)
    if condition == "stressed":
        hue -= spec.stressed_hue_shift
    sat = rng.uniform(0.50, 0.65)
    val = rng.uniform(0.35, 0.50)
    return colorsys.hsv_to_rgb(hue % 1.0, sat, val)


def generate_scene(spec: SceneSpec, seed: int) -> tuple[RgbnImage, list[Annotation]]:
    """Render one scene and its exact ground-truth annotations."""
    rng = np.random.default_rng(seed)
    w, h = spec.width, spec.height
    min_dim = min(w, h)
    max_leaf_area = np.pi * (spec.leaf_radius[1] * min_dim) ** 2 * 0.85
    if spec.leaf_count[1] * max_leaf_area > 0.75 * w * h:
        raise DataError("leaves cannot fit: requested leaf area exceeds the scene")

    count = int(rng.integers(spec.leaf_count[0], spec.leaf_count[1] + 1))
    for _ in range(MAX_SCENE_ATTEMPTS):
        placements = _try_place(rng, spec, count)
        if placements is None:
            continue
        polys = [ellipse_polygon(*p) for p in placements]
        visible = _visible_polygons(polys)
        if visible is not None:
            break
    else:
        raise DataError("leaves cannot fit: placement failed after retries")

    planes = np.empty((4, h, w), dtype=np.float64)
    shade = _value_noise(rng, w, h)
    for ch, base in enumerate(spec.background_rgb):
        planes[ch] = base + 0.12 * shade
    planes[3] = spec.background_nir + 0.10 * _value_noise(rng, w, h)

    conditions = [sample_condition(rng, spec.class_mix) for _ in range(count)]
    for poly, condition in zip(polys, conditions):
        mask = rasterize(poly, w, h)
        n_px = int(mask.sum())
        base = _leaf_rgb_base(rng, condition, spec)
        for ch in range(3):
            planes[ch][mask] = base[ch] + rng.normal(0.0, spec.pixel_noise, size=n_px)
        nir_mean = float(np.clip(rng.normal(spec.nir_means[condition], spec.nir_sigma),
                                 0.02, 0.98))
        planes[3][mask] = nir_mean + rng.normal(0.0, spec.pixel_noise, size=n_px)
    np.clip(planes, 0.0, 1.0, out=planes)

    annotations = []
    for i, (vis_poly, condition) in enumerate(zip(visible, conditions)):
        label = "unlabeled" if rng.random() < spec.unlabeled_fraction else condition
        annotations.append(Annotation(i, vis_poly, label))
    return RgbnImage(planes), annotations


def generate_dataset(spec: SceneSpec, n_scenes: int, out_dir, seed: int = 0,
                     ) -> DatasetManifest:
    """Write n_scenes PNG pairs plus manifest.json; scene i uses seed + i."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(n_scenes):
        image, annotations = generate_scene(spec, seed + i)
        rgb_name = f"scene_{i:04d}_rgb.png"
        nir_name = f"scene_{i:04d}_nir.png"
        save_rgbn(image, out_dir / rgb_name, out_dir / nir_name)
        records.append(ManifestRecord(rgb_name, nir_name, annotations))
    manifest = DatasetManifest(classes=list(DEFAULT_CLASSES), seed=seed,
                               records=records, root=out_dir)
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest


# ---------------------------------------------------------------------------
# generator self-test

def best_threshold_accuracy(values_a: np.ndarray, values_b: np.ndarray) -> float:
    """Best accuracy of a single threshold separating two 1-D samples."""
    values = np.concatenate([values_a, values_b])
    is_a = np.concatenate([np.ones(len(values_a), bool), np.zeros(len(values_b), bool)])
    cuts = np.concatenate([[-np.inf], np.unique(values)])
    best = 0.0
    for t in cuts:
        below = values <= t
        acc = np.mean(below == is_a)
        best = max(best, acc, 1.0 - acc)
    return float(best)


def separability_probe(manifest: DatasetManifest, min_instances: int = 20) -> dict:
    """Per-instance mean statistics and single-threshold separability of
    healthy vs spidermite on the NIR mean and on each RGB channel mean.
    """
    from .data import load_record_image  # local import avoids cycle in docs builds

    means: dict[str, list[np.ndarray]] = {"healthy": [], "spidermite": []}
    for rec in manifest.records:
        relevant = [a for a in rec.annotations if a.condition in means]
        if not relevant:
            continue
        image = load_record_image(manifest, rec)
        for a in relevant:
            mask = rasterize(a.polygon, image.width, image.height)
            if not mask.any():
                continue
            means[a.condition].append(image.planes[:, mask].mean(axis=1))

    counts = {cls: len(v) for cls, v in means.items()}
    for cls, n in counts.items():
        if n < min_instances:
            raise DataError(
                f"separability probe needs >= {min_instances} {cls} instances, got {n}")
    healthy = np.array(means["healthy"])
    spider = np.array(means["spidermite"])
    return {
        "n_instances": counts,
        "nir_accuracy": best_threshold_accuracy(healthy[:, 3], spider[:, 3]),
        "rgb_accuracy": {
            plane: best_threshold_accuracy(healthy[:, i], spider[:, i])
            for i, plane in enumerate("RGB")
        },
    }


# ---------------------------------------------------------------------------
# presets

PRESETS: dict[str, dict] = {
    # the occluded-dataset scale: 5 training + 2 validation scenes
    "tiny-occluded": {
        "spec": SceneSpec(width=96, height=96, leaf_count=(2, 4),
                          unlabeled_fraction=0.3),
        "n_scenes": 7,
        "splits": (("train", 5), ("val", 2)),
    },
    # the capture-volume scale: 32 scenes at the 480x360 working resolution
    "full-scale": {
        "spec": SceneSpec(width=480, height=360, leaf_count=(5, 9),
                          unlabeled_fraction=0.3),
        "n_scenes": 32,
        "splits": (),
    },
    # classifier benchmark: 100 non-overlapping 6-leaf scenes -> 600 crops
    "crop-bench": {
        "spec": SceneSpec(width=192, height=192, leaf_count=(6, 6),
                          leaf_radius=(0.09, 0.13), separation=1.05,
                          unlabeled_fraction=0.0),
        "n_scenes": 100,
        "splits": (),
    },
}


def generate_preset(name: str, out_dir, seed: int = 0,
                    overrides: dict | None = None) -> DatasetManifest:
    """Generate a named preset dataset, applying split tags when defined."""
    if name not in PRESETS:
        raise DataError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    preset = PRESETS[name]
    spec = preset["spec"]
    if overrides:
        spec = replace(spec, **overrides)
    manifest = generate_dataset(spec, preset["n_scenes"], out_dir, seed=seed)
    if preset["splits"]:
        idx = 0
        for tag, n in preset["splits"]:
            for rec in manifest.records[idx:idx + n]:
                rec.split = tag
            idx += n
        save_manifest(manifest, Path(out_dir) / "manifest.json")
    return manifest
