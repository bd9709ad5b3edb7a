"""Tests for the synthetic RGBN scene generator: determinism, class mixing,
spectral separability (NIR separable, RGB not), presets and guards."""
import numpy as np
import pytest

from rgbn.data import DEFAULT_CLASSES, load_manifest, rasterize
from rgbn.errors import DataError
from rgbn.synth import (
    ELLIPSE_VERTICES,
    PRESETS,
    SceneSpec,
    best_threshold_accuracy,
    ellipse_polygon,
    generate_dataset,
    generate_preset,
    generate_scene,
    sample_condition,
    separability_probe,
)

from oracles import shoelace_area

_PROBE_SPEC = SceneSpec(
    width=96, height=96, leaf_count=(6, 6), leaf_radius=(0.08, 0.11),
    separation=1.0, unlabeled_fraction=0.0,
    class_mix={"healthy": 0.5, "spidermite": 0.5, "stressed": 0.0})

_MIX_SPEC = SceneSpec(
    width=96, height=96, leaf_count=(6, 6), leaf_radius=(0.08, 0.11),
    separation=1.0, unlabeled_fraction=0.3)


@pytest.fixture(scope="module")
def probe_result(tmp_path_factory):
    """A pinned corpus with ~1000 healthy and ~1000 spidermite instances."""
    out = tmp_path_factory.mktemp("probe")
    manifest = generate_dataset(_PROBE_SPEC, 340, out, seed=77)
    return manifest, separability_probe(manifest)


@pytest.fixture(scope="module")
def mem_scenes():
    return [generate_scene(_MIX_SPEC, 1000 + i) for i in range(150)]


# ---------------------------------------------------------------------------
# determinism


def test_generate_scene_is_deterministic():
    a_img, a_anns = generate_scene(_MIX_SPEC, seed=7)
    b_img, b_anns = generate_scene(_MIX_SPEC, seed=7)
    np.testing.assert_array_equal(a_img.planes, b_img.planes)
    assert [a.condition for a in a_anns] == [b.condition for b in b_anns]
    for a, b in zip(a_anns, b_anns):
        np.testing.assert_array_equal(a.polygon, b.polygon)


def test_generate_scene_seeds_differ():
    a_img, _ = generate_scene(_MIX_SPEC, seed=7)
    b_img, _ = generate_scene(_MIX_SPEC, seed=8)
    assert not np.array_equal(a_img.planes, b_img.planes)


def test_generate_dataset_is_deterministic(tmp_path):
    spec = SceneSpec(width=64, height=64, leaf_count=(2, 3))
    generate_dataset(spec, 2, tmp_path / "a", seed=5)
    generate_dataset(spec, 2, tmp_path / "b", seed=5)
    for name in ("scene_0000_rgb.png", "scene_0001_nir.png", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == \
            (tmp_path / "b" / name).read_bytes()


# ---------------------------------------------------------------------------
# class mix and unlabeled fraction


def test_sample_condition_frequencies():
    rng = np.random.default_rng(0)
    mix = {"healthy": 0.27, "stressed": 0.48, "spidermite": 0.25}
    draws = [sample_condition(rng, mix) for _ in range(10_000)]
    for cls, p in mix.items():
        freq = draws.count(cls) / len(draws)
        assert abs(freq - p) < 0.02, (cls, freq)


def test_unlabeled_fraction_observed(mem_scenes):
    conditions = [a.condition for _, anns in mem_scenes for a in anns]
    frac = conditions.count("unlabeled") / len(conditions)
    assert abs(frac - 0.3) < 0.05, frac


def test_no_unlabeled_when_fraction_zero():
    _, anns = generate_scene(_PROBE_SPEC, seed=3)
    assert all(a.condition != "unlabeled" for a in anns)
    assert all(a.condition in DEFAULT_CLASSES for a in anns)


def test_leaf_count_range_respected(mem_scenes):
    for _, anns in mem_scenes[:20]:
        assert len(anns) == 6


# ---------------------------------------------------------------------------
# spectral structure


def test_nir_means_track_configuration(mem_scenes):
    per_class = {"healthy": [], "spidermite": []}
    for img, anns in mem_scenes:
        for a in anns:
            if a.condition in per_class:
                mask = rasterize(a.polygon, img.width, img.height)
                if mask.any():
                    per_class[a.condition].append(img.planes[3][mask].mean())
    assert abs(np.mean(per_class["healthy"]) - 0.80) < 0.03
    assert abs(np.mean(per_class["spidermite"]) - 0.50) < 0.03


def test_probe_nir_separable(probe_result):
    _, probe = probe_result
    assert probe["n_instances"]["healthy"] >= 900
    assert probe["n_instances"]["spidermite"] >= 900
    assert probe["nir_accuracy"] >= 0.95, probe


def test_probe_rgb_not_separable(probe_result):
    _, probe = probe_result
    for plane, acc in probe["rgb_accuracy"].items():
        assert acc <= 0.65, (plane, acc)


def test_probe_rgb_two_sample_distance_small(probe_result):
    # best threshold accuracy 0.5 + d/2 bounds the two-sample CDF distance d
    _, probe = probe_result
    for plane, acc in probe["rgb_accuracy"].items():
        assert 2.0 * acc - 1.0 < 0.05, (plane, acc)


def test_probe_requires_enough_instances(tmp_path):
    manifest = generate_dataset(_PROBE_SPEC, 2, tmp_path, seed=9)
    with pytest.raises(DataError, match=">= 20"):
        separability_probe(manifest)


# ---------------------------------------------------------------------------
# geometry fidelity


def test_annotation_area_matches_rasterized_mask(mem_scenes):
    for img, anns in mem_scenes[:10]:
        for a in anns:
            area = shoelace_area(a.polygon)
            count = rasterize(a.polygon, img.width, img.height).sum()
            assert abs(count - area) / area < 0.05


def test_ellipse_polygon_shape_and_area():
    poly = ellipse_polygon(50, 40, 12, 8, 0.3)
    assert poly.shape == (ELLIPSE_VERTICES, 2)
    assert not np.array_equal(poly[0], poly[-1])  # open ring
    want = np.pi * 12 * 8
    assert abs(shoelace_area(poly) - want) / want < 0.02
    rotated = ellipse_polygon(50, 40, 12, 8, 1.7)
    assert shoelace_area(rotated) == pytest.approx(shoelace_area(poly), rel=1e-9)


def test_best_threshold_accuracy_cases():
    assert best_threshold_accuracy(np.array([0.0, 1.0]), np.array([2.0, 3.0])) == 1.0
    assert best_threshold_accuracy(np.array([2.0, 3.0]), np.array([0.0, 1.0])) == 1.0
    same = np.array([1.0, 2.0, 3.0])
    assert best_threshold_accuracy(same, same) == pytest.approx(0.5)


# ---------------------------------------------------------------------------
# guards


def test_overcrowded_scene_raises():
    spec = SceneSpec(width=64, height=64, leaf_count=(30, 30),
                     leaf_radius=(0.30, 0.35))
    with pytest.raises(DataError, match="cannot fit"):
        generate_scene(spec, seed=0)


def test_unplaceable_leaf_raises():
    spec = SceneSpec(width=64, height=64, leaf_count=(1, 1),
                     leaf_radius=(0.48, 0.499))
    with pytest.raises(DataError, match="cannot fit"):
        generate_scene(spec, seed=0)


def test_scene_spec_validation():
    with pytest.raises(DataError, match="sum to 1"):
        SceneSpec(class_mix={"healthy": 0.5, "stressed": 0.2, "spidermite": 0.2})
    with pytest.raises(DataError, match="cover exactly"):
        SceneSpec(class_mix={"healthy": 1.0})
    with pytest.raises(DataError, match="unlabeled"):
        SceneSpec(unlabeled_fraction=1.0)
    with pytest.raises(DataError, match="leaf count"):
        SceneSpec(leaf_count=(3, 2))
    with pytest.raises(DataError, match="reflectance"):
        SceneSpec(nir_means={"healthy": 1.5, "spidermite": 0.5, "stressed": 0.7})


# ---------------------------------------------------------------------------
# presets


def test_preset_catalog():
    assert set(PRESETS) == {"tiny-occluded", "full-scale", "crop-bench"}


def test_unknown_preset_raises(tmp_path):
    with pytest.raises(DataError, match="unknown preset"):
        generate_preset("nope", tmp_path)


def test_tiny_occluded_preset_splits(tmp_path):
    manifest = generate_preset("tiny-occluded", tmp_path, seed=1)
    assert len(manifest.records) == 7
    counts = manifest.counts_by_split()
    assert counts == {"train": 5, "val": 2}
    reloaded = load_manifest(tmp_path / "manifest.json")
    assert reloaded.counts_by_split() == counts
    assert any(a.condition == "unlabeled"
               for r in manifest.records for a in r.annotations)


def test_preset_overrides_apply(tmp_path):
    manifest = generate_preset("tiny-occluded", tmp_path, seed=1,
                               overrides={"width": 64, "height": 64})
    from rgbn.data import load_record_image
    img = load_record_image(manifest, manifest.records[0])
    assert (img.height, img.width) == (64, 64)
