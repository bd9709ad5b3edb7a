"""Tests for the weight archive binary format and input-layer expansion."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from rgbn.errors import ArchiveFormatError, DataError
from rgbn.surgery import (
    STRATEGIES,
    WeightArchive,
    expand_input_conv,
    find_expanded_layer,
    load_archive,
    save_archive,
    verify_expansion,
)


def _archive(entries):
    arc = WeightArchive()
    for name, data in entries:
        arc.add(name, data)
    return arc


def _conv_archive(rng, in_ch=3):
    return _archive([
        ("conv1.weight", rng.normal(size=(8, in_ch, 3, 3))),
        ("conv1.bias", rng.normal(size=(8,))),
        ("dense.weight", rng.normal(size=(8, 10))),
    ])


# ---------------------------------------------------------------------------
# archive container


def test_archive_add_get_names_roundtrip():
    arc = _archive([("a", np.arange(6, dtype=np.float32).reshape(2, 3))])
    assert arc.names() == ["a"] and "a" in arc and len(arc) == 1
    assert arc.get("a").dtype == np.float32


def test_archive_rejects_duplicates_and_empty_names():
    arc = _archive([("a", np.zeros(2))])
    with pytest.raises(ArchiveFormatError, match="duplicate"):
        arc.add("a", np.zeros(2))
    with pytest.raises(ArchiveFormatError, match="non-empty"):
        arc.add("", np.zeros(2))


def test_archive_missing_tensor_raises():
    with pytest.raises(ArchiveFormatError, match="no tensor"):
        WeightArchive().get("nope")


def test_archive_state_conversion_preserves_values():
    state = {"w": np.array([[0.5, -1.25]], dtype=np.float64)}
    arc = WeightArchive.from_state(state)
    back = arc.to_state()
    assert back["w"].dtype == np.float64
    np.testing.assert_array_equal(back["w"], state["w"])


# ---------------------------------------------------------------------------
# binary format


def test_empty_archive_is_twelve_bytes(tmp_path):
    path = tmp_path / "empty.rgbn"
    save_archive(WeightArchive(), path)
    blob = path.read_bytes()
    assert len(blob) == 12
    assert blob[:4] == b"RGBN"
    assert int.from_bytes(blob[4:8], "little") == 1   # version
    assert int.from_bytes(blob[8:12], "little") == 0  # tensor count
    assert len(load_archive(path)) == 0


def test_save_twice_is_byte_identical(tmp_path):
    rng = np.random.default_rng(0)
    arc = _conv_archive(rng)
    save_archive(arc, tmp_path / "a.rgbn")
    save_archive(arc, tmp_path / "b.rgbn")
    assert (tmp_path / "a.rgbn").read_bytes() == (tmp_path / "b.rgbn").read_bytes()


def test_load_save_load_is_stable(tmp_path):
    arc = _conv_archive(np.random.default_rng(1))
    save_archive(arc, tmp_path / "a.rgbn")
    mid = load_archive(tmp_path / "a.rgbn")
    save_archive(mid, tmp_path / "b.rgbn")
    assert (tmp_path / "a.rgbn").read_bytes() == (tmp_path / "b.rgbn").read_bytes()


@settings(max_examples=100, deadline=None)
@given(st.lists(
    st.tuples(
        st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789_./", min_size=1,
                max_size=24),
        hnp.arrays(dtype=np.float32,
                   shape=hnp.array_shapes(min_dims=0, max_dims=4, min_side=0,
                                          max_side=4),
                   elements=st.floats(allow_nan=False, allow_infinity=False,
                                      width=32)),
    ),
    min_size=0, max_size=6, unique_by=lambda t: t[0],
))
def test_archive_roundtrip_property(tmp_path_factory, entries):
    path = tmp_path_factory.mktemp("arc") / "t.rgbn"
    arc = _archive(entries)
    save_archive(arc, path)
    loaded = load_archive(path)
    assert loaded.names() == arc.names()
    for name in arc.names():
        a, b = arc.get(name), loaded.get(name)
        assert a.shape == b.shape and a.dtype == b.dtype
        assert a.tobytes() == b.tobytes()


def test_special_float_values_roundtrip(tmp_path):
    vals = np.array([0.0, -0.0, 1e-45, np.inf, -np.inf, np.nan], dtype=np.float32)
    arc = _archive([("v", vals)])
    path = tmp_path / "v.rgbn"
    save_archive(arc, path)
    assert load_archive(path).get("v").tobytes() == vals.tobytes()


def test_load_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.rgbn"
    path.write_bytes(b"NOPE" + b"\x00" * 8)
    with pytest.raises(ArchiveFormatError, match="magic"):
        load_archive(path)


def test_load_rejects_bad_version(tmp_path):
    path = tmp_path / "bad.rgbn"
    path.write_bytes(b"RGBN" + (2).to_bytes(4, "little") + (0).to_bytes(4, "little"))
    with pytest.raises(ArchiveFormatError, match="version"):
        load_archive(path)


def test_load_rejects_unknown_dtype(tmp_path):
    good = tmp_path / "good.rgbn"
    save_archive(_archive([("w", np.zeros((2,), dtype=np.float32))]), good)
    blob = bytearray(good.read_bytes())
    # dtype byte sits right before the 8 data bytes of the single tensor
    blob[-9] = 7
    bad = tmp_path / "bad.rgbn"
    bad.write_bytes(bytes(blob))
    with pytest.raises(ArchiveFormatError, match="dtype"):
        load_archive(bad)


def test_load_rejects_truncation(tmp_path):
    good = tmp_path / "good.rgbn"
    save_archive(_conv_archive(np.random.default_rng(2)), good)
    blob = good.read_bytes()
    bad = tmp_path / "bad.rgbn"
    bad.write_bytes(blob[:-3])
    with pytest.raises(ArchiveFormatError, match="truncated"):
        load_archive(bad)


def test_load_rejects_trailing_bytes(tmp_path):
    good = tmp_path / "good.rgbn"
    save_archive(_conv_archive(np.random.default_rng(3)), good)
    bad = tmp_path / "bad.rgbn"
    bad.write_bytes(good.read_bytes() + b"\x00\x01")
    with pytest.raises(ArchiveFormatError, match="trailing"):
        load_archive(bad)


def test_load_missing_file_raises(tmp_path):
    with pytest.raises(ArchiveFormatError, match="cannot read"):
        load_archive(tmp_path / "absent.rgbn")


# ---------------------------------------------------------------------------
# input-layer expansion


@pytest.mark.parametrize("strategy,src_idx", [("RGBR", 0), ("RGBG", 1), ("RGBB", 2)])
def test_copy_strategies_slice3_is_bit_exact(strategy, src_idx):
    arc = _conv_archive(np.random.default_rng(4))
    out = expand_input_conv(arc, "conv1.weight", strategy)
    src, dst = arc.get("conv1.weight"), out.get("conv1.weight")
    assert dst.shape == (8, 4, 3, 3)
    for i in range(3):
        assert dst[:, i].tobytes() == src[:, i].tobytes()
    assert dst[:, 3].tobytes() == src[:, src_idx].tobytes()
    # untouched tensors are bit-identical
    assert out.get("conv1.bias").tobytes() == arc.get("conv1.bias").tobytes()
    assert out.get("dense.weight").tobytes() == arc.get("dense.weight").tobytes()


def test_copy_b_hand_example():
    w = np.array([0.1, 0.2, 0.3], dtype=np.float32).reshape(1, 3, 1, 1)
    arc = _archive([("in.weight", w)])
    out = expand_input_conv(arc, "in.weight", "RGBB")
    got = out.get("in.weight")[0, :, 0, 0]
    np.testing.assert_array_equal(got, np.array([0.1, 0.2, 0.3, 0.3], dtype=np.float32))


def test_zero_strategy_slice3_is_zero():
    arc = _conv_archive(np.random.default_rng(5))
    out = expand_input_conv(arc, "conv1.weight", "zero")
    dst = out.get("conv1.weight")
    assert (dst[:, 3] == 0.0).all()
    assert dst[:, :3].tobytes() == arc.get("conv1.weight").tobytes()


def test_rgbx_slice3_respects_fanin_bound():
    arc = _conv_archive(np.random.default_rng(6))
    out = expand_input_conv(arc, "conv1.weight", "RGBx", seed=7)
    dst, src = out.get("conv1.weight"), arc.get("conv1.weight")
    bound = np.sqrt(1.0 / (4 * 3 * 3))
    assert np.abs(dst[:, 3]).max() <= bound
    assert dst[:, 3].std() > 0.0
    assert dst[:, :3].tobytes() == src.tobytes()


def test_random_strategies_are_seed_deterministic():
    arc = _conv_archive(np.random.default_rng(8))
    for strategy in ("RGBx", "xxxx"):
        a = expand_input_conv(arc, "conv1.weight", strategy, seed=7)
        b = expand_input_conv(arc, "conv1.weight", strategy, seed=7)
        c = expand_input_conv(arc, "conv1.weight", strategy, seed=8)
        assert a.get("conv1.weight").tobytes() == b.get("conv1.weight").tobytes()
        assert a.get("conv1.weight").tobytes() != c.get("conv1.weight").tobytes()


def test_xxxx_rerandomizes_all_slices_but_keeps_other_tensors():
    arc = _conv_archive(np.random.default_rng(9))
    out = expand_input_conv(arc, "conv1.weight", "xxxx", seed=1)
    src, dst = arc.get("conv1.weight"), out.get("conv1.weight")
    for i in range(3):
        assert dst[:, i].tobytes() != src[:, i].tobytes()
    bound = np.sqrt(1.0 / (4 * 3 * 3))
    assert np.abs(dst).max() <= bound
    assert out.get("conv1.bias").tobytes() == arc.get("conv1.bias").tobytes()
    assert out.get("dense.weight").tobytes() == arc.get("dense.weight").tobytes()


def test_expand_rejects_unknown_strategy_and_bad_tensor():
    arc = _conv_archive(np.random.default_rng(10))
    with pytest.raises(DataError, match="strategy"):
        expand_input_conv(arc, "conv1.weight", "RGBQ")
    with pytest.raises(DataError, match="rank"):
        expand_input_conv(arc, "conv1.bias", "zero")
    four = _conv_archive(np.random.default_rng(10), in_ch=4)
    with pytest.raises(DataError, match="input channels"):
        expand_input_conv(four, "conv1.weight", "zero")


def test_find_expanded_layer_unique():
    arc = _conv_archive(np.random.default_rng(11))
    out = expand_input_conv(arc, "conv1.weight", "RGBR")
    assert find_expanded_layer(arc, out) == "conv1.weight"


def test_find_expanded_layer_ambiguous_or_missing():
    rng = np.random.default_rng(12)
    a = _archive([("c1", rng.normal(size=(4, 3, 3, 3))),
                  ("c2", rng.normal(size=(4, 3, 3, 3)))])
    b = _archive([("c1", rng.normal(size=(4, 4, 3, 3))),
                  ("c2", rng.normal(size=(4, 4, 3, 3)))])
    with pytest.raises(DataError, match="2 candidates"):
        find_expanded_layer(a, b)
    with pytest.raises(DataError, match="0 candidates"):
        find_expanded_layer(a, a)


@pytest.mark.parametrize("strategy", STRATEGIES)
def test_verify_expansion_passes_for_every_strategy(strategy):
    arc = _conv_archive(np.random.default_rng(13))
    out = expand_input_conv(arc, "conv1.weight", strategy, seed=3)
    report = verify_expansion(arc, out, strategy)
    assert report["passed"], report
    assert report["input_layer"] == "conv1.weight"
    if strategy not in ("xxxx",):
        assert report["slices_equal"] == [True, True, True]
        assert report["slice_max_abs"] == [0.0, 0.0, 0.0]
    if strategy == "RGBG":
        assert report["slice3_source"] == "G" and report["slice3_equal"] is True
    if strategy == "zero":
        assert report["slice3_source"] == "zero" and report["slice3_equal"] is True


def test_verify_expansion_detects_tampering():
    arc = _conv_archive(np.random.default_rng(14))
    out = expand_input_conv(arc, "conv1.weight", "RGBR")
    w = out.get("conv1.weight")
    w[0, 1, 0, 0] += 0.25  # corrupt a transferred slice in place
    report = verify_expansion(arc, out, "RGBR")
    assert not report["passed"]
    assert report["slices_equal"][1] is False
    assert report["slice_max_abs"][1] == pytest.approx(0.25, abs=1e-6)


def test_verify_expansion_detects_wrong_slice3():
    arc = _conv_archive(np.random.default_rng(15))
    out = expand_input_conv(arc, "conv1.weight", "zero")
    out.get("conv1.weight")[0, 3, 0, 0] = 0.5
    report = verify_expansion(arc, out, "zero")
    assert report["slice3_equal"] is False and not report["passed"]
