"""Input-layer channel expansion (partial weight transfer) and the weight
archive binary format.

Archive layout (little-endian, no padding): magic b"RGBN", version u32 (=1),
tensor_count u32; then per tensor: name_len u16, UTF-8 name, rank u8,
rank x u32 dims, dtype u8 (0 = IEEE-754 float32), raw data.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ArchiveFormatError, DataError

MAGIC = b"RGBN"
VERSION = 1
DTYPE_F32 = 0

# expansion strategies: the four transfer variants plus the analytic anchor
STRATEGIES = ("xxxx", "RGBx", "RGBR", "RGBG", "RGBB", "zero")
_COPY_SOURCE = {"RGBR": 0, "RGBG": 1, "RGBB": 2}


class WeightArchive:
    """Ordered container of named float32 tensors."""

    def __init__(self):
        self._tensors: dict[str, np.ndarray] = {}

    def add(self, name: str, data: np.ndarray) -> None:
        if name in self._tensors:
            raise ArchiveFormatError(f"duplicate tensor name {name!r}")
        if not name:
            raise ArchiveFormatError("tensor name must be non-empty")
        # np.ascontiguousarray would promote rank-0 tensors to rank 1
        self._tensors[name] = np.asarray(data, dtype=np.float32, order="C")

    def get(self, name: str) -> np.ndarray:
        try:
            return self._tensors[name]
        except KeyError:
            raise ArchiveFormatError(f"archive has no tensor {name!r}") from None

    def names(self) -> list[str]:
        return list(self._tensors)

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def copy(self) -> "WeightArchive":
        out = WeightArchive()
        for name, data in self._tensors.items():
            out.add(name, data.copy())
        return out

    # -- conversions to/from float64 model state ---------------------------

    @classmethod
    def from_state(cls, state: dict[str, np.ndarray]) -> "WeightArchive":
        out = cls()
        for name, data in state.items():
            out.add(name, data)
        return out

    def to_state(self) -> dict[str, np.ndarray]:
        return {name: data.astype(np.float64) for name, data in self._tensors.items()}


def save_archive(archive: WeightArchive, path) -> None:
    parts = [MAGIC, struct.pack("<II", VERSION, len(archive))]
    for name in archive.names():
        data = archive.get(name)
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", data.ndim))
        parts.append(struct.pack(f"<{data.ndim}I", *data.shape))
        parts.append(struct.pack("<B", DTYPE_F32))
        parts.append(data.astype("<f4", copy=False).tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise ArchiveFormatError(f"truncated archive {self.path}")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out


def load_archive(path) -> WeightArchive:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise ArchiveFormatError(f"cannot read archive {path}: {e}") from e
    r = _Reader(blob, path)
    if r.take(4) != MAGIC:
        raise ArchiveFormatError(f"{path}: bad magic, not a weight archive")
    version, count = struct.unpack("<II", r.take(8))
    if version != VERSION:
        raise ArchiveFormatError(f"{path}: unsupported archive version {version}")
    archive = WeightArchive()
    for _ in range(count):
        (name_len,) = struct.unpack("<H", r.take(2))
        name = r.take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<B", r.take(1))
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank)) if rank else ()
        (dtype,) = struct.unpack("<B", r.take(1))
        if dtype != DTYPE_F32:
            raise ArchiveFormatError(f"{path}: unknown dtype code {dtype} for {name!r}")
        n = int(np.prod(shape, dtype=np.int64)) if rank else 1
        data = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(shape)
        archive.add(name, data.copy())
    if r.pos != len(blob):
        raise ArchiveFormatError(f"{path}: {len(blob) - r.pos} trailing bytes")
    return archive


# ---------------------------------------------------------------------------
# input-layer expansion

def _require_rgb_conv(archive: WeightArchive, name: str) -> np.ndarray:
    weight = archive.get(name)
    if weight.ndim != 4:
        raise DataError(f"tensor {name!r} has rank {weight.ndim}, expected 4")
    if weight.shape[1] != 3:
        raise DataError(
            f"tensor {name!r} has {weight.shape[1]} input channels, expected 3")
    return weight


def expand_input_conv(archive: WeightArchive, input_layer_name: str, strategy: str,
                      seed: int = 0) -> WeightArchive:
    """Expand the named [k,3,w,h] conv weight to [k,4,w,h].

    Copy strategies keep slices 0-2 bit-identical to the source and fill
    slice 3 from the designated RGB slice; "zero" fills slice 3 with zeros;
    "RGBx" draws slice 3 uniformly from [-b, b] with b = sqrt(1/(4*w*h));
    "xxxx" re-randomizes all four slices (no transfer).
    """
    if strategy not in STRATEGIES:
        raise DataError(f"unknown expansion strategy {strategy!r}; choose from {STRATEGIES}")
    weight = _require_rgb_conv(archive, input_layer_name)
    k, _, kh, kw = weight.shape
    bound = np.sqrt(1.0 / (4.0 * kh * kw))
    rng = np.random.default_rng(seed)

    if strategy == "xxxx":
        expanded = rng.uniform(-bound, bound, size=(k, 4, kh, kw)).astype(np.float32)
    else:
        expanded = np.empty((k, 4, kh, kw), dtype=np.float32)
        expanded[:, :3] = weight
        if strategy == "zero":
            expanded[:, 3] = 0.0
        elif strategy == "RGBx":
            expanded[:, 3] = rng.uniform(-bound, bound, size=(k, kh, kw)).astype(np.float32)
        else:
            expanded[:, 3] = weight[:, _COPY_SOURCE[strategy]]

    out = WeightArchive()
    for name in archive.names():
        out.add(name, expanded if name == input_layer_name else archive.get(name).copy())
    return out


def find_expanded_layer(original: WeightArchive, expanded: WeightArchive) -> str:
    """Locate the unique tensor whose input-channel count grew from 3 to 4."""
    candidates = []
    for name in original.names():
        if name not in expanded:
            continue
        a, b = original.get(name), expanded.get(name)
        if (a.ndim == 4 and b.ndim == 4 and a.shape[1] == 3 and b.shape[1] == 4
                and a.shape[0] == b.shape[0] and a.shape[2:] == b.shape[2:]):
            candidates.append(name)
    if len(candidates) != 1:
        raise DataError(
            f"cannot identify the expanded input layer: {len(candidates)} candidates")
    return candidates[0]


def verify_expansion(original: WeightArchive, expanded: WeightArchive, strategy: str,
                     input_layer_name: str | None = None) -> dict:
    """Check an expansion against its declared strategy.

    Reports per-slice equality and max absolute deviation; copy strategies
    must show exact equality on slices 0-2 and on slice 3 versus its source.
    """
    if strategy not in STRATEGIES:
        raise DataError(f"unknown expansion strategy {strategy!r}")
    if input_layer_name is None:
        input_layer_name = find_expanded_layer(original, expanded)
    src = _require_rgb_conv(original, input_layer_name)
    dst = expanded.get(input_layer_name)
    if dst.ndim != 4 or dst.shape != (src.shape[0], 4, src.shape[2], src.shape[3]):
        raise DataError(
            f"expanded tensor {input_layer_name!r} has shape {dst.shape}, "
            f"expected {(src.shape[0], 4) + src.shape[2:]}")

    slices_equal = [bool(np.array_equal(dst[:, i], src[:, i])) for i in range(3)]
    slice_devs = [float(np.max(np.abs(dst[:, i] - src[:, i]), initial=0.0)) for i in range(3)]

    slice3_source: str | None = None
    slice3_equal: bool | None = None
    if strategy in _COPY_SOURCE:
        idx = _COPY_SOURCE[strategy]
        slice3_source = "RGB"[idx]
        slice3_equal = bool(np.array_equal(dst[:, 3], src[:, idx]))
    elif strategy == "zero":
        slice3_source = "zero"
        slice3_equal = bool(np.all(dst[:, 3] == 0.0))

    others_identical = all(
        np.array_equal(original.get(n), expanded.get(n))
        for n in original.names() if n != input_layer_name
    ) and set(original.names()) == set(expanded.names())

    if strategy == "xxxx":
        passed = others_identical
    else:
        passed = all(slices_equal) and others_identical and slice3_equal is not False

    return {
        "input_layer": input_layer_name,
        "strategy": strategy,
        "slices_equal": slices_equal,
        "slice_max_abs": slice_devs,
        "slice3_source": slice3_source,
        "slice3_equal": slice3_equal,
        "others_identical": others_identical,
        "passed": passed,
    }
