"""Model builders: the sequential 6-conv classifier, a compact residual
(ResNet15-scale) classifier, and the fully-convolutional segmenter.
"""
from __future__ import annotations

import numpy as np

from .engine import (
    Conv2D,
    Dense,
    Flatten,
    GlobalAvgPool,
    MaxPool2D,
    ModelGraph,
    NearestUpsample,
    ReLU,
    ResidualBlock,
    Softmax,
)
from .errors import DataError

SEQUENTIAL_WIDTHS = (16, 32, 32, 64, 64, 128)
SEQUENTIAL_DENSE_HIDDEN = 128
RESNET_WIDTHS = (32, 64, 128)
FCN_ENCODER_WIDTHS = (16, 32, 64, 64)
FCN_DECODER_WIDTHS = (64, 64, 32, 16)
MIN_POOL_SIZE = 4  # stop max-pooling once feature maps reach 4x4

# Init-bound multiplier that keeps activation magnitudes roughly constant
# through conv+ReLU stages (He-style scaling).  Without batch normalization,
# the default fan-in bound attenuates signals ~sqrt(6)x per stage, which
# leaves deep stacks stuck at the class-prior loss under plain SGD; trainers
# opt into this gain while the layer default stays the plain fan-in bound.
RELU_INIT_GAIN = float(np.sqrt(6.0))


def _rng(seed):
    return None if seed is None else np.random.default_rng(seed)


def build_sequential(in_channels: int, num_classes: int, input_size: int,
                     *, widths=SEQUENTIAL_WIDTHS, dense_hidden=SEQUENTIAL_DENSE_HIDDEN,
                     seed: int | None = 0, init_gain: float = 1.0) -> ModelGraph:
    """Six 3x3 conv layers with interleaved 2x2 max-pooling, then two dense
    layers and a softmax head.  Pooling is skipped once maps reach 4x4 so the
    six-conv stack fits small inputs.  seed=None builds with all-zero weights.
    """
    if len(widths) != 6:
        raise DataError(f"sequential classifier takes 6 conv widths, got {len(widths)}")
    if input_size < 32:
        raise DataError(f"input size {input_size} too small for the 6-conv stack (min 32)")
    rng = _rng(seed)
    layers = []
    channels, size = in_channels, input_size
    for i, width in enumerate(widths, start=1):
        layers.append((f"conv{i}", Conv2D(channels, width, kernel=3, stride=1, pad=1, rng=rng, init_scale=init_gain)))
        layers.append((f"relu{i}", ReLU()))
        channels = width
        if size > MIN_POOL_SIZE and size % 2 == 0:
            layers.append((f"pool{i}", MaxPool2D(2)))
            size //= 2
    layers.append(("flatten", Flatten()))
    layers.append(("fc1", Dense(channels * size * size, dense_hidden, rng=rng, init_scale=init_gain)))
    layers.append(("fc1_relu", ReLU()))
    layers.append(("fc2", Dense(dense_hidden, num_classes, rng=rng, init_scale=init_gain)))
    layers.append(("softmax", Softmax()))
    meta = {"arch": "sequential", "in_channels": in_channels, "num_classes": num_classes,
            "input_size": input_size, "widths": tuple(widths), "dense_hidden": dense_hidden}
    return ModelGraph(layers, input_shape=(in_channels, input_size, input_size), meta=meta)


def build_resnet15(in_channels: int, num_classes: int, input_size: int = 64,
                   *, widths=RESNET_WIDTHS, seed: int | None = 0,
                   init_gain: float = 1.0) -> ModelGraph:
    """Stem conv + pool, three stages of two identity-skip residual blocks
    joined by stride-2 transition convs, global average pooling and a dense
    softmax head (16 weighted layers).
    """
    if len(widths) != 3:
        raise DataError(f"residual classifier takes 3 stage widths, got {len(widths)}")
    if input_size < 8 or input_size % 2:
        raise DataError(f"input size {input_size} must be even and >= 8")
    rng = _rng(seed)
    layers = [
        ("stem", Conv2D(in_channels, widths[0], kernel=3, stride=1, pad=1, rng=rng, init_scale=init_gain)),
        ("stem_relu", ReLU()),
        ("stem_pool", MaxPool2D(2)),
    ]
    for stage, width in enumerate(widths, start=1):
        if stage > 1:
            layers.append((f"trans{stage}",
                           Conv2D(widths[stage - 2], width, kernel=3, stride=2, pad=1, rng=rng, init_scale=init_gain)))
            layers.append((f"trans{stage}_relu", ReLU()))
        layers.append((f"res{stage}a", ResidualBlock(width, kernel=3, rng=rng, init_scale=init_gain)))
        layers.append((f"res{stage}b", ResidualBlock(width, kernel=3, rng=rng, init_scale=init_gain)))
    layers.append(("gap", GlobalAvgPool()))
    layers.append(("fc", Dense(widths[-1], num_classes, rng=rng, init_scale=init_gain)))
    layers.append(("softmax", Softmax()))
    meta = {"arch": "resnet15", "in_channels": in_channels, "num_classes": num_classes,
            "input_size": input_size, "widths": tuple(widths)}
    return ModelGraph(layers, input_shape=(in_channels, input_size, input_size), meta=meta)


def build_fcn(in_channels: int, num_classes: int, input_size=64,
              *, encoder_widths=FCN_ENCODER_WIDTHS, decoder_widths=FCN_DECODER_WIDTHS,
              seed: int | None = 0, init_gain: float = 1.0) -> ModelGraph:
    """Four conv+pool encoder stages, four upsample+conv decoder stages and a
    1x1 head producing per-pixel softmax over num_classes + 1 (background
    first).  input_size is a side length or an (h, w) pair; both dims must be
    divisible by 16.
    """
    if len(encoder_widths) != 4 or len(decoder_widths) != 4:
        raise DataError("segmenter takes 4 encoder and 4 decoder widths")
    height, width = (input_size, input_size) if isinstance(input_size, int) else input_size
    for dim in (height, width):
        if dim % 16 or dim < 16:
            raise DataError(
                f"segmenter input dims {width}x{height} must be positive multiples of 16")
    rng = _rng(seed)
    layers = []
    channels = in_channels
    for i, out_ch in enumerate(encoder_widths, start=1):
        layers.append((f"enc{i}", Conv2D(channels, out_ch, kernel=3, stride=1, pad=1, rng=rng, init_scale=init_gain)))
        layers.append((f"enc{i}_relu", ReLU()))
        layers.append((f"enc{i}_pool", MaxPool2D(2)))
        channels = out_ch
    for i, out_ch in enumerate(decoder_widths, start=1):
        layers.append((f"dec{i}_up", NearestUpsample(2)))
        layers.append((f"dec{i}", Conv2D(channels, out_ch, kernel=3, stride=1, pad=1, rng=rng, init_scale=init_gain)))
        layers.append((f"dec{i}_relu", ReLU()))
        channels = out_ch
    layers.append(("head", Conv2D(channels, num_classes + 1, kernel=1, stride=1, pad=0, rng=rng, init_scale=init_gain)))
    layers.append(("softmax", Softmax()))
    meta = {"arch": "fcn", "in_channels": in_channels, "num_classes": num_classes,
            "input_size": (height, width), "encoder_widths": tuple(encoder_widths),
            "decoder_widths": tuple(decoder_widths)}
    return ModelGraph(layers, input_shape=(in_channels, height, width), meta=meta)


BUILDERS = {
    "sequential": build_sequential,
    "resnet15": build_resnet15,
    "fcn": build_fcn,
}
