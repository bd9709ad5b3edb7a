"""Layer vocabulary: conv, pooling, activations, dense, residual, upsample.

Every layer implements forward(x) -> y (caching what backward needs),
backward(dy) -> dx (accumulating parameter gradients), params() for the
registry, and out_shape() for build-time shape validation.  Shapes exclude
the batch dimension.
"""
from __future__ import annotations

import numpy as np

from .kernels import conv2d_backward, conv2d_forward
from .tensor import Tensor


class Layer:
    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> list[tuple[str, Tensor]]:
        return []

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        raise NotImplementedError


def _require_forward(cache, layer: Layer):
    if cache is None:
        raise RuntimeError(f"backward before forward in {type(layer).__name__}")
    return cache


class Conv2D(Layer):
    """2-D cross-correlation with zero padding.

    Weight tensor shape is (filters, in_channels, kh, kw); a 4-channel input
    therefore differs from a 3-channel one only in the second dimension.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel: int = 3,
                 stride: int = 1, pad: int = 1, *, rng: np.random.Generator | None = None,
                 init_scale: float = 1.0):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.pad = pad
        bound = init_scale * np.sqrt(1.0 / (in_channels * kernel * kernel))
        if rng is None:
            w = np.zeros((out_channels, in_channels, kernel, kernel))
        else:
            w = rng.uniform(-bound, bound, size=(out_channels, in_channels, kernel, kernel))
        self.weight = Tensor(w)
        self.bias = Tensor(np.zeros(out_channels))
        self._x = None

    def params(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def out_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.in_channels:
            raise ValueError(f"conv expects {self.in_channels} input channels, got {c}")
        ho = (h + 2 * self.pad - self.kernel) // self.stride + 1
        wo = (w + 2 * self.pad - self.kernel) // self.stride + 1
        if ho <= 0 or wo <= 0:
            raise ValueError(f"conv output would be empty for input {in_shape}")
        return (self.out_channels, ho, wo)

    def forward(self, x):
        if x.shape[1] != self.in_channels:
            raise ValueError(f"conv expects {self.in_channels} input channels, got {x.shape[1]}")
        self._x = np.ascontiguousarray(x)
        return conv2d_forward(self._x, self.weight.data, self.bias.data, self.stride, self.pad)

    def backward(self, dy):
        x = _require_forward(self._x, self)
        dx, dw, db = conv2d_backward(x, self.weight.data, np.ascontiguousarray(dy),
                                     self.stride, self.pad, need_dx=True)
        self.weight.accumulate_grad(dw)
        self.bias.accumulate_grad(db)
        return dx


class MaxPool2D(Layer):
    """Non-overlapping max pooling; ties route gradient to the first
    (row-major) maximum in each window.  Trailing rows/columns that do not
    fill a window are dropped."""

    def __init__(self, window: int = 2):
        self.window = window
        self._cache = None

    def out_shape(self, in_shape):
        c, h, w = in_shape
        if h < self.window or w < self.window:
            raise ValueError(f"input {in_shape} smaller than pool window {self.window}")
        return (c, h // self.window, w // self.window)

    def forward(self, x):
        k = self.window
        n, c, h, w = x.shape
        ho, wo = h // k, w // k
        xt = x[:, :, : ho * k, : wo * k]
        # (n,c,ho,wo,k*k) with the last axis in row-major window order
        win = xt.reshape(n, c, ho, k, wo, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, k * k)
        idx = win.argmax(axis=4)
        self._cache = (x.shape, idx)
        return np.take_along_axis(win, idx[..., None], axis=4)[..., 0]

    def backward(self, dy):
        shape, idx = _require_forward(self._cache, self)
        k = self.window
        n, c, h, w = shape
        ho, wo = h // k, w // k
        dwin = np.zeros((n, c, ho, wo, k * k))
        np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=4)
        dx = np.zeros(shape)
        dx[:, :, : ho * k, : wo * k] = (
            dwin.reshape(n, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * k, wo * k)
        )
        return dx


class ReLU(Layer):
    def __init__(self):
        self._mask = None

    def out_shape(self, in_shape):
        return in_shape

    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dy):
        mask = _require_forward(self._mask, self)
        return np.where(mask, dy, 0.0)


class Flatten(Layer):
    def __init__(self):
        self._shape = None

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        shape = _require_forward(self._shape, self)
        return dy.reshape(shape)


class Dense(Layer):
    """Affine map y = x @ W^T + b with W of shape (out, in)."""

    def __init__(self, in_features: int, out_features: int, *,
                 rng: np.random.Generator | None = None, init_scale: float = 1.0):
        self.in_features = in_features
        self.out_features = out_features
        bound = init_scale * np.sqrt(1.0 / in_features)
        if rng is None:
            w = np.zeros((out_features, in_features))
        else:
            w = rng.uniform(-bound, bound, size=(out_features, in_features))
        self.weight = Tensor(w)
        self.bias = Tensor(np.zeros(out_features))
        self._x = None

    def params(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def out_shape(self, in_shape):
        if in_shape != (self.in_features,):
            raise ValueError(f"dense expects ({self.in_features},), got {in_shape}")
        return (self.out_features,)

    def forward(self, x):
        self._x = x
        return x @ self.weight.data.T + self.bias.data

    def backward(self, dy):
        x = _require_forward(self._x, self)
        self.weight.accumulate_grad(dy.T @ x)
        self.bias.accumulate_grad(dy.sum(axis=0))
        return dy @ self.weight.data


class Softmax(Layer):
    """Softmax over the channel axis (axis 1), per sample or per pixel."""

    def __init__(self):
        self._probs = None

    def out_shape(self, in_shape):
        return in_shape

    def forward(self, x):
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        self._probs = e / e.sum(axis=1, keepdims=True)
        return self._probs

    def backward(self, dy):
        p = _require_forward(self._probs, self)
        inner = (dy * p).sum(axis=1, keepdims=True)
        return p * (dy - inner)


class ResidualBlock(Layer):
    """conv-ReLU-conv plus identity skip; channel count is preserved."""

    def __init__(self, channels: int, kernel: int = 3, *,
                 rng: np.random.Generator | None = None, init_scale: float = 1.0):
        self.channels = channels
        self.conv1 = Conv2D(channels, channels, kernel, 1, kernel // 2,
                            rng=rng, init_scale=init_scale)
        self.relu = ReLU()
        self.conv2 = Conv2D(channels, channels, kernel, 1, kernel // 2,
                            rng=rng, init_scale=init_scale)

    def params(self):
        return [("conv1." + n, t) for n, t in self.conv1.params()] + \
               [("conv2." + n, t) for n, t in self.conv2.params()]

    def out_shape(self, in_shape):
        out = self.conv2.out_shape(self.conv1.out_shape(in_shape))
        if out != in_shape:
            raise ValueError(f"residual block changes shape {in_shape} -> {out}")
        return in_shape

    def forward(self, x):
        return self.conv2.forward(self.relu.forward(self.conv1.forward(x))) + x

    def backward(self, dy):
        dx = self.conv1.backward(self.relu.backward(self.conv2.backward(dy)))
        return dx + dy


class NearestUpsample(Layer):
    """Nearest-neighbour upsampling by an integer factor."""

    def __init__(self, factor: int = 2):
        self.factor = factor
        self._shape = None

    def out_shape(self, in_shape):
        c, h, w = in_shape
        return (c, h * self.factor, w * self.factor)

    def forward(self, x):
        self._shape = x.shape
        f = self.factor
        return np.repeat(np.repeat(x, f, axis=2), f, axis=3)

    def backward(self, dy):
        shape = _require_forward(self._shape, self)
        n, c, h, w = shape
        f = self.factor
        return dy.reshape(n, c, h, f, w, f).sum(axis=(3, 5))


class GlobalAvgPool(Layer):
    """Mean over the spatial dimensions, emitting (n, c)."""

    def __init__(self):
        self._shape = None

    def out_shape(self, in_shape):
        c, h, w = in_shape
        return (c,)

    def forward(self, x):
        self._shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, dy):
        shape = _require_forward(self._shape, self)
        n, c, h, w = shape
        return np.broadcast_to(dy[:, :, None, None], shape) / (h * w)
