"""Ordered layer graph with a named parameter registry."""
from __future__ import annotations

import numpy as np

from .layers import Conv2D, Layer
from .tensor import Tensor


class ModelGraph:
    """A sequence of named layers validated against a declared input shape.

    Parameter names are "<layer_name>.<local_name>" (e.g. "conv1.weight")
    and are unique by construction.
    """

    def __init__(self, layers: list[tuple[str, Layer]], input_shape: tuple[int, ...],
                 meta: dict | None = None):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.meta = dict(meta or {})
        self._params: dict[str, Tensor] = {}
        for lname, layer in self.layers:
            for pname, tensor in layer.params():
                full = f"{lname}.{pname}"
                if full in self._params:
                    raise ValueError(f"duplicate parameter name {full!r}")
                self._params[full] = tensor
        # validate layer-to-layer shape compatibility up front
        shape = self.input_shape
        self.layer_shapes = [shape]
        for lname, layer in self.layers:
            try:
                shape = layer.out_shape(shape)
            except ValueError as e:
                raise ValueError(f"layer {lname!r}: {e}") from e
            self.layer_shapes.append(shape)
        self.output_shape = shape
        self._forward_done = False

    def parameters(self) -> dict[str, Tensor]:
        return self._params

    def num_parameters(self) -> int:
        return sum(t.size for t in self._params.values())

    def input_conv_weight_name(self) -> str:
        """Name of the first convolution's weight tensor (the surgery target)."""
        for lname, layer in self.layers:
            if isinstance(layer, Conv2D):
                return f"{lname}.weight"
        raise ValueError("graph has no convolution layer")

    def forward(self, batch: np.ndarray) -> np.ndarray:
        """Run all layers, caching intermediates for backward."""
        batch = np.asarray(batch, dtype=np.float64)
        if batch.shape[1:] != self.input_shape:
            raise ValueError(
                f"batch shape {batch.shape[1:]} does not match declared input {self.input_shape}")
        out = batch
        for _, layer in self.layers:
            out = layer.forward(out)
        self._forward_done = True
        return out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        """Backpropagate an output gradient, accumulating parameter grads."""
        if not self._forward_done:
            raise RuntimeError("backward called before forward")
        d = dout
        for _, layer in reversed(self.layers):
            d = layer.backward(d)
        return d

    def clear_grads(self) -> None:
        for t in self._params.values():
            t.clear_grad()

    def state(self) -> dict[str, np.ndarray]:
        """Parameter name -> float64 data view, in registry order."""
        return {name: t.data for name, t in self._params.items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        """Overwrite parameters from name -> array; names and shapes must match."""
        for name, tensor in self._params.items():
            if name not in arrays:
                raise ValueError(f"missing parameter {name!r}")
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != tensor.shape:
                raise ValueError(
                    f"parameter {name!r}: shape {arr.shape} != expected {tensor.shape}")
            tensor.data = np.ascontiguousarray(arr)
