"""Dense float64 tensor with an optional gradient buffer."""
from __future__ import annotations

import numpy as np


class Tensor:
    """A named-shape parameter or activation buffer.

    `data` is always a C-contiguous float64 array; `grad`, when present,
    has exactly the same shape.  Gradients accumulate across backward calls
    until cleared by the optimizer.
    """

    __slots__ = ("data", "grad")

    def __init__(self, data):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def accumulate_grad(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ValueError(f"gradient shape {g.shape} != data shape {self.data.shape}")
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def clear_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={tuple(self.shape)}, grad={'set' if self.grad is not None else 'none'})"
