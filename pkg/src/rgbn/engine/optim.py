"""Plain stochastic gradient descent."""
from __future__ import annotations

from .tensor import Tensor

DEFAULT_LEARNING_RATE = 0.001


def sgd_step(params: dict[str, Tensor], learning_rate: float = DEFAULT_LEARNING_RATE) -> None:
    """In-place w <- w - lr * g for every parameter; gradients are then cleared.

    Raises if any parameter is missing its gradient.
    """
    for name, tensor in params.items():
        if tensor.grad is None:
            raise ValueError(f"missing gradient for parameter {name!r}")
    for tensor in params.values():
        tensor.data -= learning_rate * tensor.grad
        tensor.clear_grad()
