"""Finite-difference verification of analytic gradients."""
from __future__ import annotations

import numpy as np

from .graph import ModelGraph

MAX_CHECK_PARAMS = 50_000


def finite_diff_check(model: ModelGraph, batch: np.ndarray, epsilon: float = 1e-3,
                      seed: int = 0) -> dict[str, float]:
    """Max relative error between analytic and central-difference gradients.

    The scalar objective is a fixed random projection of the model output,
    f = sum(R * forward(batch)), which exercises every layer including the
    softmax head.  Central differences (f(w+eps) - f(w-eps)) / 2 eps are
    compared element-wise against analytic gradients using the denominator
    max(|a| + |b|, 1e-8).  Returns per-tensor max relative error.
    """
    total = model.num_parameters()
    if total > MAX_CHECK_PARAMS:
        raise ValueError(
            f"model has {total} parameters; finite differencing is guarded at "
            f"{MAX_CHECK_PARAMS}")
    rng = np.random.default_rng(seed)
    out = model.forward(batch)
    projection = rng.standard_normal(out.shape)

    model.clear_grads()
    model.forward(batch)
    model.backward(projection)
    analytic = {name: np.array(t.grad) for name, t in model.parameters().items()}

    def objective() -> float:
        return float(np.sum(model.forward(batch) * projection))

    report: dict[str, float] = {}
    for name, tensor in model.parameters().items():
        flat = tensor.data.reshape(-1)
        grad = analytic[name].reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            f_plus = objective()
            flat[i] = orig - epsilon
            f_minus = objective()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            denom = max(abs(numeric) + abs(grad[i]), 1e-8)
            worst = max(worst, abs(numeric - grad[i]) / denom)
        report[name] = worst
    model.clear_grads()
    return report
