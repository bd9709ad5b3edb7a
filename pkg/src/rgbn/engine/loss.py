"""Cross-entropy losses and their seed gradients."""
from __future__ import annotations

import numpy as np


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log softmax probability of the true class.

    Numerically stabilised by max subtraction; labels are integer class
    indices in [0, C).
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"label out of range [0, {c})")
    z = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    return float(np.mean(logsumexp - z[np.arange(n), labels]))


def nll_from_probs(probs: np.ndarray, labels: np.ndarray):
    """Mean -log p(true class) from probabilities, and the gradient wrt probs.

    Used to seed backward through a model whose final layer is a softmax;
    composing the returned gradient with the softmax backward reproduces the
    familiar (p - onehot)/n logit gradient.
    """
    labels = np.asarray(labels)
    n, c = probs.shape[0], probs.shape[1]
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"label out of range [0, {c})")
    rows = np.arange(n)
    p_true = probs[rows, labels]
    loss = float(np.mean(-np.log(p_true)))
    dprobs = np.zeros_like(probs)
    dprobs[rows, labels] = -1.0 / (p_true * n)
    return loss, dprobs


def pixel_nll_from_probs(probs: np.ndarray, labels: np.ndarray,
                         class_weights: np.ndarray):
    """Weighted per-pixel -log p(true class) over a (n,C,H,W) probability map.

    `labels` is (n,H,W) integer classes; `class_weights` has one weight per
    class.  Loss is the weighted mean; the gradient is wrt the probabilities.
    """
    n, c, h, w = probs.shape
    if labels.shape != (n, h, w):
        raise ValueError(f"labels shape {labels.shape} != {(n, h, w)}")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"pixel label out of range [0, {c})")
    wpix = class_weights[labels]  # (n,h,w)
    wsum = float(wpix.sum())
    ni, hi, wi = np.ogrid[:n, :h, :w]
    p_true = probs[ni, labels, hi, wi]
    loss = float((wpix * -np.log(p_true)).sum() / wsum)
    dprobs = np.zeros_like(probs)
    dprobs[ni, labels, hi, wi] = -wpix / (p_true * wsum)
    return loss, dprobs
