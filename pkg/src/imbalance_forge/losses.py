"""Training losses with analytic gradients with respect to the logits.

All three losses share the same contract: flat logits [N, C], integer
labels [N] (255 = ignore), and a LossOutput carrying the scalar value and
the full gradient array. Gradients are exact, not autodiff-derived, so
they can be checked independently against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .manifest import IGNORE_LABEL


@dataclass(frozen=True)
class LossOutput:
    value: float
    grad_logits: np.ndarray


def _stable_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _softmax_backward(p: np.ndarray, grad_p: np.ndarray) -> np.ndarray:
    dot = (grad_p * p).sum(axis=-1, keepdims=True)
    return p * (grad_p - dot)


def _check_inputs(logits: np.ndarray, labels: np.ndarray) -> None:
    if logits.ndim != 2:
        raise ValueError(f"logits must be [N,C], got shape {logits.shape}")
    if labels.shape != (logits.shape[0],):
        raise ValueError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    valid = (labels == IGNORE_LABEL) | ((labels >= 0) & (labels < logits.shape[1]))
    if not valid.all():
        bad = np.unique(labels[~valid])
        raise ValueError(f"label values {bad.tolist()} out of range")


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> LossOutput:
    """Mean negative log-likelihood over non-ignored pixels."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    _check_inputs(logits, labels)
    keep = labels != IGNORE_LABEL
    n_keep = int(keep.sum())
    if n_keep == 0:
        return LossOutput(0.0, np.zeros_like(logits))
    p = _stable_softmax(logits)
    idx = np.nonzero(keep)[0]
    lab = labels[idx]
    value = float(-np.log(p[idx, lab]).sum() / n_keep)
    grad = np.zeros_like(logits)
    grad[idx] = p[idx] / n_keep
    grad[idx, lab] -= 1.0 / n_keep
    return LossOutput(value, grad)


def ohem_cross_entropy(
    logits: np.ndarray, labels: np.ndarray, threshold: float = 0.7
) -> LossOutput:
    """Cross-entropy restricted to hard pixels.

    Pixels whose correct-class probability exceeds `threshold` contribute
    neither loss nor gradient; the mean runs over the remaining pixels.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must be in (0,1], got {threshold}")
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    _check_inputs(logits, labels)
    keep = labels != IGNORE_LABEL
    p = _stable_softmax(logits)
    idx = np.nonzero(keep)[0]
    if idx.size:
        p_correct = p[idx, labels[idx]]
        idx = idx[p_correct <= threshold]
    if idx.size == 0:
        return LossOutput(0.0, np.zeros_like(logits))
    lab = labels[idx]
    value = float(-np.log(p[idx, lab]).sum() / idx.size)
    grad = np.zeros_like(logits)
    grad[idx] = p[idx] / idx.size
    grad[idx, lab] -= 1.0 / idx.size
    return LossOutput(value, grad)


def lovasz_grad(gt_sorted: np.ndarray) -> np.ndarray:
    """Gradient of the Jaccard-loss extension at sorted binary ground truth.

    `gt_sorted` must be ordered by descending prediction error. The output
    is non-negative and sums to the final Jaccard loss value.
    """
    gt_sorted = np.asarray(gt_sorted, dtype=np.float64)
    if gt_sorted.ndim != 1 or gt_sorted.size == 0:
        raise ValueError("gt_sorted must be a non-empty 1-D vector")
    total = gt_sorted.sum()
    if total == 0:
        raise ValueError("class absent from ground truth; skip it")
    intersection = total - np.cumsum(gt_sorted)
    union = total + np.cumsum(1.0 - gt_sorted)
    jaccard = 1.0 - intersection / union
    grad = jaccard.copy()
    grad[1:] = jaccard[1:] - jaccard[:-1]
    return grad


def lovasz_softmax(logits: np.ndarray, labels: np.ndarray) -> LossOutput:
    """Jaccard surrogate: mean Lovász-extension loss over classes present.

    Errors are sorted descending with a stable sort (ties broken by pixel
    index), and the gradient uses that fixed permutation, a valid
    subgradient on the piecewise-linear surface.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    _check_inputs(logits, labels)
    keep = labels != IGNORE_LABEL
    idx = np.nonzero(keep)[0]
    if idx.size == 0:
        return LossOutput(0.0, np.zeros_like(logits))
    p_full = _stable_softmax(logits)
    p = p_full[idx]
    lab = labels[idx]
    present = np.unique(lab)

    grad_p = np.zeros_like(p)
    total = 0.0
    for c in present:
        fg = (lab == c).astype(np.float64)
        m = np.where(fg > 0, 1.0 - p[:, c], p[:, c])
        order = np.argsort(-m, kind="stable")
        g = lovasz_grad(fg[order])
        total += float(m[order] @ g)
        # dL/dm at each pixel is g at its rank; m = fg ? 1-p_c : p_c
        dm = np.empty_like(m)
        dm[order] = g
        grad_p[:, c] += np.where(fg > 0, -dm, dm)

    n_present = len(present)
    value = total / n_present
    grad_kept = _softmax_backward(p, grad_p / n_present)
    grad = np.zeros_like(logits)
    grad[idx] = grad_kept
    return LossOutput(value, grad)


LOSSES = {
    "ce": cross_entropy,
    "ohem": ohem_cross_entropy,
    "lovasz": lovasz_softmax,
}
