"""Confusion-matrix IoU evaluation, grouped reporting, and ensembling."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .manifest import IGNORE_LABEL, TaskSpec


class ConfusionMatrix:
    """C x C integer counts, counts[gt][pred]. Mergeable by elementwise sum."""

    def __init__(self, num_classes: int):
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def accumulate(self, pred: np.ndarray, gt: np.ndarray) -> "ConfusionMatrix":
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        if pred.shape != gt.shape:
            raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
        pred = pred.ravel()
        gt = gt.ravel()
        keep = gt != IGNORE_LABEL
        pred, gt = pred[keep], gt[keep]
        if gt.size and (gt.max() >= self.num_classes or gt.min() < 0):
            raise ValueError("gt contains class ids outside the task")
        if pred.size and (pred.max() >= self.num_classes or pred.min() < 0):
            raise ValueError("pred contains class ids outside the task")
        flat = gt.astype(np.int64) * self.num_classes + pred.astype(np.int64)
        self.counts += np.bincount(flat, minlength=self.num_classes**2).reshape(
            self.num_classes, self.num_classes
        )
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise ValueError("cannot merge matrices of different sizes")
        self.counts += other.counts
        return self

    def per_class_iou(self) -> dict[int, float]:
        """IoU per class; classes with empty union are omitted (undefined)."""
        tp = np.diag(self.counts)
        union = self.counts.sum(axis=0) + self.counts.sum(axis=1) - tp
        return {c: float(tp[c] / union[c]) for c in range(self.num_classes) if union[c] > 0}


@dataclass
class IoUReport:
    per_class: dict[int, float]
    miou: float
    group_means: dict[str, float | None]
    undefined_classes: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "per_class": {str(c): v for c, v in sorted(self.per_class.items())},
            "miou": self.miou,
            "groups": self.group_means,
            "undefined_classes": self.undefined_classes,
        }


def _mean_over(per_class: dict[int, float], ids) -> float | None:
    vals = [per_class[c] for c in ids if c in per_class]
    return sum(vals) / len(vals) if vals else None


def iou_report(cm: ConfusionMatrix, task: TaskSpec, rare: set[int] | None = None) -> IoUReport:
    """Per-class IoU plus anatomy / instrument / rare group means.

    Classes absent from both prediction and ground truth are undefined and
    excluded from every mean.
    """
    per_class = cm.per_class_iou()
    if not per_class:
        raise ValueError("all classes undefined; nothing was accumulated")
    undefined = [c for c in range(cm.num_classes) if c not in per_class]
    group_means = {
        "anatomies": _mean_over(per_class, task.class_ids("anatomy")),
        "instruments": _mean_over(per_class, task.class_ids("instrument")),
        "rare": _mean_over(per_class, sorted(rare)) if rare is not None else None,
    }
    miou = sum(per_class.values()) / len(per_class)
    return IoUReport(per_class=per_class, miou=miou, group_means=group_means,
                     undefined_classes=undefined)


def ensemble_mean(prob_maps: list[np.ndarray], tol: float = 1e-6) -> np.ndarray:
    """Pixelwise arithmetic mean of [C,H,W] probability maps.

    Each input pixel's class vector must sum to 1 within `tol`; the output
    then does too, and its argmax over C is the ensembled prediction.
    """
    if not prob_maps:
        raise ValueError("need at least one probability map")
    maps = [np.asarray(m, dtype=np.float64) for m in prob_maps]
    shape = maps[0].shape
    for m in maps:
        if m.shape != shape:
            raise ValueError(f"shape mismatch: {m.shape} vs {shape}")
        sums = m.sum(axis=0)
        if np.abs(sums - 1.0).max() > tol:
            raise ValueError("probability map pixels do not sum to 1")
    return np.mean(maps, axis=0)
