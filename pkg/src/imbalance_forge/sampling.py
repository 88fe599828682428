"""Oversampling strategies: repeat factor epoch planning, adaptive
IoU-feedback batch composition, and a uniform baseline.

All randomness flows through named substreams of (seed, epoch/step), so
any epoch plan or batch can be regenerated in isolation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .manifest import DatasetManifest, RecordStats, class_frequencies
from .rngstreams import substream

# r_c diverges as f_c -> 0; absent classes get this finite cap instead.
ZERO_FREQUENCY_CAP = 20.0


@dataclass(frozen=True)
class RepeatFactorConfig:
    t: float = 0.15
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.t <= 1.0:
            raise ValueError(f"t must be in (0,1], got {self.t}")


@dataclass(frozen=True)
class AdaptiveConfig:
    batch_size: int = 8
    candidates_per_slot: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.candidates_per_slot < 1:
            raise ValueError("batch_size and candidates_per_slot must be >= 1")


@dataclass(frozen=True)
class EpochPlan:
    entries: tuple[str, ...]
    epoch_index: int
    source_repeat_factors: dict[str, float]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class IoUState:
    """Exponentially smoothed per-class IoU, the adaptive sampler's signal."""

    ema: dict[int, float]
    smoothing: float = 0.1
    step: int = 0

    INIT = 0.5

    @classmethod
    def initial(cls, class_ids, smoothing: float = 0.1) -> "IoUState":
        return cls(ema={c: cls.INIT for c in class_ids}, smoothing=smoothing)

    def to_json(self) -> str:
        return json.dumps(
            {
                "ema": {str(c): v for c, v in sorted(self.ema.items())},
                "smoothing": self.smoothing,
                "step": self.step,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "IoUState":
        obj = json.loads(text)
        return cls(
            ema={int(k): float(v) for k, v in obj["ema"].items()},
            smoothing=float(obj["smoothing"]),
            step=int(obj["step"]),
        )


def class_repeat_factor(f_c: float, t: float, cap: float = ZERO_FREQUENCY_CAP) -> float:
    """r_c = max(1, sqrt(t / f_c)), capped for classes that never occur."""
    if not 0.0 < t <= 1.0:
        raise ValueError(f"t must be in (0,1], got {t}")
    if f_c <= 0.0:
        return cap
    return min(cap, max(1.0, math.sqrt(t / f_c)))


def image_repeat_factor(record: RecordStats, r_c: dict[int, float]) -> float:
    """r_I = max of r_c over classes present in the record."""
    present = record.present_classes()
    if not present:
        raise ValueError(f"record {record.record_id!r} has no labelled pixels")
    return max(r_c[c] for c in present)


def repeat_factors(manifest: DatasetManifest, t: float) -> dict[str, float]:
    freqs = class_frequencies(manifest)
    r_c = {c: class_repeat_factor(f, t) for c, f in freqs.items()}
    return {rec.record_id: image_repeat_factor(rec, r_c) for rec in manifest.records}


def build_epoch_plan(
    manifest: DatasetManifest, cfg: RepeatFactorConfig, epoch_index: int
) -> EpochPlan:
    """Stochastically round each record's r_I, then shuffle the expanded list.

    Fresh rounding every epoch keeps the expected repeat count equal to
    r_I; the plan is a pure function of (manifest, cfg.seed, epoch_index).
    """
    r_i = repeat_factors(manifest, cfg.t)
    rng = substream(cfg.seed, "plan", epoch_index)
    entries: list[str] = []
    for rec in manifest.records:
        r = r_i[rec.record_id]
        repeats = int(math.floor(r))
        if rng.random() < r - repeats:
            repeats += 1
        entries.extend([rec.record_id] * repeats)
    order = rng.permutation(len(entries))
    return EpochPlan(
        entries=tuple(entries[i] for i in order),
        epoch_index=epoch_index,
        source_repeat_factors=r_i,
    )


def uniform_epoch(manifest: DatasetManifest, seed: int, epoch_index: int) -> EpochPlan:
    """Baseline: one shuffled pass, every record exactly once."""
    rng = substream(seed, "plan", epoch_index)
    ids = [rec.record_id for rec in manifest.records]
    order = rng.permutation(len(ids))
    return EpochPlan(
        entries=tuple(ids[i] for i in order),
        epoch_index=epoch_index,
        source_repeat_factors={rid: 1.0 for rid in ids},
    )


def adaptive_class_probs(state: IoUState) -> dict[int, float]:
    """Class selection probabilities: softmax over (1 - ema^2)."""
    ids = sorted(state.ema)
    scores = np.array([1.0 - state.ema[c] ** 2 for c in ids])
    e = np.exp(scores - scores.max())
    p = e / e.sum()
    return {c: float(p[i]) for i, c in enumerate(ids)}


def adaptive_batch(
    manifest: DatasetManifest,
    state: IoUState,
    cfg: AdaptiveConfig,
    step: int,
) -> list[str]:
    """Compose one batch biased toward currently underperforming classes.

    Each slot draws a target class from the IoU-derived probabilities, then
    keeps whichever of `candidates_per_slot` uniform draws has the most
    pixels of that class (ties go to the earliest manifest index).
    """
    probs = adaptive_class_probs(state)
    ids = sorted(probs)
    p = np.array([probs[c] for c in ids])
    slot_rng = substream(cfg.seed, "slots", step)
    cand_rng = substream(cfg.seed, "candidates", step)

    batch: list[str] = []
    n = len(manifest.records)
    for _ in range(cfg.batch_size):
        target = ids[int(slot_rng.choice(len(ids), p=p))]
        candidates = cand_rng.integers(0, n, size=cfg.candidates_per_slot)
        batch.append(select_candidate(manifest, candidates, target))
    return batch


def select_candidate(manifest: DatasetManifest, candidate_indices, target: int) -> str:
    """Pick the candidate with the most pixels of `target`; ties go to the
    smallest manifest index."""
    best_idx = None
    best_count = -1
    for i in sorted(set(int(c) for c in candidate_indices)):
        count = manifest.records[i].pixel_counts.get(target, 0)
        if count > best_count:
            best_idx, best_count = i, count
    if best_idx is None:
        raise ValueError("no candidates given")
    return manifest.records[best_idx].record_id


def update_iou_ema(state: IoUState, observed: dict[int, float]) -> IoUState:
    """Blend observed per-class IoUs into the moving average.

    Classes absent from `observed` keep their current value.
    """
    for c, v in observed.items():
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"observed IoU for class {c} out of [0,1]: {v}")
        if c not in state.ema:
            raise ValueError(f"class {c} not tracked by this IoUState")
    s = state.smoothing
    ema = dict(state.ema)
    for c, v in observed.items():
        ema[c] = (1.0 - s) * ema[c] + s * v
    return IoUState(ema=ema, smoothing=s, step=state.step + 1)


def export_plan(plan: EpochPlan, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as f:
        for rid in plan.entries:
            f.write(json.dumps({"epoch": plan.epoch_index, "record": rid}) + "\n")
