"""Deterministic training loop wiring samplers, losses, schedules and
evaluation around a small per-pixel classifier.

The model is intentionally tiny (one or two affine stages on per-pixel
features); everything interesting happens in how batches are composed and
which loss shapes the gradients.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import losses as losses_mod
from .diffmath import Tape, Tensor
from .manifest import DatasetManifest, rare_classes
from .metrics import ConfusionMatrix, IoUReport, iou_report
from .rngstreams import substream
from .sampling import (
    AdaptiveConfig,
    IoUState,
    RepeatFactorConfig,
    adaptive_batch,
    build_epoch_plan,
    uniform_epoch,
    update_iou_ema,
)
from .schedule import ScheduleConfig, lr_at
from .synth import AugmentConfig, SynthRecord, augment

SAMPLERS = ("uniform", "repeat_factor", "adaptive")


class DivergenceError(RuntimeError):
    """Raised when the training loss goes non-finite."""


@dataclass(frozen=True)
class Seeds:
    data: int = 0
    model: int = 1
    sampler: int = 2


@dataclass(frozen=True)
class TrainConfig:
    sampler: str = "uniform"
    loss: str = "ce"
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    batch_size: int = 8
    epochs: int = 50
    hidden: int = 32
    stages: int = 2
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    seeds: Seeds = field(default_factory=Seeds)
    repeat_threshold: float = 0.15
    ohem_threshold: float = 0.7
    candidates_per_slot: int = 10
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.sampler not in SAMPLERS:
            raise ValueError(f"unknown sampler {self.sampler!r}")
        if self.loss not in losses_mod.LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.stages not in (1, 2):
            raise ValueError("stages must be 1 or 2")

    def config_hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


class ToyModel:
    """1- or 2-stage affine per-pixel classifier with tanh between stages."""

    def __init__(self, feature_dim: int, num_classes: int, cfg: TrainConfig):
        rng = substream(cfg.seeds.model, "model")
        self.stages = cfg.stages
        if cfg.stages == 1:
            self.params = {
                "w1": Tensor(rng.normal(0, 0.1, (feature_dim, num_classes))),
                "b1": Tensor(np.zeros(num_classes)),
            }
        else:
            self.params = {
                "w1": Tensor(rng.normal(0, 0.1, (feature_dim, cfg.hidden))),
                "b1": Tensor(np.zeros(cfg.hidden)),
                "w2": Tensor(rng.normal(0, 0.1, (cfg.hidden, num_classes))),
                "b2": Tensor(np.zeros(num_classes)),
            }

    def forward(self, tape: Tape, x: Tensor) -> Tensor:
        h = tape.linear(x, self.params["w1"], self.params["b1"])
        if self.stages == 2:
            h = tape.tanh(h)
            h = tape.linear(h, self.params["w2"], self.params["b2"])
        return h

    def logits(self, x: np.ndarray) -> np.ndarray:
        """Inference-only forward on a plain array."""
        h = x @ self.params["w1"].data + self.params["b1"].data
        if self.stages == 2:
            h = np.tanh(h)
            h = h @ self.params["w2"].data + self.params["b2"].data
        return h

    def save(self, path: str | Path, cfg: TrainConfig) -> None:
        names = sorted(self.params)
        header = {
            "params": {n: list(self.params[n].data.shape) for n in names},
            "stages": self.stages,
            "seeds": asdict(cfg.seeds),
            "config_hash": cfg.config_hash(),
            "dtype": "f32le",
        }
        with Path(path).open("wb") as f:
            f.write(json.dumps(header, sort_keys=True).encode("ascii") + b"\n")
            for n in names:
                f.write(self.params[n].data.astype("<f4").tobytes())


class Adam:
    def __init__(self, params: dict[str, Tensor], beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for n, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            self.m[n] = b1 * self.m[n] + (1 - b1) * g
            self.v[n] = b2 * self.v[n] + (1 - b2) * g * g
            m_hat = self.m[n] / (1 - b1**self.t)
            v_hat = self.v[n] / (1 - b2**self.t)
            p.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def split_records(manifest: DatasetManifest, val_fraction: float = 0.2):
    """Deterministic held-out split by record-id hash."""
    train_ids, val_ids = [], []
    for rec in manifest.records:
        h = int.from_bytes(hashlib.sha1(rec.record_id.encode()).digest()[:4], "big")
        (val_ids if (h % 100) < val_fraction * 100 else train_ids).append(rec.record_id)
    return train_ids, val_ids


def _batch_arrays(records, ids, aug_cfg, rng):
    feats, labs = [], []
    for rid in ids:
        rec = records[rid]
        f, l = augment(rec.features, rec.labels, aug_cfg, rng)
        feats.append(f.reshape(-1, f.shape[-1]))
        labs.append(l.reshape(-1))
    return feats, labs


def _batch_loss(model, feats, labs, loss_name, ohem_threshold):
    """Forward + loss + analytic backward; returns (value, tape-populated grads).

    Cross-entropy variants flatten the whole batch; the Jaccard surrogate
    is computed per image and averaged so per-image class presence drives
    the sort.
    """
    tape = Tape()
    x = Tensor(np.concatenate(feats, axis=0))
    logits = model.forward(tape, x)
    offsets = np.cumsum([0] + [f.shape[0] for f in feats])

    if loss_name == "lovasz":
        value = 0.0
        grad = np.zeros_like(logits.data)
        for i in range(len(feats)):
            sl = slice(offsets[i], offsets[i + 1])
            out = losses_mod.lovasz_softmax(logits.data[sl], labs[i])
            value += out.value
            grad[sl] = out.grad_logits
        value /= len(feats)
        grad /= len(feats)
    else:
        flat_labels = np.concatenate(labs)
        if loss_name == "ohem":
            out = losses_mod.ohem_cross_entropy(logits.data, flat_labels, ohem_threshold)
        else:
            out = losses_mod.cross_entropy(logits.data, flat_labels)
        value, grad = out.value, out.grad_logits

    tape.backward(logits, grad)
    return value, logits.data


def _batch_iou(pred_logits, labs, num_classes):
    """Per-class IoU of the batch, restricted to classes present in its gt."""
    cm = ConfusionMatrix(num_classes)
    preds = np.argmax(pred_logits, axis=1)
    gt = np.concatenate(labs)
    cm.accumulate(preds, gt)
    present = set(np.unique(gt[gt != 255]).tolist())
    return {c: v for c, v in cm.per_class_iou().items() if c in present}


def evaluate(model: ToyModel, records, ids, manifest: DatasetManifest) -> IoUReport:
    cm = ConfusionMatrix(manifest.task.num_classes)
    for rid in ids:
        rec = records[rid]
        x = rec.features.reshape(-1, rec.features.shape[-1])
        preds = np.argmax(model.logits(x), axis=1)
        cm.accumulate(preds, rec.labels.reshape(-1))
    return iou_report(cm, manifest.task, rare_classes(manifest))


CSV_COLUMNS = ["epoch", "lr", "train_loss", "miou", "anat_miou", "tool_miou", "rare_miou"]


def _log_row(epoch, lr, train_loss, report: IoUReport) -> dict:
    g = report.group_means

    def fmt(v):
        return "" if v is None else repr(v)

    return {
        "epoch": epoch,
        "lr": "" if lr is None else repr(lr),
        "train_loss": "" if train_loss is None else repr(train_loss),
        "miou": repr(report.miou),
        "anat_miou": fmt(g["anatomies"]),
        "tool_miou": fmt(g["instruments"]),
        "rare_miou": fmt(g["rare"]),
    }


def train(
    records: list[SynthRecord],
    manifest: DatasetManifest,
    cfg: TrainConfig,
    outdir: str | Path | None = None,
) -> list[dict]:
    """Run the full loop; returns the per-epoch log (and writes it as CSV
    plus a model checkpoint when `outdir` is given)."""
    by_id = {r.stats.record_id: r for r in records}
    train_ids, val_ids = split_records(manifest)
    if not train_ids or not val_ids:
        raise ValueError("degenerate train/val split")
    train_manifest = DatasetManifest(
        records=tuple(manifest.record(rid) for rid in train_ids), task=manifest.task
    )
    feature_dim = records[0].features.shape[-1]
    num_classes = manifest.task.num_classes

    model = ToyModel(feature_dim, num_classes, cfg)
    opt = Adam(model.params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    iou_state = IoUState.initial(manifest.task.class_ids())
    n_batches = math.ceil(len(train_ids) / cfg.batch_size)

    log: list[dict] = []
    writer = None
    csv_file = None
    if outdir is not None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        csv_file = (outdir / "metrics.csv").open("w", newline="")
        writer = csv.DictWriter(csv_file, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()

    def emit(row):
        log.append(row)
        if writer is not None:
            writer.writerow(row)
            csv_file.flush()

    try:
        emit(_log_row(0, None, None, evaluate(model, by_id, val_ids, manifest)))
        global_step = 0
        for epoch in range(1, cfg.epochs + 1):
            lr = lr_at(cfg.schedule, epoch - 1)
            if cfg.sampler == "repeat_factor":
                plan = build_epoch_plan(
                    train_manifest,
                    RepeatFactorConfig(t=cfg.repeat_threshold, seed=cfg.seeds.sampler),
                    epoch,
                )
                batches = [
                    plan.entries[i : i + cfg.batch_size]
                    for i in range(0, len(plan.entries), cfg.batch_size)
                ]
            elif cfg.sampler == "uniform":
                plan = uniform_epoch(train_manifest, cfg.seeds.sampler, epoch)
                batches = [
                    plan.entries[i : i + cfg.batch_size]
                    for i in range(0, len(plan.entries), cfg.batch_size)
                ]
            else:
                batches = None  # composed on the fly below

            epoch_loss = 0.0
            n_steps = n_batches if batches is None else len(batches)
            for b in range(n_steps):
                if batches is None:
                    ids = adaptive_batch(
                        train_manifest,
                        iou_state,
                        AdaptiveConfig(
                            batch_size=cfg.batch_size,
                            candidates_per_slot=cfg.candidates_per_slot,
                            seed=cfg.seeds.sampler,
                        ),
                        step=global_step,
                    )
                else:
                    ids = batches[b]
                aug_rng = substream(cfg.seeds.data, "augment", global_step)
                feats, labs = _batch_arrays(by_id, ids, cfg.augment, aug_rng)
                opt.zero_grad()
                value, pred_logits = _batch_loss(
                    model, feats, labs, cfg.loss, cfg.ohem_threshold
                )
                if not math.isfinite(value):
                    raise DivergenceError(
                        f"non-finite loss at epoch {epoch}, step {b}: {value}"
                    )
                opt.step(lr)
                epoch_loss += value
                if cfg.sampler == "adaptive":
                    observed = _batch_iou(pred_logits, labs, num_classes)
                    if observed:
                        iou_state = update_iou_ema(iou_state, observed)
                global_step += 1

            report = evaluate(model, by_id, val_ids, manifest)
            emit(_log_row(epoch, lr, epoch_loss / max(1, n_steps), report))
    finally:
        if csv_file is not None:
            csv_file.close()

    if outdir is not None:
        model.save(Path(outdir) / "model.ckpt", cfg)
    return log


def best_miou(log: list[dict]) -> float:
    """Best validation mIoU over the per-epoch log (the reported metric)."""
    return max(float(row["miou"]) for row in log)
