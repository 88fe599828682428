"""Command-line entry point.

Subcommands cover the full workflow: synthetic data generation, epoch
planning, adaptive-sampling simulation, gradient checking, evaluation,
probability-map ensembling, and toy training. Every run directory gets a
run.json provenance record so results can be regenerated from flags alone.

Exit codes: 0 success, 1 validation error (bad flags/inputs), 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, arrayio, losses as losses_mod
from .diffmath import grad_check
from .manifest import ManifestError, load_manifest
from .metrics import ConfusionMatrix, ensemble_mean, iou_report
from .manifest import rare_classes
from .sampling import (
    AdaptiveConfig,
    IoUState,
    RepeatFactorConfig,
    adaptive_batch,
    build_epoch_plan,
)
from .schedule import ScheduleConfig
from .synth import AugmentConfig, SynthConfig, SynthRecord, generate_dataset, save_dataset
from .trainer import Seeds, TrainConfig, train

log = logging.getLogger("imbalance_forge")


def _write_run_record(outdir: Path, args: argparse.Namespace) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    record = {
        "version": __version__,
        "command": args.command,
        "args": {k: v for k, v in vars(args).items() if k != "func"},
        "seed": getattr(args, "seed", None),
    }
    (outdir / "run.json").write_text(json.dumps(record, indent=2, default=str) + "\n")


def _max_workers() -> int:
    # Caps any internal parallelism; the current implementations are
    # single-threaded, so this is a ceiling, not a target.
    try:
        return max(1, int(os.environ.get("IMBALANCE_FORGE_THREADS", "1")))
    except ValueError:
        return 1


def cmd_gen_synth(args) -> int:
    cfg = SynthConfig.from_json(Path(args.config).read_text())
    if args.seed is not None:
        cfg = SynthConfig.from_json(json.dumps({**asdict(cfg), "seed": args.seed}))
    records, manifest = generate_dataset(cfg)
    outdir = Path(args.out)
    _write_run_record(outdir, args)
    save_dataset(records, manifest, outdir)
    log.info("wrote %d records to %s", len(records), outdir)
    return 0


def cmd_plan_epoch(args) -> int:
    manifest = load_manifest(args.manifest)
    cfg = RepeatFactorConfig(t=args.t, seed=args.seed or 0)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8") as f:
        for epoch in range(args.epochs):
            plan = build_epoch_plan(manifest, cfg, epoch)
            for rid in plan.entries:
                f.write(json.dumps({"epoch": epoch, "record": rid}) + "\n")
    log.info("wrote %d-epoch plan to %s", args.epochs, out)
    return 0


def cmd_adaptive_sim(args) -> int:
    manifest = load_manifest(args.manifest)
    cfg = AdaptiveConfig(batch_size=args.batch_size, seed=args.seed or 0)
    state = IoUState.initial(manifest.task.class_ids())
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8") as f:
        for step in range(args.steps):
            batch = adaptive_batch(manifest, state, cfg, step)
            f.write(json.dumps({"step": step, "batch": batch}) + "\n")
    log.info("wrote %d-step adaptive trace to %s", args.steps, out)
    return 0


def cmd_grad_check(args) -> int:
    loss_fn = losses_mod.LOSSES[args.loss]
    rng = np.random.Generator(np.random.PCG64(args.seed or 0))
    worst = 0.0
    for _ in range(args.trials):
        n = int(rng.integers(2, 33))
        c = int(rng.integers(2, 6))
        labels = rng.integers(0, c, size=n)
        logits = rng.normal(0, 2.0, (n, c))

        def f(x):
            out = loss_fn(x, labels)
            return out.value, out.grad_logits

        worst = max(worst, grad_check(f, logits, eps=args.eps))
    print(f"loss={args.loss} trials={args.trials} max_rel_error={worst:.3e}")
    return 0 if worst < 1e-4 else 2


def cmd_eval(args) -> int:
    manifest = load_manifest(args.manifest)
    cm = ConfusionMatrix(manifest.task.num_classes)
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    for rec in manifest.records:
        pred = arrayio.read_pgm(pred_dir / f"{rec.record_id}.pgm")
        gt = arrayio.read_pgm(gt_dir / f"{rec.record_id}.pgm")
        cm.accumulate(pred, gt)
    report = iou_report(cm, manifest.task, rare_classes(manifest))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    print(f"miou={report.miou:.4f}")
    return 0


def cmd_ensemble(args) -> int:
    maps = [arrayio.read_prob_map(p) for p in args.inputs]
    mean = ensemble_mean(maps)
    arrayio.write_prob_map(mean, args.out)
    log.info("wrote ensembled map to %s", args.out)
    return 0


def _train_config_from_dict(obj: dict) -> TrainConfig:
    sched = ScheduleConfig(**obj.get("schedule", {}))
    aug = AugmentConfig(**obj.get("augment", {}))
    seeds = Seeds(**obj.get("seeds", {}))
    rest = {
        k: v
        for k, v in obj.items()
        if k not in ("schedule", "augment", "seeds")
    }
    return TrainConfig(schedule=sched, augment=aug, seeds=seeds, **rest)


def _load_training_inputs(cfg_obj: dict):
    if "synth" in cfg_obj:
        synth_cfg = SynthConfig.from_json(json.dumps(cfg_obj["synth"]))
        return generate_dataset(synth_cfg)
    if "dataset_dir" in cfg_obj:
        root = Path(cfg_obj["dataset_dir"])
        manifest = load_manifest(root / "manifest.jsonl")
        records = []
        for rec in manifest.records:
            features = arrayio.read_f32_blob(root / "features" / f"{rec.record_id}.bin")
            labels = arrayio.read_pgm(root / "labels" / f"{rec.record_id}.pgm")
            records.append(SynthRecord(features=features, labels=labels, stats=rec))
        return records, manifest
    raise ManifestError("train config needs either a 'synth' or 'dataset_dir' section")


def cmd_train_toy(args) -> int:
    cfg_obj = json.loads(Path(args.config).read_text())
    records, manifest = _load_training_inputs(cfg_obj)
    train_cfg = _train_config_from_dict(cfg_obj.get("train", {}))
    outdir = Path(args.out)
    _write_run_record(outdir, args)
    train_log = train(records, manifest, train_cfg, outdir)
    best = max(train_log, key=lambda row: float(row["miou"]))
    print(f"best_miou={float(best['miou']):.4f} at epoch {best['epoch']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="imbalance-forge",
        description="Long-tail segmentation training toolkit: oversampling, "
        "IoU-surrogate losses, schedules, grouped evaluation.",
    )
    parser.add_argument("--log-level", default="INFO")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "gen-synth",
        help="generate a synthetic dataset "
        "(labels/<id>.pgm, features/<id>.bin JSON+f32le, manifest.jsonl)",
    )
    p.add_argument("--config", required=True, help="SynthConfig JSON file")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser(
        "plan-epoch",
        help="write repeat-factor epoch plans as JSONL "
        '({"epoch":k,"record":"id"} per entry)',
    )
    p.add_argument("--manifest", required=True, help="manifest JSONL file")
    p.add_argument("--t", type=float, default=0.15, help="frequency threshold")
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output plan JSONL")
    p.set_defaults(func=cmd_plan_epoch)

    p = sub.add_parser(
        "adaptive-sim",
        help="simulate adaptive batch composition; writes a JSONL trace",
    )
    p.add_argument("--manifest", required=True, help="manifest JSONL file")
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output trace JSONL")
    p.set_defaults(func=cmd_adaptive_sim)

    p = sub.add_parser(
        "grad-check",
        help="check analytic loss gradients against central finite differences",
    )
    p.add_argument("--loss", choices=sorted(losses_mod.LOSSES), required=True)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser(
        "eval",
        help="score predicted label maps (PGM) against ground truth; "
        "writes an IoU report JSON",
    )
    p.add_argument("--pred", required=True, help="directory of predicted <id>.pgm")
    p.add_argument("--gt", required=True, help="directory of ground-truth <id>.pgm")
    p.add_argument("--manifest", required=True, help="manifest JSONL file")
    p.add_argument("--out", required=True, help="output report JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser(
        "ensemble",
        help="pixelwise mean of probability maps (raw f32le + .json sidecar)",
    )
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser(
        "train-toy",
        help="train the per-pixel classifier; writes metrics.csv, model.ckpt "
        "and run.json to the output directory",
    )
    p.add_argument("--config", required=True, help="training config JSON")
    p.add_argument("--out", required=True, help="output run directory")
    p.set_defaults(func=cmd_train_toy)

    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    logging.basicConfig(level=getattr(logging, args.log_level.upper(), logging.INFO))
    try:
        return args.func(args)
    except (ManifestError, ValueError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        log.error("runtime error: %s", exc)
        return 2


def main() -> None:
    sys.exit(run())
