"""Fixed synthetic long-tail benchmark: 12 classes, 3 of them rare
instruments, 2000 images of 32x32. Small enough for a CPU grid run,
imbalanced enough that sampler and loss choices visibly move rare-class
IoU."""

from __future__ import annotations

import numpy as np

from .schedule import ScheduleConfig
from .synth import AugmentConfig, SynthClass, SynthConfig, generate_dataset
from .trainer import Seeds, TrainConfig, train

NUM_IMAGES = 2000
HEIGHT = WIDTH = 32
FEATURE_DIM = 12
NOISE_SIGMA = 1.0
MU_SCALE = 4.0
EPOCHS = 20
LR0 = 3e-4


def benchmark_synth_config(seed: int = 0) -> SynthConfig:
    # Orthogonal class means, identical for every seed; only the image
    # sampling varies. Classes are cleanly learnable, and the learning
    # rate below makes 20 epochs sample-limited for the rare classes, so
    # sampler and loss choices decide how much rare-class IoU a run
    # reaches, not the noise ceiling.
    mus = np.eye(12) * MU_SCALE
    spec = [
        # (frequency, region_scale, group)
        (1.00, 1.00, "anatomy"),   # background
        (0.90, 0.25, "anatomy"),
        (0.80, 0.20, "anatomy"),
        (0.70, 0.15, "misc"),
        (0.60, 0.15, "misc"),
        (0.50, 0.12, "misc"),
        (0.35, 0.10, "instrument"),
        (0.30, 0.10, "instrument"),
        (0.25, 0.08, "instrument"),
        # instruments below 10% image frequency form the rare group
        (0.03, 0.05, "instrument"),
        (0.03, 0.05, "instrument"),
        (0.03, 0.05, "instrument"),
    ]
    classes = tuple(
        SynthClass(
            id=i,
            target_frequency=f,
            mu=tuple(mus[i]),
            region_scale=scale,
            group=group,
        )
        for i, (f, scale, group) in enumerate(spec)
    )
    return SynthConfig(
        num_images=NUM_IMAGES,
        height=HEIGHT,
        width=WIDTH,
        classes=classes,
        feature_dim=FEATURE_DIM,
        noise_sigma=NOISE_SIGMA,
        background_class=0,
        seed=seed,
    )


def benchmark_train_config(sampler: str, loss: str, seed: int = 0) -> TrainConfig:
    return TrainConfig(
        sampler=sampler,
        loss=loss,
        schedule=ScheduleConfig(kind="exponential", lr0=LR0, alpha=0.98, n=EPOCHS),
        batch_size=8,
        epochs=EPOCHS,
        augment=AugmentConfig(flip=True, blur=False, jitter=False),
        seeds=Seeds(data=seed, model=seed + 1000, sampler=seed + 2000),
    )


def run_cell(sampler: str, loss: str, seed: int = 0, outdir=None) -> dict:
    """Train one (sampler, loss) cell; returns the best-epoch summary."""
    records, manifest = generate_dataset(benchmark_synth_config(seed))
    log = train(records, manifest, benchmark_train_config(sampler, loss, seed), outdir)
    best = max(log, key=lambda row: float(row["miou"]))
    return {
        "sampler": sampler,
        "loss": loss,
        "seed": seed,
        "best_miou": float(best["miou"]),
        "rare_at_best": float(best["rare_miou"]) if best["rare_miou"] else None,
        "best_rare_miou": max(
            float(row["rare_miou"]) for row in log if row["rare_miou"]
        ),
        "best_epoch": int(best["epoch"]),
    }
