"""Synthetic long-tail segmentation data and online augmentations.

Images are feature maps [H,W,F] where each pixel carries its class's mean
vector plus Gaussian noise; labels are painted axis-aligned rectangles
over a full-frame background class. Rare classes simply get a low
inclusion frequency, mimicking the long tail of tool appearances.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import arrayio
from .manifest import ClassSpec, DatasetManifest, RecordStats, TaskSpec, save_manifest
from .rngstreams import substream


@dataclass(frozen=True)
class SynthClass:
    id: int
    target_frequency: float
    mu: tuple[float, ...]
    region_scale: float = 0.1
    group: str = "anatomy"
    name: str = ""


@dataclass(frozen=True)
class SynthConfig:
    num_images: int
    height: int
    width: int
    classes: tuple[SynthClass, ...]
    feature_dim: int
    noise_sigma: float
    background_class: int = 0
    seed: int = 0

    def __post_init__(self):
        bg = [c for c in self.classes if c.id == self.background_class]
        if not bg:
            raise ValueError("background_class not among classes")
        if bg[0].target_frequency != 1.0:
            raise ValueError("background class must have target_frequency 1.0")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        mus = {c.mu for c in self.classes}
        if len(mus) != len(self.classes):
            raise ValueError("class mean vectors must be distinct")
        for c in self.classes:
            if len(c.mu) != self.feature_dim:
                raise ValueError(f"class {c.id}: mu length != feature_dim")
            if not 0.0 < c.target_frequency <= 1.0:
                raise ValueError(f"class {c.id}: target_frequency out of (0,1]")

    def task_spec(self) -> TaskSpec:
        classes = tuple(
            ClassSpec(id=c.id, name=c.name or f"class_{c.id}", group=c.group)
            for c in sorted(self.classes, key=lambda c: c.id)
        )
        return TaskSpec(task_id="custom", classes=classes)

    @classmethod
    def from_json(cls, text: str) -> "SynthConfig":
        obj = json.loads(text)
        classes = tuple(
            SynthClass(
                id=c["id"],
                target_frequency=c["target_frequency"],
                mu=tuple(c["mu"]),
                region_scale=c.get("region_scale", 0.1),
                group=c.get("group", "anatomy"),
                name=c.get("name", ""),
            )
            for c in obj["classes"]
        )
        return cls(
            num_images=obj["num_images"],
            height=obj["height"],
            width=obj["width"],
            classes=classes,
            feature_dim=obj["feature_dim"],
            noise_sigma=obj["noise_sigma"],
            background_class=obj.get("background_class", 0),
            seed=obj.get("seed", 0),
        )


@dataclass
class SynthRecord:
    features: np.ndarray  # [H,W,F] float64
    labels: np.ndarray  # [H,W] uint8
    stats: RecordStats


def _sample_rectangle(rng, height, width, region_scale):
    """Random axis-aligned rectangle of roughly region_scale * image area."""
    area = region_scale * height * width
    for _ in range(100):
        aspect = rng.uniform(0.5, 2.0)
        rw = int(round(math.sqrt(area * aspect)))
        rh = int(round(math.sqrt(area / aspect)))
        rw = min(max(rw, 1), width)
        rh = min(max(rh, 1), height)
        if rw * rh > 0:
            x0 = int(rng.integers(0, width - rw + 1))
            y0 = int(rng.integers(0, height - rh + 1))
            return y0, x0, rh, rw
    raise RuntimeError("failed to sample a non-degenerate rectangle")


def generate_record(cfg: SynthConfig, index: int) -> SynthRecord:
    rng = substream(cfg.seed, "synth", index)
    labels = np.full((cfg.height, cfg.width), cfg.background_class, dtype=np.uint8)
    # z-order = config order; later classes paint over earlier ones
    for c in cfg.classes:
        if c.id == cfg.background_class:
            continue
        if rng.random() < c.target_frequency:
            y0, x0, rh, rw = _sample_rectangle(rng, cfg.height, cfg.width, c.region_scale)
            labels[y0 : y0 + rh, x0 : x0 + rw] = c.id
    mu_table = np.zeros((max(c.id for c in cfg.classes) + 1, cfg.feature_dim))
    for c in cfg.classes:
        mu_table[c.id] = c.mu
    features = mu_table[labels] + cfg.noise_sigma * rng.standard_normal(
        (cfg.height, cfg.width, cfg.feature_dim)
    )
    ids, counts = np.unique(labels, return_counts=True)
    stats = RecordStats(
        record_id=f"synth-{index:05d}",
        width=cfg.width,
        height=cfg.height,
        pixel_counts={int(i): int(n) for i, n in zip(ids, counts)},
    )
    return SynthRecord(features=features, labels=labels, stats=stats)


def generate_dataset(cfg: SynthConfig) -> tuple[list[SynthRecord], DatasetManifest]:
    records = [generate_record(cfg, i) for i in range(cfg.num_images)]
    manifest = DatasetManifest(
        records=tuple(r.stats for r in records), task=cfg.task_spec()
    )
    return records, manifest


def save_dataset(records: list[SynthRecord], manifest: DatasetManifest, outdir) -> None:
    outdir = Path(outdir)
    (outdir / "labels").mkdir(parents=True, exist_ok=True)
    (outdir / "features").mkdir(parents=True, exist_ok=True)
    for rec in records:
        arrayio.write_pgm(rec.labels, outdir / "labels" / f"{rec.stats.record_id}.pgm")
        arrayio.write_f32_blob(
            rec.features, outdir / "features" / f"{rec.stats.record_id}.bin"
        )
    save_manifest(manifest, outdir / "manifest.jsonl")


# ---- augmentations ------------------------------------------------------


def hflip(features: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mirror both arrays along the width axis."""
    return features[:, ::-1].copy(), labels[:, ::-1].copy()


def _gaussian_kernel(kernel_size: int) -> np.ndarray:
    sigma = 0.3 * ((kernel_size - 1) / 2 - 1) + 0.8
    half = kernel_size // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-(x**2) / (2.0 * sigma**2))
    return k / k.sum()


def gaussian_blur(image: np.ndarray, kernel_size: int) -> np.ndarray:
    """Separable Gaussian blur with reflect padding; sigma derived from the
    kernel size. Works on [H,W] or [H,W,C]."""
    if kernel_size % 2 == 0 or kernel_size < 3:
        raise ValueError(f"kernel_size must be an odd integer >= 3, got {kernel_size}")
    k = _gaussian_kernel(kernel_size)
    half = kernel_size // 2
    out = np.asarray(image, dtype=np.float64)
    for axis in (0, 1):
        pad = [(0, 0)] * out.ndim
        pad[axis] = (half, half)
        padded = np.pad(out, pad, mode="reflect")
        acc = np.zeros_like(out)
        for tap in range(kernel_size):
            sl = [slice(None)] * out.ndim
            sl[axis] = slice(tap, tap + out.shape[axis])
            acc += k[tap] * padded[tuple(sl)]
        out = acc
    return out


_LUMA = np.array([0.299, 0.587, 0.114])


def _rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    maxc = rgb.max(axis=-1)
    minc = rgb.min(axis=-1)
    v = maxc
    delta = maxc - minc
    s = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1.0), 0.0)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    safe = np.where(delta > 0, delta, 1.0)
    h = np.zeros_like(maxc)
    h = np.where(maxc == r, ((g - b) / safe) % 6.0, h)
    h = np.where(maxc == g, (b - r) / safe + 2.0, h)
    h = np.where(maxc == b, (r - g) / safe + 4.0, h)
    h = np.where(delta > 0, h / 6.0, 0.0)
    return np.stack([h, s, v], axis=-1)


def _hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(int) % 6
    rgb = np.zeros(hsv.shape)
    for idx, (rr, gg, bb) in enumerate(
        [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)]
    ):
        mask = i == idx
        rgb[..., 0][mask] = rr[mask]
        rgb[..., 1][mask] = gg[mask]
        rgb[..., 2][mask] = bb[mask]
    return rgb


def apply_color_jitter(
    image: np.ndarray,
    brightness: float,
    contrast: float,
    saturation: float,
    hue: float,
) -> np.ndarray:
    """Deterministic jitter with explicit factors.

    Fixed operation order: brightness, contrast, saturation, hue; the
    result is clamped to [0,1] after each step.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[-1] != 3:
        raise ValueError("color jitter expects [H,W,3]")
    img = np.clip(img * brightness, 0.0, 1.0)
    mean_gray = float((img @ _LUMA).mean())
    img = np.clip(mean_gray + (img - mean_gray) * contrast, 0.0, 1.0)
    gray = (img @ _LUMA)[..., None]
    img = np.clip(gray + (img - gray) * saturation, 0.0, 1.0)
    if hue != 0.0:
        hsv = _rgb_to_hsv(img)
        hsv[..., 0] = (hsv[..., 0] + hue) % 1.0
        img = np.clip(_hsv_to_rgb(hsv), 0.0, 1.0)
    return img


def color_jitter(image: np.ndarray, rng) -> np.ndarray:
    """Jitter with factors drawn from the standard ranges: brightness,
    contrast and saturation in [2/3, 3/2], hue shift in [-0.05, 0.05]."""
    brightness = rng.uniform(2.0 / 3.0, 1.5)
    contrast = rng.uniform(2.0 / 3.0, 1.5)
    saturation = rng.uniform(2.0 / 3.0, 1.5)
    hue = rng.uniform(-0.05, 0.05)
    return apply_color_jitter(image, brightness, contrast, saturation, hue)


@dataclass(frozen=True)
class AugmentConfig:
    flip: bool = True
    blur: bool = False
    jitter: bool = False
    flip_prob: float = 0.5
    blur_prob: float = 0.05


def augment(
    features: np.ndarray, labels: np.ndarray, cfg: AugmentConfig, rng
) -> tuple[np.ndarray, np.ndarray]:
    """Online augmentation pipeline used by the trainer.

    Blur and jitter only make sense for 3-channel images and are skipped
    for generic feature maps.
    """
    if cfg.flip and rng.random() < cfg.flip_prob:
        features, labels = hflip(features, labels)
    if cfg.blur and rng.random() < cfg.blur_prob:
        kernel_size = int(rng.choice([3, 5, 7]))
        features = gaussian_blur(features, kernel_size)
    if cfg.jitter and features.ndim == 3 and features.shape[-1] == 3:
        features = color_jitter(features, rng)
    return features, labels
