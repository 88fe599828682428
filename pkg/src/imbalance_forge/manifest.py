"""Dataset statistics: manifest loading, class frequencies, label remapping.

A manifest is a JSONL file whose first line declares the task (class set)
and every following line describes one record's per-class pixel counts.
All sampling decisions downstream read only these statistics, never the
image data itself.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

IGNORE_LABEL = 255

GROUPS = ("anatomy", "instrument", "misc")

# Class counts fixed per task granularity; "custom" task ids are free-form.
_TASK_SIZES = {"T1": 8, "T2": 17, "T3": 25}


class ManifestError(ValueError):
    """Raised for malformed or inconsistent manifest content."""


@dataclass(frozen=True)
class ClassSpec:
    id: int
    name: str
    group: str

    def __post_init__(self):
        if self.id < 0:
            raise ManifestError(f"class id must be non-negative, got {self.id}")
        if self.group not in GROUPS:
            raise ManifestError(f"unknown group {self.group!r} for class {self.name!r}")


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    classes: tuple[ClassSpec, ...]
    # this task's class id -> class id of the next-coarser task; None for the
    # coarsest task
    remap_to_coarser: Optional[dict[int, int]] = None

    def __post_init__(self):
        ids = [c.id for c in self.classes]
        if ids != list(range(len(ids))):
            raise ManifestError("class ids must be unique and contiguous from 0")
        expected = _TASK_SIZES.get(self.task_id)
        if expected is not None and len(ids) != expected:
            raise ManifestError(
                f"task {self.task_id} requires {expected} classes, got {len(ids)}"
            )
        if self.remap_to_coarser is not None:
            missing = set(ids) - set(self.remap_to_coarser)
            if missing:
                raise ManifestError(f"remap_to_coarser not total, missing ids {sorted(missing)}")

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def class_ids(self, group: str | None = None) -> list[int]:
        if group is None:
            return [c.id for c in self.classes]
        return [c.id for c in self.classes if c.group == group]


@dataclass(frozen=True)
class RecordStats:
    record_id: str
    width: int
    height: int
    pixel_counts: dict[int, int]
    image_path: Optional[str] = None
    label_path: Optional[str] = None

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ManifestError(f"record {self.record_id!r}: non-positive dimensions")
        if any(v < 0 for v in self.pixel_counts.values()):
            raise ManifestError(f"record {self.record_id!r}: negative pixel count")
        if sum(self.pixel_counts.values()) > self.width * self.height:
            raise ManifestError(
                f"record {self.record_id!r}: pixel counts exceed width*height"
            )

    def present_classes(self) -> list[int]:
        return [c for c, n in self.pixel_counts.items() if n > 0]


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple[RecordStats, ...]
    task: TaskSpec
    _index: dict[str, int] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not self.records:
            raise ManifestError("manifest has no records")
        seen = set()
        valid_ids = set(self.task.class_ids())
        for rec in self.records:
            if rec.record_id in seen:
                raise ManifestError(f"duplicate record_id {rec.record_id!r}")
            seen.add(rec.record_id)
            bad = set(rec.pixel_counts) - valid_ids
            if bad:
                raise ManifestError(
                    f"record {rec.record_id!r}: class ids {sorted(bad)} not in task"
                )
        object.__setattr__(
            self, "_index", {r.record_id: i for i, r in enumerate(self.records)}
        )

    def __len__(self) -> int:
        return len(self.records)

    def record(self, record_id: str) -> RecordStats:
        return self.records[self._index[record_id]]


def _parse_task_header(obj: dict) -> TaskSpec:
    classes = tuple(
        ClassSpec(id=c["id"], name=c["name"], group=c["group"]) for c in obj["classes"]
    )
    remap = obj.get("remap_to_coarser")
    if remap is not None:
        remap = {int(k): int(v) for k, v in remap.items()}
    return TaskSpec(task_id=obj["task"], classes=classes, remap_to_coarser=remap)


def load_manifest(path: str | Path) -> DatasetManifest:
    """Load and validate a JSONL manifest (header line + one record per line)."""
    path = Path(path)
    records = []
    task = None
    with path.open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: malformed JSON: {exc}") from exc
            if task is None:
                if "task" not in obj:
                    raise ManifestError(f"{path}:{lineno}: first line must be a task header")
                task = _parse_task_header(obj)
                continue
            try:
                records.append(
                    RecordStats(
                        record_id=str(obj["id"]),
                        width=int(obj["width"]),
                        height=int(obj["height"]),
                        pixel_counts={int(k): int(v) for k, v in obj["pixel_counts"].items()},
                        image_path=obj.get("image_path"),
                        label_path=obj.get("label_path"),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ManifestError(f"{path}:{lineno}: bad record: {exc}") from exc
    if task is None:
        raise ManifestError(f"{path}: empty manifest file")
    return DatasetManifest(records=tuple(records), task=task)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    path = Path(path)
    header = {
        "task": manifest.task.task_id,
        "classes": [
            {"id": c.id, "name": c.name, "group": c.group} for c in manifest.task.classes
        ],
    }
    if manifest.task.remap_to_coarser is not None:
        header["remap_to_coarser"] = {
            str(k): v for k, v in sorted(manifest.task.remap_to_coarser.items())
        }
    with path.open("w", encoding="utf-8") as f:
        f.write(json.dumps(header) + "\n")
        for rec in manifest.records:
            obj = {
                "id": rec.record_id,
                "width": rec.width,
                "height": rec.height,
                "pixel_counts": {str(k): v for k, v in sorted(rec.pixel_counts.items())},
            }
            if rec.image_path is not None:
                obj["image_path"] = rec.image_path
            if rec.label_path is not None:
                obj["label_path"] = rec.label_path
            f.write(json.dumps(obj) + "\n")


def class_frequencies(manifest: DatasetManifest) -> dict[int, float]:
    """Image-level frequency f_c: fraction of records containing each class."""
    n = len(manifest.records)
    freqs = {c: 0 for c in manifest.task.class_ids()}
    for rec in manifest.records:
        for c in rec.present_classes():
            freqs[c] += 1
    return {c: count / n for c, count in freqs.items()}


def rare_classes(manifest: DatasetManifest, threshold: float = 0.10) -> set[int]:
    """Instrument-group classes occurring in fewer than `threshold` of records."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0,1), got {threshold}")
    freqs = class_frequencies(manifest)
    instruments = set(manifest.task.class_ids("instrument"))
    return {c for c in instruments if freqs[c] < threshold}


def load_task(task_id: str, config_path: str | Path | None = None) -> TaskSpec:
    """Load a task definition from the versioned task config file.

    Defaults to the packaged cataract-surgery class tables; pass
    `config_path` to use a revised table.
    """
    if config_path is None:
        text = (
            resources.files("imbalance_forge").joinpath("data/cadis_tasks.json").read_text()
        )
    else:
        text = Path(config_path).read_text()
    tables = json.loads(text)
    if task_id not in tables:
        raise ManifestError(f"task {task_id!r} not in config (have {sorted(tables)})")
    obj = dict(tables[task_id])
    obj["task"] = task_id
    return _parse_task_header(obj)


def _remap_chain(task_from: TaskSpec, task_to: TaskSpec) -> list[dict[int, int]]:
    order = ["T3", "T2", "T1"]
    if task_from.task_id == task_to.task_id:
        return []
    try:
        i, j = order.index(task_from.task_id), order.index(task_to.task_id)
    except ValueError:
        raise ManifestError(
            f"no remap path from {task_from.task_id} to {task_to.task_id}"
        ) from None
    if i >= j:
        raise ManifestError(f"{task_to.task_id} is not coarser than {task_from.task_id}")
    chain = []
    current = task_from
    for k in range(i, j):
        if current.remap_to_coarser is None:
            raise ManifestError(f"task {current.task_id} has no remap table")
        chain.append(current.remap_to_coarser)
        current = load_task(order[k + 1])
    return chain


def remap_labels(labels: np.ndarray, task_from: TaskSpec, task_to: TaskSpec) -> np.ndarray:
    """Map every pixel of a label map to the coarser task's ids.

    The ignore value passes through unchanged. Raises on pixel values that
    are neither valid `task_from` ids nor ignore.
    """
    labels = np.asarray(labels)
    valid = set(task_from.class_ids()) | {IGNORE_LABEL}
    observed = set(np.unique(labels).tolist())
    bad = observed - valid
    if bad:
        raise ManifestError(f"label values {sorted(bad)} not valid for {task_from.task_id}")

    lut = np.arange(256, dtype=np.int64)
    for table in _remap_chain(task_from, task_to):
        step = np.arange(256, dtype=np.int64)
        for src, dst in table.items():
            step[src] = dst
        lut = step[lut]
    return lut[labels].astype(labels.dtype)


def remap_pixel_counts(counts: dict[int, int], table: dict[int, int]) -> dict[int, int]:
    """Aggregate per-class pixel counts through a remap table."""
    out: dict[int, int] = {}
    for c, n in counts.items():
        out[table[c]] = out.get(table[c], 0) + n
    return out
