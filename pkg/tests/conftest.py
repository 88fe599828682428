import numpy as np
import pytest

from imbalance_forge.manifest import (
    ClassSpec,
    DatasetManifest,
    RecordStats,
    TaskSpec,
)


def make_task(groups: list[str], task_id: str = "custom") -> TaskSpec:
    classes = tuple(
        ClassSpec(id=i, name=f"c{i}", group=g) for i, g in enumerate(groups)
    )
    return TaskSpec(task_id=task_id, classes=classes)


def make_record(record_id: str, pixel_counts: dict[int, int], size: int = 64) -> RecordStats:
    return RecordStats(
        record_id=record_id, width=size, height=size, pixel_counts=pixel_counts
    )


@pytest.fixture
def four_class_task():
    return make_task(["anatomy", "anatomy", "instrument", "instrument"])


@pytest.fixture
def small_manifest(four_class_task):
    records = (
        make_record("a", {0: 3000, 2: 10}),
        make_record("b", {0: 2000, 1: 500}),
        make_record("c", {1: 4000, 3: 96}),
        make_record("d", {0: 4096}),
    )
    return DatasetManifest(records=records, task=four_class_task)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
