"""File formats: binary PGM label maps, float32 blobs with JSON headers,
and probability maps with JSON sidecars. Everything is diffable or
trivially parseable from any language."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def write_pgm(labels: np.ndarray, path: str | Path) -> None:
    """8-bit binary PGM (P5); class ids 0-254, 255 reserved for ignore."""
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError("label map must be 2-D")
    if labels.min() < 0 or labels.max() > 255:
        raise ValueError("label values must fit in 8 bits")
    h, w = labels.shape
    with Path(path).open("wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(labels.astype(np.uint8).tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    with Path(path).open("rb") as f:
        magic = f.readline().strip()
        if magic != b"P5":
            raise ValueError(f"{path}: not a binary PGM file")
        dims = f.readline().split()
        maxval = int(f.readline())
        if maxval != 255:
            raise ValueError(f"{path}: expected 8-bit PGM, maxval={maxval}")
        w, h = int(dims[0]), int(dims[1])
        data = np.frombuffer(f.read(w * h), dtype=np.uint8)
    return data.reshape(h, w)


def write_f32_blob(array: np.ndarray, path: str | Path) -> None:
    """JSON header line (shape, dtype) followed by raw little-endian f32."""
    array = np.asarray(array)
    header = json.dumps({"shape": list(array.shape), "dtype": "f32le"})
    with Path(path).open("wb") as f:
        f.write(header.encode("ascii") + b"\n")
        f.write(array.astype("<f4").tobytes())


def read_f32_blob(path: str | Path) -> np.ndarray:
    with Path(path).open("rb") as f:
        header = json.loads(f.readline())
        shape = header["shape"]
        data = np.frombuffer(f.read(), dtype="<f4")
    if data.size != int(np.prod(shape)):
        raise ValueError(f"{path}: blob size does not match header shape {shape}")
    return data.reshape(shape).astype(np.float64)


def write_prob_map(probs: np.ndarray, path: str | Path) -> None:
    """Raw f32le [C,H,W] plus a `<path>.json` sidecar describing the shape."""
    probs = np.asarray(probs)
    if probs.ndim != 3:
        raise ValueError("probability map must be [C,H,W]")
    path = Path(path)
    path.write_bytes(probs.astype("<f4").tobytes())
    sidecar = {"shape": list(probs.shape), "dtype": "f32le"}
    Path(str(path) + ".json").write_text(json.dumps(sidecar) + "\n")


def read_prob_map(path: str | Path) -> np.ndarray:
    path = Path(path)
    sidecar = json.loads(Path(str(path) + ".json").read_text())
    data = np.frombuffer(path.read_bytes(), dtype="<f4")
    shape = sidecar["shape"]
    if data.size != int(np.prod(shape)):
        raise ValueError(f"{path}: data size does not match sidecar shape {shape}")
    return data.reshape(shape).astype(np.float64)
