"""Datasets as flat float64 arrays in the unit box.

Every loader returns a Dataset whose inputs are shaped (count, dim) with
values in [0, 1] and whose labels are ints below num_classes.  Image
sources are flattened row by row; pixel bytes are scaled by 1/255.
"""

from __future__ import annotations

import gzip
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGES_MAGIC = 2051
LABELS_MAGIC = 2049


class IdxFormatError(ValueError):
    """IDX payload is malformed; the message carries the byte offset."""


class DatasetError(ValueError):
    """Dataset contents violate the shape/range contract."""


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2:
            raise DatasetError(f"inputs must be (count, dim), got shape {self.inputs.shape}")
        if self.labels.shape != (len(self.inputs),):
            raise DatasetError(f"{len(self.inputs)} inputs vs labels shape {self.labels.shape}")
        if len(self.inputs) and (self.inputs.min() < 0.0 or self.inputs.max() > 1.0):
            raise DatasetError("inputs must lie in [0, 1]")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DatasetError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.inputs)

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]


def _read_bytes(path: str | Path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _be_int(raw: bytes, offset: int, path) -> int:
    if offset + 4 > len(raw):
        raise IdxFormatError(f"{path}: truncated header at byte {offset}")
    return struct.unpack(">i", raw[offset : offset + 4])[0]


def load_idx(images_path: str | Path, labels_path: str | Path, transpose: bool = False) -> Dataset:
    """MNIST-layout IDX pair; gzip accepted.  ``transpose`` flips each
    image's row/column order for sources stored column-major."""
    raw = _read_bytes(images_path)
    magic = _be_int(raw, 0, images_path)
    if magic != IMAGES_MAGIC:
        raise IdxFormatError(f"{images_path}: magic {magic} at byte 0, expected {IMAGES_MAGIC}")
    count = _be_int(raw, 4, images_path)
    rows = _be_int(raw, 8, images_path)
    cols = _be_int(raw, 12, images_path)
    need = 16 + count * rows * cols
    if len(raw) < need:
        raise IdxFormatError(f"{images_path}: payload ends at byte {len(raw)}, expected {need}")
    pixels = np.frombuffer(raw, dtype=np.uint8, count=count * rows * cols, offset=16)
    images = pixels.reshape(count, rows, cols)
    if transpose:
        images = images.transpose(0, 2, 1)
    inputs = images.reshape(count, rows * cols).astype(np.float64) / 255.0

    raw = _read_bytes(labels_path)
    magic = _be_int(raw, 0, labels_path)
    if magic != LABELS_MAGIC:
        raise IdxFormatError(f"{labels_path}: magic {magic} at byte 0, expected {LABELS_MAGIC}")
    lcount = _be_int(raw, 4, labels_path)
    if lcount != count:
        raise IdxFormatError(f"{labels_path}: {lcount} labels for {count} images")
    if len(raw) < 8 + lcount:
        raise IdxFormatError(f"{labels_path}: payload ends at byte {len(raw)}, expected {8 + lcount}")
    labels = np.frombuffer(raw, dtype=np.uint8, count=lcount, offset=8).astype(np.int64)
    num_classes = int(labels.max()) + 1 if lcount else 1
    return Dataset(inputs=inputs, labels=labels, num_classes=num_classes, name=Path(images_path).stem)


CIFAR_RECORD = 1 + 3 * 32 * 32


def load_cifar10_batches(paths: list[str | Path]) -> Dataset:
    """CIFAR-10 binary batches: records of one label byte then 3072
    channel-major pixel bytes."""
    chunks = []
    label_chunks = []
    for path in paths:
        raw = _read_bytes(path)
        if len(raw) % CIFAR_RECORD:
            raise IdxFormatError(f"{path}: size {len(raw)} is not a multiple of {CIFAR_RECORD}")
        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        label_chunks.append(records[:, 0].astype(np.int64))
        chunks.append(records[:, 1:].astype(np.float64) / 255.0)
    if not chunks:
        raise DatasetError("no batch files given")
    return Dataset(
        inputs=np.concatenate(chunks),
        labels=np.concatenate(label_chunks),
        num_classes=10,
        name="cifar10",
    )


def synth_blobs(num_classes: int, per_class: int, dim: int, spread: float, seed: int) -> Dataset:
    """Gaussian blobs clipped to the unit box, one cluster per class."""
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.15, 0.85, size=(num_classes, dim))
    inputs = np.concatenate(
        [rng.normal(c, spread, size=(per_class, dim)) for c in centers]
    )
    labels = np.repeat(np.arange(num_classes), per_class)
    order = rng.permutation(len(inputs))
    return Dataset(
        inputs=np.clip(inputs[order], 0.0, 1.0),
        labels=labels[order],
        num_classes=num_classes,
        name="blobs",
    )


def uniform_noise(count: int, dim: int, seed: int) -> Dataset:
    """Out-of-distribution probe: uniform samples, all labeled 0."""
    rng = np.random.default_rng(seed)
    return Dataset(
        inputs=rng.uniform(0.0, 1.0, size=(count, dim)),
        labels=np.zeros(count, dtype=np.int64),
        num_classes=1,
        name="noise",
    )


def digits() -> Dataset:
    """Bundled 8x8 handwritten digits (1797 samples, 10 classes)."""
    from sklearn.datasets import load_digits

    raw = load_digits()
    return Dataset(
        inputs=raw.data / 16.0,
        labels=raw.target.astype(np.int64),
        num_classes=10,
        name="digits",
    )


def split(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded shuffle split into (train, test)."""
    if not 0.0 < test_fraction < 1.0:
        raise DatasetError(f"test fraction must sit in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(dataset))
    cut = int(round(len(dataset) * (1.0 - test_fraction)))
    if cut == 0 or cut == len(dataset):
        raise DatasetError("split would leave an empty side")
    def part(idx: np.ndarray, tag: str) -> Dataset:
        return Dataset(
            inputs=dataset.inputs[idx],
            labels=dataset.labels[idx],
            num_classes=dataset.num_classes,
            name=f"{dataset.name}-{tag}",
        )

    return part(order[:cut], "train"), part(order[cut:], "test")


def take(dataset: Dataset, count: int, seed: int) -> Dataset:
    """Seeded sample without replacement."""
    if count > len(dataset):
        raise DatasetError(f"asked for {count} of {len(dataset)} items")
    idx = np.random.default_rng(seed).choice(len(dataset), size=count, replace=False)
    return Dataset(
        inputs=dataset.inputs[idx],
        labels=dataset.labels[idx],
        num_classes=dataset.num_classes,
        name=dataset.name,
    )


INPUTS_FILE = "inputs.f64"
LABELS_FILE = "labels.i64"
INDEX_FILE = "index.json"


def write_flat(dataset: Dataset, directory: str | Path, extra_index: dict | None = None) -> None:
    """Flat-tensor cache: little-endian float64 inputs, int64 labels,
    JSON index describing shape and provenance."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / INPUTS_FILE).write_bytes(dataset.inputs.astype("<f8").tobytes())
    (directory / LABELS_FILE).write_bytes(dataset.labels.astype("<i8").tobytes())
    index = {
        "count": len(dataset),
        "dim": dataset.dim,
        "num_classes": dataset.num_classes,
        "name": dataset.name,
    }
    index.update(extra_index or {})
    (directory / INDEX_FILE).write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")


def read_flat(directory: str | Path) -> tuple[Dataset, dict]:
    directory = Path(directory)
    index = json.loads((directory / INDEX_FILE).read_text())
    count, dim = int(index["count"]), int(index["dim"])
    inputs = np.frombuffer((directory / INPUTS_FILE).read_bytes(), dtype="<f8")
    labels = np.frombuffer((directory / LABELS_FILE).read_bytes(), dtype="<i8")
    if inputs.size != count * dim or labels.size != count:
        raise DatasetError(f"{directory}: tensor sizes disagree with the index")
    dataset = Dataset(
        inputs=inputs.reshape(count, dim).copy(),
        labels=labels.copy(),
        num_classes=int(index["num_classes"]),
        name=str(index["name"]),
    )
    return dataset, index
