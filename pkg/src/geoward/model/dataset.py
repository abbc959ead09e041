"""
Datasets: MNIST-format IDX ingestion and synthetic Gaussian classes.

Every example keeps a stable integer id (its position in the source), so
subsamples can be re-ordered by id for deterministic reductions.
"""

import csv
import hashlib
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from ..core.exceptions import FormatError, InvalidInputError

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
ALLOWED_POOLING = (1, 2, 4)


@dataclass(frozen=True)
class Normalization:
    """Features were produced as ``(raw - shift) / scale``."""

    shift: float = 0.0
    scale: float = 1.0

    def restore(self, inputs: np.ndarray) -> np.ndarray:
        return inputs * self.scale + self.shift


@dataclass(frozen=True)
class Dataset:
    """Labelled examples; arrays are read-only."""

    inputs: np.ndarray
    labels: np.ndarray
    name: str
    normalization: Normalization = Normalization()
    ids: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        inputs = np.array(self.inputs, dtype=np.float64, copy=True)
        labels = np.array(self.labels, dtype=np.int64, copy=True).reshape(-1)
        if inputs.ndim != 2:
            raise InvalidInputError(f"Dataset inputs must be 2-D, got shape {inputs.shape}")
        if inputs.shape[0] < 1 or inputs.shape[0] != labels.shape[0]:
            raise InvalidInputError(
                f"Dataset needs matching, non-empty inputs and labels ({inputs.shape[0]} vs {labels.shape[0]})"
            )
        if not np.all(np.isfinite(inputs)):
            raise InvalidInputError(f"Dataset '{self.name}' contains non-finite inputs")
        if labels.min() < 0:
            raise InvalidInputError(f"Dataset '{self.name}' contains negative labels")
        ids = np.arange(inputs.shape[0]) if self.ids is None else np.array(self.ids, dtype=np.int64).reshape(-1)
        if ids.shape[0] != inputs.shape[0]:
            raise InvalidInputError("Dataset ids must match the number of examples")
        for array in (inputs, labels, ids):
            array.setflags(write=False)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "ids", ids)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1

    def take(self, positions: np.ndarray, name: str = "") -> "Dataset":
        """Sub-dataset at the given row positions (ids are carried over)."""
        positions = np.asarray(positions, dtype=np.int64)
        return Dataset(
            inputs=self.inputs[positions],
            labels=self.labels[positions],
            name=name or self.name,
            normalization=self.normalization,
            ids=self.ids[positions],
        )

    def sorted_by_id(self) -> "Dataset":
        return self.take(np.argsort(self.ids, kind="stable"))


# ==================== IDX ====================

def _read_idx(path: Union[str, Path], magic: int, dims: int) -> Tuple[Tuple[int, ...], np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise InvalidInputError(f"File not found: {path}")
    raw = path.read_bytes()
    header_len = 4 + 4 * dims
    if len(raw) < header_len:
        raise FormatError(str(path), f"file is {len(raw)} bytes, shorter than the {header_len}-byte header")
    observed = struct.unpack(">I", raw[:4])[0]
    if observed != magic:
        raise FormatError(
            str(path),
            f"bad magic 0x{observed:08x} (bytes {raw[:4].hex()}), expected 0x{magic:08x}",
        )
    shape = struct.unpack(">" + "I" * dims, raw[4:header_len])
    expected = int(np.prod(shape))
    body = raw[header_len:]
    if len(body) != expected:
        raise FormatError(
            str(path), f"payload has {len(body)} bytes, header promises {expected}", {"shape": shape}
        )
    return shape, np.frombuffer(body, dtype=np.uint8)


def _average_pool(images: np.ndarray, factor: int) -> np.ndarray:
    count, rows, cols = images.shape
    if rows % factor or cols % factor:
        raise InvalidInputError(f"Pooling factor {factor} does not divide image size {rows}x{cols}")
    return images.reshape(count, rows // factor, factor, cols // factor, factor).mean(axis=(2, 4))


def load_idx(images_path: Union[str, Path], labels_path: Union[str, Path], pool: int = 1) -> Dataset:
    """Load an IDX image/label pair; pixels scaled from [0, 255] to [0, 1].

    ``pool`` average-pools images by that factor (28x28 -> 14x14 for 2).
    """
    if pool not in ALLOWED_POOLING:
        raise InvalidInputError(f"Pooling factor must be one of {ALLOWED_POOLING}, got {pool}")
    (count, rows, cols), pixels = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    (label_count,), labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if count != label_count:
        raise FormatError(
            str(labels_path), f"{label_count} labels for {count} images",
            {"images": count, "labels": label_count},
        )
    images = pixels.reshape(count, rows, cols).astype(np.float64)
    if pool > 1:
        images = _average_pool(images, pool)
    inputs = images.reshape(count, -1) / 255.0
    name = f"idx:{Path(images_path).name}:pool{pool}"
    logger.info(f"Loaded {count} IDX images ({rows}x{cols}, pool {pool}) from {images_path}")
    return Dataset(inputs=inputs, labels=labels, name=name, normalization=Normalization(shift=0.0, scale=255.0))


# ==================== SYNTHETIC ====================

def _class_directions(classes: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-norm class centres, as spread out as the dimension allows."""
    if classes <= dim:
        q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
        return q[:, :classes].T.copy()
    if dim == 2:
        phase = rng.uniform(0.0, 2.0 * np.pi)
        angles = phase + 2.0 * np.pi * np.arange(classes) / classes
        return np.stack([np.cos(angles), np.sin(angles)], axis=1)
    raw = rng.normal(size=(classes, dim))
    return raw / np.linalg.norm(raw, axis=1, keepdims=True)


def synth_gaussians(classes: int, dim: int, per_class: int, separation: float, seed: int) -> Dataset:
    """Isotropic unit-variance Gaussian blobs centred at separation * mu_c."""
    if classes < 2 or dim < 2:
        raise InvalidInputError(f"Need classes >= 2 and dim >= 2, got classes={classes}, dim={dim}")
    if per_class < 1:
        raise InvalidInputError(f"per_class must be >= 1, got {per_class}")
    rng = np.random.default_rng(seed)
    centres = separation * _class_directions(classes, dim, rng)
    inputs = np.concatenate([centres[c] + rng.normal(size=(per_class, dim)) for c in range(classes)])
    labels = np.repeat(np.arange(classes), per_class)
    order = rng.permutation(inputs.shape[0])
    name = f"synth:classes={classes},dim={dim},per_class={per_class},separation={separation},seed={seed}"
    return Dataset(inputs=inputs[order], labels=labels[order], name=name)


# ==================== SAMPLING ====================

def subsample(d: Dataset, count: int, seed: int) -> Dataset:
    """Uniform sample without replacement; rows stay in source order."""
    return split(d, count, seed)[0]


def split(d: Dataset, count: int, seed: int) -> Tuple[Dataset, Optional[Dataset]]:
    """Sample ``count`` examples and return (sample, complement); complement is None when empty."""
    if count < 1:
        raise InvalidInputError(f"Sample count must be >= 1, got {count}")
    if count > len(d):
        raise InvalidInputError(f"Cannot sample {count} examples from {len(d)}")
    rng = np.random.default_rng(seed)
    chosen = np.zeros(len(d), dtype=bool)
    chosen[rng.choice(len(d), size=count, replace=False)] = True
    sample = d.take(np.flatnonzero(chosen), name=f"{d.name}[sample {count}, seed {seed}]")
    if count == len(d):
        return sample, None
    rest = d.take(np.flatnonzero(~chosen), name=f"{d.name}[complement {len(d) - count}, seed {seed}]")
    return sample, rest


def fingerprint(d: Dataset) -> str:
    """Content hash of inputs and labels."""
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(d.inputs).astype("<f8").tobytes())
    digest.update(np.ascontiguousarray(d.labels).astype("<i8").tobytes())
    return f"sha256:{digest.hexdigest()[:16]}"


# ==================== CSV ====================

def export_csv(d: Dataset, path: Union[str, Path]) -> None:
    """One row per example: label, then features (repr precision, round-trips exactly)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["label"] + [f"x{i}" for i in range(d.input_dim)])
        for label, row in zip(d.labels, d.inputs):
            writer.writerow([int(label)] + [repr(float(v)) for v in row])


def load_csv(path: Union[str, Path]) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise InvalidInputError(f"File not found: {path}")
    with path.open(newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    if len(rows) < 2 or not rows[0] or rows[0][0] != "label":
        raise FormatError(str(path), "expected a 'label,x0,...' header and at least one row")
    try:
        labels = np.array([int(r[0]) for r in rows[1:]])
        inputs = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    except ValueError as e:
        raise FormatError(str(path), f"unparseable value: {e}")
    return Dataset(inputs=inputs, labels=labels, name=f"csv:{path.name}")
