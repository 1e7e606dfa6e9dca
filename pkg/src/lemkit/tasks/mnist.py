"""MNIST IDX parsing and flattening into pixel-by-pixel sequences."""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

from .base import DatasetFormatError, SequenceBatch

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049


def _read(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def read_idx_images(path) -> np.ndarray:
    data = _read(path)
    if len(data) < 16:
        raise DatasetFormatError(f"{path}: truncated header")
    magic, n, rows, cols = struct.unpack(">4i", data[:16])
    if magic != IMAGE_MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {magic}, expected {IMAGE_MAGIC}")
    size = n * rows * cols
    if len(data) - 16 < size:
        raise DatasetFormatError(f"{path}: truncated, expected {size} pixel bytes")
    return np.frombuffer(data, dtype=np.uint8, count=size, offset=16).reshape(n, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    data = _read(path)
    if len(data) < 8:
        raise DatasetFormatError(f"{path}: truncated header")
    magic, n = struct.unpack(">2i", data[:8])
    if magic != LABEL_MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {magic}, expected {LABEL_MAGIC}")
    if len(data) - 8 < n:
        raise DatasetFormatError(f"{path}: truncated, expected {n} labels")
    return np.frombuffer(data, dtype=np.uint8, count=n, offset=8).astype(np.int64)


def pixel_permutation(length: int, seed) -> np.ndarray:
    return np.random.default_rng(seed).permutation(length)


def mnist_load_idx(images_path, labels_path, permutation_seed=None) -> SequenceBatch:
    """Row-major flattened images as [count, rows*cols, 1] sequences scaled to [0, 1].

    With ``permutation_seed`` the same pixel permutation is applied to every image.
    """
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise DatasetFormatError(f"{len(images)} images but {len(labels)} labels")
    seqs = images.reshape(len(images), -1).astype(np.float64) / 255.0
    if permutation_seed is not None:
        seqs = seqs[:, pixel_permutation(seqs.shape[1], permutation_seed)]
    meta = {"task": "psmnist" if permutation_seed is not None else "smnist", "N": seqs.shape[1],
            "permutation_seed": permutation_seed, "n_classes": 10}
    return SequenceBatch(seqs[:, :, None], labels, meta)


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Inverse of the readers, for fixtures and round trips."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    Path(images_path).write_bytes(struct.pack(">4i", IMAGE_MAGIC, n, rows, cols) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">2i", LABEL_MAGIC, len(labels)) + labels.tobytes())
