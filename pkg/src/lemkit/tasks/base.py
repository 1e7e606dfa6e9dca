"""Container for batched sequence datasets and its on-disk format."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DatasetFormatError(ValueError):
    pass


def derive_seed(seed, *path: int) -> list[int]:
    """Entropy list for numpy generators; ``seed`` may itself be an int or a list."""
    head = list(seed) if isinstance(seed, (list, tuple)) else [int(seed)]
    return head + [int(p) for p in path]


@dataclass
class SequenceBatch:
    """inputs: [batch, step, feature]; targets: [batch, out], [batch, step, out] or [batch] ids."""

    inputs: np.ndarray
    targets: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets)
        if self.inputs.ndim != 3:
            raise ValueError(f"inputs must be [batch, step, feature], got {self.inputs.shape}")
        if len(self.targets) != len(self.inputs):
            raise ValueError("targets and inputs disagree on batch size")
        if not np.all(np.isfinite(self.inputs)):
            raise ValueError("inputs contain non-finite values")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_steps(self) -> int:
        return self.inputs.shape[1]

    @property
    def n_features(self) -> int:
        return self.inputs.shape[2]

    @property
    def is_classification(self) -> bool:
        return self.targets.ndim == 1 and np.issubdtype(self.targets.dtype, np.integer)

    def time_major(self) -> np.ndarray:
        return np.ascontiguousarray(self.inputs.transpose(1, 0, 2))

    def time_major_targets(self) -> np.ndarray:
        """Targets in the layout the loss heads expect."""
        if self.targets.ndim == 3:
            return np.ascontiguousarray(self.targets.transpose(1, 0, 2))
        return self.targets

    def subset(self, idx) -> "SequenceBatch":
        return SequenceBatch(self.inputs[idx], self.targets[idx], dict(self.meta))

    def split(self, *sizes: int) -> list["SequenceBatch"]:
        """Consecutive chunks of the given sizes, then the remainder if any."""
        out, start = [], 0
        for s in sizes:
            out.append(self.subset(slice(start, start + s)))
            start += s
        if start < len(self):
            out.append(self.subset(slice(start, None)))
        return out


def save_dataset(batch: SequenceBatch, path) -> tuple[Path, Path]:
    """Write ``<path>.npz`` with the arrays and ``<path>.json`` describing them."""
    path = Path(path)
    stem = path.with_suffix("") if path.suffix in (".npz", ".json") else path
    npz, sidecar = stem.with_suffix(".npz"), stem.with_suffix(".json")
    np.savez(npz, inputs=batch.inputs, targets=batch.targets)
    desc = {
        "format": "lemkit-dataset-1",
        "count": len(batch),
        "n_steps": batch.n_steps,
        "n_features": batch.n_features,
        "targets_shape": list(batch.targets.shape),
        "targets_dtype": str(batch.targets.dtype),
        "meta": batch.meta,
    }
    sidecar.write_text(json.dumps(desc, indent=2, sort_keys=True))
    return npz, sidecar


def load_dataset(path) -> SequenceBatch:
    path = Path(path)
    stem = path.with_suffix("") if path.suffix in (".npz", ".json") else path
    npz, sidecar = stem.with_suffix(".npz"), stem.with_suffix(".json")
    if not npz.exists():
        raise FileNotFoundError(npz)
    meta = {}
    if sidecar.exists():
        try:
            meta = json.loads(sidecar.read_text()).get("meta", {})
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"bad sidecar {sidecar}: {exc}") from exc
    try:
        with np.load(npz) as data:
            return SequenceBatch(data["inputs"], data["targets"], meta)
    except (KeyError, ValueError, OSError) as exc:
        raise DatasetFormatError(f"bad dataset {npz}: {exc}") from exc
