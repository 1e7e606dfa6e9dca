"""Noise-padded classification: a class-dependent prefix followed by a long noise tail."""

from __future__ import annotations

import numpy as np

from .base import SequenceBatch, derive_seed


def class_templates(signal_len: int, feature_dim: int, n_classes: int, seed) -> np.ndarray:
    """One U(0, 1) template per class, shape [n_classes, signal_len, feature_dim]."""
    rng = np.random.default_rng(derive_seed(seed, 0))
    return rng.uniform(0.0, 1.0, size=(n_classes, signal_len, feature_dim))


def noise_padded_classification(signal_len: int, pad_to: int, feature_dim: int, n_classes: int,
                                count: int, seed, noise_scale: float = 0.1,
                                templates: np.ndarray | None = None) -> SequenceBatch:
    """Prefix = class template + N(0, noise_scale^2) noise; steps past signal_len are U(0, 1).

    The label depends only on the prefix. Sample i draws from a generator
    seeded with (seed, 1, i).
    """
    if not pad_to > signal_len:
        raise ValueError(f"pad_to ({pad_to}) must exceed signal_len ({signal_len})")
    if min(signal_len, feature_dim, count) < 1 or n_classes < 2:
        raise ValueError("signal_len, feature_dim and count must be positive; n_classes >= 2")
    if templates is None:
        templates = class_templates(signal_len, feature_dim, n_classes, seed)
    if templates.shape != (n_classes, signal_len, feature_dim):
        raise ValueError(f"templates have shape {templates.shape}")
    inputs = np.empty((count, pad_to, feature_dim))
    labels = np.empty(count, dtype=np.int64)
    for i in range(count):
        rng = np.random.default_rng(derive_seed(seed, 1, i))
        label = int(rng.integers(n_classes))
        labels[i] = label
        inputs[i, :signal_len] = templates[label] + noise_scale * rng.standard_normal((signal_len, feature_dim))
        inputs[i, signal_len:] = rng.uniform(0.0, 1.0, size=(pad_to - signal_len, feature_dim))
    meta = {"task": "noisepad", "N": pad_to, "seed": seed, "signal_len": signal_len,
            "n_classes": n_classes, "noise_scale": noise_scale}
    return SequenceBatch(inputs, labels, meta)
