"""The adding problem: sum the two marked values of a long random sequence."""

from __future__ import annotations

import numpy as np

from .base import SequenceBatch, derive_seed

# variance of the target around the constant prediction 1
BASELINE_MSE = 1.0 / 6.0


def adding_sample(N: int, rng: np.random.Generator):
    values = rng.uniform(0.0, 1.0, size=N)
    half = N // 2
    first = rng.integers(0, half)
    second = rng.integers(half, N)
    markers = np.zeros(N)
    markers[[first, second]] = 1.0
    return np.stack([values, markers], axis=-1), values[first] + values[second]


def adding_problem(N: int, count: int, seed) -> SequenceBatch:
    """Two-channel sequences of length N; channel 0 ~ U[0, 1), channel 1 marks
    one position in each half. Target is the sum of the two marked values.

    Sample i draws from its own generator seeded with (seed, i).
    """
    if N < 2:
        raise ValueError("sequence length must be at least 2")
    if count < 1:
        raise ValueError("count must be positive")
    inputs = np.empty((count, N, 2))
    targets = np.empty((count, 1))
    for i in range(count):
        inputs[i], targets[i, 0] = adding_sample(N, np.random.default_rng(derive_seed(seed, i)))
    return SequenceBatch(inputs, targets, {"task": "adding", "N": N, "seed": seed})
