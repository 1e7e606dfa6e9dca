"""Small numerical helpers shared across the package.

Everything runs in float64. Dense linear algebra is delegated to numpy; the
functions here only pin down the conventions the rest of the code relies on
(sigmoid form, matrix norms, seeded sampling, log-log slope fits).
"""

from __future__ import annotations

import numpy as np

DTYPE = np.float64


class DegenerateFitError(ValueError):
    """Raised when a power-law fit has nothing to regress on."""


def as_float(x):
    """Array view of x; keeps floating dtypes (float64, longdouble), promotes the rest."""
    x = np.asarray(x)
    return x if np.issubdtype(x.dtype, np.floating) else x.astype(DTYPE)


def sigma_hat(x):
    """Logistic sigmoid written as 0.5 * (1 + tanh(x / 2))."""
    return 0.5 * (1.0 + np.tanh(as_float(x) * 0.5))


def sigma_hat_prime(x):
    s = sigma_hat(x)
    return s * (1.0 - s)


def sigma_hat_inverse(tau):
    """Return b with sigma_hat(b) == tau, for tau strictly inside (0, 1)."""
    tau = np.asarray(tau, dtype=DTYPE)
    if np.any(tau <= 0.0) or np.any(tau >= 1.0):
        raise ValueError(f"sigma_hat_inverse needs 0 < tau < 1, got {tau}")
    out = 2.0 * np.arctanh(2.0 * tau - 1.0)
    return float(out) if out.ndim == 0 else out


def saturating_bias(tol: float) -> float:
    """Bias b_inf with |1 - sigma_hat(b_inf)| <= tol."""
    if not 0.0 < tol < 1.0:
        raise ValueError("saturation tolerance must lie in (0, 1)")
    return sigma_hat_inverse(1.0 - tol)


def tanh_prime(x):
    t = np.tanh(x)
    return 1.0 - t * t


def _check_matrix(a):
    a = np.asarray(a, dtype=DTYPE)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {a.shape}")
    return a


def matvec(a, x):
    a = _check_matrix(a)
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 1 or x.shape[0] != a.shape[1]:
        raise ValueError(f"shape mismatch: {a.shape} @ {x.shape}")
    return a @ x


def matmul(a, b):
    a = _check_matrix(a)
    b = _check_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"shape mismatch: {a.shape} @ {b.shape}")
    return a @ b


def hadamard(a, b):
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} * {b.shape}")
    return a * b


def norm_inf(a) -> float:
    """Max absolute row sum for a matrix, max absolute entry for a vector."""
    a = np.asarray(a, dtype=DTYPE)
    if a.ndim == 1:
        return float(np.max(np.abs(a))) if a.size else 0.0
    return float(np.max(np.sum(np.abs(_check_matrix(a)), axis=1)))


def norm_1(a) -> float:
    """Max absolute column sum for a matrix, sum of |entries| for a vector."""
    a = np.asarray(a, dtype=DTYPE)
    if a.ndim == 1:
        return float(np.sum(np.abs(a)))
    return float(np.max(np.sum(np.abs(_check_matrix(a)), axis=0)))


def seeded_uniform(lo: float, hi: float, shape, seed) -> np.ndarray:
    """Draw U[lo, hi) values from numpy's PCG64 generator seeded with `seed`."""
    if not lo < hi:
        raise ValueError(f"empty range [{lo}, {hi})")
    rng = np.random.default_rng(seed)
    return rng.uniform(lo, hi, size=shape)


def loglog_slope(x, y) -> float:
    """Least-squares slope of log(y) against log(x)."""
    lx = np.log(np.asarray(x, dtype=DTYPE))
    ly = np.log(np.asarray(y, dtype=DTYPE))
    slope, _ = np.polyfit(lx, ly, 1)
    return float(slope)


def power_law_histogram(amplitudes, n_bins: int = 20):
    """Logarithmically binned density of positive samples.

    Returns (bin_centers, density) with empty bins dropped. Density is count
    per unit amplitude, so a sample drawn from p(a) ~ a**-k gives a log-log
    slope of -k.
    """
    a = np.asarray(amplitudes, dtype=DTYPE).ravel()
    if a.size == 0:
        raise DegenerateFitError("no samples")
    if np.any(a <= 0.0) or not np.all(np.isfinite(a)):
        raise ValueError("amplitudes must be positive and finite")
    lo, hi = a.min(), a.max()
    if not hi > lo:
        raise DegenerateFitError("all samples identical")
    edges = np.geomspace(lo, hi, n_bins + 1)
    counts, _ = np.histogram(a, bins=edges)
    widths = np.diff(edges)
    centers = np.sqrt(edges[:-1] * edges[1:])
    keep = counts > 0
    return centers[keep], counts[keep] / (widths[keep] * a.size)


def fit_power_law(amplitudes, n_bins: int = 20) -> float:
    """Decay exponent k of a density p(a) ~ a**-k estimated on log bins."""
    centers, density = power_law_histogram(amplitudes, n_bins)
    if centers.size < 2:
        raise DegenerateFitError("fewer than two nonempty bins")
    return -loglog_slope(centers, density)
