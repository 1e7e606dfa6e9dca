"""Adaptive Dormand-Prince 5(4) integrator with step landing on sample times."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class StiffnessError(RuntimeError):
    """Step size collapsed below the underflow threshold."""


# standard Dormand-Prince tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4

SAFETY = 0.9
MIN_FACTOR, MAX_FACTOR = 0.2, 10.0
UNDERFLOW = 1e-12


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # [len(times), *y0.shape]
    n_steps: int
    n_rejected: int
    n_rhs: int


def _initial_step(rhs, t0, y0, f0, rel_tol, abs_tol, span):
    scale = abs_tol + rel_tol * np.abs(y0)
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, span)
    f1 = rhs(t0 + h0, y0 + h0 * f0)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, span)


def rk45_integrate(rhs, y0, t_span, rel_tol: float = 1e-6, abs_tol: float = 1e-9,
                   sample_times=None) -> Trajectory:
    """Integrate y' = rhs(t, y) over t_span and report y at sample_times.

    Steps are clipped so that every sample time is hit exactly. The error
    estimate is the RMS of the embedded difference scaled by
    abs_tol + rel_tol * max(|y_old|, |y_new|).
    """
    if not (rel_tol > 0 and abs_tol > 0):
        raise ValueError("tolerances must be positive")
    t0, t1 = map(float, t_span)
    if not t1 > t0:
        raise ValueError("t_span must be increasing")
    y = np.array(y0, dtype=np.float64)
    samples = np.array([t1] if sample_times is None else sample_times, dtype=np.float64)
    if samples.ndim != 1 or np.any(np.diff(samples) < 0) or samples[0] < t0 or samples[-1] > t1:
        raise ValueError("sample_times must be sorted and lie inside t_span")
    span = t1 - t0
    out = np.empty((len(samples),) + y.shape)
    idx = 0
    while idx < len(samples) and samples[idx] == t0:
        out[idx] = y
        idx += 1

    t = t0
    f = np.asarray(rhs(t, y), dtype=np.float64)
    n_rhs = 1
    if not np.all(np.isfinite(f)):
        raise ValueError("rhs is not finite at the initial state")
    h = _initial_step(rhs, t, y, f, rel_tol, abs_tol, span)
    n_rhs += 1
    n_steps = n_rejected = 0
    min_step = UNDERFLOW * span
    k = [None] * 7
    while idx < len(samples):
        target = samples[idx]
        landing = t + h >= target
        step = target - t if landing else h
        if step < min_step:
            raise StiffnessError(f"step size {step:.3e} below {min_step:.3e} at t={t:.6g}")
        k[0] = f
        for s in range(1, 7):
            ys = y + step * sum(a * k[j] for j, a in enumerate(_A[s]) if a != 0.0)
            k[s] = np.asarray(rhs(t + _C[s] * step, ys), dtype=np.float64)
        n_rhs += 6
        y_new = ys  # stage 7 point equals the 5th-order solution (FSAL)
        err_vec = step * sum(e * k[j] for j, e in enumerate(_E) if e != 0.0)
        scale = abs_tol + rel_tol * np.maximum(np.abs(y), np.abs(y_new))
        err = float(np.sqrt(np.mean((err_vec / scale) ** 2)))
        if not np.isfinite(err):
            n_rejected += 1
            h = step * MIN_FACTOR
            continue
        if err <= 1.0:
            t = target if landing else t + step
            y, f = y_new, k[6]
            n_steps += 1
            if landing:
                while idx < len(samples) and samples[idx] == target:
                    out[idx] = y
                    idx += 1
            factor = MAX_FACTOR if err == 0.0 else min(MAX_FACTOR, SAFETY * err ** -0.2)
            # a landing step may be artificially short; do not let it shrink h
            h = max(h, step * factor) if landing else step * factor
        else:
            n_rejected += 1
            h = step * max(MIN_FACTOR, SAFETY * err ** -0.2)
    return Trajectory(samples, out, n_steps, n_rejected, n_rhs)


def rk4_fixed(rhs, y0, t_span, dt: float, sample_times) -> np.ndarray:
    """Classical RK4 with a constant step; samples must lie on the step grid."""
    t0, t1 = map(float, t_span)
    n_total = int(round((t1 - t0) / dt))
    sample_idx = np.rint((np.asarray(sample_times, dtype=float) - t0) / dt).astype(np.int64)
    y = np.array(y0, dtype=np.float64)
    out = np.empty((len(sample_idx),) + y.shape)
    j = 0
    for n in range(n_total + 1):
        while j < len(sample_idx) and sample_idx[j] == n:
            out[j] = y
            j += 1
        if n == n_total:
            break
        t = t0 + n * dt
        k1 = rhs(t, y)
        k2 = rhs(t + dt / 2, y + dt / 2 * k1)
        k3 = rhs(t + dt / 2, y + dt / 2 * k2)
        k4 = rhs(t + dt, y + dt * k3)
        y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return out
