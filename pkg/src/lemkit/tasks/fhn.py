"""FitzHugh-Nagumo fast-slow oscillator and its trajectory-prediction dataset.

    v' = v - v**3 / 3 - w + i_ext
    w' = tau * (v + a - b * w)

Each sample starts at (v0, w0) = (c, 0) with c ~ U[-1, 1]. The model sees two
input channels per step, the normalized time t / t_end and the constant c,
and must regress (v, w) at every step.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .base import SequenceBatch, derive_seed
from .rk45 import rk45_integrate


@dataclass(frozen=True)
class FhnConfig:
    tau: float = 0.02
    i_ext: float = 0.5
    a: float = 0.7
    b: float = 0.8
    t_end: float = 400.0
    n_points: int = 1000

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.n_points < 2:
            raise ValueError("n_points must be at least 2")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")

    def sample_times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_end, self.n_points)

    def to_dict(self) -> dict:
        return asdict(self)


def fhn_rhs(config: FhnConfig):
    """Vector field on states shaped [2, ...] (v first, w second)."""
    tau, i_ext, a, b = config.tau, config.i_ext, config.a, config.b

    def rhs(t, y):
        v, w = y[0], y[1]
        return np.stack([v - v * v * v / 3.0 - w + i_ext, tau * (v + a - b * w)])

    return rhs


def fhn_initial_values(count: int, seed) -> np.ndarray:
    """c_i drawn from a generator seeded with (seed, i), so any subset is reproducible alone."""
    return np.array([np.random.default_rng(derive_seed(seed, i)).uniform(-1.0, 1.0) for i in range(count)])


def fhn_trajectories(config: FhnConfig, v0, rel_tol: float = 1e-8, abs_tol: float = 1e-10) -> np.ndarray:
    """(v, w) at config.sample_times() for each v0; shape [count, n_points, 2]."""
    v0 = np.atleast_1d(np.asarray(v0, dtype=np.float64))
    y0 = np.stack([v0, np.zeros_like(v0)])
    traj = rk45_integrate(fhn_rhs(config), y0, (0.0, config.t_end), rel_tol, abs_tol,
                          config.sample_times())
    return traj.states.transpose(2, 0, 1).copy()


def fhn_generate(config: FhnConfig, count: int, seed, rel_tol: float = 1e-8,
                 abs_tol: float = 1e-10) -> SequenceBatch:
    if count < 1:
        raise ValueError("count must be positive")
    c = fhn_initial_values(count, seed)
    targets = fhn_trajectories(config, c, rel_tol, abs_tol)
    t = config.sample_times() / config.t_end
    inputs = np.empty((count, config.n_points, 2))
    inputs[:, :, 0] = t[None, :]
    inputs[:, :, 1] = c[:, None]
    meta = {"task": "fhn", "N": config.n_points, "seed": seed, "config": config.to_dict(),
            "rel_tol": rel_tol, "abs_tol": abs_tol}
    return SequenceBatch(inputs, targets, meta)


def fhn_rk4_reference(config: FhnConfig, v0: float, sample_times, dt: float = 1e-4) -> np.ndarray:
    """Fixed-step RK4 on one trajectory in plain floats; returns [len(sample_times), 2].

    Every sample time must be a multiple of dt.
    """
    tau, i_ext, a, b = config.tau, config.i_ext, config.a, config.b
    ticks = np.asarray(sample_times, dtype=np.float64) / dt
    idx = np.rint(ticks).astype(np.int64)
    if np.any(np.abs(ticks - idx) > 1e-6) or np.any(np.diff(idx) <= 0) or idx[0] < 0:
        raise ValueError("sample times must be increasing multiples of dt")
    n_total = int(idx[-1])
    want = set(idx.tolist())
    out = np.empty((len(idx), 2))
    v, w = float(v0), 0.0
    h2, h6 = dt / 2.0, dt / 6.0
    j = 0
    if idx[0] == 0:
        out[0] = v, w
        j = 1
    for n in range(1, n_total + 1):
        k1v = v - v * v * v / 3.0 - w + i_ext
        k1w = tau * (v + a - b * w)
        v2, w2 = v + h2 * k1v, w + h2 * k1w
        k2v = v2 - v2 * v2 * v2 / 3.0 - w2 + i_ext
        k2w = tau * (v2 + a - b * w2)
        v3, w3 = v + h2 * k2v, w + h2 * k2w
        k3v = v3 - v3 * v3 * v3 / 3.0 - w3 + i_ext
        k3w = tau * (v3 + a - b * w3)
        v4, w4 = v + dt * k3v, w + dt * k3w
        k4v = v4 - v4 * v4 * v4 / 3.0 - w4 + i_ext
        k4w = tau * (v4 + a - b * w4)
        v += h6 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
        w += h6 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w)
        if n in want:
            out[j] = v, w
            j += 1
    return out
