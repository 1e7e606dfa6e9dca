"""The LEM recurrent cell: parameters, initialization and forward dynamics.

One step maps (y, z) to new states via two sigmoid gates that act as
per-neuron time steps::

    dt_n     = delta_t * sigma_hat(W1 y + V1 u + b1)
    dt_bar_n = delta_t * sigma_hat(W2 y + V2 u + b2)
    z_n = (1 - dt_n) * z + dt_n * tanh(Wz y + Vz u + bz)
    y_n = (1 - dt_bar_n) * y + dt_bar_n * tanh(Wy z_n + Vy u + by)

The y update reads the freshly computed z_n. All arrays may carry a leading
batch axis; vectors are rows, so ``W @ y`` is written ``y @ W.T``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._paramset import CheckpointError, ParamSet
from .numerics import DTYPE, as_float


@dataclass
class LemParams(ParamSet):
    W1: np.ndarray
    W2: np.ndarray
    Wz: np.ndarray
    Wy: np.ndarray
    V1: np.ndarray
    V2: np.ndarray
    Vz: np.ndarray
    Vy: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    bz: np.ndarray
    by: np.ndarray
    Wout: np.ndarray
    delta_t: float = 1.0

    ARRAY_FIELDS = ("W1", "W2", "Wz", "Wy", "V1", "V2", "Vz", "Vy",
                    "b1", "b2", "bz", "by", "Wout")
    HEADER = b"LEM1"
    N_SCALARS = 1

    def __post_init__(self):
        if not self.delta_t > 0:
            raise ValueError(f"delta_t must be positive, got {self.delta_t}")
        d, m = self.V1.shape
        o = self.Wout.shape[0]
        for name, shape in self._shapes((d, m, o)).items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")

    @property
    def d(self) -> int:
        return self.W1.shape[0]

    @property
    def m(self) -> int:
        return self.V1.shape[1]

    @property
    def o(self) -> int:
        return self.Wout.shape[0]

    def _dims(self):
        return (self.d, self.m, self.o)

    def _scalars(self):
        return (float(self.delta_t),)

    @classmethod
    def _shapes(cls, dims):
        d, m, o = dims
        shapes = {}
        for k in ("W1", "W2", "Wz", "Wy"):
            shapes[k] = (d, d)
        for k in ("V1", "V2", "Vz", "Vy"):
            shapes[k] = (d, m)
        for k in ("b1", "b2", "bz", "by"):
            shapes[k] = (d,)
        shapes["Wout"] = (o, d)
        return shapes

    @classmethod
    def _build(cls, dims, scalars, arrays):
        try:
            return cls(**arrays, delta_t=scalars[0])
        except ValueError as exc:
            raise CheckpointError(str(exc)) from exc

    @classmethod
    def zeros(cls, d: int, m: int, o: int, delta_t: float = 1.0) -> "LemParams":
        arrays = {k: np.zeros(s, dtype=DTYPE) for k, s in cls._shapes((d, m, o)).items()}
        return cls(**arrays, delta_t=delta_t)


@dataclass
class LemState:
    y: np.ndarray
    z: np.ndarray

    @classmethod
    def zeros(cls, d: int, batch: int | None = None) -> "LemState":
        shape = (d,) if batch is None else (batch, d)
        return cls(np.zeros(shape, dtype=DTYPE), np.zeros(shape, dtype=DTYPE))


@dataclass
class StepCache:
    """Everything one backward step needs. A, B, C are built from y_{n-1}; D from z_n."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    gate_dt: np.ndarray
    gate_dt_bar: np.ndarray
    u: np.ndarray
    prev_state: LemState
    next_state: LemState


def param_count(d: int, m: int, o: int) -> int:
    """Trainable scalars in the cell plus the bias-free linear readout."""
    return 4 * (d * d + d * m + d) + o * d


def init_params(d: int, m: int, o: int, delta_t: float, seed) -> LemParams:
    """All weights and biases i.i.d. U(-1/sqrt(d), 1/sqrt(d))."""
    if min(d, m, o) < 1:
        raise ValueError(f"dimensions must be positive, got d={d}, m={m}, o={o}")
    if not delta_t > 0:
        raise ValueError("delta_t must be positive")
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(d)
    arrays = {k: rng.uniform(-bound, bound, size=s)
              for k, s in LemParams._shapes((d, m, o)).items()}
    return LemParams(**arrays, delta_t=float(delta_t))


def _check_finite(name, x):
    if not np.all(np.isfinite(x)):
        raise ValueError(f"non-finite values in {name}")


def _input_projection(p: LemParams, u) -> np.ndarray:
    """[..., 4d] input terms (plus biases) of A, B, C, D in that order."""
    V = np.concatenate([p.V1, p.V2, p.Vz, p.Vy])
    b = np.concatenate([p.b1, p.b2, p.bz, p.by])
    return u @ V.T + b


def _recurrent_weights(p: LemParams) -> np.ndarray:
    return np.concatenate([p.W1, p.W2, p.Wz])


def _advance(p: LemParams, W_rec, y0, z0, u, proj) -> StepCache:
    d = p.d
    pre = y0 @ W_rec.T + proj[..., :3 * d]
    A, B, C = pre[..., :d], pre[..., d:2 * d], pre[..., 2 * d:]
    # both gates in one pass: delta_t * sigma_hat(x) = (delta_t / 2) * (1 + tanh(x / 2))
    gates = (0.5 * p.delta_t) * (1.0 + np.tanh(0.5 * pre[..., :2 * d]))
    gdt, gdt_bar = gates[..., :d], gates[..., d:]
    z = (1.0 - gdt) * z0 + gdt * np.tanh(C)
    D = z @ p.Wy.T + proj[..., 3 * d:]
    y = (1.0 - gdt_bar) * y0 + gdt_bar * np.tanh(D)
    return StepCache(A, B, C, D, gdt, gdt_bar, u, LemState(y0, z0), LemState(y, z))


def _step(p: LemParams, y0, z0, u) -> StepCache:
    return _advance(p, _recurrent_weights(p), y0, z0, u, _input_projection(p, u))


def forward_step(params: LemParams, state: LemState, u) -> tuple[LemState, StepCache]:
    u = np.asarray(u, dtype=DTYPE)
    if u.shape[-1] != params.m or state.y.shape[-1] != params.d:
        raise ValueError("input or state shape does not match parameters")
    _check_finite("input", u)
    _check_finite("state", state.y)
    _check_finite("state", state.z)
    cache = _step(params, state.y, state.z, u)
    return cache.next_state, cache


def forward_sequence(params: LemParams, inputs, init: LemState | None = None):
    """Run the cell over ``inputs`` (shape [N, m] or [N, batch, m]).

    Returns (outputs, caches) where outputs[n] = y_n @ Wout.T.
    """
    inputs = as_float(inputs)
    if inputs.ndim < 2 or inputs.shape[0] == 0:
        raise ValueError("need a nonempty sequence of input vectors")
    if inputs.shape[-1] != params.m:
        raise ValueError(f"input width {inputs.shape[-1]} != m={params.m}")
    _check_finite("input", inputs)
    if init is None:
        init = LemState.zeros(params.d, None if inputs.ndim == 2 else inputs.shape[1])
        init = LemState(init.y.astype(inputs.dtype), init.z.astype(inputs.dtype))
    _check_finite("state", init.y)
    _check_finite("state", init.z)
    y, z = init.y, init.z
    caches = []
    W_rec, proj = _recurrent_weights(params), _input_projection(params, inputs)
    for u, pr in zip(inputs, proj):
        c = _advance(params, W_rec, y, z, u, pr)
        caches.append(c)
        y, z = c.next_state.y, c.next_state.z
    hs = np.stack([c.next_state.y for c in caches])
    return hs @ params.Wout.T, caches


def predict(params: LemParams, inputs) -> np.ndarray:
    """Readout sequence only; keeps no per-step caches."""
    inputs = as_float(inputs)
    if inputs.ndim < 2 or inputs.shape[0] == 0 or inputs.shape[-1] != params.m:
        raise ValueError(f"inputs of shape {inputs.shape} do not fit m={params.m}")
    _check_finite("input", inputs)
    y = np.zeros(inputs.shape[1:-1] + (params.d,), dtype=inputs.dtype)
    z = y.copy()
    out = np.empty(inputs.shape[:-1] + (params.o,), dtype=inputs.dtype)
    W_rec, proj = _recurrent_weights(params), _input_projection(params, inputs)
    for n, (u, pr) in enumerate(zip(inputs, proj)):
        c = _advance(params, W_rec, y, z, u, pr)
        y, z = c.next_state.y, c.next_state.z
        out[n] = y @ params.Wout.T
    return out


def save_params(params: LemParams, path) -> None:
    with open(path, "wb") as fh:
        fh.write(params.to_bytes())


def load_params(path) -> LemParams:
    with open(path, "rb") as fh:
        return LemParams.from_bytes(fh.read())
