"""LSTM baseline with hand-written BPTT, and the LEM/LSTM equivalence pair.

The LSTM uses the same sigmoid as LEM for its gates and tanh elsewhere::

    f = s(Wf h + Vf u + bf)   i = s(Wi h + Vi u + bi)   o = s(Wo h + Vo u + bo)
    c_n = f * c + i * tanh(W h + V u + b)
    h_n = o * tanh(c_n)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._paramset import CheckpointError, ParamSet
from .cell import LemParams, LemState, forward_sequence
from .numerics import DTYPE, as_float, saturating_bias, sigma_hat


@dataclass
class LstmParams(ParamSet):
    W: np.ndarray
    Wf: np.ndarray
    Wi: np.ndarray
    Wo: np.ndarray
    V: np.ndarray
    Vf: np.ndarray
    Vi: np.ndarray
    Vo: np.ndarray
    b: np.ndarray
    bf: np.ndarray
    bi: np.ndarray
    bo: np.ndarray
    Wout: np.ndarray

    ARRAY_FIELDS = ("W", "Wf", "Wi", "Wo", "V", "Vf", "Vi", "Vo",
                    "b", "bf", "bi", "bo", "Wout")
    HEADER = b"LSTM1"

    def __post_init__(self):
        d, m = self.V.shape
        for name, shape in self._shapes((d, m, self.Wout.shape[0])).items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def d(self) -> int:
        return self.W.shape[0]

    @property
    def m(self) -> int:
        return self.V.shape[1]

    @property
    def o(self) -> int:
        return self.Wout.shape[0]

    def _dims(self):
        return (self.d, self.m, self.o)

    @classmethod
    def _shapes(cls, dims):
        d, m, o = dims
        shapes = {k: (d, d) for k in ("W", "Wf", "Wi", "Wo")}
        shapes.update({k: (d, m) for k in ("V", "Vf", "Vi", "Vo")})
        shapes.update({k: (d,) for k in ("b", "bf", "bi", "bo")})
        shapes["Wout"] = (o, d)
        return shapes

    @classmethod
    def _build(cls, dims, scalars, arrays):
        try:
            return cls(**arrays)
        except ValueError as exc:
            raise CheckpointError(str(exc)) from exc


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, d: int, batch: int | None = None, dtype=DTYPE) -> "LstmState":
        shape = (d,) if batch is None else (batch, d)
        return cls(np.zeros(shape, dtype=dtype), np.zeros(shape, dtype=dtype))


@dataclass
class LstmCache:
    f: np.ndarray
    i: np.ndarray
    o: np.ndarray
    g: np.ndarray
    tc: np.ndarray
    u: np.ndarray
    prev_state: LstmState
    next_state: LstmState


def lstm_param_count(d: int, m: int, o: int) -> int:
    return 4 * (d * d + d * m + d) + o * d


def lstm_init_params(d: int, m: int, o: int, seed) -> LstmParams:
    if min(d, m, o) < 1:
        raise ValueError("dimensions must be positive")
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(d)
    return LstmParams(**{k: rng.uniform(-bound, bound, size=s)
                         for k, s in LstmParams._shapes((d, m, o)).items()})


def _lstm_step(p: LstmParams, h0, c0, u) -> LstmCache:
    f = sigma_hat(h0 @ p.Wf.T + u @ p.Vf.T + p.bf)
    i = sigma_hat(h0 @ p.Wi.T + u @ p.Vi.T + p.bi)
    o = sigma_hat(h0 @ p.Wo.T + u @ p.Vo.T + p.bo)
    g = np.tanh(h0 @ p.W.T + u @ p.V.T + p.b)
    c = f * c0 + i * g
    tc = np.tanh(c)
    return LstmCache(f, i, o, g, tc, u, LstmState(h0, c0), LstmState(o * tc, c))


def lstm_forward_step(params: LstmParams, state: LstmState, u):
    u = np.asarray(u, dtype=DTYPE)
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(state.h)) and np.all(np.isfinite(state.c))):
        raise ValueError("non-finite input or state")
    cache = _lstm_step(params, state.h, state.c, u)
    return cache.next_state, cache


def lstm_forward_sequence(params: LstmParams, inputs, init: LstmState | None = None):
    inputs = as_float(inputs)
    if inputs.ndim < 2 or inputs.shape[0] == 0:
        raise ValueError("need a nonempty sequence of input vectors")
    if not np.all(np.isfinite(inputs)):
        raise ValueError("non-finite input")
    if init is None:
        init = LstmState.zeros(params.d, None if inputs.ndim == 2 else inputs.shape[1], inputs.dtype)
    h, c = init.h, init.c
    caches = []
    for u in inputs:
        cache = _lstm_step(params, h, c, u)
        caches.append(cache)
        h, c = cache.next_state.h, cache.next_state.c
    hs = np.stack([k.next_state.h for k in caches])
    return hs @ params.Wout.T, caches


def lstm_predict(params: LstmParams, inputs) -> np.ndarray:
    """Readout sequence only; keeps no per-step caches."""
    inputs = as_float(inputs)
    if inputs.ndim < 2 or inputs.shape[0] == 0 or inputs.shape[-1] != params.m:
        raise ValueError(f"inputs of shape {inputs.shape} do not fit m={params.m}")
    h = np.zeros(inputs.shape[1:-1] + (params.d,), dtype=inputs.dtype)
    c = h.copy()
    out = np.empty(inputs.shape[:-1] + (params.o,), dtype=inputs.dtype)
    for n, u in enumerate(inputs):
        k = _lstm_step(params, h, c, u)
        h, c = k.next_state.h, k.next_state.c
        out[n] = h @ params.Wout.T
    return out


def lstm_backward(params: LstmParams, caches: list[LstmCache], target_grads) -> LstmParams:
    target_grads = np.asarray(target_grads, dtype=DTYPE)
    if len(target_grads) != len(caches):
        raise ValueError(f"{len(target_grads)} output gradients for {len(caches)} steps")
    p = params
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    dh = np.zeros_like(caches[-1].next_state.h)
    dc = np.zeros_like(dh)
    batched = dh.ndim == 2

    def outer(a, b):
        return a.T @ b if batched else np.outer(a, b)

    def colsum(a):
        return a.sum(axis=0) if batched else a

    for k, gw in zip(reversed(caches), target_grads[::-1]):
        grads["Wout"] += outer(gw, k.next_state.h)
        dh = dh + gw @ p.Wout
        do = dh * k.tc * k.o * (1.0 - k.o)
        dc = dc + dh * k.o * (1.0 - k.tc * k.tc)
        df = dc * k.prev_state.c * k.f * (1.0 - k.f)
        di = dc * k.g * k.i * (1.0 - k.i)
        dg = dc * k.i * (1.0 - k.g * k.g)
        dc = dc * k.f
        h0 = k.prev_state.h
        dh = np.zeros_like(dh)
        for W, V, b, dpre in (("Wf", "Vf", "bf", df), ("Wi", "Vi", "bi", di),
                              ("Wo", "Vo", "bo", do), ("W", "V", "b", dg)):
            grads[W] += outer(dpre, h0)
            grads[V] += outer(dpre, k.u)
            grads[b] += colsum(dpre)
            dh = dh + dpre @ getattr(p, W)
    return p.replace(**grads)


def construct_equivalent_pair(d: int, m: int, seed, saturation_tol: float = 1e-9):
    """LEM (delta_t = 1) and LSTM whose trajectories coincide up to saturation_tol.

    Mapping: c = z, h = y, i = dt_n, f = 1 - dt_n, o ~ 1, dt_bar_n ~ 1. The
    forget gate uses the negated input-gate weights since s(-x) = 1 - s(x).
    The readouts are identity maps so outputs equal y_n and h_n.
    """
    if not saturation_tol > 0:
        raise ValueError("saturation_tol must be positive")
    b_inf = saturating_bias(saturation_tol)
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(d)

    def draw(*shape):
        return rng.uniform(-bound, bound, size=shape)

    W1, V1, b1 = draw(d, d), draw(d, m), draw(d)
    Wz, Vz, bz = draw(d, d), draw(d, m), draw(d)
    zdd, zdm = np.zeros((d, d)), np.zeros((d, m))
    eye = np.eye(d)
    lem = LemParams(W1=W1, W2=zdd.copy(), Wz=Wz, Wy=eye.copy(),
                    V1=V1, V2=zdm.copy(), Vz=Vz, Vy=zdm.copy(),
                    b1=b1, b2=np.full(d, b_inf), bz=bz, by=np.zeros(d),
                    Wout=eye.copy(), delta_t=1.0)
    lstm = LstmParams(W=Wz.copy(), Wf=-W1, Wi=W1.copy(), Wo=zdd.copy(),
                      V=Vz.copy(), Vf=-V1, Vi=V1.copy(), Vo=zdm.copy(),
                      b=bz.copy(), bf=-b1, bi=b1.copy(), bo=np.full(d, b_inf),
                      Wout=eye.copy())
    return lem, lstm


def equivalence_divergence(lem: LemParams, lstm: LstmParams, inputs) -> dict:
    """Max |y_n - h_n| and |z_n - c_n| over a shared input sequence."""
    _, lem_c = forward_sequence(lem, inputs, LemState.zeros(lem.d))
    _, lstm_c = lstm_forward_sequence(lstm, inputs)
    y = np.stack([c.next_state.y for c in lem_c])
    z = np.stack([c.next_state.z for c in lem_c])
    h = np.stack([c.next_state.h for c in lstm_c])
    c = np.stack([c.next_state.c for c in lstm_c])
    dy, dz = np.abs(y - h).max(axis=-1), np.abs(z - c).max(axis=-1)
    return {"max_hidden": float(dy.max()), "max_cell": float(dz.max()),
            "max": float(max(dy.max(), dz.max())), "per_step": np.maximum(dy, dz)}
