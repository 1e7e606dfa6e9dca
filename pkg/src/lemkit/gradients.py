"""Exact reverse-mode gradients for LEM and the tools used to audit them.

``backward`` is hand-written BPTT over the per-step caches. The state
Jacobian, the per-(n, k) gradient contributions and the finite-difference
oracle are built independently of it so the paths can check one another.

State vectors X are interleaved as [z^1, y^1, ..., z^d, y^d]: z^i sits at
index 2i and y^i at 2i + 1 (zero based).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .cell import LemParams, StepCache, forward_sequence
from .losses import sequence_loss
from .numerics import DTYPE, norm_inf, sigma_hat, sigma_hat_prime

LemGrads = LemParams
RECURRENT = ("W1", "W2", "Wz", "Wy")


def backward(params: LemParams, caches: list[StepCache], target_grads) -> LemGrads:
    """Gradients of a loss whose derivative w.r.t. each output w_n is given.

    ``target_grads`` has shape [N, o] or [N, batch, o], aligned with the
    caches of one ``forward_sequence`` call. Batch contributions are summed.
    """
    target_grads = np.asarray(target_grads, dtype=DTYPE)
    if len(target_grads) != len(caches):
        raise ValueError(f"{len(target_grads)} output gradients for {len(caches)} steps")
    p = params
    dt = p.delta_t
    d = p.d

    def stack(get):
        return np.stack([get(c) for c in caches])

    y0, z0 = stack(lambda c: c.prev_state.y), stack(lambda c: c.prev_state.z)
    ys, zs, u = stack(lambda c: c.next_state.y), stack(lambda c: c.next_state.z), stack(lambda c: c.u)
    gdt, gdt_bar = stack(lambda c: c.gate_dt), stack(lambda c: c.gate_dt_bar)
    tC, tD = np.tanh(stack(lambda c: c.C)), np.tanh(stack(lambda c: c.D))
    sA, sB = gdt / dt, gdt_bar / dt
    # local derivatives of each pre-activation's contribution, per step
    coef_A = (tC - z0) * dt * sA * (1.0 - sA)
    coef_B = (tD - y0) * dt * sB * (1.0 - sB)
    coef_C = gdt * (1.0 - tC * tC)
    coef_D = gdt_bar * (1.0 - tD * tD)
    out_to_y = target_grads @ p.Wout
    W_rec = np.concatenate([p.W1, p.W2, p.Wz])

    d_pre = np.empty(y0.shape[:-1] + (4 * d,), dtype=y0.dtype)  # dA, dB, dC, dD per step
    dy = np.zeros_like(y0[0])
    dz = np.zeros_like(dy)
    for n in range(len(caches) - 1, -1, -1):
        dy = dy + out_to_y[n]
        dD = dy * coef_D[n]
        d_pre[n, ..., d:2 * d] = dy * coef_B[n]
        d_pre[n, ..., 3 * d:] = dD
        dz = dz + dD @ p.Wy
        d_pre[n, ..., 2 * d:3 * d] = dz * coef_C[n]
        d_pre[n, ..., :d] = dz * coef_A[n]
        dz = dz * (1.0 - gdt[n])
        dy = dy * (1.0 - gdt_bar[n]) + d_pre[n, ..., :3 * d] @ W_rec

    def flat(a):
        return a.reshape(-1, a.shape[-1])

    dP, Y0, U = flat(d_pre), flat(y0), flat(u)
    dW_rec = dP[:, :3 * d].T @ Y0
    dV = dP.T @ U
    db = dP.sum(axis=0)
    g = {
        "W1": dW_rec[:d], "W2": dW_rec[d:2 * d], "Wz": dW_rec[2 * d:],
        "V1": dV[:d], "V2": dV[d:2 * d], "Vz": dV[2 * d:3 * d], "Vy": dV[3 * d:],
        "b1": db[:d], "b2": db[d:2 * d], "bz": db[2 * d:3 * d], "by": db[3 * d:],
        "Wy": dP[:, 3 * d:].T @ flat(zs),
        "Wout": flat(target_grads).T @ flat(ys),
    }
    return p.replace(**{k: np.ascontiguousarray(v) for k, v in g.items()})


def _forward_for(params):
    if isinstance(params, LemParams):
        return forward_sequence
    from .baselines import LstmParams, lstm_forward_sequence
    if isinstance(params, LstmParams):
        return lstm_forward_sequence
    raise TypeError(f"no forward pass for {type(params).__name__}")


def model_loss(params, inputs, targets, loss_kind="mse", readout="per-step") -> float:
    outputs, _ = _forward_for(params)(params, inputs)
    return sequence_loss(outputs, targets, loss_kind, readout)[0]


def _extended_loss(params, inputs, targets, loss_kind, readout):
    # loss kept in long double end to end; rounding it to a Python float
    # would reintroduce the float64 cancellation floor
    outputs, _ = _forward_for(params)(params, inputs)
    if loss_kind == "mse":
        if readout == "per-step":
            diff = outputs - targets
            batch = outputs.shape[1] if outputs.ndim == 3 else 1
            return 0.5 * np.sum(diff * diff) / (outputs.shape[0] * batch)
        if readout == "last-step":
            diff = outputs[-1] - targets
            batch = diff.shape[0] if diff.ndim == 2 else 1
            return 0.5 * np.sum(diff * diff) / batch
        raise ValueError(f"unknown readout {readout!r}")
    if loss_kind == "cross_entropy":
        if readout != "last-step":
            raise ValueError("cross-entropy is only defined on the last-step readout")
        logits = np.atleast_2d(outputs[-1])
        ids = np.asarray(targets).reshape(-1)
        shifted = logits - np.max(logits, axis=-1, keepdims=True)
        logp = shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
        return -np.mean(logp[np.arange(len(ids)), ids])
    raise ValueError(f"unknown loss kind {loss_kind!r}")


def finite_difference_gradient(params, inputs, targets, loss_kind="mse", epsilon=1e-6,
                               readout="per-step", richardson=False, extended=False):
    """Central differences, one full forward pass per perturbation.

    The step for scalar theta is h = epsilon * max(1, |theta|). With
    ``richardson`` the estimates at h and 2h are combined as
    (4 D(h) - D(2h)) / 3, cancelling the h^2 error term. With ``extended``
    the perturbed forward passes and losses run in ``np.longdouble``, which
    lowers the cancellation floor by roughly three orders of magnitude on
    x86-64. Works for LEM or LSTM parameters; returns float64 gradients in a
    container of the same type.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    dtype = np.longdouble if extended else DTYPE
    base = params.map(lambda a: np.asarray(a, dtype=dtype))
    inputs = np.asarray(inputs, dtype=dtype)
    if loss_kind == "mse":
        targets = np.asarray(targets, dtype=dtype)
    flat = base.flatten()
    grad = np.empty(flat.size, dtype=dtype)

    def loss_at(i, value):
        orig = flat[i]
        flat[i] = value
        try:
            return _extended_loss(base.unflatten(flat), inputs, targets, loss_kind, readout)
        finally:
            flat[i] = orig

    for i in range(flat.size):
        x = flat[i]
        h = dtype(epsilon) * max(dtype(1.0), abs(x))
        d1 = (loss_at(i, x + h) - loss_at(i, x - h)) / (2 * h)
        if richardson:
            d2 = (loss_at(i, x + 2 * h) - loss_at(i, x - 2 * h)) / (4 * h)
            d1 = (4 * d1 - d2) / 3
        grad[i] = d1
    return params.unflatten(grad.astype(DTYPE))


def max_relative_error(a, b, floor: float = 1e-8) -> float:
    """max |a - b| / max(|a|, |b|, floor) over all entries of two param sets."""
    fa, fb = a.flatten(), b.flatten()
    return float(np.max(np.abs(fa - fb) / np.maximum(np.maximum(np.abs(fa), np.abs(fb)), floor)))


def _single(cache: StepCache) -> StepCache:
    if cache.A.ndim != 1:
        raise ValueError("Jacobian tools expect unbatched caches")
    return cache


def jacobian_parts(params: LemParams, cache: StepCache):
    """(E, F) with dX_n/dX_{n-1} = I + dt * E + dt^2 * F."""
    c = _single(cache)
    d = params.d
    sA, sB = sigma_hat(c.A), sigma_hat(c.B)
    dsA, dsB = sigma_hat_prime(c.A), sigma_hat_prime(c.B)
    tC, tD = np.tanh(c.C), np.tanh(c.D)
    dtC, dtD = 1.0 - tC * tC, 1.0 - tD * tD
    z0, y0 = c.prev_state.z, c.prev_state.y

    E = np.zeros((2 * d, 2 * d))
    F = np.zeros((2 * d, 2 * d))
    zi, yi = slice(0, 2 * d, 2), slice(1, 2 * d, 2)
    # dz_n/dy_{n-1}, used both in E and inside F
    dz_dy = (dsA * (tC - z0))[:, None] * params.W1 + (sA * dtC)[:, None] * params.Wz
    E[zi, zi] = -np.diag(sA)
    E[zi, yi] = dz_dy
    y_through_D = (sB * dtD)[:, None] * params.Wy
    E[yi, zi] = y_through_D
    E[yi, yi] = -np.diag(sB) + (dsB * (tD - y0))[:, None] * params.W2
    F[yi, zi] = -y_through_D * sA[None, :]
    F[yi, yi] = y_through_D @ dz_dy
    return E, F


def state_jacobian(params: LemParams, cache: StepCache) -> np.ndarray:
    E, F = jacobian_parts(params, cache)
    dt = params.delta_t
    return np.eye(E.shape[0]) + dt * E + dt * dt * F


def interleave(z, y) -> np.ndarray:
    x = np.empty(2 * len(z))
    x[0::2], x[1::2] = z, y
    return x


_SELECTOR_TARGET = {
    "W1": ("A", "y0"), "V1": ("A", "u"), "b1": ("A", None),
    "W2": ("B", "y0"), "V2": ("B", "u"), "b2": ("B", None),
    "Wz": ("C", "y0"), "Vz": ("C", "u"), "bz": ("C", None),
    "Wy": ("D", "z"), "Vy": ("D", "u"), "by": ("D", None),
}


def immediate_state_derivative(params: LemParams, cache: StepCache, theta) -> np.ndarray:
    """dX_k/dtheta holding X_{k-1} fixed, for theta = (name, alpha[, beta]).

    For ``("Wy", a, b)`` the only nonzero entry is y^a with value
    dt * sigma_hat(B_a) * tanh'(D_a) * z_k^b. Entries feeding z_k (W1, Wz, ...)
    also move y_k through the W_y coupling, so those vectors have y entries too.
    """
    c = _single(cache)
    name, alpha, *rest = theta
    if name not in _SELECTOR_TARGET:
        raise ValueError(f"unsupported parameter {name!r}")
    pre, source = _SELECTOR_TARGET[name]
    d = params.d
    if not 0 <= alpha < d:
        raise IndexError(f"row index {alpha} out of range")
    if source is None:
        x = 1.0
    else:
        vec = {"y0": c.prev_state.y, "z": c.next_state.z, "u": c.u}[source]
        beta = rest[0]
        if not 0 <= beta < vec.shape[0]:
            raise IndexError(f"column index {beta} out of range")
        x = vec[beta]
    dt = params.delta_t
    out = np.zeros(2 * d)
    if pre in ("A", "C"):
        if pre == "A":
            dz = dt * sigma_hat_prime(c.A[alpha]) * (np.tanh(c.C[alpha]) - c.prev_state.z[alpha]) * x
        else:
            dz = dt * sigma_hat(c.A[alpha]) * (1.0 - np.tanh(c.C[alpha]) ** 2) * x
        out[2 * alpha] = dz
        out[1::2] = dt * sigma_hat(c.B) * (1.0 - np.tanh(c.D) ** 2) * params.Wy[:, alpha] * dz
    elif pre == "B":
        out[2 * alpha + 1] = dt * sigma_hat_prime(c.B[alpha]) * (np.tanh(c.D[alpha]) - c.prev_state.y[alpha]) * x
    else:
        out[2 * alpha + 1] = dt * sigma_hat(c.B[alpha]) * (1.0 - np.tanh(c.D[alpha]) ** 2) * x
    return out


def loss_state_gradient(params: LemParams, cache: StepCache, target) -> np.ndarray:
    """dE_n/dX_n for E_n = 0.5 * ||Wout y_n - target||^2 (z entries are zero)."""
    y = cache.next_state.y
    gy = (params.Wout @ y - np.asarray(target, dtype=DTYPE)) @ params.Wout
    return interleave(np.zeros_like(gy), gy)


def gradient_contributions(params: LemParams, caches, n: int, theta, targets=None) -> np.ndarray:
    """All contributions dE_n^(k)/dtheta for k = 1..n (returned at index k-1).

    Each is dE_n/dX_n . (prod_{l=k+1..n} dX_l/dX_{l-1}) . d+X_k/dtheta with
    the product swept right to left from step n.
    """
    if not 1 <= n <= len(caches):
        raise IndexError(f"step n={n} outside 1..{len(caches)}")
    if targets is None:
        target_n = np.zeros(params.o)
    else:
        target_n = np.asarray(targets, dtype=DTYPE)[n - 1]
    v = loss_state_gradient(params, caches[n - 1], target_n)
    out = np.empty(n)
    for k in range(n, 0, -1):
        out[k - 1] = v @ immediate_state_derivative(params, caches[k - 1], theta)
        if k > 1:
            v = v @ state_jacobian(params, caches[k - 1])
    return out


def gradient_contribution(params: LemParams, caches, n: int, k: int, theta, targets=None) -> float:
    if not 1 <= k <= n:
        raise IndexError(f"need 1 <= k <= n, got k={k}, n={n}")
    return float(gradient_contributions(params, caches, n, theta, targets)[k - 1])


def eta(params: LemParams) -> float:
    return max(norm_inf(getattr(params, k)) for k in RECURRENT)


def prop2_bound(params: LemParams, x_hat: float) -> tuple[float, float]:
    """(small-step bound, any-step bound) on |dE/dtheta| for T = N dt = 1."""
    e = eta(params)
    lead = 3.0 + np.sqrt(3.0) * x_hat
    return float(lead * (3.0 + 6.0 * e)), float(lead * (1.0 + np.exp(1.0 + 3.0 * e)))


@dataclass
class GradientReport:
    grads: LemGrads
    empirical_max_abs: float
    bound_small_dt: float
    bound_unconditional: float
    eta: float
    x_hat: float

    @property
    def prop2_bound(self) -> float:
        return self.bound_unconditional

    @property
    def passed(self) -> bool:
        return self.empirical_max_abs <= self.bound_unconditional

    def to_dict(self) -> dict:
        return {
            "eta": self.eta,
            "x_hat": self.x_hat,
            "bound_small_dt": self.bound_small_dt,
            "bound_unconditional": self.bound_unconditional,
            "empirical_max_abs": self.empirical_max_abs,
            "pass": self.passed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def gradient_report(params: LemParams, inputs, targets) -> GradientReport:
    """Per-step MSE gradients compared with the bound; readout must be the identity."""
    if params.o != params.d or not np.array_equal(params.Wout, np.eye(params.d)):
        raise ValueError("the gradient bound assumes the identity readout w_n = y_n")
    outputs, caches = forward_sequence(params, inputs)
    _, gout = sequence_loss(outputs, targets, "mse", "per-step")
    grads = backward(params, caches, gout)
    theta = np.concatenate([v.ravel() for k, v in grads.items() if k != "Wout"])
    x_hat = float(np.max(np.abs(targets)))
    small, uncond = prop2_bound(params, x_hat)
    return GradientReport(grads, float(np.max(np.abs(theta))), small, uncond, eta(params), x_hat)


__all__ = [
    "LemGrads", "backward", "finite_difference_gradient", "model_loss", "max_relative_error",
    "jacobian_parts", "state_jacobian", "immediate_state_derivative", "gradient_contribution",
    "gradient_contributions", "prop2_bound", "eta", "GradientReport", "gradient_report",
    "interleave",
]
