"""Executable checks of the state and gradient bounds, gradient scaling, and gate histograms."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cell import LemParams, _step, forward_sequence, init_params
from .gradients import gradient_contributions, gradient_report
from .numerics import DegenerateFitError, fit_power_law, loglog_slope, norm_1


@dataclass
class VerificationReport:
    suite: str
    cases: int
    worst_margin: float
    passed: bool
    details: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"suite": self.suite, "cases": self.cases, "worst_margin": self.worst_margin,
                "pass": self.passed, "extra": self.extra, "details": self.details}

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, default=_jsonable)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialize {type(x).__name__}")


def state_bounds(n_steps: int, delta_t: float) -> tuple[np.ndarray, np.ndarray]:
    """(proof form sqrt(t_n (1 + 2 dt)), statement form sqrt(t_n (1 + dt))) for n = 1..n_steps."""
    t = np.arange(1, n_steps + 1) * delta_t
    return np.sqrt(t * (1.0 + 2.0 * delta_t)), np.sqrt(t * (1.0 + delta_t))


def _random_model(rng, d_max=16, m_max=4, dt_max=0.5) -> LemParams:
    d = int(rng.integers(1, d_max + 1))
    m = int(rng.integers(1, m_max + 1))
    dt = float(rng.uniform(0.01, dt_max))
    params = init_params(d, m, 1, dt, rng.integers(2 ** 63))
    # also probe weights well beyond the default init scale
    scale = float(rng.choice([1.0, np.sqrt(d), 5.0 * np.sqrt(d)]))
    return params.map(lambda a: a * scale)


def prop1_suite(n_models: int = 100, n_steps: int = 200, delta_t_max: float = 0.5,
                seed=0) -> VerificationReport:
    """Max |z|, |y| over all neurons against the state bounds, starting from zero state."""
    if not 0 < delta_t_max <= 0.5:
        raise ValueError("the bound assumes delta_t <= 0.5")
    rng = np.random.default_rng(seed)
    details, worst, worst_statement = [], np.inf, np.inf
    for i in range(n_models):
        params = _random_model(rng, dt_max=delta_t_max)
        u = rng.uniform(-3.0, 3.0, size=(n_steps, params.m))
        _, caches = forward_sequence(params, u)
        amp = np.array([max(np.max(np.abs(c.next_state.z)), np.max(np.abs(c.next_state.y)))
                        for c in caches])
        proof, statement = state_bounds(n_steps, params.delta_t)
        margin = float(np.min(proof - amp))
        margin_statement = float(np.min(statement - amp))
        worst = min(worst, margin)
        worst_statement = min(worst_statement, margin_statement)
        details.append({"model": i, "d": params.d, "m": params.m, "delta_t": params.delta_t,
                        "max_state": float(amp.max()), "margin": margin,
                        "margin_statement_form": margin_statement})
    return VerificationReport("prop1", n_models, float(worst), bool(worst >= 0.0), details,
                              {"n_steps": n_steps, "worst_margin_statement_form": float(worst_statement),
                               "statement_form_pass": bool(worst_statement >= 0.0)})


def prop2_suite(n_models: int = 50, seed=0, dt_choices=(0.01, 0.05, 0.1), d_max: int = 8,
                m_max: int = 4) -> VerificationReport:
    """Largest |dE/dtheta| against the gradient bound with T = N dt = 1 and identity readout."""
    rng = np.random.default_rng(seed)
    details, worst, small_ok = [], np.inf, 0
    for i in range(n_models):
        d = int(rng.integers(1, d_max + 1))
        m = int(rng.integers(1, m_max + 1))
        dt = float(rng.choice(dt_choices))
        n = int(round(1.0 / dt))
        params = init_params(d, m, d, dt, rng.integers(2 ** 63)).replace(Wout=np.eye(d))
        u = rng.uniform(-1.0, 1.0, size=(n, m))
        targets = rng.uniform(-1.0, 1.0, size=(n, d))
        rep = gradient_report(params, u, targets)
        margin = rep.bound_unconditional - rep.empirical_max_abs
        worst = min(worst, margin)
        small_ok += rep.empirical_max_abs <= rep.bound_small_dt
        details.append({"model": i, "d": d, "m": m, "delta_t": dt, "N": n, **rep.to_dict(),
                        "margin": float(margin)})
    return VerificationReport("prop2", n_models, float(worst), bool(worst >= 0.0), details,
                              {"small_dt_bound_held": int(small_ok)})


CENSOR = 1e-300


def prop3_scaling(d: int = 16, n: int = 100, k_list=(1, 10, 25, 50),
                  dt_list=(1e-3, 3e-3, 1e-2, 3e-2, 1e-1), seed=0, theta=("Wz", 0, 1),
                  slope_range=(1.3, 1.7), k_ratio_dt: float = 1e-2, m: int = 1):
    """Slope of log|dE_n^(k)/dtheta| against log(dt), and the spread across k.

    One random model (identity readout, O(1) targets) is rerun at each dt with
    the same weights. Contributions below 1e-300 in magnitude are censored. The
    slope regresses the geometric mean over uncensored k. Returns
    (slope, k_ratio, report).
    """
    k_list = [int(k) for k in k_list]
    if any(not 1 <= k <= n // 2 for k in k_list):
        raise ValueError("every k must satisfy 1 <= k <= n / 2")
    rng = np.random.default_rng(seed)
    u = rng.uniform(-1.0, 1.0, size=(n, m))
    targets = rng.uniform(-1.0, 1.0, size=(n, d))
    base = init_params(d, m, d, 1.0, rng.integers(2 ** 63)).replace(Wout=np.eye(d))

    def table(th):
        rows = []
        for dt in dt_list:
            params = base.replace(delta_t=float(dt))
            _, caches = forward_sequence(params, u)
            contrib = gradient_contributions(params, caches, n, th, targets)
            rows.append([abs(float(contrib[k - 1])) for k in k_list])
        return np.array(rows)

    def slope_of(vals):
        keep = np.all(vals >= CENSOR, axis=0)
        if not keep.any():
            raise DegenerateFitError("every k was censored")
        gmean = np.exp(np.mean(np.log(vals[:, keep]), axis=1))
        per_k = {k: loglog_slope(dt_list, vals[:, j]) for j, k in enumerate(k_list) if keep[j]}
        return loglog_slope(dt_list, gmean), per_k, keep

    vals = table(tuple(theta))
    slope, per_k, keep = slope_of(vals)
    row = vals[list(dt_list).index(k_ratio_dt)] if k_ratio_dt in dt_list else vals[len(dt_list) // 2]
    live = row[row >= CENSOR]
    k_ratio = float(live.max() / live.min())

    wy_vals = table(("Wy",) + tuple(theta[1:]))
    wy_slope, wy_per_k, _ = slope_of(wy_vals)
    lo, hi = slope_range
    passed = bool(lo <= slope <= hi)
    details = [{"delta_t": float(dt), "contributions": dict(zip(map(str, k_list), map(float, r)))}
               for dt, r in zip(dt_list, vals)]
    extra = {
        "theta": list(theta), "slope": slope, "slope_range": [lo, hi],
        "slope_per_k": {str(k): v for k, v in per_k.items()},
        "censored_k": [k for k, ok in zip(k_list, keep) if not ok],
        "k_ratio": k_ratio, "k_ratio_ok": bool(k_ratio <= 10.0),
        "wy_slope": wy_slope, "wy_slope_per_k": {str(k): v for k, v in wy_per_k.items()},
        "wy_norm_1": norm_1(base.Wy),
    }
    margin = min(slope - lo, hi - slope)
    return slope, k_ratio, VerificationReport("prop3", len(dt_list) * len(k_list), float(margin),
                                              passed, details, extra)


@dataclass
class GateHistogram:
    dt_values: np.ndarray
    dt_bar_values: np.ndarray
    span_orders: float
    exponent_dt: float
    exponent_dt_bar: float

    @property
    def count(self) -> int:
        return self.dt_values.size + self.dt_bar_values.size

    def summary(self) -> dict:
        return {"count": self.count, "span_orders": self.span_orders,
                "exponent_dt": self.exponent_dt, "exponent_dt_bar": self.exponent_dt_bar,
                "dt_range": [float(self.dt_values.min()), float(self.dt_values.max())],
                "dt_bar_range": [float(self.dt_bar_values.min()), float(self.dt_bar_values.max())]}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["gate", "value"])
            w.writerows(("dt", repr(float(v))) for v in self.dt_values)
            w.writerows(("dt_bar", repr(float(v))) for v in self.dt_bar_values)


def _exponent(values) -> float:
    try:
        return fit_power_law(values)
    except DegenerateFitError:
        return float("nan")


def delta_t_histogram(params: LemParams, batches) -> GateHistogram:
    """Every gate time step dt_n and dt_bar_n over all steps of all sequences.

    ``batches`` is an iterable of time-major input arrays [N, batch, m].
    """
    dts, dt_bars = [], []
    for inputs in batches:
        inputs = np.asarray(inputs, dtype=np.float64)
        y = np.zeros(inputs.shape[1:-1] + (params.d,))
        z = y.copy()
        for u in inputs:
            c = _step(params, y, z, u)
            y, z = c.next_state.y, c.next_state.z
            dts.append(c.gate_dt.ravel())
            dt_bars.append(c.gate_dt_bar.ravel())
    if not dts:
        raise ValueError("no input sequences given")
    dt_v, dtb_v = np.concatenate(dts), np.concatenate(dt_bars)
    both = np.concatenate([dt_v, dtb_v])
    span = float(np.log10(both.max() / both.min()))
    return GateHistogram(dt_v, dtb_v, span, _exponent(dt_v), _exponent(dtb_v))


def gradcheck_suite(n_instances: int = 20, seed=0, tol: float = 1e-6, epsilon: float = 1e-4,
                    d_max: int = 8, m_max: int = 4, n_max: int = 16) -> VerificationReport:
    """BPTT gradients against Richardson-extrapolated central differences in extended precision.

    Instances alternate between the MSE head (per-step and last-step readouts)
    and the cross-entropy head.
    """
    from .gradients import backward, finite_difference_gradient, max_relative_error
    from .losses import sequence_loss

    rng = np.random.default_rng(seed)
    details, worst = [], 0.0
    for i in range(n_instances):
        d = int(rng.integers(1, d_max + 1))
        m = int(rng.integers(1, m_max + 1))
        n = int(rng.integers(1, n_max + 1))
        dt = float(rng.uniform(0.05, 1.0))
        loss_kind = "mse" if i % 2 == 0 else "cross_entropy"
        readout = ("per-step" if i % 4 == 0 else "last-step") if loss_kind == "mse" else "last-step"
        o = int(rng.integers(1, 4)) if loss_kind == "mse" else int(rng.integers(2, 6))
        params = init_params(d, m, o, dt, rng.integers(2 ** 63))
        u = rng.uniform(-1.0, 1.0, size=(n, m))
        if loss_kind == "cross_entropy":
            targets = np.array(rng.integers(o))
        elif readout == "per-step":
            targets = rng.uniform(-1.0, 1.0, size=(n, o))
        else:
            targets = rng.uniform(-1.0, 1.0, size=o)
        outputs, caches = forward_sequence(params, u)
        _, gout = sequence_loss(outputs, targets, loss_kind, readout)
        exact = backward(params, caches, gout).flatten()
        approx = finite_difference_gradient(params, u, targets, loss_kind, epsilon, readout,
                                            richardson=True, extended=True).flatten()
        err = max_relative_error(exact, approx)
        worst = max(worst, err)
        details.append({"instance": i, "d": d, "m": m, "N": n, "o": o, "delta_t": dt,
                        "loss": loss_kind, "readout": readout, "max_rel_error": err})
    return VerificationReport("gradcheck", n_instances, float(tol - worst), bool(worst <= tol),
                              details, {"max_rel_error": worst, "tolerance": tol, "epsilon": epsilon})


def equivalence_suite(d: int = 8, m: int = 3, n_steps: int = 100, saturation_tol: float = 1e-9,
                      seed=0, tol: float = 1e-6) -> VerificationReport:
    """Trajectory gap between the LEM and LSTM built to coincide."""
    from .baselines import construct_equivalent_pair, equivalence_divergence

    lem, lstm = construct_equivalent_pair(d, m, seed, saturation_tol)
    u = np.random.default_rng([seed, 1]).uniform(-1.0, 1.0, size=(n_steps, m))
    gap = equivalence_divergence(lem, lstm, u)
    return VerificationReport("equivalence", n_steps, float(tol - gap["max"]), bool(gap["max"] <= tol),
                              [{"step": i + 1, "gap": float(g)} for i, g in enumerate(gap["per_step"])],
                              {"max_hidden": gap["max_hidden"], "max_cell": gap["max_cell"],
                               "saturation_tol": saturation_tol, "tolerance": tol})


def hmm_suite(tau: float = 1e-3, macro_dt: float = 0.05, micro_dt: float = 0.5, K: int = 20,
              t_end: float = 1.0, tau_list=(1e-2, 1e-3, 1e-4), accuracy: float = 1e-2) -> VerificationReport:
    """Linear fast-slow test: micro closed form, psi accuracy, and cost scaling in tau."""
    from .multiscale import (cost_comparison, hmm_solve, linear_exact, linear_test_system,
                             micro_closed_form, micro_relax)

    closed = 0.0
    rng = np.random.default_rng(0)
    for step in (0.01, 0.1, 0.5, 0.9):
        for k in (1, 5, 20, 100):
            phi, target = rng.uniform(-2, 2, 3), rng.uniform(-2, 2, 3)
            closed = max(closed, float(np.max(np.abs(micro_relax(phi, target, step, k)
                                                     - micro_closed_form(phi, target, step, k)))))
    n = int(round(t_end / macro_dt))
    traj = hmm_solve(linear_test_system(tau), 1.0, 0.0, macro_dt, micro_dt, K, n)
    _, psi_exact = linear_exact(tau, 0.0, 1.0, traj.times)
    psi_err = float(np.max(np.abs(traj.psi[:, 0] - psi_exact)))
    slow_err = float(np.max(np.abs(traj.psi[:, 0] - np.exp(-traj.times))))
    rows = cost_comparison(linear_test_system(tau), tau_list, accuracy, t_end=t_end, K=K)
    hmm_counts = [r["hmm_evaluations"] for r in rows]
    ref_counts = [r["reference_evaluations"] for r in rows]
    hmm_spread = max(hmm_counts) / min(hmm_counts)
    ref_growth = [b / a for a, b in zip(ref_counts, ref_counts[1:])]
    checks = {
        "closed_form": closed <= 1e-12,
        "accuracy": psi_err <= accuracy,
        "hmm_cost_flat": hmm_spread < 2.0,
        "reference_cost_grows": all(g >= 5.0 for g in ref_growth),
    }
    margin = min(1e-12 - closed, accuracy - psi_err, 2.0 - hmm_spread, min(ref_growth) - 5.0)
    return VerificationReport("hmm", len(rows) + 2, float(margin), all(checks.values()), rows,
                              {"checks": checks, "closed_form_error": closed, "psi_error": psi_err,
                               "psi_error_vs_slow_limit": slow_err, "hmm_spread": hmm_spread,
                               "reference_growth": ref_growth,
                               "settings": {"tau": tau, "macro_dt": macro_dt, "micro_dt": micro_dt, "K": K}})
