"""Fast-slow ODE solvers: a heterogeneous multiscale (HMM) scheme and a fine-step reference.

The prototype system is

    phi' = (f(psi) - phi) / tau        (fast, relaxes toward f(psi))
    psi' = g(phi, psi)                 (slow)

HMM advances psi with a macro step and, before each macro step, relaxes phi
with K micro steps of size micro_dt measured in the fast time t / tau. Its
cost therefore does not depend on tau, while an explicit solver of the full
system needs steps of order tau.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.linalg import expm


class SolverDivergence(RuntimeError):
    """State became non-finite or blew up."""


class BudgetExceeded(RuntimeError):
    """Target accuracy not reached within the allowed number of steps."""


@dataclass(frozen=True)
class FastSlowSystem:
    f: Callable
    g: Callable
    tau: float
    name: str = "custom"

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")

    def with_tau(self, tau: float) -> "FastSlowSystem":
        return replace(self, tau=tau)

    def lipschitz_estimate(self, lo: float, hi: float, dim: int, n: int = 200, seed=0) -> dict:
        """Largest sampled difference quotients of f and g over the box [lo, hi]^dim."""
        rng = np.random.default_rng(seed)
        a = rng.uniform(lo, hi, size=(n, 2, dim))
        b = rng.uniform(lo, hi, size=(n, 2, dim))
        lf = lg = 0.0
        for (pa, sa), (pb, sb) in zip(a, b):
            lf = max(lf, np.linalg.norm(self.f(sa) - self.f(sb)) / np.linalg.norm(sa - sb))
            dist = np.sqrt(np.sum((pa - pb) ** 2) + np.sum((sa - sb) ** 2))
            lg = max(lg, np.linalg.norm(self.g(pa, sa) - self.g(pb, sb)) / dist)
        return {"f": float(lf), "g": float(lg)}


def linear_test_system(tau: float) -> FastSlowSystem:
    """f(psi) = psi, g = -phi; on the slow manifold psi(t) = psi0 * exp(-t)."""
    return FastSlowSystem(lambda psi: psi, lambda phi, psi: -phi, tau, "linear")


def linear_exact(tau: float, phi0: float, psi0: float, times) -> tuple[np.ndarray, np.ndarray]:
    """Exact (phi, psi) of the scalar linear test system via the matrix exponential."""
    gen = np.array([[-1.0 / tau, 1.0 / tau], [-1.0, 0.0]])
    x0 = np.array([phi0, psi0], dtype=np.float64)
    states = np.array([expm(gen * t) @ x0 for t in np.asarray(times, dtype=np.float64)])
    return states[:, 0], states[:, 1]


@dataclass
class FastSlowTrajectory:
    times: np.ndarray
    phi: np.ndarray  # [len(times), m]
    psi: np.ndarray
    macro_steps: int = 0
    micro_steps_total: int = 0
    solver: str = ""
    settings: dict = field(default_factory=dict)

    def __post_init__(self):
        if not len(self.times) == len(self.phi) == len(self.psi):
            raise ValueError("times, phi and psi must have equal length")

    @property
    def evaluations(self) -> int:
        """Total solver steps, the cost measure used for comparisons."""
        return self.macro_steps + self.micro_steps_total

    def to_csv(self, path) -> tuple[Path, Path]:
        """Write ``path`` (time, phi_*, psi_*) and a ``.json`` sidecar with settings and counts."""
        path = Path(path)
        m = self.phi.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time"] + [f"phi_{i}" for i in range(m)] + [f"psi_{i}" for i in range(m)])
            for t, p, s in zip(self.times, self.phi, self.psi):
                w.writerow([repr(float(t))] + [repr(float(x)) for x in p] + [repr(float(x)) for x in s])
        sidecar = path.with_suffix(".json")
        sidecar.write_text(json.dumps({
            "solver": self.solver, "settings": self.settings, "macro_steps": self.macro_steps,
            "micro_steps_total": self.micro_steps_total, "evaluations": self.evaluations,
            "points": len(self.times), "dim": m,
        }, indent=2))
        return path, sidecar


def _vec(x) -> np.ndarray:
    return np.atleast_1d(np.asarray(x, dtype=np.float64)).copy()


def micro_relax(phi, target, micro_dt: float, K: int) -> np.ndarray:
    """K steps of phi <- (1 - micro_dt) * phi + micro_dt * target."""
    for _ in range(K):
        phi = (1.0 - micro_dt) * phi + micro_dt * target
    return phi


def micro_closed_form(phi, target, micro_dt: float, K: int) -> np.ndarray:
    keep = (1.0 - micro_dt) ** K
    return keep * phi + (1.0 - keep) * target


def hmm_solve(system: FastSlowSystem, psi0, phi0, macro_dt: float, micro_dt: float,
              K: int, N: int) -> FastSlowTrajectory:
    """N macro steps; each relaxes phi toward f(psi) with K micro steps, then updates psi."""
    if not (0 < macro_dt < 1 and 0 < micro_dt < 1):
        raise ValueError("macro_dt and micro_dt must lie in (0, 1)")
    if K < 1 or N < 1:
        raise ValueError("K and N must be at least 1")
    phi, psi = _vec(phi0), _vec(psi0)
    phis, psis = [phi.copy()], [psi.copy()]
    for n in range(N):
        phi = micro_relax(phi, np.asarray(system.f(psi), dtype=np.float64), micro_dt, K)
        psi = psi + macro_dt * np.asarray(system.g(phi, psi), dtype=np.float64)
        if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(psi))):
            raise SolverDivergence(f"non-finite state at macro step {n + 1}")
        phis.append(phi.copy())
        psis.append(psi.copy())
    return FastSlowTrajectory(np.arange(N + 1) * macro_dt, np.array(phis), np.array(psis),
                              macro_steps=N, micro_steps_total=N * K, solver="hmm",
                              settings={"macro_dt": macro_dt, "micro_dt": micro_dt, "K": K,
                                        "N": N, "tau": system.tau})


BLOWUP = 1e8


def reference_stiff_solve(system: FastSlowSystem, psi0, phi0, t_end: float, dt_fine: float,
                          method: str = "euler", record_every: int | None = None) -> FastSlowTrajectory:
    """Explicit fixed-step solve of the full system; stable only for dt_fine of order tau.

    Records roughly 1000 points unless ``record_every`` is given.
    """
    if not (t_end > 0 and dt_fine > 0):
        raise ValueError("t_end and dt_fine must be positive")
    if method not in ("euler", "rk4"):
        raise ValueError(f"unknown method {method!r}")
    n_steps = int(np.ceil(t_end / dt_fine - 1e-9))
    h = t_end / n_steps
    every = record_every or max(1, n_steps // 1000)
    tau, f, g = system.tau, system.f, system.g

    def rhs(phi, psi):
        return (np.asarray(f(psi)) - phi) / tau, np.asarray(g(phi, psi), dtype=np.float64)

    phi, psi = _vec(phi0), _vec(psi0)
    scale = BLOWUP * (1.0 + max(np.max(np.abs(phi)), np.max(np.abs(psi))))
    times, phis, psis = [0.0], [phi.copy()], [psi.copy()]
    for n in range(1, n_steps + 1):
        if method == "euler":
            dphi, dpsi = rhs(phi, psi)
            phi, psi = phi + h * dphi, psi + h * dpsi
        else:
            a1, b1 = rhs(phi, psi)
            a2, b2 = rhs(phi + h / 2 * a1, psi + h / 2 * b1)
            a3, b3 = rhs(phi + h / 2 * a2, psi + h / 2 * b2)
            a4, b4 = rhs(phi + h * a3, psi + h * b3)
            phi = phi + h / 6 * (a1 + 2 * a2 + 2 * a3 + a4)
            psi = psi + h / 6 * (b1 + 2 * b2 + 2 * b3 + b4)
        if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(psi))) or \
                max(np.max(np.abs(phi)), np.max(np.abs(psi))) > scale:
            raise SolverDivergence(
                f"explicit {method} blew up at step {n} with dt_fine={dt_fine:g}, tau={tau:g}; "
                f"use dt_fine <= tau / 2")
        if n % every == 0 or n == n_steps:
            times.append(n * h)
            phis.append(phi.copy())
            psis.append(psi.copy())
    return FastSlowTrajectory(np.array(times), np.array(phis), np.array(psis),
                              macro_steps=n_steps, micro_steps_total=0, solver=f"reference-{method}",
                              settings={"dt_fine": h, "t_end": t_end, "method": method, "tau": tau})


def _psi_at(traj: FastSlowTrajectory, t: float) -> np.ndarray:
    i = int(np.argmin(np.abs(traj.times - t)))
    return traj.psi[i]


def cost_comparison(system: FastSlowSystem, tau_list, target_accuracy: float = 1e-2,
                    psi0=1.0, phi0=0.0, t_end: float = 1.0, K: int = 20,
                    macro_dts=(0.1, 0.05, 0.025, 0.0125, 0.00625, 0.003125),
                    max_evaluations: int = 10 ** 7) -> list[dict]:
    """Cheapest HMM and cheapest explicit Euler run meeting target_accuracy, per tau.

    Accuracy is psi(t_end) against an RK4 solve at dt = min(tau / 4, 1e-3).
    HMM tries macro steps from ``macro_dts`` in order with micro step
    min(0.5, macro_dt / (K * tau)), so K micro steps never cover more fast time
    than one macro step (for tau << 1 this is simply 0.5). Euler starts at the
    stability limit dt = tau / 2 and halves until accurate.
    """
    rows = []
    for tau in tau_list:
        if not 0 < tau <= 1:
            raise ValueError(f"tau must lie in (0, 1], got {tau}")
        sys_tau = system.with_tau(tau)
        truth = reference_stiff_solve(sys_tau, psi0, phi0, t_end, min(tau / 4, 1e-3), method="rk4").psi[-1]

        hmm = hmm_err = None
        for macro_dt in macro_dts:
            n_macro = int(round(t_end / macro_dt))
            if n_macro * (K + 1) > max_evaluations:
                break
            run = hmm_solve(sys_tau, psi0, phi0, macro_dt, min(0.5, macro_dt / (K * tau)), K, n_macro)
            err = float(np.max(np.abs(run.psi[-1] - truth)))
            if err <= target_accuracy:
                hmm, hmm_err = run, err
                break
        if hmm is None:
            raise BudgetExceeded(f"tau={tau:g}: HMM did not reach {target_accuracy:g} within budget")

        ref = ref_err = None
        dt = tau / 2
        while t_end / dt <= max_evaluations:
            run = reference_stiff_solve(sys_tau, psi0, phi0, t_end, dt)
            err = float(np.max(np.abs(run.psi[-1] - truth)))
            if err <= target_accuracy:
                ref, ref_err = run, err
                break
            dt /= 2
        if ref is None:
            raise BudgetExceeded(f"tau={tau:g}: explicit reference did not reach {target_accuracy:g} within budget")

        rows.append({"tau": tau, "hmm_macro_dt": hmm.settings["macro_dt"],
                     "hmm_micro_dt": hmm.settings["micro_dt"], "hmm_K": K,
                     "hmm_evaluations": hmm.evaluations, "hmm_error": hmm_err,
                     "reference_dt": ref.settings["dt_fine"], "reference_evaluations": ref.evaluations,
                     "reference_error": ref_err})
    return rows


def cost_table_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
