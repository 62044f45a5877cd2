"""The DSM flow ``u' = -(A(u) + a(t) I)^{-1} (F(u) + a(t) u - f)``.

Two equivalent formulations are integrated:

* ``direct``: the flow above in ``u``;
* ``psi``: ``psi = F(u) + a u - f`` obeys ``psi' = -psi + a'(t) u`` where
  ``u`` is recovered from ``psi`` by a Newton solve of ``F(u) + a u = f + psi``.

Diagnostics (distance to ``w_{a(t)}``, error to a known solution, the envelope
``r(t)^k / lambda``) are evaluated only at sample times.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _accel
from . import _kernels
from .integrators import REACHED, STATUS_NAMES, STOPPED, DormandPrince45
from .operator_model import apply_derivative, apply_operator, as_state
from .regularization_path import default_t_max, schedule_r
from .resolvent import (
    RegularizedSolveError,
    ShiftedSolveError,
    shifted_direction,
    solve_regularized,
    solve_shifted_data,
)

log = logging.getLogger(__name__)

CSV_HEADER = ("t", "r", "discrepancy", "g", "err_y", "bound")


@dataclass(frozen=True)
class DsmConfig:
    rtol: float = 1e-8
    atol: float = 1e-10
    initial_step: float = 1e-3
    max_step: float = math.inf
    t_max: float | None = None
    tau: float | None = None
    samples: int = 256
    mode: str = "direct"
    backend: str = "auto"
    resolvent_step_cap: bool = False
    max_steps: int = 50_000_000
    compute_w: bool = True
    compute_err_y: bool = True

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("tolerances must be positive")
        if self.t_max is not None and not self.t_max > 0:
            raise ValueError("t_max must be positive")
        if self.tau is not None and self.tau < 0:
            raise ValueError("tau must be nonnegative")
        if self.samples < 2:
            raise ValueError("need at least 2 samples")
        if self.mode not in ("direct", "psi"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.backend not in ("auto", "numba", "numpy"):
            raise ValueError(f"unknown backend {self.backend!r}")


@dataclass
class TrajectoryRecord:
    t: np.ndarray
    r: np.ndarray
    u: np.ndarray
    discrepancy: np.ndarray
    shifted_residual: np.ndarray
    g: np.ndarray
    err_y: np.ndarray
    bound: np.ndarray
    stop_reason: str
    t_stop: float
    steps: int
    rejected_steps: int
    mode: str
    backend: str
    k: float
    lam: float
    tau: float
    t_max: float
    extra: dict = field(default_factory=dict)

    @property
    def u_final(self):
        return self.u[-1]

    def csv_text(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in zip(self.t, self.r, self.discrepancy, self.g, self.err_y, self.bound):
            writer.writerow(["" if not np.isfinite(v) else repr(float(v)) for v in row])
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.csv_text())

    def summary(self, params=None):
        bound = verify_theorem_bound(self, params) if params is not None else None
        return {
            "stop_reason": self.stop_reason,
            "t_stop": self.t_stop,
            "final_r": float(self.r[-1]),
            "final_discrepancy": float(self.discrepancy[-1]),
            "final_err_y": _finite_or_none(self.err_y[-1]),
            "final_g": _finite_or_none(self.g[-1]),
            "bound_violations": None if bound is None else bound.violations,
            "steps": self.steps,
            "rejected_steps": self.rejected_steps,
            "samples": int(self.t.size),
            "mode": self.mode,
            "backend": self.backend,
            "k_theory": self.k,
            "lambda": self.lam,
            "tau": self.tau,
            "t_max": self.t_max,
        }


def _finite_or_none(v):
    return float(v) if np.isfinite(v) else None


def write_summary(path, summary):
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


def rhs(problem, path, t, u):
    """Right-hand side of the direct flow at time ``t``."""
    a = path.a(t)
    if abs(a) == 0:
        raise ValueError("r(t) must be positive")
    G = apply_operator(problem, u) + a * u - problem.f
    try:
        return -shifted_direction(apply_derivative(problem, u), a, G)
    except ShiftedSolveError as exc:
        raise ShiftedSolveError(f"rhs shifted solve failed at t={t}, |a|={abs(a):.3e}", shift=a) from exc


def sample_times(t_max, count):
    """``t = 0`` followed by ``count - 1`` log-spaced times ending at ``t_max``."""
    tail = np.geomspace(t_max * 1e-6, t_max, count - 1)
    tail[-1] = t_max
    return np.concatenate([[0.0], tail])


def default_tau(params, t_max, u0):
    return 10.0 * schedule_r(params, t_max) * (1.0 + float(np.linalg.norm(u0)))


def _choose_backend(problem, path, config):
    kernel_ok = (
        config.mode == "direct"
        and problem.kernel is not None
        and path.linear_argument
    )
    if config.backend == "numpy":
        return "numpy"
    if config.backend == "numba":
        if not kernel_ok:
            raise ValueError("numba backend needs a structured gallery problem, direct mode and a linear argument profile")
        if not _accel.USE_NUMBA:
            raise RuntimeError("numba backend requested but disabled (DSM_NUMBA=0 or numba missing)")
        return "numba"
    return "numba" if (kernel_ok and _accel.USE_NUMBA) else "numpy"


def _run_numba(problem, path, u0, config, times, tau):
    kf = problem.kernel
    sched = path.schedule
    M = np.ascontiguousarray(kf.M, dtype=np.complex128)
    f = np.ascontiguousarray(problem.f, dtype=np.complex128)
    cap_c1 = problem.resolvent.c1 if config.resolvent_step_cap else 0.0
    t, u = 0.0, np.ascontiguousarray(u0, dtype=np.complex128)
    h, err_prev, n_acc, n_rej = config.initial_step, 1e-4, 0, 0
    out_t, out_u = [0.0], [u.copy()]
    status = REACHED
    for t_next in times[1:]:
        t, u, h, err_prev, n_acc, n_rej, status = _kernels.dsm_advance(
            kf.kind, M, float(kf.kappa), f, sched.r0, sched.m, sched.c4,
            float(path.theta0), float(path.spiral_rate),
            t, u, float(t_next), h, err_prev, config.rtol, config.atol, config.max_step,
            float(cap_c1), float(problem.resolvent.b), tau, config.max_steps, n_acc, n_rej,
        )
        if t > out_t[-1]:
            out_t.append(t)
            out_u.append(u.copy())
        if status != REACHED:
            break
    return out_t, out_u, status, n_acc, n_rej


def _run_numpy(problem, path, u0, config, times, tau):
    fun = lambda t, u: rhs(problem, path, t, u)  # noqa: E731
    cap = None
    if config.resolvent_step_cap:
        c1, b = problem.resolvent.c1, problem.resolvent.b
        cap = lambda t: schedule_r(path.schedule, t) ** b / (2.0 * c1)  # noqa: E731
    terminate = None
    if tau > 0:
        terminate = lambda t, u: np.linalg.norm(apply_operator(problem, u) - problem.f) <= tau  # noqa: E731
    stepper = DormandPrince45(fun, rtol=config.rtol, atol=config.atol, h=config.initial_step,
                              max_step=config.max_step, step_cap=cap, max_steps=config.max_steps)
    return _segments(stepper, as_state(u0), times, terminate, lambda y: y)


def _segments(stepper, y0, times, terminate, to_u):
    t, y = 0.0, y0.copy()
    out_t, out_u = [0.0], [to_u(y)]
    status = REACHED
    for t_next in times[1:]:
        t, y, status = stepper.advance(t, y, float(t_next), terminate)
        if t > out_t[-1]:
            out_t.append(t)
            out_u.append(to_u(y))
        if status != REACHED:
            break
    return out_t, out_u, status, stepper.accepted, stepper.rejected


def _run_psi(problem, path, u0, config, times, tau):
    inner_tol = config.atol / 10.0
    cache = {"u": as_state(u0).copy(), "t": 0.0}

    def recover(t, psi):
        res = solve_shifted_data(problem, path.a(t), problem.f + psi, cache["u"], tol=inner_tol)
        cache["u"], cache["t"] = res.w, t
        return res.w

    def fun(t, psi):
        try:
            u = recover(t, psi)
        except RegularizedSolveError as exc:
            raise RuntimeError(str(exc)) from exc
        return -psi + path.adot(t) * u

    terminate = None
    if tau > 0:
        terminate = lambda t, psi: np.linalg.norm(apply_operator(problem, cache["u"]) - problem.f) <= tau  # noqa: E731
    psi0 = apply_operator(problem, u0) + path.a(0.0) * u0 - problem.f
    stepper = DormandPrince45(fun, rtol=config.rtol, atol=config.atol, h=config.initial_step,
                              max_step=config.max_step, max_steps=config.max_steps)
    t_out, psi_out, status, n_acc, n_rej = _segments(stepper, psi0, times, terminate, lambda y: y.copy())
    u_out = [as_state(u0).copy()]
    cache["u"] = as_state(u0).copy()
    for t, psi in zip(t_out[1:], psi_out[1:]):
        u_out.append(recover(t, psi).copy())
    return t_out, u_out, status, n_acc, n_rej


def integrate(problem, path, u0, config=None):
    """Integrate the flow from ``u0`` and return a :class:`TrajectoryRecord`.

    Stops at ``t_max``, when ``||F(u) - f|| <= tau``, or on integrator failure
    (step underflow, singular shifted matrix, step budget).
    """
    config = config or DsmConfig()
    u0 = as_state(u0, problem.dimension)
    params = path.schedule
    t_max = config.t_max if config.t_max is not None else default_t_max(params)
    tau = config.tau if config.tau is not None else default_tau(params, t_max, u0)
    times = sample_times(t_max, config.samples)

    if config.mode == "psi":
        if config.backend == "numba":
            raise ValueError("the psi form has no compiled kernel; use backend 'numpy' or 'auto'")
        backend = "numpy"
        t_out, u_out, status, n_acc, n_rej = _run_psi(problem, path, u0, config, times, tau)
    else:
        backend = _choose_backend(problem, path, config)
        runner = _run_numba if backend == "numba" else _run_numpy
        t_out, u_out, status, n_acc, n_rej = runner(problem, path, u0, config, times, tau)

    if status == REACHED:
        reason = "t_max"
    elif status == STOPPED:
        reason = "discrepancy"
    else:
        reason = STATUS_NAMES[status]
        log.warning("integration stopped early at t=%g: %s", t_out[-1], reason)

    rec = _diagnostics(problem, path, np.asarray(t_out), np.asarray(u_out), config)
    return TrajectoryRecord(
        t=np.asarray(t_out), u=np.asarray(u_out), stop_reason=reason, t_stop=float(t_out[-1]),
        steps=int(n_acc), rejected_steps=int(n_rej), mode=config.mode, backend=backend,
        k=params.k, lam=params.lam, tau=float(tau), t_max=float(t_max), **rec,
    )


def integrate_psi(problem, path, u0, config=None):
    """Integrate the psi-form; same stopping rules, trajectory reported in u-space."""
    config = config or DsmConfig()
    if config.mode != "psi":
        config = DsmConfig(**{**config.__dict__, "mode": "psi"})
    return integrate(problem, path, u0, config)


def _diagnostics(problem, path, t, U, config):
    params = path.schedule
    r = np.asarray(schedule_r(params, t), dtype=float).reshape(-1)
    a = np.asarray(path.a(t)).reshape(-1)
    disc = np.empty(t.size)
    shifted = np.empty(t.size)
    g = np.full(t.size, np.nan)
    err = np.full(t.size, np.nan)
    for i, u in enumerate(U):
        Fu = apply_operator(problem, u)
        disc[i] = np.linalg.norm(Fu - problem.f)
        shifted[i] = np.linalg.norm(Fu + a[i] * u - problem.f)
    if config.compute_w:
        w = U[0]
        for i in range(t.size):
            try:
                w = solve_regularized(problem, a[i], w_init=w, tol=1e-12).w
            except RegularizedSolveError as exc:
                log.warning("w diagnostic failed at t=%g: %s", t[i], exc)
                continue
            g[i] = np.linalg.norm(U[i] - w)
    if config.compute_err_y and problem.known_solution is not None:
        err = np.linalg.norm(U - problem.known_solution[None, :], axis=1)
    bound = r ** params.k / params.lam
    return {"r": r, "discrepancy": disc, "shifted_residual": shifted, "g": g, "err_y": err, "bound": bound}


def error_budget(problem, path, record):
    """Two-term bound on ``||u(t) - y||`` at the stop time.

    ``||u - y|| <= ||u - w_a|| + ||w_a - y|| < r^k / lambda + ||w_a - y||``.
    Returns None without a known solution.
    """
    if problem.known_solution is None:
        return None
    a = path.a(record.t_stop)
    w = solve_regularized(problem, a, w_init=record.u_final, tol=1e-12).w
    params = path.schedule
    env = float(schedule_r(params, record.t_stop)) ** params.k / params.lam
    return env + float(np.linalg.norm(w - problem.known_solution))


@dataclass(frozen=True)
class BoundReport:
    holds_everywhere: bool
    first_violation: dict | None
    violations: int
    checked: int


def verify_theorem_bound(record, params):
    """Check ``g(t_i) < r(t_i)^k / lambda`` at every sample with a computed ``g``."""
    mask = np.isfinite(record.g)
    if not np.any(mask):
        raise ValueError("trajectory has no g(t) samples; integrate with compute_w=True")
    env = schedule_r(params, record.t) ** params.k / params.lam
    bad = np.flatnonzero(mask & ~(record.g < env))
    first = None
    if bad.size:
        i = int(bad[0])
        first = {"index": i, "t": float(record.t[i]), "g": float(record.g[i]),
                 "bound": float(env[i]), "slack": float(env[i] - record.g[i])}
    return BoundReport(bad.size == 0, first, int(bad.size), int(mask.sum()))
