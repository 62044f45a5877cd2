"""Regularization schedule ``r(t)`` and the complex path ``a(t) = r(t) e^{i theta(t)}``.

Given the exponent ``kappa`` of the Hoelder modulus, the resolvent growth
exponent ``b`` and the bound constants ``c2, c3``, the schedule is

    p = 1 + kappa,   k = (b + 1) / (p - 1),   lambda = r0^k / (2 g0),
    c4 = c2 lambda,  m = k p - 2,
    r(t) = [r0^{-m} + m t / (4 c4)]^{-1/m},

which solves ``c4 |r'| / r^{kp-1} = 1/4`` with ``r(0) = r0``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .operator_model import as_state
from .resolvent import solve_regularized

log = logging.getLogger(__name__)

MAX_DOUBLINGS = 40
G0_FLOOR = 1e-12


class ScheduleError(ValueError):
    pass


class AdmissibilityError(RuntimeError):
    def __init__(self, msg, report=None, diagnostics=None):
        super().__init__(msg)
        self.report = report
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class ScheduleInputs:
    kappa: float
    b: float
    c2: float
    c3: float
    r0: float
    g0: float

    def __post_init__(self):
        for name in ("kappa", "b", "c2", "c3", "r0", "g0"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ScheduleError(f"{name} must be a positive finite number, got {v}")
        if self.kappa > 1:
            raise ScheduleError(f"kappa must be <= 1, got {self.kappa}")


@dataclass(frozen=True)
class ScheduleParams:
    kappa: float
    b: float
    c2: float
    c3: float
    r0: float
    g0: float
    p: float
    k: float
    lam: float
    c4: float
    m: float

    def r(self, t):
        return schedule_r(self, t)

    def rdot(self, t):
        return schedule_rdot(self, t)

    @property
    def rate(self):
        """``q = r0^m / (4 c4)``, so that ``r(t) = r0 (1 + m q t)^{-1/m}``."""
        return math.exp(self.m * math.log(self.r0) - math.log(4.0 * self.c4))

    def time_at(self, r):
        """Time at which the schedule reaches modulus ``r`` (``r <= r0``)."""
        return ((r / self.r0) ** (-self.m) - 1.0) / (self.m * self.rate)

    def inputs(self):
        return ScheduleInputs(self.kappa, self.b, self.c2, self.c3, self.r0, self.g0)

    def to_dict(self):
        return {"p": self.p, "k": self.k, "lambda": self.lam, "c4": self.c4, "m": self.m}


def derive_schedule(inputs, epsilon0=None):
    p = 1.0 + inputs.kappa
    k = (inputs.b + 1.0) / (p - 1.0)
    m = k * p - 2.0
    if not m > 0:
        raise ScheduleError(f"k p - 2 = {m:.6g} must be positive for the closed-form schedule")
    if epsilon0 is not None and inputs.r0 >= epsilon0:
        raise ScheduleError(f"r0 = {inputs.r0} must be below epsilon0 = {epsilon0}")
    try:
        lam = inputs.r0 ** k / (2.0 * inputs.g0)
    except OverflowError:
        lam = math.inf
    if not (math.isfinite(lam) and math.isfinite(inputs.c2 * lam) and lam > 0):
        raise ScheduleError(f"lambda = r0^k / (2 g0) is not representable (k = {k:.6g}, r0 = {inputs.r0})")
    return ScheduleParams(
        kappa=inputs.kappa, b=inputs.b, c2=inputs.c2, c3=inputs.c3,
        r0=inputs.r0, g0=inputs.g0, p=p, k=k, lam=lam, c4=inputs.c2 * lam, m=m,
    )


def schedule_r(params, t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be nonnegative")
    out = params.r0 * (1.0 + params.m * params.rate * t) ** (-1.0 / params.m)
    return float(out) if out.ndim == 0 else out


def schedule_rdot(params, t):
    r = np.asarray(schedule_r(params, t))
    # r^{kp-1} / (4 c4) = q r0 (r / r0)^{kp-1}
    out = -params.rate * params.r0 * (r / params.r0) ** (params.k * params.p - 1.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class PathSpec:
    """Path ``a(t) = r(t) e^{i theta(t)}``.

    The argument is ``theta0 + spiral_rate * t`` unless a custom ``theta``
    callable (with derivative ``theta_dot``) is supplied.
    """

    schedule: ScheduleParams
    theta0: float = 0.0
    spiral_rate: float = 0.0
    epsilon0: float = 1.0
    theta: object = None
    theta_dot: object = None

    def __post_init__(self):
        if not self.schedule.r0 < self.epsilon0:
            raise ScheduleError(f"r0 = {self.schedule.r0} must be below epsilon0 = {self.epsilon0}")
        if (self.theta is None) != (self.theta_dot is None):
            raise ValueError("theta and theta_dot must be given together")

    @property
    def linear_argument(self):
        return self.theta is None

    def argument(self, t):
        if self.theta is not None:
            return self.theta(t)
        return self.theta0 + self.spiral_rate * t

    def argument_rate(self, t):
        if self.theta_dot is not None:
            return self.theta_dot(t)
        return self.spiral_rate + 0.0 * np.asarray(t, dtype=float)

    def a(self, t):
        return path_a(self, t)

    def adot(self, t):
        return path_adot(self, t)


def path_a(spec, t):
    return schedule_r(spec.schedule, t) * np.exp(1j * spec.argument(t))


def path_adot(spec, t):
    r = schedule_r(spec.schedule, t)
    rd = schedule_rdot(spec.schedule, t)
    return (rd + 1j * spec.argument_rate(t) * r) * np.exp(1j * spec.argument(t))


def default_t_max(params, fraction=1e-4):
    """Time at which ``r`` has fallen to ``fraction * r0``."""
    return params.time_at(fraction * params.r0)


@dataclass
class AdmissibilityReport:
    halving_ok: bool
    g0_ok: bool
    r0_ok: bool | None
    certificate_ok: bool
    details: dict = field(default_factory=dict)

    @property
    def ok(self):
        return self.halving_ok and self.g0_ok and self.r0_ok is not False and self.certificate_ok

    def failures(self):
        names = []
        for name in ("halving_ok", "g0_ok", "r0_ok", "certificate_ok"):
            if getattr(self, name) is False:
                names.append(name)
        return names

    def to_dict(self):
        return asdict(self)


def certificate_terms(params, t=0.0):
    """The three terms whose sum must not exceed 1 for the majorant inequality.

    With gamma = 1, alpha = c3 r^-b, beta = c2 |r'| r^-b and mu = lambda r^-k,
    multiplying the majorant condition by mu gives

        c3 lambda^{1-p} r  +  c2 lambda |r'| r^{-(k+b)}  +  k |r'| / r  <=  1.

    The middle term is exactly 1/4 along the schedule.
    """
    r = schedule_r(params, t)
    rd = abs(schedule_rdot(params, t))
    return (
        params.c3 * params.lam ** (1.0 - params.p) * r,
        params.c2 * params.lam * rd * r ** (-(params.k + params.b)),
        params.k * rd / r,
    )


def check_admissibility(params):
    k, p, b, c2, c3, r0, g0 = params.k, params.p, params.b, params.c2, params.c3, params.r0, params.g0
    halving = k * abs(schedule_rdot(params, 0.0)) / r0
    g0_bound = (c2 / k) * r0 ** (b - 1.0)
    details = {
        "halving_value": halving,
        "halving_slack": 0.5 - halving,
        "g0_bound": g0_bound,
        "g0_slack": g0_bound - g0,
        "notes": [],
    }
    if b <= 1.0:
        thr = (4.0 * c3 * (2.0 * c2 / k) ** (p - 1.0)) ** (1.0 / (p * (1.0 - b) + 2.0 * b))
        details["r0_threshold"] = thr
        details["r0_slack"] = r0 - thr
        r0_ok = bool(r0 >= thr)
    else:
        details["r0_threshold"] = None
        details["r0_slack"] = None
        details["notes"].append("b > 1: the r0 threshold applies only for b in (0, 1]; skipped")
        r0_ok = None
    terms = certificate_terms(params, 0.0)
    details["certificate_terms"] = list(terms)
    details["certificate_slack"] = 1.0 - sum(terms)
    return AdmissibilityReport(
        halving_ok=bool(halving <= 0.5 * (1 + 1e-12)),
        g0_ok=bool(g0 <= g0_bound * (1 + 1e-12)),
        r0_ok=r0_ok,
        certificate_ok=bool(sum(terms) <= 1.0 + 1e-12),
        details=details,
    )


def plan_run(problem, u0, r0_hint=None, *, c2=None, c3=None, theta0=None, max_doublings=MAX_DOUBLINGS):
    """Derive an admissible schedule and path for ``problem`` started at ``u0``.

    ``g0 = ||u0 - w_{a(0)}||`` and ``c2 = max(1, 1.5 c1 ||w_{a(0)}||)`` are
    measured at the starting shift. While the conditions fail (and ``b <= 1``)
    ``r0`` is doubled, capped just below ``epsilon0``.

    Returns ``(PathSpec, diagnostics)``; raises :class:`AdmissibilityError`.
    """
    res = problem.resolvent
    hold = problem.holder
    eps0 = res.epsilon0
    theta0 = res.theta0 if theta0 is None else theta0
    u0 = as_state(u0, problem.dimension)
    r0 = min(1.0, 0.5 * eps0) if r0_hint is None else float(r0_hint)
    if not 0 < r0 < eps0:
        raise ScheduleError(f"r0 hint {r0} must lie in (0, epsilon0 = {eps0})")
    c3_val = hold.c0 * res.c1 if c3 is None else c3
    cap = eps0 * (1.0 - 1e-9)
    diag = {"r0_initial": r0, "adjustments": [], "warnings": []}
    if res.b > 1.0:
        diag["warnings"].append("b > 1: no automatic r0 search; only the halving and g0 conditions are enforced")
        log.warning("b = %g > 1: planner will not search r0", res.b)

    w = u0
    for attempt in range(max_doublings + 1):
        a0 = r0 * np.exp(1j * theta0)
        w = solve_regularized(problem, a0, w_init=w).w
        g0 = float(np.linalg.norm(u0 - w))
        floored = g0 < G0_FLOOR
        if floored:
            g0 = G0_FLOOR
        c2_val = max(1.0, 1.5 * res.c1 * float(np.linalg.norm(w))) if c2 is None else c2
        inputs = ScheduleInputs(hold.kappa, res.b, c2_val, c3_val, r0, g0)
        params = derive_schedule(inputs, eps0)
        report = check_admissibility(params)
        if attempt == 0:
            diag["g0_initial"] = g0
        if report.ok:
            break
        if res.b > 1.0:
            raise AdmissibilityError(
                f"conditions {report.failures()} fail at r0={r0} and b > 1 disables the r0 search",
                report, diag)
        if r0 >= cap or attempt == max_doublings:
            raise AdmissibilityError(
                f"admissibility unattainable below epsilon0={eps0}: {report.failures()} fail at r0={r0}",
                report, diag)
        r_new = min(2.0 * r0, cap)
        diag["adjustments"].append({"r0_from": r0, "r0_to": r_new, "failed": report.failures()})
        log.info("r0 %g -> %g (failed %s)", r0, r_new, report.failures())
        r0 = r_new

    diag.update({
        "r0_final": r0,
        "doublings": len(diag["adjustments"]),
        "g0": g0,
        "g0_floored": floored,
        "c2": c2_val,
        "c3": c3_val,
        "w0_norm": float(np.linalg.norm(w)),
        "t_max_default": default_t_max(params),
    })
    diag["admissibility"] = report.to_dict()
    diag["w0"] = w
    return PathSpec(params, theta0=theta0, epsilon0=eps0), diag


def schedule_document(path, diagnostics=None):
    """JSON-ready description of a planned schedule."""
    params = path.schedule
    report = check_admissibility(params)
    doc = {
        "schema_version": 1,
        "inputs": asdict(params.inputs()),
        "derived": params.to_dict(),
        "path": {"theta0": path.theta0, "spiral_rate": path.spiral_rate, "epsilon0": path.epsilon0},
        "admissibility": {
            "halving_ok": report.halving_ok,
            "g0_ok": report.g0_ok,
            "r0_ok": report.r0_ok,
            "certificate_ok": report.certificate_ok,
            "slacks": {
                "halving": report.details["halving_slack"],
                "g0": report.details["g0_slack"],
                "r0": report.details["r0_slack"],
                "certificate": report.details["certificate_slack"],
            },
        },
        "adjustments": [] if diagnostics is None else list(diagnostics.get("adjustments", [])),
    }
    return doc


def schedule_from_document(doc):
    inp = doc["inputs"]
    params = derive_schedule(ScheduleInputs(**inp))
    p = doc.get("path", {})
    return PathSpec(params, theta0=p.get("theta0", 0.0), spiral_rate=p.get("spiral_rate", 0.0),
                    epsilon0=p.get("epsilon0", math.inf))
