"""Numerical checks of the majorant lemma for ``g' <= -gamma g + alpha g^p + beta``.

If a positive ``mu`` satisfies

    alpha mu^{-p} + beta <= mu^{-1} (gamma - mu'/mu)   and   mu(0) g(0) < 1,

then ``g(t) <= 1/mu(t)`` for all ``t >= 0``. :func:`verify_conditions` checks
the hypotheses on a grid; :func:`integrate_comparison` integrates the
equality ODE, which dominates every ``g`` satisfying the inequality.
"""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass

import numpy as np

from . import _kernels
from .integrators import REACHED, DormandPrince45
from .regularization_path import default_t_max, schedule_r, schedule_rdot

BLOWUP = 1e12
GRID_POINTS = 2048
# comparison-ODE horizon for schedule specs; the grid check still spans t_max
SCHEDULE_T_END = 1e4


@dataclass(frozen=True)
class MajorantSpec:
    """Coefficient functions must accept and return numpy arrays."""

    gamma: object
    alpha: object
    beta: object
    p: float
    mu: object
    mu_dot: object
    g0: float

    def __post_init__(self):
        if not self.p > 1:
            raise ValueError(f"p must exceed 1, got {self.p}")
        if self.g0 < 0:
            raise ValueError("g0 must be nonnegative")


def _eval(fn, t):
    return np.broadcast_to(np.asarray(fn(t), dtype=float), t.shape).astype(float)


def default_grid(t_max, points=GRID_POINTS):
    """``t = 0`` plus ``points`` log-spaced points up to ``t_max``."""
    return np.concatenate([[0.0], np.geomspace(t_max * 1e-8, t_max, points)])


@dataclass(frozen=True)
class ConditionReport:
    cond9_ok: bool
    cond10_ok: bool
    worst_slack: float
    worst_t: float
    mu0_g0: float

    def to_dict(self):
        return asdict(self)


def verify_conditions(spec, t_grid):
    """Grid check of the differential condition and the start condition.

    Slack is RHS - LHS of the differential condition; a relative rounding
    allowance of 1e-12 is granted so that exact equality passes.
    """
    t = np.asarray(t_grid, dtype=float)
    if t.size == 0 or t[0] != 0.0 or np.any(np.diff(t) <= 0):
        raise ValueError("grid must be nonempty, strictly increasing and start at 0")
    mu = _eval(spec.mu, t)
    mud = _eval(spec.mu_dot, t)
    gam, alp, bet = _eval(spec.gamma, t), _eval(spec.alpha, t), _eval(spec.beta, t)
    vals = (mu, mud, gam, alp, bet)
    if not all(np.all(np.isfinite(v)) for v in vals):
        raise ValueError("non-finite coefficient values on the grid")
    if np.any(mu <= 0):
        raise ValueError("mu must be positive on the grid")
    lhs = alp * mu ** (-spec.p) + bet
    rhs = (gam - mud / mu) / mu
    slack = rhs - lhs
    allow = 1e-12 * np.maximum(np.abs(lhs), np.abs(rhs))
    i = int(np.argmin(slack))
    mu0g0 = float(mu[0] * spec.g0)
    return ConditionReport(
        cond9_ok=bool(np.all(slack >= -allow)),
        cond10_ok=mu0g0 < 1.0,
        worst_slack=float(slack[i]),
        worst_t=float(t[i]),
        mu0_g0=mu0g0,
    )


@dataclass(frozen=True)
class ComparisonResult:
    t: np.ndarray
    g: np.ndarray
    bound_ok: bool
    max_g_mu: float
    blowup_time: float | None

    def to_dict(self):
        return {"bound_ok": self.bound_ok, "max_g_mu": self.max_g_mu, "blowup_time": self.blowup_time}


def _rhs_scalar(spec, t, g):
    tt = np.array([t])
    return float(-_eval(spec.gamma, tt)[0] * g + _eval(spec.alpha, tt)[0] * max(g, 0.0) ** spec.p
                 + _eval(spec.beta, tt)[0])


def _refine_blowup(spec, t0, g0, t_end):
    # fixed-step RK4 lags a finite-time singularity, so restart from a well
    # resolved point with an error-controlled stepper and stop at the threshold
    def fun(t, y):
        tt = np.array([t])
        g = y[0]
        with np.errstate(over="raise", invalid="raise"):
            return np.array([-_eval(spec.gamma, tt)[0] * g
                             + _eval(spec.alpha, tt)[0] * max(g, 0.0) ** spec.p
                             + _eval(spec.beta, tt)[0]])

    stepper = DormandPrince45(fun, rtol=1e-12, atol=1e-12, h=1e-6)
    t, y, status = stepper.advance(t0, np.array([g0]), t_end,
                                   terminate=lambda t, y: abs(y[0]) > BLOWUP)
    return None if status == REACHED else float(t)


def integrate_comparison(spec, t_end, steps=100_000, rtol=1e-9):
    """Fixed-step RK4 for ``g' = -gamma g + alpha g^p + beta``, ``g(0) = g0``.

    ``bound_ok`` means ``g mu <= 1 + rtol`` at every step and no blow-up.
    On blow-up (|g| > 1e12) the blow-up time is located with an adaptive
    stepper restarted from the last well-resolved grid point.
    """
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    if steps < 1000:
        raise ValueError("steps must be >= 1000")
    h = t_end / steps
    half = np.linspace(0.0, t_end, 2 * steps + 1)
    gam, alp, bet = (np.ascontiguousarray(_eval(fn, half)) for fn in (spec.gamma, spec.alpha, spec.beta))
    # RK4 is only stable for h * gamma below about 2.78
    if h * float(np.max(np.abs(gam))) > 2.5:
        raise ValueError(f"step {h:.3g} too large for gamma up to {np.max(np.abs(gam)):.3g}; raise steps")
    g, last = _kernels.rk4_fixed(float(spec.g0), float(spec.p), h, gam, alp, bet, BLOWUP)
    t = half[::2][: last + 1]
    g = g[: last + 1]
    blowup = None
    if last < steps:
        # back up to where h * alpha * g^(p-1) is small
        alp_t = alp[::2][: last + 1]
        res = h * np.abs(alp_t) * np.abs(g) ** (spec.p - 1) + h * np.abs(gam[::2][: last + 1])
        ok = np.nonzero(res <= 1e-2)[0]
        i0 = int(ok[-1]) if ok.size else 0
        blowup = _refine_blowup(spec, float(t[i0]), float(g[i0]), t_end)
        t, g = t[: i0 + 1], g[: i0 + 1]
    gm = g * _eval(spec.mu, t)
    max_gm = float(np.max(gm))
    return ComparisonResult(t, g, blowup is None and max_gm <= 1.0 + rtol, max_gm, blowup)


def build_schedule_certificate(params, literal_alpha=False):
    """Majorant data implied by a schedule.

    gamma = 1, alpha = c3 r^-b, beta = c2 |r'| r^-b, mu = lambda r^-k with
    mu'/mu = -k r'/r. ``literal_alpha=True`` uses c2 in place of c3 for alpha.
    """
    ca = params.c2 if literal_alpha else params.c3
    b, k, lam = params.b, params.k, params.lam

    def r(t):
        return np.asarray(schedule_r(params, t))

    def rd(t):
        return np.asarray(schedule_rdot(params, t))

    return MajorantSpec(
        gamma=lambda t: np.ones_like(np.asarray(t, dtype=float)),
        alpha=lambda t: ca * r(t) ** (-b),
        beta=lambda t: params.c2 * np.abs(rd(t)) * r(t) ** (-b),
        p=params.p,
        mu=lambda t: lam * r(t) ** (-k),
        mu_dot=lambda t: -k * rd(t) / r(t) * lam * r(t) ** (-k),
        g0=params.g0,
    )


def constant_spec(gamma, alpha, beta, p, mu, g0):
    """Constant coefficients and constant majorant."""
    const = lambda v: (lambda t: np.full(np.shape(t), float(v)))  # noqa: E731
    return MajorantSpec(const(gamma), const(alpha), const(beta), p, const(mu), const(0.0), g0)


def certificate_report(cond, comp):
    return {
        "cond9_ok": cond.cond9_ok,
        "cond10_ok": cond.cond10_ok,
        "worst_slack": cond.worst_slack,
        "worst_t": cond.worst_t,
        "bound_ok": comp.bound_ok,
        "max_g_mu": comp.max_g_mu,
        "blowup_time": comp.blowup_time,
    }


# ----------------------------------------------------------------------------
# spec files


class SpecParseError(ValueError):
    pass


def _form(node):
    """Return ``(f, f')`` for a coefficient form in a spec document."""
    if isinstance(node, (int, float)) and not isinstance(node, bool):
        v = float(node)
        return (lambda t: np.full(np.shape(t), v)), (lambda t: np.zeros(np.shape(t)))
    if not isinstance(node, dict) or len(node) != 1:
        raise SpecParseError(f"cannot parse coefficient form {node!r}")
    (kind, arg), = node.items()
    try:
        if kind == "const":
            return _form(float(arg))
        if kind == "power":
            c, s, e = float(arg["c"]), float(arg.get("shift", 1.0)), float(arg["exponent"])
            return (lambda t: c * (np.asarray(t) + s) ** e), (lambda t: c * e * (np.asarray(t) + s) ** (e - 1))
        if kind == "exp":
            c, q = float(arg["c"]), float(arg["rate"])
            return (lambda t: c * np.exp(q * np.asarray(t))), (lambda t: c * q * np.exp(q * np.asarray(t)))
        if kind == "piecewise":
            starts = [float(piece["from"]) for piece in arg]
            if not starts or starts[0] != 0.0 or np.any(np.diff(starts) <= 0):
                raise SpecParseError("piecewise starts must begin at 0 and increase")
            parts = [_form(piece["value"]) for piece in arg]

            def pick(t, which):
                t = np.asarray(t, dtype=float)
                idx = np.searchsorted(starts, t, side="right") - 1
                out = np.empty(t.shape)
                for j, fns in enumerate(parts):
                    sel = idx == j
                    if np.any(sel):
                        out[sel] = fns[which](t[sel])
                return out

            return (lambda t: pick(t, 0)), (lambda t: pick(t, 1))
    except (KeyError, TypeError) as exc:
        raise SpecParseError(f"bad {kind!r} form: {exc}") from exc
    raise SpecParseError(f"unknown coefficient form {kind!r}")


FAMILIES = {
    # g' = -g + g^2 with constant majorant 1
    "bernoulli": {"gamma": 1.0, "alpha": 1.0, "beta": 0.0, "p": 2.0, "mu": 1.0},
}


def spec_from_document(doc, base_dir=None, schedule_loader=None):
    """Build ``(MajorantSpec, options)`` from a parsed JSON spec document.

    ``schedule_loader(path) -> ScheduleParams`` resolves ``{"schedule": ...}``.
    """
    if not isinstance(doc, dict):
        raise SpecParseError("spec document must be a JSON object")
    opts = {
        "t_end": float(doc.get("t_end", 10.0)),
        "steps": int(doc.get("steps", 100_000)),
        "grid_points": int(doc.get("grid_points", GRID_POINTS)),
    }
    opts["grid_t_max"] = float(doc.get("grid_t_max", opts["t_end"]))
    if "schedule" in doc:
        if schedule_loader is None:
            raise SpecParseError("schedule-based spec needs a schedule loader")
        ref = doc["schedule"]
        if base_dir is not None and not os.path.isabs(ref):
            ref = os.path.join(base_dir, ref)
        params = schedule_loader(ref)
        t_max = default_t_max(params)
        opts["grid_t_max"] = float(doc.get("grid_t_max", t_max))
        if "t_end" not in doc:
            opts["t_end"] = min(t_max, SCHEDULE_T_END)
        return build_schedule_certificate(params, bool(doc.get("literal_alpha", False))), opts
    fields = dict(FAMILIES.get(doc.get("family"), {})) if "family" in doc else {}
    if "family" in doc and doc["family"] not in FAMILIES:
        raise SpecParseError(f"unknown family {doc['family']!r}")
    fields.update({k: doc[k] for k in ("gamma", "alpha", "beta", "p", "mu") if k in doc})
    missing = [k for k in ("gamma", "alpha", "beta", "p", "mu") if k not in fields]
    if missing or "g0" not in doc:
        raise SpecParseError(f"missing fields: {missing + ([] if 'g0' in doc else ['g0'])}")
    gam, _ = _form(fields["gamma"])
    alp, _ = _form(fields["alpha"])
    bet, _ = _form(fields["beta"])
    mu, mu_d = _form(fields["mu"])
    if "mu_dot" in doc:
        mu_d, _ = _form(doc["mu_dot"])
    try:
        return MajorantSpec(gam, alp, bet, float(fields["p"]), mu, mu_d, float(doc["g0"])), opts
    except (TypeError, ValueError) as exc:
        raise SpecParseError(str(exc)) from exc
