"""Dormand-Prince 4(5) stepper with proportional-integral step control.

The numpy implementation here is used for arbitrary right-hand sides. The
compiled DSM kernel in :mod:`dsmkit._kernels` repeats the same tableau and
controller so both backends take the same steps up to rounding.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Butcher tableau (Dormand & Prince 1980).
C2, C3, C4, C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
A21 = 1 / 5
A31, A32 = 3 / 40, 9 / 40
A41, A42, A43 = 44 / 45, -56 / 15, 32 / 9
A51, A52, A53, A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
A61, A62, A63, A64, A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
B1, B3, B4, B5, B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
# fifth-order minus embedded fourth-order weights
E1, E3, E4, E5, E6, E7 = (
    71 / 57600, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40,
)

SAFETY = 0.9
FAC_MIN = 0.2
FAC_MAX = 5.0
PI_ALPHA = 0.7 / 5
PI_BETA = 0.4 / 5
ERR_PREV_FLOOR = 1e-4

# status codes shared with the compiled kernel
REACHED, STOPPED, UNDERFLOW, RHS_FAILURE, MAX_STEPS = 0, 1, 2, 3, 4
STATUS_NAMES = {
    REACHED: "reached",
    STOPPED: "discrepancy",
    UNDERFLOW: "step_underflow",
    RHS_FAILURE: "rhs_failure",
    MAX_STEPS: "max_steps",
}


def error_norm(err, y, y_new, rtol, atol):
    scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
    return float(np.sqrt(np.mean((np.abs(err) / scale) ** 2)))


def underflow(h, t):
    return h < 1e-14 * max(1.0, abs(t))


@dataclass
class DormandPrince45:
    """Adaptive explicit integrator for ``y' = fun(t, y)``.

    State (step proposal, previous error, counters) persists between calls to
    :meth:`advance`, so a long integration can be split into segments that end
    exactly on sample times without disturbing the controller.

    ``step_cap(t)``, if given, returns an additional upper bound on the step.
    """

    fun: object
    rtol: float = 1e-8
    atol: float = 1e-10
    h: float = 1e-3
    max_step: float = np.inf
    step_cap: object = None
    max_steps: int = 10_000_000
    accepted: int = 0
    rejected: int = 0
    err_prev: float = ERR_PREV_FLOOR
    _k1: np.ndarray | None = field(default=None, repr=False)
    _t_k1: float | None = field(default=None, repr=False)

    def advance(self, t, y, t_end, terminate=None):
        """Integrate from ``t`` to ``t_end``; returns ``(t, y, status)``.

        ``terminate(t, y)`` is called after every accepted step and stops the
        integration (status ``STOPPED``) when it returns True.
        """
        y = np.array(y, copy=True)
        try:
            k1 = self._k1 if (self._k1 is not None and self._t_k1 == t) else self.fun(t, y)
        except (ArithmeticError, np.linalg.LinAlgError, RuntimeError):
            return t, y, RHS_FAILURE
        just_rejected = False
        while t < t_end:
            if self.accepted + self.rejected >= self.max_steps:
                return t, y, MAX_STEPS
            hmax = self.max_step
            if self.step_cap is not None:
                hmax = min(hmax, self.step_cap(t))
            h = min(self.h, hmax)
            remaining = t_end - t
            clamped = h >= remaining
            h_try = remaining if clamped else h
            if underflow(h_try, t) and not clamped:
                return t, y, UNDERFLOW
            try:
                k1, y_new, err, k7 = self._step(t, y, h_try, k1)
            except (ArithmeticError, np.linalg.LinAlgError, RuntimeError):
                return t, y, RHS_FAILURE
            if np.isfinite(err) and err <= 1.0:
                fac = SAFETY * max(err, 1e-10) ** (-PI_ALPHA) * self.err_prev ** PI_BETA
                fac = min(FAC_MAX, max(FAC_MIN, fac))
                if just_rejected:
                    fac = min(fac, 1.0)
                h_next = h_try * fac
                self.h = max(h, h_next) if clamped else h_next
                t = t_end if clamped else t + h_try
                y = y_new
                k1 = k7
                self.err_prev = max(err, ERR_PREV_FLOOR)
                self.accepted += 1
                just_rejected = False
                if terminate is not None and terminate(t, y):
                    self._k1, self._t_k1 = k1, t
                    return t, y, STOPPED
            else:
                shrink = FAC_MIN if not np.isfinite(err) else max(FAC_MIN, SAFETY * err ** -0.2)
                self.h = h_try * shrink
                self.rejected += 1
                just_rejected = True
                if underflow(self.h, t):
                    return t, y, UNDERFLOW
        self._k1, self._t_k1 = k1, t
        return t, y, REACHED

    def _step(self, t, y, h, k1):
        f = self.fun
        k2 = f(t + C2 * h, y + h * (A21 * k1))
        k3 = f(t + C3 * h, y + h * (A31 * k1 + A32 * k2))
        k4 = f(t + C4 * h, y + h * (A41 * k1 + A42 * k2 + A43 * k3))
        k5 = f(t + C5 * h, y + h * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4))
        k6 = f(t + h, y + h * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5))
        y_new = y + h * (B1 * k1 + B3 * k3 + B4 * k4 + B5 * k5 + B6 * k6)
        k7 = f(t + h, y_new)
        err_vec = h * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7)
        return k1, y_new, error_norm(err_vec, y, y_new, self.rtol, self.atol), k7
