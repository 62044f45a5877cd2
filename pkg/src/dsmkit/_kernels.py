"""Hot loops, compiled with numba when available.

Two kernels live here:

* ``dsm_advance`` integrates the DSM flow for the structured problem family
  ``F(u) = M u + phi(u)`` (phi applied componentwise) along the closed-form
  schedule with a linear argument profile. It mirrors
  :class:`dsmkit.integrators.DormandPrince45` step for step.
* ``rk4_fixed`` runs the fixed-step comparison ODE used by the majorant checks
  on pre-tabulated coefficient values.

With ``DSM_NUMBA=0`` the decorators are inert. ``rk4_fixed`` then runs as
plain Python; ``dsm_advance`` is not used (the flow falls back to the numpy
stepper, which is much faster than this code uncompiled).
"""
import numpy as np

from ._accel import njit
from .integrators import (
    A21, A31, A32, A41, A42, A43, A51, A52, A53, A54, A61, A62, A63, A64, A65,
    B1, B3, B4, B5, B6, C2, C3, C4, C5, E1, E3, E4, E5, E6, E7,
    ERR_PREV_FLOOR, FAC_MAX, FAC_MIN, MAX_STEPS, PI_ALPHA, PI_BETA, REACHED,
    RHS_FAILURE, SAFETY, STOPPED, UNDERFLOW,
)

KIND_LINEAR = 0
KIND_CUBIC = 1
KIND_HOELDER = 2


@njit(cache=True)
def radius(t, r0, m, c4):
    # r0 (1 + m q t)^(-1/m), q = r0^m / (4 c4), evaluated without forming r0^-m
    q = np.exp(m * np.log(r0) - np.log(4.0 * c4))
    return r0 * (1.0 + m * q * t) ** (-1.0 / m)


@njit(cache=True)
def _shift(t, r0, m, c4, theta0, omega):
    r = radius(t, r0, m, c4)
    th = theta0 + omega * t
    return r * complex(np.cos(th), np.sin(th))


@njit(cache=True)
def _assemble(kind, M, kappa, f, a, u, G, J):
    # G <- F(u) + a u - f ; J <- A(u) + a I
    n = u.size
    for i in range(n):
        s = 0j
        for j in range(n):
            s += M[i, j] * u[j]
            J[i, j] = M[i, j]
        if kind == KIND_CUBIC:
            s += u[i] * u[i] * u[i]
            J[i, i] += 3.0 * u[i] * u[i]
        elif kind == KIND_HOELDER:
            mag = np.abs(u[i]) ** kappa
            s += mag * u[i] / (1.0 + kappa)
            J[i, i] += mag
        G[i] = s + a * u[i] - f[i]
        J[i, i] += a


@njit(cache=True)
def _residual_norm(kind, M, kappa, f, u, G, J):
    _assemble(kind, M, kappa, f, 0j, u, G, J)
    s = 0.0
    for i in range(u.size):
        s += G[i].real ** 2 + G[i].imag ** 2
    return np.sqrt(s)


@njit(cache=True)
def _solve_inplace(J, b):
    # Gaussian elimination with partial pivoting; b is overwritten with x.
    n = b.size
    for k in range(n):
        p = k
        best = np.abs(J[k, k])
        for i in range(k + 1, n):
            v = np.abs(J[i, k])
            if v > best:
                best = v
                p = i
        if not best > 0.0 or not np.isfinite(best):
            return False
        if p != k:
            for j in range(k, n):
                tmp = J[k, j]
                J[k, j] = J[p, j]
                J[p, j] = tmp
            tmp = b[k]
            b[k] = b[p]
            b[p] = tmp
        piv = J[k, k]
        for i in range(k + 1, n):
            l = J[i, k] / piv
            if l != 0:
                for j in range(k + 1, n):
                    J[i, j] -= l * J[k, j]
                b[i] -= l * b[k]
    for i in range(n - 1, -1, -1):
        s = b[i]
        for j in range(i + 1, n):
            s -= J[i, j] * b[j]
        b[i] = s / J[i, i]
    return True


@njit(cache=True)
def _rhs(kind, M, kappa, f, a, u, out, G, J):
    _assemble(kind, M, kappa, f, a, u, G, J)
    if not _solve_inplace(J, G):
        return False
    for i in range(u.size):
        out[i] = -G[i]
    return True


@njit(cache=True)
def dsm_advance(kind, M, kappa, f, r0, m, c4, theta0, omega,
                t, u0, t_end, h, err_prev, rtol, atol, max_step,
                cap_c1, cap_b, tau, max_steps, n_acc, n_rej):
    """Advance the DSM flow from ``t`` to ``t_end``.

    Returns ``(t, u, h, err_prev, n_acc, n_rej, status)``.
    """
    n = u0.size
    u = u0.copy()
    G = np.empty(n, np.complex128)
    J = np.empty((n, n), np.complex128)
    k1 = np.empty(n, np.complex128)
    k2 = np.empty(n, np.complex128)
    k3 = np.empty(n, np.complex128)
    k4 = np.empty(n, np.complex128)
    k5 = np.empty(n, np.complex128)
    k6 = np.empty(n, np.complex128)
    k7 = np.empty(n, np.complex128)
    ys = np.empty(n, np.complex128)
    ynew = np.empty(n, np.complex128)

    if not _rhs(kind, M, kappa, f, _shift(t, r0, m, c4, theta0, omega), u, k1, G, J):
        return t, u, h, err_prev, n_acc, n_rej, RHS_FAILURE

    just_rejected = False
    while t < t_end:
        if n_acc + n_rej >= max_steps:
            return t, u, h, err_prev, n_acc, n_rej, MAX_STEPS
        hmax = max_step
        if cap_c1 > 0.0:
            hmax = min(hmax, radius(t, r0, m, c4) ** cap_b / (2.0 * cap_c1))
        hh = min(h, hmax)
        remaining = t_end - t
        clamped = hh >= remaining
        h_try = remaining if clamped else hh
        if (not clamped) and h_try < 1e-14 * max(1.0, abs(t)):
            return t, u, h, err_prev, n_acc, n_rej, UNDERFLOW

        ok = True
        for i in range(n):
            ys[i] = u[i] + h_try * (A21 * k1[i])
        ok = ok and _rhs(kind, M, kappa, f, _shift(t + C2 * h_try, r0, m, c4, theta0, omega), ys, k2, G, J)
        for i in range(n):
            ys[i] = u[i] + h_try * (A31 * k1[i] + A32 * k2[i])
        ok = ok and _rhs(kind, M, kappa, f, _shift(t + C3 * h_try, r0, m, c4, theta0, omega), ys, k3, G, J)
        for i in range(n):
            ys[i] = u[i] + h_try * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i])
        ok = ok and _rhs(kind, M, kappa, f, _shift(t + C4 * h_try, r0, m, c4, theta0, omega), ys, k4, G, J)
        for i in range(n):
            ys[i] = u[i] + h_try * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i])
        ok = ok and _rhs(kind, M, kappa, f, _shift(t + C5 * h_try, r0, m, c4, theta0, omega), ys, k5, G, J)
        for i in range(n):
            ys[i] = u[i] + h_try * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i])
        ok = ok and _rhs(kind, M, kappa, f, _shift(t + h_try, r0, m, c4, theta0, omega), ys, k6, G, J)
        for i in range(n):
            ynew[i] = u[i] + h_try * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i])
        ok = ok and _rhs(kind, M, kappa, f, _shift(t + h_try, r0, m, c4, theta0, omega), ynew, k7, G, J)
        if not ok:
            return t, u, h, err_prev, n_acc, n_rej, RHS_FAILURE

        acc = 0.0
        for i in range(n):
            e = h_try * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i])
            sc = atol + rtol * max(np.abs(u[i]), np.abs(ynew[i]))
            q = np.abs(e) / sc
            acc += q * q
        err = np.sqrt(acc / n)

        if np.isfinite(err) and err <= 1.0:
            fac = SAFETY * max(err, 1e-10) ** (-PI_ALPHA) * err_prev ** PI_BETA
            fac = min(FAC_MAX, max(FAC_MIN, fac))
            if just_rejected:
                fac = min(fac, 1.0)
            h_next = h_try * fac
            h = max(hh, h_next) if clamped else h_next
            t = t_end if clamped else t + h_try
            for i in range(n):
                u[i] = ynew[i]
                k1[i] = k7[i]
            err_prev = max(err, ERR_PREV_FLOOR)
            n_acc += 1
            just_rejected = False
            if tau > 0.0 and _residual_norm(kind, M, kappa, f, u, G, J) <= tau:
                return t, u, h, err_prev, n_acc, n_rej, STOPPED
        else:
            if np.isfinite(err):
                shrink = max(FAC_MIN, SAFETY * err ** -0.2)
            else:
                shrink = FAC_MIN
            h = h_try * shrink
            n_rej += 1
            just_rejected = True
            if h < 1e-14 * max(1.0, abs(t)):
                return t, u, h, err_prev, n_acc, n_rej, UNDERFLOW
    return t, u, h, err_prev, n_acc, n_rej, REACHED


@njit(cache=True)
def rk4_fixed(g0, p, h, gam, alp, bet, limit):
    """Classical RK4 for g' = -gamma g + alpha g^p + beta on a uniform grid.

    Coefficient arrays hold values at the half-grid points t = j h / 2,
    j = 0 .. 2N. Returns ``(g, last)`` where ``g[i]`` is the value at step i
    and ``last`` is the final valid index (< N when |g| exceeded ``limit``).
    """
    nsteps = (gam.size - 1) // 2
    g = np.empty(nsteps + 1)
    g[0] = g0
    y = g0
    for i in range(nsteps):
        j = 2 * i
        y1 = y
        k1 = -gam[j] * y1 + alp[j] * max(y1, 0.0) ** p + bet[j]
        y2 = y + 0.5 * h * k1
        k2 = -gam[j + 1] * y2 + alp[j + 1] * max(y2, 0.0) ** p + bet[j + 1]
        y3 = y + 0.5 * h * k2
        k3 = -gam[j + 1] * y3 + alp[j + 1] * max(y3, 0.0) ** p + bet[j + 1]
        y4 = y + h * k3
        k4 = -gam[j + 2] * y4 + alp[j + 2] * max(y4, 0.0) ** p + bet[j + 2]
        y = y + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        if not np.isfinite(y) or abs(y) > limit:
            return g, i
        g[i + 1] = y
    return g, nsteps
