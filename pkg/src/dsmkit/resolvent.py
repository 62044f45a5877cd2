"""Shifted linear solves and the regularized equation ``F(w) + a w = f``."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack

from .integrators import REACHED, STATUS_NAMES, DormandPrince45
from .linalg import inverse_norm
from .operator_model import apply_derivative, apply_operator, as_state

log = logging.getLogger(__name__)

TOL_LINEAR = 1e-12
TOL_NEWTON = 1e-10
ARMIJO_C = 1e-4
MAX_HALVINGS = 30


class ShiftedSolveError(np.linalg.LinAlgError):
    """The shifted matrix ``A + a I`` is numerically singular."""

    def __init__(self, msg, shift=None):
        super().__init__(msg)
        self.shift = shift


class RegularizedSolveError(RuntimeError):
    def __init__(self, msg, result=None):
        super().__init__(msg)
        self.result = result


@dataclass(frozen=True)
class ShiftedSolveReport:
    shift: complex
    residual: float
    condition: float


@dataclass(frozen=True)
class RegularizedSolveResult:
    w: np.ndarray
    iterations: int
    residual: float


def _shifted(A, a):
    A = np.asarray(A, dtype=complex)
    return A + a * np.eye(A.shape[0])


def solve_shifted(A, a, v, tol_linear=TOL_LINEAR):
    """Solve ``(A + a I) x = v`` by LU with partial pivoting.

    One step of iterative refinement is applied when the relative residual
    exceeds ``tol_linear``. The condition number is LAPACK's 1-norm estimate.
    """
    M = _shifted(A, a)
    v = as_state(v, M.shape[0])
    with warnings.catch_warnings():
        # singularity is reported through the pivot test
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(M, check_finite=True)
    pivots = np.abs(np.diag(lu))
    if pivots.min() <= np.finfo(float).eps * M.shape[0] * max(pivots.max(), 1e-300):
        raise ShiftedSolveError(f"shifted matrix singular at a={a}", shift=a)
    x = sla.lu_solve((lu, piv), v)
    vnorm = max(np.linalg.norm(v), np.finfo(float).tiny)
    res = M @ x - v
    if np.linalg.norm(res) > tol_linear * vnorm:
        x = x - sla.lu_solve((lu, piv), res)
        res = M @ x - v
    rcond, info = lapack.zgecon(lu, np.linalg.norm(M, 1), norm="1")
    cond = np.inf if rcond == 0 else 1.0 / rcond
    return x, ShiftedSolveReport(complex(a), float(np.linalg.norm(res) / vnorm), float(cond))


def shifted_direction(J, a, v):
    """Fast ``(J + a I)^{-1} v`` for inner loops; raises ShiftedSolveError."""
    try:
        x = np.linalg.solve(_shifted(J, a), v)
    except np.linalg.LinAlgError as exc:
        raise ShiftedSolveError(f"shifted matrix singular at a={a}", shift=a) from exc
    if not np.all(np.isfinite(x)):
        raise ShiftedSolveError(f"non-finite shifted solve at a={a}", shift=a)
    return x


@dataclass(frozen=True)
class ResolventEstimate:
    c1_hat: float
    b_hat: float
    moduli: np.ndarray
    norms: np.ndarray


def _theta_for_modulus(path, r):
    t = path.schedule.time_at(r) if r < path.schedule.r0 else 0.0
    return float(np.angle(path.a(t)))


def estimate_resolvent_bound(problem, path, moduli, samples=20, seed=0, radius=1.0):
    """Fit ``||(A(u) + a I)^{-1}|| ~ c1 / |a|^b`` over random ``u`` and shifts on the path.

    For each modulus ``r`` the shift is the point of the path with ``|a| = r``
    (the start point's argument is used for ``r >= r0``). The fit regresses
    log-norm on ``-log r`` over all samples.
    """
    moduli = np.asarray(moduli, dtype=float)
    if samples < 5:
        raise ValueError("need at least 5 samples per modulus")
    if np.any(moduli <= 0) or np.any(moduli >= path.epsilon0):
        raise ValueError("moduli must lie in (0, epsilon0)")
    rng = np.random.default_rng(seed)
    n = problem.dimension
    xs, ys, norms = [], [], []
    for r in moduli:
        a = r * np.exp(1j * _theta_for_modulus(path, r))
        row = []
        for _ in range(samples):
            d = rng.standard_normal(n)
            u = radius * rng.uniform() ** (1.0 / n) * d / np.linalg.norm(d)
            M = _shifted(apply_derivative(problem, u), a)
            try:
                val = inverse_norm(M)
            except (np.linalg.LinAlgError, ValueError) as exc:
                raise ShiftedSolveError(f"singular shifted matrix at a={a}", shift=a) from exc
            if not np.isfinite(val):
                raise ShiftedSolveError(f"singular shifted matrix at a={a}", shift=a)
            row.append(val)
            xs.append(-np.log(r))
            ys.append(np.log(val))
        norms.append(row)
    slope, intercept = np.polyfit(xs, ys, 1)
    return ResolventEstimate(float(np.exp(intercept)), float(slope), moduli, np.asarray(norms))


def _newton(problem, a, data, w, tol, max_iter):
    n = problem.dimension
    w = as_state(w, n).copy()
    G = apply_operator(problem, w) + a * w - data
    nG = float(np.linalg.norm(G))
    for it in range(max_iter + 1):
        if nG <= tol:
            return RegularizedSolveResult(w, it, nG)
        if it == max_iter:
            break
        s = shifted_direction(apply_derivative(problem, w), a, -G)
        step = 1.0
        for _ in range(MAX_HALVINGS + 1):
            w_try = w + step * s
            G_try = apply_operator(problem, w_try) + a * w_try - data
            n_try = float(np.linalg.norm(G_try))
            if n_try <= (1.0 - ARMIJO_C * step) * nG:
                break
            step *= 0.5
        else:
            raise RegularizedSolveError(
                f"line search failed at a={a} (residual {nG:.3e})",
                RegularizedSolveResult(w, it, nG),
            )
        w, G, nG = w_try, G_try, n_try
    raise RegularizedSolveError(
        f"Newton did not converge in {max_iter} iterations at a={a} (residual {nG:.3e})",
        RegularizedSolveResult(w, max_iter, nG),
    )


def solve_regularized(problem, a, w_init=None, tol=TOL_NEWTON, max_iter=100):
    """Damped Newton for ``F(w) + a w - f = 0`` with Armijo backtracking."""
    if abs(a) == 0:
        raise ValueError("shift must be nonzero")
    if w_init is None:
        w_init = np.zeros(problem.dimension)
    return _newton(problem, a, problem.f, w_init, tol, max_iter)


def solve_shifted_data(problem, a, data, w_init, tol=TOL_NEWTON, max_iter=100):
    """Solve ``F(u) + a u = data`` (the inverse map used by the psi-form flow)."""
    return _newton(problem, a, as_state(data, problem.dimension), w_init, tol, max_iter)


@dataclass
class PropagatedPath:
    states: list
    residuals: list
    reprojections: int
    steps: int


def propagate_w(problem, path, w0, t_grid, rtol=1e-10, atol=1e-12, drift_tol=1e-6,
                initial_step=1e-3):
    """Transport ``w_a`` along the path with ``w' = -a'(t) (A(w) + a I)^{-1} w``.

    After each grid time the algebraic residual of ``F(w) + a w = f`` is
    checked; one Newton step is applied (and counted) when it exceeds
    ``drift_tol``.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be strictly increasing")
    w = as_state(w0, problem.dimension).copy()

    def rhs(t, w):
        a = path.a(t)
        return -path.adot(t) * shifted_direction(apply_derivative(problem, w), a, w)

    def residual(t, w):
        return float(np.linalg.norm(apply_operator(problem, w) + path.a(t) * w - problem.f))

    stepper = DormandPrince45(rhs, rtol=rtol, atol=atol, h=initial_step)
    states = [w.copy()]
    residuals = [residual(t_grid[0], w)]
    reproj = 0
    t = t_grid[0]
    for t_next in t_grid[1:]:
        t, w, status = stepper.advance(t, w, t_next)
        if status != REACHED:
            raise RuntimeError(f"w propagation stopped at t={t}: {STATUS_NAMES[status]}")
        res = residual(t, w)
        if res > drift_tol:
            a = path.a(t)
            G = apply_operator(problem, w) + a * w - problem.f
            w = w - shifted_direction(apply_derivative(problem, w), a, G)
            stepper._k1 = None
            reproj += 1
            res = residual(t, w)
            log.debug("re-projected w at t=%g, residual now %.3e", t, res)
        states.append(w.copy())
        residuals.append(res)
    return PropagatedPath(states, residuals, reproj, stepper.accepted + stepper.rejected)


@dataclass(frozen=True)
class NormalSolutionReport:
    iterates: list
    increments: np.ndarray
    richardson: np.ndarray
    monotone_increments: bool


def normal_solution(A, f, a_sequence):
    """Minimal-norm solution as the limit of ``(A* A + a I)^{-1} A* f``, ``a -> 0``.

    Returns the last iterate and a report with the successive increments and a
    first-order Richardson extrapolation from the last two shifts.
    """
    a_seq = np.asarray(a_sequence, dtype=float)
    if a_seq.size < 3:
        raise ValueError("a_sequence needs at least 3 values")
    if np.any(a_seq <= 0) or np.any(np.diff(a_seq) >= 0):
        raise ValueError("a_sequence must be positive and strictly decreasing")
    A = np.asarray(A, dtype=complex)
    f = np.asarray(f, dtype=complex)
    T = A.conj().T @ A
    rhs = A.conj().T @ f
    iterates = [solve_shifted(T, a, rhs)[0] for a in a_seq]
    inc = np.array([np.linalg.norm(iterates[i] - iterates[i + 1]) for i in range(len(iterates) - 1)])
    a1, a2 = a_seq[-2], a_seq[-1]
    rich = (a1 * iterates[-1] - a2 * iterates[-2]) / (a1 - a2)
    return iterates[-1], NormalSolutionReport(iterates, inc, rich, bool(np.all(np.diff(inc) <= 0)))
