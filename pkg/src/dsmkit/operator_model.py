"""Operator equations ``F(u) = f`` in finite-dimensional complex coordinates.

A problem bundles the map ``F``, its Jacobian ``A(u) = F'(u)``, the data ``f``
and the two structural constants the schedule needs: the Hoelder modulus of
``A`` (``||A(u) - A(v)|| <= c0 ||u - v||^kappa``) and the resolvent bound
(``||(A(u) + a I)^{-1}|| <= c1 / |a|^b`` for shifts on the path).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np
import scipy.linalg as sla

from ._kernels import KIND_CUBIC, KIND_HOELDER, KIND_LINEAR
from .linalg import operator_norm

# Any positive c0 is valid when A is constant; a tiny one keeps the
# schedule thresholds that depend on c3 = c0 c1 inert.
LINEAR_C0 = 1e-12

GALLERY_IDS = (
    "identity",
    "cubic-monotone",
    "hoelder",
    "hilbert-linear",
    "rank-deficient",
    "normal-equations",
)


class DimensionError(ValueError):
    pass


class NonFiniteError(ArithmeticError):
    pass


@dataclass(frozen=True)
class HoelderModulus:
    c0: float
    kappa: float

    def __post_init__(self):
        if not self.c0 > 0:
            raise ValueError(f"c0 must be positive, got {self.c0}")
        if not 0 < self.kappa <= 1:
            raise ValueError(f"kappa must lie in (0, 1], got {self.kappa}")


@dataclass(frozen=True)
class ResolventBoundSpec:
    c1: float
    b: float
    epsilon0: float = 1.0
    theta0: float = 0.0

    def __post_init__(self):
        for name in ("c1", "b", "epsilon0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")


@dataclass(frozen=True)
class KernelForm:
    """``F(u) = M u + phi(u)`` with a componentwise ``phi``; enables the compiled flow."""

    kind: int
    M: np.ndarray
    kappa: float = 1.0


@dataclass(frozen=True)
class OperatorProblem:
    name: str
    dimension: int
    F: object
    A: object
    f: np.ndarray
    holder: HoelderModulus
    resolvent: ResolventBoundSpec
    known_solution: np.ndarray | None = None
    kernel: KernelForm | None = None
    meta: dict = field(default_factory=dict)

    def with_constants(self, *, c0=None, kappa=None, c1=None, b=None,
                       epsilon0=None, theta0=None):
        holder = HoelderModulus(
            self.holder.c0 if c0 is None else c0,
            self.holder.kappa if kappa is None else kappa,
        )
        res = ResolventBoundSpec(
            self.resolvent.c1 if c1 is None else c1,
            self.resolvent.b if b is None else b,
            self.resolvent.epsilon0 if epsilon0 is None else epsilon0,
            self.resolvent.theta0 if theta0 is None else theta0,
        )
        return replace(self, holder=holder, resolvent=res)


def as_state(v, n=None):
    """Coerce to a 1-D complex vector, checking length and finiteness."""
    x = np.atleast_1d(np.asarray(v, dtype=complex))
    if x.ndim != 1:
        raise DimensionError(f"state must be one-dimensional, got shape {x.shape}")
    if n is not None and x.size != n:
        raise DimensionError(f"expected dimension {n}, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("state has non-finite coordinates")
    return x


def apply_operator(problem, u):
    u = as_state(u, problem.dimension)
    out = np.asarray(problem.F(u), dtype=complex)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"F({problem.name}) produced non-finite values")
    return out


def apply_derivative(problem, u):
    u = as_state(u, problem.dimension)
    J = np.asarray(problem.A(u), dtype=complex)
    if J.shape != (problem.dimension, problem.dimension):
        raise DimensionError(f"Jacobian has shape {J.shape}")
    return J


def _quadrature(rule, quad_points):
    if quad_points < 2:
        raise ValueError("quad_points must be >= 2")
    if rule == "trapezoid":
        s = np.linspace(0.0, 1.0, quad_points)
        wts = np.full(quad_points, 1.0 / (quad_points - 1))
        wts[[0, -1]] *= 0.5
        return s, wts
    if rule == "gauss2":
        panels = (quad_points + 1) // 2
        edges = np.linspace(0.0, 1.0, panels + 1)
        mid = 0.5 * (edges[:-1] + edges[1:])
        half = 0.5 * (edges[1] - edges[0])
        off = half / np.sqrt(3.0)
        s = np.column_stack([mid - off, mid + off]).ravel()
        return s, np.full(s.size, half)
    raise ValueError(f"unknown quadrature rule {rule!r}")


QUADRATURE_ORDER = {"trapezoid": 2, "gauss2": 4}


def check_mean_value_identity(problem, u, w, quad_points=64, rule="gauss2"):
    """Residual of ``F(u) - F(w) = int_0^1 A(w + s z) z ds`` with ``z = u - w``.

    ``rule`` is composite ``"gauss2"`` (two Gauss points per panel, order 4)
    or ``"trapezoid"`` (order 2).
    """
    u = as_state(u, problem.dimension)
    w = as_state(w, problem.dimension)
    z = u - w
    if not np.any(z):
        raise ValueError("u and w must differ")
    s, wts = _quadrature(rule, quad_points)
    Q = np.zeros(problem.dimension, dtype=complex)
    for si, wi in zip(s, wts):
        Q += wi * (apply_derivative(problem, w + si * z) @ z)
    return float(np.linalg.norm(apply_operator(problem, u) - apply_operator(problem, w) - Q))


@dataclass(frozen=True)
class HoelderEstimate:
    c0_hat: float
    kappa_hat: float
    raw_slope: float
    derivative_constant: bool


def estimate_hoelder_constants(problem, samples=200, radius=1.0, seed=0):
    """Fit ``||A(u) - A(v)|| ~ c0 ||u - v||^kappa`` from random pairs in a ball.

    Pair separations are log-uniform over three decades of ``radius``. Half the
    base points are drawn from the whole ball and half from a ball whose size
    matches the separation, so that loss of smoothness at the centre is seen
    at every scale. The fit is to the per-scale maximum (the modulus of
    continuity), binned by separation.
    """
    if samples < 10:
        raise ValueError("need at least 10 samples")
    if not radius > 0:
        raise ValueError("degenerate sample set: radius must be positive")
    n = problem.dimension
    rng = np.random.default_rng(seed)

    def ball(scale):
        d = rng.standard_normal(n)
        d /= np.linalg.norm(d)
        return scale * rng.uniform() ** (1.0 / n) * d

    deltas = np.empty(samples)
    diffs = np.empty(samples)
    for i in range(samples):
        delta = radius * 10.0 ** rng.uniform(-3.0, 0.0)
        base = ball(radius) if i % 2 == 0 else ball(delta)
        d = rng.standard_normal(n)
        d *= delta / np.linalg.norm(d)
        u, v = base, base + d
        deltas[i] = np.linalg.norm(u - v)
        diffs[i] = operator_norm(apply_derivative(problem, u) - apply_derivative(problem, v))
    if np.all(deltas == deltas[0]):
        raise ValueError("degenerate sample set: all pair separations identical")

    scale = np.max(np.abs(apply_derivative(problem, np.zeros(n)))) + 1.0
    if np.max(diffs) <= 1e-13 * scale:
        return HoelderEstimate(0.0, 1.0, 0.0, True)

    nbins = max(2, min(10, samples // 5))
    edges = np.linspace(np.log(deltas.min()), np.log(deltas.max()), nbins + 1)
    idx = np.clip(np.digitize(np.log(deltas), edges) - 1, 0, nbins - 1)
    xs, ys = [], []
    for j in range(nbins):
        sel = np.flatnonzero((idx == j) & (diffs > 0))
        if sel.size:
            best = sel[np.argmax(diffs[sel])]
            xs.append(np.log(deltas[best]))
            ys.append(np.log(diffs[best]))
    if len(xs) < 2:
        raise ValueError("degenerate sample set: fewer than two separation scales")
    slope, intercept = np.polyfit(xs, ys, 1)
    kappa_hat = float(min(1.0, max(slope, 1e-6)))
    # intercept at the clamped slope keeps c0_hat an upper envelope
    c0_hat = float(np.exp(np.max(np.asarray(ys) - kappa_hat * np.asarray(xs))))
    return HoelderEstimate(c0_hat, kappa_hat, float(slope), False)


# ----------------------------------------------------------------------------
# problem factories


def linear_problem(M, f, *, name="linear", c1=1.0, b=1.0, epsilon0=1e3, theta0=0.0,
                   c0=LINEAR_C0, known_solution=None, meta=None):
    """``F(u) = M u`` with user-supplied constants."""
    M = np.asarray(M, dtype=complex)
    n = M.shape[0]
    f = as_state(f, n)
    return OperatorProblem(
        name=name,
        dimension=n,
        F=lambda u: M @ u,
        A=lambda u: M,
        f=f,
        holder=HoelderModulus(c0, 1.0),
        resolvent=ResolventBoundSpec(c1, b, epsilon0, theta0),
        known_solution=None if known_solution is None else as_state(known_solution, n),
        kernel=KernelForm(KIND_LINEAR, M, 1.0),
        meta=dict(meta or {}),
    )


def normal_equations(A, f, *, name="normal-equations", epsilon0=1e3, meta=None):
    """Wrap ``A u = f`` as ``T u = A* f`` with ``T = A* A`` (monotone)."""
    A = np.asarray(A, dtype=complex)
    f = np.asarray(f, dtype=complex)
    T = A.conj().T @ A
    y = np.linalg.pinv(A) @ f
    info = {"A": A, "data": f}
    info.update(meta or {})
    return linear_problem(T, A.conj().T @ f, name=name, epsilon0=epsilon0,
                          known_solution=y, meta=info)


def _cubic(n):
    M = np.eye(n, dtype=complex)
    y = np.ones(n, dtype=complex)
    return OperatorProblem(
        name="cubic-monotone",
        dimension=n,
        F=lambda u: u + u ** 3,
        A=lambda u: np.diag(1.0 + 3.0 * u ** 2),
        f=y + y ** 3,
        # ||3 diag(u^2 - v^2)|| <= 6 ||u - v|| on the unit max-norm ball
        holder=HoelderModulus(6.0, 1.0),
        resolvent=ResolventBoundSpec(1.0, 1.0, 1e3, 0.0),
        known_solution=y,
        kernel=KernelForm(KIND_CUBIC, M, 1.0),
        meta={"radius": 1.0},
    )


def _hoelder(n, kappa):
    M = np.eye(n, dtype=complex)
    y = np.ones(n, dtype=complex)

    def F(u):
        return u + np.abs(u) ** kappa * u / (1.0 + kappa)

    def A(u):
        return np.diag(1.0 + np.abs(u) ** kappa)

    return OperatorProblem(
        name="hoelder",
        dimension=n,
        F=F,
        A=A,
        f=F(y),
        # | |s|^k - |t|^k | <= |s - t|^k componentwise
        holder=HoelderModulus(1.0, kappa),
        resolvent=ResolventBoundSpec(1.0, 1.0, 1e3, 0.0),
        known_solution=y,
        kernel=KernelForm(KIND_HOELDER, M, kappa),
        meta={"kappa": kappa},
    )


def _random_orthogonal(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def make_gallery(name, n=None, seed=0, *, kappa=0.5):
    """Build a gallery problem. ``n=None`` uses the manifest default size."""
    if name not in GALLERY_IDS:
        raise KeyError(f"unknown gallery {name!r}; valid ids: {', '.join(GALLERY_IDS)}")
    if n is None:
        n = _manifest_entry(name)["n"]
    n = int(n)
    if n < 1:
        raise DimensionError("dimension must be >= 1")
    rng = np.random.default_rng(seed)

    if name == "identity":
        f = np.ones(n, dtype=complex)
        return linear_problem(np.eye(n), f, name=name, known_solution=f)
    if name == "cubic-monotone":
        return _cubic(n)
    if name == "hoelder":
        return _hoelder(n, kappa)
    if name == "hilbert-linear":
        H = sla.hilbert(n)
        y = np.ones(n)
        return linear_problem(H, H @ y, name=name, known_solution=y)
    if name == "rank-deficient":
        if n < 2:
            raise DimensionError("rank-deficient gallery needs n >= 2")
        rank = n - max(1, n // 3)
        sig = np.zeros(n)
        sig[:rank] = np.linspace(1.0, 3.0, rank)
        B = _random_orthogonal(rng, n) @ np.diag(sig) @ _random_orthogonal(rng, n).T
        T = B.T @ B
        x = rng.standard_normal(n)
        f = T @ x
        return linear_problem(T, f, name=name, known_solution=np.linalg.pinv(T) @ f,
                              meta={"B": B, "rank": rank})
    # normal-equations: graded singular values 1 .. 1e-3
    sig = np.logspace(0, -3, n)
    A = _random_orthogonal(rng, n) @ np.diag(sig) @ _random_orthogonal(rng, n).T
    x = rng.standard_normal(n)
    return normal_equations(A, A @ x, name=name)


# ----------------------------------------------------------------------------
# manifest


def gallery_manifest():
    text = resources.files("dsmkit").joinpath("gallery_manifest.json").read_text()
    return json.loads(text)


def _manifest_entry(name):
    for entry in gallery_manifest()["galleries"]:
        if entry["name"] == name:
            return entry
    raise KeyError(name)
