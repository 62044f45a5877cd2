"""Dynamical systems method for ``F(u) = f`` with Hoelder-continuous derivatives.

The flow ``u' = -(A(u) + a(t) I)^{-1} (F(u) + a(t) u - f)`` is driven along a
complex regularization path ``a(t) = r(t) e^{i theta(t)}`` whose modulus decays
by a power law chosen so that ``||u(t) - w_{a(t)}|| < r(t)^k / lambda``.
"""
from .dsm_flow import (
    DsmConfig,
    TrajectoryRecord,
    error_budget,
    integrate,
    integrate_psi,
    verify_theorem_bound,
)
from .majorant import (
    MajorantSpec,
    build_schedule_certificate,
    constant_spec,
    integrate_comparison,
    verify_conditions,
)
from .operator_model import (
    GALLERY_IDS,
    HoelderModulus,
    OperatorProblem,
    ResolventBoundSpec,
    check_mean_value_identity,
    estimate_hoelder_constants,
    linear_problem,
    make_gallery,
    normal_equations,
)
from .regularization_path import (
    AdmissibilityError,
    PathSpec,
    ScheduleInputs,
    ScheduleParams,
    check_admissibility,
    derive_schedule,
    plan_run,
    schedule_r,
    schedule_rdot,
)
from .resolvent import (
    estimate_resolvent_bound,
    normal_solution,
    propagate_w,
    solve_regularized,
    solve_shifted,
)

__version__ = "0.1.0"

__all__ = [
    "AdmissibilityError", "DsmConfig", "GALLERY_IDS", "HoelderModulus", "MajorantSpec",
    "OperatorProblem", "PathSpec", "ResolventBoundSpec", "ScheduleInputs", "ScheduleParams",
    "TrajectoryRecord", "build_schedule_certificate", "check_admissibility",
    "check_mean_value_identity", "constant_spec", "derive_schedule", "error_budget",
    "estimate_hoelder_constants", "estimate_resolvent_bound", "integrate", "integrate_comparison",
    "integrate_psi", "linear_problem", "make_gallery", "normal_equations", "normal_solution",
    "plan_run", "propagate_w", "schedule_r", "schedule_rdot", "solve_regularized", "solve_shifted",
    "verify_conditions", "verify_theorem_bound",
]
