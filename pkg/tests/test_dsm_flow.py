import os
import subprocess
import sys

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from dsmkit import _accel
from dsmkit.dsm_flow import (
    CSV_HEADER,
    DsmConfig,
    error_budget,
    integrate,
    integrate_psi,
    rhs,
    sample_times,
    verify_theorem_bound,
)
from dsmkit.operator_model import make_gallery
from dsmkit.regularization_path import PathSpec, ScheduleInputs, derive_schedule, plan_run, schedule_r
from dsmkit.resolvent import solve_regularized

needs_numba = pytest.mark.skipif(not _accel.USE_NUMBA, reason="numba disabled")


def _identity_setup(theta0=0.0):
    # c2 = 1/3, g0 = 1/3 at r0 = 2 gives c4 = 2 and lambda = 6
    params = derive_schedule(ScheduleInputs(1.0, 1.0, 1.0 / 3.0, 1.0, 2.0, 1.0 / 3.0))
    return make_gallery("identity", n=1), PathSpec(params, theta0=theta0, epsilon0=1e3)


def _identity_oracle(path, t_end, u0=0.0):
    # u' = -(u - 1 / (1 + a(t))) for F = I, f = 1
    sol = solve_ivp(lambda t, u: -(u - 1.0 / (1.0 + path.a(t))), (0.0, t_end), [complex(u0)],
                    method="DOP853", rtol=1e-12, atol=1e-14, dense_output=True)
    return sol.sol


def test_rhs_examples():
    ident, path = _identity_setup()
    t = 0.0
    assert np.allclose(rhs(ident, path, t, np.zeros(1)), [1.0 / 3.0])
    # cubic at a = 2: A(0) = 1 gives 2 / 3, A(1) = 4 gives -2 / 6
    cubic = make_gallery("cubic-monotone", n=1)
    assert np.allclose(rhs(cubic, path, 0.0, np.zeros(1)), [2.0 / 3.0])
    assert np.allclose(rhs(cubic, path, 0.0, np.ones(1)), [-2.0 / 6.0])


def test_identity_example_error_matches_oracle():
    ident, path = _identity_setup()
    t_max = path.schedule.time_at(1e-2)
    rec = integrate(ident, path, np.zeros(1), DsmConfig(t_max=t_max, tau=0.0, rtol=1e-10, atol=1e-12))
    assert rec.stop_reason == "t_max" and rec.t_stop == t_max
    sol = _identity_oracle(path, t_max)
    assert np.allclose(rec.u[:, 0], sol(rec.t), atol=1e-8)
    r = schedule_r(path.schedule, t_max)
    # after the transient the error tracks |w_a - y| = r / (1 + r)
    assert rec.err_y[-1] == pytest.approx(r / (1 + r), rel=1e-3)
    assert verify_theorem_bound(rec, path.schedule).holds_everywhere


def test_error_budget_dominates_error():
    ident, path = _identity_setup()
    rec = integrate(ident, path, np.zeros(1), DsmConfig(t_max=path.schedule.time_at(0.05), tau=0.0))
    budget = error_budget(ident, path, rec)
    assert rec.err_y[-1] < budget
    r = schedule_r(path.schedule, rec.t_stop)
    assert budget == pytest.approx(r ** 2 / 6.0 + r / (1 + r), rel=1e-8)
    hil = make_gallery("rank-deficient")
    hil = hil.__class__(**{**hil.__dict__, "known_solution": None})
    assert error_budget(hil, path, rec) is None


def test_real_ray_stays_real():
    cubic = make_gallery("cubic-monotone", n=3)
    path, _ = plan_run(cubic, np.zeros(3))
    rec = integrate(cubic, path, np.zeros(3), DsmConfig(t_max=500.0, tau=0.0, backend="numpy"))
    assert np.max(np.abs(rec.u.imag)) < 1e-12


def test_rotated_path_matches_oracle():
    ident, path = _identity_setup(theta0=0.4)
    rec = integrate(ident, path, np.zeros(1), DsmConfig(t_max=300.0, tau=0.0, rtol=1e-10, atol=1e-12,
                                                         backend="numpy"))
    assert np.allclose(rec.u[:, 0], _identity_oracle(path, 300.0)(rec.t), atol=1e-8)
    assert np.max(np.abs(rec.u.imag)) > 1e-3


@needs_numba
@pytest.mark.parametrize("name", ["cubic-monotone", "hilbert-linear", "hoelder"])
def test_numba_and_numpy_agree(name):
    problem = make_gallery(name)
    n = problem.dimension
    path, _ = plan_run(problem, np.zeros(n))
    cfg = dict(t_max=200.0, tau=0.0, samples=32, rtol=1e-9, atol=1e-11)
    a = integrate(problem, path, np.zeros(n), DsmConfig(backend="numba", **cfg))
    b = integrate(problem, path, np.zeros(n), DsmConfig(backend="numpy", **cfg))
    assert (a.backend, b.backend) == ("numba", "numpy")
    assert np.array_equal(a.t, b.t)
    assert np.max(np.abs(a.u - b.u)) < 1e-7


def test_env_flag_selects_numpy_fallback():
    code = (
        "import numpy as np\n"
        "from dsmkit import _accel\n"
        "from dsmkit.dsm_flow import DsmConfig, integrate\n"
        "from dsmkit.operator_model import make_gallery\n"
        "from dsmkit.regularization_path import plan_run\n"
        "p = make_gallery('cubic-monotone', n=1)\n"
        "path, _ = plan_run(p, np.zeros(1))\n"
        "rec = integrate(p, path, np.zeros(1), DsmConfig(t_max=10.0, tau=0.0, samples=8))\n"
        "print(_accel.USE_NUMBA, rec.backend)\n"
    )
    env = {**os.environ, "DSM_NUMBA": "0"}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["False", "numpy"]


def test_backend_errors():
    ident, path = _identity_setup()
    spiral = PathSpec(path.schedule, theta=lambda t: 0.1 * np.sin(t), theta_dot=lambda t: 0.1 * np.cos(t),
                      epsilon0=1e3)
    with pytest.raises(ValueError):
        integrate(ident, spiral, np.zeros(1), DsmConfig(t_max=1.0, backend="numba"))
    with pytest.raises(ValueError):
        integrate(ident, path, np.zeros(1), DsmConfig(t_max=1.0, mode="psi", backend="numba"))
    with pytest.raises(ValueError):
        DsmConfig(backend="cuda")
    with pytest.raises(ValueError):
        DsmConfig(rtol=0.0)
    with pytest.raises(ValueError):
        DsmConfig(samples=1)


def test_psi_form_matches_direct():
    cubic = make_gallery("cubic-monotone", n=2)
    path, _ = plan_run(cubic, np.zeros(2))
    cfg = dict(t_max=100.0, tau=0.0, samples=16, rtol=1e-10, atol=1e-12, backend="numpy")
    a = integrate(cubic, path, np.zeros(2), DsmConfig(**cfg))
    b = integrate_psi(cubic, path, np.zeros(2), DsmConfig(**cfg))
    assert b.mode == "psi"
    assert np.max(np.abs(a.u - b.u)) < 1e-6


def test_starting_on_the_regularized_solution():
    cubic = make_gallery("cubic-monotone", n=1)
    path, _ = plan_run(cubic, np.zeros(1))
    w0 = solve_regularized(cubic, path.a(0.0), tol=1e-14).w
    rec = integrate_psi(cubic, path, w0, DsmConfig(t_max=50.0, tau=0.0, samples=8))
    assert rec.shifted_residual[0] < 1e-12 and rec.g[0] < 1e-12
    # the flow keeps u close to w_a, well inside the envelope
    assert np.all(rec.g < rec.bound)


def test_discrepancy_stop():
    ident, path = _identity_setup()
    tau = 0.02
    rec = integrate(ident, path, np.zeros(1), DsmConfig(t_max=1e6, tau=tau))
    assert rec.stop_reason == "discrepancy"
    assert rec.discrepancy[-1] <= tau < rec.discrepancy[-2]
    r_stop = schedule_r(path.schedule, rec.t_stop)
    # the identity discrepancy is |u - 1|, which tracks r / (1 + r)
    assert r_stop / (1 + r_stop) == pytest.approx(rec.discrepancy[-1], rel=0.05)


def test_step_budget_and_default_tau():
    cubic = make_gallery("cubic-monotone", n=1)
    path, _ = plan_run(cubic, np.zeros(1))
    rec = integrate(cubic, path, np.zeros(1), DsmConfig(t_max=1e5, max_steps=10, backend="numpy"))
    assert rec.stop_reason == "max_steps"
    rec = integrate(cubic, path, np.zeros(1), DsmConfig(t_max=1e3, samples=8))
    assert rec.tau == pytest.approx(10 * schedule_r(path.schedule, 1e3))


def test_resolvent_step_cap_agrees():
    # a large c1 makes the cap r^b / (2 c1) bind
    cubic = make_gallery("cubic-monotone", n=1).with_constants(c1=50.0)
    path, _ = plan_run(cubic, np.zeros(1))
    cfg = dict(t_max=50.0, tau=0.0, samples=8, backend="numpy")
    free = integrate(cubic, path, np.zeros(1), DsmConfig(**cfg))
    capped = integrate(cubic, path, np.zeros(1), DsmConfig(resolvent_step_cap=True, **cfg))
    assert capped.steps > free.steps
    assert np.max(np.abs(capped.u - free.u)) < 1e-6


def test_tightening_tolerance_converges():
    ident, path = _identity_setup()
    t_max = 200.0
    ref = _identity_oracle(path, t_max)(t_max)
    errs = []
    for rtol in (1e-5, 1e-7, 1e-9):
        rec = integrate(ident, path, np.zeros(1), DsmConfig(t_max=t_max, tau=0.0, rtol=rtol, atol=rtol * 1e-2,
                                                             backend="numpy", samples=2))
        errs.append(abs(rec.u_final[0] - ref))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-8


def test_csv_and_summary():
    ident, path = _identity_setup()
    rec = integrate(ident, path, np.zeros(1), DsmConfig(t_max=10.0, tau=0.0, samples=5))
    lines = rec.csv_text().splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert len(lines) == 6
    for line in lines[1:]:
        assert all(float(x) == float(x) for x in line.split(","))
    s = rec.summary(path.schedule)
    assert s["stop_reason"] == "t_max" and s["bound_violations"] == 0
    assert s["samples"] == 5 and s["k_theory"] == 2.0 and s["lambda"] == pytest.approx(6.0)
    assert np.array_equal(sample_times(10.0, 5), rec.t)


def test_without_w_diagnostics():
    ident, path = _identity_setup()
    rec = integrate(ident, path, np.zeros(1), DsmConfig(t_max=10.0, tau=0.0, samples=4, compute_w=False,
                                                         compute_err_y=False))
    assert np.all(np.isnan(rec.g)) and np.all(np.isnan(rec.err_y))
    assert ",," in rec.csv_text().splitlines()[1] + ","
    with pytest.raises(ValueError):
        verify_theorem_bound(rec, path.schedule)
