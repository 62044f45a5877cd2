"""Command-line front end: ``dsmkit {solve,sweep,verify-lemma,rate-table,gallery}``.

Exit codes: 0 ok, 1 invalid configuration or input, 2 admissibility or
certificate failure, 3 integrator failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import itertools
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields

import numpy as np

from .dsm_flow import DsmConfig, error_budget, integrate, verify_theorem_bound, write_summary
from .majorant import (
    SpecParseError,
    certificate_report,
    default_grid,
    integrate_comparison,
    spec_from_document,
    verify_conditions,
)
from .operator_model import GALLERY_IDS, gallery_manifest, make_gallery
from .regularization_path import (
    AdmissibilityError,
    ScheduleError,
    plan_run,
    schedule_document,
    schedule_from_document,
)
from .resolvent import RegularizedSolveError, ShiftedSolveError

log = logging.getLogger("dsmkit")

EXIT_OK, EXIT_CONFIG, EXIT_ADMISSIBILITY, EXIT_INTEGRATOR, EXIT_IO = 0, 1, 2, 3, 4
CONFIG_SCHEMA_VERSION = 1
RATE_HEADER = ("run", "k_theory", "k_observed", "final_err")
LOG_LEVELS = {"error": logging.ERROR, "warning": logging.WARNING, "info": logging.INFO,
              "debug": logging.DEBUG}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    gallery: str = "identity"
    n: int | None = None
    seed: int = 0
    u0: float = 0.0
    kappa: float | None = None
    b: float | None = None
    c2: float | None = None
    c3: float | None = None
    r0: float | None = None
    theta0: float | None = None
    spiral_rate: float = 0.0
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
    out: str = "."

    def validate(self):
        entries = {e["name"]: e for e in gallery_manifest()["galleries"]}
        if self.gallery not in entries:
            raise ConfigError(f"unknown gallery {self.gallery!r}; valid ids: {', '.join(GALLERY_IDS)}")
        if self.n is not None and self.n < (2 if self.gallery == "rank-deficient" else 1):
            raise ConfigError(f"n = {self.n} too small for gallery {self.gallery}")
        if self.kappa is not None and not 0 < self.kappa <= 1:
            raise ConfigError("kappa must lie in (0, 1]")
        if self.b is not None and not self.b > 0:
            raise ConfigError("b must be positive")
        for name in ("c2", "c3", "r0"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ConfigError(f"{name} must be positive")
        if not math.isfinite(self.u0):
            raise ConfigError("u0 must be finite")
        try:
            self.dsm_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def dsm_config(self):
        names = {f.name for f in fields(DsmConfig)}
        return DsmConfig(**{k: v for k, v in dataclasses.asdict(self).items() if k in names})

    def public_dict(self):
        # the output directory is left out so that runs are comparable across locations
        d = dataclasses.asdict(self)
        d.pop("out")
        return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in d.items()}


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key, value):
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _FIELD_TYPES[key]
    if value is None:
        return None
    try:
        if "bool" in kind:
            if isinstance(value, str):
                if value.lower() in ("1", "true", "yes", "on"):
                    return True
                if value.lower() in ("0", "false", "no", "off"):
                    return False
                raise ValueError(value)
            return bool(value)
        if "int" in kind:
            return int(value)
        if "float" in kind:
            return float(value)
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc


def load_config_file(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    version = doc.pop("schema_version", None)
    if version != CONFIG_SCHEMA_VERSION:
        raise ConfigError(f"config schema_version must be {CONFIG_SCHEMA_VERSION}, got {version!r}")
    return {k: _coerce(k, v) for k, v in doc.items()}


# ----------------------------------------------------------------------------
# solve


def build_problem(cfg):
    kwargs = {"kappa": cfg.kappa} if (cfg.gallery == "hoelder" and cfg.kappa is not None) else {}
    problem = make_gallery(cfg.gallery, cfg.n, cfg.seed, **kwargs)
    if cfg.kappa is not None or cfg.b is not None:
        problem = problem.with_constants(kappa=cfg.kappa, b=cfg.b)
    return problem


def run_solve(cfg):
    """Run one configuration end to end; returns an exit code."""
    try:
        cfg.validate()
        problem = build_problem(cfg)
        u0 = np.full(problem.dimension, cfg.u0, dtype=complex)
        path, diag = plan_run(problem, u0, cfg.r0, c2=cfg.c2, c3=cfg.c3, theta0=cfg.theta0)
        if cfg.spiral_rate:
            path = dataclasses.replace(path, spiral_rate=cfg.spiral_rate)
    except (ConfigError, ScheduleError, ValueError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except AdmissibilityError as exc:
        print(f"admissibility failure: {exc}", file=sys.stderr)
        return EXIT_ADMISSIBILITY
    except RegularizedSolveError as exc:
        print(f"could not solve for the starting regularized point: {exc}", file=sys.stderr)
        return EXIT_INTEGRATOR

    try:
        record = integrate(problem, path, u0, cfg.dsm_config())
    except (ShiftedSolveError, RegularizedSolveError, ArithmeticError) as exc:
        print(f"integrator failure: {exc}", file=sys.stderr)
        return EXIT_INTEGRATOR

    summary = record.summary(path.schedule if cfg.compute_w else None)
    summary["gallery"] = problem.name
    summary["dimension"] = problem.dimension
    summary["config"] = cfg.public_dict()
    if cfg.compute_w:
        bound = verify_theorem_bound(record, path.schedule)
        summary["bound_first_violation"] = bound.first_violation
    budget = error_budget(problem, path, record) if cfg.compute_err_y else None
    summary["err_budget"] = budget
    try:
        os.makedirs(cfg.out, exist_ok=True)
        record.write_csv(os.path.join(cfg.out, "trajectory.csv"))
        write_summary(os.path.join(cfg.out, "summary.json"), summary)
        with open(os.path.join(cfg.out, "schedule.json"), "w") as fh:
            json.dump(schedule_document(path, diag), fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    log.info("%s: %s at t=%g, steps=%d", problem.name, record.stop_reason, record.t_stop, record.steps)
    if record.stop_reason not in ("t_max", "discrepancy"):
        print(f"integrator failure: {record.stop_reason} at t={record.t_stop:g}", file=sys.stderr)
        return EXIT_INTEGRATOR
    return EXIT_OK


# ----------------------------------------------------------------------------
# sweep


def _parse_vary(items):
    axes = []
    for item in items or []:
        key, sep, values = item.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or not values:
            raise ConfigError(f"--vary expects KEY=v1,v2,..., got {item!r}")
        if key == "out":
            raise ConfigError("cannot vary the output directory")
        axes.append((key, [_coerce(key, v) for v in values.split(",")]))
    return axes


def sweep_configs(base, axes):
    """Cartesian product of ``axes`` over ``base``; each run gets its own subdirectory."""
    out = []
    keys = [k for k, _ in axes]
    for i, combo in enumerate(itertools.product(*[v for _, v in axes])):
        label = "_".join(f"{k}={v}" for k, v in zip(keys, combo))
        name = f"run_{i:03d}" + (f"_{label}" if label else "")
        out.append(dataclasses.replace(base, out=os.path.join(base.out, name), **dict(zip(keys, combo))))
    return out


def run_sweep(base, axes, jobs=None):
    configs = sweep_configs(base, axes)
    for cfg in configs:
        cfg.validate()
    jobs = jobs or os.cpu_count() or 1
    if jobs == 1 or len(configs) == 1:
        codes = [run_solve(c) for c in configs]
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(configs))) as pool:
            codes = list(pool.map(run_solve, configs))
    index = {"schema_version": 1,
             "runs": [{"out": os.path.basename(c.out), "exit_code": code} for c, code in zip(configs, codes)]}
    try:
        os.makedirs(base.out, exist_ok=True)
        with open(os.path.join(base.out, "sweep.json"), "w") as fh:
            json.dump(index, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return max(codes) if codes else EXIT_OK


# ----------------------------------------------------------------------------
# verify-lemma


def _load_schedule(path):
    with open(path) as fh:
        return schedule_from_document(json.load(fh)).schedule


def run_verify_lemma(spec_path, out=None):
    try:
        with open(spec_path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except json.JSONDecodeError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        spec, opts = spec_from_document(doc, os.path.dirname(os.path.abspath(spec_path)), _load_schedule)
        cond = verify_conditions(spec, default_grid(opts["grid_t_max"], opts["grid_points"]))
        comp = integrate_comparison(spec, opts["t_end"], steps=opts["steps"])
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SpecParseError, ValueError, KeyError, TypeError) as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    report = certificate_report(cond, comp)
    report["mu0_g0"] = cond.mu0_g0
    report["t_end"] = opts["t_end"]
    report["ok"] = cond.cond9_ok and cond.cond10_ok and comp.bound_ok
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    try:
        if out:
            with open(out, "w") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK if report["ok"] else EXIT_ADMISSIBILITY


# ----------------------------------------------------------------------------
# rate-table


def _read_trajectory(path):
    r, err = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["err_y"] and row["r"]:
                r.append(float(row["r"]))
                err.append(float(row["err_y"]))
    return np.asarray(r), np.asarray(err)


def observed_exponent(r, err):
    """Slope of log err against log r over the last decade ``r in [r_f, 10 r_f]``."""
    r_final = r[-1]
    sel = (r <= 10.0 * r_final) & (err > 0)
    if np.count_nonzero(sel) < 2 or np.ptp(np.log(r[sel])) == 0:
        return None
    slope, _ = np.polyfit(np.log(r[sel]), np.log(err[sel]), 1)
    return float(slope)


def rate_rows(summary_paths):
    rows, notes = [], []
    for path in summary_paths:
        run = os.path.basename(os.path.dirname(os.path.abspath(path)))
        with open(path) as fh:
            summary = json.load(fh)
        if summary.get("final_err_y") is None:
            notes.append(f"{run}: no known solution, skipped")
            continue
        r, err = _read_trajectory(os.path.join(os.path.dirname(path), "trajectory.csv"))
        k_obs = observed_exponent(r, err) if r.size else None
        if k_obs is None:
            notes.append(f"{run}: too few tail samples, skipped")
            continue
        rows.append((run, summary["k_theory"], k_obs, summary["final_err_y"]))
    return rows, notes


def format_rate_table(rows, fmt="csv"):
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RATE_HEADER)
        for run, k, ko, e in rows:
            w.writerow([run, repr(float(k)), repr(float(ko)), repr(float(e))])
        return buf.getvalue()
    width = max([len(RATE_HEADER[0])] + [len(r[0]) for r in rows])
    lines = [f"{RATE_HEADER[0]:<{width}}  {'k_theory':>10}  {'k_observed':>10}  {'final_err':>12}"]
    for run, k, ko, e in rows:
        lines.append(f"{run:<{width}}  {k:>10.4f}  {ko:>10.4f}  {e:>12.4e}")
    return "\n".join(lines) + "\n"


def run_rate_table(paths, fmt="csv", out=None):
    if len(paths) < 2:
        print("error: rate-table needs at least two summary.json files", file=sys.stderr)
        return EXIT_CONFIG
    try:
        rows, notes = rate_rows(paths)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"error: malformed run output: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for note in notes:
        print(f"note: {note}", file=sys.stderr)
    if len(rows) < 2:
        print("error: fewer than two runs with err_y available", file=sys.stderr)
        return EXIT_CONFIG
    sys.stdout.write(format_rate_table(rows, fmt))
    if out:
        try:
            with open(out, "w") as fh:
                fh.write(format_rate_table(rows, "csv"))
        except OSError as exc:
            print(f"I/O error: {exc}", file=sys.stderr)
            return EXIT_IO
    return EXIT_OK


# ----------------------------------------------------------------------------
# argument parsing


def _run_flags(p):
    p.add_argument("--config", help="JSON run configuration (flags override)")
    p.add_argument("--gallery")
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--u0", type=float, help="fill value for the initial state")
    p.add_argument("--r0", type=float, help="starting modulus (planner may enlarge it)")
    p.add_argument("--kappa", type=float)
    p.add_argument("--b", type=float)
    p.add_argument("--c2", type=float)
    p.add_argument("--c3", type=float)
    p.add_argument("--theta0", type=float)
    p.add_argument("--spiral-rate", dest="spiral_rate", type=float)
    p.add_argument("--t-max", dest="t_max", type=float)
    p.add_argument("--tol", type=float, help="integrator rtol; atol is set to tol/100")
    p.add_argument("--tau", type=float, help="discrepancy stop level (0 disables)")
    p.add_argument("--samples", type=int)
    p.add_argument("--mode", choices=("direct", "psi"))
    p.add_argument("--backend", choices=("auto", "numba", "numpy"))
    p.add_argument("--max-steps", dest="max_steps", type=int)
    p.add_argument("--step-cap", dest="resolvent_step_cap", action="store_const", const=True,
                   help="cap steps at r^b / (2 c1)")
    p.add_argument("--no-w", dest="compute_w", action="store_const", const=False)
    p.add_argument("--no-err-y", dest="compute_err_y", action="store_const", const=False)
    p.add_argument("--out")


def config_from_args(args):
    values = load_config_file(args.config) if args.config else {}
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    if getattr(args, "tol", None) is not None:
        values["rtol"] = args.tol
        values["atol"] = args.tol * 1e-2
    return RunConfig(**values)


def build_parser():
    parser = argparse.ArgumentParser(prog="dsmkit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    _run_flags(sub.add_parser("solve", help="run one gallery problem"))
    sw = sub.add_parser("sweep", help="run a grid of configurations")
    _run_flags(sw)
    sw.add_argument("--vary", action="append", metavar="KEY=v1,v2", help="sweep axis (repeatable)")
    sw.add_argument("--jobs", type=int, help="worker processes (default: cpu count)")
    vl = sub.add_parser("verify-lemma", help="check a majorant certificate from a JSON spec")
    vl.add_argument("spec")
    vl.add_argument("--out", help="report path (default stdout)")
    rt = sub.add_parser("rate-table", help="observed vs theoretical rates from solve outputs")
    rt.add_argument("summaries", nargs="*")
    rt.add_argument("--format", choices=("csv", "text"), default="csv")
    rt.add_argument("--out", help="also write the CSV table here")
    gl = sub.add_parser("gallery", help="list gallery problems")
    gl.add_argument("--json", action="store_true")
    return parser


def _setup_logging():
    level_name = os.environ.get("DSM_LOG", "warning").lower()
    level = LOG_LEVELS.get(level_name, logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if level_name not in LOG_LEVELS:
        log.warning("ignoring unknown DSM_LOG=%r", level_name)


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    if args.command in ("solve", "sweep"):
        try:
            cfg = config_from_args(args)
            if args.command == "solve":
                return run_solve(cfg)
            return run_sweep(cfg, _parse_vary(args.vary), args.jobs)
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except TypeError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except OSError as exc:
            print(f"I/O error: {exc}", file=sys.stderr)
            return EXIT_IO
    if args.command == "verify-lemma":
        return run_verify_lemma(args.spec, args.out)
    if args.command == "rate-table":
        return run_rate_table(args.summaries, args.format, args.out)
    entries = gallery_manifest()["galleries"]
    if args.json:
        sys.stdout.write(json.dumps(entries, indent=2, sort_keys=True) + "\n")
    else:
        for e in entries:
            print(f"{e['name']:<18} n={e['n']:<3} {e['description']}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
