import csv
import json
import subprocess
import sys

import pytest
from scipy.optimize import brentq

from dsmkit.cli import (
    EXIT_ADMISSIBILITY,
    EXIT_CONFIG,
    EXIT_INTEGRATOR,
    EXIT_IO,
    EXIT_OK,
    RATE_HEADER,
    main,
)


def _summary(path):
    with open(path / "summary.json") as fh:
        return json.load(fh)


def test_identity_solve(tmp_path):
    out = tmp_path / "i2"
    assert main(["solve", "--gallery", "identity", "--n", "2", "--t-max", "1e4", "--out", str(out)]) == EXIT_OK
    s = _summary(out)
    assert s["bound_violations"] == 0 and s["stop_reason"] in ("t_max", "discrepancy")
    assert s["gallery"] == "identity" and s["dimension"] == 2
    assert s["final_err_y"] < s["err_budget"]
    for key in ("stop_reason", "t_stop", "final_discrepancy", "final_err_y", "bound_violations", "steps",
                "rejected_steps"):
        assert key in s
    with open(out / "trajectory.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "r", "discrepancy", "g", "err_y", "bound"]
    sched = json.loads((out / "schedule.json").read_text())
    assert sched["admissibility"]["halving_ok"] and sched["admissibility"]["g0_ok"]


def test_cubic_default_discrepancy_consistent_with_oracle(tmp_path):
    out = tmp_path / "c"
    assert main(["solve", "--gallery", "cubic-monotone", "--n", "1", "--out", str(out)]) == EXIT_OK
    s = _summary(out)
    assert s["stop_reason"] == "discrepancy" and s["final_discrepancy"] <= s["tau"]
    # on the real ray u stays real, so |F(u) - 2| = final_discrepancy fixes u up to the side of 1
    d = s["final_discrepancy"]
    below = brentq(lambda x: x + x ** 3 - (2.0 - d), 0.0, 2.0, xtol=1e-15)
    assert s["final_err_y"] == pytest.approx(1.0 - below, rel=1e-6)


@pytest.mark.slow
def test_cubic_tight_discrepancy_reaches_error_target(tmp_path):
    out = tmp_path / "c1"
    assert main(["solve", "--gallery", "cubic-monotone", "--n", "1", "--tau", "3e-3", "--out", str(out)]) == EXIT_OK
    s = _summary(out)
    assert s["final_err_y"] < 1e-3 and s["bound_violations"] == 0


def test_bad_gallery_lists_ids(tmp_path, capsys):
    assert main(["solve", "--gallery", "bogus", "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "cubic-monotone" in err and "hilbert-linear" in err


@pytest.mark.parametrize("doc", [
    {"n": 2},
    {"schema_version": 2, "gallery": "identity"},
    {"schema_version": 1, "colour": "blue"},
    {"schema_version": 1, "n": "two"},
])
def test_bad_config_files(tmp_path, doc):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(doc))
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "x")]) == EXIT_CONFIG


def test_bad_flag_values(tmp_path):
    assert main(["solve", "--gallery", "identity", "--tol", "-1", "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    assert main(["solve", "--gallery", "identity", "--kappa", "2", "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    with pytest.raises(SystemExit):
        main(["solve", "--mode", "sideways"])


def test_config_file_with_flag_override(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"schema_version": 1, "gallery": "identity", "n": 3, "t_max": 100.0,
                               "samples": 16}))
    out = tmp_path / "o"
    assert main(["solve", "--config", str(cfg), "--samples", "8", "--out", str(out)]) == EXIT_OK
    s = _summary(out)
    assert s["dimension"] == 3 and s["samples"] <= 8 and s["config"]["samples"] == 8
    assert s["config"]["t_max"] == 100.0


def test_admissibility_exit(tmp_path, capsys):
    code = main(["solve", "--gallery", "identity", "--u0", "10", "--c2", "1", "--b", "2",
                 "--out", str(tmp_path / "x")])
    assert code == EXIT_ADMISSIBILITY
    assert "admissibility" in capsys.readouterr().err


def test_integrator_exit(tmp_path):
    out = tmp_path / "x"
    code = main(["solve", "--gallery", "cubic-monotone", "--t-max", "1e5", "--tau", "0", "--max-steps", "10",
                 "--out", str(out)])
    assert code == EXIT_INTEGRATOR
    assert _summary(out)["stop_reason"] == "max_steps"


def test_io_exit(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["solve", "--gallery", "identity", "--t-max", "10", "--out", str(blocker)]) == EXIT_IO
    assert main(["verify-lemma", str(tmp_path / "missing.json")]) == EXIT_IO


def _write(tmp_path, name, doc):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


def test_verify_lemma_bernoulli(tmp_path, capsys):
    ok = _write(tmp_path, "ok.json", {"family": "bernoulli", "g0": 0.5})
    assert main(["verify-lemma", str(ok)]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["ok"] and report["cond9_ok"] and report["cond10_ok"] and report["bound_ok"]
    assert report["mu0_g0"] == 0.5
    bad = _write(tmp_path, "bad.json", {"family": "bernoulli", "g0": 1.5})
    rep_path = tmp_path / "report.json"
    assert main(["verify-lemma", str(bad), "--out", str(rep_path)]) == EXIT_ADMISSIBILITY
    report = json.loads(rep_path.read_text())
    assert not report["ok"] and not report["cond10_ok"]
    assert report["blowup_time"] == pytest.approx(1.0986, abs=1e-3)


def test_verify_lemma_parse_errors(tmp_path):
    assert main(["verify-lemma", str(_write(tmp_path, "a.json", {"family": "nope", "g0": 1}))]) == EXIT_CONFIG
    broken = tmp_path / "b.json"
    broken.write_text("{not json")
    assert main(["verify-lemma", str(broken)]) == EXIT_CONFIG


def test_verify_lemma_on_solve_schedule(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["solve", "--gallery", "cubic-monotone", "--n", "1", "--t-max", "100", "--out", str(out)]) == 0
    spec = _write(out, "lemma.json", {"schedule": "schedule.json"})
    capsys.readouterr()
    assert main(["verify-lemma", str(spec)]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["ok"] and report["max_g_mu"] < 1.0


def test_rate_table(tmp_path, capsys):
    paths = []
    for kappa in ("1", "0.5"):
        out = tmp_path / f"k{kappa}"
        assert main(["solve", "--gallery", "identity", "--n", "1", "--kappa", kappa, "--t-max", "1e4",
                     "--tau", "0", "--out", str(out)]) == EXIT_OK
        paths.append(str(out / "summary.json"))
    capsys.readouterr()
    table = tmp_path / "rates.csv"
    assert main(["rate-table", *paths, "--out", str(table)]) == EXIT_OK
    rows = list(csv.reader(capsys.readouterr().out.splitlines()))
    assert tuple(rows[0]) == RATE_HEADER and len(rows) == 3
    assert [float(r[1]) for r in rows[1:]] == [2.0, 4.0]
    assert all(float(r[2]) > 0 for r in rows[1:])
    assert table.read_text().splitlines()[0] == ",".join(RATE_HEADER)
    assert main(["rate-table", "--format", "text", *paths]) == EXIT_OK
    assert "k_observed" in capsys.readouterr().out
    assert main(["rate-table", paths[0]]) == EXIT_CONFIG


def test_sweep(tmp_path):
    out = tmp_path / "sw"
    code = main(["sweep", "--gallery", "identity", "--n", "1", "--t-max", "100", "--samples", "8",
                 "--vary", "kappa=1,0.5", "--vary", "theta0=0,0.3", "--jobs", "2", "--out", str(out)])
    assert code == EXIT_OK
    index = json.loads((out / "sweep.json").read_text())
    assert len(index["runs"]) == 4 and all(r["exit_code"] == 0 for r in index["runs"])
    for r in index["runs"]:
        assert (out / r["out"] / "summary.json").exists()
    assert main(["sweep", "--gallery", "identity", "--vary", "out=a,b", "--out", str(out)]) == EXIT_CONFIG
    assert main(["sweep", "--gallery", "identity", "--vary", "kappa", "--out", str(out)]) == EXIT_CONFIG


def test_gallery_listing(capsys):
    assert main(["gallery"]) == EXIT_OK
    assert "rank-deficient" in capsys.readouterr().out
    assert main(["gallery", "--json"]) == EXIT_OK
    assert len(json.loads(capsys.readouterr().out)) == 6


def test_module_entry_point(tmp_path):
    out = tmp_path / "m"
    proc = subprocess.run([sys.executable, "-m", "dsmkit", "solve", "--gallery", "identity", "--t-max", "10",
                           "--tau", "0", "--samples", "4", "--out", str(out)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert _summary(out)["samples"] == 4
