import csv
import json

import numpy as np
import pytest

from conftest import CONFIGS
from switchgrid import __version__
from switchgrid import config as C
from switchgrid.cli import main
from switchgrid.outputs import read_field, write_field
from switchgrid.scheme import SwitchPolicy, ValueField


def config(tmp_path, name, edit=None, fname="run.json"):
    raw = json.loads((CONFIGS / name).read_text())
    raw["output"] = {"dir": str(tmp_path / "out")}
    if edit:
        edit(raw)
    path = tmp_path / fname
    path.write_text(json.dumps(raw))
    return path


def run(capsys, *argv):
    code = main(list(argv))
    return code, capsys.readouterr().out


def read_rows(path):
    lines = path.read_text().splitlines()
    return lines[0], list(csv.DictReader(lines[1:]))


def small(raw, nodes=41, steps=40):
    raw["lattice"]["nodes"] = [nodes]
    raw["lattice"]["time_steps"] = steps


# --- validate ------------------------------------------------------------------------

def test_validate_passes_on_symmetric(tmp_path, capsys):
    code, out = run(capsys, "validate", "--config", str(config(tmp_path, "symmetric2.json")))
    assert code == 0
    assert "FAIL" not in out
    rep = json.loads((tmp_path / "out" / "validation.json").read_text())
    assert rep["passed"] and all(rep["verdicts"].values())


def test_validate_zero_cycle_exits_2_with_cycle(tmp_path, capsys):
    def edit(r):
        r["problem"]["costs"] = [[None, 1.0], [-1.0, None]]
    code, out = run(capsys, "validate", "--config", str(config(tmp_path, "symmetric2.json", edit)))
    assert code == 2
    assert "FAIL no_loop" in out
    rep = json.loads((tmp_path / "out" / "validation.json").read_text())
    assert not rep["verdicts"]["no_loop"]
    assert "'cycle': [0, 1, 0]" in out


def test_malformed_key_exits_64(tmp_path, capsys):
    def edit(r):
        r["lattise"] = r.pop("lattice")
    code, out = run(capsys, "validate", "--config", str(config(tmp_path, "symmetric2.json", edit)))
    assert code == 64 and "config error" in out


def test_bad_thread_count_exits_64(tmp_path, capsys):
    code, _ = run(capsys, "validate", "--config", str(config(tmp_path, "symmetric2.json")),
                  "--threads", "0")
    assert code == 64


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as e:
        main(["--version"])
    assert e.value.code == 0
    assert __version__ in capsys.readouterr().out


# --- solve ------------------------------------------------------------------------------

def test_solve_zero_problem_writes_zeros(tmp_path, capsys):
    def edit(r):
        r["problem"]["payoff"] = [0.0, 0.0]
        r["problem"]["terminal"] = [0.0, 0.0]
        small(r, 21, 10)
    code, _ = run(capsys, "solve", "--config", str(config(tmp_path, "symmetric2.json", edit)))
    assert code == 0
    header, rows = read_rows(tmp_path / "out" / "values.csv")
    assert f"version={__version__}" in header and "config_hash=" in header
    assert len(rows) == 21 * 11 * 2
    assert all(float(r["value"]) == 0.0 for r in rows)
    for name in ("policy.csv", "residual.json", "field.npz"):
        assert (tmp_path / "out" / name).exists()


def test_solve_oracle_matches_closed_form(tmp_path, capsys):
    code, _ = run(capsys, "solve", "--config", str(config(tmp_path, "degenerate_oracle.json")))
    assert code == 0
    _, rows = read_rows(tmp_path / "out" / "values.csv")
    err = max(abs(float(r["value"]) - ((1.0 - float(r["t"])) if r["mode"] == "0" else 0.0))
              for r in rows)
    assert err <= 1e-12


def test_solve_refuses_cfl_violation(tmp_path, capsys):
    code, out = run(capsys, "solve", "--config", str(config(tmp_path, "cfl_violation.json")))
    assert code == 3 and "solver aborted" in out
    assert not (tmp_path / "out" / "values.csv").exists()


def test_solve_refuses_failed_checks_unless_forced(tmp_path, capsys):
    def edit(r):
        r["problem"]["costs"] = [[None, 1.0], [-1.0, None]]
        small(r, 21, 10)
    path = str(config(tmp_path, "symmetric2.json", edit))
    code, out = run(capsys, "solve", "--config", path)
    assert code == 2 and "--force" in out
    code, _ = run(capsys, "solve", "--config", path, "--force")
    assert code == 0


def test_reruns_are_byte_identical(tmp_path, capsys):
    def edit(r):
        small(r, 21, 20)
    path = str(config(tmp_path, "symmetric2.json", edit))
    assert run(capsys, "solve", "--config", path, "--out", str(tmp_path / "a"))[0] == 0
    assert run(capsys, "solve", "--config", path, "--out", str(tmp_path / "b"))[0] == 0
    for name in ("values.csv", "policy.csv", "residual.json", "field.npz"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


# --- barriers -------------------------------------------------------------------------------

def test_barriers_symmetric_pass(tmp_path, capsys):
    def edit(r):
        small(r)
    code, out = run(capsys, "barriers", "--config", str(config(tmp_path, "symmetric2.json", edit)))
    assert code == 0
    rep = json.loads((tmp_path / "out" / "barriers.json").read_text())
    assert rep["calibrated"] and rep["sandwich_passed"]
    assert rep["perturbation"]["max_gap_change"] <= 1e-12
    _, rows = read_rows(tmp_path / "out" / "sandwich.csv")
    assert rows and all(float(r["margin_below"]) >= 0 and float(r["margin_above"]) >= 0 for r in rows)
    _, gaps = read_rows(tmp_path / "out" / "perturbation_gaps.csv")
    assert all(float(g["gap"]) >= -1e-12 for g in gaps)


def test_barriers_triangle_violation_exits_4(tmp_path, capsys):
    def edit(r):
        r["problem"]["modes"] = 3
        r["problem"]["payoff"] = [0.1, 0.2, 0.3]
        r["problem"]["terminal"] = [0.0, 0.0, 0.0]
        r["problem"]["costs"] = [[None, 1.0, 0.1], [0.1, None, 0.1], [2.0, 0.1, None]]
        r["barriers"]["anchors"] = [{"mode": 0, "point": [0.0]}]
        small(r, 21, 10)
    code, out = run(capsys, "barriers", "--config", str(config(tmp_path, "symmetric2.json", edit)))
    assert code == 4 and "triangle" in out
    rep = json.loads((tmp_path / "out" / "barriers.json").read_text())
    assert rep["calibrated"] is False


# --- compare ----------------------------------------------------------------------------------

def test_compare_oracle_exact(tmp_path, capsys):
    path = str(config(tmp_path, "degenerate_oracle.json"))
    code, out = run(capsys, "compare", "--config", path)
    assert code == 0, out
    header, rows = read_rows(tmp_path / "out" / "compare.csv")
    assert "seed=0" in header and "paths=1000" in header
    assert all(float(r["gap"]) <= 1e-12 and r["passed"] == "1" for r in rows)


def test_compare_wrong_field_exits_5(tmp_path, capsys):
    path = config(tmp_path, "degenerate_oracle.json")
    assert run(capsys, "solve", "--config", str(path))[0] == 0
    cfg = C.load(path)
    data = read_field(tmp_path / "out" / "field.npz")
    field = ValueField(cfg.lattice, data["times"], data["values"] + 0.1)
    wrong = tmp_path / "wrong.npz"
    write_field(wrong, field, SwitchPolicy(cfg.lattice, data["times"], data["actions"]), cfg.hash)

    def edit(r):
        r["mc"]["field"] = str(wrong)
    code, out = run(capsys, "compare", "--config", str(config(tmp_path, "degenerate_oracle.json", edit,
                                                               "wrong.json")))
    assert code == 5 and "FAIL" in out
    _, rows = read_rows(tmp_path / "out" / "compare.csv")
    assert all(float(r["gap"]) == pytest.approx(0.1, abs=1e-12) for r in rows)
