import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from fleetagg import cli
from fleetagg import experiments as ex
from fleetagg.scenario import load_instance

FIX = Path(__file__).parent / "fixtures"
T8 = str(FIX / "instance_t8.json")
T24 = str(FIX / "instance_t24.json")


def test_gen_writes_loadable_instance(tmp_path, capsys):
    out = tmp_path / "i.json"
    assert cli.main(["gen", "--steps", "5", "--devices", "4", "--seed", "2", "--out", str(out)]) == 0
    inst = load_instance(out)
    assert inst.horizon.num_steps == 5 and len(inst.fleet) == 4
    assert cli.main(["gen", "--steps", "3", "--devices", "1"]) == 0
    assert json.loads(capsys.readouterr().out)["horizon"]["steps"] == 3


def test_reduce_m5_has_t_entries(tmp_path):
    out = tmp_path / "c.json"
    assert cli.main(["reduce", "--instance", T8, "--method", "m5", "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert data["method_tag"] == "greedy2" and len(data["constraints"]) == 8
    assert cli.main(["reduce", "--instance", T24, "--method", "m5", "--out", str(out)]) == 0
    assert len(json.loads(out.read_text())["constraints"]) == 24


def test_reduce_m1_is_usage_error(capsys):
    assert cli.main(["reduce", "--instance", T8, "--method", "m1"]) == 1


def test_solve_writes_report_and_solution(tmp_path):
    out = tmp_path / "s.json"
    assert cli.main(["solve", "--instance", T8, "--method", "m3", "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert data["report"]["method"] == "m3" and data["report"]["feasible"] is True
    assert data["solution"]["status"] == "optimal" and len(data["solution"]["d"]) == 8


def test_solve_m2_guard(capsys):
    assert cli.main(["solve", "--instance", T24, "--method", "m2"]) == 1
    assert "guard" in capsys.readouterr().err


def test_solve_m2_guard_override(tmp_path):
    out = tmp_path / "s.json"
    assert cli.main(["solve", "--instance", T8, "--method", "m2", "--t-guard", "8", "--out", str(out)]) == 0
    assert cli.main(["solve", "--instance", T8, "--method", "m2", "--t-guard", "7"]) == 1


def test_dispatch_from_solve_and_profile(tmp_path):
    out = tmp_path / "dispatch.json"
    assert cli.main(["dispatch", "--instance", T8, "--method", "m1", "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert data["feasibility"]["feasible"] and len(data["schedules_kw"]) == 10
    inst = load_instance(T8)
    bad = [0.0] * 8
    bad[0] = inst.fleet.total_energy()
    prof = tmp_path / "p.json"
    prof.write_text(json.dumps(bad))
    assert cli.main(["dispatch", "--instance", T8, "--profile", str(prof), "--out", str(out)]) == 2
    data = json.loads(out.read_text())
    assert data["feasibility"]["feasible"] is False and data["feasibility"]["certificate"]


def test_dispatch_csv_profile(tmp_path):
    out = tmp_path / "s.json"
    cli.main(["solve", "--instance", T8, "--method", "m2", "--out", str(out)])
    d = json.loads(out.read_text())["solution"]["d"]
    prof = tmp_path / "p.csv"
    prof.write_text("slot,kw\n" + "".join(f"{t + 1},{max(v, 0.0)!r}\n" for t, v in enumerate(d)))
    assert cli.main(["dispatch", "--instance", T8, "--profile", str(prof), "--out", str(tmp_path / "o.json")]) == 0


def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["solve", "--instance", T8, "--method", "m9"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        cli.main([])
    assert exc.value.code == 1
    assert cli.main(["solve", "--instance", "/nonexistent.json", "--method", "m1"]) == 1


def test_bench_equivalence_csv(tmp_path):
    out = tmp_path / "eq.csv"
    assert cli.main(["bench", "--experiment", "equivalence", "--config", str(FIX / "bench_equivalence.json"),
                     "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    assert list(rows[0]) == ["schema_version", "instance", "method", "status", "objective", "rel_gap", "success",
                             "feasible", "constraints", "selection_ms", "solve_ms"]
    assert len(rows) == 4 * 5
    assert all(abs(float(r["rel_gap"])) <= 1e-7 for r in rows if r["method"] in ("m2", "m3"))


def test_bench_timing_csv(tmp_path):
    out = tmp_path / "t.csv"
    assert cli.main(["bench", "--experiment", "timing", "--config", str(FIX / "bench_timing.json"),
                     "--out", str(out)]) == 0
    rows = list(csv.reader(open(out)))
    assert tuple(rows[0]) == ex.TIMING_COLUMNS and len(rows) == 1 + 2 * 3


def test_bench_success_csv(tmp_path, capsys):
    out = tmp_path / "s.csv"
    assert cli.main(["bench", "--experiment", "success", "--config", str(FIX / "bench_success.json"),
                     "--out", str(out)]) == 0
    rows = list(csv.reader(open(out)))
    assert tuple(rows[0]) == ex.SUCCESS_COLUMNS and len(rows) == 1 + 3 * 2
    assert "m4: success" in capsys.readouterr().err


def test_bench_rejects_unknown_config_field(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"count": 1, "colour": "blue"}')
    assert cli.main(["bench", "--config", str(cfg)]) == 1


def test_twoarea_small(tmp_path):
    out = tmp_path / "ta"
    assert cli.main(["twoarea", "--devices", "20,30", "--p-bar", "0.5,1000", "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "summary.csv")))
    assert tuple(rows[0]) == cli.TWOAREA_COLUMNS
    assert len(rows) == 3 * 2
    assert (out / "mm1_pbar_0.5.json").exists()
    by = {(r["method"], r["p_bar_gw"]): r for r in rows}
    assert by[("MM1", "0.5")]["congested_slots"] == "24"
    assert float(by[("MM3", "0.5")]["objective"]) == pytest.approx(float(by[("MM1", "0.5")]["objective"]), rel=1e-6)
    assert float(by[("MM4", "1000")]["objective"]) == pytest.approx(float(by[("MM1", "1000")]["objective"]),
                                                                    rel=1e-6)


def test_twoarea_mm2_guard(tmp_path):
    assert cli.main(["twoarea", "--method", "mm2", "--devices", "2,2", "--p-bar", "1", "--out", str(tmp_path)]) == 1
    assert cli.main(["twoarea", "--method", "mm7", "--out", str(tmp_path)]) == 1


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "fleetagg.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("gen", "reduce", "solve", "dispatch", "twoarea", "bench"):
        assert cmd in res.stdout
