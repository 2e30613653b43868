import json
import subprocess
import sys

import pytest

from togkit.cli import main
from togkit.viz import TRACE_FILES

from .conftest import ROOT

MINI = str(ROOT / "tests" / "fixtures" / "mini" / "manifest.json")


def test_validate_clean(capsys):
    assert main(["validate", MINI]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep == {"errors": 0, "issues": [], "warnings": 0}


def test_validate_missing_file():
    assert main(["validate", "/nonexistent/manifest.json"]) == 1


def test_run_dump_trace(tmp_path, capsys):
    args = ["run", "--manifest", MINI, "--scene", "scene_001", "--object", "hammer_01", "--task", "handover"]
    assert main(args + ["--dump-trace", str(tmp_path / "a")]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["grasp"] is not None and res["error"] is None
    assert main(args + ["--dump-trace", str(tmp_path / "b"), "-o", str(tmp_path / "r.json")]) == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(TRACE_FILES + ("trace.json",))
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
    assert json.loads((tmp_path / "r.json").read_text()) == res


def test_run_failures(capsys):
    base = ["run", "--manifest", MINI, "--scene", "scene_001", "--object", "hammer_01"]
    assert main(base + ["--task", "juggling"]) == 1
    assert main(base[:-2] + ["--object", "spoon_09", "--task", "handover"]) == 1
    assert main(["run", "--manifest", MINI, "--scene", "scene_404", "--object", "hammer_01", "--task", "handover"]) == 2


def test_usage_errors(capsys):
    assert main(["validate", MINI, "--bogus"]) == 2
    assert main(["run", "--manifest", MINI]) == 2
    assert main(["eval", "--manifest", MINI, "--report-dir", "x", "--tau", "1.5"]) == 2
    assert main([]) == 2


@pytest.mark.parametrize("cmd", ["validate", "run", "eval", "report", "auto-label", "refine-affordances"])
def test_help_lists_defaults(cmd, capsys):
    assert main([cmd, "--help"]) == 0
    out = capsys.readouterr().out
    for v in ("400", "50000", "0.75", "36", "0.25", "30"):
        assert v in out


def test_eval_and_report(tmp_path, capsys):
    d1, d2 = tmp_path / "r1", tmp_path / "r2"
    for d in (d1, d2):
        assert main(["eval", "--manifest", MINI, "--split", "KC-KSC", "--report-dir", str(d)]) == 0
    assert (d1 / "report.md").read_bytes() == (d2 / "report.md").read_bytes()
    assert (d1 / "report.json").read_bytes() == (d2 / "report.json").read_bytes()
    capsys.readouterr()
    assert main(["report", str(d1 / "report.json"), "--format", "markdown"]) == 0
    assert capsys.readouterr().out == (d1 / "report.md").read_text()
    assert main(["report", str(d1 / "report.json"), "--format", "csv", "--override", "hammer_01/handover=0.5",
                 "-o", str(tmp_path / "o.csv")]) == 0
    rows = (tmp_path / "o.csv").read_text().splitlines()
    assert "hammer_01,handover,1,1,1.000000,1.000000,0.5" in rows
    assert main(["report", str(d1 / "report.json"), "--override", "nonsense"]) == 2


def test_eval_csv_format(tmp_path):
    assert main(["eval", "--manifest", MINI, "--split", "UC-USC", "--mode", "standard", "--format", "csv",
                 "--workers", "2", "--report-dir", str(tmp_path)]) == 0
    assert (tmp_path / "report.json").exists() and (tmp_path / "report.csv").exists()


def test_refine_round_trip(tmp_path):
    out = tmp_path / "refined.json"
    assert main(["refine-affordances", MINI, "-o", str(out)]) == 0
    assert main(["validate", str(out)]) == 0


def test_module_entry_point():
    p = subprocess.run([sys.executable, "-m", "togkit.cli", "validate", MINI], capture_output=True, text=True)
    assert p.returncode == 0
    assert json.loads(p.stdout)["errors"] == 0
