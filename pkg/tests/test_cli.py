import json
import shutil
import subprocess

import pytest

from icl_lab import cli
from icl_lab import experiments as ex


def _call(capsys, *argv):
    code = cli.main(list(argv))
    return code, json.loads(capsys.readouterr().out)


def test_validate_canned_config(capsys):
    code, report = _call(capsys, "validate", "figure6b")
    assert code == 0 and report["valid"]


def test_validate_reports_field_path(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"experiment": "figure6b"}))
    code, report = _call(capsys, "validate", str(cfg))
    assert code == 2
    assert report["errors"][0]["path"] == "$.experiment"


def test_run_writes_outputs(tmp_path, capsys):
    raw = ex.load_config(ex.find_config("figure6b"))
    raw["trials"] = 5
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(raw))
    code, result = _call(capsys, "run", str(cfg), "--out", str(tmp_path / "o"), "--plot", "--threads", "2")
    assert code == 0
    assert result["files"] == ["config.echo.json", "plot.svg", "results.csv"]
    assert (tmp_path / "o" / "plot.svg").exists()


def test_run_invalid_config_exit_two(tmp_path, capsys):
    raw = ex.load_config(ex.find_config("figure6b"))
    raw["trials"] = 0
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(raw))
    code, result = _call(capsys, "run", str(cfg), "--out", str(tmp_path / "o"))
    assert code == 2 and result["errors"][0]["path"] == "$.trials"
    assert not (tmp_path / "o").exists()


def test_run_missing_config_exit_two(tmp_path, capsys):
    code, result = _call(capsys, "run", str(tmp_path / "missing.json"))
    assert code == 2 and result["errors"]


def test_bad_thread_count(capsys):
    assert cli.main(["run", "figure6b", "--threads", "0"]) == 2


def test_theory_check_passes(capsys):
    code, report = _call(capsys, "theory-check", "--trials", "200", "--seed", "3")
    assert code == 0
    assert report["label_sign"]["violations"] == 0
    assert report["label_sign"]["filtered_trials"] == 200
    assert report["exit_code"] == 0


def test_theory_check_violation_exit_three(capsys, monkeypatch):
    import icl_lab.oracles as oracles

    monkeypatch.setattr(oracles, "psi_w_pair", lambda *a, **k: -1.0)
    code, report = _call(capsys, "theory-check", "--trials", "10")
    assert code == 3 and report["label_sign"]["violations"] == 10


def test_theory_check_rejects_zero_trials(capsys):
    code, report = _call(capsys, "theory-check", "--trials", "0")
    assert code == 2 and not report["valid"]


@pytest.mark.skipif(shutil.which("icl-lab") is None, reason="console script not installed")
def test_console_script_entry_point():
    proc = subprocess.run(["icl-lab", "validate", "double_descent"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["valid"]
